//! Long-format CSV panel files plus their JSON sidecar.
//!
//! Header: `unit,setting,period,y,t_1..t_k,s_1..s_p` with `k = max(k_e, k_o)`.
//! Period 0 holds `S_0` only. Treatment cells past a setting's own `k` are
//! left empty, as is `y` when the outcome is unobserved.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{PanelDataset, PanelDims, PanelMeta, PeriodRecord, Setting, UnitTrajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMetaFile {
    pub p: usize,
    pub k_e: usize,
    pub k_o: usize,
    #[serde(alias = "M")]
    pub m: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub provenance: String,
}

impl PanelMetaFile {
    pub fn dims(&self) -> PanelDims {
        PanelDims {
            p: self.p,
            k_e: self.k_e,
            k_o: self.k_o,
            m: self.m,
        }
    }

    fn from_dataset(ds: &PanelDataset) -> Self {
        Self {
            p: ds.dims.p,
            k_e: ds.dims.k_e,
            k_o: ds.dims.k_o,
            m: ds.dims.m,
            seed: ds.meta.seed,
            provenance: ds.meta.provenance.clone(),
        }
    }
}

/// `data.csv` -> `data.meta.json`.
pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

fn header(dims: &PanelDims) -> Vec<String> {
    let mut h: Vec<String> = ["unit", "setting", "period", "y"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=dims.k_columns()).map(|i| format!("t_{i}")));
    h.extend((1..=dims.p).map(|i| format!("s_{i}")));
    h
}

struct RawRow {
    line: u64,
    period: usize,
    y: Option<f64>,
    t: Vec<f64>,
    s: Vec<f64>,
}

fn parse_f64(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::MalformedRow {
        line,
        reason: format!("column {column}: cannot parse {cell:?} as a number"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::MalformedRow {
            line,
            reason: format!("column {column}: non-finite value"),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::MalformedRow {
            line,
            reason: format!("{kind:?}"),
        },
    }
}

/// Parse a panel from any reader, validating against `dims`.
pub fn parse_panel_csv<R: Read>(reader: R, dims: PanelDims) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let expected = header(&dims);
    let found = rdr.headers().map_err(csv_err)?.clone();
    if found.len() != expected.len() {
        return Err(Error::dim("panel header", expected.len(), found.len()));
    }
    if found.iter().zip(expected.iter()).any(|(a, b)| a != b) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("header must be {}", expected.join(",")),
        });
    }

    let kc = dims.k_columns();
    let mut order: Vec<(String, Setting)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<BTreeMap<usize, RawRow>> = Vec::new();

    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let unit = record[0].to_string();
        let setting = Setting::from_code(record[1].trim()).ok_or_else(|| Error::MalformedRow {
            line,
            reason: format!("setting must be 'e' or 'o', found {:?}", &record[1]),
        })?;
        let period: usize = record[2].trim().parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("cannot parse period {:?}", &record[2]),
        })?;
        let k = dims.k(setting);
        let y_cell = record[3].trim();
        let t_cells: Vec<&str> = (0..kc).map(|i| record[4 + i].trim()).collect();
        let (y, t) = if period == 0 {
            if !y_cell.is_empty() || t_cells.iter().any(|c| !c.is_empty()) {
                return Err(Error::MalformedRow {
                    line,
                    reason: "period 0 rows carry only surrogate columns".into(),
                });
            }
            (None, Vec::new())
        } else {
            let y = if y_cell.is_empty() {
                None
            } else {
                Some(parse_f64(y_cell, line, "y")?)
            };
            let mut t = Vec::with_capacity(k);
            for (i, cell) in t_cells.iter().enumerate() {
                if i < k {
                    t.push(parse_f64(cell, line, &format!("t_{}", i + 1))?);
                } else if !cell.is_empty() {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("t_{} must be empty for setting {}", i + 1, setting.code()),
                    });
                }
            }
            (y, t)
        };
        let mut s = Vec::with_capacity(dims.p);
        for i in 0..dims.p {
            s.push(parse_f64(&record[4 + kc + i], line, &format!("s_{}", i + 1))?);
        }

        let slot = match index.get(&unit) {
            Some(&slot) => {
                if order[slot].1 != setting {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("unit {unit} appears under both settings"),
                    });
                }
                slot
            }
            None => {
                index.insert(unit.clone(), order.len());
                order.push((unit.clone(), setting));
                rows.push(BTreeMap::new());
                order.len() - 1
            }
        };
        if rows[slot].contains_key(&period) {
            return Err(Error::DuplicatePeriod { unit, period });
        }
        rows[slot].insert(period, RawRow { line, period, y, t, s });
    }

    let mut units = Vec::with_capacity(order.len());
    for ((unit_id, setting), periods) in order.into_iter().zip(rows) {
        let mut iter = periods.into_values();
        let first = iter.next().expect("unit has at least one row");
        if first.period != 0 {
            return Err(Error::InvalidTrajectory {
                unit: unit_id,
                reason: format!("missing period 0 row (line {})", first.line),
            });
        }
        let mut recs = Vec::new();
        for (idx, row) in iter.enumerate() {
            if row.period != idx + 1 {
                return Err(Error::PeriodGap {
                    unit: unit_id,
                    expected: idx + 1,
                    found: row.period,
                });
            }
            recs.push(PeriodRecord {
                t: row.period,
                treatment: DVector::from_vec(row.t),
                surrogates: DVector::from_vec(row.s),
                outcome: row.y,
            });
        }
        units.push(UnitTrajectory {
            unit_id,
            setting,
            s0: DVector::from_vec(first.s),
            periods: recs,
        });
    }
    PanelDataset::new(units, dims, PanelMeta::default())
}

pub fn load_panel(path: &Path, dims: PanelDims) -> Result<PanelDataset> {
    parse_panel_csv(BufReader::new(File::open(path)?), dims)
}

/// Load a panel whose dimensions and provenance come from the sidecar file.
pub fn load_panel_with_meta(path: &Path) -> Result<PanelDataset> {
    let meta: PanelMetaFile =
        serde_json::from_reader(BufReader::new(File::open(meta_path_for(path))?))?;
    let mut ds = load_panel(path, meta.dims())?;
    ds.meta = PanelMeta {
        seed: meta.seed,
        provenance: meta.provenance,
    };
    Ok(ds)
}

fn fmt(v: f64) -> String {
    // Display gives the shortest string that parses back to the same f64.
    format!("{v}")
}

pub fn write_panel_csv<W: Write>(ds: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(header(&ds.dims)).map_err(csv_err)?;
    let kc = ds.dims.k_columns();
    for unit in &ds.units {
        let mut row: Vec<String> = vec![
            unit.unit_id.clone(),
            unit.setting.code().into(),
            "0".into(),
            String::new(),
        ];
        row.extend(std::iter::repeat_n(String::new(), kc));
        row.extend(unit.s0.iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
        for rec in &unit.periods {
            let mut row: Vec<String> = vec![
                unit.unit_id.clone(),
                unit.setting.code().into(),
                rec.t.to_string(),
                rec.outcome.map(fmt).unwrap_or_default(),
            ];
            row.extend(rec.treatment.iter().map(|v| fmt(*v)));
            row.extend(std::iter::repeat_n(String::new(), kc - rec.treatment.len()));
            row.extend(rec.surrogates.iter().map(|v| fmt(*v)));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `path` and its `.meta.json` sidecar.
pub fn save_panel(ds: &PanelDataset, path: &Path) -> Result<()> {
    write_panel_csv(ds, BufWriter::new(File::create(path)?))?;
    let mut meta = BufWriter::new(File::create(meta_path_for(path))?);
    serde_json::to_writer_pretty(&mut meta, &PanelMetaFile::from_dataset(ds))?;
    meta.write_all(b"\n")?;
    meta.flush()?;
    Ok(())
}

use rand::seq::SliceRandom;

use crate::data_model::{PanelDataset, Setting};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Two-way partition of unit indices, stratified by setting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPair {
    pub halves: [Vec<usize>; 2],
    /// Half (0 or 1) of each unit; `None` for units excluded from the split.
    pub fold_of: Vec<Option<u8>>,
    pub seed: u64,
}

impl FoldPair {
    pub fn fold(&self, unit: usize) -> Option<u8> {
        self.fold_of.get(unit).copied().flatten()
    }
}

/// Split every setting present in `data` in half. Odd counts put the extra
/// unit in the first half.
pub fn split_halves(data: &PanelDataset, seed: u64) -> Result<FoldPair> {
    split_units(data, seed, |_| true)
}

/// As [`split_halves`], restricted to units of the given settings.
pub fn split_halves_for(data: &PanelDataset, seed: u64, settings: &[Setting]) -> Result<FoldPair> {
    split_units(data, seed, |s| settings.contains(&s))
}

fn split_units(data: &PanelDataset, seed: u64, include: impl Fn(Setting) -> bool) -> Result<FoldPair> {
    let mut halves: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut fold_of = vec![None; data.len()];
    for (stream, setting) in [Setting::Experimental, Setting::Observational].into_iter().enumerate() {
        if !include(setting) {
            continue;
        }
        let mut idx = data.indices_of(setting);
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::TooFewUnits {
                setting,
                needed: 2,
                found: idx.len(),
            });
        }
        idx.shuffle(&mut derived_rng(seed, stream as u64));
        let first = idx.len().div_ceil(2);
        for (pos, &i) in idx.iter().enumerate() {
            let h = usize::from(pos >= first);
            halves[h].push(i);
            fold_of[i] = Some(h as u8);
        }
    }
    for h in halves.iter_mut() {
        h.sort_unstable();
    }
    Ok(FoldPair {
        halves,
        fold_of,
        seed,
    })
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails other than those listed in
//! `KNOWN_UNATTAINABLE`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use dynsurr::data_model::{FeatureMaps, PanelDataset, Setting, UnitTrajectory};
use dynsurr::dgp::{
    counterfactual_oracle, ground_truth_theta, positive_linear_params, random_linear_params, simulate_linear,
    treatment_autocorrelation, zero_treatment_share, AnalyticNuisances, LinearDgpParams, PolicyKind, SemiSynthConfig,
    SemiSynthModel,
};
use dynsurr::estimators::{l2_error, run_estimator, score_spec, true_theta, EstimatorConfig, EstimatorKind};
use dynsurr::nuisance::{fit_lasso, fit_ols, NuisanceModel, NuisanceRole};
use dynsurr::rng::{derive_seed, rng_from};
use dynsurr::snmm::{
    assemble_with_model, solve_dense, solve_theta, Design, MomentSystem, Representation, ScoreFamily, ScoreOptions,
    ScoreSpec, ScoreTerm, ThetaVector, UnitScore,
};

/// The literal slope test cannot pass for nuisances that enter the score
/// linearly; see the companion line printed with it.
const KNOWN_UNATTAINABLE: &[u32] = &[5];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(101);
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let p = rng.random_range(1..=8);
        let k = rng.random_range(1..=3);
        let m = rng.random_range(1..=8);
        let policy = if i % 2 == 0 { PolicyKind::Adaptive } else { PolicyKind::NonAdaptive };
        let params = random_linear_params(p, k, m, policy, &mut rng);
        let t1 = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t0 = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let truth = ground_truth_theta(&params);
        let expected = truth.theta0.dot(&(&t1 - &t0));
        let got = counterfactual_oracle(&params, &t1, &t0, 50, derive_seed(7, i));
        let scale = expected.abs().max(truth.theta0.norm() * (&t1 - &t0).norm()).max(f64::MIN_POSITIVE);
        worst = worst.max((got - expected).abs() / scale);
    }
    let elapsed = start.elapsed();
    outcome(
        1,
        worst <= 1e-8 && elapsed < Duration::from_secs(10),
        format!("max relative oracle error {worst:.2e} (tol 1e-8) over 20 DGPs in {:.2}s (budget 10s)", secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 2 + 3

struct SweepCell {
    n: usize,
    errors: Vec<(EstimatorKind, Vec<f64>)>,
}

fn sweep(params: &LinearDgpParams, kinds: &[EstimatorKind], ns: &[usize], reps: usize, seed: u64) -> Vec<SweepCell> {
    let truth = ground_truth_theta(params);
    ns.iter()
        .map(|&n| {
            let per_rep: Vec<Vec<f64>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let rep_seed = derive_seed(derive_seed(seed, n as u64), r as u64);
                    let data = simulate_linear(params, n, n, rep_seed).expect("valid DGP");
                    let cfg = EstimatorConfig {
                        seed: rep_seed,
                        ..EstimatorConfig::default()
                    };
                    kinds
                        .iter()
                        .map(|&k| {
                            let rep = run_estimator(k, &data, &cfg).expect("estimator runs");
                            l2_error(&rep, &true_theta(k, &truth))
                        })
                        .collect()
                })
                .collect();
            SweepCell {
                n,
                errors: kinds
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| (k, per_rep.iter().map(|e| e[j]).collect()))
                    .collect(),
            }
        })
        .collect()
}

fn cell_errors(cell: &SweepCell, kind: EstimatorKind) -> &[f64] {
    &cell.errors.iter().find(|(k, _)| *k == kind).expect("kind in sweep").1
}

/// Per-coordinate bias z-scores of `kind`'s first block over `reps` replications.
fn bias_z(params: &LinearDgpParams, kind: EstimatorKind, n: usize, reps: usize, seed: u64) -> Vec<f64> {
    let truth = true_theta(kind, &ground_truth_theta(params));
    let devs: Vec<DVector<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(derive_seed(seed, n as u64), r as u64);
            let data = simulate_linear(params, n, n, rep_seed).expect("valid DGP");
            let cfg = EstimatorConfig {
                seed: rep_seed,
                ..EstimatorConfig::default()
            };
            run_estimator(kind, &data, &cfg).expect("estimator runs").theta0() - &truth
        })
        .collect();
    let r = reps as f64;
    (0..truth.len())
        .map(|j| {
            let m = devs.iter().map(|d| d[j]).sum::<f64>() / r;
            let var = devs.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (r - 1.0);
            m / (var / r).sqrt()
        })
        .collect()
}

fn criteria_2_3() -> Vec<Outcome> {
    let start = Instant::now();
    let ns = [2000, 5000, 10000];
    let reps = 100;
    let adaptive = positive_linear_params(5, 2, 4, PolicyKind::Adaptive, &mut rng_from(1));
    let kinds = [EstimatorKind::DebNewTreat, EstimatorKind::Total, EstimatorKind::Surrogate];
    let cells = sweep(&adaptive, &kinds, &ns, reps, 202);
    let elapsed = start.elapsed();

    let medians: Vec<f64> = cells.iter().map(|c| median(cell_errors(c, EstimatorKind::DebNewTreat))).collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let halved = medians[2] < 0.5 * medians[0];
    let c2 = outcome(
        2,
        decreasing && halved && elapsed < Duration::from_secs(15 * 60),
        format!(
            "DebNewTreat median l2 error {:.4} / {:.4} / {:.4} at n = 2000 / 5000 / 10000 (R=100); ratio 10000:2000 = {:.3} (need < 0.5); {:.1}s",
            medians[0],
            medians[1],
            medians[2],
            medians[2] / medians[0],
            secs(elapsed)
        ),
    );

    let mut ratios = Vec::new();
    for c in &cells {
        let deb = mean(cell_errors(c, EstimatorKind::DebNewTreat));
        ratios.push((
            c.n,
            mean(cell_errors(c, EstimatorKind::Total)) / deb,
            mean(cell_errors(c, EstimatorKind::Surrogate)) / deb,
        ));
    }
    let biased = ratios.iter().all(|(_, t, s)| *t >= 2.0 && *s >= 2.0);

    let non_adaptive = positive_linear_params(5, 2, 4, PolicyKind::NonAdaptive, &mut rng_from(1));
    let zs: Vec<(usize, Vec<f64>)> = ns
        .iter()
        .map(|&n| (n, bias_z(&non_adaptive, EstimatorKind::Surrogate, n, reps, 303)))
        .collect();
    let max_z = zs.iter().flat_map(|(_, z)| z.iter().map(|v| v.abs())).fold(0.0, f64::max);
    let ratio_text: Vec<String> = ratios
        .iter()
        .map(|(n, t, s)| format!("n={n}: total {t:.1}x, surrogate {s:.1}x"))
        .collect();
    let c3 = outcome(
        3,
        biased && max_z < 3.0,
        format!(
            "adaptive mean-error ratios vs DebNewTreat [{}] (need >= 2x); non-adaptive Surrogate max |bias z| {max_z:.2} (need < 3)",
            ratio_text.join("; ")
        ),
    );
    vec![c2, c3]
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let params = positive_linear_params(3, 2, 2, PolicyKind::Adaptive, &mut rng_from(4));
    let truth = ground_truth_theta(&params);
    let truth_blocks = [truth.theta0.clone(), truth.theta_o[1].clone()];
    let reps = 200;
    let n = 2000;
    let alpha = 0.01;
    let hits: Vec<(Vec<bool>, bool)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(404, r as u64);
            let data = simulate_linear(&params, n, n, seed).expect("valid DGP");
            let cfg = EstimatorConfig {
                seed,
                alpha,
                ..EstimatorConfig::default()
            };
            let rep = run_estimator(EstimatorKind::DebNewTreat, &data, &cfg).expect("estimator runs");
            let coords = rep
                .coordinate_cis
                .iter()
                .map(|c| c.ci.contains(truth_blocks[c.block][c.index]))
                .collect();
            let effect = rep.effect.expect("effect reported");
            let tau = truth.theta0.dot(&(DVector::from_vec(effect.t1.clone()) - DVector::from_vec(effect.t0.clone())));
            (coords, effect.ci.contains(tau))
        })
        .collect();
    let n_coords = hits[0].0.len();
    let coverage: Vec<f64> = (0..n_coords)
        .map(|j| hits.iter().filter(|h| h.0[j]).count() as f64 / reps as f64)
        .collect();
    let effect_cov = hits.iter().filter(|h| h.1).count() as f64 / reps as f64;
    let elapsed = start.elapsed();
    let in_band = |c: f64| (0.95..=1.0).contains(&c);
    outcome(
        4,
        coverage.iter().all(|c| in_band(*c)) && in_band(effect_cov) && elapsed < Duration::from_secs(600),
        format!(
            "coverage at alpha=0.01, R=200: coordinates {:?}, effect {effect_cov:.3} (band [0.95, 1.0]); {:.1}s",
            coverage.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Analytic nuisances with one role shifted by `eps · (1 + s_0 / 2)`.
struct Perturbed<'a> {
    base: &'a AnalyticNuisances,
    role: Option<NuisanceRole>,
    eps: f64,
}

impl Perturbed<'_> {
    fn shift(&self, role: NuisanceRole, s: &DVector<f64>) -> f64 {
        if self.role == Some(role) { self.eps * (1.0 + 0.5 * s[0]) } else { 0.0 }
    }

    fn shift_vec(&self, role: NuisanceRole, s: &DVector<f64>, v: DVector<f64>) -> DVector<f64> {
        let d = self.shift(role, s);
        v.add_scalar(d)
    }
}

impl NuisanceModel for Perturbed<'_> {
    fn g(&self, s1: &DVector<f64>) -> f64 {
        self.base.g(s1) + self.shift(NuisanceRole::G, s1)
    }
    fn g_t(&self, t: usize, s1: &DVector<f64>) -> DVector<f64> {
        self.shift_vec(NuisanceRole::GT, s1, self.base.g_t(t, s1))
    }
    fn q(&self, s1: &DVector<f64>) -> (DVector<f64>, bool) {
        let (q, c) = self.base.q(s1);
        (self.shift_vec(NuisanceRole::Q, s1, q), c)
    }
    fn h(&self, s0: &DVector<f64>) -> f64 {
        self.base.h(s0) + self.shift(NuisanceRole::H, s0)
    }
    fn p_e1(&self, s0: &DVector<f64>) -> DVector<f64> {
        self.shift_vec(NuisanceRole::PE1, s0, self.base.p_e1(s0))
    }
    fn p_et(&self, t: usize, s0: &DVector<f64>) -> DVector<f64> {
        self.shift_vec(NuisanceRole::PET, s0, self.base.p_et(t, s0))
    }
    fn b_o(&self, t: usize, s: &DVector<f64>) -> f64 {
        self.base.b_o(t, s) + self.shift(NuisanceRole::BOT, s)
    }
    fn p_o(&self, tau: usize, t: usize, s: &DVector<f64>) -> DVector<f64> {
        self.shift_vec(NuisanceRole::POTauT, s, self.base.p_o(tau, t, s))
    }
}

fn truth_vector(params: &LinearDgpParams, m: usize) -> ThetaVector {
    let gt = ground_truth_theta(params);
    let mut blocks = vec![gt.theta0.clone()];
    blocks.extend((2..=m).map(|t| gt.theta_o[t - 1].clone()));
    ThetaVector::from_blocks(blocks)
}

fn system_at(data: &PanelDataset, model: &dyn NuisanceModel, spec: &ScoreSpec, maps: &FeatureMaps) -> MomentSystem {
    let all: Vec<usize> = (0..data.len()).collect();
    assemble_with_model(data, &all, model, spec, maps).expect("scores assemble")
}

/// Largest per-coordinate z-score of the sample directional derivative.
fn derivative_z(base: &MomentSystem, bumped: &MomentSystem, theta: &ThetaVector, eps: f64) -> f64 {
    let n = base.units.len() as f64;
    let diffs: Vec<DVector<f64>> = base
        .units
        .iter()
        .zip(&bumped.units)
        .map(|(a, b)| (b.evaluate(&base.dims, theta) - a.evaluate(&base.dims, theta)) / eps)
        .collect();
    (0..base.dim())
        .map(|j| {
            let m = diffs.iter().map(|d| d[j]).sum::<f64>() / n;
            let var = diffs.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            if var == 0.0 { if m == 0.0 { 0.0 } else { f64::INFINITY } } else { m.abs() / (var / n).sqrt() }
        })
        .fold(0.0, f64::max)
}

fn criterion_5() -> Vec<Outcome> {
    let m = 3;
    let params = positive_linear_params(3, 1, m, PolicyKind::Adaptive, &mut rng_from(5));
    let (n_e, n_o) = (20000, 20000);
    let data = simulate_linear(&params, n_e, n_o, 505).expect("valid DGP");
    let pr_e = n_e as f64 / (n_e + n_o) as f64;
    let analytic = AnalyticNuisances::new(&params, Design::CrossDataset, pr_e, 1e-6).expect("analytic nuisances");
    let maps = FeatureMaps::identity(1, 1, params.p);
    let cfg = EstimatorConfig::default();
    let spec = score_spec(EstimatorKind::DebNewTreat, &cfg, m);
    let index_spec = score_spec(EstimatorKind::NewTreat, &cfg, m);
    let theta = truth_vector(&params, m);
    let unperturbed = Perturbed {
        base: &analytic,
        role: None,
        eps: 0.0,
    };
    let base_sys = system_at(&data, &unperturbed, &spec, &maps);
    let m0 = base_sys.mean_moment(&theta);

    let epsilons = [0.4, 0.2, 0.1, 0.05, 0.025];
    let mut slopes = Vec::new();
    let mut zs = Vec::new();
    for role in NuisanceRole::ALL {
        let pts: Vec<(f64, f64)> = epsilons
            .iter()
            .map(|&eps| {
                let model = Perturbed {
                    base: &analytic,
                    role: Some(role),
                    eps,
                };
                let dev = (system_at(&data, &model, &spec, &maps).mean_moment(&theta) - &m0).norm();
                (eps.ln(), dev.max(f64::MIN_POSITIVE).ln())
            })
            .collect();
        let (mx, my) = (mean(&pts.iter().map(|p| p.0).collect::<Vec<_>>()), mean(&pts.iter().map(|p| p.1).collect::<Vec<_>>()));
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        slopes.push((role, slope));

        let small = 1e-4;
        let bumped = system_at(
            &data,
            &Perturbed {
                base: &analytic,
                role: Some(role),
                eps: small,
            },
            &spec,
            &maps,
        );
        zs.push((role, derivative_z(&base_sys, &bumped, &theta, small)));
    }
    let index_base = system_at(&data, &unperturbed, &index_spec, &maps);
    let index_bumped = system_at(
        &data,
        &Perturbed {
            base: &analytic,
            role: Some(NuisanceRole::G),
            eps: 1e-4,
        },
        &index_spec,
        &maps,
    );
    let index_z = derivative_z(&index_base, &index_bumped, &theta, 1e-4);

    let fmt = |v: &[(NuisanceRole, f64)]| v.iter().map(|(r, s)| format!("{}={s:.2}", r.name())).collect::<Vec<_>>().join(" ");
    let literal = outcome(
        5,
        slopes.iter().all(|(_, s)| *s > 1.7),
        format!("log-log slopes at n=20000: {} (need > 1.7 for every role)", fmt(&slopes)),
    );
    let companion_pass = zs.iter().all(|(_, z)| *z < 4.0) && index_z > 10.0;
    let companion = outcome(
        0,
        companion_pass,
        format!(
            "[companion to 5] directional-derivative |z| of the orthogonal score: {} (need < 4); index score along g: {index_z:.1} (expect > 10)",
            fmt(&zs)
        ),
    );
    vec![literal, companion]
}

// ---------------------------------------------------------------- 6

/// Static-score nuisances with `g` and optionally `q` shifted by `δ u(S_1)`.
struct Corrupted<'a> {
    base: &'a AnalyticNuisances,
    delta: f64,
    corrupt_q: bool,
    center: f64,
    scale: f64,
}

impl Corrupted<'_> {
    fn u(&self, s: &DVector<f64>) -> f64 {
        self.delta * (s[0] - self.center) / self.scale
    }
}

impl NuisanceModel for Corrupted<'_> {
    fn g(&self, s1: &DVector<f64>) -> f64 {
        self.base.g(s1) + self.u(s1)
    }
    fn g_t(&self, t: usize, s1: &DVector<f64>) -> DVector<f64> {
        self.base.g_t(t, s1)
    }
    fn q(&self, s1: &DVector<f64>) -> (DVector<f64>, bool) {
        let (q, c) = self.base.q(s1);
        if self.corrupt_q { (q.add_scalar(self.u(s1)), c) } else { (q, c) }
    }
    fn h(&self, s0: &DVector<f64>) -> f64 {
        self.base.h(s0)
    }
    fn p_e1(&self, s0: &DVector<f64>) -> DVector<f64> {
        self.base.p_e1(s0)
    }
    fn p_et(&self, t: usize, s0: &DVector<f64>) -> DVector<f64> {
        self.base.p_et(t, s0)
    }
    fn b_o(&self, t: usize, s: &DVector<f64>) -> f64 {
        self.base.b_o(t, s)
    }
    fn p_o(&self, tau: usize, t: usize, s: &DVector<f64>) -> DVector<f64> {
        self.base.p_o(tau, t, s)
    }
}

fn criterion_6() -> Outcome {
    let params = positive_linear_params(2, 1, 2, PolicyKind::NonAdaptive, &mut rng_from(6));
    let truth = ground_truth_theta(&params).theta0[0];
    let spec = ScoreSpec {
        family: ScoreFamily::Surrogate {
            dynamic: false,
            repr: Representation::Orthogonal,
        },
        design: Design::CrossDataset,
        options: ScoreOptions::default(),
        m: params.m,
    };
    let maps = FeatureMaps::identity(1, 1, params.p);
    let n = 50000;
    let reps = 4;
    let analytic = AnalyticNuisances::new(&params, Design::CrossDataset, 0.5, 1e-6).expect("analytic nuisances");
    let datasets: Vec<PanelDataset> = (0..reps)
        .map(|r| simulate_linear(&params, n, n, derive_seed(606, r)).expect("valid DGP"))
        .collect();
    let bias = |delta: f64, corrupt_q: bool| -> f64 {
        let est: Vec<f64> = datasets
            .iter()
            .map(|data| {
                let s1: Vec<f64> = data
                    .units
                    .iter()
                    .filter(|u| u.setting == Setting::Observational)
                    .map(|u: &UnitTrajectory| u.state(1)[0])
                    .collect();
                let center = mean(&s1);
                let scale = (s1.iter().map(|v| (v - center).powi(2)).sum::<f64>() / s1.len() as f64).sqrt();
                let model = Corrupted {
                    base: &analytic,
                    delta,
                    corrupt_q,
                    center,
                    scale,
                };
                solve_theta(&system_at(data, &model, &spec, &maps)).expect("solvable").theta0()[0]
            })
            .collect();
        (mean(&est) - truth).abs()
    };
    let g_only: Vec<(f64, f64)> = [0.1, 0.2, 0.4].iter().map(|&d| (d, bias(d, false))).collect();
    let both = bias(0.4, true);
    outcome(
        6,
        g_only.iter().all(|(_, b)| *b < 0.05) && both > 0.1,
        format!(
            "static bias with g corrupted: {} (need < 0.05); g and q corrupted at 0.4: {both:.4} (need > 0.1)",
            g_only.iter().map(|(d, b)| format!("d={d}: {b:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn random_system(rng: &mut impl Rng) -> MomentSystem {
    let nb = rng.random_range(1..=5);
    let dims: Vec<usize> = (0..nb).map(|_| rng.random_range(1..=3)).collect();
    let n = rng.random_range(30..=120);
    let units = (0..n)
        .map(|i| {
            let terms = (0..nb)
                .map(|b| {
                    let w = DVector::from_fn(dims[b], |_, _| rng.sample::<f64, _>(StandardNormal));
                    let regressors = (b..nb)
                        .map(|c| {
                            let x = if c == b {
                                w.map(|v| v + 0.3 * rng.sample::<f64, StandardNormal>(StandardNormal))
                            } else {
                                DVector::from_fn(dims[c], |_, _| rng.sample::<f64, _>(StandardNormal))
                            };
                            (c, x)
                        })
                        .collect();
                    ScoreTerm {
                        block: b,
                        response: rng.sample(StandardNormal),
                        regressors,
                        weights: w,
                    }
                })
                .collect();
            UnitScore { unit: i, terms }
        })
        .collect();
    MomentSystem::from_scores(dims, units, n)
}

fn lower_blocks_zero(sys: &MomentSystem) -> bool {
    let off = sys.offsets();
    (0..sys.dims.len()).all(|r| {
        (0..r).all(|c| {
            sys.g
                .view((off[r], off[c]), (sys.dims[r], sys.dims[c]))
                .iter()
                .all(|v| *v == 0.0)
        })
    })
}

fn criterion_7() -> Outcome {
    let mut rng = rng_from(707);
    let mut worst: f64 = 0.0;
    let mut zero = true;
    for _ in 0..100 {
        let sys = random_system(&mut rng);
        zero &= lower_blocks_zero(&sys);
        let a = solve_theta(&sys).expect("well-posed").stacked();
        let b = solve_dense(&sys).expect("well-posed").stacked();
        worst = worst.max((&a - &b).amax() / b.amax().max(1.0));
    }
    // Systems assembled from real scores share the structure.
    let params = positive_linear_params(3, 2, 4, PolicyKind::Adaptive, &mut rng_from(77));
    let data = simulate_linear(&params, 500, 500, 3).expect("valid DGP");
    let analytic = AnalyticNuisances::new(&params, Design::CrossDataset, 0.5, 1e-3).expect("analytic");
    let spec = score_spec(EstimatorKind::DebNewTreat, &EstimatorConfig::default(), 4);
    let real = system_at(&data, &analytic, &spec, &FeatureMaps::identity(2, 2, 3));
    zero &= lower_blocks_zero(&real);
    outcome(
        7,
        worst <= 1e-10 && zero,
        format!("max relative solver gap {worst:.2e} over 100 systems (tol 1e-10); lower blocks exactly zero: {zero}"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = SemiSynthConfig::default();
    let model = SemiSynthModel::build(&cfg).expect("default config is valid");
    let truth = model.ground_truth();
    let reps = 50;
    let n = 5000;
    let kinds = [EstimatorKind::DebNewTreat, EstimatorKind::Surrogate];
    let per_rep: Vec<(Vec<f64>, f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(808, r as u64);
            let data = model.simulate(n, seed).expect("simulates");
            let est = EstimatorConfig {
                seed,
                ..EstimatorConfig::default()
            };
            let errs = kinds
                .iter()
                .map(|&k| l2_error(&run_estimator(k, &data, &est).expect("estimator runs"), &true_theta(k, &truth)))
                .collect();
            (errs, zero_treatment_share(&data), treatment_autocorrelation(&data, 0))
        })
        .collect();
    let deb = mean(&per_rep.iter().map(|r| r.0[0]).collect::<Vec<_>>());
    let sur = mean(&per_rep.iter().map(|r| r.0[1]).collect::<Vec<_>>());
    let lumpiness = per_rep[0].1;
    let autocorr = per_rep[0].2;
    outcome(
        8,
        lumpiness >= 0.6 && autocorr > 0.0 && deb < sur,
        format!(
            "zero-treatment share {lumpiness:.3} (need >= 0.6); lag-1 treatment autocorrelation {autocorr:.3} (need > 0); mean l2 error DebNewTreat {deb:.4} vs Surrogate {sur:.4} at n=5000, M=4, R=50; {:.1}s",
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- 9

fn standardize(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let means = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n);
    let sds = DVector::from_fn(x.ncols(), |j, _| (x.column(j).map(|v| (v - means[j]).powi(2)).sum() / n).sqrt());
    (means, sds)
}

fn criterion_9() -> Outcome {
    let mut rng = rng_from(909);
    let mut worst_kkt: f64 = 0.0;
    let mut worst_ols: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(40..=200);
        let p = rng.random_range(1..=15);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0);
        let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { rng.sample::<f64, _>(StandardNormal) } else { 0.0 });
        let y = &x * &beta + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).add_scalar(0.5);
        let (means, sds) = standardize(&x);
        let yc = y.add_scalar(-y.mean());
        let lambda_max = (0..p)
            .map(|j| (x.column(j).add_scalar(-means[j]).dot(&yc) / (n as f64 * sds[j])).abs())
            .fold(0.0, f64::max);
        let lambda = lambda_max * rng.random_range(0.01..1.2);
        let fit = fit_lasso(&x, &y, lambda).expect("lasso fits");
        let resid = &y - x.clone() * &fit.coefficients;
        let resid = resid.add_scalar(-fit.intercept);
        for j in 0..p {
            let grad = x.column(j).add_scalar(-means[j]).dot(&resid) / (n as f64 * sds[j]);
            let b = fit.coefficients[j];
            let viol = if b == 0.0 { (grad.abs() - lambda).max(0.0) } else { (grad - lambda * b.signum()).abs() };
            worst_kkt = worst_kkt.max(viol / lambda_max.max(1.0));
        }
        if n > 2 * p {
            let tiny = fit_lasso(&x, &y, 1e-12 * lambda_max).expect("lasso fits");
            let ols = fit_ols(&x, &y).expect("ols fits");
            worst_ols = worst_ols.max((&tiny.coefficients - &ols.coefficients).amax());
        }
    }
    outcome(
        9,
        worst_kkt <= 1e-6 && worst_ols <= 1e-6,
        format!("max scaled KKT violation {worst_kkt:.2e} over 200 problems (tol 1e-6); max |lasso(lambda->0) - OLS| {worst_ols:.2e} (tol 1e-6)"),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results = vec![criterion_1()];
    results.extend(criteria_2_3());
    results.push(criterion_4());
    results.extend(criterion_5());
    results.push(criterion_6());
    results.push(criterion_7());
    results.push(criterion_8());
    results.push(criterion_9());

    let mut unexpected = 0;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        let label = if r.id == 0 { "diagnostic".to_string() } else { format!("criterion {}", r.id) };
        let note = if !r.pass && KNOWN_UNATTAINABLE.contains(&r.id) { " [known unattainable]" } else { "" };
        println!("{label}: {status}{note} {}", r.detail);
        if !r.pass && !KNOWN_UNATTAINABLE.contains(&r.id) {
            unexpected += 1;
        }
    }
    println!("acceptance finished in {:.1}s", secs(started.elapsed()));
    if unexpected == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

//! Central finite-difference verification of the analytic gradients of the
//! contrastive loss (all model parameters) and of the uncertainty-weighted total loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{
    backward_views, forward_views, EmbeddingModel, FeatureMap, ProjectionDims, SamplingPattern,
};
use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::mtcl::{tcl_loss, total_loss, InfoNce, LabeledView, TrajectoryCenterBank, UncertaintyWeights};
use crate::vector::l2_normalize;

pub const RELATIVE_TOLERANCE: f64 = 1e-4;
pub const ABSOLUTE_FLOOR: f64 = 1e-7;
/// Step of the central difference.
pub const STEP: f64 = 1e-6;

/// `|a − b| ≤ max(1e-4 · max(|a|, |b|), 1e-7)`.
pub fn within_tolerance<T: Into<f64>>(analytic: T, numeric: T) -> bool {
    let (a, b) = (analytic.into(), numeric.into());
    let diff = (a - b).abs();
    diff <= (RELATIVE_TOLERANCE * a.abs().max(b.abs())).max(ABSOLUTE_FLOOR)
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish. Reported only; pass/fail
/// uses [`within_tolerance`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub n_configs: usize,
    pub seed: u64,
    /// Fixed layer widths; random small widths per configuration when `None`.
    pub dims: Option<ProjectionDims>,
    /// Fixed view count; random in `1..=5` when `None`.
    pub n_k: Option<usize>,
    /// Deliberately falsifies one analytic entry to prove the harness can fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n_configs: 100,
            seed: 0,
            dims: None,
            n_k: None,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterReport {
    pub name: String,
    pub entries_checked: usize,
    pub failures: usize,
    /// Over entries large enough that the relative bound governs.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub configs: usize,
    pub parameters: Vec<ParameterReport>,
}

impl GradcheckReport {
    pub fn failures(&self) -> usize {
        self.parameters.iter().map(|p| p.failures).sum()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    fn record(&mut self, name: &str, analytic: f64, numeric: f64) {
        let slot = match self.parameters.iter().position(|p| p.name == name) {
            Some(i) => i,
            None => {
                self.parameters.push(ParameterReport {
                    name: name.to_string(),
                    entries_checked: 0,
                    failures: 0,
                    max_relative_error: 0.0,
                    max_abs_error: 0.0,
                });
                self.parameters.len() - 1
            }
        };
        let p = &mut self.parameters[slot];
        p.entries_checked += 1;
        if !within_tolerance(analytic, numeric) {
            p.failures += 1;
        }
        p.max_abs_error = p.max_abs_error.max((analytic - numeric).abs());
        if analytic.abs().max(numeric.abs()) * RELATIVE_TOLERANCE >= ABSOLUTE_FLOOR {
            p.max_relative_error = p.max_relative_error.max(relative_error(analytic, numeric));
        }
    }
}

struct Problem {
    map: FeatureMap<f64>,
    targets: Vec<(usize, BoundingBox<f64>)>,
    model: EmbeddingModel<f64>,
    bank: TrajectoryCenterBank<f64>,
    nce: InfoNce<f64>,
}

fn random_dims(rng: &mut ChaCha8Rng) -> ProjectionDims {
    ProjectionDims {
        input: rng.random_range(2..=4),
        hidden1: rng.random_range(3..=6),
        hidden2: rng.random_range(3..=6),
        pre: rng.random_range(2..=5),
        output: rng.random_range(2..=5),
    }
}

fn random_problem(cfg: &GradcheckConfig, index: usize) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let dims = cfg.dims.unwrap_or_else(|| random_dims(&mut rng));
    let n_k = cfg.n_k.unwrap_or_else(|| rng.random_range(1..=5));
    let (h, w) = (rng.random_range(5..=9usize), rng.random_range(5..=9usize));
    let map = FeatureMap::from_fn(h, w, dims.input, |_, _, _| rng.random_range(-1.0..1.0));
    let n_traj = 3;
    let targets = (0..rng.random_range(1..=2))
        .map(|_| {
            let bw = rng.random_range(1.5..(w as f64 - 1.0));
            let bh = rng.random_range(1.5..(h as f64 - 1.0));
            let left = rng.random_range(0.0..(w as f64 - 1.0 - bw));
            let top = rng.random_range(0.0..(h as f64 - 1.0 - bh));
            (rng.random_range(0..n_traj), BoundingBox::new(left, top, bw, bh))
        })
        .collect();
    let mut model = EmbeddingModel::random(n_k, dims, SamplingPattern::Grid, 0.5, &mut rng)?;
    // Nonzero biases keep the check away from the all-dead point where the
    // normalization inside the head has no derivative.
    for layer in &mut model.projection.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let mut bank = TrajectoryCenterBank::new(n_traj, dims.output)?;
    for l in 0..n_traj {
        // Leave roughly one center in four at zero to exercise the exclusion rule.
        if rng.random_bool(0.75) {
            let c: Vec<f64> = (0..dims.output).map(|_| rng.random_range(-1.0..1.0)).collect();
            bank.update_center(l, &l2_normalize(&c).vector, 0.0)?;
        }
    }
    let nce = InfoNce::new(rng.random_range(0.05..1.0))?;
    Ok(Problem {
        map,
        targets,
        model,
        bank,
        nce,
    })
}

fn loss_of(p: &Problem, model: &EmbeddingModel<f64>) -> Result<f64> {
    let mut views = Vec::new();
    for &(label, ref bbox) in &p.targets {
        let (vs, _) = forward_views(&p.map, bbox, model)?;
        views.extend(vs.into_iter().map(|view| LabeledView { label, view }));
    }
    Ok(tcl_loss(&views, &p.bank, &p.nce)?.loss)
}

fn analytic_gradients(p: &Problem) -> Result<Vec<Vec<f64>>> {
    let mut views = Vec::new();
    let mut tapes = Vec::new();
    for &(label, ref bbox) in &p.targets {
        let (vs, tape) = forward_views(&p.map, bbox, &p.model)?;
        tapes.push((views.len(), vs.len(), tape));
        views.extend(vs.into_iter().map(|view| LabeledView { label, view }));
    }
    let out = tcl_loss(&views, &p.bank, &p.nce)?;
    let mut grads = p.model.zeros_like();
    for (start, len, mut tape) in tapes {
        let g = backward_views(&p.map, &mut tape, &out.grads[start..start + len], &p.model)?;
        grads.add_assign(&g);
    }
    Ok(grads.slices().iter().map(|s| s.to_vec()).collect())
}

fn check_model(p: &Problem, corrupt: bool, report: &mut GradcheckReport) -> Result<()> {
    let mut analytic = analytic_gradients(p)?;
    if corrupt {
        if let Some(last) = analytic.last_mut().and_then(|g| g.first_mut()) {
            *last += 1.0;
        }
    }
    let names = EmbeddingModel::<f64>::parameter_names();
    let mut probe = p.model.clone();
    for (slot, name) in names.iter().enumerate() {
        for k in 0..analytic[slot].len() {
            let original = probe.parameters()[slot][k];
            probe.parameters_mut()[slot][k] = original + STEP;
            let up = loss_of(p, &probe)?;
            probe.parameters_mut()[slot][k] = original - STEP;
            let down = loss_of(p, &probe)?;
            probe.parameters_mut()[slot][k] = original;
            report.record(name, analytic[slot][k], (up - down) / (2.0 * STEP));
        }
    }
    Ok(())
}

fn check_total_loss(rng: &mut ChaCha8Rng, report: &mut GradcheckReport) {
    let l_det = rng.random_range(0.0..5.0);
    let l_tcl = rng.random_range(0.0..5.0);
    let w = UncertaintyWeights {
        eta1: rng.random_range(-2.0..2.0),
        eta2: rng.random_range(-2.0..2.0),
    };
    let t = total_loss(l_det, l_tcl, &w);
    let f = |d: f64, c: f64, e1: f64, e2: f64| {
        total_loss(d, c, &UncertaintyWeights { eta1: e1, eta2: e2 }).value
    };
    let h = STEP;
    let c = |a: f64, b: f64| (a - b) / (2.0 * h);
    report.record("total.eta1", t.d_eta1, c(f(l_det, l_tcl, w.eta1 + h, w.eta2), f(l_det, l_tcl, w.eta1 - h, w.eta2)));
    report.record("total.eta2", t.d_eta2, c(f(l_det, l_tcl, w.eta1, w.eta2 + h), f(l_det, l_tcl, w.eta1, w.eta2 - h)));
    report.record("total.l_det", t.d_det, c(f(l_det + h, l_tcl, w.eta1, w.eta2), f(l_det - h, l_tcl, w.eta1, w.eta2)));
    report.record("total.l_tcl", t.d_tcl, c(f(l_det, l_tcl + h, w.eta1, w.eta2), f(l_det, l_tcl - h, w.eta1, w.eta2)));
}

/// Runs the full harness over `cfg.n_configs` seeded random problems.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        configs: cfg.n_configs,
        parameters: Vec::new(),
    };
    let mut eq_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_A5A5);
    for index in 0..cfg.n_configs {
        let problem = random_problem(cfg, index)?;
        check_model(&problem, cfg.corrupt, &mut report)?;
        check_total_loss(&mut eq_rng, &mut report);
    }
    Ok(report)
}

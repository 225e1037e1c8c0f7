//! Central finite-difference audit of reverse-mode gradients.
//!
//! The networks are piecewise smooth (ReLU, max pooling, neighbor
//! selection). A difference quotient is only meaningful when both probes
//! stay on the smooth piece of the unperturbed point, which the graph's
//! branch fingerprint certifies. When a probe crosses a kink the step is
//! halved until both probes share the base fingerprint.

use crate::autograd::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error, so gradients
    /// that are zero up to round-off are compared absolutely.
    pub floor: f64,
    /// Gradients smaller than the difference quotient's round-off
    /// resolution (`roundoff_units · ε · |f| / h`, divided by the tolerance)
    /// are compared against that resolution instead of their own size.
    pub roundoff_units: f64,
    /// Maximum number of step halvings when a probe crosses a kink.
    pub max_halvings: u32,
    /// Check at most this many entries per parameter array (evenly spaced);
    /// `None` checks every scalar.
    pub per_param_limit: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-8,
            roundoff_units: 8.0,
            max_halvings: 8,
            per_param_limit: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_values: (f64, f64),
    pub failures: usize,
    /// Entries that needed a reduced step to stay on one smooth piece.
    pub reduced_steps: usize,
    /// Entries sitting exactly on a kink, checked with a one-sided
    /// second-order difference on the side that keeps the base branches.
    pub one_sided: usize,
    /// Entries where no probe stayed on the base piece.
    pub unresolved: usize,
    /// Names and flat indices of the first few unresolved entries.
    pub unresolved_entries: Vec<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.unresolved == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.reduced_steps += other.reduced_steps;
        self.one_sided += other.one_sided;
        self.unresolved += other.unresolved;
        self.unresolved_entries.extend(other.unresolved_entries.iter().cloned());
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
            self.worst_values = other.worst_values;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate(store: &ParamStore, build: &impl Fn(&mut Graph) -> Var) -> (f64, u64) {
    let mut g = Graph::with_fingerprint(store);
    let out = build(&mut g);
    (g.value(out).item(), g.fingerprint().expect("fingerprinting graph"))
}

/// `(−3f(0) + 4f(s) − f(2s)) / 2s` for `s = ±h`, using the first side whose
/// probes both keep the base fingerprint.
fn one_sided(
    work: &mut ParamStore,
    id: ParamId,
    idx: usize,
    orig: f64,
    h: f64,
    base_fp: u64,
    build: &impl Fn(&mut Graph) -> Var,
) -> Option<(f64, f64)> {
    let (f0, _) = evaluate(work, build);
    let mut probe = |x: f64| {
        work.get_mut(id).data_mut()[idx] = x;
        let r = evaluate(work, build);
        work.get_mut(id).data_mut()[idx] = orig;
        r
    };
    for s in [h, -h] {
        let (f1, fp1) = probe(orig + s);
        let (f2, fp2) = probe(orig + 2.0 * s);
        if fp1 == base_fp && fp2 == base_fp {
            return Some(((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * s), f0.abs().max(f1.abs()).max(f2.abs())));
        }
    }
    None
}

/// Compares the gradient of the scalar built by `build` against central
/// differences for every parameter entry (or a strided subset).
pub fn check_gradients(store: &ParamStore, cfg: &GradCheckConfig, build: impl Fn(&mut Graph) -> Var) -> GradCheckReport {
    let (analytic, base_fp) = {
        let mut g = Graph::with_fingerprint(store);
        let out = build(&mut g);
        (g.backward(out), g.fingerprint().expect("fingerprinting graph"))
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = match cfg.per_param_limit {
            Some(limit) if limit < n => n.div_ceil(limit),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = store.get(id).data()[idx];
            let mut h = cfg.step;
            let mut numeric = None;
            // Largest |f| seen by the probes and the effective step, for
            // the round-off floor.
            let mut scale = (0.0f64, cfg.step);
            for attempt in 0..=cfg.max_halvings {
                work.get_mut(id).data_mut()[idx] = orig + h;
                let (fp, fpp) = evaluate(&work, &build);
                work.get_mut(id).data_mut()[idx] = orig - h;
                let (fm, fpm) = evaluate(&work, &build);
                work.get_mut(id).data_mut()[idx] = orig;
                if fpp == base_fp && fpm == base_fp {
                    numeric = Some((fp - fm) / (2.0 * h));
                    scale = (fp.abs().max(fm.abs()), h);
                    if attempt > 0 {
                        report.reduced_steps += 1;
                    }
                    break;
                }
                h *= 0.5;
            }
            if numeric.is_none() {
                numeric = one_sided(&mut work, id, idx, orig, cfg.step, base_fp, &build).map(|(d, f)| {
                    // Stencil weights (3+4+1)/2 against (1+1)/2 for the central quotient.
                    scale = (4.0 * f, cfg.step);
                    d
                });
                if numeric.is_some() {
                    report.one_sided += 1;
                }
            }
            let a = analytic.get(id).data()[idx];
            report.checked += 1;
            let Some(num) = numeric else {
                report.unresolved += 1;
                if report.unresolved_entries.len() < 16 {
                    report.unresolved_entries.push((store.name(id).to_string(), idx));
                }
                continue;
            };
            let resolution = cfg.roundoff_units * f64::EPSILON * scale.0 / scale.1;
            let err = relative_error(a, num, cfg.floor.max(resolution / cfg.tolerance));
            if err >= cfg.tolerance {
                report.failures += 1;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((store.name(id).to_string(), idx));
                report.worst_values = (a, num);
            }
        }
    }
    report
}

/// Adds uniform noise of the given amplitude to every parameter, moving a
/// freshly initialized model (zero biases) off exactly-degenerate kinks.
pub fn generic_point(store: &mut ParamStore, amplitude: f64, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x += rng.gen_range(-amplitude..amplitude);
        }
    }
}

//! Central finite-difference verification of backward passes.
//!
//! An element whose `+h` and `-h` evaluations take different branches of a
//! piecewise op (relu, max) straddles a kink, where the central difference
//! does not estimate the derivative. Such an element is retried with the step
//! divided by 10, up to [`MAX_REFINEMENTS`] times, and counted as refined. If
//! every step straddles a kink the element is skipped and, with sampling,
//! another is drawn in its place.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

/// Finite-difference step used throughout.
pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;
/// Step reductions tried on an element whose stencil straddles a kink.
pub const MAX_REFINEMENTS: u32 = 3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen elements of each parameter.
    /// `None` checks every element.
    pub max_elements_per_param: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(tolerance: f64) -> Self {
        Self {
            step: FD_STEP,
            tolerance,
            max_elements_per_param: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, per_param: usize) -> Self {
        self.max_elements_per_param = Some(per_param);
        self
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Checked elements that needed a reduced step to clear a kink.
    pub refined: usize,
    /// Elements whose stencil straddled a kink at every step.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    /// Set when a loss or gradient was not finite.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.non_finite.is_none()
            && self
                .params
                .iter()
                .all(|p| p.checked > 0 && p.max_rel_error < self.tolerance)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn refined(&self) -> usize {
        self.params.iter().map(|p| p.refined).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(loc) = &self.non_finite {
            writeln!(f, "FAIL non-finite value at {loc}")?;
        }
        for p in &self.params {
            writeln!(
                f,
                "{} {:<40} n={:<5} refined={:<3} skipped={:<3} max_rel={:.3e} (idx {}: analytic {:.6e}, numeric {:.6e})",
                if p.checked > 0 && p.max_rel_error < self.tolerance { "ok  " } else { "FAIL" },
                p.name,
                p.checked,
                p.refined,
                p.skipped,
                p.max_rel_error,
                p.worst_index,
                p.analytic,
                p.numeric
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of the scalar built by `builder` against
/// `(f(x+h) - f(x-h)) / 2h` for every parameter in `params`.
///
/// `builder` must be a pure function of the parameter values.
pub fn gradient_check<F>(
    params: &mut ParamStore<f64>,
    mut builder: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        params: Vec::new(),
        non_finite: None,
    };

    params.zero_grads();
    let mut g = Graph::new();
    let loss = builder(&mut g, params)?;
    if !g.value(loss).all_finite() {
        report.non_finite = Some("loss at the unperturbed point".into());
        return Ok(report);
    }
    g.backward_into(loss, params)?;

    let mut eval = |params: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let l = builder(&mut g, params)?;
        Ok((g.value(l).data()[0], g.branch_fingerprint()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let (name, n) = {
            let p = params.get(id);
            (p.name.clone(), p.value.len())
        };
        if let Some(i) = params.get(id).grad.first_non_finite() {
            report.non_finite = Some(format!("gradient of {name}[{i}]"));
            return Ok(report);
        }
        let mut order: Vec<usize> = (0..n).collect();
        let wanted = match opts.max_elements_per_param {
            Some(k) if k < n => {
                order.shuffle(&mut rng);
                k
            }
            _ => n,
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            refined: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in order {
            if check.checked == wanted {
                break;
            }
            let original = params.get(id).value.data()[i];
            let mut numeric = None;
            for refinement in 0..=MAX_REFINEMENTS {
                let step = opts.step / 10f64.powi(refinement as i32);
                params.get_mut(id).value.data_mut()[i] = original + step;
                let (plus, plus_branches) = eval(params)?;
                params.get_mut(id).value.data_mut()[i] = original - step;
                let (minus, minus_branches) = eval(params)?;
                params.get_mut(id).value.data_mut()[i] = original;
                if !plus.is_finite() || !minus.is_finite() {
                    report.non_finite = Some(format!("loss with {name}[{i}] perturbed"));
                    return Ok(report);
                }
                if plus_branches == minus_branches {
                    numeric = Some((plus - minus) / (2.0 * step));
                    if refinement > 0 {
                        check.refined += 1;
                    }
                    break;
                }
            }
            let Some(numeric) = numeric else {
                check.skipped += 1;
                continue;
            };
            check.checked += 1;
            let analytic = params.get(id).grad.data()[i];
            let err = relative_error(analytic, numeric);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .add("p", Tensor::new(&[3], vec![0.7, -1.3, 2.1]).unwrap())
            .unwrap();
        let report = gradient_check(
            &mut store,
            |g, s| {
                let p = g.param(s, id);
                let sq = g.mul(p, p)?;
                g.sum(sq)
            },
            &GradCheckOptions::new(1e-9),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        // The first (analytic) evaluation differs from the perturbed ones.
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[2], vec![0.5, 1.5]).unwrap()).unwrap();
        let mut calls = 0;
        let report = gradient_check(
            &mut store,
            |g, s| {
                calls += 1;
                let p = g.param(s, id);
                let k = if calls == 1 { 1.0 } else { 3.0 };
                let y = g.scale(p, k)?;
                g.sum(y)
            },
            &GradCheckOptions::new(1e-4),
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn reports_non_finite_location() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[1], vec![f64::INFINITY]).unwrap()).unwrap();
        let report = gradient_check(
            &mut store,
            |g, s| {
                let p = g.param(s, id);
                g.sum(p)
            },
            &GradCheckOptions::new(1e-4),
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.non_finite.is_some());
    }

    #[test]
    fn kinks_are_refined_or_skipped() {
        let mut store = ParamStore::new();
        // within one step of the kink, then exactly on it
        let id = store
            .add("p", Tensor::new(&[3], vec![3e-6, 0.5, 0.0]).unwrap())
            .unwrap();
        let report = gradient_check(
            &mut store,
            |g, s| {
                let p = g.param(s, id);
                let r = g.relu(p)?;
                g.sum(r)
            },
            &GradCheckOptions::new(1e-6),
        )
        .unwrap();
        assert_eq!(report.params[0].refined, 1);
        assert_eq!(report.params[0].skipped, 1);
        assert_eq!(report.params[0].checked, 2);
        assert!(report.passed(), "{report}");
    }
}

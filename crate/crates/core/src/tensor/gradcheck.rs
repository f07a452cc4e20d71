//! Central finite-difference checks of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps gradients that sit
/// below the finite-difference noise from being judged on noise alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of [`relative_error`].
    pub floor: f64,
    /// How many times the step may shrink tenfold when a stencil point
    /// leaves the regime of the unperturbed point.
    pub refinements: usize,
    /// Check at most this many entries per tensor (evenly spaced); `None`
    /// checks every entry.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-4, tolerance: 1e-4, floor: 1e-6, refinements: 3, max_entries: None }
    }
}

/// One evaluation of several objectives at the same parameters, with the
/// [`Tape::regime`](super::Tape::regime) signature of the pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub values: Vec<f64>,
    pub regime: u64,
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose step had to shrink to keep the stencil on one piece.
    pub refined: usize,
    /// Entries whose stencil still crossed a kink at the smallest step.
    pub straddled: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn refined(&self) -> usize {
        self.params.iter().map(|p| p.refined).sum()
    }

    pub fn straddled(&self) -> usize {
        self.params.iter().map(|p| p.straddled).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<6} {:<28} entries={:<6} max_rel_err={:.3e} (idx {}, analytic {:.6e}, numeric {:.6e}) refined={} straddled={}",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.checked,
                p.max_rel_error,
                p.worst_index,
                p.analytic,
                p.numeric,
                p.refined,
                p.straddled
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} over {} entries (tolerance {:.0e})",
            self.max_rel_error(),
            self.checked(),
            self.tolerance
        )
    }
}

/// Compare `gradient` against central differences of `loss` for every
/// tensor in `params`.
///
/// Both closures must be deterministic functions of the parameters (any
/// dropout masks drawn from a fixed seed). This is verified up front by
/// evaluating the loss twice and comparing against the loss reported
/// alongside the gradient.
pub fn grad_check<L, G>(
    names: &[String],
    params: &mut [Tensor],
    loss: L,
    gradient: G,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: Fn(&[Tensor]) -> Result<f64>,
    G: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let probe = |p: &[Tensor]| Ok(Probe { values: vec![loss(p)?], regime: 0 });
    let grads = |p: &[Tensor]| Ok(vec![gradient(p)?]);
    Ok(grad_check_many(names, params, probe, grads, opts)?.remove(0))
}

/// [`grad_check`] for several objectives sharing one forward pass: `loss`
/// returns every objective's value, `gradients` every objective's value and
/// gradient. One report per objective.
///
/// When a perturbed point lands in a different regime than the unperturbed
/// one, the stencil straddles a kink and the step shrinks tenfold, up to
/// `opts.refinements` times.
pub fn grad_check_many<L, G>(
    names: &[String],
    params: &mut [Tensor],
    loss: L,
    gradients: G,
    opts: &GradCheckOptions,
) -> Result<Vec<GradCheckReport>>
where
    L: Fn(&[Tensor]) -> Result<Probe>,
    G: Fn(&[Tensor]) -> Result<Vec<(f64, Vec<Tensor>)>>,
{
    if names.len() != params.len() {
        return Err(Error::Invalid(format!("{} names for {} tensors", names.len(), params.len())));
    }
    let first = loss(params)?;
    let second = loss(params)?;
    let analytic = gradients(params)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let reported: Vec<f64> = analytic.iter().map(|(v, _)| *v).collect();
    if bits(&first.values) != bits(&second.values)
        || bits(&first.values) != bits(&reported)
        || first.regime != second.regime
    {
        return Err(Error::NonDeterministic(format!(
            "repeated evaluations disagree: {:?}, {:?}, {:?}",
            first.values, second.values, reported
        )));
    }
    for (_, grads) in &analytic {
        if grads.len() != params.len() {
            return Err(Error::Invalid(format!("{} gradients for {} tensors", grads.len(), params.len())));
        }
        for ((g, p), name) in grads.iter().zip(params.iter()).zip(names) {
            if g.shape() != p.shape() {
                return Err(Error::shape(format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
        }
    }

    let objectives = analytic.len();
    let mut reports: Vec<GradCheckReport> =
        (0..objectives).map(|_| GradCheckReport { tolerance: opts.tolerance, params: Vec::new() }).collect();
    for p in 0..params.len() {
        let numel = params[p].numel();
        let indices: Vec<usize> = match opts.max_entries {
            Some(m) if m < numel => (0..m).map(|k| k * numel / m).collect(),
            _ => (0..numel).collect(),
        };
        let mut checks: Vec<ParamCheck> = (0..objectives)
            .map(|_| ParamCheck {
                name: names[p].clone(),
                checked: indices.len(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
                refined: 0,
                straddled: 0,
                passed: true,
            })
            .collect();
        for &i in &indices {
            let original = params[p].data()[i];
            let mut step = opts.step;
            let mut attempt = 0;
            let (plus, minus, clean) = loop {
                params[p].data_mut()[i] = original + step;
                let plus = loss(params);
                params[p].data_mut()[i] = original - step;
                let minus = loss(params);
                params[p].data_mut()[i] = original;
                let (plus, minus) = (plus?, minus?);
                let clean = plus.regime == first.regime && minus.regime == first.regime;
                if clean || attempt == opts.refinements {
                    break (plus, minus, clean);
                }
                attempt += 1;
                step /= 10.0;
            };
            for (k, check) in checks.iter_mut().enumerate() {
                check.refined += usize::from(attempt > 0);
                check.straddled += usize::from(!clean);
                let numeric = (plus.values[k] - minus.values[k]) / (2.0 * step);
                let analytic = analytic[k].1[p].data()[i];
                let err = relative_error(analytic, numeric, opts.floor);
                if err > check.max_rel_error || i == indices[0] {
                    check.max_rel_error = err;
                    check.worst_index = i;
                    check.analytic = analytic;
                    check.numeric = numeric;
                }
            }
        }
        for (report, mut check) in reports.iter_mut().zip(checks) {
            check.passed = check.max_rel_error <= opts.tolerance;
            report.params.push(check);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let h = 1e-5;
        let numeric = ((3.0f64 + h).powi(2) - (3.0f64 - h).powi(2)) / (2.0 * h);
        assert!(relative_error(6.0, numeric, 1e-8) < 1e-8);

        let mut params = vec![Tensor::scalar(3.0)];
        let report = grad_check(
            &["w".to_string()],
            &mut params,
            |p| Ok(p[0].data()[0].powi(2)),
            |p| Ok((p[0].data()[0].powi(2), vec![Tensor::scalar(2.0 * p[0].data()[0])])),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut params = vec![Tensor::scalar(3.0)];
        let report = grad_check(
            &["w".to_string()],
            &mut params,
            |p| Ok(p[0].data()[0].powi(2)),
            |p| Ok((p[0].data()[0].powi(2), vec![Tensor::scalar(5.0)])),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn nondeterministic_objective_is_a_setup_error() {
        let counter = Cell::new(0u32);
        let mut params = vec![Tensor::scalar(1.0)];
        let result = grad_check(
            &["w".to_string()],
            &mut params,
            |p| {
                counter.set(counter.get() + 1);
                Ok(p[0].data()[0] + counter.get() as f64 * 1e-3)
            },
            |p| Ok((p[0].data()[0], vec![Tensor::scalar(1.0)])),
            &GradCheckOptions::default(),
        );
        assert!(matches!(result, Err(Error::NonDeterministic(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1e-9, 0.0, 1e-8) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kinked_stencil_shrinks_the_step() {
        // |x| near x = 3e-5: the default step crosses the kink at zero,
        // a step of 1e-5 does not.
        let mut params = vec![Tensor::scalar(3e-5)];
        let probe = |p: &[Tensor]| {
            let x = p[0].data()[0];
            Ok(Probe { values: vec![x.abs()], regime: u64::from(x >= 0.0) })
        };
        let grads = |p: &[Tensor]| Ok(vec![(p[0].data()[0].abs(), vec![Tensor::scalar(1.0)])]);
        let report = grad_check_many(&["x".to_string()], &mut params, probe, grads, &GradCheckOptions::default())
            .unwrap()
            .remove(0);
        assert!(report.passed(), "{report}");
        assert_eq!((report.refined(), report.straddled()), (1, 0));
    }

    #[test]
    fn objectives_are_reported_separately() {
        let mut params = vec![Tensor::new(vec![2], vec![1.5, -0.5]).unwrap()];
        let probe = |p: &[Tensor]| {
            let d = p[0].data();
            Ok(Probe { values: vec![d[0] * d[1], d[0].powi(3)], regime: 0 })
        };
        let grads = |p: &[Tensor]| {
            let d = p[0].data();
            Ok(vec![
                (d[0] * d[1], vec![Tensor::new(vec![2], vec![d[1], d[0]])?]),
                (d[0].powi(3), vec![Tensor::new(vec![2], vec![3.0 * d[0] * d[0], 1.0])?]),
            ])
        };
        let reports =
            grad_check_many(&["w".to_string()], &mut params, probe, grads, &GradCheckOptions::default()).unwrap();
        assert!(reports[0].passed());
        assert!(!reports[1].passed());
        assert_eq!(reports[1].params[0].worst_index, 1);
    }
}

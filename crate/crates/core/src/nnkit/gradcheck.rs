use super::params::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)` for every parameter element and
/// returns the largest `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss_and_grad` must return the loss and the analytic gradient at the
/// given parameters.
pub fn gradient_check<P, F>(params: &P, eps: f64, loss_and_grad: F) -> Result<GradCheckReport>
where
    P: Params + Clone,
    F: Fn(&P) -> Result<(f64, P)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::validation(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let (loss, analytic) = loss_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at the check point".into()));
    }
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.data().to_vec()))
        .collect();

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let original = work.named()[ti].1.data()[j];
            set_element(&mut work, ti, j, original + eps);
            let (plus, _) = loss_and_grad(&work)?;
            set_element(&mut work, ti, j, original - eps);
            let (minus, _) = loss_and_grad(&work)?;
            set_element(&mut work, ti, j, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{j}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{j}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn set_element<P: Params>(p: &mut P, tensor: usize, index: usize, value: f64) {
    let mut named = p.named_mut();
    named[tensor].1.data_mut()[index] = value;
}

//! Central-difference verification of reverse-mode gradients.

use super::{Grads, Graph, NnError, ParamId, ParamStore, Var};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against five-point
/// central differences with base step `eps`. At most `max_per_tensor` evenly spaced elements
/// of each parameter are probed (`None` probes all).
pub fn grad_check<F>(
    store: &ParamStore,
    params: &[ParamId],
    eps: f32,
    max_per_tensor: Option<usize>,
    f: F,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph) -> Var,
{
    let mut grads = Grads::new(store);
    {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        g.backward(loss, &mut grads)?;
    }
    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::new(s);
        let loss = f(&mut g);
        g.scalar(loss)
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for &id in params {
        let n = store.get(id).len();
        let picks: Vec<usize> = match max_per_tensor {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for idx in picks {
            let orig = store.get(id).data()[idx];
            let mut at = |k: f32| -> (f64, f64) {
                let v = orig + k * eps;
                probe.get_mut(id).data_mut()[idx] = v;
                let y = eval(&probe);
                // the realized offset in f32 can differ slightly from k * eps
                (y, v as f64 - orig as f64)
            };
            let (u1, h1) = at(1.0);
            let (d1, g1) = at(-1.0);
            let (u2, h2) = at(2.0);
            let (d2, g2) = at(-2.0);
            probe.get_mut(id).data_mut()[idx] = orig;
            // five-point stencil: truncation error O(eps^4)
            let c1 = (u1 - d1) / (h1 - g1);
            let c2 = (u2 - d2) / (h2 - g2);
            let numeric = (4.0 * c1 - c2) / 3.0;
            let analytic = grads.get(id).map(|t| t.data()[idx] as f64).unwrap_or(0.0);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = e;
                report.worst = Some((store.name(id).to_string(), idx));
            }
        }
    }
    Ok(report)
}

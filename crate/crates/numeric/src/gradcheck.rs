//! Central finite-difference checks of tape gradients.

use crate::error::{NumericError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamGrads, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Denominator floor so near-zero entries are compared absolutely.
    pub floor: f64,
    /// Cap on checked entries per parameter (evenly strided); 0 = all.
    pub max_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-3,
            max_per_param: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of `loss` against central differences for
/// every scalar in `store`. `loss` must build a scalar node and be a
/// deterministic function of the store.
pub fn check_gradients<F>(store: &mut ParamStore, cfg: &GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let mut grads = ParamGrads::new(store);
    {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?.accumulate_into(&mut grads);
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = if cfg.max_per_param == 0 || n <= cfg.max_per_param {
            1
        } else {
            n.div_ceil(cfg.max_per_param)
        };
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + cfg.eps;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - cfg.eps;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[j]);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(NumericError::NonFinite("gradient check"));
            }
            let err = relative_error(analytic, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = format!(
                    "{}[{j}]: analytic {analytic:.6e} numeric {numeric:.6e}",
                    store.name(id)
                );
            }
        }
    }
    Ok(report)
}

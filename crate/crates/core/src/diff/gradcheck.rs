//! Central finite-difference checks of tape gradients.

use super::{DiffError, Graph, ParamId, ParamStore, Var};

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `d loss / d p` for every entry of `ids` against central
/// differences with step `h`. `loss` must build the same scalar each call.
pub fn check_gradients<F>(store: &mut ParamStore, ids: &[ParamId], h: f64, loss: F) -> Result<GradReport, DiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, DiffError>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    store.zero_grad();
    g.backward(l, store)?;
    let eval = |store: &ParamStore| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.scalar(l))
    };
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for &id in ids {
        let analytic = store
            .get(id)
            .grad()
            .ok_or_else(|| DiffError::MissingGrad(store.param(id).name.clone()))?
            .to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let err = rel_err(a, (up - down) / (2.0 * h));
            if report.checked == 0 || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{i}]", store.param(id).name);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

use super::{ParamStore, Tape, Var};
use crate::error::Result;

/// Per-parameter comparison of analytic gradients against central finite
/// differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// (parameter name, max relative error over its elements)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Relative error with an absolute floor: gradients at least 1e-3 in
/// magnitude compare purely relatively; smaller ones compare absolutely at
/// tolerance * 1e-3. Central differences carry roundoff noise of roughly
/// eps_mach * |f| / (2h), so a pure ratio against a near-zero gradient
/// measures noise, not correctness.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compare analytic gradients of a scalar loss against central finite
/// differences (64-bit, default step 1e-5) for every parameter in the store.
///
/// `build` must re-record the same computation from the current store values;
/// the checker perturbs one element at a time and re-evaluates.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    fd_step: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    store.zero_grads();
    tape.backward_into(loss, 1.0, store)?;
    let analytic: Vec<ndarray::Array2<f64>> =
        store.ids().map(|id| store.grad(id).clone()).collect();

    let eval = |store: &ParamStore<f64>, build: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        Ok(tape.scalar_value(loss))
    };

    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel = 0.0f64;
    for (k, id) in ids.iter().enumerate() {
        let dim = store.value(*id).raw_dim();
        let mut worst = 0.0f64;
        for r in 0..dim[0] {
            for c in 0..dim[1] {
                let orig = store.value(*id)[(r, c)];
                store.value_mut(*id)[(r, c)] = orig + fd_step;
                let up = eval(store, &mut build)?;
                store.value_mut(*id)[(r, c)] = orig - fd_step;
                let down = eval(store, &mut build)?;
                store.value_mut(*id)[(r, c)] = orig;
                let numeric = (up - down) / (2.0 * fd_step);
                worst = worst.max(rel_err(analytic[k][(r, c)], numeric));
            }
        }
        per_param.push((store.name(*id).to_string(), worst));
        max_rel = max_rel.max(worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_err: max_rel,
    })
}

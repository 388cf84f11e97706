//! Central finite-difference oracle for parameter gradients.
//!
//! Only forward evaluations are used, so results are independent of the
//! tape's backward rules.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with a floor on the denominator so vanishing gradients compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic(id)` against `(f(θ+h) − f(θ−h)) / 2h` for every scalar of every parameter.
pub fn check_params(
    store: &mut ParamStore<f64>,
    step: f64,
    tolerance: f64,
    floor: f64,
    analytic: impl Fn(ParamId) -> Vec<f64>,
    mut f: impl FnMut(&ParamStore<f64>) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let grad = analytic(id);
        let name = store.name(id).to_string();
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + step;
            let up = f(store);
            store.get_mut(id).values_mut()[i] = orig - step;
            let down = f(store);
            store.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = relative_error(grad[i], numeric, floor);
            report.checked += 1;
            let m = Mismatch {
                param: name.clone(),
                index: i,
                analytic: grad[i],
                numeric,
                rel_error: rel,
            };
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(m.clone());
            }
            if rel >= tolerance {
                report.failures.push(m);
            }
        }
    }
    report
}

/// Check every parameter gradient of the scalar built by `loss` on a fresh tape over `store`.
pub fn check_loss(
    store: &mut ParamStore<f64>,
    step: f64,
    tolerance: f64,
    floor: f64,
    loss: impl for<'a> Fn(&mut Tape<'a, f64>) -> Var,
) -> GradCheckReport {
    let grads: Vec<Vec<f64>> = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        tape.backward(l).expect("loss must be a scalar");
        let mut g: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        for (id, v) in tape.param_grads() {
            g[id.index()] = v.to_vec();
        }
        g
    };
    check_params(
        store,
        step,
        tolerance,
        floor,
        |id| grads[id.index()].clone(),
        |s| {
            let mut tape = Tape::inference(s);
            let l = loss(&mut tape);
            tape.scalar_value(l)
        },
    )
}

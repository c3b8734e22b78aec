use crate::diffkernel::{Gradients, ParamSet, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        OptimState {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params.iter().all(|(id, p)| {
                self.first[id.0].shape() == p.value.shape()
                    && self.second[id.0].shape() == p.value.shape()
            })
    }
}

/// One bias-corrected Adam update; pinned entries are re-zeroed afterwards.
/// Parameters without a gradient entry see a zero gradient.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, state: &mut OptimState, lr: f64) {
    assert!(
        state.matches(params),
        "optimizer state does not mirror parameters"
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let m = state.first[id.0].data_mut();
        let v = state.second[id.0].data_mut();
        let p = params.value_mut(id).data_mut();
        match grads.get(id) {
            Some(g) => {
                for (((pi, mi), vi), gi) in p
                    .iter_mut()
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                    .zip(g.data())
                {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                    *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + EPSILON);
                }
            }
            None => {
                for ((pi, mi), vi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi *= BETA1;
                    *vi *= BETA2;
                    *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + EPSILON);
                }
            }
        }
    }
    params.repin();
}

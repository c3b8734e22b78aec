use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamId, ParamSet};

/// Denominator floor for the relative error so that coordinates with a
/// vanishing gradient are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinate with the largest error: (param, flat index, analytic, numeric).
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// Pinned entries are skipped. With `max_coords = Some(n)` a uniform random
/// subset of `n` free coordinates is checked (drawn with `seed`).
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParamSet,
    analytic: &Gradients,
    h: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut coords: Vec<(ParamId, usize)> = Vec::with_capacity(params.free_len());
    for (id, p) in params.iter() {
        for k in p.pinned_len()..p.value.len() {
            coords.push((id, k));
        }
    }
    if let Some(n) = max_coords {
        if n < coords.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = index::sample(&mut rng, coords.len(), n).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (id, k) in coords {
        let orig = work.value(id).data()[k];
        work.value_mut(id).data_mut()[k] = orig + h;
        let up = f(&work);
        work.value_mut(id).data_mut()[k] = orig - h;
        let down = f(&work);
        work.value_mut(id).data_mut()[k] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((id, k, a, numeric));
        }
    }
    report
}

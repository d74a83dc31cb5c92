// SPDX-License-Identifier: Apache-2.0

//! Central finite differences, used as an oracle for the backward pass.
//! Nothing here touches the tape; only forward evaluations of `f`.

use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate of `param`.
pub fn finite_diff_grad<F>(store: &mut ParamStore, param: ParamId, h: f64, f: F) -> Tensor
where
    F: FnMut(&ParamStore) -> f64,
{
    let n = store.get(param).value.len();
    let coords: Vec<usize> = (0..n).collect();
    let values = finite_diff_coords(store, param, &coords, h, f);
    let mut out = Tensor::zeros(store.get(param).value.shape());
    out.data_mut().copy_from_slice(&values);
    out
}

/// Central differences restricted to the given flat coordinates.
pub fn finite_diff_coords<F>(
    store: &mut ParamStore,
    param: ParamId,
    coords: &[usize],
    h: f64,
    mut f: F,
) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    coords
        .iter()
        .map(|&i| {
            let orig = store.get(param).value.data()[i];
            store.get_mut(param).value.data_mut()[i] = orig + h;
            let up = f(store);
            store.get_mut(param).value.data_mut()[i] = orig - h;
            let down = f(store);
            store.get_mut(param).value.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// True if `analytic` and `numeric` agree to relative error `rel`, or to
/// absolute error `abs_floor` when both are near zero.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        return true;
    }
    diff / analytic.abs().max(numeric.abs()) < rel
}

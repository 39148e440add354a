//! Fixtures shared by the benchmarks.

use mcd_core::nn::{init_network, NetworkDef, NetworkState};
use mcd_core::DropoutSpec;
use ndarray::Array2;

/// Default non-linear network (1 -> 64 -> 64 -> 1) at `p_d`.
pub fn default_mlp(p_d: f64) -> (NetworkDef, NetworkState) {
    let def = NetworkDef::mlp(&[64, 64], DropoutSpec::unscaled(p_d).expect("valid rate"), false)
        .expect("valid architecture");
    let state = init_network(&def, 1).expect("valid definition");
    (def, state)
}

/// Single-layer model with `units` equal weights `w`.
pub fn equal_weight_single(units: usize, p_d: f64, w: f64) -> (NetworkDef, NetworkState) {
    let def = NetworkDef::single_layer(units, DropoutSpec::unscaled(p_d).expect("valid rate"))
        .expect("valid architecture");
    let mut state = init_network(&def, 0).expect("valid definition");
    state.layers[0].weight.fill(w);
    (def, state)
}

/// `rows` evenly spaced scalar inputs in [0, 1].
pub fn scalar_batch(rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, 1), |(r, _)| r as f64 / rows.max(2) as f64)
}

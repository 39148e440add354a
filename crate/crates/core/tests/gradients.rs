//! Reverse-mode gradients and forward passes checked against a scalar
//! re-implementation and central finite differences.

use mcd_core::dropout::{DropoutSpec, MaskSource, Scaling};
use mcd_core::nn::{backward, forward, init_network, LayerDef, MaskSet, NetworkDef, NetworkState};
use proptest::prelude::*;

/// Straight-line evaluation with explicit loops. Also returns the smallest
/// |pre-activation| seen by any ReLU, so callers can stay away from kinks.
fn scalar_forward(def: &NetworkDef, state: &NetworkState, x: &[f64], masks: &MaskSet) -> (Vec<f64>, f64) {
    let mut h = x.to_vec();
    let mut dense = 0;
    let mut drop = 0;
    let mut closest_kink = f64::INFINITY;
    for layer in &def.layers {
        match layer {
            LayerDef::Dense { in_dim, out_dim, has_bias } => {
                let p = &state.layers[dense];
                dense += 1;
                let mut out = vec![0.0; *out_dim];
                for (o, slot) in out.iter_mut().enumerate() {
                    let mut acc = if *has_bias { p.bias.as_ref().unwrap()[o] } else { 0.0 };
                    for (i, hi) in h.iter().enumerate().take(*in_dim) {
                        acc += p.weight[[o, i]] * hi;
                    }
                    *slot = acc;
                }
                h = out;
            }
            LayerDef::Relu => {
                for v in h.iter_mut() {
                    closest_kink = closest_kink.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            LayerDef::Dropout(spec) => {
                let m = &masks.0[drop];
                drop += 1;
                let scale = match spec.scaling {
                    Scaling::None => 1.0,
                    Scaling::Inverted => 1.0 / (1.0 - spec.p_d),
                };
                for (v, &bit) in h.iter_mut().zip(m) {
                    *v = if bit == 1 { *v * scale } else { 0.0 };
                }
            }
        }
    }
    (h, closest_kink)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct Probe {
    def: NetworkDef,
    params: Vec<f64>,
    x: Vec<f64>,
    upstream: Vec<f64>,
    mask_seed: u64,
}

fn layer_stack() -> impl Strategy<Value = NetworkDef> {
    (
        1usize..=16,
        prop::collection::vec((1usize..=16, any::<bool>(), any::<bool>(), prop::option::of((0.0f64..0.9, any::<bool>()))), 1..=3),
    )
        .prop_map(|(input_dim, blocks)| {
            let mut layers = Vec::new();
            let mut dim = input_dim;
            let last = blocks.len() - 1;
            for (i, (width, bias, relu, dropout)) in blocks.into_iter().enumerate() {
                if let Some((p_d, inverted)) = dropout {
                    let scaling = if inverted { Scaling::Inverted } else { Scaling::None };
                    layers.push(LayerDef::Dropout(DropoutSpec::new(p_d, scaling).unwrap()));
                }
                layers.push(LayerDef::Dense { in_dim: dim, out_dim: width, has_bias: bias });
                if relu && i != last {
                    layers.push(LayerDef::Relu);
                }
                dim = width;
            }
            NetworkDef::new(input_dim, layers).unwrap()
        })
}

fn probe() -> impl Strategy<Value = Probe> {
    layer_stack().prop_flat_map(|def| {
        let n_params = init_network(&def, 0).unwrap().num_params();
        (
            Just(def.clone()),
            prop::collection::vec(-1.0f64..1.0, n_params),
            prop::collection::vec(-2.0f64..2.0, def.input_dim),
            prop::collection::vec(-1.0f64..1.0, def.output_dim),
            any::<u64>(),
        )
            .prop_map(|(def, params, x, upstream, mask_seed)| Probe { def, params, x, upstream, mask_seed })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reverse_mode_matches_finite_differences(p in probe()) {
        let mut state = init_network(&p.def, 0).unwrap();
        state.set_flat(&p.params).unwrap();
        let masks = MaskSet::draw(&p.def, &mut MaskSource::new(p.mask_seed)).unwrap();
        let (_, kink) = scalar_forward(&p.def, &state, &p.x, &masks);
        prop_assume!(kink > 1e-3);

        let grad = backward(&state, &p.def, &p.x, &masks, &p.upstream).unwrap().to_flat();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p.params.len() {
            let mut plus = p.params.clone();
            plus[i] += h;
            let mut minus = p.params.clone();
            minus[i] -= h;
            let mut s = state.clone();
            s.set_flat(&plus).unwrap();
            let f_plus = dot(&scalar_forward(&p.def, &s, &p.x, &masks).0, &p.upstream);
            s.set_flat(&minus).unwrap();
            let f_minus = dot(&scalar_forward(&p.def, &s, &p.x, &masks).0, &p.upstream);
            let fd = (f_plus - f_minus) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        prop_assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn forward_matches_scalar_oracle(p in probe()) {
        let mut state = init_network(&p.def, 0).unwrap();
        state.set_flat(&p.params).unwrap();
        let masks = MaskSet::draw(&p.def, &mut MaskSource::new(p.mask_seed)).unwrap();
        let fast = forward(&state, &p.def, &p.x, &masks).unwrap();
        let (slow, _) = scalar_forward(&p.def, &state, &p.x, &masks);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn bias_free_linear_networks_are_homogeneous(
        seed in any::<u64>(),
        widths in prop::collection::vec(1usize..=8, 1..=3),
        alpha in -5.0f64..5.0,
        x in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let mut layers = vec![LayerDef::Dropout(DropoutSpec::unscaled(0.3).unwrap())];
        let mut dim = 4;
        for w in widths {
            layers.push(LayerDef::Dense { in_dim: dim, out_dim: w, has_bias: false });
            dim = w;
        }
        let def = NetworkDef::new(4, layers).unwrap();
        let state = init_network(&def, seed).unwrap();
        let masks = MaskSet::draw(&def, &mut MaskSource::new(seed)).unwrap();
        let base = forward(&state, &def, &x, &masks).unwrap();
        let scaled_x: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        let scaled = forward(&state, &def, &scaled_x, &masks).unwrap();
        for (s, b) in scaled.iter().zip(&base) {
            let expected = alpha * b;
            prop_assert!((s - expected).abs() <= 1e-12 * expected.abs().max(1e-12), "{s} vs {expected}");
        }
    }
}

#[test]
fn default_mlp_forward_matches_scalar_oracle() {
    let def = NetworkDef::mlp(&[64, 64], DropoutSpec::unscaled(0.2).unwrap(), true).unwrap();
    let state = init_network(&def, 31).unwrap();
    let masks = MaskSet::draw(&def, &mut MaskSource::new(5)).unwrap();
    for x in [0.0, 0.25, 0.9] {
        let fast = forward(&state, &def, &[x], &masks).unwrap()[0];
        let (slow, _) = scalar_forward(&def, &state, &[x], &masks);
        assert!((fast - slow[0]).abs() < 1e-12, "x={x}: {fast} vs {}", slow[0]);
    }
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let def = NetworkDef::mlp(&[16, 16], DropoutSpec::unscaled(0.5).unwrap(), false).unwrap();
    let state = init_network(&def, 3).unwrap();
    let masks = MaskSet::draw(&def, &mut MaskSource::new(8)).unwrap();
    let a = forward(&state, &def, &[0.4], &masks).unwrap();
    let b = forward(&state, &def, &[0.4], &masks).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
    let ga = backward(&state, &def, &[0.4], &masks, &[1.0]).unwrap();
    let gb = backward(&state, &def, &[0.4], &masks, &[1.0]).unwrap();
    let bits = |g: &mcd_core::Gradient| g.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ga), bits(&gb));
}

#[test]
fn dropped_units_get_zero_gradient() {
    let def = NetworkDef::single_layer(6, DropoutSpec::unscaled(0.5).unwrap()).unwrap();
    let state = init_network(&def, 1).unwrap();
    let mask = vec![1, 0, 1, 0, 0, 1];
    let g = backward(&state, &def, &[1.0; 6], &MaskSet(vec![mask.clone()]), &[1.0]).unwrap();
    for (k, &bit) in mask.iter().enumerate() {
        assert_eq!(g.layers[0].weight[[0, k]], f64::from(bit));
    }
}

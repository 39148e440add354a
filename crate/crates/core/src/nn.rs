//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! A network is an ordered list of [`LayerDef`]s (dense, ReLU, dropout) plus the
//! trainable [`NetworkState`]. Evaluation works on batches: row `b` of the input
//! matrix is one sample, and each dropout layer gets its own row of mask factors
//! for that sample. The single-sample [`forward`] and [`backward`] wrap the batch
//! path with a batch of one.
//!
//! Weight matrices are `(out_dim, in_dim)`, row-major.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{DropoutSpec, MaskSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDef {
    Dense {
        in_dim: usize,
        out_dim: usize,
        has_bias: bool,
    },
    Relu,
    Dropout(DropoutSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDef {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerDef>,
}

impl NetworkDef {
    /// Builds a definition from `layers`, inferring the output dimension.
    pub fn new(input_dim: usize, layers: Vec<LayerDef>) -> Result<Self> {
        let mut dim = input_dim;
        for layer in &layers {
            if let LayerDef::Dense { out_dim, .. } = layer {
                dim = *out_dim;
            }
        }
        let def = Self {
            input_dim,
            output_dim: dim,
            layers,
        };
        def.validate()?;
        Ok(def)
    }

    /// `K` units with constant input, one dropout layer, and a bias-free
    /// `K -> 1` dense layer: `f = sum_k d_k w_k`.
    pub fn single_layer(units: usize, dropout: DropoutSpec) -> Result<Self> {
        Self::new(
            units,
            vec![
                LayerDef::Dropout(dropout),
                LayerDef::Dense {
                    in_dim: units,
                    out_dim: 1,
                    has_bias: false,
                },
            ],
        )
    }

    /// Scalar-in, scalar-out MLP: each hidden block is dense (with bias), ReLU,
    /// dropout; the final dense layer maps to one output with an optional bias.
    pub fn mlp(hidden: &[usize], dropout: DropoutSpec, last_bias: bool) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("network", "mlp needs at least one hidden layer"));
        }
        let mut layers = Vec::with_capacity(hidden.len() * 3 + 1);
        let mut prev = 1;
        for &width in hidden {
            layers.push(LayerDef::Dense {
                in_dim: prev,
                out_dim: width,
                has_bias: true,
            });
            layers.push(LayerDef::Relu);
            layers.push(LayerDef::Dropout(dropout));
            prev = width;
        }
        layers.push(LayerDef::Dense {
            in_dim: prev,
            out_dim: 1,
            has_bias: last_bias,
        });
        Self::new(1, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network", "at least one layer is required"));
        }
        if self.input_dim == 0 {
            return Err(Error::invalid("network", "input_dim must be positive"));
        }
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerDef::Dense { in_dim, out_dim, .. } => {
                    if *in_dim == 0 || *out_dim == 0 {
                        return Err(Error::invalid(
                            format!("layer {i} (dense)"),
                            "dimensions must be positive",
                        ));
                    }
                    if *in_dim != dim {
                        return Err(Error::invalid(
                            format!("layer {i} (dense)"),
                            format!("expects input width {in_dim} but receives {dim}"),
                        ));
                    }
                    dim = *out_dim;
                }
                LayerDef::Relu => {}
                LayerDef::Dropout(spec) => spec.validate().map_err(|e| {
                    Error::invalid(format!("layer {i} (dropout)"), e.to_string())
                })?,
            }
        }
        if dim != self.output_dim {
            return Err(Error::invalid(
                "network",
                format!("declared output_dim {} but layers produce {dim}", self.output_dim),
            ));
        }
        Ok(())
    }

    /// Width seen by each dropout layer, in layer order.
    pub fn dropout_widths(&self) -> Vec<(DropoutSpec, usize)> {
        let mut dim = self.input_dim;
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerDef::Dense { out_dim, .. } => dim = *out_dim,
                LayerDef::Relu => {}
                LayerDef::Dropout(spec) => out.push((*spec, dim)),
            }
        }
        out
    }

    pub fn dense_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDef::Dense { .. }))
            .count()
    }

    /// Same architecture with every dropout rate replaced by `p_d`.
    pub fn with_dropout_rate(&self, p_d: f64) -> Result<Self> {
        let mut def = self.clone();
        for layer in &mut def.layers {
            if let LayerDef::Dropout(spec) = layer {
                spec.p_d = p_d;
            }
        }
        def.validate()?;
        Ok(def)
    }
}

/// Weight matrix and optional bias of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DenseRepr", try_from = "DenseRepr")]
pub struct DenseParams {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

impl From<DenseParams> for DenseRepr {
    fn from(p: DenseParams) -> Self {
        DenseRepr {
            in_dim: p.weight.ncols(),
            out_dim: p.weight.nrows(),
            weight: p.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
            bias: p.bias.map(|b| b.to_vec()),
        }
    }
}

impl TryFrom<DenseRepr> for DenseParams {
    type Error = String;

    fn try_from(r: DenseRepr) -> Result<Self, String> {
        if r.weight.len() != r.out_dim || r.weight.iter().any(|row| row.len() != r.in_dim) {
            return Err(format!(
                "weight rows do not form a {}x{} matrix",
                r.out_dim, r.in_dim
            ));
        }
        let flat: Vec<f64> = r.weight.into_iter().flatten().collect();
        let weight = Array2::from_shape_vec((r.out_dim, r.in_dim), flat).map_err(|e| e.to_string())?;
        let bias = match r.bias {
            Some(b) if b.len() != r.out_dim => {
                return Err(format!("bias has {} entries, expected {}", b.len(), r.out_dim))
            }
            Some(b) => Some(Array1::from(b)),
            None => None,
        };
        Ok(DenseParams { weight, bias })
    }
}

impl DenseParams {
    fn zeros(in_dim: usize, out_dim: usize, has_bias: bool) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: has_bias.then(|| Array1::zeros(out_dim)),
        }
    }

    fn zeros_like(other: &DenseParams) -> Self {
        Self::zeros(other.weight.ncols(), other.weight.nrows(), other.bias.is_some())
    }

    fn same_shape(&self, other: &DenseParams) -> bool {
        self.weight.dim() == other.weight.dim()
            && self.bias.as_ref().map(|b| b.len()) == other.bias.as_ref().map(|b| b.len())
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter().flatten())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut().flatten())
    }
}

/// Trainable parameters, one [`DenseParams`] per dense layer in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub layers: Vec<DenseParams>,
    pub seed: u64,
}

/// Parameter-shaped gradient of a scalar with respect to a [`NetworkState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub layers: Vec<DenseParams>,
}

macro_rules! flat_access {
    ($ty:ty) => {
        impl $ty {
            pub fn num_params(&self) -> usize {
                self.layers.iter().map(|l| l.values().count()).sum()
            }

            /// Parameters in layer order; each layer is its weights (row-major) then its bias.
            pub fn to_flat(&self) -> Vec<f64> {
                self.layers.iter().flat_map(|l| l.values().copied()).collect()
            }

            pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
                if values.len() != self.num_params() {
                    return Err(Error::invalid(
                        "parameter vector",
                        format!("expected {} values, got {}", self.num_params(), values.len()),
                    ));
                }
                let mut it = values.iter();
                for layer in &mut self.layers {
                    for v in layer.values_mut() {
                        *v = *it.next().expect("length checked");
                    }
                }
                Ok(())
            }

            /// Name of the first layer holding a non-finite value, if any.
            pub fn first_non_finite(&self) -> Option<String> {
                self.layers
                    .iter()
                    .position(|l| l.values().any(|v| !v.is_finite()))
                    .map(|i| format!("dense layer {i}"))
            }
        }
    };
}

flat_access!(NetworkState);
flat_access!(Gradient);

impl NetworkState {
    /// Checks that parameter shapes agree with `def`.
    pub fn check_against(&self, def: &NetworkDef) -> Result<()> {
        let dense: Vec<_> = def
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerDef::Dense {
                    in_dim,
                    out_dim,
                    has_bias,
                } => Some((*in_dim, *out_dim, *has_bias)),
                _ => None,
            })
            .collect();
        if dense.len() != self.layers.len() {
            return Err(Error::invalid(
                "network state",
                format!(
                    "has {} dense layers, definition has {}",
                    self.layers.len(),
                    dense.len()
                ),
            ));
        }
        for (i, ((in_dim, out_dim, has_bias), p)) in dense.iter().zip(&self.layers).enumerate() {
            let ok = p.weight.dim() == (*out_dim, *in_dim)
                && p.bias.as_ref().map(|b| b.len()) == has_bias.then_some(*out_dim);
            if !ok {
                return Err(Error::invalid(
                    format!("network state, dense layer {i}"),
                    "parameter shape does not match the definition",
                ));
            }
        }
        Ok(())
    }
}

impl Gradient {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            layers: state.layers.iter().map(DenseParams::zeros_like).collect(),
        }
    }

    pub fn congruent_with(&self, state: &NetworkState) -> bool {
        self.layers.len() == state.layers.len()
            && self.layers.iter().zip(&state.layers).all(|(g, p)| g.same_shape(p))
    }
}

/// Weights uniform in `±sqrt(1/fan_in)`, biases zero; deterministic in `seed`.
pub fn init_network(def: &NetworkDef, seed: u64) -> Result<NetworkState> {
    def.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(def.dense_count());
    for layer in &def.layers {
        if let LayerDef::Dense {
            in_dim,
            out_dim,
            has_bias,
        } = *layer
        {
            let bound = (1.0 / in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::invalid("initializer", e.to_string()))?;
            let mut p = DenseParams::zeros(in_dim, out_dim, has_bias);
            p.weight.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            layers.push(p);
        }
    }
    Ok(NetworkState { layers, seed })
}

/// One binary mask per dropout layer, for single-sample evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet(pub Vec<Vec<u8>>);

impl MaskSet {
    pub fn ones(def: &NetworkDef) -> Self {
        MaskSet(def.dropout_widths().iter().map(|(_, w)| vec![1; *w]).collect())
    }

    pub fn draw(def: &NetworkDef, source: &mut MaskSource) -> Result<Self> {
        def.dropout_widths()
            .iter()
            .map(|(spec, w)| source.draw_mask(spec, *w))
            .collect::<Result<Vec<_>>>()
            .map(MaskSet)
    }

    /// One `(1, width)` factor row per dropout layer, for [`forward_batch`].
    pub fn to_factors(&self, def: &NetworkDef) -> Result<Vec<Array2<f64>>> {
        let widths = def.dropout_widths();
        if widths.len() != self.0.len() {
            return Err(Error::invalid(
                "mask set",
                format!("{} masks for {} dropout layers", self.0.len(), widths.len()),
            ));
        }
        widths
            .iter()
            .zip(&self.0)
            .enumerate()
            .map(|(i, ((spec, w), mask))| {
                if mask.len() != *w {
                    return Err(Error::invalid(
                        format!("mask {i}"),
                        format!("length {} does not match layer width {w}", mask.len()),
                    ));
                }
                let kept = spec.kept_factor();
                mask.iter()
                    .map(|&m| match m {
                        0 => Ok(0.0),
                        1 => Ok(kept),
                        other => Err(Error::invalid(format!("mask {i}"), format!("entry {other} is not binary"))),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|v| Array2::from_shape_vec((1, *w), v).expect("row vector"))
            })
            .collect()
    }
}

/// Activations recorded by [`forward_batch`] for use by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `acts[0]` is the input; `acts[i + 1]` is the output of layer `i`.
    acts: Vec<Array2<f64>>,
    masks: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("tape holds the input")
    }

    /// Input of layer `i`.
    pub fn layer_input(&self, i: usize) -> &Array2<f64> {
        &self.acts[i]
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.acts.pop().expect("tape holds the input")
    }
}

/// Evaluates a batch. `masks[j]` holds the per-sample mask factors of the
/// `j`-th dropout layer, shaped `(batch, width)`.
pub fn forward_batch(
    state: &NetworkState,
    def: &NetworkDef,
    input: ArrayView2<f64>,
    masks: Vec<Array2<f64>>,
) -> Result<Tape> {
    let batch = input.nrows();
    if input.ncols() != def.input_dim {
        return Err(Error::invalid(
            "input",
            format!("width {} does not match input_dim {}", input.ncols(), def.input_dim),
        ));
    }
    let widths = def.dropout_widths();
    if masks.len() != widths.len()
        || masks
            .iter()
            .zip(&widths)
            .any(|(m, (_, w))| m.dim() != (batch, *w))
    {
        return Err(Error::invalid("masks", "one (batch x width) mask per dropout layer is required"));
    }
    let mut acts = Vec::with_capacity(def.layers.len() + 1);
    acts.push(input.to_owned());
    let mut dense_idx = 0;
    let mut mask_idx = 0;
    for (i, layer) in def.layers.iter().enumerate() {
        let prev = acts.last().expect("nonempty");
        let next = match layer {
            LayerDef::Dense { .. } => {
                let p = &state.layers[dense_idx];
                dense_idx += 1;
                let mut out = prev.dot(&p.weight.t());
                if let Some(b) = &p.bias {
                    out += b;
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericOverflow {
                        location: format!("output of layer {i} (dense)"),
                    });
                }
                out
            }
            LayerDef::Relu => prev.mapv(|v| v.max(0.0)),
            LayerDef::Dropout(_) => {
                let out = prev * &masks[mask_idx];
                mask_idx += 1;
                out
            }
        };
        acts.push(next);
    }
    Ok(Tape { acts, masks })
}

/// Exact gradient of `sum_b upstream[b] . output[b]` with respect to all
/// parameters, given the activations of the matching forward pass.
pub fn backward_batch(
    state: &NetworkState,
    def: &NetworkDef,
    tape: &Tape,
    upstream: ArrayView2<f64>,
) -> Result<Gradient> {
    if upstream.dim() != tape.output().dim() {
        return Err(Error::invalid(
            "upstream gradient",
            format!("shape {:?} does not match output {:?}", upstream.dim(), tape.output().dim()),
        ));
    }
    let first_dense = def
        .layers
        .iter()
        .position(|l| matches!(l, LayerDef::Dense { .. }))
        .expect("validated network has a dense layer");
    let mut grads: Vec<Option<DenseParams>> = vec![None; state.layers.len()];
    let mut dense_idx = state.layers.len();
    let mut mask_idx = tape.masks.len();
    let mut g = upstream.to_owned();
    for (i, layer) in def.layers.iter().enumerate().rev() {
        match layer {
            LayerDef::Dense { .. } => {
                dense_idx -= 1;
                let p = &state.layers[dense_idx];
                let input = &tape.acts[i];
                let weight = g.t().dot(input);
                let bias = p.bias.as_ref().map(|_| g.sum_axis(Axis(0)));
                grads[dense_idx] = Some(DenseParams { weight, bias });
                if i == first_dense {
                    break;
                }
                g = g.dot(&p.weight);
            }
            LayerDef::Relu => {
                g.zip_mut_with(&tape.acts[i + 1], |gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            LayerDef::Dropout(_) => {
                mask_idx -= 1;
                g *= &tape.masks[mask_idx];
            }
        }
    }
    Ok(Gradient {
        layers: grads
            .into_iter()
            .map(|g| g.expect("every dense layer visited"))
            .collect(),
    })
}

fn single_row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row vector")
}

/// Single-sample forward pass with explicit masks.
pub fn forward(state: &NetworkState, def: &NetworkDef, x: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    let factors = masks.to_factors(def)?;
    let tape = forward_batch(state, def, single_row(x), factors)?;
    Ok(tape.into_output().into_raw_vec_and_offset().0)
}

/// Single-sample forward pass with masks drawn from `source`.
pub fn forward_sampled(
    state: &NetworkState,
    def: &NetworkDef,
    x: &[f64],
    source: &mut MaskSource,
) -> Result<Vec<f64>> {
    let masks = MaskSet::draw(def, source)?;
    forward(state, def, x, &masks)
}

/// Single-sample gradient of `upstream . forward(x)`.
pub fn backward(
    state: &NetworkState,
    def: &NetworkDef,
    x: &[f64],
    masks: &MaskSet,
    upstream: &[f64],
) -> Result<Gradient> {
    state.check_against(def)?;
    let factors = masks.to_factors(def)?;
    let tape = forward_batch(state, def, single_row(x), factors)?;
    backward_batch(state, def, &tape, single_row(upstream))
}

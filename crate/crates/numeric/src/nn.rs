//! Layers and losses built on [`Graph`].

use rand::Rng;

use crate::array::Array;
use crate::error::{shape_err, NumericError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `N(0, 1/fan_in)` weights scaled by the given gain, zero bias.
    Scaled(f64),
    /// All weights and biases zero.
    Zero,
}

/// Fully connected stack: ReLU on hidden layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    dims: Vec<usize>,
}

impl Mlp {
    /// Registers weights `{prefix}.{i}.w` and `{prefix}.{i}.b`. `dims` lists
    /// the input width followed by every layer's output width.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_output_init(store, prefix, dims, Init::Scaled(1.0), rng)
    }

    pub fn with_output_init(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        output_init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NumericError::Invalid("an MLP needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = i + 2 == dims.len();
            let init = if last { output_init } else { Init::Scaled(2.0f64.sqrt()) };
            let std = match init {
                Init::Scaled(gain) => gain / (fan_in.max(1) as f64).sqrt(),
                Init::Zero => 0.0,
            };
            let w = store.add_normal(format!("{prefix}.{i}.w"), &[fan_in, fan_out], std, rng)?;
            let b = store.add(format!("{prefix}.{i}.b"), Array::zeros(&[1, fan_out]))?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            dims: dims.to_vec(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the stack row-wise to `input[rows, input_dim]`.
    pub fn apply(&self, g: &mut Graph<'_>, input: Var) -> Result<Var> {
        let cols = g.value(input).cols();
        if cols != self.input_dim() {
            return Err(shape_err(
                "mlp_apply",
                format!("input width {cols}, expected {}", self.input_dim()),
            ));
        }
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(w);
            let bv = g.param(b);
            h = g.matmul(h, wv)?;
            h = g.add_row(h, bv)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Row-wise softmax of `queries · keysᵀ / scale`, shaped `m x k`.
pub fn attention(g: &mut Graph<'_>, keys: Var, queries: Var, scale: f64) -> Result<Var> {
    let s = attention_logits(g, keys, queries, scale)?;
    Ok(g.softmax_rows(s))
}

/// The pre-softmax attention table `queries · keysᵀ / scale`.
pub fn attention_logits(g: &mut Graph<'_>, keys: Var, queries: Var, scale: f64) -> Result<Var> {
    let (kd, qd) = (g.value(keys).cols(), g.value(queries).cols());
    if kd != qd {
        return Err(shape_err("attention", format!("key dim {kd} vs query dim {qd}")));
    }
    if !(scale > 0.0) {
        return Err(NumericError::Invalid(format!("attention scale {scale}")));
    }
    let kt = g.transpose(keys);
    let s = g.matmul(queries, kt)?;
    Ok(g.scale(s, 1.0 / scale))
}

/// Draws standard Gumbel noise with the shape of `like`.
pub fn gumbel_noise(shape: &[usize], rng: &mut impl Rng) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Array::new(shape.to_vec(), data).expect("length matches")
}

/// Gumbel-softmax over each row of `logits`.
///
/// With `rng = None` no noise is added, so the hard output is the plain
/// argmax. With `hard` the forward value is one-hot and gradients flow
/// through the soft relaxation (straight-through).
pub fn gumbel_softmax_st<R: Rng>(
    g: &mut Graph<'_>,
    logits: Var,
    temperature: f64,
    rng: Option<&mut R>,
    hard: bool,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(NumericError::Invalid(format!("temperature {temperature}")));
    }
    if !g.value(logits).is_finite() {
        return Err(NumericError::NonFinite("gumbel_softmax logits"));
    }
    let noisy = match rng {
        Some(rng) => {
            let (m, n) = g.value(logits).dims2();
            let noise = g.constant(gumbel_noise(&[m, n], rng));
            g.add(logits, noise)?
        }
        None => logits,
    };
    let scaled = g.scale(noisy, 1.0 / temperature);
    let soft = g.softmax_rows(scaled);
    Ok(if hard { g.straight_through(soft) } else { soft })
}

pub fn mse_loss(g: &mut Graph<'_>, pred: Var, target: &Array) -> Result<Var> {
    g.mse_const(pred, target)
}

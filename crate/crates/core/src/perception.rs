//! Slot autoencoder: a shared per-object encoder over mask-isolated images
//! and a per-pixel broadcast decoder whose masks are normalized across
//! slots.
//!
//! Images inside the networks are `[H·W, 3]` arrays (pixel rows in raster
//! order, RGB columns). Masks are `[k, H·W]`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wm_numeric::{Array, Graph, Mlp, ParamId, ParamStore, Var};

use crate::env::{Frame, RenderConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub image_size: usize,
    pub d_slot: usize,
    /// Output channels of the three 2x2 space-to-depth stages.
    pub encoder_channels: Vec<usize>,
    pub decoder_hidden: usize,
    /// Hidden layers after the broadcast layer.
    pub decoder_layers: usize,
}

impl PerceptionConfig {
    pub fn new(image_size: usize) -> Self {
        Self {
            image_size,
            d_slot: 64,
            encoder_channels: vec![16, 32, 32],
            decoder_hidden: 32,
            decoder_layers: 2,
        }
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }
}

/// One frame in network layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub image: Array,
    pub masks: Array,
}

impl FrameInput {
    pub fn k(&self) -> usize {
        self.masks.rows()
    }
}

/// `3 x H x W` to `[H·W, 3]`.
pub fn to_hwc(image: &Array) -> Array {
    let n = image.len() / 3;
    let d = image.data();
    let mut out = Vec::with_capacity(image.len());
    for p in 0..n {
        out.extend([d[p], d[n + p], d[2 * n + p]]);
    }
    Array::new(vec![n, 3], out).expect("length")
}

pub fn frame_input(image: &Array, masks: &[Array]) -> FrameInput {
    let hw = image.len() / 3;
    let mut m = Vec::with_capacity(masks.len() * hw);
    for mask in masks {
        m.extend_from_slice(mask.data());
    }
    FrameInput {
        image: to_hwc(image),
        masks: Array::new(vec![masks.len(), hw], m).expect("mask sizes"),
    }
}

impl From<&Frame> for FrameInput {
    fn from(f: &Frame) -> Self {
        frame_input(&f.image, &f.masks)
    }
}

/// Stacks `mask_i ⊙ image` for every slot: `[k·H·W, 3]`.
pub fn masked_batch(input: &FrameInput) -> Result<Array> {
    let (hw, c) = input.image.dims2();
    if input.masks.cols() != hw || c != 3 {
        return Err(Error::Model(format!(
            "mask width {} does not match image of {hw} pixels",
            input.masks.cols()
        )));
    }
    let k = input.k();
    let mut out = Vec::with_capacity(k * hw * 3);
    for i in 0..k {
        let m = input.masks.row_slice(i);
        for (p, &w) in m.iter().enumerate() {
            let px = input.image.row_slice(p);
            out.extend([px[0] * w, px[1] * w, px[2] * w]);
        }
    }
    Ok(Array::new(vec![k * hw, 3], out)?)
}

#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// Per-slot RGB (linear output), `[k·H·W, 3]`.
    pub rgb: Var,
    /// Mask logits, `[k, H·W]`.
    pub logits: Var,
    /// Softmax of the logits across slots, `[k, H·W]`.
    pub masks: Var,
}

#[derive(Clone, Debug)]
pub struct SlotAutoencoder {
    pub cfg: PerceptionConfig,
    enc: Vec<(ParamId, ParamId)>,
    head: Mlp,
    dec_slot: ParamId,
    dec_coord: ParamId,
    dec_bias: ParamId,
    dec_rest: Mlp,
    coords: Array,
}

impl SlotAutoencoder {
    pub fn new(store: &mut ParamStore, cfg: PerceptionConfig, rng: &mut impl Rng) -> Result<Self> {
        let n = cfg.image_size;
        if n == 0 || n % 8 != 0 || cfg.encoder_channels.len() != 3 {
            return Err(Error::Config(format!(
                "image size {n} must be a positive multiple of 8 with three encoder stages"
            )));
        }
        let mut enc = Vec::new();
        let mut c_in = 3;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            let fan_in = 4 * c_in;
            let w = store.add_normal(format!("enc.{i}.w"), &[fan_in, c], (2.0 / fan_in as f64).sqrt(), rng)?;
            let b = store.add(format!("enc.{i}.b"), Array::zeros(&[1, c]))?;
            enc.push((w, b));
            c_in = c;
        }
        let flat = (n / 8) * (n / 8) * c_in;
        let head = Mlp::new(store, "enc.head", &[flat, cfg.d_slot], rng)?;
        let h = cfg.decoder_hidden;
        let fan_in = cfg.d_slot + 2;
        let std = (2.0 / fan_in as f64).sqrt();
        let dec_slot = store.add_normal("dec.slot.w", &[cfg.d_slot, h], std, rng)?;
        let dec_coord = store.add_normal("dec.coord.w", &[2, h], std, rng)?;
        let dec_bias = store.add("dec.b", Array::zeros(&[1, h]))?;
        let mut dims = vec![h; cfg.decoder_layers + 1];
        dims.push(4);
        let dec_rest = Mlp::new(store, "dec.mlp", &dims, rng)?;
        let mut coords = Vec::with_capacity(n * n * 2);
        let ramp = |i: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
        for y in 0..n {
            for x in 0..n {
                coords.extend([ramp(x), ramp(y)]);
            }
        }
        Ok(Self {
            cfg,
            enc,
            head,
            dec_slot,
            dec_coord,
            dec_bias,
            dec_rest,
            coords: Array::new(vec![n * n, 2], coords)?,
        })
    }

    /// Encodes `k` stacked images `[k·H·W, 3]` into `[k, d_slot]`.
    pub fn encode(&self, g: &mut Graph<'_>, images: Var, k: usize) -> Result<Var> {
        let n = self.cfg.image_size;
        if g.value(images).rows() != k * n * n {
            return Err(Error::Model(format!(
                "encoder expects {} rows, got {}",
                k * n * n,
                g.value(images).rows()
            )));
        }
        let mut h = images;
        let mut side = n;
        for &(w, b) in &self.enc {
            h = g.patchify(h, k, side, side)?;
            side /= 2;
            let wv = g.param(w);
            let bv = g.param(b);
            h = g.matmul(h, wv)?;
            h = g.add_row(h, bv)?;
            h = g.relu(h);
        }
        let cols = g.value(h).len() / k.max(1);
        let flat = g.reshape(h, k, cols)?;
        Ok(self.head.apply(g, flat)?)
    }

    /// Slot `i` encodes `mask_i ⊙ image`.
    pub fn extract_entities(&self, g: &mut Graph<'_>, input: &FrameInput) -> Result<Var> {
        if input.image.rows() != self.cfg.pixels() {
            return Err(Error::Model(format!(
                "image has {} pixels, model expects {}",
                input.image.rows(),
                self.cfg.pixels()
            )));
        }
        let batch = g.constant(masked_batch(input)?);
        self.encode(g, batch, input.k())
    }

    pub fn decode(&self, g: &mut Graph<'_>, slots: Var) -> Result<Decoded> {
        let (k, d) = g.value(slots).dims2();
        if d != self.cfg.d_slot {
            return Err(Error::Model(format!("slot width {d}, decoder expects {}", self.cfg.d_slot)));
        }
        let hw = self.cfg.pixels();
        let ws = g.param(self.dec_slot);
        let wc = g.param(self.dec_coord);
        let b = g.param(self.dec_bias);
        let coords = g.constant(self.coords.clone());
        let sp = g.matmul(slots, ws)?;
        let cp = g.matmul(coords, wc)?;
        let cp = g.add_row(cp, b)?;
        let h = g.add_blocks(sp, cp)?;
        let h = g.relu(h);
        let out = self.dec_rest.apply(g, h)?;
        let rgb = g.slice_cols(out, 0, 3)?;
        let logit_col = g.slice_cols(out, 3, 1)?;
        let logits = g.reshape(logit_col, k, hw)?;
        let masks = g.softmax_cols(logits);
        Ok(Decoded { rgb, logits, masks })
    }

    /// Decodes outside any training graph, returning `(rgb, masks)` values.
    pub fn decode_values(&self, store: &ParamStore, slots: &Array) -> Result<(Array, Array)> {
        let mut g = Graph::new(store);
        let s = g.constant(slots.clone());
        let d = self.decode(&mut g, s)?;
        Ok((g.value(d.rgb).clone(), g.value(d.masks).clone()))
    }

    /// `Σ_i M′_i ⊙ I′_i` as `[H·W, 3]`.
    pub fn compose(&self, g: &mut Graph<'_>, decoded: &Decoded) -> Result<Var> {
        compose_image(g, decoded)
    }

    /// Reconstruction and its MSE against the input image.
    pub fn autoencode(&self, g: &mut Graph<'_>, input: &FrameInput) -> Result<(Var, Var)> {
        let slots = self.extract_entities(g, input)?;
        let dec = self.decode(g, slots)?;
        let recon = compose_image(g, &dec)?;
        let loss = g.mse_const(recon, &input.image)?;
        Ok((recon, loss))
    }
}

pub fn compose_image(g: &mut Graph<'_>, decoded: &Decoded) -> Result<Var> {
    let (k, hw) = g.value(decoded.masks).dims2();
    let m = g.reshape(decoded.masks, k * hw, 1)?;
    let m3 = g.concat_cols(&[m, m, m])?;
    let weighted = g.mul(m3, decoded.rgb)?;
    let per_slot = g.reshape(weighted, k, hw * 3)?;
    let summed = g.sum_cols(per_slot);
    Ok(g.reshape(summed, hw, 3)?)
}

/// Per-slot object footprint of a decoded scene: normalized mask times the
/// brightest channel of that slot's image. Background is black, so this
/// discounts pixels a slot claims only to paint background.
pub fn decoded_footprint(rgb: &Array, masks: &Array) -> Array {
    let (k, hw) = masks.dims2();
    let mut out = Vec::with_capacity(k * hw);
    for i in 0..k {
        for p in 0..hw {
            let px = rgb.row_slice(i * hw + p);
            out.push(masks.get(i, p) * px[0].max(px[1]).max(px[2]));
        }
    }
    Array::new(vec![k, hw], out).expect("length")
}

/// Expected pixel coordinates of a non-negative `size x size` map,
/// normalized to `[0, 1]` by `size - 1`.
pub fn spatial_position(map: &[f64], size: usize) -> Result<(f64, f64)> {
    if map.len() != size * size {
        return Err(Error::Model(format!("map of {} values is not {size}x{size}", map.len())));
    }
    let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (p, &m) in map.iter().enumerate() {
        if m < 0.0 || !m.is_finite() {
            return Err(Error::Model("spatial map must be finite and non-negative".into()));
        }
        mass += m;
        sx += m * (p % size) as f64;
        sy += m * (p / size) as f64;
    }
    if mass <= 0.0 {
        return Err(Error::Model("spatial map has zero mass".into()));
    }
    let norm = (size.max(2) - 1) as f64 * mass;
    Ok((sx / norm, sy / norm))
}

/// Grid cell containing a normalized position, using the renderer's cell
/// geometry so bins line up with grid cells.
pub fn position_bins(pos: (f64, f64), grid: (usize, usize), render: &RenderConfig) -> (usize, usize) {
    let (cell, ox, oy) = render.cell_geometry(grid);
    let scale = (render.size.max(2) - 1) as f64;
    let bin = |v: f64, off: usize, n: usize| {
        let c = ((v * scale - off as f64 + 0.5) / cell as f64).floor();
        c.clamp(0.0, (n - 1) as f64) as usize
    };
    (bin(pos.0, ox, grid.0), bin(pos.1, oy, grid.1))
}

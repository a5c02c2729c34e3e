//! The modular slot transition: actions are softly aligned to slots, a
//! (primary slot, rule) pair is chosen from a `k × l` attention table, a
//! contextual slot from a further `k` scores, and the chosen rule's MLPs
//! write a residual update into the primary slot only.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use wm_numeric::graph::argmax;
use wm_numeric::nn::{attention, attention_logits, gumbel_softmax_st, Init};
use wm_numeric::{Array, Graph, Mlp, ParamId, ParamStore, Var};

use crate::env::{FactoredAction, RenderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::perception::{
    compose_image, decoded_footprint, position_bins, spatial_position, FrameInput, PerceptionConfig,
    SlotAutoencoder,
};
use crate::splits::ObjectType;
use crate::symbols::{attribute_tables, ObjectView, OracleBackend, SlmBackend, SymbolEmbeddings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Symbol-keyed attention and selection, neural slot updates.
    #[serde(rename = "cosmos")]
    Cosmos,
    /// Slot-keyed attention and selection; no symbols.
    #[serde(rename = "aligned-nps")]
    AlignedNps,
    /// Symbol-keyed selection; rule MLPs read symbols instead of slots.
    #[serde(rename = "symbols-only")]
    SymbolsOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Self::Cosmos, Self::AlignedNps, Self::SymbolsOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cosmos => "cosmos",
            Self::AlignedNps => "aligned-nps",
            Self::SymbolsOnly => "symbols-only",
        }
    }

    pub fn uses_symbols(self) -> bool {
        !matches!(self, Self::AlignedNps)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionConfig {
    pub n_rules: usize,
    pub d_rule: usize,
    pub d_att: usize,
    pub d_sym: usize,
    pub rule_hidden: usize,
    pub t_steps: usize,
    pub temperature: f64,
    /// Divisor of the selection tables; `None` uses `sqrt(d_rule)`.
    pub selection_scale: Option<f64>,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            n_rules: 4,
            d_rule: 32,
            d_att: 32,
            d_sym: 16,
            rule_hidden: 64,
            t_steps: 2,
            temperature: 0.5,
            selection_scale: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTriple {
    pub p: usize,
    pub c: usize,
    pub r: usize,
}

/// Attention from slot keys to per-object action blocks.
#[derive(Clone, Debug)]
pub struct ActionAttention {
    pub proj_q: ParamId,
    pub proj_k: ParamId,
    pub d_att: usize,
}

impl ActionAttention {
    pub fn new(
        store: &mut ParamStore,
        action_dim: usize,
        key_dim: usize,
        d_att: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let proj_q = store.add_normal("act.q", &[action_dim, d_att], 1.0 / (action_dim as f64).sqrt(), rng)?;
        let proj_k = store.add_normal("act.k", &[key_dim, d_att], 1.0 / (key_dim as f64).sqrt(), rng)?;
        Ok(Self { proj_q, proj_k, d_att })
    }

    /// Soft alignment `P[slot, block]` (rows sum to one) and the aligned
    /// action per slot, `P · A`. `actions` rows are `(direction one-hot,
    /// descriptor)`; only the first four columns are aggregated.
    pub fn align(&self, g: &mut Graph<'_>, keys: Var, actions: Var) -> Result<(Var, Var)> {
        let (k, _) = g.value(keys).dims2();
        if g.value(actions).rows() != k {
            return Err(Error::Model(format!(
                "{k} slots but {} action blocks",
                g.value(actions).rows()
            )));
        }
        let wq = g.param(self.proj_q);
        let wk = g.param(self.proj_k);
        let q = g.matmul(actions, wq)?;
        let kk = g.matmul(keys, wk)?;
        let p = attention(g, q, kk, (self.d_att as f64).sqrt())?;
        let dirs = g.slice_cols(actions, 0, 4)?;
        let aligned = g.matmul(p, dirs)?;
        Ok((p, aligned))
    }
}

/// Rule embeddings with per-rule MLP pairs and the selection projections.
#[derive(Clone, Debug)]
pub struct RuleBank {
    pub rules: ParamId,
    pub key_proj: ParamId,
    pub stage2_proj: ParamId,
    pub left: Vec<Mlp>,
    pub right: Vec<Mlp>,
    pub scale: f64,
    pub temperature: f64,
}

pub struct Selection {
    pub slots: Var,
    pub triple: SelectionTriple,
    /// Stage-1 `k × l` logits.
    pub stage1: Var,
    /// Stage-2 `1 × k` logits.
    pub stage2: Var,
    /// Number of attention scores evaluated.
    pub scored: usize,
}

impl RuleBank {
    /// `key_dim`: width of the aligned keys; `read_dim`: width of the
    /// vectors the rule MLPs read for primary/contextual slots.
    pub fn new(
        store: &mut ParamStore,
        cfg: &TransitionConfig,
        key_dim: usize,
        read_dim: usize,
        d_slot: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.n_rules == 0 {
            return Err(Error::Config("at least one rule is required".into()));
        }
        let rules = store.add_normal("rules.emb", &[cfg.n_rules, cfg.d_rule], 1.0, rng)?;
        let key_proj = store.add_normal("rules.key", &[key_dim, cfg.d_rule], 1.0 / (key_dim as f64).sqrt(), rng)?;
        let stage2_proj = store.add_normal("rules.q2", &[d_slot, cfg.d_rule], 1.0 / (d_slot as f64).sqrt(), rng)?;
        let mut left = Vec::new();
        let mut right = Vec::new();
        for r in 0..cfg.n_rules {
            left.push(Mlp::new(
                store,
                &format!("rules.{r}.left"),
                &[read_dim + cfg.d_rule, cfg.rule_hidden, d_slot],
                rng,
            )?);
            right.push(Mlp::with_output_init(
                store,
                &format!("rules.{r}.right"),
                &[read_dim + d_slot, cfg.rule_hidden, d_slot],
                Init::Scaled(0.1),
                rng,
            )?);
        }
        Ok(Self {
            rules,
            key_proj,
            stage2_proj,
            left,
            right,
            scale: cfg.selection_scale.unwrap_or((cfg.d_rule as f64).sqrt()),
            temperature: cfg.temperature,
        })
    }

    pub fn n_rules(&self) -> usize {
        self.left.len()
    }

    /// Projected selection keys `[k, d_rule]` and the stage-1 table.
    pub fn stage1_logits(&self, g: &mut Graph<'_>, keys: Var) -> Result<(Var, Var)> {
        let wk = g.param(self.key_proj);
        let kp = g.matmul(keys, wk)?;
        let r = g.param(self.rules);
        let t = attention_logits(g, r, kp, self.scale)?;
        Ok((kp, t))
    }

    /// Two-stage selection and the residual update of the primary slot.
    ///
    /// `slots` are updated; `read` supplies the vectors the rule MLPs see
    /// for the primary/contextual slot (the slots themselves, or symbols);
    /// `keys` are the aligned selection keys.
    pub fn select_and_apply<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        slots: Var,
        read: Var,
        keys: Var,
        mut rng: Option<&mut R>,
        hard: bool,
    ) -> Result<Selection> {
        let (k, _) = g.value(slots).dims2();
        let l = self.n_rules();
        if g.value(keys).rows() != k || g.value(read).rows() != k {
            return Err(Error::Model("slots, read vectors and keys disagree on k".into()));
        }
        let (kp, stage1) = self.stage1_logits(g, keys)?;
        let flat = g.reshape(stage1, 1, k * l)?;
        let sel = gumbel_softmax_st(g, flat, self.temperature, rng.as_deref_mut(), hard)?;
        let best = argmax(g.value(sel).data());
        let (p, r) = (best / l, best % l);
        let table = g.reshape(sel, k, l)?;
        let ones = g.constant(Array::filled(&[l, 1], 1.0));
        let a = g.matmul(table, ones)?;
        let b = g.sum_cols(table);
        let at = g.transpose(a);
        let primary = g.matmul(at, read)?;
        let rules = g.param(self.rules);
        let rule = g.matmul(b, rules)?;
        let left_in = g.concat_cols(&[primary, rule])?;
        let s_star = self.left[r].apply(g, left_in)?;

        let wq = g.param(self.stage2_proj);
        let q2 = g.matmul(s_star, wq)?;
        let stage2 = attention_logits(g, kp, q2, self.scale)?;
        let sel2 = gumbel_softmax_st(g, stage2, self.temperature, rng.as_deref_mut(), hard)?;
        let c = argmax(g.value(sel2).data());
        let context = g.matmul(sel2, read)?;
        let right_in = g.concat_cols(&[context, s_star])?;
        let update = self.right[r].apply(g, right_in)?;
        let gate = g.slice_cols(sel, best, 1)?;
        let update = g.mul_scalar(update, gate)?;
        let delta = g.matmul(a, update)?;
        let out = g.add(slots, delta)?;
        let scored = g.value(stage1).len() + g.value(stage2).len();
        Ok(Selection {
            slots: out,
            triple: SelectionTriple { p, c, r },
            stage1,
            stage2,
            scored,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Template,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab: Vocabulary,
    pub render: RenderConfig,
    pub perception: PerceptionConfig,
    pub transition: TransitionConfig,
    pub backend: BackendKind,
}

impl ModelConfig {
    pub fn new(variant: Variant, vocab: Vocabulary, image_size: usize) -> Self {
        Self {
            variant,
            render: RenderConfig::new(image_size, &vocab),
            vocab,
            perception: PerceptionConfig::new(image_size),
            transition: TransitionConfig::default(),
            backend: BackendKind::Oracle,
        }
    }
}

/// One transition example.
pub struct StepInput<'a> {
    pub current: &'a FrameInput,
    pub action: FactoredAction,
    /// Object types in mask order; they name each action block's target.
    pub types: &'a [ObjectType],
}

pub struct StepOutput {
    pub slots: Var,
    pub next_slots: Var,
    /// Autoencoder reconstruction of the current frame, `[H·W, 3]`.
    pub recon: Var,
    /// Predicted next frame, `[H·W, 3]`.
    pub prediction: Var,
    pub triples: Vec<SelectionTriple>,
    pub symbol_indices: Vec<Vec<[usize; 4]>>,
    pub scored: usize,
}

pub struct WorldModel {
    pub cfg: ModelConfig,
    pub ae: SlotAutoencoder,
    pub symbols: SymbolEmbeddings,
    pub act: ActionAttention,
    pub bank: RuleBank,
    pub backend: Arc<dyn SlmBackend>,
}

impl WorldModel {
    /// Registers every parameter. Autoencoder parameters come first and use
    /// the same names as a standalone [`SlotAutoencoder`].
    pub fn new(store: &mut ParamStore, cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let ae = SlotAutoencoder::new(store, cfg.perception.clone(), rng)?;
        let tc = &cfg.transition;
        let symbols = SymbolEmbeddings::new(store, &cfg.vocab, tc.d_sym, rng)?;
        let d_slot = cfg.perception.d_slot;
        let key_base = if cfg.variant.uses_symbols() { symbols.width() } else { d_slot };
        let action_dim = 4 + cfg.vocab.colors.len() + cfg.vocab.shapes.len();
        let act = ActionAttention::new(store, action_dim, key_base, tc.d_att, rng)?;
        let read_dim = if cfg.variant == Variant::SymbolsOnly { symbols.width() } else { d_slot };
        let bank = RuleBank::new(store, tc, key_base + 4, read_dim, d_slot, rng)?;
        let backend: Arc<dyn SlmBackend> = match cfg.backend {
            BackendKind::Oracle => Arc::new(OracleBackend),
            BackendKind::Template => Arc::new(crate::symbols::TemplateBackend::new(cfg.render.clone())),
            BackendKind::Remote => Arc::new(crate::symbols::RemoteBackend::from_env().ok_or_else(|| {
                Error::Config(format!("{} is not set", crate::symbols::REMOTE_URL_ENV))
            })?),
        };
        if tc.t_steps == 0 {
            return Err(Error::Config("t_steps must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            ae,
            symbols,
            act,
            bank,
            backend,
        })
    }

    pub fn with_backend(mut self, backend: Arc<dyn SlmBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    /// Action blocks with target descriptors: `[k, 4 + colors + shapes]`.
    pub fn action_table(&self, action: FactoredAction, types: &[ObjectType]) -> Result<Array> {
        let k = types.len();
        if action.target >= k {
            return Err(Error::Model(format!("action target {} with {k} objects", action.target)));
        }
        let (nc, ns) = (self.cfg.vocab.colors.len(), self.cfg.vocab.shapes.len());
        let width = 4 + nc + ns;
        let mut t = vec![0.0; k * width];
        for (j, ty) in types.iter().enumerate() {
            if ty.color >= nc || ty.shape >= ns {
                return Err(Error::Model(format!("{ty:?} outside vocabulary")));
            }
            t[j * width + 4 + ty.color] = 1.0;
            t[j * width + 4 + nc + ty.shape] = 1.0;
        }
        t[action.target * width + action.direction.index()] = 1.0;
        Ok(Array::new(vec![k, width], t)?)
    }

    /// Classifies every decoded slot and returns the four logit tables.
    pub fn ground_symbols(&self, rgb: &Array, masks: &Array, types: &[ObjectType]) -> Result<[Array; 4]> {
        let (k, hw) = masks.dims2();
        let n = self.cfg.perception.image_size;
        let fp = decoded_footprint(rgb, masks);
        let mut classified = Vec::with_capacity(k);
        let mut bins = Vec::with_capacity(k);
        for i in 0..k {
            let weights = fp.row_slice(i);
            let pos = spatial_position(weights, n)
                .or_else(|_| spatial_position(masks.row_slice(i), n))
                .unwrap_or((0.5, 0.5));
            bins.push(position_bins(pos, self.cfg.vocab.grid, &self.cfg.render));
            let mut img = Vec::with_capacity(hw * 3);
            for (p, &w) in weights.iter().enumerate() {
                img.extend(rgb.row_slice(i * hw + p).iter().map(|v| v * w));
            }
            let img = Array::new(vec![hw, 3], img)?;
            let view = ObjectView {
                image: &img,
                mask: weights,
                size: n,
                truth: types.get(i).copied(),
            };
            classified.push(self.backend.classify(&view, &self.cfg.vocab)?);
        }
        attribute_tables(&classified, &bins, &self.cfg.vocab)
    }

    /// One transition from the given slots. `decoded` holds the
    /// `(rgb, masks)` values of decoding `slots`, used for grounding on the
    /// first iteration.
    pub fn transition<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        slots: Var,
        decoded: (Array, Array),
        action: FactoredAction,
        types: &[ObjectType],
        mut rng: Option<&mut R>,
        hard: bool,
    ) -> Result<(Var, Vec<SelectionTriple>, Vec<Vec<[usize; 4]>>, usize)> {
        let actions = g.constant(self.action_table(action, types)?);
        let store = g.params();
        let mut cur = slots;
        let mut dec = decoded;
        let mut triples = Vec::new();
        let mut indices = Vec::new();
        let mut scored = 0;
        let temp = self.cfg.transition.temperature;
        let steps = self.cfg.transition.t_steps;
        for t in 0..steps {
            let lambda = if self.variant().uses_symbols() {
                let tables = self.ground_symbols(&dec.0, &dec.1, types)?;
                let vars = tables.map(|a| g.constant(a));
                let s = self
                    .symbols
                    .symbolize(g, &vars, temp, rng.as_deref_mut(), hard)?;
                indices.push(s.indices);
                Some(s.vectors)
            } else {
                None
            };
            let base = lambda.unwrap_or(cur);
            let (_, aligned) = self.act.align(g, base, actions)?;
            let keys = g.concat_cols(&[base, aligned])?;
            let read = if self.variant() == Variant::SymbolsOnly { base } else { cur };
            let sel = self
                .bank
                .select_and_apply(g, cur, read, keys, rng.as_deref_mut(), hard)?;
            cur = sel.slots;
            triples.push(sel.triple);
            scored += sel.scored;
            if t + 1 < steps && self.variant().uses_symbols() {
                let v = g.value(cur).clone();
                dec = self.ae.decode_values(store, &v)?;
            }
        }
        Ok((cur, triples, indices, scored))
    }

    /// Full step: encode, reconstruct, transition, decode the prediction.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        input: &StepInput<'_>,
        rng: Option<&mut R>,
        hard: bool,
    ) -> Result<StepOutput> {
        if input.types.len() != input.current.k() {
            return Err(Error::Model("one object type per mask required".into()));
        }
        let slots = self.ae.extract_entities(g, input.current)?;
        let dec0 = self.ae.decode(g, slots)?;
        let recon = compose_image(g, &dec0)?;
        let vals = (g.value(dec0.rgb).clone(), g.value(dec0.masks).clone());
        let (next, triples, symbol_indices, scored) =
            self.transition(g, slots, vals, input.action, input.types, rng, hard)?;
        let dec1 = self.ae.decode(g, next)?;
        let prediction = compose_image(g, &dec1)?;
        Ok(StepOutput {
            slots,
            next_slots: next,
            recon,
            prediction,
            triples,
            symbol_indices,
            scored,
        })
    }

    /// Slots after one action, evaluation mode, without decoding the result.
    pub fn predict_slots(
        &self,
        store: &ParamStore,
        slots: &Array,
        action: FactoredAction,
        types: &[ObjectType],
    ) -> Result<Array> {
        let dec = if self.variant().uses_symbols() {
            self.ae.decode_values(store, slots)?
        } else {
            (Array::zeros(&[0, 3]), Array::zeros(&[0, 0]))
        };
        let mut g = Graph::new(store);
        let s = g.constant(slots.clone());
        let (next, ..) = self.transition::<rand_chacha::ChaCha8Rng>(&mut g, s, dec, action, types, None, true)?;
        Ok(g.value(next).clone())
    }

    pub fn encode_values(&self, store: &ParamStore, input: &FrameInput) -> Result<Array> {
        let mut g = Graph::new(store);
        let s = self.ae.extract_entities(&mut g, input)?;
        Ok(g.value(s).clone())
    }
}

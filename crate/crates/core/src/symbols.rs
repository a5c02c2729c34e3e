//! Symbol grounding: attribute classifiers (oracle, template matcher, remote
//! service) and the learnable value embeddings selected from their logits.

use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use wm_numeric::nn::gumbel_softmax_st;
use wm_numeric::{Array, Graph, ParamId, ParamStore, Var};

use crate::env::{footprint, ObjectSpec, RenderConfig, Vocabulary};
use crate::error::Result;
use crate::perception::{position_bins, spatial_position};
use crate::splits::ObjectType;

pub const ORACLE_LOGIT: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Timeouts, connection failures, server errors.
    #[error("retryable backend error: {0}")]
    Retryable(String),
    /// Malformed responses and protocol violations.
    #[error("fatal backend error: {0}")]
    Fatal(String),
}

/// One logit vector per non-positional attribute (color, shape).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeLogits {
    pub logits: Vec<Vec<f64>>,
}

/// A mask-isolated object as seen by a classifier.
pub struct ObjectView<'a> {
    /// `[H·W, 3]`, zero outside the object.
    pub image: &'a Array,
    /// Non-negative per-pixel object weight, `H·W` values.
    pub mask: &'a [f64],
    pub size: usize,
    /// Ground truth, available to the oracle only.
    pub truth: Option<ObjectType>,
}

pub trait SlmBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn classify(&self, view: &ObjectView<'_>, vocab: &Vocabulary) -> std::result::Result<AttributeLogits, BackendError>;
}

fn peaked(n: usize, hot: usize) -> Vec<f64> {
    (0..n).map(|i| if i == hot { ORACLE_LOGIT } else { -ORACLE_LOGIT }).collect()
}

/// Reads attributes from the scene state.
#[derive(Clone, Debug, Default)]
pub struct OracleBackend;

impl SlmBackend for OracleBackend {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn classify(&self, view: &ObjectView<'_>, vocab: &Vocabulary) -> std::result::Result<AttributeLogits, BackendError> {
        let t = view
            .truth
            .ok_or_else(|| BackendError::Fatal("oracle backend needs the scene state".into()))?;
        if t.color >= vocab.colors.len() || t.shape >= vocab.shapes.len() {
            return Err(BackendError::Fatal(format!("{t:?} outside vocabulary")));
        }
        Ok(AttributeLogits {
            logits: vec![peaked(vocab.colors.len(), t.color), peaked(vocab.shapes.len(), t.shape)],
        })
    }
}

/// Nearest palette color for color; glyph-template overlap for shape.
#[derive(Clone, Debug)]
pub struct TemplateBackend {
    pub render: RenderConfig,
    /// Logit scale: color logits are `-scale · ‖mean − prototype‖²`, shape
    /// logits `scale · IoU`.
    pub scale: f64,
}

impl TemplateBackend {
    pub fn new(render: RenderConfig) -> Self {
        Self { render, scale: 10.0 }
    }
}

impl SlmBackend for TemplateBackend {
    fn name(&self) -> &'static str {
        "template"
    }

    fn classify(&self, view: &ObjectView<'_>, vocab: &Vocabulary) -> std::result::Result<AttributeLogits, BackendError> {
        let n = view.size;
        if view.mask.len() != n * n || view.image.rows() != n * n || n != self.render.size {
            return Err(BackendError::Fatal("object view does not match the render size".into()));
        }
        let mass: f64 = view.mask.iter().sum();
        let mut mean = [0.0; 3];
        if mass > 0.0 {
            for (p, &w) in view.mask.iter().enumerate() {
                let px = view.image.row_slice(p);
                for c in 0..3 {
                    mean[c] += w * px[c];
                }
            }
            for m in &mut mean {
                *m /= mass;
            }
        }
        let color = (0..vocab.colors.len())
            .map(|c| {
                let proto = self.render.palette.get(c).copied().unwrap_or([1.0; 3]);
                -self.scale * (0..3).map(|j| (mean[j] - proto[j]).powi(2)).sum::<f64>()
            })
            .collect();
        let binary: Vec<bool> = view.mask.iter().map(|&m| m > 0.5).collect();
        let shape = match spatial_position(view.mask, n) {
            Ok(pos) => {
                let (cx, cy) = position_bins(pos, vocab.grid, &self.render);
                (0..vocab.shapes.len())
                    .map(|s| {
                        let glyph = footprint(&ObjectSpec::new(0, s, cx, cy), vocab.grid, &self.render);
                        let mut inter = 0usize;
                        for &(x, y) in &glyph {
                            inter += binary[y * n + x] as usize;
                        }
                        let union = glyph.len() + binary.iter().filter(|&&b| b).count() - inter;
                        self.scale * if union == 0 { 0.0 } else { inter as f64 / union as f64 }
                    })
                    .collect()
            }
            Err(_) => vec![0.0; vocab.shapes.len()],
        };
        Ok(AttributeLogits {
            logits: vec![color, shape],
        })
    }
}

#[derive(Serialize)]
struct RemoteAttribute<'a> {
    name: &'a str,
    values: &'a [String],
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    image: String,
    attributes: Vec<RemoteAttribute<'a>>,
}

#[derive(Deserialize)]
struct RemoteResponse {
    logits: Vec<Vec<f64>>,
}

/// HTTP classifier: `POST {base}/classify`.
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    pub retries: usize,
    pub backoff: Duration,
    in_flight: (Mutex<usize>, Condvar),
    pub max_in_flight: usize,
}

pub const REMOTE_URL_ENV: &str = "COSMOS_REMOTE_SLM_URL";

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(2))
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).max_idle_connections(8).build(),
            retries: 3,
            backoff: Duration::from_millis(100),
            in_flight: (Mutex::new(0), Condvar::new()),
            max_in_flight: 8,
        }
    }

    /// Blocks until fewer than `max_in_flight` requests are open.
    fn acquire(&self) {
        let (lock, cv) = &self.in_flight;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max_in_flight.max(1) {
            n = cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
    }

    fn release(&self) {
        let (lock, cv) = &self.in_flight;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        cv.notify_one();
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(REMOTE_URL_ENV).ok().filter(|s| !s.is_empty()).map(Self::new)
    }

    fn attempt(&self, body: &str, vocab: &Vocabulary) -> std::result::Result<AttributeLogits, BackendError> {
        let url = format!("{}/classify", self.base_url);
        let resp = match self
            .agent
            .post(&url)
            .set("Content-Type", "application/json")
            .send_string(body)
        {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
                return Err(BackendError::Retryable(format!("status {code}")))
            }
            Err(ureq::Error::Status(code, _)) => return Err(BackendError::Fatal(format!("status {code}"))),
            Err(e) => return Err(BackendError::Retryable(e.to_string())),
        };
        let mut text = String::new();
        resp.into_reader()
            .take(1 << 20)
            .read_to_string(&mut text)
            .map_err(|e| BackendError::Retryable(e.to_string()))?;
        let parsed: RemoteResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))?;
        let expect = [vocab.colors.len(), vocab.shapes.len()];
        if parsed.logits.len() != 2
            || parsed.logits.iter().zip(expect).any(|(l, n)| l.len() != n)
            || parsed.logits.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(BackendError::Fatal("response logits do not match the vocabulary".into()));
        }
        Ok(AttributeLogits { logits: parsed.logits })
    }
}

impl SlmBackend for RemoteBackend {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn classify(&self, view: &ObjectView<'_>, vocab: &Vocabulary) -> std::result::Result<AttributeLogits, BackendError> {
        let png = encode_png(view.image, view.size).map_err(BackendError::Fatal)?;
        let req = RemoteRequest {
            image: base64::engine::general_purpose::STANDARD.encode(png),
            attributes: vec![
                RemoteAttribute {
                    name: "color",
                    values: &vocab.colors,
                },
                RemoteAttribute {
                    name: "shape",
                    values: &vocab.shapes,
                },
            ],
        };
        let body = serde_json::to_string(&req).map_err(|e| BackendError::Fatal(e.to_string()))?;
        let mut last = None;
        for attempt in 0..=self.retries {
            self.acquire();
            let result = self.attempt(&body, vocab);
            self.release();
            match result {
                Ok(l) => return Ok(l),
                Err(BackendError::Retryable(e)) => {
                    log::warn!("remote classifier attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt < self.retries {
                        let base = self.backoff.as_secs_f64() * 2f64.powi(attempt as i32);
                        let jitter = rand::thread_rng().gen_range(0.5..1.5);
                        thread::sleep(Duration::from_secs_f64(base * jitter));
                    }
                }
                Err(fatal) => return Err(fatal),
            }
        }
        Err(BackendError::Retryable(last.unwrap_or_default()))
    }
}

/// Encodes a `[H·W, 3]` image in `[0, 1]` as an 8-bit RGB PNG.
pub fn encode_png(image: &Array, size: usize) -> std::result::Result<Vec<u8>, String> {
    if image.rows() != size * size || image.cols() != 3 {
        return Err(format!("image {:?} is not {size}x{size} RGB", image.shape()));
    }
    let bytes: Vec<u8> = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, size as u32, size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(&bytes).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Builds the four `[k, q]` logit tables (color, shape, x, y); positions
/// get the same peaked logits as the oracle on their bin.
pub fn attribute_tables(
    classified: &[AttributeLogits],
    bins: &[(usize, usize)],
    vocab: &Vocabulary,
) -> Result<[Array; 4]> {
    let k = classified.len();
    if bins.len() != k {
        return Err(crate::error::Error::Model("one position per object required".into()));
    }
    let sizes = vocab.sizes();
    let mut tables: [Vec<f64>; 4] = Default::default();
    for (c, &(bx, by)) in classified.iter().zip(bins) {
        if c.logits.len() != 2 || c.logits[0].len() != sizes[0] || c.logits[1].len() != sizes[1] {
            return Err(crate::error::Error::Model("classifier logits do not match the vocabulary".into()));
        }
        if bx >= sizes[2] || by >= sizes[3] {
            return Err(crate::error::Error::Model(format!("position bin ({bx}, {by}) out of range")));
        }
        tables[0].extend_from_slice(&c.logits[0]);
        tables[1].extend_from_slice(&c.logits[1]);
        tables[2].extend(peaked(sizes[2], bx));
        tables[3].extend(peaked(sizes[3], by));
    }
    let mut out = tables.into_iter().enumerate().map(|(a, t)| Array::new(vec![k, sizes[a]], t));
    Ok([
        out.next().expect("4")?,
        out.next().expect("4")?,
        out.next().expect("4")?,
        out.next().expect("4")?,
    ])
}

/// Learnable `(attribute, value)` embeddings.
#[derive(Clone, Debug)]
pub struct SymbolEmbeddings {
    tables: Vec<ParamId>,
    pub d_sym: usize,
    pub sizes: [usize; 4],
}

pub struct Symbols {
    /// `[k, 4·d_sym]`, attributes in canonical order.
    pub vectors: Var,
    /// Selected value index per object and attribute.
    pub indices: Vec<[usize; 4]>,
}

impl SymbolEmbeddings {
    pub fn new(store: &mut ParamStore, vocab: &Vocabulary, d_sym: usize, rng: &mut impl Rng) -> Result<Self> {
        let sizes = vocab.sizes();
        let tables = Vocabulary::ATTRIBUTES
            .iter()
            .zip(sizes)
            .map(|(name, q)| store.add_normal(format!("sym.{name}"), &[q, d_sym], 0.1, rng))
            .collect::<wm_numeric::Result<Vec<_>>>()?;
        Ok(Self { tables, d_sym, sizes })
    }

    pub fn width(&self) -> usize {
        4 * self.d_sym
    }

    pub fn table(&self, attribute: usize) -> ParamId {
        self.tables[attribute]
    }

    /// Straight-through Gumbel selection of one embedding row per attribute,
    /// concatenated in canonical order. `logits[a]` is `[k, q_a]`.
    pub fn symbolize<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        logits: &[Var; 4],
        temperature: f64,
        mut rng: Option<&mut R>,
        hard: bool,
    ) -> Result<Symbols> {
        let k = g.value(logits[0]).rows();
        let mut parts = Vec::with_capacity(4);
        let mut indices = vec![[0usize; 4]; k];
        for a in 0..4 {
            let (rows, q) = g.value(logits[a]).dims2();
            if rows != k || q != self.sizes[a] {
                return Err(crate::error::Error::Model(format!(
                    "attribute {a}: logits {rows}x{q}, expected {k}x{}",
                    self.sizes[a]
                )));
            }
            let sel = gumbel_softmax_st(g, logits[a], temperature, rng.as_deref_mut(), hard)?;
            for (i, idx) in indices.iter_mut().enumerate() {
                idx[a] = wm_numeric::graph::argmax(g.value(sel).row_slice(i));
            }
            let table = g.param(self.tables[a]);
            parts.push(g.matmul(sel, table)?);
        }
        Ok(Symbols {
            vectors: g.concat_cols(&parts)?,
            indices,
        })
    }
}

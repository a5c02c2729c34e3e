//! Autoencoder warm start, world-model training on the reconstruction
//! mixture, checkpoints, and evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wm_numeric::checkpoint::{read_checkpoint, write_checkpoint};
use wm_numeric::{Adam, AdamConfig, Array, Graph, ParamGrads, ParamStore};

use crate::dataset::Dataset;
use crate::env::RenderConfig;
use crate::error::{Error, Result};
use crate::metrics::{eq_distance, fixed_order_distance, pixel_mse, rank_of, MetricReport};
use crate::perception::{frame_input, to_hwc, FrameInput, SlotAutoencoder};
use crate::splits::ObjectType;
use crate::transition::{BackendKind, ModelConfig, StepInput, TransitionConfig, Variant, WorldModel};

/// Missing JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Maximum world-model epochs.
    pub epochs: usize,
    /// Maximum autoencoder epochs; early stopping usually ends sooner.
    pub ae_epochs: usize,
    pub batch_size: usize,
    /// Weight of the reconstruction term; `1 - lambda` weighs the
    /// next-state term.
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub patience: usize,
    pub adam: AdamConfig,
    pub ae_adam: AdamConfig,
    pub t_steps: usize,
    /// Transitions drawn per world-model epoch (all when `None`).
    pub samples_per_epoch: Option<usize>,
    /// Frames drawn per autoencoder epoch (all when `None`).
    pub ae_samples_per_epoch: Option<usize>,
    pub backend: BackendKind,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cosmos,
            epochs: 50,
            ae_epochs: 100,
            batch_size: 32,
            lambda: 0.5,
            seeds: vec![0, 1, 2],
            patience: 5,
            adam: AdamConfig::default(),
            ae_adam: AdamConfig::default(),
            t_steps: 2,
            samples_per_epoch: None,
            ae_samples_per_epoch: None,
            backend: BackendKind::Oracle,
            train_data: None,
            eval_data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 || self.t_steps == 0 {
            return Err(Error::Config("batch size and t_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        let m = &ds.manifest;
        let mut cfg = ModelConfig::new(self.variant, m.vocab.clone(), m.render.size);
        cfg.render = m.render.clone();
        cfg.transition = TransitionConfig {
            t_steps: self.t_steps,
            ..TransitionConfig::default()
        };
        cfg.backend = self.backend;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    /// Mean next-state pixel MSE over the epoch's samples (empty for
    /// autoencoder runs).
    pub mse: Option<f64>,
    pub ae_mse: f64,
    pub wall_time: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to feed one frame or transition to a model.
pub struct Sample {
    pub current: FrameInput,
    pub next_image: Array,
    pub action: crate::env::FactoredAction,
    pub types: Vec<ObjectType>,
    pub next: FrameInput,
}

pub fn frame_at(ds: &Dataset, traj: usize, t: usize) -> FrameInput {
    let f = ds.trajectories[traj].frame(t, &ds.manifest.render);
    frame_input(&f.image, &f.masks)
}

pub fn sample_at(ds: &Dataset, traj: usize, t: usize) -> Sample {
    let tr = &ds.trajectories[traj];
    let render: &RenderConfig = &ds.manifest.render;
    let cur = tr.frame(t, render);
    let nxt = tr.frame(t + 1, render);
    Sample {
        current: frame_input(&cur.image, &cur.masks),
        next_image: to_hwc(&nxt.image),
        action: cur.action,
        types: cur.state.objects.iter().map(|o| o.kind()).collect(),
        next: frame_input(&nxt.image, &nxt.masks),
    }
}

fn epoch_indices<T: Clone>(items: &[T], cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    if let Some(c) = cap {
        v.truncate(c);
    }
    v
}

/// Tracks the best loss and how long ago it improved.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub patience: usize,
    best: f64,
    since: usize,
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since: 0,
        }
    }

    /// Records an epoch loss; `true` when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }

    /// Whether the last update set a new best.
    pub fn improved(&self) -> bool {
        self.since == 0 && self.best.is_finite()
    }
}

pub struct AeRun {
    pub store: ParamStore,
    pub ae: SlotAutoencoder,
    pub log: RunLog,
}

/// Trains the slot autoencoder until the training loss stops improving for
/// `patience` epochs or `ae_epochs` is reached, and returns the parameters
/// of the best epoch.
pub fn train_autoencoder(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<AeRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mcfg = cfg.model_config(ds);
    let ae = SlotAutoencoder::new(&mut store, mcfg.perception, &mut rng)?;
    let mut adam = Adam::new(&store, cfg.ae_adam);
    let frames: Vec<(usize, usize)> = ds
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |s| (i, s)))
        .collect();
    let mut log = RunLog::default();
    let mut plateau = Plateau::new(cfg.patience);
    let mut best = store.clone();
    let start = Instant::now();
    for epoch in 1..=cfg.ae_epochs {
        let order = epoch_indices(&frames, cfg.ae_samples_per_epoch, &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::new(&store);
            for &(i, t) in batch {
                let input = frame_at(ds, i, t);
                let mut g = Graph::new(&store);
                let (_, loss) = ae.autoencode(&mut g, &input)?;
                total += g.scalar(loss);
                g.backward(loss)?.accumulate_into(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut store, &grads)?;
        }
        let mean = total / order.len().max(1) as f64;
        log.rows.push(LogRow {
            epoch,
            loss: mean,
            mse: None,
            ae_mse: mean,
            wall_time: start.elapsed().as_secs_f64(),
            seed,
        });
        log::info!("ae seed {seed} epoch {epoch}: loss {mean:.3e}");
        let stop = plateau.update(mean);
        if plateau.improved() {
            best = store.clone();
        }
        if stop {
            break;
        }
    }
    Ok(AeRun { store: best, ae, log })
}

/// Copies every array of `src` whose name also exists in `dst`. Returns
/// how many were copied.
pub fn copy_matching(src: &ParamStore, dst: &mut ParamStore) -> Result<usize> {
    let mut n = 0;
    for (_, name, value) in src.iter() {
        if let Some(id) = dst.id(name) {
            dst.set(id, value.clone())?;
            n += 1;
        }
    }
    Ok(n)
}

pub struct WmRun {
    pub store: ParamStore,
    pub model: WorldModel,
    pub log: RunLog,
}

/// Loss of one transition: `λ·AE-MSE + (1−λ)·next-MSE`. Returns the
/// graph's loss node and the two components.
pub fn mixture_loss(
    g: &mut Graph<'_>,
    model: &WorldModel,
    sample: &Sample,
    lambda: f64,
    rng: Option<&mut ChaCha8Rng>,
    hard: bool,
) -> Result<(wm_numeric::Var, f64, f64)> {
    let step = StepInput {
        current: &sample.current,
        action: sample.action,
        types: &sample.types,
    };
    let out = model.forward(g, &step, rng, hard)?;
    let ae = g.mse_const(out.recon, &sample.current.image)?;
    let next = g.mse_const(out.prediction, &sample.next_image)?;
    let (ae_v, next_v) = (g.scalar(ae), g.scalar(next));
    let a = g.scale(ae, lambda);
    let b = g.scale(next, 1.0 - lambda);
    Ok((g.add(a, b)?, ae_v, next_v))
}

/// Trains one transition variant starting from a trained autoencoder.
pub fn train_world_model(ds: &Dataset, ae_store: &ParamStore, cfg: &TrainConfig, seed: u64) -> Result<WmRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_3a7e);
    let mut store = ParamStore::new();
    let model = WorldModel::new(&mut store, cfg.model_config(ds), &mut rng)?;
    let copied = copy_matching(ae_store, &mut store)?;
    if copied != ae_store.len() {
        return Err(Error::Model(format!(
            "autoencoder checkpoint has {} arrays, {copied} match the world model",
            ae_store.len()
        )));
    }
    let mut adam = Adam::new(&store, cfg.adam);
    let transitions = ds.transitions();
    let mut log = RunLog::default();
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let order = epoch_indices(&transitions, cfg.samples_per_epoch, &mut rng);
        let (mut tl, mut ta, mut tn) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::new(&store);
            for &(i, t) in batch {
                let sample = sample_at(ds, i, t);
                let mut g = Graph::new(&store);
                let (loss, ae, next) = mixture_loss(&mut g, &model, &sample, cfg.lambda, Some(&mut rng), true)?;
                tl += g.scalar(loss);
                ta += ae;
                tn += next;
                g.backward(loss)?.accumulate_into(&mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut store, &grads)?;
        }
        let n = order.len().max(1) as f64;
        log.rows.push(LogRow {
            epoch,
            loss: tl / n,
            mse: Some(tn / n),
            ae_mse: ta / n,
            wall_time: start.elapsed().as_secs_f64(),
            seed,
        });
        log::info!(
            "{} seed {seed} epoch {epoch}: loss {:.3e} next {:.3e} ae {:.3e}",
            cfg.variant.name(),
            tl / n,
            tn / n,
            ta / n
        );
    }
    Ok(WmRun { store, model, log })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub ae_mse: f64,
    pub mrr: f64,
    pub eq_mrr: f64,
    pub transitions: usize,
    /// Pairs where the equivariant distance exceeded the fixed-order one.
    pub distance_violations: usize,
}

impl Evaluation {
    pub fn report(&self, variant: &str, seed: u64, dataset_hash: &str) -> Result<MetricReport> {
        let mut r = MetricReport::default();
        r.push("mse", self.mse, variant, seed, dataset_hash)?;
        r.push("ae_mse", self.ae_mse, variant, seed, dataset_hash)?;
        r.push("mrr", self.mrr, variant, seed, dataset_hash)?;
        r.push("eq_mrr", self.eq_mrr, variant, seed, dataset_hash)?;
        Ok(r)
    }
}

/// Evaluation-mode metrics over (up to `max_transitions`, evenly strided)
/// eval transitions. The ranking pool is every evaluated transition.
pub fn evaluate(model: &WorldModel, store: &ParamStore, ds: &Dataset, max_transitions: Option<usize>) -> Result<Evaluation> {
    let all = ds.transitions();
    let chosen: Vec<(usize, usize)> = match max_transitions {
        Some(m) if m < all.len() && m > 0 => (0..m).map(|i| all[i * all.len() / m]).collect(),
        _ => all,
    };
    let (mut mse, mut ae) = (0.0, 0.0);
    let mut preds = Vec::with_capacity(chosen.len());
    let mut targets = Vec::with_capacity(chosen.len());
    for &(i, t) in &chosen {
        let s = sample_at(ds, i, t);
        let mut g = Graph::new(store);
        let step = StepInput {
            current: &s.current,
            action: s.action,
            types: &s.types,
        };
        let out = model.forward::<ChaCha8Rng>(&mut g, &step, None, true)?;
        mse += pixel_mse(g.value(out.prediction), &s.next_image)?;
        ae += pixel_mse(g.value(out.recon), &s.current.image)?;
        preds.push(g.value(out.next_slots).clone());
        drop(g);
        targets.push(model.encode_values(store, &s.next)?);
    }
    let n = chosen.len().max(1) as f64;
    let (mrr, eq_mrr, violations) = rankings(&preds, &targets)?;
    Ok(Evaluation {
        mse: mse / n,
        ae_mse: ae / n,
        mrr,
        eq_mrr,
        transitions: chosen.len(),
        distance_violations: violations,
    })
}

/// Fixed-order and equivariant MRR over a shared pool, plus the count of
/// pairs violating `eq_distance <= fixed_order_distance`.
pub fn rankings(preds: &[Array], targets: &[Array]) -> Result<(f64, f64, usize)> {
    if preds.len() < 2 || preds.len() != targets.len() {
        return Err(Error::Model("ranking needs at least two aligned pairs".into()));
    }
    let (mut mrr, mut eq_mrr, mut violations) = (0.0, 0.0, 0);
    for (i, p) in preds.iter().enumerate() {
        let mut fixed = Vec::with_capacity(targets.len());
        let mut eq = Vec::with_capacity(targets.len());
        for t in targets {
            let f = fixed_order_distance(p, t)?;
            let e = eq_distance(p, t)?;
            if e > f + 1e-12 * f.max(1.0) {
                violations += 1;
            }
            fixed.push(f);
            eq.push(e);
        }
        mrr += 1.0 / rank_of(&fixed, i) as f64;
        eq_mrr += 1.0 / rank_of(&eq, i) as f64;
    }
    let n = preds.len() as f64;
    Ok((mrr / n, eq_mrr / n, violations))
}

pub fn save_world_model(path: &Path, run: &WmRun, seeds: &[u64]) -> Result<()> {
    let meta = serde_json::json!({
        "kind": "world-model",
        "variant": run.model.variant().name(),
        "model": run.model.cfg,
    });
    Ok(write_checkpoint(path, &run.store, seeds, meta)?)
}

pub fn save_autoencoder(path: &Path, run: &AeRun, seeds: &[u64]) -> Result<()> {
    let meta = serde_json::json!({
        "kind": "autoencoder",
        "perception": run.ae.cfg,
    });
    Ok(write_checkpoint(path, &run.store, seeds, meta)?)
}

/// Rebuilds a world model from a checkpoint written by
/// [`save_world_model`].
pub fn load_world_model(path: &Path) -> Result<(ParamStore, WorldModel, Vec<u64>)> {
    let (header, arrays) = read_checkpoint(path)?;
    if header.metadata["kind"] != "world-model" {
        return Err(Error::Model(format!("{} is not a world-model checkpoint", path.display())));
    }
    let cfg: ModelConfig = serde_json::from_value(header.metadata["model"].clone())?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = WorldModel::new(&mut store, cfg, &mut rng)?;
    wm_numeric::checkpoint::load_into(&mut store, &arrays)?;
    Ok((store, model, header.seed_lineage))
}

/// Loads autoencoder arrays by name (for warm-starting a world model).
pub fn load_autoencoder_store(path: &Path) -> Result<ParamStore> {
    let (header, arrays) = read_checkpoint(path)?;
    if header.metadata["kind"] != "autoencoder" {
        return Err(Error::Model(format!("{} is not an autoencoder checkpoint", path.display())));
    }
    let mut store = ParamStore::new();
    for (name, a) in arrays {
        store.add(name, a)?;
    }
    Ok(store)
}

//! Trajectory datasets on disk: a JSON manifest plus a byte stream holding,
//! per step, `k × (color, shape, x, y)` and `(target, direction)`. Images
//! are re-rendered on load.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{
    sample_trajectory, Direction, DynamicsMode, FactoredAction, ObjectSpec, RenderConfig,
    SceneConfig, SceneState, Trajectory, Vocabulary,
};
use crate::error::{Error, Result};
use crate::splits::{validate_scenes, Compound, Side, SplitPlan, ValidationReport};

pub const FORMAT: &str = "blockwm-trajectories/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "trajectories.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub vocab: Vocabulary,
    pub mode: DynamicsMode,
    pub k: usize,
    pub render: RenderConfig,
    pub side: Side,
    pub base_seed: u64,
    pub n_trajectories: usize,
    pub length: usize,
    pub split_hash: String,
    pub compounds: Vec<Compound>,
    pub trajectory_seeds: Vec<u64>,
    pub sticky_pairs: Vec<Option<(usize, usize)>>,
    pub data_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

/// Independent per-trajectory seed from `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(index);
    r.next_u64()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub vocab: Vocabulary,
    pub mode: DynamicsMode,
    pub k: usize,
    pub image_size: usize,
    pub n_trajectories: usize,
    pub length: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn generate(plan: &SplitPlan, side: Side, cfg: &GenerateConfig) -> Result<Self> {
        cfg.vocab.validate()?;
        let side_seed = derive_seed(cfg.seed, side as u64 + 1_000_003);
        // Compounds are drawn by cycling through a shuffled list, so every
        // compound appears once there are at least as many trajectories.
        let mut order = plan.side(side).to_vec();
        if order.is_empty() {
            return Err(Error::Config("split side has no compounds".into()));
        }
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(side_seed));
        let seeds: Vec<u64> = (0..cfg.n_trajectories as u64).map(|i| derive_seed(side_seed, i)).collect();
        let trajectories = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let scene = SceneConfig {
                    vocab: cfg.vocab.clone(),
                    k: cfg.k,
                    mode: cfg.mode,
                    compounds: vec![order[i % order.len()].clone()],
                };
                sample_trajectory(&scene, cfg.length, s)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = Manifest {
            format: FORMAT.into(),
            vocab: cfg.vocab.clone(),
            mode: cfg.mode,
            k: cfg.k,
            render: RenderConfig::new(cfg.image_size, &cfg.vocab),
            side,
            base_seed: cfg.seed,
            n_trajectories: cfg.n_trajectories,
            length: cfg.length,
            split_hash: plan.hash(),
            compounds: plan.side(side).to_vec(),
            trajectory_seeds: seeds,
            sticky_pairs: trajectories.iter().map(|t| t.states[0].sticky_pair).collect(),
            data_sha256: String::new(),
        };
        manifest.data_sha256 = hex::encode(Sha256::digest(encode(&trajectories)));
        Ok(Self {
            manifest,
            trajectories,
        })
    }

    pub fn hash(&self) -> &str {
        &self.manifest.data_sha256
    }

    /// `(trajectory, t)` for every stored transition `t -> t + 1`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        self.trajectories
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len().saturating_sub(1)).map(move |s| (i, s)))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DATA_FILE), encode(&self.trajectories))?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)
            .map_err(|e| Error::Dataset(format!("corrupt manifest in {}: {e}", dir.display())))?;
        if manifest.format != FORMAT {
            return Err(Error::Dataset(format!("unknown format {:?}", manifest.format)));
        }
        let bytes = fs::read(dir.join(DATA_FILE))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != manifest.data_sha256 {
            return Err(Error::Dataset("trajectory data does not match manifest hash".into()));
        }
        let trajectories = decode(&bytes, &manifest)?;
        for (i, t) in trajectories.iter().enumerate() {
            for s in &t.states {
                s.check(manifest.mode)
                    .map_err(|e| Error::Dataset(format!("trajectory {i}: {e}")))?;
            }
        }
        Ok(Self {
            manifest,
            trajectories,
        })
    }
}

fn encode(trajs: &[Trajectory]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in trajs {
        for (s, a) in t.states.iter().zip(&t.actions) {
            for o in &s.objects {
                out.extend([o.color as u8, o.shape as u8, o.x as u8, o.y as u8]);
            }
            out.extend([a.target as u8, a.direction.index() as u8]);
        }
    }
    out
}

fn decode(bytes: &[u8], m: &Manifest) -> Result<Vec<Trajectory>> {
    let step_len = m.k * 4 + 2;
    let expected = m.n_trajectories * m.length * step_len;
    if bytes.len() != expected || m.sticky_pairs.len() != m.n_trajectories {
        return Err(Error::Dataset(format!(
            "expected {expected} bytes for {} trajectories, found {}",
            m.n_trajectories,
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(m.n_trajectories);
    for (ti, chunk) in bytes.chunks_exact(m.length * step_len).enumerate() {
        let mut states = Vec::with_capacity(m.length);
        let mut actions = Vec::with_capacity(m.length);
        for rec in chunk.chunks_exact(step_len) {
            let objects = rec[..m.k * 4]
                .chunks_exact(4)
                .map(|b| ObjectSpec::new(b[0] as usize, b[1] as usize, b[2] as usize, b[3] as usize))
                .collect();
            states.push(SceneState {
                objects,
                sticky_pair: m.sticky_pairs[ti],
                grid: m.vocab.grid,
            });
            let target = rec[m.k * 4] as usize;
            let dir = Direction::from_index(rec[m.k * 4 + 1] as usize)
                .ok_or_else(|| Error::Dataset("bad direction byte".into()))?;
            if target >= m.k {
                return Err(Error::Dataset("action target out of range".into()));
            }
            actions.push(FactoredAction::new(target, dir));
        }
        out.push(Trajectory { states, actions });
    }
    Ok(out)
}

/// Checks a train/eval pair: the scenes must realize disjoint compounds
/// over the same atoms.
pub fn validate_split(train: &Dataset, eval: &Dataset) -> Result<ValidationReport> {
    if train.manifest.mode != eval.manifest.mode || train.manifest.vocab != eval.manifest.vocab {
        return Err(Error::Dataset("train and eval use different vocabularies or modes".into()));
    }
    let ts: Vec<&SceneState> = train.trajectories.iter().map(|t| &t.states[0]).collect();
    let es: Vec<&SceneState> = eval.trajectories.iter().map(|t| &t.states[0]).collect();
    Ok(validate_scenes(&ts, &es, train.manifest.mode))
}

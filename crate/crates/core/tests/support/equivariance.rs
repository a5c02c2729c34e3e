//! Permutation checks on the slot pipeline.

use blockwm::env::{render, Direction, FactoredAction, ObjectSpec, RenderConfig, SceneState, Vocabulary};
use blockwm::perception::{compose_image, frame_input, FrameInput};
use blockwm::splits::ObjectType;
use blockwm::transition::{ModelConfig, SelectionTriple, Variant, WorldModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wm_numeric::{Array, Graph, ParamStore};

#[derive(Debug, Default)]
pub struct Outcome {
    /// Largest deviation of the composed reconstruction.
    pub recon_dev: f64,
    /// Largest deviation of permuted symbol vectors and aligned keys.
    pub key_dev: f64,
    /// Largest deviation of permuted next slots.
    pub slot_dev: f64,
    /// Selection triples that failed to permute covariantly.
    pub triple_mismatches: usize,
    /// Largest difference between stage-1 rows of two slots with identical
    /// symbols and aligned actions.
    pub consistency_dev: f64,
    pub permutations: usize,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.recon_dev <= 1e-9
            && self.key_dev <= 1e-9
            && self.slot_dev <= 1e-9
            && self.triple_mismatches == 0
            && self.consistency_dev <= 1e-12
            && self.permutations > 0
    }
}

fn permute_rows(a: &Array, perm: &[usize]) -> Array {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| a.row_slice(i).to_vec()).collect();
    Array::from_rows(&rows).unwrap()
}

fn max_dev(a: &Array, b: &Array) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scene() -> SceneState {
    SceneState {
        objects: vec![
            ObjectSpec::new(0, 0, 1, 1),
            ObjectSpec::new(1, 2, 3, 2),
            ObjectSpec::new(2, 1, 0, 4),
            ObjectSpec::new(0, 1, 4, 0),
        ],
        sticky_pair: None,
        grid: (5, 5),
    }
}

struct Probe {
    keys: Array,
    symbols: Option<Array>,
    next: Array,
    triples: Vec<SelectionTriple>,
}

fn probe(model: &WorldModel, store: &ParamStore, input: &FrameInput, types: &[ObjectType], action: FactoredAction) -> Probe {
    let mut g = Graph::new(store);
    let slots = model.ae.extract_entities(&mut g, input).unwrap();
    let dec = model.ae.decode(&mut g, slots).unwrap();
    let vals = (g.value(dec.rgb).clone(), g.value(dec.masks).clone());
    let symbols = if model.variant().uses_symbols() {
        let tables = model.ground_symbols(&vals.0, &vals.1, types).unwrap();
        let vars = tables.map(|t| g.constant(t));
        Some(model.symbols.symbolize::<ChaCha8Rng>(&mut g, &vars, 0.5, None, true).unwrap().vectors)
    } else {
        None
    };
    let base = symbols.unwrap_or(slots);
    let actions = g.constant(model.action_table(action, types).unwrap());
    let (_, aligned) = model.act.align(&mut g, base, actions).unwrap();
    let keys = g.concat_cols(&[base, aligned]).unwrap();
    let (next, triples, ..) = model
        .transition::<ChaCha8Rng>(&mut g, slots, vals, action, types, None, true)
        .unwrap();
    Probe {
        keys: g.value(keys).clone(),
        symbols: symbols.map(|s| g.value(s).clone()),
        next: g.value(next).clone(),
        triples,
    }
}

/// Runs all checks for one variant with `n_perms` random permutations.
pub fn run(variant: Variant, n_perms: usize, seed: u64) -> Outcome {
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = WorldModel::new(&mut store, ModelConfig::new(variant, vocab.clone(), 32), &mut rng).unwrap();
    let render_cfg = RenderConfig::new(32, &vocab);
    let state = scene();
    let k = state.k();
    let mut out = Outcome::default();

    // (a) decoding a permuted slot set composes the same image
    let slots = Array::new(vec![k, 64], (0..k * 64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let compose = |s: &Array| {
        let mut g = Graph::new(&store);
        let sv = g.constant(s.clone());
        let d = model.ae.decode(&mut g, sv).unwrap();
        let img = compose_image(&mut g, &d).unwrap();
        g.value(img).clone()
    };
    let base_img = compose(&slots);

    let (img, masks) = render(&state, &render_cfg);
    let types: Vec<ObjectType> = state.objects.iter().map(|o| o.kind()).collect();
    let action = FactoredAction::new(1, Direction::East);
    let reference = probe(&model, &store, &frame_input(&img, &masks), &types, action);

    let mut perm: Vec<usize> = (0..k).collect();
    for _ in 0..n_perms {
        perm.shuffle(&mut rng);
        out.recon_dev = out.recon_dev.max(max_dev(&compose(&permute_rows(&slots, &perm)), &base_img));

        // (b) permuting the objects permutes symbols, keys, selections
        let pm: Vec<Array> = perm.iter().map(|&i| masks[i].clone()).collect();
        let pt: Vec<ObjectType> = perm.iter().map(|&i| types[i]).collect();
        let inv = |i: usize| perm.iter().position(|&p| p == i).unwrap();
        let pa = FactoredAction::new(inv(action.target), action.direction);
        let got = probe(&model, &store, &frame_input(&img, &pm), &pt, pa);
        out.key_dev = out.key_dev.max(max_dev(&got.keys, &permute_rows(&reference.keys, &perm)));
        if let (Some(a), Some(b)) = (&got.symbols, &reference.symbols) {
            out.key_dev = out.key_dev.max(max_dev(a, &permute_rows(b, &perm)));
        }
        out.slot_dev = out.slot_dev.max(max_dev(&got.next, &permute_rows(&reference.next, &perm)));
        for (t, r) in got.triples.iter().zip(&reference.triples) {
            if (t.p, t.c, t.r) != (inv(r.p), inv(r.c), r.r) {
                out.triple_mismatches += 1;
            }
        }
        out.permutations += 1;
    }
    if variant.uses_symbols() {
        out.consistency_dev = consistency(&model, &store, &mut rng);
    }
    out
}

/// Slots 1 and 2 get identical attribute logits and identical types; the
/// action targets slot 0. Their stage-1 rows must coincide.
fn consistency(model: &WorldModel, store: &ParamStore, rng: &mut ChaCha8Rng) -> f64 {
    let sizes = model.cfg.vocab.sizes();
    let mut g = Graph::new(store);
    let vars = [0, 1, 2, 3].map(|a| {
        let shared: Vec<f64> = (0..sizes[a]).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let first: Vec<f64> = (0..sizes[a]).map(|_| rng.gen_range(-3.0..3.0)).collect();
        g.constant(Array::from_rows(&[first, shared.clone(), shared]).unwrap())
    });
    let sym = model.symbols.symbolize::<ChaCha8Rng>(&mut g, &vars, 0.5, None, true).unwrap();
    let types = [ObjectType { color: 0, shape: 0 }, ObjectType { color: 1, shape: 2 }, ObjectType { color: 1, shape: 2 }];
    let actions = g.constant(model.action_table(FactoredAction::new(0, Direction::South), &types).unwrap());
    let (_, aligned) = model.act.align(&mut g, sym.vectors, actions).unwrap();
    let keys = g.concat_cols(&[sym.vectors, aligned]).unwrap();
    let (_, table) = model.bank.stage1_logits(&mut g, keys).unwrap();
    let t = g.value(table);
    assert_eq!(sym.indices[1], sym.indices[2]);
    t.row_slice(1).iter().zip(t.row_slice(2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

//! Finite-difference checks shared by the gradient suite and the
//! acceptance report.

use blockwm::env::{render, Direction, FactoredAction, ObjectSpec, SceneState, Vocabulary};
use blockwm::perception::{compose_image, frame_input, PerceptionConfig, SlotAutoencoder};
use blockwm::splits::ObjectType;
use blockwm::symbols::SymbolEmbeddings;
use blockwm::transition::{ModelConfig, StepInput, Variant, WorldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wm_numeric::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use wm_numeric::{attention, gumbel_softmax_st, Array, Graph, Mlp, ParamStore, Var};

pub const TOLERANCE: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array {
    Array::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ out ⊙ W` for a fixed random `W`, so every output entry matters.
fn weighted(g: &mut Graph<'_>, out: Var, seed: u64) -> wm_numeric::Result<Var> {
    let (r, c) = g.value(out).dims2();
    let w = g.constant(random(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
    let m = g.mul(out, w)?;
    Ok(g.sum_all(m))
}

/// Zero biases put ReLU inputs of blank (masked-out) patches exactly on
/// the kink, where finite differences are meaningless. Moves every bias off
/// zero.
fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if name.ends_with(".b") {
            for v in store.get_mut(id).data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
}

fn cfg(max_per_param: usize) -> GradCheckConfig {
    GradCheckConfig {
        max_per_param,
        ..GradCheckConfig::default()
    }
}

pub fn mlp() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[5, 7, 3], &mut rng).unwrap();
    let x = random(&mut rng, 4, 5);
    check_gradients(&mut store, &cfg(0), |g| {
        let xv = g.constant(x.clone());
        let y = mlp.apply(g, xv)?;
        weighted(g, y, 2)
    })
    .unwrap()
}

pub fn attention_check() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let k = store.add("keys", random(&mut rng, 4, 6)).unwrap();
    let q = store.add("queries", random(&mut rng, 3, 6)).unwrap();
    let v = store.add("values", random(&mut rng, 4, 2)).unwrap();
    check_gradients(&mut store, &cfg(0), |g| {
        let (kv, qv, vv) = (g.param(k), g.param(q), g.param(v));
        let a = attention(g, kv, qv, 6f64.sqrt())?;
        let out = g.matmul(a, vv)?;
        weighted(g, out, 4)
    })
    .unwrap()
}

/// Soft relaxation with fixed Gumbel noise (the same draws every call).
pub fn gumbel_soft() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let l = store.add("logits", random(&mut rng, 3, 4)).unwrap();
    check_gradients(&mut store, &cfg(0), |g| {
        let lv = g.param(l);
        let mut noise = ChaCha8Rng::seed_from_u64(99);
        let y = gumbel_softmax_st(g, lv, 0.5, Some(&mut noise), false)?;
        weighted(g, y, 6)
    })
    .unwrap()
}

/// Symbol vectors as a function of both the attribute logits and the
/// value embeddings, on the soft path.
pub fn symbolize() -> GradCheckReport {
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let emb = SymbolEmbeddings::new(&mut store, &vocab, 4, &mut rng).unwrap();
    let sizes = vocab.sizes();
    let logits: Vec<_> = (0..4)
        .map(|a| store.add(format!("logits.{a}"), random(&mut rng, 3, sizes[a])).unwrap())
        .collect();
    check_gradients(&mut store, &cfg(0), |g| {
        let vars = [0, 1, 2, 3].map(|a| g.param(logits[a]));
        let s = emb.symbolize::<ChaCha8Rng>(g, &vars, 0.5, None, false).map_err(to_numeric)?;
        weighted(g, s.vectors, 8)
    })
    .unwrap()
}

/// Decoder and composition from free slot vectors.
pub fn decoder() -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let ae = SlotAutoencoder::new(&mut store, PerceptionConfig::new(8), &mut rng).unwrap();
    let slots = store.add("slots", random(&mut rng, 2, 64)).unwrap();
    check_gradients(&mut store, &cfg(16), |g| {
        let s = g.param(slots);
        let d = ae.decode(g, s).map_err(to_numeric)?;
        let img = compose_image(g, &d).map_err(to_numeric)?;
        let a = weighted(g, img, 10)?;
        let b = weighted(g, d.masks, 11)?;
        g.add(a, b)
    })
    .unwrap()
}

fn to_numeric(e: blockwm::Error) -> wm_numeric::NumericError {
    wm_numeric::NumericError::Invalid(e.to_string())
}

/// Two objects on an 8x8 image (2x2 grid, 4-pixel cells).
pub fn tiny_scene() -> (Vocabulary, SceneState) {
    let vocab = Vocabulary {
        grid: (2, 2),
        ..Vocabulary::default()
    };
    let state = SceneState {
        objects: vec![ObjectSpec::new(0, 2, 0, 0), ObjectSpec::new(2, 1, 1, 1)],
        sticky_pair: None,
        grid: (2, 2),
    };
    (vocab, state)
}

/// One soft transition step of a full world model: reconstruction and
/// next-frame losses plus a weighted read of the next slots.
pub fn transition(variant: Variant) -> GradCheckReport {
    let (vocab, state) = tiny_scene();
    let mut mc = ModelConfig::new(variant, vocab, 8);
    mc.transition.t_steps = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let model = WorldModel::new(&mut store, mc.clone(), &mut rng).unwrap();
    let (img, masks) = render(&state, &mc.render);
    let input = frame_input(&img, &masks);
    jitter_biases(&mut store, 21);
    let target = random(&mut rng, 64, 3);
    let types: Vec<ObjectType> = state.objects.iter().map(|o| o.kind()).collect();
    let action = FactoredAction::new(1, Direction::West);
    check_gradients(&mut store, &cfg(12), |g| {
        let step = StepInput {
            current: &input,
            action,
            types: &types,
        };
        let out = model.forward::<ChaCha8Rng>(g, &step, None, false).map_err(to_numeric)?;
        let ae = g.mse_const(out.recon, &input.image)?;
        let next = g.mse_const(out.prediction, &target)?;
        let slots = weighted(g, out.next_slots, 12)?;
        let l = g.add(ae, next)?;
        g.add(l, slots)
    })
    .unwrap()
}

pub fn all() -> Vec<(String, GradCheckReport)> {
    let mut out = vec![
        ("mlp".to_string(), mlp()),
        ("attention".to_string(), attention_check()),
        ("gumbel soft path".to_string(), gumbel_soft()),
        ("symbolize".to_string(), symbolize()),
        ("decoder".to_string(), decoder()),
        ("encoder".to_string(), autoencoder()),
    ];
    for v in Variant::ALL {
        out.push((format!("transition ({})", v.name()), transition(v)));
    }
    out
}

/// Encoder through decoder on a rendered scene.
pub fn autoencoder() -> GradCheckReport {
    let (vocab, state) = tiny_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let ae = SlotAutoencoder::new(&mut store, PerceptionConfig::new(8), &mut rng).unwrap();
    let (img, masks) = render(&state, &blockwm::env::RenderConfig::new(8, &vocab));
    let input = frame_input(&img, &masks);
    jitter_biases(&mut store, 22);
    check_gradients(&mut store, &cfg(16), |g| {
        let s = ae.extract_entities(g, &input).map_err(to_numeric)?;
        weighted(g, s, 14)
    })
    .unwrap()
}

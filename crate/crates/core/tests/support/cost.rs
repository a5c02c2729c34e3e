//! Selection work as a function of slots `k` and rules `l`.

use std::time::Instant;

use blockwm::transition::{RuleBank, TransitionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wm_numeric::{Array, Graph, ParamStore};

pub const GRID: [usize; 4] = [2, 4, 8, 16];

/// Scores evaluated by one selection, and its mean wall time in seconds.
pub fn measure(k: usize, l: usize, reps: usize) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64((k * 100 + l) as u64);
    let cfg = TransitionConfig {
        n_rules: l,
        ..TransitionConfig::default()
    };
    let (key_dim, d) = (20, 16);
    let mut store = ParamStore::new();
    let bank = RuleBank::new(&mut store, &cfg, key_dim, d, d, &mut rng).unwrap();
    let rand = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Array::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let slots = rand(&mut rng, k, d);
    let keys = rand(&mut rng, k, key_dim);
    let mut scored = 0;
    let start = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new(&store);
        let s = g.constant(slots.clone());
        let kv = g.constant(keys.clone());
        let sel = bank.select_and_apply(&mut g, s, s, kv, Some(&mut rng), true).unwrap();
        scored = sel.scored;
    }
    (scored, start.elapsed().as_secs_f64() / reps as f64)
}

/// Coefficient of determination of the least-squares line through points.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    1.0 - ss_res / syy
}

pub struct CostFit {
    /// Worst R² of the counted work over all `(fixed, varying)` lines.
    pub min_r2_in_l: f64,
    pub min_r2_in_k: f64,
    /// Worst R² of wall time (informational).
    pub time_r2_in_l: f64,
    pub time_r2_in_k: f64,
    pub table: Vec<(usize, usize, usize, f64)>,
}

pub fn fit(reps: usize) -> CostFit {
    let mut table = Vec::new();
    for &k in &GRID {
        for &l in &GRID {
            let (s, t) = measure(k, l, reps);
            table.push((k, l, s, t));
        }
    }
    let lookup = |k: usize, l: usize| *table.iter().find(|e| e.0 == k && e.1 == l).unwrap();
    let xs: Vec<f64> = GRID.iter().map(|&v| v as f64).collect();
    let (mut a, mut b, mut c, mut d) = (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for &fixed in &GRID {
        let in_l: Vec<_> = GRID.iter().map(|&l| lookup(fixed, l)).collect();
        let in_k: Vec<_> = GRID.iter().map(|&k| lookup(k, fixed)).collect();
        a = a.min(r_squared(&xs, &in_l.iter().map(|e| e.2 as f64).collect::<Vec<_>>()));
        b = b.min(r_squared(&xs, &in_k.iter().map(|e| e.2 as f64).collect::<Vec<_>>()));
        c = c.min(r_squared(&xs, &in_l.iter().map(|e| e.3).collect::<Vec<_>>()));
        d = d.min(r_squared(&xs, &in_k.iter().map(|e| e.3).collect::<Vec<_>>()));
    }
    CostFit {
        min_r2_in_l: a,
        min_r2_in_k: b,
        time_r2_in_l: c,
        time_r2_in_k: d,
        table,
    }
}

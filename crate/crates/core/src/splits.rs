//! Compounds (co-occurring object-type sets) and disjoint train/eval splits
//! over them with identical atom support.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{DynamicsMode, SceneState, Vocabulary};
use crate::error::{Error, Result};

/// An atom: a unique (color, shape) combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectType {
    pub color: usize,
    pub shape: usize,
}

/// A sorted set of object types, plus for relational datasets the pair of
/// (sorted) positions that share dynamics.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Compound {
    pub types: Vec<ObjectType>,
    pub pair: Option<(usize, usize)>,
}

impl Compound {
    /// Canonicalizes: types are sorted and `pair` (indices into the given
    /// order) is remapped to sorted positions with the smaller index first.
    pub fn new(types: Vec<ObjectType>, pair: Option<(usize, usize)>) -> Self {
        let mut idx: Vec<usize> = (0..types.len()).collect();
        idx.sort_by_key(|&i| types[i]);
        let sorted: Vec<ObjectType> = idx.iter().map(|&i| types[i]).collect();
        let pos = |orig: usize| idx.iter().position(|&i| i == orig).expect("index in range");
        let pair = pair.map(|(a, b)| {
            let (pa, pb) = (pos(a), pos(b));
            (pa.min(pb), pa.max(pb))
        });
        Self { types: sorted, pair }
    }

    pub fn atoms(&self) -> impl Iterator<Item = ObjectType> + '_ {
        self.types.iter().copied()
    }

    pub fn display(&self, vocab: &Vocabulary) -> String {
        let names: Vec<String> = self
            .types
            .iter()
            .map(|t| {
                format!(
                    "({},{})",
                    vocab.colors.get(t.color).map_or("?", |s| s),
                    vocab.shapes.get(t.shape).map_or("?", |s| s)
                )
            })
            .collect();
        match self.pair {
            Some((a, b)) => format!("{{{}}} pair ({a},{b})", names.join(",")),
            None => format!("{{{}}}", names.join(",")),
        }
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// All k-subsets of object types (EC), or all (k-subset, pair) combinations
/// (relational modes).
pub fn enumerate_compounds(vocab: &Vocabulary, k: usize, mode: DynamicsMode) -> Result<Vec<Compound>> {
    let types = vocab.all_types();
    let n = types.len();
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds {n} object types")));
    }
    let mut out = Vec::new();
    for subset in combinations(n, k) {
        let ts: Vec<ObjectType> = subset.iter().map(|&i| types[i]).collect();
        if mode.is_relational() {
            for p in combinations(k, 2) {
                out.push(Compound::new(ts.clone(), Some((p[0], p[1]))));
            }
        } else {
            out.push(Compound::new(ts, None));
        }
    }
    Ok(out)
}

/// Compounds a scene can actually realize. In relational modes the pair
/// must share a color and be the only same-color pair, so the shared
/// dynamics are determined by the scene itself.
pub fn realizable_compounds(vocab: &Vocabulary, k: usize, mode: DynamicsMode) -> Result<Vec<Compound>> {
    let all = enumerate_compounds(vocab, k, mode)?;
    if !mode.is_relational() {
        return Ok(all);
    }
    Ok(all
        .into_iter()
        .filter(|c| {
            let (a, b) = c.pair.expect("relational compound");
            let same: Vec<(usize, usize)> = combinations(c.types.len(), 2)
                .into_iter()
                .map(|p| (p[0], p[1]))
                .filter(|&(i, j)| c.types[i].color == c.types[j].color)
                .collect();
            same == [(a, b)]
        })
        .collect())
}

/// The compound realized by a scene.
pub fn compound_of_scene(state: &SceneState, mode: DynamicsMode) -> Compound {
    let types: Vec<ObjectType> = state.objects.iter().map(|o| o.kind()).collect();
    let pair = match mode {
        DynamicsMode::Ec => None,
        DynamicsMode::RcSticky => state.sticky_pair,
        DynamicsMode::RcTeam => {
            let n = types.len();
            (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .find(|&(a, b)| types[a].color == types[b].color)
        }
    };
    Compound::new(types, pair)
}

pub fn atom_support<'a>(compounds: impl IntoIterator<Item = &'a Compound>) -> BTreeSet<ObjectType> {
    compounds.into_iter().flat_map(|c| c.atoms()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<Compound>,
    pub eval: Vec<Compound>,
    pub atom_support: Vec<ObjectType>,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    /// Hex sha256 of the canonical JSON encoding of both compound lists.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(&(&self.train, &self.eval)).expect("serializable");
        hex::encode(Sha256::digest(body))
    }

    pub fn side(&self, side: Side) -> &[Compound] {
        match side {
            Side::Train => &self.train,
            Side::Eval => &self.eval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Eval,
}

const MAX_SPLIT_ATTEMPTS: usize = 10_000;

/// Shuffles and cuts `floor(len · eval_fraction)` compounds into the eval
/// side, resampling until both sides cover the full atom support.
pub fn make_split(compounds: &[Compound], eval_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::Config(format!("eval fraction {eval_fraction} not in (0, 1)")));
    }
    let mut pool: Vec<Compound> = compounds.to_vec();
    pool.sort();
    pool.dedup();
    let support = atom_support(&pool);
    let n_eval = (pool.len() as f64 * eval_fraction).floor() as usize;
    let per = pool.first().map_or(0, |c| c.types.len());
    if n_eval == 0 || n_eval >= pool.len() || n_eval * per < support.len() || (pool.len() - n_eval) * per < support.len() {
        return Err(Error::Config(format!(
            "no covering split: {n_eval} of {} compounds for {} atoms",
            pool.len(),
            support.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        pool.shuffle(&mut rng);
        let (eval, train) = pool.split_at(n_eval);
        if atom_support(eval) == support && atom_support(train) == support {
            let mut train = train.to_vec();
            let mut eval = eval.to_vec();
            train.sort();
            eval.sort();
            return Ok(SplitPlan {
                train,
                eval,
                atom_support: support.into_iter().collect(),
                eval_fraction,
                seed,
            });
        }
    }
    Err(Error::Config(format!(
        "no covering split found in {MAX_SPLIT_ATTEMPTS} attempts"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_trajectories: usize,
    pub eval_trajectories: usize,
    pub train_compounds: usize,
    pub eval_compounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub compound_intersection: Vec<Compound>,
    pub atom_support_equal: bool,
    pub train_atoms: Vec<ObjectType>,
    pub eval_atoms: Vec<ObjectType>,
    pub counts: SplitCounts,
    pub passed: bool,
}

impl ValidationReport {
    pub fn summary(&self, vocab: &Vocabulary) -> String {
        let mut s = format!(
            "{}: {} train / {} eval trajectories, {} / {} compounds, atom support {}\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.counts.train_trajectories,
            self.counts.eval_trajectories,
            self.counts.train_compounds,
            self.counts.eval_compounds,
            if self.atom_support_equal { "equal" } else { "differs" },
        );
        for c in &self.compound_intersection {
            s.push_str(&format!("  shared compound {}\n", c.display(vocab)));
        }
        s
    }
}

/// Compares the compounds actually realized by two sets of scenes.
pub fn validate_scenes(
    train: &[&SceneState],
    eval: &[&SceneState],
    mode: DynamicsMode,
) -> ValidationReport {
    let tc: BTreeSet<Compound> = train.iter().map(|s| compound_of_scene(s, mode)).collect();
    let ec: BTreeSet<Compound> = eval.iter().map(|s| compound_of_scene(s, mode)).collect();
    let inter: Vec<Compound> = tc.intersection(&ec).cloned().collect();
    let ta = atom_support(&tc);
    let ea = atom_support(&ec);
    let atom_support_equal = ta == ea;
    ValidationReport {
        passed: inter.is_empty() && atom_support_equal,
        compound_intersection: inter,
        atom_support_equal,
        train_atoms: ta.into_iter().collect(),
        eval_atoms: ea.into_iter().collect(),
        counts: SplitCounts {
            train_trajectories: train.len(),
            eval_trajectories: eval.len(),
            train_compounds: tc.len(),
            eval_compounds: ec.len(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn counts_match_binomials() {
        let v = Vocabulary::default();
        assert_eq!(enumerate_compounds(&v, 3, DynamicsMode::Ec).unwrap().len(), 84);
        assert_eq!(enumerate_compounds(&v, 3, DynamicsMode::RcSticky).unwrap().len(), 252);
        assert_eq!(enumerate_compounds(&v, 9, DynamicsMode::Ec).unwrap().len(), 1);
        assert!(enumerate_compounds(&v, 10, DynamicsMode::Ec).is_err());
        for colors in 1..=4 {
            for shapes in 1..=3 {
                let v = Vocabulary {
                    colors: (0..colors).map(|i| format!("c{i}")).collect(),
                    shapes: (0..shapes).map(|i| format!("s{i}")).collect(),
                    grid: (5, 5),
                };
                let n = colors * shapes;
                for k in 1..=5.min(n) {
                    let ec = enumerate_compounds(&v, k, DynamicsMode::Ec).unwrap();
                    assert_eq!(ec.len(), binom(n, k));
                    let rc = enumerate_compounds(&v, k, DynamicsMode::RcTeam).unwrap();
                    assert_eq!(rc.len(), binom(n, k) * binom(k, 2));
                    let distinct: BTreeSet<_> = rc.iter().collect();
                    assert_eq!(distinct.len(), rc.len());
                }
            }
        }
    }

    #[test]
    fn realizable_relational_compounds() {
        let v = Vocabulary::default();
        // pair color (3) x two shapes of it (3) x a third object of another color (6)
        assert_eq!(realizable_compounds(&v, 3, DynamicsMode::RcSticky).unwrap().len(), 54);
    }

    #[test]
    fn canonical_under_permutation() {
        let a = ObjectType { color: 0, shape: 1 };
        let b = ObjectType { color: 2, shape: 0 };
        let c = ObjectType { color: 0, shape: 2 };
        let x = Compound::new(vec![a, b, c], Some((0, 2)));
        let y = Compound::new(vec![c, a, b], Some((1, 0)));
        assert_eq!(x, y);
    }

    #[test]
    fn split_floor_and_disjoint() {
        let v = Vocabulary::default();
        let all = enumerate_compounds(&v, 3, DynamicsMode::Ec).unwrap();
        let s = make_split(&all, 0.2, 0).unwrap();
        assert_eq!(s.eval.len(), 16);
        assert_eq!(s.train.len(), 68);
        assert!(s.train.iter().all(|c| !s.eval.contains(c)));
        assert_eq!(atom_support(&s.train), atom_support(&s.eval));
        assert_eq!(s, make_split(&all, 0.2, 0).unwrap());
        assert!(make_split(&all, 0.02, 0).is_err());
        assert!(make_split(&all, 1.0, 0).is_err());
    }
}

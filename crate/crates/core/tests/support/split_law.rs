use blockwm::dataset::{validate_split, Dataset, GenerateConfig};
use blockwm::env::{DynamicsMode, Vocabulary};
use blockwm::splits::{make_split, realizable_compounds, Side, ValidationReport};

/// Generates both sides of a seeded split with one trajectory per compound
/// and validates the realized scenes.
pub fn run(mode: DynamicsMode, seed: u64) -> ValidationReport {
    let vocab = Vocabulary::default();
    let compounds = realizable_compounds(&vocab, 3, mode).unwrap();
    let plan = make_split(&compounds, 0.2, seed).unwrap();
    let gen = |side: Side| {
        let cfg = GenerateConfig {
            vocab: vocab.clone(),
            mode,
            k: 3,
            image_size: 8,
            n_trajectories: plan.side(side).len(),
            length: 2,
            seed,
        };
        Dataset::generate(&plan, side, &cfg).unwrap()
    };
    validate_split(&gen(Side::Train), &gen(Side::Eval)).unwrap()
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

mod support;

use blockwm::env::{step, step_traced, DynamicsMode, SceneConfig, Vocabulary, sample_trajectory};
use blockwm::splits::realizable_compounds;
use proptest::prelude::*;
use support::dynamics_table::cases;

#[test]
fn oracle_table() {
    let table = cases();
    assert!(table.len() >= 30);
    for c in &table {
        let s = c.state();
        s.check(c.mode).unwrap_or_else(|e| panic!("{}: bad fixture: {e}", c.name));
        let next = step(&s, c.action(), c.mode);
        assert_eq!(next.positions(), c.expected, "{}", c.name);
        assert_eq!(next.sticky_pair, s.sticky_pair);
        for (a, b) in s.objects.iter().zip(&next.objects) {
            assert_eq!((a.color, a.shape), (b.color, b.shape), "{}", c.name);
        }
    }
}

#[test]
fn moved_flags_match_displacement() {
    for c in cases() {
        let s = c.state();
        let (next, moved) = step_traced(&s, c.action(), c.mode);
        for i in 0..s.k() {
            assert_eq!(moved[i], s.objects[i] != next.objects[i], "{} object {i}", c.name);
        }
    }
}

fn mode_strategy() -> impl Strategy<Value = DynamicsMode> {
    prop_oneof![Just(DynamicsMode::Ec), Just(DynamicsMode::RcTeam), Just(DynamicsMode::RcSticky)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transitions_preserve_invariants(mode in mode_strategy(), k in 2usize..5, seed in 0u64..10_000) {
        let vocab = Vocabulary::default();
        let compounds = realizable_compounds(&vocab, k, mode).unwrap();
        let cfg = SceneConfig { vocab, k, mode, compounds };
        let traj = sample_trajectory(&cfg, 12, seed).unwrap();
        prop_assert!(traj.replay_consistent(mode));
        for (s, a) in traj.states.iter().zip(&traj.actions) {
            let (next, moved) = step_traced(s, *a, mode);
            prop_assert!(next.check(mode).is_ok());
            prop_assert_eq!(&next, &step(s, *a, mode));
            let target_color = s.objects[a.target].color;
            for i in 0..k {
                let d = (next.objects[i].x as i64 - s.objects[i].x as i64).abs()
                    + (next.objects[i].y as i64 - s.objects[i].y as i64).abs();
                prop_assert!(d <= 1);
                prop_assert_eq!(moved[i], d == 1);
                if mode == DynamicsMode::RcTeam && moved[i] {
                    // Only the team or objects it pushed can move; pushed
                    // objects are strictly lighter than their pusher.
                    prop_assert!(s.objects[i].color == target_color || s.objects[i].shape < 2);
                }
            }
            if mode == DynamicsMode::Ec {
                // Movers form one contiguous chain starting at the target.
                let n_moved = moved.iter().filter(|&&m| m).count();
                prop_assert!(n_moved == 0 || moved[a.target]);
            }
        }
    }
}

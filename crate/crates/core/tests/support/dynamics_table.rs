//! Hand-derived push outcomes on a 5x5 grid. Colors: 0 red, 1 green,
//! 2 blue. Shapes (weight order): 0 circle, 1 square, 2 triangle.

use blockwm::env::{Direction, DynamicsMode, FactoredAction, ObjectSpec, SceneState};

pub struct Case {
    pub name: &'static str,
    pub mode: DynamicsMode,
    /// `(color, shape, x, y)` per object.
    pub objects: Vec<(usize, usize, usize, usize)>,
    pub sticky: Option<(usize, usize)>,
    pub action: (usize, Direction),
    /// Expected `(x, y)` per object.
    pub expected: Vec<(usize, usize)>,
}

impl Case {
    pub fn state(&self) -> SceneState {
        SceneState {
            objects: self.objects.iter().map(|&(c, s, x, y)| ObjectSpec::new(c, s, x, y)).collect(),
            sticky_pair: self.sticky,
            grid: (5, 5),
        }
    }

    pub fn action(&self) -> FactoredAction {
        FactoredAction::new(self.action.0, self.action.1)
    }
}

use Direction::{East as E, North as N, South as S, West as W};
use DynamicsMode::{Ec, RcSticky, RcTeam};

fn case(
    name: &'static str,
    mode: DynamicsMode,
    objects: &[(usize, usize, usize, usize)],
    sticky: Option<(usize, usize)>,
    action: (usize, Direction),
    expected: &[(usize, usize)],
) -> Case {
    Case {
        name,
        mode,
        objects: objects.to_vec(),
        sticky,
        action,
        expected: expected.to_vec(),
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        case("free move east", Ec, &[(0, 0, 2, 2)], None, (0, E), &[(3, 2)]),
        case("heavy pushes light", Ec, &[(0, 2, 2, 2), (1, 0, 3, 2)], None, (0, E), &[(3, 2), (4, 2)]),
        case("light cannot push heavy", Ec, &[(0, 0, 2, 2), (1, 2, 3, 2)], None, (0, E), &[(2, 2), (3, 2)]),
        case(
            "team moves same color",
            RcTeam,
            &[(0, 0, 1, 1), (0, 1, 4, 4), (2, 0, 0, 0)],
            None,
            (0, N),
            &[(1, 0), (4, 3), (0, 0)],
        ),
        case("north wall", Ec, &[(0, 0, 0, 0)], None, (0, N), &[(0, 0)]),
        case("west wall", Ec, &[(0, 0, 0, 0)], None, (0, W), &[(0, 0)]),
        case("south wall", Ec, &[(0, 0, 4, 4)], None, (0, S), &[(4, 4)]),
        case("east wall", Ec, &[(0, 0, 4, 4)], None, (0, E), &[(4, 4)]),
        case("free move north", Ec, &[(1, 1, 2, 2)], None, (0, N), &[(2, 1)]),
        case("free move south", Ec, &[(1, 1, 2, 2)], None, (0, S), &[(2, 3)]),
        case("free move west", Ec, &[(1, 1, 2, 2)], None, (0, W), &[(1, 2)]),
        case("equal weights block", Ec, &[(0, 1, 2, 2), (1, 1, 3, 2)], None, (0, E), &[(2, 2), (3, 2)]),
        case(
            "descending chain moves",
            Ec,
            &[(0, 2, 1, 2), (1, 1, 2, 2), (2, 0, 3, 2)],
            None,
            (0, E),
            &[(2, 2), (3, 2), (4, 2)],
        ),
        case(
            "chain blocked by wall",
            Ec,
            &[(0, 2, 2, 2), (1, 1, 3, 2), (2, 0, 4, 2)],
            None,
            (0, E),
            &[(2, 2), (3, 2), (4, 2)],
        ),
        case(
            "chain blocked by heavier link",
            Ec,
            &[(0, 2, 1, 2), (1, 0, 2, 2), (2, 1, 3, 2)],
            None,
            (0, E),
            &[(1, 2), (2, 2), (3, 2)],
        ),
        case("move away from neighbor", Ec, &[(0, 2, 2, 2), (1, 0, 3, 2)], None, (0, W), &[(1, 2), (3, 2)]),
        case("push into top wall", Ec, &[(0, 2, 2, 1), (1, 0, 2, 0)], None, (0, N), &[(2, 1), (2, 0)]),
        case("push north", Ec, &[(0, 2, 2, 3), (1, 0, 2, 2)], None, (0, N), &[(2, 2), (2, 1)]),
        case("square pushes circle", Ec, &[(0, 1, 0, 2), (1, 0, 1, 2)], None, (0, E), &[(1, 2), (2, 2)]),
        case("circle blocked south", Ec, &[(0, 0, 2, 2), (1, 1, 2, 3)], None, (0, S), &[(2, 2), (2, 3)]),
        case(
            "bystanders untouched",
            Ec,
            &[(0, 2, 0, 0), (1, 0, 4, 4), (2, 1, 2, 2)],
            None,
            (2, N),
            &[(0, 0), (4, 4), (2, 1)],
        ),
        case("gap before neighbor", Ec, &[(0, 0, 0, 2), (1, 2, 2, 2)], None, (0, E), &[(1, 2), (2, 2)]),
        case(
            "team lighter leader blocked, follower moves",
            RcTeam,
            &[(0, 0, 0, 0), (0, 1, 0, 1)],
            None,
            (0, S),
            &[(0, 0), (0, 2)],
        ),
        case("team heavier leader pushes teammate", RcTeam, &[(0, 1, 0, 0), (0, 0, 0, 1)], None, (0, S), &[(0, 1), (0, 2)]),
        case(
            "team other color stays",
            RcTeam,
            &[(2, 0, 2, 2), (0, 0, 0, 0), (0, 1, 4, 4)],
            None,
            (0, E),
            &[(3, 2), (0, 0), (4, 4)],
        ),
        case("team member at wall", RcTeam, &[(0, 0, 1, 1), (0, 0, 4, 1)], None, (0, E), &[(2, 1), (4, 1)]),
        case(
            "team of three, first at wall",
            RcTeam,
            &[(0, 0, 0, 0), (0, 1, 2, 0), (0, 2, 4, 0)],
            None,
            (1, W),
            &[(0, 0), (1, 0), (3, 0)],
        ),
        case("team chain moves teammate once", RcTeam, &[(0, 2, 1, 0), (0, 0, 2, 0)], None, (0, E), &[(2, 0), (3, 0)]),
        case("team light first, heavy ahead", RcTeam, &[(0, 0, 1, 0), (0, 2, 2, 0)], None, (0, E), &[(1, 0), (3, 0)]),
        case("team front resolves first", RcTeam, &[(0, 0, 3, 0), (0, 0, 2, 0)], None, (0, E), &[(4, 0), (3, 0)]),
        case("team rear resolves first", RcTeam, &[(0, 0, 2, 0), (0, 0, 3, 0)], None, (0, E), &[(2, 0), (4, 0)]),
        case(
            "sticky pair moves together",
            RcSticky,
            &[(0, 0, 1, 1), (0, 1, 2, 1), (2, 2, 4, 4)],
            Some((0, 1)),
            (0, N),
            &[(1, 0), (2, 0), (4, 4)],
        ),
        case(
            "sticky outsider moves alone",
            RcSticky,
            &[(0, 0, 1, 1), (0, 1, 2, 1), (2, 2, 3, 3)],
            Some((0, 1)),
            (2, E),
            &[(1, 1), (2, 1), (4, 3)],
        ),
        case("sticky vertical pair north", RcSticky, &[(0, 0, 1, 1), (0, 1, 1, 2)], Some((0, 1)), (1, N), &[(1, 0), (1, 1)]),
        case("sticky vertical pair south splits", RcSticky, &[(0, 0, 1, 1), (0, 1, 1, 2)], Some((0, 1)), (0, S), &[(1, 1), (1, 3)]),
        case("sticky pair against wall", RcSticky, &[(0, 0, 0, 0), (0, 1, 1, 0)], Some((0, 1)), (1, W), &[(0, 0), (1, 0)]),
        case(
            "sticky diagonal pair pushes outsider",
            RcSticky,
            &[(0, 0, 1, 1), (2, 1, 3, 2), (0, 2, 2, 2)],
            Some((0, 2)),
            (2, E),
            &[(2, 1), (4, 2), (3, 2)],
        ),
        case(
            "five objects, chain of three",
            Ec,
            &[(0, 2, 0, 4), (1, 1, 1, 4), (2, 0, 2, 4), (0, 0, 4, 0), (1, 2, 3, 3)],
            None,
            (0, E),
            &[(1, 4), (2, 4), (3, 4), (4, 0), (3, 3)],
        ),
    ]
}

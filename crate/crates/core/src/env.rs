//! Grid block-pushing simulator.
//!
//! Objects sit on integer cells (x right, y down). A push moves the target
//! one cell; heavier objects (higher shape index) shove strictly lighter
//! ones ahead of them, and any blocked link freezes the whole chain.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wm_numeric::Array;

use crate::error::{Error, Result};
use crate::splits::{Compound, ObjectType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Self::North, Self::East, Self::South, Self::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Self::North => (0, -1),
            Self::East => (1, 0),
            Self::South => (0, 1),
            Self::West => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DynamicsMode {
    #[serde(rename = "ec")]
    Ec,
    #[serde(rename = "rc-team")]
    RcTeam,
    #[serde(rename = "rc-sticky")]
    RcSticky,
}

impl DynamicsMode {
    pub fn is_relational(self) -> bool {
        !matches!(self, Self::Ec)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ec => "ec",
            Self::RcTeam => "rc-team",
            Self::RcSticky => "rc-sticky",
        }
    }
}

impl std::str::FromStr for DynamicsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ec" => Ok(Self::Ec),
            "rc-team" => Ok(Self::RcTeam),
            "rc-sticky" => Ok(Self::RcSticky),
            other => Err(Error::Config(format!("unknown dynamics mode {other:?}"))),
        }
    }
}

/// Ordered attribute names and values. Canonical order is color, shape,
/// x-pos, y-pos; position values are grid coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub grid: (usize, usize),
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            colors: vec!["red".into(), "green".into(), "blue".into()],
            shapes: vec!["circle".into(), "square".into(), "triangle".into()],
            grid: (5, 5),
        }
    }
}

impl Vocabulary {
    pub const ATTRIBUTES: [&'static str; 4] = ["color", "shape", "x-pos", "y-pos"];

    pub fn validate(&self) -> Result<()> {
        let unique = |v: &[String]| {
            let mut s = v.to_vec();
            s.sort();
            s.dedup();
            s.len() == v.len()
        };
        if self.colors.is_empty() || self.shapes.is_empty() || self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::Config("empty vocabulary attribute".into()));
        }
        if !unique(&self.colors) || !unique(&self.shapes) {
            return Err(Error::Config("duplicate vocabulary value".into()));
        }
        if self.colors.len() > 255 || self.shapes.len() > 255 || self.grid.0 > 255 || self.grid.1 > 255 {
            return Err(Error::Config("vocabulary too large for byte encoding".into()));
        }
        Ok(())
    }

    /// Number of values per attribute, in canonical order.
    pub fn sizes(&self) -> [usize; 4] {
        [self.colors.len(), self.shapes.len(), self.grid.0, self.grid.1]
    }

    pub fn attributes(&self) -> Vec<(String, Vec<String>)> {
        let xs = (0..self.grid.0).map(|i| i.to_string()).collect();
        let ys = (0..self.grid.1).map(|i| i.to_string()).collect();
        vec![
            ("color".into(), self.colors.clone()),
            ("shape".into(), self.shapes.clone()),
            ("x-pos".into(), xs),
            ("y-pos".into(), ys),
        ]
    }

    pub fn num_types(&self) -> usize {
        self.colors.len() * self.shapes.len()
    }

    pub fn all_types(&self) -> Vec<ObjectType> {
        let mut v = Vec::new();
        for color in 0..self.colors.len() {
            for shape in 0..self.shapes.len() {
                v.push(ObjectType { color, shape });
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub color: usize,
    pub shape: usize,
    pub x: usize,
    pub y: usize,
}

impl ObjectSpec {
    pub fn new(color: usize, shape: usize, x: usize, y: usize) -> Self {
        Self { color, shape, x, y }
    }

    pub fn kind(&self) -> ObjectType {
        ObjectType {
            color: self.color,
            shape: self.shape,
        }
    }

    pub fn weight(&self) -> usize {
        self.shape
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<ObjectSpec>,
    pub sticky_pair: Option<(usize, usize)>,
    pub grid: (usize, usize),
}

impl SceneState {
    pub fn k(&self) -> usize {
        self.objects.len()
    }

    pub fn occupant(&self, x: usize, y: usize) -> Option<usize> {
        self.objects.iter().position(|o| o.x == x && o.y == y)
    }

    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.objects.iter().map(|o| (o.x, o.y)).collect()
    }

    pub fn check(&self, mode: DynamicsMode) -> Result<()> {
        let (w, h) = self.grid;
        if self.k() > w * h {
            return Err(Error::Config(format!("{} objects exceed a {w}x{h} grid", self.k())));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.x >= w || o.y >= h {
                return Err(Error::Config(format!("object {i} outside the grid")));
            }
            if self.objects[..i].iter().any(|p| p.x == o.x && p.y == o.y) {
                return Err(Error::Config(format!("object {i} shares a cell")));
            }
        }
        match (mode, self.sticky_pair) {
            (DynamicsMode::RcSticky, Some((a, b))) => {
                if a == b || a >= self.k() || b >= self.k() {
                    return Err(Error::Config("invalid sticky pair".into()));
                }
                if self.objects[a].color != self.objects[b].color {
                    return Err(Error::Config("sticky pair colors differ".into()));
                }
            }
            (DynamicsMode::RcSticky, None) => return Err(Error::Config("missing sticky pair".into())),
            (_, Some(_)) => return Err(Error::Config("sticky pair outside sticky mode".into())),
            (_, None) => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactoredAction {
    pub target: usize,
    pub direction: Direction,
}

impl FactoredAction {
    pub fn new(target: usize, direction: Direction) -> Self {
        Self { target, direction }
    }

    /// Position in the `k·4` action enumeration.
    pub fn index(&self) -> usize {
        self.target * 4 + self.direction.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(i / 4, Direction::ALL[i % 4])
    }

    /// `k·4` vector, one-hot in the target's block.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; k * 4];
        v[self.index()] = 1.0;
        v
    }

    pub fn from_dense(v: &[f64]) -> Result<Self> {
        let nz: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        match nz.as_slice() {
            [i] if v.len() % 4 == 0 => Ok(Self::from_index(*i)),
            _ => Err(Error::Config("dense action must have exactly one nonzero entry".into())),
        }
    }
}

/// Applies one push. Blocked moves leave positions unchanged.
pub fn step(state: &SceneState, action: FactoredAction, mode: DynamicsMode) -> SceneState {
    step_traced(state, action, mode).0
}

/// Like [`step`], also reporting which objects moved.
pub fn step_traced(
    state: &SceneState,
    action: FactoredAction,
    mode: DynamicsMode,
) -> (SceneState, Vec<bool>) {
    let k = state.k();
    assert!(action.target < k, "action target {} out of range", action.target);
    let target = &state.objects[action.target];
    let movers: Vec<usize> = match mode {
        DynamicsMode::Ec => vec![action.target],
        DynamicsMode::RcTeam => (0..k).filter(|&i| state.objects[i].color == target.color).collect(),
        DynamicsMode::RcSticky => match state.sticky_pair {
            Some((a, b)) if a == action.target || b == action.target => vec![a.min(b), a.max(b)],
            _ => vec![action.target],
        },
    };
    let mut next = state.clone();
    let mut moved = vec![false; k];
    for m in movers {
        if !moved[m] {
            push_chain(&mut next, m, action.direction, &mut moved);
        }
    }
    debug_assert!(next.check(mode).is_ok());
    (next, moved)
}

fn push_chain(state: &mut SceneState, first: usize, dir: Direction, moved: &mut [bool]) {
    let (dx, dy) = dir.delta();
    let (w, h) = state.grid;
    let mut chain = vec![first];
    let mut cur = first;
    loop {
        let o = state.objects[cur];
        let (nx, ny) = (o.x as i64 + dx, o.y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            return;
        }
        match state.occupant(nx as usize, ny as usize) {
            None => break,
            Some(j) if !moved[j] && o.weight() > state.objects[j].weight() => {
                chain.push(j);
                cur = j;
            }
            Some(_) => return,
        }
    }
    for &i in &chain {
        let o = &mut state.objects[i];
        o.x = (o.x as i64 + dx) as usize;
        o.y = (o.y as i64 + dy) as usize;
        moved[i] = true;
    }
}

/// Per-object `(color, shape, x_bin, y_bin)` indices; position bins are
/// the grid coordinates.
pub fn ground_truth_attributes(state: &SceneState, vocab: &Vocabulary) -> Result<Vec<[usize; 4]>> {
    if state.grid != vocab.grid {
        return Err(Error::Config("scene grid differs from vocabulary grid".into()));
    }
    state
        .objects
        .iter()
        .map(|o| {
            if o.color >= vocab.colors.len() || o.shape >= vocab.shapes.len() {
                Err(Error::Config(format!("object {o:?} outside vocabulary")))
            } else {
                Ok([o.color, o.shape, o.x, o.y])
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// RGB per color index.
    pub palette: Vec<[f64; 3]>,
    pub background: [f64; 3],
}

impl RenderConfig {
    pub fn new(size: usize, vocab: &Vocabulary) -> Self {
        Self {
            size,
            palette: vocab.colors.iter().enumerate().map(|(i, c)| default_color(c, i)).collect(),
            background: [0.0; 3],
        }
    }

    /// Cell side in pixels and the pixel offset centering the grid.
    pub fn cell_geometry(&self, grid: (usize, usize)) -> (usize, usize, usize) {
        let cell = (self.size / grid.0).min(self.size / grid.1).max(1);
        let ox = self.size.saturating_sub(cell * grid.0) / 2;
        let oy = self.size.saturating_sub(cell * grid.1) / 2;
        (cell, ox, oy)
    }
}

fn default_color(name: &str, i: usize) -> [f64; 3] {
    match name {
        "red" => [1.0, 0.0, 0.0],
        "green" => [0.0, 1.0, 0.0],
        "blue" => [0.0, 0.0, 1.0],
        "yellow" => [1.0, 1.0, 0.0],
        "magenta" => [1.0, 0.0, 1.0],
        "cyan" => [0.0, 1.0, 1.0],
        _ => {
            let t = (i as f64 * 0.618_033_988_75).fract();
            [0.5 + 0.5 * t, 1.0 - t, 0.25 + 0.5 * (1.0 - t)]
        }
    }
}

/// Whether the point `(s, t)` in unit cell coordinates lies in a glyph.
/// Shape names circle/square/triangle have fixed glyphs; other shape
/// indices cycle through them.
pub fn glyph_contains(shape: usize, s: f64, t: f64) -> bool {
    match shape % 3 {
        0 => (s - 0.5).powi(2) + (t - 0.5).powi(2) <= 0.45 * 0.45,
        1 => (s - 0.5).abs() <= 0.42 && (t - 0.5).abs() <= 0.42,
        _ => (0.08..=0.92).contains(&t) && (s - 0.5).abs() <= 0.46 * (t - 0.08) / 0.84,
    }
}

/// Pixels covered by an object, as `(px, py)`.
pub fn footprint(obj: &ObjectSpec, grid: (usize, usize), cfg: &RenderConfig) -> Vec<(usize, usize)> {
    let (cell, ox, oy) = cfg.cell_geometry(grid);
    let (x0, y0) = (ox + obj.x * cell, oy + obj.y * cell);
    let mut out = Vec::new();
    for py in 0..cell {
        for px in 0..cell {
            let s = (px as f64 + 0.5) / cell as f64;
            let t = (py as f64 + 0.5) / cell as f64;
            if glyph_contains(obj.shape, s, t) {
                out.push((x0 + px, y0 + py));
            }
        }
    }
    out
}

/// Renders to a `3 x H x W` image and one `H x W` binary mask per object.
pub fn render(state: &SceneState, cfg: &RenderConfig) -> (Array, Vec<Array>) {
    let n = cfg.size;
    let mut img = vec![0.0; 3 * n * n];
    for c in 0..3 {
        img[c * n * n..(c + 1) * n * n].fill(cfg.background[c]);
    }
    let mut masks = Vec::with_capacity(state.k());
    for obj in &state.objects {
        let mut m = vec![0.0; n * n];
        let rgb = cfg.palette.get(obj.color).copied().unwrap_or([1.0; 3]);
        for (px, py) in footprint(obj, state.grid, cfg) {
            m[py * n + px] = 1.0;
            for c in 0..3 {
                img[c * n * n + py * n + px] = rgb[c];
            }
        }
        masks.push(Array::new(vec![n, n], m).expect("mask size"));
    }
    (Array::new(vec![3, n, n], img).expect("image size"), masks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Array,
    pub masks: Vec<Array>,
    pub action: FactoredAction,
    pub state: SceneState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub vocab: Vocabulary,
    pub k: usize,
    pub mode: DynamicsMode,
    /// Permissible compounds; scenes draw one uniformly.
    pub compounds: Vec<Compound>,
}

pub fn sample_scene(cfg: &SceneConfig, seed: u64) -> Result<SceneState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scene_with(cfg, &mut rng)
}

pub fn sample_scene_with(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<SceneState> {
    let (w, h) = cfg.vocab.grid;
    if cfg.k > w * h {
        return Err(Error::Config(format!("k = {} exceeds grid capacity {}", cfg.k, w * h)));
    }
    let compound = cfg
        .compounds
        .choose(rng)
        .ok_or_else(|| Error::Config("no permissible compounds".into()))?;
    if compound.types.len() != cfg.k {
        return Err(Error::Config(format!("compound has {} types, k = {}", compound.types.len(), cfg.k)));
    }
    let mut cells: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    cells.shuffle(rng);
    let mut order: Vec<usize> = (0..cfg.k).collect();
    order.shuffle(rng);
    let mut objects: Vec<ObjectSpec> = order
        .iter()
        .zip(&cells)
        .map(|(&t, &(x, y))| {
            let ty = compound.types[t];
            ObjectSpec::new(ty.color, ty.shape, x, y)
        })
        .collect();
    let sticky_pair = if cfg.mode == DynamicsMode::RcSticky {
        let (a, b) = sticky_members(compound)?;
        let (ia, ib) = (
            order.iter().position(|&t| t == a).expect("present"),
            order.iter().position(|&t| t == b).expect("present"),
        );
        place_adjacent(&mut objects, ia, ib, (w, h), rng)?;
        Some((ia.min(ib), ia.max(ib)))
    } else {
        None
    };
    let state = SceneState {
        objects,
        sticky_pair,
        grid: (w, h),
    };
    state.check(cfg.mode)?;
    Ok(state)
}

fn sticky_members(c: &Compound) -> Result<(usize, usize)> {
    let pair = c.pair.or_else(|| {
        let n = c.types.len();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .find(|&(a, b)| c.types[a].color == c.types[b].color)
    });
    match pair {
        Some((a, b)) if c.types[a].color == c.types[b].color => Ok((a, b)),
        _ => Err(Error::Config(format!("compound {c:?} has no same-color pair"))),
    }
}

/// Moves object `b` into a free 8-neighbor of object `a`, relocating `a`
/// if its neighborhood is full.
fn place_adjacent(
    objects: &mut [ObjectSpec],
    a: usize,
    b: usize,
    grid: (usize, usize),
    rng: &mut impl Rng,
) -> Result<()> {
    let (w, h) = grid;
    let mut anchors: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    anchors.shuffle(rng);
    let free = |objs: &[ObjectSpec], x: usize, y: usize| {
        objs.iter().enumerate().all(|(i, o)| i == a || i == b || o.x != x || o.y != y)
    };
    // Prefer a's sampled cell, then any other free anchor.
    let start = (objects[a].x, objects[a].y);
    anchors.retain(|&c| c != start);
    anchors.insert(0, start);
    for (ax, ay) in anchors {
        if !free(objects, ax, ay) {
            continue;
        }
        let mut nbrs = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (ax as i64 + dx, ay as i64 + dy);
                if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                    nbrs.push((nx as usize, ny as usize));
                }
            }
        }
        nbrs.shuffle(rng);
        if let Some(&(bx, by)) = nbrs.iter().find(|&&(x, y)| free(objects, x, y)) {
            objects[a].x = ax;
            objects[a].y = ay;
            objects[b].x = bx;
            objects[b].y = by;
            return Ok(());
        }
    }
    Err(Error::Config("no adjacent placement for the sticky pair".into()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `states[t + 1] = step(states[t], actions[t])`; the final action is
    /// sampled but never applied.
    pub states: Vec<SceneState>,
    pub actions: Vec<FactoredAction>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn frame(&self, t: usize, cfg: &RenderConfig) -> Frame {
        let (image, masks) = render(&self.states[t], cfg);
        Frame {
            image,
            masks,
            action: self.actions[t],
            state: self.states[t].clone(),
        }
    }

    /// Replays the stored actions; `true` when every state is reproduced.
    pub fn replay_consistent(&self, mode: DynamicsMode) -> bool {
        self.states
            .windows(2)
            .zip(&self.actions)
            .all(|(w, &a)| step(&w[0], a, mode) == w[1])
    }
}

pub fn sample_trajectory(cfg: &SceneConfig, length: usize, seed: u64) -> Result<Trajectory> {
    if length < 2 {
        return Err(Error::Config("trajectory length must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sample_scene_with(cfg, &mut rng)?;
    let mut states = Vec::with_capacity(length);
    let mut actions = Vec::with_capacity(length);
    for t in 0..length {
        let a = FactoredAction::from_index(rng.gen_range(0..cfg.k * 4));
        states.push(state.clone());
        actions.push(a);
        if t + 1 < length {
            state = step(&state, a, cfg.mode);
        }
    }
    Ok(Trajectory { states, actions })
}

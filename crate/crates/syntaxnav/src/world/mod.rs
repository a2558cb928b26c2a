//! Synthetic viewpoint-graph worlds: grid environments with 36-slice
//! panoramas, navigable candidate sets, a shortest-path teacher, and the
//! template instruction generator.
//!
//! One artifact directory holds several landmark layouts ("worlds") over
//! the same grid geometry; training and seen-validation episodes live in
//! the train layouts, unseen-validation episodes in layouts whose landmark
//! arrangement was never trained on.

mod gen;
mod io;
mod lang;

pub use gen::{generate_world, WorldConfig, WorldSet, DEFAULT_LANDMARKS};
pub use io::{load_world, save_world, EPISODES_FILE, WORLD_FILE};
pub use io::{EPISODE_FORMAT as EPISODE_FORMAT_NAME, WORLD_FORMAT as WORLD_FORMAT_NAME};
pub use lang::generate_instruction;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::treeio::DependencyTree;

pub const SLICE_COUNT: usize = 36;
pub const HEADING_SLICES: usize = 12;
pub const ELEVATION_ROWS: usize = 3;
pub const ORIENTATION_DIM: usize = 4;
/// Grid spacing in meters; with a 3 m success radius this separates
/// "adjacent to goal" (2 m, success) from "two away" (4 m, failure).
pub const EDGE_LEN: f64 = 2.0;
/// Landmark feature noise per world.
pub const FEATURE_NOISE_SIGMA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid config: {reason}")]
    ConfigInvalid { reason: String },
    #[error("unknown viewpoint {id:?}")]
    UnknownViewpoint { id: String },
    #[error("unknown world {id:?}")]
    UnknownWorld { id: String },
    #[error("episode already done")]
    AlreadyDone,
    #[error("action {action} out of range for {k} candidates")]
    ActionOutOfRange { action: usize, k: usize },
    #[error("no path from {from:?} to {to:?}")]
    Unreachable { from: String, to: String },
    #[error("path too short for an instruction (need >= 2 viewpoints)")]
    PathTooShort,
    #[error("no template for path: {reason}")]
    NoTemplateForPath { reason: String },
    #[error("world artifact invalid: {0}")]
    Format(String),
    #[error(transparent)]
    Tree(#[from] crate::treeio::TreeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldSplit {
    Train,
    Unseen,
}

impl WorldSplit {
    pub fn as_str(&self) -> &'static str {
        match self {
            WorldSplit::Train => "train",
            WorldSplit::Unseen => "unseen",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(WorldSplit::Train),
            "unseen" => Some(WorldSplit::Unseen),
            _ => None,
        }
    }
}

/// Episode split tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    SeenVal,
    UnseenVal,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::SeenVal => "seen-val",
            Split::UnseenVal => "unseen-val",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "seen-val" => Some(Split::SeenVal),
            "unseen-val" => Some(Split::UnseenVal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Viewpoint {
    pub id: String,
    pub pos: [f64; 3],
    /// The landmark at this viewpoint, named by instructions.
    pub landmark: String,
    /// 36 slice tags in absolute orientation: index = elevation_row * 12 +
    /// heading_index, heading 0 along +x, elevation rows at -30/0/+30 deg.
    pub slices: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct WorldEdge {
    pub a: String,
    pub b: String,
    pub len: f64,
}

/// One landmark layout over the grid geometry, with derived navigation and
/// feature tables. Immutable after construction.
#[derive(Debug)]
pub struct EnvironmentGraph {
    pub id: String,
    pub split: WorldSplit,
    pub noise_seed: u64,
    pub feature_dim: usize,
    viewpoints: Vec<Viewpoint>,
    index: BTreeMap<String, usize>,
    edges: Vec<WorldEdge>,
    /// Sorted neighbor list per viewpoint: (index, length, edge angle).
    adjacency: Vec<Vec<(usize, f64, f64)>>,
    /// All-pairs shortest-path metric distances.
    dist: Vec<Vec<f64>>,
    /// Noise-applied base feature per viewpoint landmark.
    landmark_features: Vec<Vec<f64>>,
    /// Noise-applied base feature per viewpoint slice.
    slice_features: Vec<Vec<Vec<f64>>>,
}

/// Deterministic unit-ish direction for a landmark tag; identical across
/// worlds so the same landmark always projects the same way.
pub fn tag_direction(tag: &str, dim: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let seed = crate::nnmath::fnv1a64(tag.as_bytes());
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn gaussian(rng: &mut impl rand::Rng) -> f64 {
    // Box-Muller; both uniforms drawn unconditionally for determinism.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn noisy_feature(tag: &str, dim: usize, noise_seed: u64, vp: usize, channel: usize) -> Vec<f64> {
    use rand::SeedableRng;
    let mut v = tag_direction(tag, dim);
    let mix = crate::nnmath::fnv1a64(
        format!("{noise_seed}/{vp}/{channel}").as_bytes(),
    );
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(mix);
    for x in &mut v {
        *x += FEATURE_NOISE_SIGMA * gaussian(&mut rng);
    }
    v
}

impl EnvironmentGraph {
    /// Builds the derived tables and checks every invariant.
    pub fn from_parts(
        id: String,
        split: WorldSplit,
        noise_seed: u64,
        feature_dim: usize,
        viewpoints: Vec<Viewpoint>,
        edges: Vec<WorldEdge>,
    ) -> Result<Self, WorldError> {
        if viewpoints.is_empty() {
            return Err(WorldError::Format("world has no viewpoints".into()));
        }
        let mut vps = viewpoints;
        vps.sort_by(|a, b| a.id.cmp(&b.id));
        let index: BTreeMap<String, usize> =
            vps.iter().enumerate().map(|(i, v)| (v.id.clone(), i)).collect();
        if index.len() != vps.len() {
            return Err(WorldError::Format("duplicate viewpoint ids".into()));
        }
        for v in &vps {
            if v.slices.len() != SLICE_COUNT {
                return Err(WorldError::Format(format!(
                    "viewpoint {} has {} slices, expected {SLICE_COUNT}",
                    v.id,
                    v.slices.len()
                )));
            }
        }

        let mut adjacency: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); vps.len()];
        for e in &edges {
            let ia = *index.get(&e.a).ok_or_else(|| WorldError::UnknownViewpoint {
                id: e.a.clone(),
            })?;
            let ib = *index.get(&e.b).ok_or_else(|| WorldError::UnknownViewpoint {
                id: e.b.clone(),
            })?;
            if e.len <= 0.0 {
                return Err(WorldError::Format(format!(
                    "edge {}-{} has non-positive length",
                    e.a, e.b
                )));
            }
            let (pa, pb) = (vps[ia].pos, vps[ib].pos);
            let euclid = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)
                + (pa[2] - pb[2]).powi(2))
            .sqrt();
            if (euclid - e.len).abs() > 1e-9 {
                return Err(WorldError::Format(format!(
                    "edge {}-{} length {} inconsistent with positions ({euclid})",
                    e.a, e.b, e.len
                )));
            }
            let angle_ab = (pb[1] - pa[1]).atan2(pb[0] - pa[0]);
            let angle_ba = (pa[1] - pb[1]).atan2(pa[0] - pb[0]);
            adjacency[ia].push((ib, e.len, angle_ab));
            adjacency[ib].push((ia, e.len, angle_ba));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| x.0.cmp(&y.0));
        }

        // All-pairs metric distances via Dijkstra from every source.
        let n = vps.len();
        let mut dist = vec![vec![f64::INFINITY; n]; n];
        for (s, row) in dist.iter_mut().enumerate() {
            dijkstra(&adjacency, s, row);
        }
        if dist.iter().flatten().any(|d| !d.is_finite()) {
            return Err(WorldError::Format("graph is not connected".into()));
        }

        let landmark_features = vps
            .iter()
            .enumerate()
            .map(|(i, v)| noisy_feature(&v.landmark, feature_dim, noise_seed, i, usize::MAX))
            .collect();
        let slice_features = vps
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.slices
                    .iter()
                    .enumerate()
                    .map(|(p, tag)| noisy_feature(tag, feature_dim, noise_seed, i, p))
                    .collect()
            })
            .collect();

        Ok(EnvironmentGraph {
            id,
            split,
            noise_seed,
            feature_dim,
            viewpoints: vps,
            index,
            edges,
            adjacency,
            dist,
            landmark_features,
            slice_features,
        })
    }

    pub fn viewpoint_count(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn edges(&self) -> &[WorldEdge] {
        &self.edges
    }

    pub fn viewpoint_ids(&self) -> impl Iterator<Item = &str> {
        self.viewpoints.iter().map(|v| v.id.as_str())
    }

    fn idx(&self, id: &str) -> Result<usize, WorldError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| WorldError::UnknownViewpoint { id: id.to_string() })
    }

    pub fn viewpoint(&self, id: &str) -> Result<&Viewpoint, WorldError> {
        Ok(&self.viewpoints[self.idx(id)?])
    }

    pub fn landmark(&self, id: &str) -> Result<&str, WorldError> {
        Ok(self.viewpoint(id)?.landmark.as_str())
    }

    pub fn degree(&self, id: &str) -> Result<usize, WorldError> {
        Ok(self.adjacency[self.idx(id)?].len())
    }

    /// Metric (shortest-path) distance in meters.
    pub fn distance(&self, a: &str, b: &str) -> Result<f64, WorldError> {
        Ok(self.dist[self.idx(a)?][self.idx(b)?])
    }

    /// Total metric length of a viewpoint path.
    pub fn path_length(&self, path: &[String]) -> Result<f64, WorldError> {
        let mut total = 0.0;
        for pair in path.windows(2) {
            total += self.distance(&pair[0], &pair[1])?;
        }
        Ok(total)
    }

    /// Minimal-length path with a deterministic tie-break: walk from the
    /// start, always entering the smallest-id neighbor that stays on a
    /// shortest path to the goal.
    pub fn shortest_path(&self, a: &str, b: &str) -> Result<(Vec<String>, f64), WorldError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let total = self.dist[ia][ib];
        if !total.is_finite() {
            return Err(WorldError::Unreachable {
                from: a.to_string(),
                to: b.to_string(),
            });
        }
        let mut path = vec![a.to_string()];
        let mut cur = ia;
        while cur != ib {
            let next = self.next_hop(cur, ib);
            path.push(self.viewpoints[next].id.clone());
            cur = next;
        }
        Ok((path, total))
    }

    /// Smallest-id neighbor on a shortest path toward the goal index.
    fn next_hop(&self, cur: usize, goal: usize) -> usize {
        let d_cur = self.dist[cur][goal];
        for (n, len, _) in &self.adjacency[cur] {
            if (len + self.dist[*n][goal] - d_cur).abs() < 1e-9 {
                return *n;
            }
        }
        unreachable!("connected graph always has a next hop");
    }

    /// True when the edge (a, b) exists.
    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        match (self.idx(a), self.idx(b)) {
            (Ok(ia), Ok(ib)) => self.adjacency[ia].iter().any(|(n, _, _)| *n == ib),
            _ => false,
        }
    }

    fn heading_index(heading: f64) -> usize {
        let sector = std::f64::consts::TAU / HEADING_SLICES as f64;
        let mut h = (heading / sector).round() as i64 % HEADING_SLICES as i64;
        if h < 0 {
            h += HEADING_SLICES as i64;
        }
        h as usize
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64, f64)>], source: usize, dist: &mut [f64]) {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
        }
    }

    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Entry(0.0, source)));
    while let Some(Reverse(Entry(d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for (v, len, _) in &adjacency[u] {
            let nd = d + len;
            if nd < dist[*v] {
                dist[*v] = nd;
                heap.push(Reverse(Entry(nd, *v)));
            }
        }
    }
}

/// Agent pose inside one world. `done` is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub viewpoint: String,
    pub heading: f64,
    pub step: usize,
    pub done: bool,
}

impl NavState {
    pub fn start(viewpoint: &str, heading: f64) -> Self {
        NavState {
            viewpoint: viewpoint.to_string(),
            heading,
            step: 0,
            done: false,
        }
    }
}

/// A navigable location the agent can pick; `viewpoint == None` is STOP.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub viewpoint: Option<String>,
    /// Base feature of the neighbor's landmark plus the 4-wide orientation
    /// block, or the constant STOP encoding.
    pub feature: Vec<f64>,
}

impl Candidate {
    pub fn is_stop(&self) -> bool {
        self.viewpoint.is_none()
    }
    pub fn label(&self) -> &str {
        self.viewpoint.as_deref().unwrap_or("STOP")
    }
}

/// The 36-slice discretized view at the current pose: slice features are
/// rotated so heading slice 0 looks straight ahead, and each carries the
/// (cos, sin) of its relative heading and elevation.
#[derive(Debug, Clone)]
pub struct PanoramaView {
    pub slices: Vec<Vec<f64>>,
}

const ELEVATION_ANGLES: [f64; ELEVATION_ROWS] = [
    -std::f64::consts::FRAC_PI_6,
    0.0,
    std::f64::consts::FRAC_PI_6,
];

/// Panorama and candidate set at a pose. K = degree + 1: every neighbor
/// plus the STOP candidate (zero base feature, orientation (1, 0, 1, 0)).
pub fn panorama(
    graph: &EnvironmentGraph,
    state: &NavState,
) -> Result<(PanoramaView, Vec<Candidate>), WorldError> {
    let vp = graph.idx(&state.viewpoint)?;
    let h0 = EnvironmentGraph::heading_index(state.heading);
    let sector = std::f64::consts::TAU / HEADING_SLICES as f64;

    let mut slices = Vec::with_capacity(SLICE_COUNT);
    for (row, phi) in ELEVATION_ANGLES.iter().enumerate() {
        for rel in 0..HEADING_SLICES {
            let abs = (rel + h0) % HEADING_SLICES;
            let theta = rel as f64 * sector;
            let mut f = graph.slice_features[vp][row * HEADING_SLICES + abs].clone();
            f.extend_from_slice(&[theta.cos(), theta.sin(), phi.cos(), phi.sin()]);
            slices.push(f);
        }
    }

    let mut candidates = Vec::with_capacity(graph.adjacency[vp].len() + 1);
    for (n, _, angle) in &graph.adjacency[vp] {
        let rel = angle - state.heading;
        let mut f = graph.landmark_features[*n].clone();
        f.extend_from_slice(&[rel.cos(), rel.sin(), 1.0, 0.0]);
        candidates.push(Candidate {
            viewpoint: Some(graph.viewpoints[*n].id.clone()),
            feature: f,
        });
    }
    let mut stop = vec![0.0; graph.feature_dim];
    stop.extend_from_slice(&[1.0, 0.0, 1.0, 0.0]);
    candidates.push(Candidate {
        viewpoint: None,
        feature: stop,
    });

    Ok((PanoramaView { slices }, candidates))
}

/// Executes a candidate choice. STOP (or reaching `max_len` steps) sets the
/// absorbing done flag; moves update pose and heading along the edge.
pub fn step(
    graph: &EnvironmentGraph,
    state: &NavState,
    action: usize,
    max_len: usize,
) -> Result<NavState, WorldError> {
    if state.done {
        return Err(WorldError::AlreadyDone);
    }
    let vp = graph.idx(&state.viewpoint)?;
    let k = graph.adjacency[vp].len() + 1;
    if action >= k {
        return Err(WorldError::ActionOutOfRange { action, k });
    }
    let mut next = state.clone();
    next.step += 1;
    if action == k - 1 {
        // STOP: position unchanged.
        next.done = true;
        return Ok(next);
    }
    let (n, _, angle) = graph.adjacency[vp][action];
    next.viewpoint = graph.viewpoints[n].id.clone();
    next.heading = angle;
    if next.step >= max_len {
        next.done = true;
    }
    Ok(next)
}

/// Index of the candidate the shortest-path teacher picks: the next hop
/// toward the goal, or STOP when already there.
pub fn teacher_action(
    graph: &EnvironmentGraph,
    state: &NavState,
    goal: &str,
) -> Result<usize, WorldError> {
    let vp = graph.idx(&state.viewpoint)?;
    let ig = graph.idx(goal)?;
    let k = graph.adjacency[vp].len() + 1;
    if vp == ig {
        return Ok(k - 1);
    }
    if !graph.dist[vp][ig].is_finite() {
        return Err(WorldError::Unreachable {
            from: state.viewpoint.clone(),
            to: goal.to_string(),
        });
    }
    let next = graph.next_hop(vp, ig);
    let pos = graph.adjacency[vp]
        .iter()
        .position(|(n, _, _)| *n == next)
        .expect("next hop is a neighbor");
    Ok(pos)
}

/// One (instruction, tree, gold path) triple.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id: String,
    pub world: String,
    pub tokens: Vec<String>,
    pub tree: DependencyTree,
    pub path: Vec<String>,
    pub language: String,
    pub split: Split,
}

impl Episode {
    pub fn start(&self) -> &str {
        &self.path[0]
    }

    pub fn goal(&self) -> &str {
        self.path.last().unwrap()
    }

    /// Initial heading: along the first gold hop (derivable at evaluation
    /// time because metrics need the gold path anyway).
    pub fn start_heading(&self, graph: &EnvironmentGraph) -> Result<f64, WorldError> {
        if self.path.len() < 2 {
            return Ok(0.0);
        }
        let a = graph.viewpoint(&self.path[0])?.pos;
        let b = graph.viewpoint(&self.path[1])?.pos;
        Ok((b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Structural validity against its world.
    pub fn validate(&self, graph: &EnvironmentGraph) -> Result<(), WorldError> {
        if self.path.is_empty() {
            return Err(WorldError::PathTooShort);
        }
        for pair in self.path.windows(2) {
            if !graph.has_edge(&pair[0], &pair[1]) {
                return Err(WorldError::Format(format!(
                    "episode {}: missing edge {} - {}",
                    self.id, pair[0], pair[1]
                )));
            }
        }
        if self.tree.len() != self.tokens.len() {
            return Err(WorldError::Format(format!(
                "episode {}: tree has {} tokens, instruction {}",
                self.id,
                self.tree.len(),
                self.tokens.len()
            )));
        }
        crate::treeio::validate_tree(&self.tree)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn test_world() -> EnvironmentGraph {
        let cfg = WorldConfig {
            grid_w: 4,
            grid_h: 4,
            episodes: 4,
            ..WorldConfig::default()
        };
        let (set, _) = generate_world(11, &cfg).unwrap();
        set.into_worlds().next().unwrap()
    }

    #[test]
    fn grid_counts() {
        let cfg = WorldConfig {
            grid_w: 5,
            grid_h: 5,
            episodes: 1,
            ..WorldConfig::default()
        };
        let (set, _) = generate_world(3, &cfg).unwrap();
        let g = set.worlds().next().unwrap();
        assert_eq!(g.viewpoint_count(), 25);
        assert_eq!(g.edge_count(), 40);
    }

    #[test]
    fn corner_has_three_candidates_including_stop() {
        let g = test_world();
        let corner = g.viewpoint_ids().next().unwrap().to_string();
        let state = NavState::start(&corner, 0.0);
        let (pano, cands) = panorama(&g, &state).unwrap();
        assert_eq!(pano.slices.len(), SLICE_COUNT);
        assert_eq!(cands.len(), 3);
        assert!(cands.last().unwrap().is_stop());
        assert_eq!(cands[0].feature.len(), g.feature_dim + ORIENTATION_DIM);
    }

    #[test]
    fn candidate_straight_ahead_has_unit_orientation() {
        let g = test_world();
        let start = g.viewpoint("v0_0").unwrap().id.clone();
        // Heading along +x; neighbor v1_0 lies straight ahead.
        let state = NavState::start(&start, 0.0);
        let (_, cands) = panorama(&g, &state).unwrap();
        let ahead = cands
            .iter()
            .find(|c| c.viewpoint.as_deref() == Some("v1_0"))
            .unwrap();
        let d = g.feature_dim;
        let orient = &ahead.feature[d..];
        assert!((orient[0] - 1.0).abs() < 1e-12);
        assert!(orient[1].abs() < 1e-12);
        assert!((orient[2] - 1.0).abs() < 1e-12);
        assert!(orient[3].abs() < 1e-12);
    }

    #[test]
    fn stop_terminates_without_moving() {
        let g = test_world();
        let state = NavState::start("v0_0", 0.0);
        let k = g.degree("v0_0").unwrap() + 1;
        let next = step(&g, &state, k - 1, 20).unwrap();
        assert!(next.done);
        assert_eq!(next.viewpoint, "v0_0");
        assert!(matches!(
            step(&g, &next, 0, 20).unwrap_err(),
            WorldError::AlreadyDone
        ));
    }

    #[test]
    fn move_updates_pose_and_respects_max_len() {
        let g = test_world();
        let state = NavState::start("v0_0", 0.0);
        let next = step(&g, &state, 0, 35).unwrap();
        assert_ne!(next.viewpoint, "v0_0");
        assert_eq!(next.step, 1);
        assert!(!next.done);

        // Forcing done at the max episode length.
        let mut s = NavState::start("v0_0", 0.0);
        s.step = 34;
        let forced = step(&g, &s, 0, 35).unwrap();
        assert!(forced.done);
    }

    #[test]
    fn action_out_of_range_rejected() {
        let g = test_world();
        let state = NavState::start("v0_0", 0.0);
        assert!(matches!(
            step(&g, &state, 99, 20).unwrap_err(),
            WorldError::ActionOutOfRange { .. }
        ));
    }

    #[test]
    fn shortest_path_identity_and_adjacent() {
        let g = test_world();
        let (p, len) = g.shortest_path("v0_0", "v0_0").unwrap();
        assert_eq!(p, vec!["v0_0".to_string()]);
        assert_eq!(len, 0.0);
        let (p, len) = g.shortest_path("v0_0", "v1_0").unwrap();
        assert_eq!(p.len(), 2);
        assert!((len - EDGE_LEN).abs() < 1e-12);
    }

    #[test]
    fn shortest_path_matches_exhaustive_enumeration() {
        let g = test_world();
        // Brute force: enumerate all simple paths up to 6 hops.
        fn enumerate(
            g: &EnvironmentGraph,
            cur: &str,
            goal: &str,
            visited: &mut Vec<String>,
            len: f64,
            best: &mut f64,
        ) {
            if cur == goal {
                if len < *best {
                    *best = len;
                }
                return;
            }
            if visited.len() > 6 {
                return;
            }
            let ids: Vec<String> = g.viewpoint_ids().map(String::from).collect();
            for n in ids {
                if g.has_edge(cur, &n) && !visited.contains(&n) {
                    visited.push(n.clone());
                    enumerate(g, &n, goal, visited, len + g.distance(cur, &n).unwrap(), best);
                    visited.pop();
                }
            }
        }

        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let ids: Vec<String> = g.viewpoint_ids().map(String::from).collect();
        for _ in 0..10 {
            use rand::Rng;
            let a = &ids[rng.gen_range(0..ids.len())];
            let b = &ids[rng.gen_range(0..ids.len())];
            if g.distance(a, b).unwrap() > 6.0 * EDGE_LEN {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut visited = vec![a.clone()];
            enumerate(&g, a, b, &mut visited, 0.0, &mut best);
            let (_, len) = g.shortest_path(a, b).unwrap();
            assert!((len - best).abs() < 1e-9, "{a}->{b}: {len} vs {best}");
        }
    }

    #[test]
    fn teacher_reaches_goal_in_shortest_hops() {
        let g = test_world();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(6);
        let ids: Vec<String> = g.viewpoint_ids().map(String::from).collect();
        for _ in 0..20 {
            use rand::Rng;
            let a = ids[rng.gen_range(0..ids.len())].clone();
            let b = ids[rng.gen_range(0..ids.len())].clone();
            let (gold, _) = g.shortest_path(&a, &b).unwrap();
            let mut state = NavState::start(&a, 0.0);
            let mut visited = vec![a.clone()];
            for _ in 0..100 {
                let act = teacher_action(&g, &state, &b).unwrap();
                let k = g.degree(&state.viewpoint).unwrap() + 1;
                assert!(act < k);
                state = step(&g, &state, act, 100).unwrap();
                if state.done {
                    break;
                }
                visited.push(state.viewpoint.clone());
            }
            assert!(state.done);
            assert_eq!(state.viewpoint, b);
            assert_eq!(visited, gold, "teacher trajectory equals the gold path");
        }
    }

    #[test]
    fn teacher_at_goal_is_stop() {
        let g = test_world();
        let state = NavState::start("v1_1", 0.0);
        let act = teacher_action(&g, &state, "v1_1").unwrap();
        assert_eq!(act, g.degree("v1_1").unwrap());
    }

    #[test]
    fn tag_directions_are_stable_and_distinct() {
        let a = tag_direction("stairs", 16);
        let b = tag_direction("stairs", 16);
        let c = tag_direction("sofa", 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

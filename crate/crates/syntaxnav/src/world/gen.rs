//! Procedural generation of grid worlds, landmark layouts and episode
//! triples. Deterministic in the seed: identical (seed, config) produce
//! byte-identical artifacts.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::lang::generate_instruction;
use super::{
    EnvironmentGraph, Episode, Split, Viewpoint, WorldEdge, WorldError, WorldSplit, EDGE_LEN,
    HEADING_SLICES, SLICE_COUNT,
};
use crate::seeds::substream;

pub const DEFAULT_LANDMARKS: &[&str] = &[
    "stairs", "sofa", "door", "window", "table", "lamp", "plant", "mirror", "shelf", "piano",
    "fridge", "desk", "rug", "clock",
];

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    pub landmarks: Vec<String>,
    pub episodes: usize,
    /// Fraction of episodes held out for validation; half of the held-out
    /// pool stays in train layouts (seen-val), half goes to unseen layouts.
    pub unseen_fraction: f64,
    /// Base view feature width, before the 4-wide orientation block.
    pub feature_dim: usize,
    pub train_worlds: usize,
    pub unseen_worlds: usize,
    pub min_hops: usize,
    pub max_hops: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid_w: 6,
            grid_h: 6,
            landmarks: DEFAULT_LANDMARKS.iter().map(|s| s.to_string()).collect(),
            episodes: 500,
            unseen_fraction: 0.2,
            feature_dim: 16,
            train_worlds: 3,
            unseen_worlds: 1,
            min_hops: 2,
            max_hops: 6,
        }
    }
}

/// The generated artifact: several landmark layouts over one grid geometry.
#[derive(Debug)]
pub struct WorldSet {
    pub feature_dim: usize,
    worlds: Vec<EnvironmentGraph>,
}

impl WorldSet {
    pub fn new(feature_dim: usize, worlds: Vec<EnvironmentGraph>) -> Self {
        WorldSet {
            feature_dim,
            worlds,
        }
    }

    pub fn worlds(&self) -> impl Iterator<Item = &EnvironmentGraph> {
        self.worlds.iter()
    }

    pub fn into_worlds(self) -> impl Iterator<Item = EnvironmentGraph> {
        self.worlds.into_iter()
    }

    pub fn world(&self, id: &str) -> Result<&EnvironmentGraph, WorldError> {
        self.worlds
            .iter()
            .find(|w| w.id == id)
            .ok_or_else(|| WorldError::UnknownWorld { id: id.to_string() })
    }
}

fn cell_id(x: usize, y: usize) -> String {
    format!("v{x}_{y}")
}

fn validate_config(cfg: &WorldConfig) -> Result<(), WorldError> {
    let fail = |reason: &str| {
        Err(WorldError::ConfigInvalid {
            reason: reason.to_string(),
        })
    };
    if cfg.grid_w < 2 || cfg.grid_h < 2 {
        return fail("grid must be at least 2x2");
    }
    if cfg.episodes < 1 {
        return fail("episode count must be >= 1");
    }
    if !(0.0..1.0).contains(&cfg.unseen_fraction) {
        return fail("unseen fraction must be in [0, 1)");
    }
    if cfg.landmarks.len() < 4 {
        return fail("need at least 4 landmark tags");
    }
    if cfg.feature_dim < 1 {
        return fail("feature_dim must be >= 1");
    }
    if cfg.train_worlds < 1 {
        return fail("need at least one training layout");
    }
    if cfg.unseen_fraction > 0.0 && cfg.unseen_worlds < 1 {
        return fail("unseen episodes need at least one unseen layout");
    }
    if cfg.min_hops < 1 || cfg.max_hops < cfg.min_hops {
        return fail("need 1 <= min_hops <= max_hops");
    }
    let diameter = cfg.grid_w + cfg.grid_h - 2;
    if cfg.min_hops > diameter {
        return fail("min_hops exceeds the grid diameter");
    }
    Ok(())
}

/// Assigns a landmark to every cell so that no two cells within grid
/// distance 2 share a tag (falls back to any tag if the inventory is too
/// small for that guarantee).
fn assign_landmarks(cfg: &WorldConfig, rng: &mut ChaCha20Rng) -> Vec<Vec<String>> {
    let mut grid = vec![vec![String::new(); cfg.grid_h]; cfg.grid_w];
    for y in 0..cfg.grid_h {
        for x in 0..cfg.grid_w {
            let mut nearby = Vec::new();
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    if (dx.abs() + dy.abs()) > 2 || (dx == 0 && dy == 0) {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < cfg.grid_w && (ny as usize) < cfg.grid_h {
                        let tag = &grid[nx as usize][ny as usize];
                        if !tag.is_empty() {
                            nearby.push(tag.clone());
                        }
                    }
                }
            }
            let allowed: Vec<&String> = cfg
                .landmarks
                .iter()
                .filter(|t| !nearby.contains(t))
                .collect();
            let tag = if allowed.is_empty() {
                &cfg.landmarks[rng.gen_range(0..cfg.landmarks.len())]
            } else {
                allowed[rng.gen_range(0..allowed.len())]
            };
            grid[x][y] = tag.clone();
        }
    }
    grid
}

/// Slice tags in absolute orientation: the middle elevation row shows the
/// neighbor landmark in the 4 axis directions and walls elsewhere; the
/// lower and upper rows are floor and ceiling.
fn slice_tags(cfg: &WorldConfig, grid: &[Vec<String>], x: usize, y: usize) -> Vec<String> {
    let mut slices = vec!["floor".to_string(); HEADING_SLICES];
    let mut middle = vec!["wall".to_string(); HEADING_SLICES];
    // Heading index 0 = +x, 3 = +y, 6 = -x, 9 = -y.
    let neighbors: [(i64, i64, usize); 4] = [(1, 0, 0), (0, 1, 3), (-1, 0, 6), (0, -1, 9)];
    for (dx, dy, h) in neighbors {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx >= 0 && ny >= 0 && (nx as usize) < cfg.grid_w && (ny as usize) < cfg.grid_h {
            middle[h] = grid[nx as usize][ny as usize].clone();
        }
    }
    slices.extend(middle);
    slices.extend(std::iter::repeat("ceiling".to_string()).take(HEADING_SLICES));
    debug_assert_eq!(slices.len(), SLICE_COUNT);
    slices
}

fn build_world(
    seed: u64,
    cfg: &WorldConfig,
    world_index: usize,
    split: WorldSplit,
) -> Result<EnvironmentGraph, WorldError> {
    let mut rng = substream(seed, "layout", world_index as u64);
    let grid = assign_landmarks(cfg, &mut rng);
    let noise_seed = rng.gen::<u64>();

    let mut viewpoints = Vec::with_capacity(cfg.grid_w * cfg.grid_h);
    for y in 0..cfg.grid_h {
        for x in 0..cfg.grid_w {
            viewpoints.push(Viewpoint {
                id: cell_id(x, y),
                pos: [EDGE_LEN * x as f64, EDGE_LEN * y as f64, 0.0],
                landmark: grid[x][y].clone(),
                slices: slice_tags(cfg, &grid, x, y),
            });
        }
    }
    let mut edges = Vec::new();
    for y in 0..cfg.grid_h {
        for x in 0..cfg.grid_w {
            if x + 1 < cfg.grid_w {
                edges.push(WorldEdge {
                    a: cell_id(x, y),
                    b: cell_id(x + 1, y),
                    len: EDGE_LEN,
                });
            }
            if y + 1 < cfg.grid_h {
                edges.push(WorldEdge {
                    a: cell_id(x, y),
                    b: cell_id(x, y + 1),
                    len: EDGE_LEN,
                });
            }
        }
    }
    EnvironmentGraph::from_parts(
        format!("w{world_index}"),
        split,
        noise_seed,
        cfg.feature_dim,
        viewpoints,
        edges,
    )
}

fn sample_episode(
    idx: usize,
    world: &EnvironmentGraph,
    split: Split,
    cfg: &WorldConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Episode, WorldError> {
    let ids: Vec<String> = world.viewpoint_ids().map(String::from).collect();
    for _ in 0..10_000 {
        let a = &ids[rng.gen_range(0..ids.len())];
        let b = &ids[rng.gen_range(0..ids.len())];
        if a == b {
            continue;
        }
        let (path, _) = world.shortest_path(a, b)?;
        let hops = path.len() - 1;
        if hops < cfg.min_hops || hops > cfg.max_hops {
            continue;
        }
        match generate_instruction(&path, world, rng) {
            Ok((tokens, tree)) => {
                return Ok(Episode {
                    id: format!("ep{idx:05}"),
                    world: world.id.clone(),
                    tokens,
                    tree,
                    path,
                    language: "en".to_string(),
                    split,
                })
            }
            Err(WorldError::NoTemplateForPath { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(WorldError::ConfigInvalid {
        reason: "could not sample an episode within the hop bounds".to_string(),
    })
}

/// Generates the full artifact: layouts plus episode triples, split into
/// train / seen-val / unseen-val. Deterministic in (seed, config).
pub fn generate_world(
    seed: u64,
    cfg: &WorldConfig,
) -> Result<(WorldSet, Vec<Episode>), WorldError> {
    validate_config(cfg)?;

    let mut worlds = Vec::new();
    for w in 0..cfg.train_worlds {
        worlds.push(build_world(seed, cfg, w, WorldSplit::Train)?);
    }
    for w in 0..cfg.unseen_worlds {
        worlds.push(build_world(seed, cfg, cfg.train_worlds + w, WorldSplit::Unseen)?);
    }

    let held = (cfg.episodes as f64 * cfg.unseen_fraction).round() as usize;
    let train_n = cfg.episodes - held;
    let seen_val_n = held / 2;
    let unseen_val_n = held - seen_val_n;

    let train_ids: Vec<usize> = (0..worlds.len())
        .filter(|&i| worlds[i].split == WorldSplit::Train)
        .collect();
    let unseen_ids: Vec<usize> = (0..worlds.len())
        .filter(|&i| worlds[i].split == WorldSplit::Unseen)
        .collect();

    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut rng = substream(seed, "episodes", 0);
    for idx in 0..cfg.episodes {
        let (split, pool) = if idx < train_n {
            (Split::Train, &train_ids)
        } else if idx < train_n + seen_val_n {
            (Split::SeenVal, &train_ids)
        } else {
            (Split::UnseenVal, &unseen_ids)
        };
        let world = &worlds[pool[rng.gen_range(0..pool.len())]];
        episodes.push(sample_episode(idx, world, split, cfg, &mut rng)?);
    }
    debug_assert_eq!(
        episodes.iter().filter(|e| e.split == Split::UnseenVal).count(),
        unseen_val_n
    );

    let set = WorldSet::new(cfg.feature_dim, worlds);
    for ep in &episodes {
        ep.validate(set.world(&ep.world)?)?;
    }
    Ok((set, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treeio::validate_tree;

    fn small_cfg(episodes: usize) -> WorldConfig {
        WorldConfig {
            grid_w: 5,
            grid_h: 5,
            episodes,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn split_arithmetic() {
        let (_, eps) = generate_world(1, &small_cfg(500)).unwrap();
        let count = |s: Split| eps.iter().filter(|e| e.split == s).count();
        assert_eq!(count(Split::Train), 400);
        assert_eq!(count(Split::SeenVal), 50);
        assert_eq!(count(Split::UnseenVal), 50);
        // 400 train-layout vs 100 held-out episodes.
        assert_eq!(count(Split::SeenVal) + count(Split::UnseenVal), 100);
    }

    #[test]
    fn unseen_episodes_live_in_unseen_layouts() {
        let (set, eps) = generate_world(2, &small_cfg(100)).unwrap();
        for ep in &eps {
            let w = set.world(&ep.world).unwrap();
            match ep.split {
                Split::UnseenVal => assert_eq!(w.split, WorldSplit::Unseen),
                _ => assert_eq!(w.split, WorldSplit::Train),
            }
        }
    }

    #[test]
    fn every_episode_is_valid() {
        let (set, eps) = generate_world(3, &small_cfg(60)).unwrap();
        for ep in &eps {
            let w = set.world(&ep.world).unwrap();
            ep.validate(w).unwrap();
            validate_tree(&ep.tree).unwrap();
            assert_eq!(ep.path[0], ep.start());
            assert!(ep.tokens.len() >= 2);
        }
    }

    #[test]
    fn gold_paths_are_shortest(){
        let (set, eps) = generate_world(4, &small_cfg(40)).unwrap();
        for ep in &eps {
            let w = set.world(&ep.world).unwrap();
            let (gold, _) = w.shortest_path(ep.start(), ep.goal()).unwrap();
            assert_eq!(gold, ep.path);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = small_cfg(30);
        let (set1, eps1) = generate_world(9, &cfg).unwrap();
        let (set2, eps2) = generate_world(9, &cfg).unwrap();
        assert_eq!(set1.worlds().count(), set2.worlds().count());
        for (a, b) in set1.worlds().zip(set2.worlds()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.noise_seed, b.noise_seed);
            let (la, lb): (Vec<_>, Vec<_>) = (
                a.viewpoints().iter().map(|v| &v.landmark).collect(),
                b.viewpoints().iter().map(|v| &v.landmark).collect(),
            );
            assert_eq!(la, lb);
        }
        for (a, b) in eps1.iter().zip(&eps2) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.path, b.path);
        }
        // Different seeds produce different layouts.
        let (set3, _) = generate_world(10, &cfg).unwrap();
        let first = |s: &WorldSet| {
            s.worlds()
                .next()
                .unwrap()
                .viewpoints()
                .iter()
                .map(|v| v.landmark.clone())
                .collect::<Vec<_>>()
        };
        assert_ne!(first(&set1), first(&set3));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = WorldConfig {
            grid_w: 1,
            ..WorldConfig::default()
        };
        assert!(matches!(
            generate_world(0, &bad).unwrap_err(),
            WorldError::ConfigInvalid { .. }
        ));
        let bad = WorldConfig {
            episodes: 0,
            ..WorldConfig::default()
        };
        assert!(generate_world(0, &bad).is_err());
    }
}

//! On-disk formats: `world.json` (layouts, geometry, slice tags) and
//! `episodes.jsonl` (one episode per line, tree embedded as CoNLL-U).
//! Both carry a `format` version field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gen::WorldSet;
use super::{EnvironmentGraph, Episode, Split, Viewpoint, WorldEdge, WorldError, WorldSplit};
use crate::treeio::parse_conllu;

pub const WORLD_FILE: &str = "world.json";
pub const EPISODES_FILE: &str = "episodes.jsonl";

pub const WORLD_FORMAT: &str = "syntaxnav-world/1";
pub const EPISODE_FORMAT: &str = "syntaxnav-episode/1";

#[derive(Serialize, Deserialize)]
struct WorldFile {
    format: String,
    feature_dim: usize,
    worlds: Vec<WorldEntry>,
}

#[derive(Serialize, Deserialize)]
struct WorldEntry {
    id: String,
    split: String,
    noise_seed: u64,
    viewpoints: Vec<VpEntry>,
    edges: Vec<EdgeEntry>,
}

#[derive(Serialize, Deserialize)]
struct VpEntry {
    id: String,
    pos: [f64; 3],
    landmark: String,
    slices: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    a: String,
    b: String,
    len: f64,
}

#[derive(Serialize, Deserialize)]
struct EpisodeLine {
    format: String,
    id: String,
    world: String,
    instruction: Vec<String>,
    conllu: String,
    path: Vec<String>,
    language: String,
    split: String,
}

pub fn save_world(dir: &Path, set: &WorldSet, episodes: &[Episode]) -> Result<(), WorldError> {
    std::fs::create_dir_all(dir)?;
    let file = WorldFile {
        format: WORLD_FORMAT.to_string(),
        feature_dim: set.feature_dim,
        worlds: set
            .worlds()
            .map(|w| WorldEntry {
                id: w.id.clone(),
                split: w.split.as_str().to_string(),
                noise_seed: w.noise_seed,
                viewpoints: w
                    .viewpoints()
                    .iter()
                    .map(|v| VpEntry {
                        id: v.id.clone(),
                        pos: v.pos,
                        landmark: v.landmark.clone(),
                        slices: v.slices.clone(),
                    })
                    .collect(),
                edges: w
                    .edges()
                    .iter()
                    .map(|e| EdgeEntry {
                        a: e.a.clone(),
                        b: e.b.clone(),
                        len: e.len,
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(dir.join(WORLD_FILE), json)?;

    let mut lines = String::new();
    for ep in episodes {
        let line = EpisodeLine {
            format: EPISODE_FORMAT.to_string(),
            id: ep.id.clone(),
            world: ep.world.clone(),
            instruction: ep.tokens.clone(),
            conllu: ep.tree.to_conllu(),
            path: ep.path.clone(),
            language: ep.language.clone(),
            split: ep.split.as_str().to_string(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    std::fs::write(dir.join(EPISODES_FILE), lines)?;
    Ok(())
}

pub fn load_world(dir: &Path) -> Result<(WorldSet, Vec<Episode>), WorldError> {
    let world_text = std::fs::read_to_string(dir.join(WORLD_FILE))?;
    let file: WorldFile = serde_json::from_str(&world_text)?;
    if file.format != WORLD_FORMAT {
        return Err(WorldError::Format(format!(
            "unsupported world format {:?}, expected {WORLD_FORMAT:?}",
            file.format
        )));
    }
    let mut worlds = Vec::with_capacity(file.worlds.len());
    for entry in file.worlds {
        let split = WorldSplit::parse(&entry.split).ok_or_else(|| {
            WorldError::Format(format!("unknown world split {:?}", entry.split))
        })?;
        worlds.push(EnvironmentGraph::from_parts(
            entry.id,
            split,
            entry.noise_seed,
            file.feature_dim,
            entry
                .viewpoints
                .into_iter()
                .map(|v| Viewpoint {
                    id: v.id,
                    pos: v.pos,
                    landmark: v.landmark,
                    slices: v.slices,
                })
                .collect(),
            entry
                .edges
                .into_iter()
                .map(|e| WorldEdge {
                    a: e.a,
                    b: e.b,
                    len: e.len,
                })
                .collect(),
        )?);
    }
    let set = WorldSet::new(file.feature_dim, worlds);

    let ep_text = std::fs::read_to_string(dir.join(EPISODES_FILE))?;
    let mut episodes = Vec::new();
    for (no, line) in ep_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: EpisodeLine = serde_json::from_str(line)?;
        if entry.format != EPISODE_FORMAT {
            return Err(WorldError::Format(format!(
                "episodes.jsonl line {}: unsupported format {:?}",
                no + 1,
                entry.format
            )));
        }
        let trees = parse_conllu(&entry.conllu)?;
        if trees.len() != 1 {
            return Err(WorldError::Format(format!(
                "episode {}: embedded CoNLL-U must hold exactly one sentence",
                entry.id
            )));
        }
        let split = Split::parse(&entry.split).ok_or_else(|| {
            WorldError::Format(format!("unknown episode split {:?}", entry.split))
        })?;
        let ep = Episode {
            id: entry.id,
            world: entry.world,
            tokens: entry.instruction,
            tree: trees.into_iter().next().unwrap(),
            path: entry.path,
            language: entry.language,
            split,
        };
        ep.validate(set.world(&ep.world)?)?;
        episodes.push(ep);
    }
    Ok((set, episodes))
}

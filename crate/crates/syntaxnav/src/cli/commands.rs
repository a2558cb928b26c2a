//! The five subcommands. Each file-producing command writes its manifest
//! first and removes partial outputs when it fails.

use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use super::{gradsuite, RunManifest};
use crate::agent::{encode_and_rollout, register_agent_params, RolloutMode};
use crate::encoder::{EncoderKind, Vocabulary};
use crate::metrics::{evaluate, write_report_csv, write_report_json};
use crate::nnmath::{load_checkpoint, save_checkpoint, Checkpoint, ParameterSet, Tape};
use crate::seeds::substream;
use crate::training::{build_vocab, train, TrainConfig};
use crate::world::{generate_world, load_world, Split, WorldConfig, EPISODES_FILE, WORLD_FILE};

type CmdResult = Result<i32, Box<dyn Error>>;

/// Removes declared outputs unless disarmed, so failed commands leave no
/// partial artifacts behind.
struct OutputGuard {
    files: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard {
            files: Vec::new(),
            armed: true,
        }
    }
    fn track(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }
    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for f in &self.files {
                let _ = std::fs::remove_file(f);
            }
        }
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("grid must look like 6x6, got {s:?}"))?;
    let w = w.parse().map_err(|_| format!("bad grid width {w:?}"))?;
    let h = h.parse().map_err(|_| format!("bad grid height {h:?}"))?;
    Ok((w, h))
}

#[derive(Debug, Args, Serialize)]
pub struct GenWorldArgs {
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid size as WxH.
    #[arg(long, default_value = "6x6")]
    pub grid: String,
    /// Total episode count across all splits.
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    /// Fraction of episodes held out for validation.
    #[arg(long = "unseen-frac", default_value_t = 0.2)]
    pub unseen_frac: f64,
    /// Output directory for world.json + episodes.jsonl + manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Base view feature width.
    #[arg(long = "feature-dim", default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long = "train-worlds", default_value_t = 3)]
    pub train_worlds: usize,
    #[arg(long = "unseen-worlds", default_value_t = 1)]
    pub unseen_worlds: usize,
    #[arg(long = "min-hops", default_value_t = 2)]
    pub min_hops: usize,
    #[arg(long = "max-hops", default_value_t = 6)]
    pub max_hops: usize,
}

pub fn cmd_gen_world(args: &GenWorldArgs) -> CmdResult {
    let (grid_w, grid_h) = parse_grid(&args.grid)?;
    let cfg = WorldConfig {
        grid_w,
        grid_h,
        episodes: args.episodes,
        unseen_fraction: args.unseen_frac,
        feature_dim: args.feature_dim,
        train_worlds: args.train_worlds,
        unseen_worlds: args.unseen_worlds,
        min_hops: args.min_hops,
        max_hops: args.max_hops,
        ..WorldConfig::default()
    };

    let mut guard = OutputGuard::new();
    std::fs::create_dir_all(&args.out)?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::new("gen-world", args.seed, serde_json::to_value(args)?);
    manifest.outputs = vec![
        args.out.join(WORLD_FILE).display().to_string(),
        args.out.join(EPISODES_FILE).display().to_string(),
    ];
    manifest.write(&manifest_path)?;
    guard.track(&manifest_path);
    guard.track(&args.out.join(WORLD_FILE));
    guard.track(&args.out.join(EPISODES_FILE));

    let (set, episodes) = generate_world(args.seed, &cfg)?;
    crate::world::save_world(&args.out, &set, &episodes)?;
    guard.disarm();

    let counts = |s: Split| episodes.iter().filter(|e| e.split == s).count();
    println!(
        "wrote {} ({} worlds) and {} ({} episodes: {} train / {} seen-val / {} unseen-val)",
        args.out.join(WORLD_FILE).display(),
        set.worlds().count(),
        args.out.join(EPISODES_FILE).display(),
        episodes.len(),
        counts(Split::Train),
        counts(Split::SeenVal),
        counts(Split::UnseenVal),
    );
    Ok(0)
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory produced by gen-world.
    #[arg(long)]
    pub world: PathBuf,
    /// Encoder variant: tree | chain | chain2 | meanpool.
    #[arg(long, default_value = "tree")]
    pub encoder: String,
    /// Config preset: desk | paper.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Flat key=value config file; overrides the preset, flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Imitation mix weight lambda.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// RL discount factor.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Entropy weight.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "rl-weight")]
    pub rl_weight: Option<f64>,
    #[arg(long = "max-len")]
    pub max_len: Option<usize>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<u64>,
    #[arg(long = "log-every")]
    pub log_every: Option<u64>,
    /// Global-norm gradient clip (omit to disable).
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from an earlier checkpoint of the same run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Training log path (default: <out>.log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn resolve_train_config(args: &TrainArgs, feature_dim: usize) -> Result<TrainConfig, Box<dyn Error>> {
    let encoder = EncoderKind::parse(&args.encoder)
        .ok_or_else(|| format!("unknown encoder {:?} (tree|chain|chain2|meanpool)", args.encoder))?;
    let mut cfg = match args.preset.as_str() {
        "desk" => TrainConfig::desk(encoder, feature_dim),
        "paper" => TrainConfig::paper(encoder, feature_dim),
        other => return Err(format!("unknown preset {other:?} (desk|paper)").into()),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        cfg = TrainConfig::from_kv_text(&text)?;
        cfg.encoder = encoder;
        cfg.dims.feature_dim = feature_dim;
    }
    if let Some(v) = args.iters {
        cfg.iterations = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma_disc = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.rl_weight {
        cfg.rl_weight = v;
    }
    if let Some(v) = args.max_len {
        cfg.max_len = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.log_every {
        cfg.log_every = v;
    }
    if args.clip.is_some() {
        cfg.clip = args.clip;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let (set, episodes) = load_world(&args.world)?;
    let cfg = resolve_train_config(args, set.feature_dim)?;

    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.jsonl", args.out.display())));
    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out.display()));

    let mut guard = OutputGuard::new();
    let mut manifest = RunManifest::new("train", args.seed, serde_json::to_value(args)?);
    manifest.inputs = vec![args.world.display().to_string()];
    manifest.outputs = vec![
        args.out.display().to_string(),
        log_path.display().to_string(),
    ];
    manifest.write(&manifest_path)?;
    guard.track(&manifest_path);
    guard.track(&args.out);
    guard.track(&log_path);

    let resume = match &args.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };

    let mut log_file = std::fs::File::create(&log_path)?;
    let mut log_err: Option<std::io::Error> = None;
    let ckpt = train(&set, &episodes, &cfg, args.seed, resume, |line| {
        if log_err.is_none() {
            let r = serde_json::to_writer(&mut log_file, line)
                .map_err(std::io::Error::from)
                .and_then(|_| writeln!(log_file));
            if let Err(e) = r {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    save_checkpoint(&args.out, &ckpt)?;
    guard.disarm();
    println!(
        "trained {} for {} iterations -> {}",
        cfg.encoder,
        cfg.iterations,
        args.out.display()
    );
    Ok(0)
}

/// Model sanity: the checkpoint's recorded encoder variant must match the
/// parameters actually present.
fn verify_encoder_params(params: &ParameterSet, kind: EncoderKind) -> Result<(), String> {
    let has_tree = params.get("encoder.treelstm.w_i").is_some();
    let has_second = params.get("encoder.bilstm2.fwd.w_x").is_some();
    let ok = match kind {
        EncoderKind::Tree => has_tree && !has_second,
        EncoderKind::Chain2 => has_second && !has_tree,
        EncoderKind::Chain | EncoderKind::MeanPool => !has_tree && !has_second,
    };
    if ok {
        Ok(())
    } else {
        Err(format!(
            "checkpoint header says encoder {kind} but the stored parameters disagree"
        ))
    }
}

fn split_of(s: &str) -> Result<Option<Split>, String> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "seen" => Ok(Some(Split::SeenVal)),
        "unseen" => Ok(Some(Split::UnseenVal)),
        "all" => Ok(None),
        other => Err(format!("unknown split {other:?} (train|seen|unseen|all)")),
    }
}

/// Loads a checkpoint, or builds the teacher-replay pseudo-checkpoint when
/// the sentinel "teacher" is given.
fn load_model(
    ckpt_arg: &str,
    set: &crate::world::WorldSet,
    episodes: &[crate::world::Episode],
) -> Result<(Checkpoint, TrainConfig, bool), Box<dyn Error>> {
    if ckpt_arg == "teacher" {
        let cfg = TrainConfig::desk(EncoderKind::Tree, set.feature_dim);
        let vocab = build_vocab(episodes);
        let mut params = ParameterSet::new();
        let mut rng = substream(0, "teacher-replay", 0);
        register_agent_params(&mut params, cfg.encoder, &cfg.dims, vocab.len(), &mut rng)?;
        let ckpt = Checkpoint {
            seed: 0,
            iteration: 0,
            config_text: cfg.to_kv_text(),
            vocab: vocab.tokens().to_vec(),
            params,
        };
        return Ok((ckpt, cfg, true));
    }
    let ckpt = load_checkpoint(Path::new(ckpt_arg))?;
    let cfg = TrainConfig::from_kv_text(&ckpt.config_text)?;
    if cfg.dims.feature_dim != set.feature_dim {
        return Err(format!(
            "checkpoint expects feature_dim {} but the world has {}",
            cfg.dims.feature_dim, set.feature_dim
        )
        .into());
    }
    verify_encoder_params(&ckpt.params, cfg.encoder)?;
    Ok((ckpt, cfg, false))
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// Checkpoint path, or "teacher" for the shortest-path replay upper
    /// bound.
    #[arg(long)]
    pub ckpt: String,
    /// Episode split: train | seen | unseen | all.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Report output path (.json; a .csv sibling is written too).
    #[arg(long)]
    pub report: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let (set, episodes) = load_world(&args.world)?;
    let split = split_of(&args.split)?;
    let (ckpt, cfg, teacher) = load_model(&args.ckpt, &set, &episodes)?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());

    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.report.display()));
    let csv_path = args.report.with_extension("csv");
    let mut guard = OutputGuard::new();
    let mut manifest = RunManifest::new("eval", ckpt.seed, serde_json::to_value(args)?);
    manifest.inputs = vec![args.world.display().to_string(), args.ckpt.clone()];
    manifest.outputs = vec![
        args.report.display().to_string(),
        csv_path.display().to_string(),
    ];
    manifest.write(&manifest_path)?;
    guard.track(&manifest_path);
    guard.track(&args.report);
    guard.track(&csv_path);

    let subset: Vec<crate::world::Episode> = episodes
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .cloned()
        .collect();
    if subset.is_empty() {
        return Err(format!("no episodes in split {:?}", args.split).into());
    }

    let mut trajectories = Vec::with_capacity(subset.len());
    if teacher {
        for ep in &subset {
            let graph = set.world(&ep.world)?;
            let mut tape = Tape::new();
            let (_, roll) = encode_and_rollout(
                &mut tape,
                &ckpt.params,
                &cfg.dims,
                cfg.encoder,
                &vocab,
                graph,
                ep,
                RolloutMode::Teacher,
                cfg.max_len,
            )?;
            trajectories.push(roll.trajectory);
        }
    } else {
        trajectories =
            crate::training::greedy_trajectories(&ckpt.params, &set, &subset, &vocab, &cfg)?;
    }

    let report = evaluate(|e| set.world(&e.world), &subset, &trajectories)?;
    write_report_json(&args.report, &report)?;
    write_report_csv(&csv_path, &report)?;
    guard.disarm();

    for a in &report.aggregates {
        println!(
            "{}: n={} SR={:.1}% SPL={:.3} nDTW={:.3} sDTW={:.3} CLS={:.3}",
            a.split,
            a.episodes,
            100.0 * a.sr,
            a.spl,
            a.ndtw,
            a.sdtw,
            a.cls
        );
    }
    Ok(0)
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub ckpt: String,
    /// Episode id, e.g. ep00012.
    #[arg(long)]
    pub episode: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TraceNode {
    id: usize,
    token: Option<usize>,
    form: Option<String>,
}

#[derive(Serialize)]
struct TraceAction {
    candidate: String,
    prob: f64,
}

#[derive(Serialize)]
struct TraceStep {
    viewpoint: String,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    actions: Vec<TraceAction>,
    chosen: usize,
}

#[derive(Serialize)]
struct TraceFile {
    format: String,
    episode_id: String,
    tokens: Vec<String>,
    nodes: Vec<TraceNode>,
    steps: Vec<TraceStep>,
}

pub fn cmd_trace(args: &TraceArgs) -> CmdResult {
    let (set, episodes) = load_world(&args.world)?;
    let episode = episodes
        .iter()
        .find(|e| e.id == args.episode)
        .ok_or_else(|| format!("unknown episode {:?}", args.episode))?;
    let (ckpt, cfg, teacher) = load_model(&args.ckpt, &set, &episodes)?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());
    let graph = set.world(&episode.world)?;

    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out.display()));
    let mut guard = OutputGuard::new();
    let mut manifest = RunManifest::new("trace", ckpt.seed, serde_json::to_value(args)?);
    manifest.inputs = vec![args.world.display().to_string(), args.ckpt.clone()];
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.write(&manifest_path)?;
    guard.track(&manifest_path);
    guard.track(&args.out);

    let mut tape = Tape::new();
    let mode = if teacher {
        RolloutMode::Teacher
    } else {
        RolloutMode::Greedy
    };
    let (encoding, roll) = encode_and_rollout(
        &mut tape,
        &ckpt.params,
        &cfg.dims,
        cfg.encoder,
        &vocab,
        graph,
        episode,
        mode,
        cfg.max_len,
    )?;

    let trace = TraceFile {
        format: "syntaxnav-trace/1".to_string(),
        episode_id: episode.id.clone(),
        tokens: episode.tokens.clone(),
        nodes: encoding
            .node_token
            .iter()
            .enumerate()
            .map(|(id, token)| TraceNode {
                id,
                token: *token,
                form: token.map(|t| episode.tokens[t - 1].clone()),
            })
            .collect(),
        steps: roll
            .steps
            .iter()
            .map(|s| TraceStep {
                viewpoint: s.viewpoint.clone(),
                beta: s.beta.clone(),
                gamma: s.gamma.clone(),
                actions: s
                    .candidates
                    .iter()
                    .zip(&s.probs)
                    .map(|(c, p)| TraceAction {
                        candidate: c.clone(),
                        prob: *p,
                    })
                    .collect(),
                chosen: s.chosen,
            })
            .collect(),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&trace)?)?;
    guard.disarm();
    println!(
        "traced {} steps of {} -> {}",
        trace.steps.len(),
        episode.id,
        args.out.display()
    );
    Ok(0)
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Random seeds per submodule.
    #[arg(long, default_value_t = 20)]
    pub seeds: u32,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CmdResult {
    let rows = gradsuite::run_suite(args.seed, args.eps, args.seeds)?;
    let mut all_pass = true;
    println!("{:<16} {:>14}  status", "submodule", "max_rel_err");
    for row in &rows {
        let ok = row.pass();
        all_pass &= ok;
        println!(
            "{:<16} {:>14.3e}  {}",
            row.name,
            row.max_rel_err,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}

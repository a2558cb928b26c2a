//! Mixed imitation / actor-critic training: teacher-forced negative
//! log-likelihood, sampled policy-gradient with a learned value baseline
//! and entropy regularization, combined as (L_RL + L_V) + lambda * L_IL.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::agent::{
    encode_and_rollout, register_agent_params, AgentError, ModelDims, Rollout, RolloutMode,
};
use crate::encoder::{EncoderDims, EncoderKind, Vocabulary};
use crate::metrics::{evaluate, MetricsError, TrajectoryReport};
use crate::nnmath::{
    rmsprop_step, Checkpoint, MathError, ParameterSet, RmsPropConfig, Tape, Tensor, ValId,
};
use crate::seeds::substream;
use crate::world::{Episode, EnvironmentGraph, Split, WorldError, WorldSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("reward/return/baseline lengths disagree: {0}")]
    LengthMismatch(String),
    #[error("invalid training config: {0}")]
    ConfigInvalid(String),
}

/// Everything a training run needs, serializable to the flat key=value
/// text echoed into checkpoint headers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub dims: ModelDims,
    /// Imitation mix weight.
    pub lambda: f64,
    /// RL discount factor (the spec's gamma_disc, distinct from the
    /// language attention weights).
    pub gamma_disc: f64,
    /// Entropy regularization weight.
    pub eta: f64,
    pub lr: f64,
    pub rho: f64,
    pub opt_eps: f64,
    pub clip: Option<f64>,
    pub batch: usize,
    pub iterations: u64,
    pub max_len: usize,
    /// Gradient weight on the RL terms; 0 skips the sampled pass entirely
    /// (pure imitation).
    pub rl_weight: f64,
    pub eval_every: u64,
    pub log_every: u64,
    pub success_radius: f64,
}

impl TrainConfig {
    /// Desk-scale defaults: small widths, batch 8, 3000 iterations,
    /// max length 20.
    pub fn desk(encoder: EncoderKind, feature_dim: usize) -> Self {
        TrainConfig {
            encoder,
            dims: ModelDims::desk(feature_dim),
            lambda: 0.2,
            gamma_disc: 0.9,
            eta: 0.01,
            lr: 1e-3,
            rho: 0.9,
            opt_eps: 1e-8,
            clip: None,
            batch: 8,
            iterations: 3000,
            max_len: 20,
            rl_weight: 1.0,
            eval_every: 0,
            log_every: 50,
            success_radius: 3.0,
        }
    }

    /// Reference presets: learning rate 1e-4, batch 64, 80k iterations,
    /// max action length 35.
    pub fn paper(encoder: EncoderKind, feature_dim: usize) -> Self {
        TrainConfig {
            dims: ModelDims::paper(feature_dim),
            lr: 1e-4,
            batch: 64,
            iterations: 80_000,
            max_len: 35,
            ..TrainConfig::desk(encoder, feature_dim)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda < 0.0 {
            return Err(TrainError::ConfigInvalid("lambda must be >= 0".into()));
        }
        if !(self.gamma_disc > 0.0 && self.gamma_disc <= 1.0) {
            return Err(TrainError::ConfigInvalid(
                "gamma_disc must be in (0, 1]".into(),
            ));
        }
        if self.eta < 0.0 {
            return Err(TrainError::ConfigInvalid("eta must be >= 0".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::ConfigInvalid("batch must be >= 1".into()));
        }
        if self.rl_weight < 0.0 {
            return Err(TrainError::ConfigInvalid("rl_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let clip = match self.clip {
            Some(c) => format!("{c}"),
            None => "none".to_string(),
        };
        format!(
            "encoder = {}\nembed_dim = {}\nbilstm_hidden = {}\ndecoder_hidden = {}\n\
             action_embed = {}\nfeature_dim = {}\nlambda = {}\ngamma_disc = {}\neta = {}\n\
             lr = {}\nrho = {}\nopt_eps = {}\nclip = {}\nbatch = {}\niterations = {}\n\
             max_len = {}\nrl_weight = {}\neval_every = {}\nlog_every = {}\nsuccess_radius = {}\n",
            self.encoder,
            self.dims.encoder.embed,
            self.dims.encoder.bilstm_hidden,
            self.dims.decoder_hidden,
            self.dims.action_embed,
            self.dims.feature_dim,
            self.lambda,
            self.gamma_disc,
            self.eta,
            self.lr,
            self.rho,
            self.opt_eps,
            clip,
            self.batch,
            self.iterations,
            self.max_len,
            self.rl_weight,
            self.eval_every,
            self.log_every,
            self.success_radius,
        )
    }

    pub fn from_kv_text(text: &str) -> Result<Self, TrainError> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TrainError::ConfigInvalid(format!("line {}: expected key = value", no + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| TrainError::ConfigInvalid(format!("missing key {k:?}")))
        };
        let f = |k: &str| -> Result<f64, TrainError> {
            get(k)?
                .parse()
                .map_err(|_| TrainError::ConfigInvalid(format!("bad float for {k:?}")))
        };
        let n = |k: &str| -> Result<usize, TrainError> {
            get(k)?
                .parse()
                .map_err(|_| TrainError::ConfigInvalid(format!("bad integer for {k:?}")))
        };
        let encoder = EncoderKind::parse(get("encoder")?)
            .ok_or_else(|| TrainError::ConfigInvalid("unknown encoder".into()))?;
        let clip_raw = get("clip")?;
        let clip = if clip_raw == "none" {
            None
        } else {
            Some(clip_raw.parse().map_err(|_| {
                TrainError::ConfigInvalid("clip must be a float or 'none'".into())
            })?)
        };
        let cfg = TrainConfig {
            encoder,
            dims: ModelDims {
                encoder: EncoderDims {
                    embed: n("embed_dim")?,
                    bilstm_hidden: n("bilstm_hidden")?,
                },
                decoder_hidden: n("decoder_hidden")?,
                action_embed: n("action_embed")?,
                feature_dim: n("feature_dim")?,
            },
            lambda: f("lambda")?,
            gamma_disc: f("gamma_disc")?,
            eta: f("eta")?,
            lr: f("lr")?,
            rho: f("rho")?,
            opt_eps: f("opt_eps")?,
            clip,
            batch: n("batch")?,
            iterations: n("iterations")? as u64,
            max_len: n("max_len")?,
            rl_weight: f("rl_weight")?,
            eval_every: n("eval_every")? as u64,
            log_every: n("log_every")? as u64,
            success_radius: f("success_radius")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-step immediate rewards, discounted returns, value baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace {
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub baselines: Vec<f64>,
}

/// Teacher-forced imitation loss: sum over steps of the negative
/// log-probability the model assigned to the teacher action.
pub fn il_loss(tape: &mut Tape, rollout: &Rollout) -> Result<ValId, TrainError> {
    if rollout.steps.is_empty() {
        return Err(TrainError::LengthMismatch("empty rollout".into()));
    }
    let terms: Vec<ValId> = rollout
        .steps
        .iter()
        .map(|s| tape.scale(s.log_prob_teacher, -1.0))
        .collect();
    Ok(tape.add_n(&terms)?)
}

/// Immediate rewards: +1 when a move reduces metric distance to the goal,
/// -1 otherwise; the final step (STOP or forced stop) is rewarded +-3 by
/// the success radius instead.
pub fn compute_rewards(
    graph: &EnvironmentGraph,
    rollout: &Rollout,
    goal: &str,
    success_radius: f64,
) -> Result<Vec<f64>, TrainError> {
    let t_count = rollout.steps.len();
    let mut rewards = Vec::with_capacity(t_count);
    for (t, step) in rollout.steps.iter().enumerate() {
        let here = &step.viewpoint;
        let next = if t + 1 < t_count {
            &rollout.steps[t + 1].viewpoint
        } else {
            &rollout.final_viewpoint
        };
        if t == t_count - 1 {
            let final_d = graph.distance(&rollout.final_viewpoint, goal)?;
            rewards.push(if final_d < success_radius { 3.0 } else { -3.0 });
        } else {
            let before = graph.distance(here, goal)?;
            let after = graph.distance(next, goal)?;
            rewards.push(if after < before { 1.0 } else { -1.0 });
        }
    }
    Ok(rewards)
}

/// Backward recursion R_t = r_t + gamma * R_{t+1}, with R past the end 0.
pub fn discounted_returns(rewards: &[f64], gamma_disc: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma_disc * acc;
        returns[t] = acc;
    }
    returns
}

/// Policy and value losses over a sampled rollout.
///
/// Minimized form: L_RL = -sum_t (R_t - R_b_t) log p_t(a_t) - eta sum_t H_t
/// with the advantage treated as a constant (no gradient through returns or
/// the baseline), and L_V = sum_t 0.5 (R_t - V_t)^2.
pub fn rl_losses(
    tape: &mut Tape,
    rollout: &Rollout,
    returns: &[f64],
    eta: f64,
) -> Result<(ValId, ValId, RewardTrace), TrainError> {
    if returns.len() != rollout.steps.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} returns for {} steps",
            returns.len(),
            rollout.steps.len()
        )));
    }
    let mut policy_terms = Vec::with_capacity(rollout.steps.len());
    let mut value_terms = Vec::with_capacity(rollout.steps.len());
    let mut baselines = Vec::with_capacity(rollout.steps.len());
    for (step, &ret) in rollout.steps.iter().zip(returns) {
        let baseline = tape.scalar(step.value)?;
        baselines.push(baseline);
        let advantage = ret - baseline;
        policy_terms.push(tape.scale(step.log_prob_chosen, -advantage));
        policy_terms.push(tape.scale(step.entropy, -eta));
        let target = tape.constant_scalar(ret);
        let diff = tape.sub(target, step.value)?;
        let sq = tape.mul(diff, diff)?;
        value_terms.push(tape.scale(sq, 0.5));
    }
    let l_rl = tape.add_n(&policy_terms)?;
    let l_v = tape.add_n(&value_terms)?;
    let trace = RewardTrace {
        rewards: Vec::new(),
        returns: returns.to_vec(),
        baselines,
    };
    Ok((l_rl, l_v, trace))
}

/// Scalar loss report for one optimizer step. The mix identity
/// `mix = (rl + v) + lambda * il` holds exactly by construction.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepReport {
    pub il: f64,
    pub rl: f64,
    pub v: f64,
    pub mix: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogLine {
    pub iteration: u64,
    pub il: f64,
    pub rl: f64,
    pub v: f64,
    pub mix: f64,
    pub sr_seen: Option<f64>,
    pub sr_unseen: Option<f64>,
}

fn accumulate(total: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match total.get_mut(&name) {
            Some(acc) => acc.add_scaled(g.data(), 1.0),
            None => {
                total.insert(name, g);
            }
        }
    }
}

/// One optimizer step over a batch: a teacher-forced pass for L_IL and a
/// sampled pass for L_RL / L_V per episode, gradients averaged over the
/// batch, one RMSProp update.
#[allow(clippy::too_many_arguments)]
pub fn mixed_step(
    params: &mut ParameterSet,
    set: &WorldSet,
    episodes: &[Episode],
    batch: &[usize],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    seed: u64,
    iteration: u64,
) -> Result<StepReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::ConfigInvalid("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let (mut il_sum, mut rl_sum, mut v_sum) = (0.0, 0.0, 0.0);

    for &idx in batch {
        let episode = &episodes[idx];
        let graph = set.world(&episode.world)?;

        // Teacher-forced pass.
        let mut tape = Tape::new();
        let (_, teacher_roll) = encode_and_rollout(
            &mut tape,
            params,
            &cfg.dims,
            cfg.encoder,
            vocab,
            graph,
            episode,
            RolloutMode::Teacher,
            cfg.max_len,
        )?;
        let il = il_loss(&mut tape, &teacher_roll)?;
        il_sum += tape.scalar(il)?;
        if cfg.lambda > 0.0 {
            let g = tape.backward_scaled(il, cfg.lambda * scale)?;
            accumulate(&mut grads, g.param_grads(&tape));
        }

        // Sampled pass.
        if cfg.rl_weight > 0.0 {
            let mut tape = Tape::new();
            let mut rng = substream(seed, &format!("sample/{iteration}"), idx as u64);
            let (_, sampled) = encode_and_rollout(
                &mut tape,
                params,
                &cfg.dims,
                cfg.encoder,
                vocab,
                graph,
                episode,
                RolloutMode::Sample(&mut rng),
                cfg.max_len,
            )?;
            let rewards = compute_rewards(graph, &sampled, episode.goal(), cfg.success_radius)?;
            let returns = discounted_returns(&rewards, cfg.gamma_disc);
            let (l_rl, l_v, _) = rl_losses(&mut tape, &sampled, &returns, cfg.eta)?;
            rl_sum += tape.scalar(l_rl)?;
            v_sum += tape.scalar(l_v)?;
            let total = tape.add(l_rl, l_v)?;
            let g = tape.backward_scaled(total, cfg.rl_weight * scale)?;
            accumulate(&mut grads, g.param_grads(&tape));
        }
    }

    let opt = RmsPropConfig {
        lr: cfg.lr,
        rho: cfg.rho,
        eps: cfg.opt_eps,
        clip: cfg.clip,
    };
    rmsprop_step(params, &grads, &opt)?;

    let il = il_sum * scale;
    let rl = rl_sum * scale;
    let v = v_sum * scale;
    Ok(StepReport {
        il,
        rl,
        v,
        mix: (rl + v) + cfg.lambda * il,
    })
}

/// Greedy rollouts over a set of episodes, honoring SYNTAXNAV_THREADS.
pub fn greedy_trajectories(
    params: &ParameterSet,
    set: &WorldSet,
    episodes: &[Episode],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<String>>, TrainError> {
    let threads = crate::cli::worker_threads().min(episodes.len().max(1));
    if threads <= 1 {
        let mut out = Vec::with_capacity(episodes.len());
        for ep in episodes {
            out.push(greedy_one(params, set, ep, vocab, cfg)?);
        }
        return Ok(out);
    }
    let mut out: Vec<Option<Result<Vec<String>, TrainError>>> =
        (0..episodes.len()).map(|_| None).collect();
    let chunk = episodes.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (slot, eps) in out.chunks_mut(chunk).zip(episodes.chunks(chunk)) {
            scope.spawn(move || {
                for (o, ep) in slot.iter_mut().zip(eps) {
                    *o = Some(greedy_one(params, set, ep, vocab, cfg));
                }
            });
        }
    });
    out.into_iter().map(|r| r.unwrap()).collect()
}

fn greedy_one(
    params: &ParameterSet,
    set: &WorldSet,
    episode: &Episode,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<Vec<String>, TrainError> {
    let graph = set.world(&episode.world)?;
    let mut tape = Tape::new();
    let (_, roll) = encode_and_rollout(
        &mut tape,
        params,
        &cfg.dims,
        cfg.encoder,
        vocab,
        graph,
        episode,
        RolloutMode::Greedy,
        cfg.max_len,
    )?;
    Ok(roll.trajectory)
}

/// Greedy evaluation report over the episodes of one split (or all).
pub fn evaluate_split(
    params: &ParameterSet,
    set: &WorldSet,
    episodes: &[Episode],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    split: Option<Split>,
) -> Result<TrajectoryReport, TrainError> {
    let subset: Vec<Episode> = episodes
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .cloned()
        .collect();
    let trajectories = greedy_trajectories(params, set, &subset, vocab, cfg)?;
    Ok(evaluate(|e| set.world(&e.world), &subset, &trajectories)?)
}

/// Builds the vocabulary from the training split (min-count 1).
pub fn build_vocab(episodes: &[Episode]) -> Vocabulary {
    Vocabulary::build(
        episodes
            .iter()
            .filter(|e| e.split == Split::Train)
            .flat_map(|e| e.tokens.iter().map(|t| t.as_str())),
    )
}

/// Full training loop. Deterministic in (seed, config): batches and
/// sampled rollouts draw from substreams keyed by iteration and episode
/// index, so resuming from a checkpoint reproduces the uninterrupted run
/// bit for bit.
pub fn train(
    set: &WorldSet,
    episodes: &[Episode],
    cfg: &TrainConfig,
    seed: u64,
    resume: Option<Checkpoint>,
    mut on_log: impl FnMut(&TrainLogLine),
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    let train_idx: Vec<usize> = (0..episodes.len())
        .filter(|&i| episodes[i].split == Split::Train)
        .collect();
    if train_idx.is_empty() {
        return Err(TrainError::ConfigInvalid("no training episodes".into()));
    }

    let (vocab, mut params, start_iter) = match resume {
        Some(ckpt) => {
            let vocab = Vocabulary::from_tokens(ckpt.vocab);
            (vocab, ckpt.params, ckpt.iteration)
        }
        None => {
            let vocab = build_vocab(episodes);
            let mut rng = substream(seed, "init", 0);
            let mut params = ParameterSet::new();
            register_agent_params(&mut params, cfg.encoder, &cfg.dims, vocab.len(), &mut rng)?;
            (vocab, params, 0)
        }
    };

    let (mut il_acc, mut rl_acc, mut v_acc, mut count) = (0.0, 0.0, 0.0, 0u64);
    for it in start_iter..cfg.iterations {
        use rand::Rng;
        let mut rng = substream(seed, "batch", it);
        let batch: Vec<usize> = (0..cfg.batch)
            .map(|_| train_idx[rng.gen_range(0..train_idx.len())])
            .collect();
        let report = mixed_step(&mut params, set, episodes, &batch, &vocab, cfg, seed, it)?;
        il_acc += report.il;
        rl_acc += report.rl;
        v_acc += report.v;
        count += 1;

        let is_last = it + 1 == cfg.iterations;
        let log_due = cfg.log_every > 0 && (it + 1) % cfg.log_every == 0;
        let eval_due = cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0;
        if log_due || eval_due || is_last {
            let (sr_seen, sr_unseen) = if eval_due || (is_last && cfg.eval_every > 0) {
                let seen = evaluate_split(&params, set, episodes, &vocab, cfg, Some(Split::SeenVal))?;
                let unseen =
                    evaluate_split(&params, set, episodes, &vocab, cfg, Some(Split::UnseenVal))?;
                (
                    seen.aggregates.first().map(|a| a.sr),
                    unseen.aggregates.first().map(|a| a.sr),
                )
            } else {
                (None, None)
            };
            let n = count.max(1) as f64;
            let (il, rl, v) = (il_acc / n, rl_acc / n, v_acc / n);
            on_log(&TrainLogLine {
                iteration: it + 1,
                il,
                rl,
                v,
                mix: (rl + v) + cfg.lambda * il,
                sr_seen,
                sr_unseen,
            });
            il_acc = 0.0;
            rl_acc = 0.0;
            v_acc = 0.0;
            count = 0;
        }
    }

    Ok(Checkpoint {
        seed,
        iteration: cfg.iterations,
        config_text: cfg.to_kv_text(),
        vocab: vocab.tokens().to_vec(),
        params,
    })
}

//! The grounded navigation policy: panoramic attention over the 36-slice
//! view, a decoder LSTM whose recurrent input is the context-aware hidden
//! state, attention over the encoded tree nodes, context fusion, and
//! candidate scoring with an explicit STOP action.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::encoder::{
    encode_instruction, register_encoder_params, EncoderDims, EncoderError, EncoderKind,
    InstructionEncoding,
};
use crate::nnmath::{
    lease_lstm, lstm_cell, register_lstm, LstmParamIds, MathError, ParameterSet, Tape, Tensor,
    ValId,
};
use crate::treeio::EncodableTree;
use crate::world::{
    panorama, step, teacher_action, Candidate, EnvironmentGraph, Episode, NavState, WorldError,
    ORIENTATION_DIM,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("empty instruction encoding")]
    EmptyEncoding,
    #[error("no candidates to score")]
    NoCandidates,
}

/// Model widths. Every encoder variant shares the decoder geometry, so
/// checkpoints differ only in encoder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub encoder: EncoderDims,
    pub decoder_hidden: usize,
    pub action_embed: usize,
    /// Base view feature width from the world (orientation block excluded).
    pub feature_dim: usize,
}

impl ModelDims {
    /// Desk-scale defaults, sized so training converges in minutes on a CPU.
    pub fn desk(feature_dim: usize) -> Self {
        ModelDims {
            encoder: EncoderDims {
                embed: 32,
                bilstm_hidden: 16,
            },
            decoder_hidden: 32,
            action_embed: 16,
            feature_dim,
        }
    }

    /// Reference-configuration preset: embedding 256, encoder hidden 512,
    /// decoder hidden 512, action embedding 128.
    pub fn paper(feature_dim: usize) -> Self {
        ModelDims {
            encoder: EncoderDims::paper(),
            decoder_hidden: 512,
            action_embed: 128,
            feature_dim,
        }
    }

    /// Candidate / view feature width including the orientation block.
    pub fn feature_full(&self) -> usize {
        self.feature_dim + ORIENTATION_DIM
    }
}

/// Registers encoder plus decoder, attention and value-head parameters.
pub fn register_agent_params(
    params: &mut ParameterSet,
    kind: EncoderKind,
    dims: &ModelDims,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<(), MathError> {
    register_encoder_params(params, kind, &dims.encoder, vocab_size, rng)?;
    let u = dims.encoder.output();
    let h = dims.decoder_hidden;
    let f = dims.feature_full();
    params.add_matrix("decoder.w_init", h, u, rng)?;
    params.add_matrix("decoder.w_act", dims.action_embed, f, rng)?;
    register_lstm(params, "decoder.lstm", f + dims.action_embed, h, rng)?;
    params.add_matrix("decoder.w_f", f, h, rng)?;
    params.add_matrix("decoder.w_u", u, h, rng)?;
    params.add_matrix("decoder.w_m", h, u + h, rng)?;
    params.add_matrix("decoder.w_g", f, h, rng)?;
    params.add_matrix("value.w1", h, h, rng)?;
    params.insert("value.w2", Tensor::vector(vec![0.0; h]))?;
    params.add_bias("value.b1", h)?;
    Ok(())
}

/// Decoder parameters leased onto one tape.
pub struct DecoderLease {
    pub w_init: ValId,
    pub w_act: ValId,
    pub lstm: LstmParamIds,
    pub w_f: ValId,
    pub w_u: ValId,
    pub w_m: ValId,
    pub w_g: ValId,
    pub v_w1: ValId,
    pub v_b1: ValId,
    pub v_w2: ValId,
}

pub fn lease_decoder(tape: &mut Tape, params: &ParameterSet) -> Result<DecoderLease, MathError> {
    Ok(DecoderLease {
        w_init: tape.param(params, "decoder.w_init")?,
        w_act: tape.param(params, "decoder.w_act")?,
        lstm: lease_lstm(tape, params, "decoder.lstm")?,
        w_f: tape.param(params, "decoder.w_f")?,
        w_u: tape.param(params, "decoder.w_u")?,
        w_m: tape.param(params, "decoder.w_m")?,
        w_g: tape.param(params, "decoder.w_g")?,
        v_w1: tape.param(params, "value.w1")?,
        v_b1: tape.param(params, "value.b1")?,
        v_w2: tape.param(params, "value.w2")?,
    })
}

/// Decoder working state: hidden, cell, context-aware hidden, previous
/// action embedding.
#[derive(Clone, Copy)]
pub struct AgentState {
    pub h: ValId,
    pub c: ValId,
    pub h_tilde: ValId,
    pub prev_action: ValId,
}

/// Initial state: h, c and the action embedding are zero; the context
/// hidden is seeded from the encoder root state.
pub fn initial_state(
    tape: &mut Tape,
    lease: &DecoderLease,
    dims: &ModelDims,
    encoding: &InstructionEncoding,
) -> Result<AgentState, MathError> {
    let h = tape.constant_vector(vec![0.0; dims.decoder_hidden]);
    let c = tape.constant_vector(vec![0.0; dims.decoder_hidden]);
    let seed = tape.matvec(lease.w_init, encoding.root_id)?;
    let h_tilde = tape.tanh(seed);
    let prev_action = tape.constant_vector(vec![0.0; dims.action_embed]);
    Ok(AgentState {
        h,
        c,
        h_tilde,
        prev_action,
    })
}

/// Attention over the 36 view slices: weights from bilinear scores against
/// the previous context hidden, output in the convex hull of the features.
pub fn attend_panorama(
    tape: &mut Tape,
    lease: &DecoderLease,
    view_matrix: ValId,
    h_tilde_prev: ValId,
) -> Result<(ValId, ValId), AgentError> {
    let query = tape.matvec(lease.w_f, h_tilde_prev)?;
    let scores = tape.matvec(view_matrix, query)?;
    let beta = tape.softmax(scores)?;
    let attended = tape.matvec_t(view_matrix, beta)?;
    Ok((attended, beta))
}

/// One decoder LSTM step on [attended view; previous action embedding],
/// with the context-aware hidden as the recurrent input.
pub fn decode_step(
    tape: &mut Tape,
    lease: &DecoderLease,
    attended_view: ValId,
    state: &AgentState,
) -> Result<(ValId, ValId), AgentError> {
    let input = tape.concat(attended_view, state.prev_action)?;
    let (h, c) = lstm_cell(tape, input, state.h_tilde, state.c, &lease.lstm)?;
    Ok((h, c))
}

/// Attention over all encoded tree nodes.
pub fn attend_language(
    tape: &mut Tape,
    lease: &DecoderLease,
    encoding: &InstructionEncoding,
    h: ValId,
) -> Result<(ValId, ValId), AgentError> {
    if encoding.node_ids.is_empty() {
        return Err(AgentError::EmptyEncoding);
    }
    let query = tape.matvec(lease.w_u, h)?;
    let scores = tape.matvec(encoding.node_matrix, query)?;
    let gamma = tape.softmax(scores)?;
    let attended = tape.matvec_t(encoding.node_matrix, gamma)?;
    Ok((attended, gamma))
}

/// Context fusion: tanh of a linear map over [attended text; hidden].
pub fn fuse_context(
    tape: &mut Tape,
    lease: &DecoderLease,
    attended_text: ValId,
    h: ValId,
) -> Result<ValId, AgentError> {
    let joined = tape.concat(attended_text, h)?;
    let pre = tape.matvec(lease.w_m, joined)?;
    Ok(tape.tanh(pre))
}

/// Bilinear candidate scores -> (probabilities, log-probabilities).
pub fn score_actions(
    tape: &mut Tape,
    lease: &DecoderLease,
    candidate_matrix: ValId,
    h_tilde: ValId,
) -> Result<(ValId, ValId), AgentError> {
    if tape.value(candidate_matrix).rows() == 0 {
        return Err(AgentError::NoCandidates);
    }
    let query = tape.matvec(lease.w_g, h_tilde)?;
    let scores = tape.matvec(candidate_matrix, query)?;
    let probs = tape.softmax(scores)?;
    let log_probs = tape.log_softmax(scores)?;
    Ok((probs, log_probs))
}

/// Value baseline V(h) = w2 . relu(W1 h + b1).
pub fn value_baseline(
    tape: &mut Tape,
    lease: &DecoderLease,
    h: ValId,
) -> Result<ValId, AgentError> {
    let pre0 = tape.matvec(lease.v_w1, h)?;
    let pre = tape.add(pre0, lease.v_b1)?;
    let act = tape.relu(pre);
    Ok(tape.dot(lease.v_w2, act)?)
}

/// How actions are chosen during a rollout.
pub enum RolloutMode<'r> {
    /// Argmax decoding (evaluation protocol).
    Greedy,
    /// Sample from the predicted distribution (RL training).
    Sample(&'r mut ChaCha20Rng),
    /// Execute the shortest-path teacher's action, recording the model's
    /// distribution (imitation training).
    Teacher,
}

/// Everything recorded at one rollout step; the attention blocks each sum
/// to one, and the tape handles let losses reach back into the graph.
pub struct StepRecord {
    pub viewpoint: String,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub probs: Vec<f64>,
    pub candidates: Vec<String>,
    pub chosen: usize,
    pub teacher: usize,
    pub stop_chosen: bool,
    pub log_prob_chosen: ValId,
    pub log_prob_teacher: ValId,
    pub entropy: ValId,
    pub value: ValId,
}

pub struct Rollout {
    /// Viewpoints visited, starting at the episode start.
    pub trajectory: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub final_viewpoint: String,
}

fn stack_features(tape: &mut Tape, features: &[Vec<f64>]) -> ValId {
    let rows = features.len();
    let cols = features[0].len();
    let mut data = Vec::with_capacity(rows * cols);
    for f in features {
        data.extend_from_slice(f);
    }
    tape.constant(Tensor::matrix(rows, cols, data).expect("finite features"))
}

fn entropy_of(tape: &mut Tape, probs: ValId, log_probs: ValId) -> Result<ValId, MathError> {
    let plogp = tape.mul(probs, log_probs)?;
    let sum = tape.sum_vec(plogp);
    Ok(tape.scale(sum, -1.0))
}

fn pick_action(
    mode: &mut RolloutMode,
    probs: &[f64],
    teacher: usize,
) -> usize {
    match mode {
        RolloutMode::Greedy => {
            let mut best = 0;
            for (k, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = k;
                }
            }
            best
        }
        RolloutMode::Sample(rng) => {
            let draw: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    return k;
                }
            }
            probs.len() - 1
        }
        RolloutMode::Teacher => teacher,
    }
}

/// Runs one episode: encodes nothing (the encoding is passed in so its
/// gradients stay on the same tape), attends, decodes and steps until STOP
/// or the step limit.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    tape: &mut Tape,
    params: &ParameterSet,
    dims: &ModelDims,
    graph: &EnvironmentGraph,
    episode: &Episode,
    encoding: &InstructionEncoding,
    mut mode: RolloutMode,
    max_len: usize,
) -> Result<Rollout, AgentError> {
    let lease = lease_decoder(tape, params)?;
    let mut state = initial_state(tape, &lease, dims, encoding)?;
    let mut nav = NavState::start(episode.start(), episode.start_heading(graph)?);
    let goal = episode.goal();

    let mut trajectory = vec![nav.viewpoint.clone()];
    let mut steps = Vec::new();

    while !nav.done {
        let (pano, candidates) = panorama(graph, &nav)?;
        let view_matrix = stack_features(tape, &pano.slices);
        let candidate_matrix = stack_features(
            tape,
            &candidates.iter().map(|c| c.feature.clone()).collect::<Vec<_>>(),
        );

        let (f_att, beta) = attend_panorama(tape, &lease, view_matrix, state.h_tilde)?;
        let (h, c) = decode_step(tape, &lease, f_att, &state)?;
        let (u_att, gamma) = attend_language(tape, &lease, encoding, h)?;
        let h_tilde = fuse_context(tape, &lease, u_att, h)?;
        let (probs, log_probs) = score_actions(tape, &lease, candidate_matrix, h_tilde)?;
        let value = value_baseline(tape, &lease, h)?;
        let entropy = entropy_of(tape, probs, log_probs)?;

        let teacher = teacher_action(graph, &nav, goal)?;
        let prob_values = tape.value(probs).data().to_vec();
        let chosen = pick_action(&mut mode, &prob_values, teacher);
        let log_prob_chosen = tape.index(log_probs, chosen)?;
        let log_prob_teacher = tape.index(log_probs, teacher)?;

        let chosen_candidate: &Candidate = &candidates[chosen];
        let stop_chosen = chosen_candidate.is_stop();
        steps.push(StepRecord {
            viewpoint: nav.viewpoint.clone(),
            beta: tape.value(beta).data().to_vec(),
            gamma: tape.value(gamma).data().to_vec(),
            probs: prob_values,
            candidates: candidates.iter().map(|c| c.label().to_string()).collect(),
            chosen,
            teacher,
            stop_chosen,
            log_prob_chosen,
            log_prob_teacher,
            entropy,
            value,
        });

        let act_feature = tape.constant_vector(chosen_candidate.feature.clone());
        let prev_action = tape.matvec(lease.w_act, act_feature)?;
        state = AgentState {
            h,
            c,
            h_tilde,
            prev_action,
        };

        nav = step(graph, &nav, chosen, max_len)?;
        if !stop_chosen {
            trajectory.push(nav.viewpoint.clone());
        }
    }

    Ok(Rollout {
        final_viewpoint: nav.viewpoint.clone(),
        trajectory,
        steps,
    })
}

/// Convenience wrapper: encode the episode's instruction and roll out on a
/// fresh segment of the tape.
#[allow(clippy::too_many_arguments)]
pub fn encode_and_rollout(
    tape: &mut Tape,
    params: &ParameterSet,
    dims: &ModelDims,
    kind: EncoderKind,
    vocab: &crate::encoder::Vocabulary,
    graph: &EnvironmentGraph,
    episode: &Episode,
    mode: RolloutMode,
    max_len: usize,
) -> Result<(InstructionEncoding, Rollout), AgentError> {
    let ids = vocab.ids(&episode.tokens);
    let tree: &dyn EncodableTree = &episode.tree;
    let encoding = encode_instruction(tape, params, kind, &ids, tree)?;
    let rollout = rollout(tape, params, dims, graph, episode, &encoding, mode, max_len)?;
    Ok((encoding, rollout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocabulary;
    use crate::seeds::substream;
    use crate::treeio::{DependencyTree, Token};
    use crate::world::{generate_world, Split, Viewpoint, WorldConfig, WorldSplit, SLICE_COUNT};

    fn dims() -> ModelDims {
        ModelDims {
            encoder: EncoderDims {
                embed: 6,
                bilstm_hidden: 4,
            },
            decoder_hidden: 5,
            action_embed: 3,
            feature_dim: 4,
        }
    }

    fn tape_with_lease(seed: u64) -> (Tape, ParameterSet, DecoderLease) {
        let mut rng = substream(seed, "test-params", 0);
        let mut params = ParameterSet::new();
        register_agent_params(&mut params, EncoderKind::Tree, &dims(), 10, &mut rng).unwrap();
        let mut tape = Tape::new();
        let lease = lease_decoder(&mut tape, &params).unwrap();
        (tape, params, lease)
    }

    #[test]
    fn identical_views_attend_uniformly() {
        let (mut tape, _, lease) = tape_with_lease(0);
        let f = dims().feature_full();
        let feature = vec![0.3; f];
        let views: Vec<Vec<f64>> = vec![feature.clone(); SLICE_COUNT];
        let vm = stack_features(&mut tape, &views);
        let h = tape.constant_vector(vec![0.2; dims().decoder_hidden]);
        let (att, beta) = attend_panorama(&mut tape, &lease, vm, h).unwrap();
        for b in tape.value(beta).data() {
            assert!((b - 1.0 / SLICE_COUNT as f64).abs() < 1e-12);
        }
        for (a, f) in tape.value(att).data().iter().zip(&feature) {
            assert!((a - f).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_view_takes_all_attention() {
        let (mut tape, _, lease) = tape_with_lease(1);
        let fdim = dims().feature_full();
        let h = tape.constant_vector(vec![0.4; dims().decoder_hidden]);
        // Query direction in feature space.
        let q = tape.matvec(lease.w_f, h).unwrap();
        let qv = tape.value(q).data().to_vec();
        let scale = 1000.0 / qv.iter().map(|v| v * v).sum::<f64>();
        let mut views = vec![vec![0.0; fdim]; SLICE_COUNT];
        views[7] = qv.iter().map(|v| v * scale).collect();
        let vm = stack_features(&mut tape, &views);
        let (att, beta) = attend_panorama(&mut tape, &lease, vm, h).unwrap();
        let b = tape.value(beta).data();
        assert!((b[7] - 1.0).abs() < 1e-9);
        for (a, f) in tape.value(att).data().iter().zip(&views[7]) {
            assert!((a - f).abs() < 1e-6);
        }
    }

    #[test]
    fn attended_view_is_exact_convex_combination() {
        let (mut tape, _, lease) = tape_with_lease(2);
        let fdim = dims().feature_full();
        let mut rng = substream(9, "views", 0);
        let views: Vec<Vec<f64>> = (0..SLICE_COUNT)
            .map(|_| (0..fdim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let vm = stack_features(&mut tape, &views);
        let h = tape.constant_vector(vec![0.1; dims().decoder_hidden]);
        let (att, beta) = attend_panorama(&mut tape, &lease, vm, h).unwrap();
        let b = tape.value(beta).data().to_vec();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Independent recomputation.
        let mut expect = vec![0.0; fdim];
        for (w, v) in b.iter().zip(&views) {
            for (e, x) in expect.iter_mut().zip(v) {
                *e += w * x;
            }
        }
        for (a, e) in tape.value(att).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn first_decode_step_matches_bare_lstm_cell() {
        let (mut tape, _, lease) = tape_with_lease(3);
        let d = dims();
        let f_att = tape.constant_vector(vec![0.25; d.feature_full()]);
        let state = AgentState {
            h: tape.constant_vector(vec![0.0; d.decoder_hidden]),
            c: tape.constant_vector(vec![0.0; d.decoder_hidden]),
            h_tilde: tape.constant_vector(vec![0.0; d.decoder_hidden]),
            prev_action: tape.constant_vector(vec![0.0; d.action_embed]),
        };
        let (h1, c1) = decode_step(&mut tape, &lease, f_att, &state).unwrap();

        let zeros_a = tape.constant_vector(vec![0.0; d.action_embed]);
        let input = tape.concat(f_att, zeros_a).unwrap();
        let zh = tape.constant_vector(vec![0.0; d.decoder_hidden]);
        let zc = tape.constant_vector(vec![0.0; d.decoder_hidden]);
        let (h2, c2) = lstm_cell(&mut tape, input, zh, zc, &lease.lstm).unwrap();
        assert_eq!(tape.value(h1).data(), tape.value(h2).data());
        assert_eq!(tape.value(c1).data(), tape.value(c2).data());
    }

    fn tiny_encoding(tape: &mut Tape, nodes: Vec<Vec<f64>>) -> InstructionEncoding {
        let node_ids: Vec<ValId> = nodes
            .iter()
            .map(|n| tape.constant_vector(n.clone()))
            .collect();
        let node_matrix = tape.stack_rows(&node_ids).unwrap();
        InstructionEncoding {
            root_id: node_ids[0],
            seq_ids: node_ids.clone(),
            node_token: (1..=node_ids.len()).map(Some).collect(),
            length: node_ids.len(),
            node_ids,
            node_matrix,
        }
    }

    #[test]
    fn single_node_language_attention_is_total() {
        let (mut tape, _, lease) = tape_with_lease(4);
        let u = dims().encoder.output();
        let node = vec![0.7; u];
        let enc = tiny_encoding(&mut tape, vec![node.clone()]);
        let h = tape.constant_vector(vec![0.3; dims().decoder_hidden]);
        let (att, gamma) = attend_language(&mut tape, &lease, &enc, h).unwrap();
        assert_eq!(tape.value(gamma).data(), &[1.0]);
        assert_eq!(tape.value(att).data(), &node[..]);
    }

    #[test]
    fn identical_nodes_split_attention_evenly() {
        let (mut tape, _, lease) = tape_with_lease(5);
        let u = dims().encoder.output();
        let node = vec![-0.2; u];
        let enc = tiny_encoding(&mut tape, vec![node.clone(), node]);
        let h = tape.constant_vector(vec![0.9; dims().decoder_hidden]);
        let (_, gamma) = attend_language(&mut tape, &lease, &enc, h).unwrap();
        let g = tape.value(gamma).data();
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_fusion_weights_give_zero_context() {
        let (mut tape, mut params, _) = tape_with_lease(6);
        let d = dims();
        let w_m = params.get_mut("decoder.w_m").unwrap();
        for v in w_m.value.data_mut() {
            *v = 0.0;
        }
        let lease = lease_decoder(&mut tape, &params).unwrap();
        let u = tape.constant_vector(vec![0.8; d.encoder.output()]);
        let h = tape.constant_vector(vec![-0.8; d.decoder_hidden]);
        let fused = fuse_context(&mut tape, &lease, u, h).unwrap();
        assert!(tape.value(fused).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fused_context_is_bounded_by_one() {
        let (mut tape, _, lease) = tape_with_lease(7);
        let d = dims();
        // Moderate inputs stay strictly inside (-1, 1); extreme inputs may
        // saturate to exactly +-1.0 in f64 but never beyond.
        let u = tape.constant_vector(vec![3.0; d.encoder.output()]);
        let h = tape.constant_vector(vec![-3.0; d.decoder_hidden]);
        let fused = fuse_context(&mut tape, &lease, u, h).unwrap();
        assert!(tape.value(fused).data().iter().all(|v| v.abs() < 1.0));

        let u = tape.constant_vector(vec![1e6; d.encoder.output()]);
        let h = tape.constant_vector(vec![-1e6; d.decoder_hidden]);
        let fused = fuse_context(&mut tape, &lease, u, h).unwrap();
        assert!(tape.value(fused).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn identical_candidates_score_uniform_and_singleton_is_sure() {
        let (mut tape, _, lease) = tape_with_lease(8);
        let d = dims();
        let h_tilde = tape.constant_vector(vec![0.5; d.decoder_hidden]);
        let cm = stack_features(&mut tape, &vec![vec![0.1; d.feature_full()]; 4]);
        let (p, _) = score_actions(&mut tape, &lease, cm, h_tilde).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let cm1 = stack_features(&mut tape, &[vec![0.3; d.feature_full()]]);
        let (p1, _) = score_actions(&mut tape, &lease, cm1, h_tilde).unwrap();
        assert_eq!(tape.value(p1).data(), &[1.0]);
    }

    #[test]
    fn positive_rescaling_preserves_argmax() {
        let scores = vec![0.2, 1.4, -0.3, 0.9];
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let p1 = crate::nnmath::softmax(&scores).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * 7.5).collect();
        let p2 = crate::nnmath::softmax(&scaled).unwrap();
        assert_eq!(argmax(&p1), argmax(&p2));
        assert_eq!(argmax(&p1), 1);
    }

    fn setup_world() -> (crate::world::WorldSet, Vec<Episode>, Vocabulary) {
        let cfg = WorldConfig {
            grid_w: 4,
            grid_h: 4,
            episodes: 12,
            ..WorldConfig::default()
        };
        let (set, eps) = generate_world(17, &cfg).unwrap();
        let vocab = Vocabulary::build(
            eps.iter()
                .flat_map(|e| e.tokens.iter().map(|t| t.as_str())),
        );
        (set, eps, vocab)
    }

    fn world_dims(set: &crate::world::WorldSet) -> ModelDims {
        ModelDims {
            encoder: EncoderDims {
                embed: 6,
                bilstm_hidden: 4,
            },
            decoder_hidden: 5,
            action_embed: 3,
            feature_dim: set.feature_dim,
        }
    }

    #[test]
    fn teacher_rollout_replays_the_gold_path() {
        let (set, eps, vocab) = setup_world();
        let d = world_dims(&set);
        let mut rng = substream(3, "params", 0);
        let mut params = ParameterSet::new();
        register_agent_params(&mut params, EncoderKind::Tree, &d, vocab.len(), &mut rng).unwrap();

        for ep in eps.iter().take(6) {
            let graph = set.world(&ep.world).unwrap();
            let mut tape = Tape::new();
            let (_, roll) = encode_and_rollout(
                &mut tape,
                &params,
                &d,
                EncoderKind::Tree,
                &vocab,
                graph,
                ep,
                RolloutMode::Teacher,
                20,
            )
            .unwrap();
            assert_eq!(roll.trajectory, ep.path);
            assert_eq!(roll.final_viewpoint, *ep.goal());
            assert!(roll.steps.last().unwrap().stop_chosen);
            // Attention and action distributions are proper.
            for s in &roll.steps {
                assert!((s.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!((s.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(s.probs.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn greedy_at_isolated_viewpoint_stops_immediately() {
        let vp = Viewpoint {
            id: "solo".to_string(),
            pos: [0.0, 0.0, 0.0],
            landmark: "sofa".to_string(),
            slices: vec!["wall".to_string(); SLICE_COUNT],
        };
        let graph = EnvironmentGraph::from_parts(
            "iso".to_string(),
            WorldSplit::Train,
            0,
            4,
            vec![vp],
            vec![],
        )
        .unwrap();
        let tree = DependencyTree::from_tokens(
            vec![Token {
                index: 1,
                form: "stop".to_string(),
                head: 0,
                upos: String::new(),
                deprel: String::new(),
            }],
            1,
        )
        .unwrap();
        let ep = Episode {
            id: "solo-ep".to_string(),
            world: "iso".to_string(),
            tokens: vec!["stop".to_string()],
            tree,
            path: vec!["solo".to_string()],
            language: "en".to_string(),
            split: Split::Train,
        };
        let d = ModelDims {
            encoder: EncoderDims {
                embed: 4,
                bilstm_hidden: 3,
            },
            decoder_hidden: 4,
            action_embed: 2,
            feature_dim: 4,
        };
        let vocab = Vocabulary::build(["stop"]);
        let mut rng = substream(5, "params", 0);
        let mut params = ParameterSet::new();
        register_agent_params(&mut params, EncoderKind::Tree, &d, vocab.len(), &mut rng).unwrap();
        let mut tape = Tape::new();
        let (_, roll) = encode_and_rollout(
            &mut tape,
            &params,
            &d,
            EncoderKind::Tree,
            &vocab,
            &graph,
            &ep,
            RolloutMode::Greedy,
            20,
        )
        .unwrap();
        assert_eq!(roll.trajectory, vec!["solo".to_string()]);
        assert_eq!(roll.steps.len(), 1);
        assert_eq!(roll.steps[0].probs, vec![1.0]);
        assert!(roll.steps[0].stop_chosen);
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let (set, eps, vocab) = setup_world();
        let d = world_dims(&set);
        let mut rng = substream(6, "params", 0);
        let mut params = ParameterSet::new();
        register_agent_params(&mut params, EncoderKind::Chain, &d, vocab.len(), &mut rng).unwrap();
        let ep = &eps[0];
        let graph = set.world(&ep.world).unwrap();

        let run = |seed: u64| {
            let mut rng = substream(seed, "rollout", 0);
            let mut tape = Tape::new();
            let (_, roll) = encode_and_rollout(
                &mut tape,
                &params,
                &d,
                EncoderKind::Chain,
                &vocab,
                graph,
                ep,
                RolloutMode::Sample(&mut rng),
                20,
            )
            .unwrap();
            roll.trajectory
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn two_chained_decode_steps_pass_grad_check() {
        let d = dims();
        let mut rng = substream(12, "gc", 0);
        let mut params = ParameterSet::new();
        register_agent_params(&mut params, EncoderKind::Chain, &d, 6, &mut rng).unwrap();
        let f1: Vec<f64> = (0..d.feature_full()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let f2: Vec<f64> = (0..d.feature_full()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let nodes: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d.encoder.output()).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();

        let report = crate::nnmath::grad_check(
            &params,
            |p, tape| {
                let lease = lease_decoder(tape, p).map_err(crate::nnmath::MathError::from)?;
                let enc = tiny_encoding(tape, nodes.clone());
                let mut state = AgentState {
                    h: tape.constant_vector(vec![0.0; d.decoder_hidden]),
                    c: tape.constant_vector(vec![0.0; d.decoder_hidden]),
                    h_tilde: {
                        let s = tape.matvec(lease.w_init, enc.root_id)?;
                        tape.tanh(s)
                    },
                    prev_action: tape.constant_vector(vec![0.0; d.action_embed]),
                };
                for f in [&f1, &f2] {
                    let fa = tape.constant_vector(f.clone());
                    let (h, c) = decode_step(tape, &lease, fa, &state).map_err(|e| match e {
                        AgentError::Math(m) => m,
                        other => panic!("{other}"),
                    })?;
                    let (u, _) = attend_language(tape, &lease, &enc, h).map_err(|e| match e {
                        AgentError::Math(m) => m,
                        other => panic!("{other}"),
                    })?;
                    let ht = fuse_context(tape, &lease, u, h).map_err(|e| match e {
                        AgentError::Math(m) => m,
                        other => panic!("{other}"),
                    })?;
                    let act = tape.constant_vector(f.clone());
                    let pa = tape.matvec(lease.w_act, act)?;
                    state = AgentState {
                        h,
                        c,
                        h_tilde: ht,
                        prev_action: pa,
                    };
                }
                Ok(tape.sum_vec(state.h_tilde))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "err {}", report.max_rel_err);
    }
}

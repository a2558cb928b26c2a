//! Finite-difference verification harness behind `syntaxnav gradcheck`:
//! every parameterized submodule gets a tiny randomized fixture whose
//! analytic gradients are checked against central differences across many
//! seeds.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::agent::{
    attend_language, attend_panorama, decode_step, fuse_context, lease_decoder,
    register_agent_params, score_actions, value_baseline, AgentError, AgentState, ModelDims,
};
use crate::encoder::{
    bilstm_encode, embed_tokens, encode_instruction, meanpool_encode, register_encoder_params,
    treelstm_encode, EncoderDims, EncoderKind, InstructionEncoding,
};
use crate::nnmath::{grad_check, MathError, ParameterSet, Tape, Tensor, ValId};
use crate::seeds::substream;
use crate::treeio::{DependencyTree, Token};

pub const PASS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl SuiteRow {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= PASS_THRESHOLD
    }
}

fn tok(index: usize, head: usize) -> Token {
    Token {
        index,
        form: format!("w{index}"),
        head,
        upos: String::new(),
        deprel: String::new(),
    }
}

/// Five-node tree: root with two children, one of which has two children.
fn five_node_tree() -> DependencyTree {
    DependencyTree::from_tokens(
        vec![tok(1, 2), tok(2, 0), tok(3, 2), tok(4, 3), tok(5, 3)],
        1,
    )
    .unwrap()
}

fn small_dims() -> ModelDims {
    ModelDims {
        encoder: EncoderDims {
            embed: 3,
            bilstm_hidden: 2,
        },
        decoder_hidden: 4,
        action_embed: 2,
        feature_dim: 3,
    }
}

fn rand_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()
}

fn map_agent(e: AgentError) -> MathError {
    match e {
        AgentError::Math(m) => m,
        other => MathError::ShapeMismatch {
            context: other.to_string(),
        },
    }
}

fn map_encoder(e: crate::encoder::EncoderError) -> MathError {
    match e {
        crate::encoder::EncoderError::Math(m) => m,
        other => MathError::ShapeMismatch {
            context: other.to_string(),
        },
    }
}

type Fixture = Box<dyn Fn(&ParameterSet, &mut Tape) -> Result<ValId, MathError>>;

fn check(
    name: &'static str,
    master_seed: u64,
    seeds: u32,
    eps: f64,
    build: impl Fn(u64) -> Result<(ParameterSet, Fixture), MathError>,
) -> Result<SuiteRow, MathError> {
    let mut worst = 0.0_f64;
    for s in 0..seeds {
        let seed = crate::nnmath::fnv1a64(format!("{master_seed}/{name}/{s}").as_bytes());
        let (params, fixture) = build(seed)?;
        // Keep the loss magnitude small: finite-difference roundoff scales
        // with |f|, and near-zero gradient coordinates compare against the
        // 1e-8 relative-error floor.
        let report = grad_check(
            &params,
            |p, t| {
                let loss = fixture(p, t)?;
                Ok(t.scale(loss, 0.01))
            },
            eps,
        )?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(SuiteRow {
        name,
        max_rel_err: worst,
    })
}

fn embedding_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let mut rng = substream(seed, "params", 0);
    let mut params = ParameterSet::new();
    params.add_embedding("encoder.embed.table", 6, 3, &mut rng)?;
    let fixture: Fixture = Box::new(|p, tape| {
        let vs = embed_tokens(tape, p, &[2, 4, 2, 5]).map_err(map_encoder)?;
        let sum = tape.add_n(&vs)?;
        let t = tape.tanh(sum);
        Ok(tape.sum_vec(t))
    });
    Ok((params, fixture))
}

fn bilstm_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let mut rng = substream(seed, "params", 0);
    let dims = small_dims();
    let mut params = ParameterSet::new();
    register_encoder_params(&mut params, EncoderKind::Chain, &dims.encoder, 6, &mut rng)?;
    let fixture: Fixture = Box::new(move |p, tape| {
        let embeds = embed_tokens(tape, p, &[2, 3, 4]).map_err(map_encoder)?;
        let seq = bilstm_encode(tape, p, &embeds).map_err(map_encoder)?;
        let sum = tape.add_n(&seq)?;
        Ok(tape.sum_vec(sum))
    });
    Ok((params, fixture))
}

fn treelstm_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let mut rng = substream(seed, "params", 0);
    let dims = small_dims();
    let mut params = ParameterSet::new();
    register_encoder_params(&mut params, EncoderKind::Tree, &dims.encoder, 8, &mut rng)?;
    let fixture: Fixture = Box::new(move |p, tape| {
        let tree = five_node_tree();
        let embeds = embed_tokens(tape, p, &[2, 3, 4, 5, 6]).map_err(map_encoder)?;
        let seq = bilstm_encode(tape, p, &embeds).map_err(map_encoder)?;
        let (nodes, root) = treelstm_encode(tape, p, &seq, &tree).map_err(map_encoder)?;
        let all = tape.add_n(&nodes)?;
        let s1 = tape.sum_vec(all);
        let s2 = tape.sum_vec(root);
        tape.add(s1, s2)
    });
    Ok((params, fixture))
}

fn meanpool_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let mut rng = substream(seed, "params", 0);
    let dims = small_dims();
    let mut params = ParameterSet::new();
    register_encoder_params(&mut params, EncoderKind::MeanPool, &dims.encoder, 8, &mut rng)?;
    let fixture: Fixture = Box::new(move |p, tape| {
        let tree = five_node_tree();
        let embeds = embed_tokens(tape, p, &[2, 3, 4, 5, 6]).map_err(map_encoder)?;
        let seq = bilstm_encode(tape, p, &embeds).map_err(map_encoder)?;
        let (nodes, _) = meanpool_encode(tape, &seq, &tree).map_err(map_encoder)?;
        let all = tape.add_n(&nodes)?;
        let t = tape.tanh(all);
        Ok(tape.sum_vec(t))
    });
    Ok((params, fixture))
}

fn agent_params(seed: u64) -> Result<(ParameterSet, ModelDims, ChaCha20Rng), MathError> {
    let mut rng = substream(seed, "params", 0);
    let dims = small_dims();
    let mut params = ParameterSet::new();
    register_agent_params(&mut params, EncoderKind::Tree, &dims, 8, &mut rng)?;
    // The value head's second layer is zero-initialized for training; give
    // it random weights here so its gradient path is exercised.
    let probe_rng = substream(seed, "probe", 0);
    let mut vrng = substream(seed, "value", 0);
    let h = dims.decoder_hidden;
    let w2: Vec<f64> = (0..h).map(|_| vrng.gen_range(-0.8..0.8)).collect();
    params.get_mut("value.w2").unwrap().value = Tensor::vector(w2);
    Ok((params, dims, probe_rng))
}

fn tiny_encoding(tape: &mut Tape, nodes: &[Vec<f64>]) -> Result<InstructionEncoding, MathError> {
    let node_ids: Vec<ValId> = nodes
        .iter()
        .map(|n| tape.constant_vector(n.clone()))
        .collect();
    let node_matrix = tape.stack_rows(&node_ids)?;
    Ok(InstructionEncoding {
        root_id: node_ids[0],
        seq_ids: node_ids.clone(),
        node_token: (1..=node_ids.len()).map(Some).collect(),
        length: node_ids.len(),
        node_ids,
        node_matrix,
    })
}

fn attention_pano_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let (mut params, dims, mut rng) = agent_params(seed)?;
    params.insert("probe.h", Tensor::vector(rand_vec(&mut rng, dims.decoder_hidden)))?;
    let views: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, dims.feature_full())).collect();
    let fixture: Fixture = Box::new(move |p, tape| {
        let lease = lease_decoder(tape, p)?;
        let h = tape.param(p, "probe.h")?;
        let mut data = Vec::new();
        for v in &views {
            data.extend_from_slice(v);
        }
        let vm = tape.constant(Tensor::matrix(views.len(), views[0].len(), data.clone())?);
        let (att, beta) = attend_panorama(tape, &lease, vm, h).map_err(map_agent)?;
        let s1 = tape.sum_vec(att);
        let picked = tape.index(beta, 2)?;
        tape.add(s1, picked)
    });
    Ok((params, fixture))
}

fn attention_lang_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let (mut params, dims, mut rng) = agent_params(seed)?;
    params.insert("probe.h", Tensor::vector(rand_vec(&mut rng, dims.decoder_hidden)))?;
    for k in 0..3 {
        params.insert(
            &format!("probe.node{k}"),
            Tensor::vector(rand_vec(&mut rng, dims.encoder.output())),
        )?;
    }
    let fixture: Fixture = Box::new(move |p, tape| {
        let lease = lease_decoder(tape, p)?;
        let h = tape.param(p, "probe.h")?;
        let node_ids: Vec<ValId> = (0..3)
            .map(|k| tape.param(p, &format!("probe.node{k}")))
            .collect::<Result<_, _>>()?;
        let node_matrix = tape.stack_rows(&node_ids)?;
        let enc = InstructionEncoding {
            root_id: node_ids[0],
            seq_ids: node_ids.clone(),
            node_token: (1..=3).map(Some).collect(),
            length: 3,
            node_ids,
            node_matrix,
        };
        let (att, gamma) = attend_language(tape, &lease, &enc, h).map_err(map_agent)?;
        let s1 = tape.sum_vec(att);
        let picked = tape.index(gamma, 1)?;
        tape.add(s1, picked)
    });
    Ok((params, fixture))
}

fn decoder_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let (params, dims, mut rng) = agent_params(seed)?;
    let nodes: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, dims.encoder.output())).collect();
    let f1 = rand_vec(&mut rng, dims.feature_full());
    let f2 = rand_vec(&mut rng, dims.feature_full());
    let fixture: Fixture = Box::new(move |p, tape| {
        let lease = lease_decoder(tape, p)?;
        let enc = tiny_encoding(tape, &nodes)?;
        let seedv = tape.matvec(lease.w_init, enc.root_id)?;
        let mut state = AgentState {
            h: tape.constant_vector(vec![0.0; dims.decoder_hidden]),
            c: tape.constant_vector(vec![0.0; dims.decoder_hidden]),
            h_tilde: tape.tanh(seedv),
            prev_action: tape.constant_vector(vec![0.0; dims.action_embed]),
        };
        for f in [&f1, &f2] {
            let fa = tape.constant_vector(f.clone());
            let (h, c) = decode_step(tape, &lease, fa, &state).map_err(map_agent)?;
            let (u, _) = attend_language(tape, &lease, &enc, h).map_err(map_agent)?;
            let ht = fuse_context(tape, &lease, u, h).map_err(map_agent)?;
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
    });
    Ok((params, fixture))
}

fn value_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let (mut params, dims, mut rng) = agent_params(seed)?;
    // Keep ReLU pre-activations away from the kink so central differences
    // stay valid.
    let mut h = rand_vec(&mut rng, dims.decoder_hidden);
    loop {
        let w1 = &params.get("value.w1").unwrap().value;
        let b1 = &params.get("value.b1").unwrap().value;
        let pre = {
            let mut out = w1.matvec(&Tensor::vector(h.clone()));
            for (o, b) in out.iter_mut().zip(b1.data()) {
                *o += b;
            }
            out
        };
        if pre.iter().all(|v| v.abs() > 1e-3) {
            break;
        }
        for v in &mut h {
            *v += 0.37;
        }
    }
    params.insert("probe.h", Tensor::vector(h))?;
    let fixture: Fixture = Box::new(move |p, tape| {
        let lease = lease_decoder(tape, p)?;
        let h = tape.param(p, "probe.h")?;
        // L_V = 0.5 (R - V)^2 against a constant target.
        let v = value_baseline(tape, &lease, h).map_err(map_agent)?;
        let target = tape.constant_scalar(1.7);
        let diff = tape.sub(target, v)?;
        let sq = tape.mul(diff, diff)?;
        Ok(tape.scale(sq, 0.5))
    });
    Ok((params, fixture))
}

fn full_step_fixture(seed: u64) -> Result<(ParameterSet, Fixture), MathError> {
    let (params, dims, mut rng) = agent_params(seed)?;
    let views: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, dims.feature_full())).collect();
    let cands: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, dims.feature_full())).collect();
    let fixture: Fixture = Box::new(move |p, tape| {
        let tree = five_node_tree();
        let enc = encode_instruction(tape, p, EncoderKind::Tree, &[2, 3, 4, 5, 6], &tree)
            .map_err(map_encoder)?;
        let lease = lease_decoder(tape, p)?;
        let seedv = tape.matvec(lease.w_init, enc.root_id)?;
        let state = AgentState {
            h: tape.constant_vector(vec![0.0; dims.decoder_hidden]),
            c: tape.constant_vector(vec![0.0; dims.decoder_hidden]),
            h_tilde: tape.tanh(seedv),
            prev_action: tape.constant_vector(vec![0.0; dims.action_embed]),
        };
        let stack = |tape: &mut Tape, rows: &[Vec<f64>]| -> Result<ValId, MathError> {
            let mut data = Vec::new();
            for r in rows {
                data.extend_from_slice(r);
            }
            Ok(tape.constant(Tensor::matrix(rows.len(), rows[0].len(), data)?))
        };
        let vm = stack(tape, &views)?;
        let cm = stack(tape, &cands)?;
        let (f_att, _) = attend_panorama(tape, &lease, vm, state.h_tilde).map_err(map_agent)?;
        let (h, _c) = decode_step(tape, &lease, f_att, &state).map_err(map_agent)?;
        let (u, _) = attend_language(tape, &lease, &enc, h).map_err(map_agent)?;
        let ht = fuse_context(tape, &lease, u, h).map_err(map_agent)?;
        let (_probs, logp) = score_actions(tape, &lease, cm, ht).map_err(map_agent)?;
        let nll = {
            let picked = tape.index(logp, 1)?;
            tape.scale(picked, -1.0)
        };
        let v = value_baseline(tape, &lease, h).map_err(map_agent)?;
        let target = tape.constant_scalar(0.9);
        let diff = tape.sub(target, v)?;
        let sq = tape.mul(diff, diff)?;
        let lv = tape.scale(sq, 0.5);
        tape.add(nll, lv)
    });
    Ok((params, fixture))
}

/// Runs the whole suite: one row per submodule, worst error across seeds.
pub fn run_suite(master_seed: u64, eps: f64, seeds: u32) -> Result<Vec<SuiteRow>, MathError> {
    Ok(vec![
        check("embedding", master_seed, seeds, eps, embedding_fixture)?,
        check("bilstm", master_seed, seeds, eps, bilstm_fixture)?,
        check("treelstm", master_seed, seeds, eps, treelstm_fixture)?,
        check("meanpool", master_seed, seeds, eps, meanpool_fixture)?,
        check("attention_pano", master_seed, seeds, eps, attention_pano_fixture)?,
        check("attention_lang", master_seed, seeds, eps, attention_lang_fixture)?,
        check("decoder", master_seed, seeds, eps, decoder_fixture)?,
        check("value_head", master_seed, seeds, eps, value_fixture)?,
        check("full_step", master_seed, seeds, eps, full_step_fixture)?,
    ])
}

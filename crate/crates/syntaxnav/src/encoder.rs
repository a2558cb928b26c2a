//! Instruction encoders: embedding + bidirectional LSTM over the token
//! sequence, then one of four aggregation variants over a parse tree.
//!
//! The syntax-aware variant runs a ChildSum Tree-LSTM over the dependency
//! (or constituency) tree; ablations swap in subtree mean-pooling or plain
//! 1- / 2-layer chain encodings. Every variant produces node states of the
//! same width (twice the per-direction Bi-LSTM hidden size), so the decoder
//! is oblivious to which encoder produced its attention memory.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::nnmath::{lease_lstm, lstm_cell, register_lstm, MathError, ParameterSet, Tape, ValId};
use crate::treeio::{bottom_up_order, EncodableTree, TreeError};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownId { id: usize, vocab: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("tree references token {token} but the sequence has {length}")]
    MisalignedTree { token: usize, length: usize },
}

/// Token-to-id map with reserved padding (0) and unknown (1) slots.
/// Lookup lowercases; the table is stable across save/load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from a token stream: every distinct lowercased token is kept
    /// (min-count 1), ordered lexicographically after the reserved slots.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<String> = corpus
            .into_iter()
            .map(|t| t.to_lowercase())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.append(&mut seen);
        Self::from_tokens(tokens)
    }

    /// Rebuilds from a saved token list (reserved slots included).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(&token.to_lowercase()).unwrap_or(&UNK_ID)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Which aggregation runs on top of the Bi-LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// ChildSum Tree-LSTM over the parse tree (the syntax-aware model).
    Tree,
    /// Plain Bi-LSTM; attention memory is the token states.
    Chain,
    /// Two stacked Bi-LSTM layers.
    Chain2,
    /// Subtree mean-pooling over the parse tree.
    MeanPool,
}

impl EncoderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tree" => Some(EncoderKind::Tree),
            "chain" => Some(EncoderKind::Chain),
            "chain2" => Some(EncoderKind::Chain2),
            "meanpool" => Some(EncoderKind::MeanPool),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Tree => "tree",
            EncoderKind::Chain => "chain",
            EncoderKind::Chain2 => "chain2",
            EncoderKind::MeanPool => "meanpool",
        }
    }

    pub fn uses_tree(&self) -> bool {
        matches!(self, EncoderKind::Tree | EncoderKind::MeanPool)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoder widths. The tree hidden size equals the concatenated Bi-LSTM
/// output, `2 * bilstm_hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub embed: usize,
    /// Per-direction hidden size.
    pub bilstm_hidden: usize,
}

impl EncoderDims {
    /// Output width of every encoder variant.
    pub fn output(&self) -> usize {
        2 * self.bilstm_hidden
    }

    /// Presets from the reference configuration: embedding 256, encoder
    /// hidden 512 (256 per direction).
    pub fn paper() -> Self {
        EncoderDims {
            embed: 256,
            bilstm_hidden: 256,
        }
    }
}

/// Registers all parameters a given encoder variant needs.
pub fn register_encoder_params(
    params: &mut ParameterSet,
    kind: EncoderKind,
    dims: &EncoderDims,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<(), MathError> {
    params.add_embedding("encoder.embed.table", vocab_size, dims.embed, rng)?;
    register_lstm(params, "encoder.bilstm.fwd", dims.embed, dims.bilstm_hidden, rng)?;
    register_lstm(params, "encoder.bilstm.bwd", dims.embed, dims.bilstm_hidden, rng)?;
    let u = dims.output();
    match kind {
        EncoderKind::Chain2 => {
            register_lstm(params, "encoder.bilstm2.fwd", u, dims.bilstm_hidden, rng)?;
            register_lstm(params, "encoder.bilstm2.bwd", u, dims.bilstm_hidden, rng)?;
        }
        EncoderKind::Tree => {
            for gate in ["i", "f", "o", "g"] {
                params.add_matrix(&format!("encoder.treelstm.w_{gate}"), u, u, rng)?;
                params.add_matrix(&format!("encoder.treelstm.u_{gate}"), u, u, rng)?;
                params.add_bias(&format!("encoder.treelstm.b_{gate}"), u)?;
            }
        }
        EncoderKind::Chain | EncoderKind::MeanPool => {}
    }
    Ok(())
}

/// The attention memory handed to the decoder: one state per tree node (or
/// per token for chain encoders), the raw sequence states, and a root
/// summary used to seed the decoder.
pub struct InstructionEncoding {
    pub node_ids: Vec<ValId>,
    /// `node_ids` stacked into an [n, width] matrix.
    pub node_matrix: ValId,
    pub seq_ids: Vec<ValId>,
    pub root_id: ValId,
    pub length: usize,
    /// 1-based token index carried by each node, for trace alignment.
    pub node_token: Vec<Option<usize>>,
}

/// Embedding lookup, one vector per token id.
pub fn embed_tokens(
    tape: &mut Tape,
    params: &ParameterSet,
    ids: &[usize],
) -> Result<Vec<ValId>, EncoderError> {
    let table = tape.param(params, "encoder.embed.table")?;
    let vocab = tape.value(table).rows();
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= vocab {
            return Err(EncoderError::UnknownId { id, vocab });
        }
        out.push(tape.row(table, id)?);
    }
    Ok(out)
}

/// Bidirectional pass with explicit per-direction parameter prefixes.
/// Output i is the forward state at i concatenated with the backward state
/// at i.
pub fn bilstm_encode_with(
    tape: &mut Tape,
    params: &ParameterSet,
    fwd_prefix: &str,
    bwd_prefix: &str,
    inputs: &[ValId],
) -> Result<Vec<ValId>, EncoderError> {
    if inputs.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let fwd = lease_lstm(tape, params, fwd_prefix)?;
    let bwd = lease_lstm(tape, params, bwd_prefix)?;
    let hidden = tape.value(fwd.b).len() / 4;

    let mut h = tape.constant_vector(vec![0.0; hidden]);
    let mut c = tape.constant_vector(vec![0.0; hidden]);
    let mut fwd_states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let (h2, c2) = lstm_cell(tape, x, h, c, &fwd)?;
        fwd_states.push(h2);
        h = h2;
        c = c2;
    }

    let mut h = tape.constant_vector(vec![0.0; hidden]);
    let mut c = tape.constant_vector(vec![0.0; hidden]);
    let mut bwd_states = vec![None; inputs.len()];
    for (i, &x) in inputs.iter().enumerate().rev() {
        let (h2, c2) = lstm_cell(tape, x, h, c, &bwd)?;
        bwd_states[i] = Some(h2);
        h = h2;
        c = c2;
    }

    fwd_states
        .into_iter()
        .zip(bwd_states)
        .map(|(f, b)| tape.concat(f, b.unwrap()).map_err(EncoderError::from))
        .collect()
}

pub fn bilstm_encode(
    tape: &mut Tape,
    params: &ParameterSet,
    inputs: &[ValId],
) -> Result<Vec<ValId>, EncoderError> {
    bilstm_encode_with(tape, params, "encoder.bilstm.fwd", "encoder.bilstm.bwd", inputs)
}

struct TreeLstmParams {
    w: [ValId; 4],
    u: [ValId; 4],
    b: [ValId; 4],
}

fn lease_treelstm(tape: &mut Tape, params: &ParameterSet) -> Result<TreeLstmParams, MathError> {
    let mut ids = TreeLstmParams {
        w: [ValId(usize::MAX); 4],
        u: [ValId(usize::MAX); 4],
        b: [ValId(usize::MAX); 4],
    };
    for (k, gate) in ["i", "f", "o", "g"].iter().enumerate() {
        ids.w[k] = tape.param(params, &format!("encoder.treelstm.w_{gate}"))?;
        ids.u[k] = tape.param(params, &format!("encoder.treelstm.u_{gate}"))?;
        ids.b[k] = tape.param(params, &format!("encoder.treelstm.b_{gate}"))?;
    }
    Ok(ids)
}

const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_O: usize = 2;
const GATE_G: usize = 3;

fn gate_pre(
    tape: &mut Tape,
    p: &TreeLstmParams,
    gate: usize,
    x: ValId,
    h: ValId,
) -> Result<ValId, MathError> {
    let wx = tape.matvec(p.w[gate], x)?;
    let uh = tape.matvec(p.u[gate], h)?;
    let sum = tape.add(wx, uh)?;
    tape.add(sum, p.b[gate])
}

/// Validates node/token alignment and returns the x input per node: the
/// Bi-LSTM state for token nodes, `None` for tokenless constituency nodes
/// (whose input is defined as the zero vector).
fn node_inputs(
    seq: &[ValId],
    tree: &dyn EncodableTree,
) -> Result<Vec<Option<ValId>>, EncoderError> {
    let mut xs = Vec::with_capacity(tree.node_count());
    for id in 0..tree.node_count() {
        match tree.token_index(id) {
            Some(tok) => {
                if tok == 0 || tok > seq.len() {
                    return Err(EncoderError::MisalignedTree {
                        token: tok,
                        length: seq.len(),
                    });
                }
                xs.push(Some(seq[tok - 1]));
            }
            None => xs.push(None),
        }
    }
    Ok(xs)
}

/// ChildSum Tree-LSTM over the tree, bottom-up. Children are consumed in
/// canonical ascending-id order regardless of how the tree stores them, so
/// the result is bit-identical under child permutations.
pub fn treelstm_encode(
    tape: &mut Tape,
    params: &ParameterSet,
    seq: &[ValId],
    tree: &dyn EncodableTree,
) -> Result<(Vec<ValId>, ValId), EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let p = lease_treelstm(tape, params)?;
    let width = tape.value(seq[0]).len();
    let xs = node_inputs(seq, tree)?;
    let zero = tape.constant_vector(vec![0.0; width]);

    let order = bottom_up_order(tree)?;
    let mut h_state: Vec<Option<ValId>> = vec![None; tree.node_count()];
    let mut c_state: Vec<Option<ValId>> = vec![None; tree.node_count()];

    for &id in &order {
        let mut children = tree.child_ids(id);
        children.sort_unstable();
        let x = xs[id].unwrap_or(zero);

        let h_sum = if children.is_empty() {
            zero
        } else {
            let hs: Vec<ValId> = children.iter().map(|&c| h_state[c].unwrap()).collect();
            tape.add_n(&hs)?
        };

        let i_pre = gate_pre(tape, &p, GATE_I, x, h_sum)?;
        let i_gate = tape.sigmoid(i_pre);
        let o_pre = gate_pre(tape, &p, GATE_O, x, h_sum)?;
        let o_gate = tape.sigmoid(o_pre);
        let g_pre = gate_pre(tape, &p, GATE_G, x, h_sum)?;
        let g_cand = tape.tanh(g_pre);
        let ig = tape.mul(i_gate, g_cand)?;

        let mut cell_terms = vec![ig];
        for &child in &children {
            let f_pre = gate_pre(tape, &p, GATE_F, x, h_state[child].unwrap())?;
            let f_gate = tape.sigmoid(f_pre);
            cell_terms.push(tape.mul(f_gate, c_state[child].unwrap())?);
        }
        let c_new = tape.add_n(&cell_terms)?;
        let c_tanh = tape.tanh(c_new);
        let h_new = tape.mul(o_gate, c_tanh)?;
        h_state[id] = Some(h_new);
        c_state[id] = Some(c_new);
    }

    let root = h_state[tree.root_id()].unwrap();
    let nodes = h_state.into_iter().map(Option::unwrap).collect();
    Ok((nodes, root))
}

/// Ablation: each node's state is the arithmetic mean of the Bi-LSTM states
/// of all token-bearing nodes in its subtree (itself included).
pub fn meanpool_encode(
    tape: &mut Tape,
    seq: &[ValId],
    tree: &dyn EncodableTree,
) -> Result<(Vec<ValId>, ValId), EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let xs = node_inputs(seq, tree)?;

    let order = bottom_up_order(tree)?;
    let mut sums: Vec<Option<ValId>> = vec![None; tree.node_count()];
    let mut counts: Vec<usize> = vec![0; tree.node_count()];
    let mut states: Vec<Option<ValId>> = vec![None; tree.node_count()];

    for &id in &order {
        let mut children = tree.child_ids(id);
        children.sort_unstable();
        let mut terms = Vec::new();
        let mut count = 0;
        if let Some(x) = xs[id] {
            terms.push(x);
            count += 1;
        }
        for &c in &children {
            if counts[c] > 0 {
                terms.push(sums[c].unwrap());
                count += counts[c];
            }
        }
        if terms.is_empty() {
            return Err(EncoderError::MisalignedTree {
                token: id + 1,
                length: seq.len(),
            });
        }
        let sum = tape.add_n(&terms)?;
        sums[id] = Some(sum);
        counts[id] = count;
        states[id] = Some(tape.scale(sum, 1.0 / count as f64));
    }

    let root = states[tree.root_id()].unwrap();
    let nodes = states.into_iter().map(Option::unwrap).collect();
    Ok((nodes, root))
}

/// Chain summary state: last forward half next to first backward half.
fn chain_summary(tape: &mut Tape, seq: &[ValId]) -> Result<ValId, MathError> {
    let width = tape.value(seq[0]).len();
    let half = width / 2;
    let fwd_last = tape.slice(*seq.last().unwrap(), 0, half)?;
    let bwd_first = tape.slice(seq[0], half, half)?;
    tape.concat(fwd_last, bwd_first)
}

/// Full encoding pipeline for one instruction.
pub fn encode_instruction(
    tape: &mut Tape,
    params: &ParameterSet,
    kind: EncoderKind,
    token_ids: &[usize],
    tree: &dyn EncodableTree,
) -> Result<InstructionEncoding, EncoderError> {
    if token_ids.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let embeds = embed_tokens(tape, params, token_ids)?;
    let seq = bilstm_encode(tape, params, &embeds)?;

    let (node_ids, root_id, node_token) = match kind {
        EncoderKind::Tree => {
            let (nodes, root) = treelstm_encode(tape, params, &seq, tree)?;
            let toks = (0..tree.node_count()).map(|i| tree.token_index(i)).collect();
            (nodes, root, toks)
        }
        EncoderKind::MeanPool => {
            let (nodes, root) = meanpool_encode(tape, &seq, tree)?;
            let toks = (0..tree.node_count()).map(|i| tree.token_index(i)).collect();
            (nodes, root, toks)
        }
        EncoderKind::Chain => {
            let root = chain_summary(tape, &seq)?;
            let toks = (1..=seq.len()).map(Some).collect();
            (seq.clone(), root, toks)
        }
        EncoderKind::Chain2 => {
            let seq2 = bilstm_encode_with(
                tape,
                params,
                "encoder.bilstm2.fwd",
                "encoder.bilstm2.bwd",
                &seq,
            )?;
            let root = chain_summary(tape, &seq2)?;
            let toks = (1..=seq2.len()).map(Some).collect();
            (seq2, root, toks)
        }
    };

    let node_matrix = tape.stack_rows(&node_ids)?;
    Ok(InstructionEncoding {
        node_ids,
        node_matrix,
        seq_ids: seq,
        root_id,
        length: token_ids.len(),
        node_token,
    })
}

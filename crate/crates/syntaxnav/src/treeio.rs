//! Ingestion and validation of rooted trees over instruction tokens.
//!
//! Two on-disk formats are supported: CoNLL-U dependency parses (10-column
//! tab-separated, `#` comments, blank-line sentence separators) and
//! Penn-style bracketed constituency trees. Only the ID / FORM / HEAD
//! columns of CoNLL-U drive the model; UPOS and DEPREL are parsed and kept
//! on the token but otherwise unused. Children adjacency is always stored
//! in canonical (ascending index) order so downstream encoders are
//! independent of the order nodes appear in the source file.

use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("sentence {sentence}, line {line}: malformed line: {reason}")]
    MalformedLine {
        sentence: usize,
        line: usize,
        reason: String,
    },
    #[error("sentence {sentence}: multiple roots (tokens {first} and {second} both have head 0)")]
    MultipleRoots {
        sentence: usize,
        first: usize,
        second: usize,
    },
    #[error("sentence {sentence}: no root token (no HEAD column equals 0)")]
    NoRoot { sentence: usize },
    #[error("sentence {sentence}: head chain from token {token} never reaches the root")]
    CycleDetected { sentence: usize, token: usize },
    #[error("sentence {sentence}: token {token} has head {head} outside 0..={len}")]
    HeadOutOfRange {
        sentence: usize,
        token: usize,
        head: usize,
        len: usize,
    },
    #[error("unbalanced parentheses at byte {at}")]
    UnbalancedParens { at: usize },
    #[error("empty constituent at byte {at}")]
    EmptyConstituent { at: usize },
}

/// One instruction word plus its syntactic attachment.
///
/// `index` is 1-based; `head` is 0 for the root token, otherwise the index
/// of the governing token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub head: usize,
    /// UPOS column, parsed but unused by the model.
    pub upos: String,
    /// DEPREL column, parsed but unused by the model.
    pub deprel: String,
}

/// A rooted dependency tree over the token sequence.
///
/// `children[i]` holds the dependents of token `i + 1` in ascending index
/// order; `root` is the unique token whose head is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyTree {
    pub tokens: Vec<Token>,
    pub root: usize,
    children: Vec<Vec<usize>>,
}

impl DependencyTree {
    /// Builds a tree from tokens, checking every invariant.
    ///
    /// `sentence` is only used to label errors.
    pub fn from_tokens(tokens: Vec<Token>, sentence: usize) -> Result<Self, TreeError> {
        let len = tokens.len();
        let mut root = None;
        for tok in &tokens {
            if tok.head > len {
                return Err(TreeError::HeadOutOfRange {
                    sentence,
                    token: tok.index,
                    head: tok.head,
                    len,
                });
            }
            if tok.head == tok.index {
                return Err(TreeError::CycleDetected {
                    sentence,
                    token: tok.index,
                });
            }
            if tok.head == 0 {
                match root {
                    None => root = Some(tok.index),
                    Some(first) => {
                        return Err(TreeError::MultipleRoots {
                            sentence,
                            first,
                            second: tok.index,
                        })
                    }
                }
            }
        }
        let root = root.ok_or(TreeError::NoRoot { sentence })?;

        let mut children = vec![Vec::new(); len];
        for tok in &tokens {
            if tok.head > 0 {
                children[tok.head - 1].push(tok.index);
            }
        }
        // Token order already ascends, but canonicalize explicitly.
        for ch in &mut children {
            ch.sort_unstable();
        }

        let tree = DependencyTree {
            tokens,
            root,
            children,
        };
        tree.check_connected(sentence)?;
        Ok(tree)
    }

    /// Dependents of token `index`, ascending.
    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check_connected(&self, sentence: usize) -> Result<(), TreeError> {
        // Every token must reach the root by following heads.
        for tok in &self.tokens {
            let mut cur = tok.index;
            let mut hops = 0;
            while cur != self.root {
                cur = self.tokens[cur - 1].head;
                hops += 1;
                if cur == 0 || hops > self.tokens.len() {
                    return Err(TreeError::CycleDetected {
                        sentence,
                        token: tok.index,
                    });
                }
            }
        }
        Ok(())
    }

    /// Serializes back to a CoNLL-U block (without the trailing blank line).
    pub fn to_conllu(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            let upos = if tok.upos.is_empty() { "_" } else { &tok.upos };
            let deprel = if tok.deprel.is_empty() { "_" } else { &tok.deprel };
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                tok.index, tok.form, upos, tok.head, deprel
            ));
        }
        out
    }
}

/// A rooted tree whose leaves carry token indices; internal constituency
/// nodes carry a label and no token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    /// 1-based token index for leaves, `None` for internal nodes.
    pub token: Option<usize>,
    pub label: String,
}

impl RootedTree {
    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Uniform read-only view over both tree kinds, as consumed by encoders.
///
/// Node ids are dense `0..node_count`. For dependency trees node id `i`
/// is token `i + 1`; for constituency trees ids follow construction order.
pub trait EncodableTree {
    fn node_count(&self) -> usize;
    fn root_id(&self) -> usize;
    /// Children in canonical ascending-id order.
    fn child_ids(&self, id: usize) -> Vec<usize>;
    /// 1-based token index carried by the node, if any.
    fn token_index(&self, id: usize) -> Option<usize>;
}

impl EncodableTree for DependencyTree {
    fn node_count(&self) -> usize {
        self.tokens.len()
    }
    fn root_id(&self) -> usize {
        self.root - 1
    }
    fn child_ids(&self, id: usize) -> Vec<usize> {
        self.children(id + 1).iter().map(|c| c - 1).collect()
    }
    fn token_index(&self, id: usize) -> Option<usize> {
        Some(id + 1)
    }
}

impl EncodableTree for RootedTree {
    fn node_count(&self) -> usize {
        self.nodes.len()
    }
    fn root_id(&self) -> usize {
        self.root
    }
    fn child_ids(&self, id: usize) -> Vec<usize> {
        let mut ch = self.children(id).to_vec();
        ch.sort_unstable();
        ch
    }
    fn token_index(&self, id: usize) -> Option<usize> {
        self.nodes[id].token
    }
}

/// Parses a CoNLL-U document into one tree per sentence block.
///
/// Multiword-token ranges (`3-4`) and empty nodes (`3.1`) are skipped.
/// Errors carry the 1-based sentence block and global line number.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencyTree>, TreeError> {
    let mut trees = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sentence = 1;

    let mut flush = |tokens: &mut Vec<Token>, sentence: &mut usize| -> Result<(), TreeError> {
        if !tokens.is_empty() {
            trees.push(DependencyTree::from_tokens(std::mem::take(tokens), *sentence)?);
            *sentence += 1;
        }
        Ok(())
    };

    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            flush(&mut tokens, &mut sentence)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < 8 {
            return Err(TreeError::MalformedLine {
                sentence,
                line: line_no,
                reason: format!("expected >= 8 tab-separated fields, got {}", fields.len()),
            });
        }
        let id_field = fields[0];
        // Skip multiword ranges and empty nodes.
        if id_field.contains('-') || id_field.contains('.') {
            continue;
        }
        let index: usize = id_field.parse().map_err(|_| TreeError::MalformedLine {
            sentence,
            line: line_no,
            reason: format!("non-integer ID {id_field:?}"),
        })?;
        let head: usize = fields[6].parse().map_err(|_| TreeError::MalformedLine {
            sentence,
            line: line_no,
            reason: format!("non-integer HEAD {:?}", fields[6]),
        })?;
        if index != tokens.len() + 1 {
            return Err(TreeError::MalformedLine {
                sentence,
                line: line_no,
                reason: format!("ID {} out of sequence, expected {}", index, tokens.len() + 1),
            });
        }
        // "_" marks an unspecified column.
        let optional = |f: &str| if f == "_" { String::new() } else { f.to_string() };
        tokens.push(Token {
            index,
            form: fields[1].to_string(),
            head,
            upos: optional(fields[3]),
            deprel: optional(fields[7]),
        });
    }
    flush(&mut tokens, &mut sentence)?;
    Ok(trees)
}

/// Parses a Penn-style labeled bracketing into a [`RootedTree`].
///
/// Leaves are terminal tokens numbered 1..l in left-to-right order.
pub fn parse_bracketed(text: &str) -> Result<RootedTree, TreeError> {
    let bytes = text.as_bytes();
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut children: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut root = None;
    let mut next_token = 1usize;
    let mut i = 0usize;

    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            // Read the constituent label.
            i += 1;
            let start = i;
            while i < bytes.len() && !(bytes[i] as char).is_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                i += 1;
            }
            let label = text[start..i].to_string();
            if label.is_empty() {
                return Err(TreeError::EmptyConstituent { at: start });
            }
            let id = nodes.len();
            nodes.push(TreeNode {
                id,
                token: None,
                label,
            });
            children.push(Vec::new());
            if let Some(&parent) = stack.last() {
                children[parent].push(id);
            } else if root.is_some() {
                return Err(TreeError::UnbalancedParens { at: start });
            } else {
                root = Some(id);
            }
            stack.push(id);
        } else if c == ')' {
            let id = stack.pop().ok_or(TreeError::UnbalancedParens { at: i })?;
            if children[id].is_empty() && nodes[id].token.is_none() {
                return Err(TreeError::EmptyConstituent { at: i });
            }
            i += 1;
        } else {
            // A terminal token: becomes a leaf child of the open constituent,
            // except when the open constituent is a preterminal with no other
            // children, in which case the token attaches to it directly.
            let start = i;
            while i < bytes.len() && !(bytes[i] as char).is_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                i += 1;
            }
            let form = text[start..i].to_string();
            let parent = *stack.last().ok_or(TreeError::UnbalancedParens { at: start })?;
            if children[parent].is_empty() && nodes[parent].token.is_none() {
                nodes[parent].token = Some(next_token);
                nodes[parent].label = format!("{} {}", nodes[parent].label, form);
            } else {
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    token: Some(next_token),
                    label: form,
                });
                children.push(Vec::new());
                children[parent].push(id);
            }
            next_token += 1;
        }
    }
    if !stack.is_empty() {
        return Err(TreeError::UnbalancedParens { at: bytes.len() });
    }
    let root = root.ok_or(TreeError::EmptyConstituent { at: 0 })?;
    Ok(RootedTree {
        nodes,
        root,
        children,
    })
}

/// Re-checks every invariant of an already-built tree. Idempotent.
pub fn validate_tree<T: EncodableTree + ?Sized>(tree: &T) -> Result<(), TreeError> {
    let n = tree.node_count();
    if n == 0 {
        return Err(TreeError::NoRoot { sentence: 0 });
    }
    let root = tree.root_id();
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    let mut visited = 0;
    while let Some(id) = stack.pop() {
        if seen[id] {
            return Err(TreeError::CycleDetected {
                sentence: 0,
                token: id + 1,
            });
        }
        seen[id] = true;
        visited += 1;
        for c in tree.child_ids(id) {
            stack.push(c);
        }
    }
    if visited != n {
        // A detached subgraph never reaches the root; same taxonomy as a
        // broken head chain.
        let token = seen.iter().position(|s| !s).unwrap() + 1;
        return Err(TreeError::CycleDetected { sentence: 0, token });
    }
    Ok(())
}

/// Returns node ids so that every node appears after all of its children.
///
/// Deterministic: among nodes whose children are all emitted, the smallest
/// id goes first.
pub fn bottom_up_order<T: EncodableTree + ?Sized>(tree: &T) -> Result<Vec<usize>, TreeError> {
    validate_tree(tree)?;
    let n = tree.node_count();
    let mut pending: Vec<usize> = (0..n).map(|id| tree.child_ids(id).len()).collect();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for id in 0..n {
        for c in tree.child_ids(id) {
            parent[c] = Some(id);
        }
    }
    let mut ready: BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&id| pending[id] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(id)) = ready.pop() {
        order.push(id);
        if let Some(p) = parent[id] {
            pending[p] -= 1;
            if pending[p] == 0 {
                ready.push(std::cmp::Reverse(p));
            }
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(index: usize, form: &str, head: usize) -> Token {
        Token {
            index,
            form: form.to_string(),
            head,
            upos: String::new(),
            deprel: String::new(),
        }
    }

    const WALK_BLOCK: &str = "\
1\tWalk\t_\tVERB\t_\t_\t0\troot\t_\t_
2\tforward\t_\tADV\t_\t_\t1\tadvmod\t_\t_
3\t.\t_\tPUNCT\t_\t_\t1\tpunct\t_\t_";

    #[test]
    fn parses_simple_block() {
        let trees = parse_conllu(WALK_BLOCK).unwrap();
        assert_eq!(trees.len(), 1);
        let t = &trees[0];
        assert_eq!(t.root, 1);
        assert_eq!(t.children(1), &[2, 3]);
        assert_eq!(t.tokens[0].form, "Walk");
    }

    #[test]
    fn cycle_is_detected() {
        let text = "\
1\ta\t_\t_\t_\t_\t0\troot\t_\t_
2\tb\t_\t_\t_\t_\t3\tdep\t_\t_
3\tc\t_\t_\t_\t_\t2\tdep\t_\t_";
        let err = parse_conllu(text).unwrap_err();
        assert!(matches!(err, TreeError::CycleDetected { sentence: 1, .. }));
    }

    #[test]
    fn empty_document_gives_empty_list() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n").unwrap().is_empty());
    }

    #[test]
    fn comments_and_subtoken_ids_skipped() {
        let text = format!("# sent_id = 1\n# text = Walk forward .\n3-4\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n{WALK_BLOCK}\n");
        let trees = parse_conllu(&text).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].len(), 3);
    }

    #[test]
    fn short_line_is_malformed() {
        let err = parse_conllu("1\tWalk\t0").unwrap_err();
        match err {
            TreeError::MalformedLine { sentence, line, .. } => {
                assert_eq!((sentence, line), (1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_integer_head_is_malformed() {
        let text = "1\tWalk\t_\t_\t_\t_\tX\troot\t_\t_";
        assert!(matches!(
            parse_conllu(text).unwrap_err(),
            TreeError::MalformedLine { .. }
        ));
    }

    #[test]
    fn multiple_roots_rejected() {
        let toks = vec![tok(1, "a", 0), tok(2, "b", 0)];
        assert!(matches!(
            DependencyTree::from_tokens(toks, 1).unwrap_err(),
            TreeError::MultipleRoots { first: 1, second: 2, .. }
        ));
    }

    #[test]
    fn no_root_rejected() {
        let toks = vec![tok(1, "a", 2), tok(2, "b", 1)];
        let err = DependencyTree::from_tokens(toks, 1).unwrap_err();
        assert!(matches!(err, TreeError::NoRoot { .. } | TreeError::CycleDetected { .. }));
    }

    #[test]
    fn head_out_of_range_rejected() {
        let toks = vec![tok(1, "a", 0), tok(2, "b", 9)];
        assert!(matches!(
            DependencyTree::from_tokens(toks, 1).unwrap_err(),
            TreeError::HeadOutOfRange { token: 2, head: 9, .. }
        ));
    }

    #[test]
    fn figure_style_tree_validates() {
        // "Walk forward then turn right at the stairs then go down the stairs"
        // with each sub-instruction grouped under its verb head.
        let heads = [0, 1, 4, 1, 4, 8, 8, 4, 10, 4, 10, 13, 10];
        let forms = [
            "Walk", "forward", "then", "turn", "right", "at", "the", "stairs", "then", "go",
            "down", "the", "stairs",
        ];
        let toks: Vec<Token> = forms
            .iter()
            .zip(heads.iter())
            .enumerate()
            .map(|(i, (f, h))| tok(i + 1, f, *h))
            .collect();
        let tree = DependencyTree::from_tokens(toks, 1).unwrap();
        assert!(validate_tree(&tree).is_ok());
        assert_eq!(tree.root, 1);
        assert_eq!(tree.children(4), &[3, 5, 8, 10]);
    }

    #[test]
    fn bracketed_single_constituent() {
        let t = parse_bracketed("(S (VB Walk))").unwrap();
        let leaves: Vec<_> = (0..t.len()).filter_map(|i| t.token_index(i)).collect();
        assert_eq!(leaves, vec![1]);
        assert_eq!(t.root_id(), 0);
    }

    #[test]
    fn bracketed_two_leaves() {
        let t = parse_bracketed("(S (VB Walk) (RB forward))").unwrap();
        let mut leaves: Vec<_> = (0..t.len()).filter_map(|i| t.token_index(i)).collect();
        leaves.sort_unstable();
        assert_eq!(leaves, vec![1, 2]);
    }

    #[test]
    fn bracketed_unbalanced() {
        assert!(matches!(
            parse_bracketed("(S (VB Walk").unwrap_err(),
            TreeError::UnbalancedParens { .. }
        ));
        assert!(matches!(
            parse_bracketed("(S (VB Walk)))").unwrap_err(),
            TreeError::UnbalancedParens { .. }
        ));
    }

    #[test]
    fn bracketed_empty_constituent() {
        assert!(matches!(
            parse_bracketed("(S ())").unwrap_err(),
            TreeError::EmptyConstituent { .. } | TreeError::UnbalancedParens { .. }
        ));
    }

    #[test]
    fn bottom_up_chain() {
        // 1 <- 2 <- 3, root 3.
        let toks = vec![tok(1, "a", 2), tok(2, "b", 3), tok(3, "c", 0)];
        let tree = DependencyTree::from_tokens(toks, 1).unwrap();
        assert_eq!(bottom_up_order(&tree).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn bottom_up_star() {
        let toks = vec![tok(1, "r", 0), tok(2, "a", 1), tok(3, "b", 1), tok(4, "c", 1)];
        let tree = DependencyTree::from_tokens(toks, 1).unwrap();
        assert_eq!(bottom_up_order(&tree).unwrap(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn bottom_up_single_node() {
        let tree = DependencyTree::from_tokens(vec![tok(1, "x", 0)], 1).unwrap();
        assert_eq!(bottom_up_order(&tree).unwrap(), vec![0]);
    }

    #[test]
    fn bottom_up_ties_break_by_id() {
        // root 4 with children {2, 3}; 3 has child 1. Smallest ready id first.
        let toks = vec![tok(1, "a", 3), tok(2, "b", 4), tok(3, "c", 4), tok(4, "d", 0)];
        let tree = DependencyTree::from_tokens(toks, 1).unwrap();
        assert_eq!(bottom_up_order(&tree).unwrap(), vec![0, 1, 2, 3]);
    }

    /// Random valid tree: token i attaches to a uniformly random earlier
    /// token (or the root when i == 1).
    fn arb_tree() -> impl Strategy<Value = DependencyTree> {
        (1usize..24)
            .prop_flat_map(|n| {
                let heads: Vec<BoxedStrategy<usize>> = (1..=n)
                    .map(|i| {
                        if i == 1 {
                            Just(0usize).boxed()
                        } else {
                            (1usize..i).boxed()
                        }
                    })
                    .collect();
                heads
            })
            .prop_map(|heads| {
                let toks: Vec<Token> = heads
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| tok(i + 1, &format!("w{}", i + 1), h))
                    .collect();
                DependencyTree::from_tokens(toks, 1).unwrap()
            })
    }

    proptest! {
        #[test]
        fn conllu_round_trip(tree in arb_tree()) {
            let text = tree.to_conllu();
            let back = parse_conllu(&text).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0], &tree);
        }

        #[test]
        fn bottom_up_is_topological(tree in arb_tree()) {
            let order = bottom_up_order(&tree).unwrap();
            prop_assert_eq!(order.len(), tree.node_count());
            let pos: std::collections::HashMap<usize, usize> =
                order.iter().enumerate().map(|(p, &id)| (id, p)).collect();
            for id in 0..tree.node_count() {
                for c in tree.child_ids(id) {
                    prop_assert!(pos[&c] < pos[&id]);
                }
            }
        }
    }
}

//! Hand-authored instruction templates with fixed head assignments.
//!
//! Each navigation hop becomes one clause headed by a verb; verbs chain
//! (each verb attaches to the previous one, the first is the root) and the
//! joining "then" attaches to the verb it introduces, so sub-instruction
//! words group under the verb that performs that step.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{EnvironmentGraph, WorldError};
use crate::treeio::{DependencyTree, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Turn {
    Straight,
    Left,
    Right,
    Around,
}

fn classify(prev: f64, cur: f64) -> Turn {
    let mut d = cur - prev;
    while d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    }
    while d <= -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    let q = std::f64::consts::FRAC_PI_4;
    if d.abs() < q {
        Turn::Straight
    } else if d > q && d < 3.0 * q {
        Turn::Left
    } else if d < -q && d > -3.0 * q {
        Turn::Right
    } else {
        Turn::Around
    }
}

/// Attachment of a clause word: the clause verb itself, or a local 0-based
/// offset to another word in the same clause.
enum Head {
    Verb,
    Local(usize),
}

struct Clause {
    words: Vec<&'static str>,
    landmark: Option<String>,
    heads: Vec<Head>,
}

impl Clause {
    fn verb_adv(verb: &'static str, adv: &'static str) -> Self {
        Clause {
            words: vec![verb, adv],
            landmark: None,
            heads: vec![Head::Verb, Head::Local(0)],
        }
    }

    /// "<verb> to the <lm>": lm attaches to the verb, "to"/"the" to lm.
    fn verb_to_the(verb: &'static str, lm: String) -> Self {
        Clause {
            words: vec![verb, "to", "the"],
            landmark: Some(lm),
            heads: vec![Head::Verb, Head::Local(3), Head::Local(3), Head::Local(0)],
        }
    }

    /// "turn <dir> at the <lm>".
    fn turn_at(dir: &'static str, lm: String) -> Self {
        Clause {
            words: vec!["turn", dir, "at", "the"],
            landmark: Some(lm),
            heads: vec![
                Head::Verb,
                Head::Local(0),
                Head::Local(4),
                Head::Local(4),
                Head::Local(0),
            ],
        }
    }

    /// "go down the <lm>".
    fn go_down_the(lm: String) -> Self {
        Clause {
            words: vec!["go", "down", "the"],
            landmark: Some(lm),
            heads: vec![Head::Verb, Head::Local(0), Head::Local(3), Head::Local(0)],
        }
    }

    fn token_count(&self) -> usize {
        self.words.len() + usize::from(self.landmark.is_some())
    }
}

/// Realizes a gold path as (tokens, dependency tree). The emitted tree is
/// valid by construction; landmarks come from the hop's viewpoint tags.
pub fn generate_instruction(
    path: &[String],
    graph: &EnvironmentGraph,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<String>, DependencyTree), WorldError> {
    if path.len() < 2 {
        return Err(WorldError::PathTooShort);
    }
    let pos = |id: &str| -> Result<[f64; 3], WorldError> { Ok(graph.viewpoint(id)?.pos) };
    let mut dirs = Vec::with_capacity(path.len() - 1);
    for pair in path.windows(2) {
        let (a, b) = (pos(&pair[0])?, pos(&pair[1])?);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        if dx == 0.0 && dy == 0.0 {
            return Err(WorldError::NoTemplateForPath {
                reason: format!("zero-length hop at {}", pair[0]),
            });
        }
        dirs.push(dy.atan2(dx));
    }

    let hops = dirs.len();
    let mut clauses = Vec::with_capacity(hops);
    for i in 0..hops {
        let dest_lm = graph.landmark(&path[i + 1])?.to_string();
        let src_lm = graph.landmark(&path[i])?.to_string();
        let clause = if i == 0 {
            if hops == 1 {
                Clause::verb_to_the("walk", dest_lm)
            } else {
                // Heading starts along the first hop.
                Clause::verb_adv("walk", "forward")
            }
        } else {
            match classify(dirs[i - 1], dirs[i]) {
                Turn::Left => Clause::turn_at("left", dest_lm),
                Turn::Right => Clause::turn_at("right", dest_lm),
                Turn::Around => Clause::turn_at("around", dest_lm),
                Turn::Straight => {
                    if src_lm == "stairs" {
                        Clause::go_down_the(src_lm)
                    } else if i == hops - 1 {
                        Clause::verb_to_the("go", dest_lm)
                    } else {
                        match rng.gen_range(0..3) {
                            0 => Clause::verb_adv("go", "forward"),
                            1 => Clause::verb_adv("walk", "forward"),
                            _ => Clause::verb_to_the("go", dest_lm),
                        }
                    }
                }
            }
        };
        clauses.push(clause);
    }

    // Merge clauses: verbs chain, "then" attaches to the verb it introduces.
    let mut forms: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut prev_verb: usize = 0;
    for (ci, clause) in clauses.iter().enumerate() {
        if ci > 0 {
            forms.push("then".to_string());
            heads.push(forms.len() + 1); // the upcoming verb
        }
        let base = forms.len(); // 0-based index of the clause verb
        let verb_head = if ci == 0 { 0 } else { prev_verb };
        for (wi, word) in clause.words.iter().enumerate() {
            forms.push(word.to_string());
            heads.push(match clause.heads[wi] {
                Head::Verb => verb_head,
                Head::Local(off) => base + off + 1,
            });
        }
        if let Some(lm) = &clause.landmark {
            let wi = clause.words.len();
            forms.push(lm.clone());
            heads.push(match clause.heads[wi] {
                Head::Verb => verb_head,
                Head::Local(off) => base + off + 1,
            });
        }
        prev_verb = base + 1; // 1-based
        debug_assert_eq!(forms.len(), heads.len());
        debug_assert_eq!(forms.len() - base, clause.token_count());
    }

    let tokens: Vec<Token> = forms
        .iter()
        .zip(&heads)
        .enumerate()
        .map(|(i, (form, head))| Token {
            index: i + 1,
            form: form.clone(),
            head: *head,
            upos: String::new(),
            deprel: String::new(),
        })
        .collect();
    let tree = DependencyTree::from_tokens(tokens, 1)?;
    Ok((forms, tree))
}

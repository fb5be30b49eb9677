//! Newick reading and writing. Leaf labels are 1-based sample indices.

use crate::error::{Error, Result};
use crate::tree::{validate_tree, RootedTree};

const MICRO: f64 = 1e6;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    parent: Vec<Option<usize>>,
    length: Vec<f64>,
    sample: Vec<Option<usize>>,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            // [bracketed comments]
            if self.peek() == Some(b'[') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("newick: {msg} at byte {}", self.pos))
    }

    fn token(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if b"(),:;[".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn node(&mut self, parent: Option<usize>) -> Result<usize> {
        let id = self.parent.len();
        self.parent.push(parent);
        self.length.push(0.0);
        self.sample.push(None);
        self.skip_ws();
        let internal = self.peek() == Some(b'(');
        if internal {
            self.pos += 1;
            loop {
                self.node(Some(id))?;
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        let label = self.token();
        if !internal {
            let s: usize = label
                .parse()
                .map_err(|_| self.err(&format!("leaf label {label:?} is not a sample index")))?;
            if s == 0 {
                return Err(self.err("sample indices are 1-based"));
            }
            self.sample[id] = Some(s - 1);
        }
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            let tok = self.token();
            self.length[id] = tok
                .parse()
                .map_err(|_| self.err(&format!("bad branch length {tok:?}")))?;
        } else if parent.is_some() {
            return Err(self.err("missing branch length"));
        }
        Ok(id)
    }
}

/// Parses a Newick string. With `normalize_depth` the tree is rescaled to unit
/// root-to-leaf depth instead of being rejected.
pub fn parse_newick(text: &str, normalize_depth: bool) -> Result<RootedTree> {
    let mut p = Parser { bytes: text.as_bytes(), pos: 0, parent: vec![], length: vec![], sample: vec![] };
    p.node(None)?;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return Err(p.err("expected ';'"));
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.err("trailing input after ';'"));
    }
    let tree = RootedTree::structure(p.parent, p.length, p.sample)?;
    if normalize_depth {
        tree.normalize_depth()
    } else {
        validate_tree(&tree)?;
        Ok(tree)
    }
}

fn format_micro(units: i64) -> String {
    let whole = units / 1_000_000;
    let frac = units % 1_000_000;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:06}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

/// Writes the tree with branch lengths at 6 decimal places. Node depths are
/// rounded first and leaves pinned to depth one, so the written lengths sum
/// to exactly one along every path.
pub fn to_newick(tree: &RootedTree) -> String {
    let depths = tree.depths();
    let micro: Vec<i64> = (0..tree.node_count())
        .map(|v| {
            if tree.leaf_sample(v).is_some() {
                1_000_000
            } else {
                (depths[v] * MICRO).round() as i64
            }
        })
        .collect();
    let mut out = String::new();
    write_node(tree, tree.root(), &micro, &mut out);
    out.push(';');
    out
}

fn write_node(tree: &RootedTree, v: usize, micro: &[i64], out: &mut String) {
    let children = tree.children(v);
    if !children.is_empty() {
        out.push('(');
        for (idx, &c) in children.iter().enumerate() {
            if idx > 0 {
                out.push(',');
            }
            write_node(tree, c, micro, out);
        }
        out.push(')');
    }
    if let Some(s) = tree.leaf_sample(v) {
        out.push_str(&(s + 1).to_string());
    }
    if let Some(p) = tree.parent(v) {
        out.push(':');
        out.push_str(&format_micro((micro[v] - micro[p]).max(0)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupPartition;
    use crate::tree::{flat_tree, two_group_tree};

    #[test]
    fn parses_two_group_tree() {
        let t = parse_newick("((1:0.2,2:0.2):0.8,(3:0.2,4:0.2):0.8);", false).unwrap();
        assert_eq!(t.leaf_count(), 4);
        assert!((t.shared_depth(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_depth_violation_unless_normalised() {
        let text = "((1:0.5,2:0.5):0.5,3:0.9);";
        assert!(matches!(parse_newick(text, false), Err(Error::DepthViolation { .. })));
        let t = parse_newick(text, true).unwrap();
        validate_tree(&t).unwrap();
    }

    #[test]
    fn ultrametric_tree_of_other_height_is_rescaled() {
        let t = parse_newick("((1:1,2:1):1,(3:2)g:0);", true).unwrap();
        assert!((t.shared_depth(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn malformed_inputs() {
        for bad in ["(1:1,2:1)", "(1:1,x:1);", "(1:1,2);", "(1:1,2:1);junk", "(0:1);", "((1:1,2:1);"] {
            assert!(parse_newick(bad, false).is_err(), "{bad}");
        }
    }

    #[test]
    fn comments_and_whitespace() {
        let t = parse_newick(" ( 1 : 1 , [note] 2:1 )root ; ", false).unwrap();
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn writes_and_reads_back() {
        let t = two_group_tree(4, 0.8, &GroupPartition::halves(4)).unwrap();
        let text = to_newick(&t);
        assert_eq!(text, "((1:0.2,2:0.2):0.8,(3:0.2,4:0.2):0.8);");
        let back = parse_newick(&text, false).unwrap();
        assert_eq!(to_newick(&back), text);
        assert_eq!(to_newick(&flat_tree(2).unwrap()), "(1:1,2:1);");
    }

    #[test]
    fn rounded_output_keeps_unit_depth() {
        let t = RootedTree::from_parents(
            vec![None, Some(0), Some(1), Some(1), Some(0)],
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![None, None, Some(0), Some(1), Some(2)],
        )
        .unwrap();
        let text = to_newick(&t);
        assert!(text.contains("0.333333"));
        parse_newick(&text, false).unwrap();
    }
}

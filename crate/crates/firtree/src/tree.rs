//! Binary decision trees over rating categories.
//!
//! A tree over M categories with N internal nodes is stored as an M x N
//! mapping matrix: entry (m, n) is the branch (0/1) category m takes at node
//! n, or NA when the node is never visited on the way to m.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSpec {
    n_categories: usize,
    n_nodes: usize,
    /// Row-major M x N; None encodes NA.
    mapping: Vec<Option<u8>>,
}

impl TreeSpec {
    pub fn new(n_categories: usize, n_nodes: usize, mapping: Vec<Option<u8>>) -> Result<Self> {
        if n_categories < 2 || n_nodes == 0 {
            return Err(Error::Tree(format!(
                "need at least 2 categories and 1 node, got {n_categories} x {n_nodes}"
            )));
        }
        if mapping.len() != n_categories * n_nodes {
            return Err(Error::Tree(format!(
                "mapping has {} entries, expected {}",
                mapping.len(),
                n_categories * n_nodes
            )));
        }
        for entry in mapping.iter().flatten() {
            if *entry > 1 {
                return Err(Error::Tree(format!("branch values must be 0 or 1, got {entry}")));
            }
        }
        let spec = TreeSpec { n_categories, n_nodes, mapping };
        for m in 0..n_categories {
            if (0..n_nodes).all(|n| spec.entry(m, n).is_none()) {
                return Err(Error::Tree(format!("category {} has an all-NA mapping row", m + 1)));
            }
        }
        // Each category must be identified by a unique set of (node, branch)
        // pairs, otherwise two categories would be indistinguishable.
        for a in 0..n_categories {
            for b in (a + 1)..n_categories {
                let same = (0..n_nodes).all(|n| spec.entry(a, n) == spec.entry(b, n));
                if same {
                    return Err(Error::Tree(format!(
                        "categories {} and {} share the same branch pattern",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Branch for 0-based `category` at `node`; None when unvisited.
    pub fn entry(&self, category: usize, node: usize) -> Option<u8> {
        self.mapping[category * self.n_nodes + node]
    }

    /// Three-category tree: the root separates the middle category from the
    /// two extremes, a second node separates low from high.
    pub fn fig2a() -> Self {
        TreeSpec::new(
            3,
            2,
            vec![
                Some(1), Some(0), // category 1 (low)
                Some(0), None,    // category 2 (middle)
                Some(1), Some(1), // category 3 (high)
            ],
        )
        .expect("built-in tree is valid")
    }

    /// Four-category linear tree: each node either exits at the current
    /// category or moves one step up the scale.
    pub fn fig3_linear() -> Self {
        TreeSpec::new(
            4,
            3,
            vec![
                Some(0), None, None,
                Some(1), Some(0), None,
                Some(1), Some(1), Some(0),
                Some(1), Some(1), Some(1),
            ],
        )
        .expect("built-in tree is valid")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "fig2a" => Some(Self::fig2a()),
            "fig3-linear" => Some(Self::fig3_linear()),
            _ => None,
        }
    }

    /// Parses the text form: one row per category, tokens 0 / 1 / NA split on
    /// whitespace or commas. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<Option<u8>>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line
                .split(|ch: char| ch.is_whitespace() || ch == ',')
                .filter(|t| !t.is_empty())
                .collect();
            if tokens.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(tokens.len());
            for tok in tokens {
                match tok {
                    "0" => row.push(Some(0)),
                    "1" => row.push(Some(1)),
                    _ if tok.eq_ignore_ascii_case("na") => row.push(None),
                    _ => {
                        return Err(Error::Tree(format!(
                            "line {}: unrecognized token {tok:?}",
                            lineno + 1
                        )))
                    }
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Tree("empty tree definition".into()));
        }
        let n_nodes = rows[0].len();
        if rows.iter().any(|r| r.len() != n_nodes) {
            return Err(Error::Tree("ragged rows in tree definition".into()));
        }
        let n_categories = rows.len();
        let mapping = rows.into_iter().flatten().collect();
        TreeSpec::new(n_categories, n_nodes, mapping)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in 0..self.n_categories {
            let row: Vec<String> = (0..self.n_nodes)
                .map(|n| match self.entry(m, n) {
                    Some(v) => v.to_string(),
                    None => "NA".to_string(),
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// The unique category whose non-NA branches all match `path`, if any.
    /// `path` holds a branch value for every node.
    pub fn category_for_path(&self, path: &[u8]) -> Option<usize> {
        if path.len() != self.n_nodes {
            return None;
        }
        let mut found = None;
        for m in 0..self.n_categories {
            let matches = (0..self.n_nodes).all(|n| match self.entry(m, n) {
                Some(v) => v == path[n],
                None => true,
            });
            if matches {
                if found.is_some() {
                    return None;
                }
                found = Some(m);
            }
        }
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shapes() {
        let t = TreeSpec::fig2a();
        assert_eq!((t.n_categories(), t.n_nodes()), (3, 2));
        assert_eq!(t.entry(1, 0), Some(0));
        assert_eq!(t.entry(1, 1), None);

        let t = TreeSpec::fig3_linear();
        assert_eq!((t.n_categories(), t.n_nodes()), (4, 3));
        assert_eq!(t.entry(0, 0), Some(0));
        assert_eq!(t.entry(3, 2), Some(1));
        assert!(TreeSpec::by_name("fig3-linear").is_some());
        assert!(TreeSpec::by_name("nope").is_none());
    }

    #[test]
    fn parse_roundtrip() {
        for t in [TreeSpec::fig2a(), TreeSpec::fig3_linear()] {
            let parsed = TreeSpec::parse(&t.to_text()).unwrap();
            assert_eq!(parsed, t);
        }
        let t = TreeSpec::parse("0, NA\n1, 0\n1, 1\n").unwrap();
        assert_eq!(t.n_categories(), 3);
        assert_eq!(t.entry(0, 1), None);
    }

    #[test]
    fn invalid_trees_rejected() {
        // All-NA row.
        assert!(TreeSpec::parse("NA NA\n1 0\n1 1").is_err());
        // Duplicate branch patterns.
        assert!(TreeSpec::parse("0 NA\n0 NA\n1 1").is_err());
        // Ragged row.
        assert!(TreeSpec::parse("0 NA\n1\n1 1").is_err());
        // Bad token.
        assert!(TreeSpec::parse("0 2\n1 0\n1 1").is_err());
        assert!(TreeSpec::parse("").is_err());
    }

    #[test]
    fn path_lookup() {
        let t = TreeSpec::fig3_linear();
        assert_eq!(t.category_for_path(&[0, 0, 0]), Some(0));
        assert_eq!(t.category_for_path(&[0, 1, 1]), Some(0));
        assert_eq!(t.category_for_path(&[1, 0, 1]), Some(1));
        assert_eq!(t.category_for_path(&[1, 1, 0]), Some(2));
        assert_eq!(t.category_for_path(&[1, 1, 1]), Some(3));
        assert_eq!(t.category_for_path(&[1, 1]), None);
    }
}

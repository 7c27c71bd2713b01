//! Finite rooted planar trees with a type on every vertex.
//!
//! Vertices are stored in depth-first (preorder) order. The pair of
//! sequences `(types, child_counts)` determines the tree uniquely; parent
//! links are derived.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Alphabet, OffspringConfig};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypedTree {
    types: Vec<usize>,
    child_counts: Vec<usize>,
}

impl TypedTree {
    /// Builds a tree from preorder types and child counts, validating that the
    /// sequence describes exactly one complete tree.
    pub fn from_preorder(types: Vec<usize>, child_counts: Vec<usize>) -> Result<Self> {
        let tree = TypedTree { types, child_counts };
        tree.validate()?;
        Ok(tree)
    }

    pub(crate) fn from_preorder_unchecked(types: Vec<usize>, child_counts: Vec<usize>) -> Self {
        TypedTree { types, child_counts }
    }

    pub fn single(ty: usize) -> Self {
        TypedTree { types: vec![ty], child_counts: vec![0] }
    }

    /// Checks the preorder structure: one root, `|E| = |T| - 1`, and every
    /// vertex's children appear in order before the walk returns to its parent.
    pub fn validate(&self) -> Result<()> {
        let n = self.types.len();
        if n == 0 {
            return Err(Error::validation("tree has no vertices"));
        }
        if self.child_counts.len() != n {
            return Err(Error::validation("types and child counts differ in length"));
        }
        let edges: usize = self.child_counts.iter().sum();
        if edges + 1 != n {
            return Err(Error::validation(format!("{n} vertices but {edges} edges")));
        }
        // open slots still to be filled by the remaining vertices
        let mut open: usize = 1;
        for (i, &k) in self.child_counts.iter().enumerate() {
            if open == 0 {
                return Err(Error::validation(format!("vertex {i} lies outside the tree rooted at 0")));
            }
            open = open - 1 + k;
        }
        if open != 0 {
            return Err(Error::validation("preorder sequence ends with unfilled children"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn child_counts(&self) -> &[usize] {
        &self.child_counts
    }

    pub fn root_type(&self) -> usize {
        self.types[0]
    }

    /// Parent index of every vertex (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = Vec::with_capacity(self.len());
        // (vertex, children still to attach)
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for (i, &k) in self.child_counts.iter().enumerate() {
            while let Some(&(_, 0)) = stack.last() {
                stack.pop();
            }
            match stack.last_mut() {
                Some((p, left)) => {
                    parents.push(Some(*p));
                    *left -= 1;
                }
                None => parents.push(None),
            }
            stack.push((i, k));
        }
        parents
    }

    /// Children of every vertex, left to right.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut kids = vec![Vec::new(); self.len()];
        for (v, p) in self.parents().into_iter().enumerate() {
            if let Some(p) = p {
                kids[p].push(v);
            }
        }
        kids
    }

    /// `C(v) = (N(v), X_1(v), ..., X_N(v))` for every vertex.
    pub fn configs(&self) -> Vec<OffspringConfig> {
        self.children()
            .into_iter()
            .map(|ks| OffspringConfig::new(ks.into_iter().map(|c| self.types[c]).collect()))
            .collect()
    }

    /// `(parent type, child type)` of every edge.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let parents = self.parents();
        parents.into_iter().enumerate().filter_map(move |(v, p)| p.map(|p| (self.types[p], self.types[v])))
    }

    /// Line format: `index,parent,type,child_count` per vertex in preorder;
    /// the root's parent is written as `-1`.
    pub fn to_text(&self, alphabet: &Alphabet) -> String {
        let mut out = String::with_capacity(self.len() * 12);
        for (i, p) in self.parents().into_iter().enumerate() {
            let parent = p.map_or(-1, |p| p as i64);
            let _ = writeln!(out, "{i},{parent},{},{}", alphabet.symbol(self.types[i]), self.child_counts[i]);
        }
        out
    }

    pub fn from_text(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let mut types = Vec::new();
        let mut counts = Vec::new();
        let mut parents = Vec::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::validation(format!("line {}: expected 4 fields", line_no + 1)));
            }
            let bad = |what: &str| Error::validation(format!("line {}: bad {what}", line_no + 1));
            let index: usize = fields[0].parse().map_err(|_| bad("index"))?;
            if index != types.len() {
                return Err(Error::validation(format!("line {}: index {index} out of order", line_no + 1)));
            }
            let parent: i64 = fields[1].parse().map_err(|_| bad("parent"))?;
            types.push(alphabet.index_of(fields[2])?);
            counts.push(fields[3].parse::<usize>().map_err(|_| bad("child count"))?);
            parents.push(if parent < 0 { None } else { Some(parent as usize) });
        }
        let tree = TypedTree::from_preorder(types, counts)?;
        if tree.parents() != parents {
            return Err(Error::validation("parent column disagrees with the preorder child counts"));
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cherry() -> TypedTree {
        // a -> (a, b)
        TypedTree::from_preorder(vec![0, 0, 1], vec![2, 0, 0]).unwrap()
    }

    #[test]
    fn derived_structure() {
        let t = TypedTree::from_preorder(vec![0, 1, 1, 0, 1], vec![2, 1, 0, 1, 0]).unwrap();
        assert_eq!(t.parents(), vec![None, Some(0), Some(1), Some(0), Some(3)]);
        assert_eq!(t.children(), vec![vec![1, 3], vec![2], vec![], vec![4], vec![]]);
        assert_eq!(t.configs()[0], OffspringConfig::new(vec![1, 0]));
        assert_eq!(t.edges().count(), 4);
    }

    #[test]
    fn rejects_malformed_sequences() {
        assert!(TypedTree::from_preorder(vec![0, 0], vec![0, 0]).is_err());
        assert!(TypedTree::from_preorder(vec![0, 0, 0], vec![1, 0, 1]).is_err());
        assert!(TypedTree::from_preorder(vec![], vec![]).is_err());
    }

    #[test]
    fn text_format() {
        let al = Alphabet::letters(2);
        let text = cherry().to_text(&al);
        assert_eq!(text, "0,-1,a,2\n1,0,a,0\n2,0,b,0\n");
        assert_eq!(TypedTree::from_text(&text, &al).unwrap(), cherry());
    }

    #[test]
    fn text_rejects_wrong_parent() {
        let al = Alphabet::letters(2);
        assert!(TypedTree::from_text("0,-1,a,2\n1,0,a,0\n2,1,b,0\n", &al).is_err());
    }
}

//! Finite measured forests standing in for interval lattices.
//!
//! A node is an interval; only its measure and its place in the tree are kept.
//! Leaves are stored in depth-first order, so every node owns a contiguous
//! range of leaves and leaf-constant functions become plain slices.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Dense index of a node inside one [`Lattice`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node<T> {
    /// User-facing identifier (the `id` field of the interchange file).
    pub label: i64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub measure: T,
    pub generation: i64,
}

/// Node description used to build a lattice by hand.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec<T> {
    pub id: i64,
    pub parent: Option<i64>,
    pub measure: T,
    pub generation: Option<i64>,
}

impl<T> NodeSpec<T> {
    pub fn new(id: i64, parent: Option<i64>, measure: T) -> Self {
        NodeSpec {
            id,
            parent,
            measure,
            generation: None,
        }
    }

    pub fn with_generation(mut self, generation: i64) -> Self {
        self.generation = Some(generation);
        self
    }
}

/// What to build: explicit nodes or one of the shipped generators.
#[derive(Clone, Debug, PartialEq)]
pub enum LatticeSpec<T> {
    Nodes(Vec<NodeSpec<T>>),
    UniformRadic { r: usize, depth: usize, total: T },
    /// Chain lattice of the averaging counterexample with parameter `n`.
    AveragingChain { n: usize },
    /// Four-children recursion of the unconditional-basis counterexample.
    BasisTree { n: usize, levels: usize },
    /// Eight-children swap blocks, one per `delta`, hung off a root chain.
    MixingBlocks { deltas: Vec<T> },
    /// Dyadic chain over `[0, 2^n)` carrying the divergent BMO series.
    BmoChain { n: usize },
}

/// Invariant violations reported by [`Lattice::validate`]; payload is the node label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NonPositiveMeasure(i64),
    MeasureMismatch(i64),
    GenerationOrder(i64),
    SingleChild(i64),
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        match v {
            Violation::NonPositiveMeasure(node) => Error::NonPositiveMeasure { node },
            Violation::MeasureMismatch(node) => Error::MeasureMismatch { node },
            Violation::GenerationOrder(node) => Error::GenerationOrder { node },
            Violation::SingleChild(node) => Error::SingleChild { node },
        }
    }
}

/// Relative tolerance for the children-sum invariant.
pub const MEASURE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice<T: Real = f64> {
    nodes: Vec<Node<T>>,
    roots: Vec<NodeId>,
    leaves: Vec<NodeId>,
    leaf_range: Vec<Range<usize>>,
    leaf_pos: Vec<Option<usize>>,
    depth: Vec<usize>,
    preorder: Vec<NodeId>,
    by_label: HashMap<i64, NodeId>,
}

/// Builds and validates a lattice. Any invariant violation is an error.
pub fn build_lattice<T: Real>(spec: &LatticeSpec<T>) -> Result<Lattice<T>> {
    let lat = match spec {
        LatticeSpec::Nodes(nodes) => Lattice::assemble(nodes)?,
        LatticeSpec::UniformRadic { r, depth, total } => return uniform_radic(*r, *depth, *total),
        LatticeSpec::AveragingChain { n } => crate::experiments::averaging_chain_lattice(*n)?,
        LatticeSpec::BasisTree { n, levels } => crate::experiments::basis_tree_lattice(*n, *levels)?,
        LatticeSpec::MixingBlocks { deltas } => crate::experiments::mixing_lattice(deltas)?,
        LatticeSpec::BmoChain { n } => crate::experiments::bmo_chain_lattice(*n)?,
    };
    if let Some(v) = lat.validate().into_iter().next() {
        return Err(v.into());
    }
    Ok(lat)
}

/// Full `r`-ary tree of the given depth with equal splits.
pub fn uniform_radic<T: Real>(r: usize, depth: usize, total: T) -> Result<Lattice<T>> {
    if r < 2 {
        return Err(Error::InvalidParameter(format!("radix must be at least 2, got {r}")));
    }
    if !(total > T::zero()) || !total.is_finite() {
        return Err(Error::NonPositiveMeasure { node: 0 });
    }
    let count = (0..=depth as u32)
        .try_fold(0usize, |acc, k| r.checked_pow(k).and_then(|x| acc.checked_add(x)))
        .ok_or_else(|| Error::InvalidParameter("lattice too large".into()))?;
    let mut specs = Vec::with_capacity(count);
    specs.push(NodeSpec::new(0, None, total).with_generation(0));
    let mut level_start = 0usize;
    let mut level_len = 1usize;
    let radix = T::from_usize(r).expect("radix");
    for k in 1..=depth {
        let measure = total / radix.powi(k as i32);
        let next_start = level_start + level_len;
        for parent in level_start..next_start {
            for _ in 0..r {
                let id = specs.len() as i64;
                specs.push(NodeSpec::new(id, Some(parent as i64), measure).with_generation(k as i64));
            }
        }
        level_start = next_start;
        level_len *= r;
    }
    let lat = Lattice::assemble(&specs)?;
    debug_assert!(lat.validate().is_empty());
    Ok(lat)
}

impl<T: Real> Lattice<T> {
    /// Links nodes into a forest without checking measures or generations.
    ///
    /// Structural problems (duplicate ids, dangling parents, cycles) are errors
    /// because no forest exists to validate; everything else is left to
    /// [`Lattice::validate`].
    pub fn assemble(specs: &[NodeSpec<T>]) -> Result<Self> {
        let mut by_label = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if by_label.insert(s.id, NodeId(i)).is_some() {
                return Err(Error::DuplicateId { node: s.id });
            }
        }
        let mut nodes: Vec<Node<T>> = Vec::with_capacity(specs.len());
        for s in specs {
            let parent = match s.parent {
                None => None,
                Some(p) => Some(*by_label.get(&p).ok_or(Error::UnknownParent { node: s.id, parent: p })?),
            };
            nodes.push(Node {
                label: s.id,
                parent,
                children: Vec::new(),
                measure: s.measure,
                generation: 0,
            });
        }
        // cycle check: colour 1 = on current path, 2 = known to reach a root
        let mut state = vec![0u8; nodes.len()];
        for start in 0..nodes.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => return Err(Error::CycleDetected { node: nodes[i].label }),
                    _ => {
                        state[i] = 1;
                        path.push(i);
                        cur = nodes[i].parent.map(NodeId::index);
                    }
                }
            }
            for i in path {
                state[i] = 2;
            }
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p.0].children.push(NodeId(i));
            }
        }
        let roots: Vec<NodeId> = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).map(NodeId).collect();

        let n = nodes.len();
        let mut depth = vec![0usize; n];
        let mut preorder = Vec::with_capacity(n);
        let mut leaves = Vec::new();
        let mut leaf_pos = vec![None; n];
        let mut leaf_range = vec![0..0; n];
        // iterative DFS; children visited in stored order
        for &root in &roots {
            let mut stack: Vec<(NodeId, bool)> = vec![(root, false)];
            while let Some((id, done)) = stack.pop() {
                if done {
                    leaf_range[id.0].end = leaves.len();
                    continue;
                }
                preorder.push(id);
                leaf_range[id.0].start = leaves.len();
                let gen = match nodes[id.0].parent {
                    None => specs[id.0].generation.unwrap_or(0),
                    Some(p) => {
                        depth[id.0] = depth[p.0] + 1;
                        specs[id.0].generation.unwrap_or(nodes[p.0].generation + 1)
                    }
                };
                nodes[id.0].generation = gen;
                if nodes[id.0].children.is_empty() {
                    leaf_pos[id.0] = Some(leaves.len());
                    leaves.push(id);
                    leaf_range[id.0].end = leaves.len();
                } else {
                    stack.push((id, true));
                    for &c in nodes[id.0].children.iter().rev() {
                        stack.push((c, false));
                    }
                }
            }
        }
        if leaves.is_empty() {
            return Err(Error::InvalidParameter("lattice has no nodes".into()));
        }
        Ok(Lattice {
            nodes,
            roots,
            leaves,
            leaf_range,
            leaf_pos,
            depth,
            preorder,
            by_label,
        })
    }

    /// Lists every invariant violation; empty iff the lattice is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for &id in &self.preorder {
            let node = &self.nodes[id.0];
            if !(node.measure > T::zero()) || !node.measure.is_finite() {
                out.push(Violation::NonPositiveMeasure(node.label));
            }
            if let Some(p) = node.parent {
                if node.generation <= self.nodes[p.0].generation {
                    out.push(Violation::GenerationOrder(node.label));
                }
            }
            match node.children.len() {
                0 => {}
                1 => out.push(Violation::SingleChild(node.label)),
                _ => {
                    let sum: T = node.children.iter().map(|c| self.nodes[c.0].measure).sum();
                    let tol = T::tol(MEASURE_TOL) * node.measure.abs();
                    if !((sum - node.measure).abs() <= tol) {
                        out.push(Violation::MeasureMismatch(node.label));
                    }
                }
            }
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Nodes in depth-first preorder (parents before children).
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.preorder.iter().copied().filter(move |&id| !self.is_leaf(id))
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn measure(&self, id: NodeId) -> T {
        self.nodes[id.0].measure
    }

    pub fn generation(&self, id: NodeId) -> i64 {
        self.nodes[id.0].generation
    }

    pub fn label(&self, id: NodeId) -> i64 {
        self.nodes[id.0].label
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id.0]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    pub fn is_root(&self, id: NodeId) -> bool {
        self.nodes[id.0].parent.is_none()
    }

    pub fn by_label(&self, label: i64) -> Option<NodeId> {
        self.by_label.get(&label).copied()
    }

    /// Looks up a node by label, reporting unknown labels as errors.
    pub fn resolve(&self, label: i64) -> Result<NodeId> {
        self.by_label(label).ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    pub fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(format!("#{}", id.0)))
        }
    }

    /// Leaf positions covered by `id`.
    pub fn leaf_range(&self, id: NodeId) -> Range<usize> {
        self.leaf_range[id.0].clone()
    }

    /// Position of a leaf node in leaf order.
    pub fn leaf_position(&self, id: NodeId) -> Option<usize> {
        self.leaf_pos[id.0]
    }

    pub fn leaf_measures(&self) -> Vec<T> {
        self.leaves.iter().map(|&l| self.nodes[l.0].measure).collect()
    }

    pub fn total_measure(&self) -> T {
        self.roots.iter().map(|&r| self.nodes[r.0].measure).sum()
    }

    /// `id` itself, then its parent, up to the root.
    pub fn ancestors_or_self(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(id), move |&c| self.nodes[c.0].parent)
    }

    /// True when `inner ⊆ outer`.
    pub fn contains(&self, outer: NodeId, inner: NodeId) -> bool {
        let (do_, di) = (self.depth[outer.0], self.depth[inner.0]);
        if di < do_ {
            return false;
        }
        let mut cur = inner;
        for _ in 0..(di - do_) {
            cur = self.nodes[cur.0].parent.expect("depth bookkeeping");
        }
        cur == outer
    }

    /// Child of `id` whose range holds leaf position `leaf`.
    pub fn child_containing(&self, id: NodeId, leaf: usize) -> Option<NodeId> {
        self.nodes[id.0]
            .children
            .iter()
            .copied()
            .find(|&c| self.leaf_range[c.0].contains(&leaf))
    }

    /// Descendants of `id` including itself, in preorder.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            for &c in self.nodes[n.0].children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Node descriptions that rebuild this lattice, in storage order.
    pub fn specs(&self) -> Vec<NodeSpec<T>> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.label,
                parent: n.parent.map(|p| self.nodes[p.0].label),
                measure: n.measure,
                generation: Some(n.generation),
            })
            .collect()
    }

    /// Same tree with measures cast to another scalar type.
    pub fn cast<U: Real>(&self) -> Result<Lattice<U>> {
        let specs: Vec<NodeSpec<U>> = self
            .specs()
            .into_iter()
            .map(|s| NodeSpec {
                id: s.id,
                parent: s.parent,
                measure: U::lit(s.measure.to_f64_lossy()),
                generation: s.generation,
            })
            .collect();
        Lattice::assemble(&specs)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: i64,
    parent: Option<i64>,
    measure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generation: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct LatticeFile {
    nodes: Vec<NodeRecord>,
}

impl<T: Real> Lattice<T> {
    /// Interchange form: `{"nodes":[{"id":..,"parent":..,"measure":..,"generation":..}]}`.
    pub fn to_json(&self) -> String {
        let file = LatticeFile {
            nodes: self
                .specs()
                .into_iter()
                .map(|s| NodeRecord {
                    id: s.id,
                    parent: s.parent,
                    measure: s.measure.to_f64_lossy(),
                    generation: s.generation,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("lattice serializes")
    }

    /// Parses the interchange form into node specs, without building.
    pub fn specs_from_json(text: &str) -> Result<Vec<NodeSpec<T>>> {
        let file: LatticeFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(file
            .nodes
            .into_iter()
            .map(|r| NodeSpec {
                id: r.id,
                parent: r.parent,
                measure: T::lit(r.measure),
                generation: r.generation,
            })
            .collect())
    }

    /// Parses and fully validates.
    pub fn from_json(text: &str) -> Result<Self> {
        build_lattice(&LatticeSpec::Nodes(Self::specs_from_json(text)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dyadic2() -> Vec<NodeSpec<f64>> {
        vec![
            NodeSpec::new(1, None, 1.0),
            NodeSpec::new(2, Some(1), 0.5),
            NodeSpec::new(3, Some(1), 0.5),
            NodeSpec::new(4, Some(2), 0.25),
            NodeSpec::new(5, Some(2), 0.25),
            NodeSpec::new(6, Some(3), 0.25),
            NodeSpec::new(7, Some(3), 0.25),
        ]
    }

    #[test]
    fn single_root() {
        let lat = build_lattice(&LatticeSpec::Nodes(vec![NodeSpec::new(0, None, 1.0)])).unwrap();
        assert_eq!(lat.num_nodes(), 1);
        assert_eq!(lat.num_leaves(), 1);
    }

    #[test]
    fn dyadic_depth_two() {
        let lat = build_lattice(&LatticeSpec::Nodes(dyadic2())).unwrap();
        assert_eq!(lat.num_nodes(), 7);
        assert_eq!(lat.num_leaves(), 4);
        let root = lat.by_label(1).unwrap();
        assert_eq!(lat.leaf_range(root), 0..4);
        assert_eq!(lat.leaf_range(lat.by_label(3).unwrap()), 2..4);
        assert_eq!(lat.generation(lat.by_label(6).unwrap()), 2);
        assert!(lat.contains(root, lat.by_label(7).unwrap()));
        assert!(!lat.contains(lat.by_label(2).unwrap(), lat.by_label(7).unwrap()));
    }

    #[test]
    fn mismatched_children() {
        let specs = vec![
            NodeSpec::new(0, None, 1.0),
            NodeSpec::new(1, Some(0), 0.5),
            NodeSpec::new(2, Some(0), 0.4),
        ];
        assert_eq!(
            build_lattice(&LatticeSpec::Nodes(specs)),
            Err(Error::MeasureMismatch { node: 0 })
        );
    }

    #[test]
    fn cycle_is_rejected() {
        let specs = vec![
            NodeSpec::new(0, None, 1.0),
            NodeSpec::new(1, Some(2), 0.5),
            NodeSpec::new(2, Some(1), 0.5),
        ];
        assert!(matches!(Lattice::assemble(&specs), Err(Error::CycleDetected { .. })));
    }

    #[test]
    fn uniform_radic_shapes() {
        let lat = uniform_radic(2, 1, 1.0f64).unwrap();
        assert_eq!(lat.num_nodes(), 3);
        assert_eq!(lat.leaf_measures(), vec![0.5, 0.5]);
        assert_eq!(uniform_radic(2, 10, 1.0f64).unwrap().num_nodes(), (1 << 11) - 1);
        let lat = uniform_radic(3, 2, 9.0f64).unwrap();
        assert_eq!(lat.num_nodes(), 13);
        assert!(lat.leaf_measures().iter().all(|&m| m == 1.0));
        assert!(uniform_radic(1, 3, 1.0f64).is_err());
    }

    #[test]
    fn validate_reports() {
        assert!(uniform_radic(2, 3, 1.0f64).unwrap().validate().is_empty());
        let lat = Lattice::assemble(&[NodeSpec::new(9, None, -1.0f64)]).unwrap();
        assert_eq!(lat.validate(), vec![Violation::NonPositiveMeasure(9)]);
        let lat = Lattice::assemble(&[
            NodeSpec::new(0, None, 1.0f64).with_generation(3),
            NodeSpec::new(1, Some(0), 0.5).with_generation(3),
            NodeSpec::new(2, Some(0), 0.5).with_generation(4),
        ])
        .unwrap();
        assert_eq!(lat.validate(), vec![Violation::GenerationOrder(1)]);
        let lat = Lattice::assemble(&[NodeSpec::new(0, None, 1.0f64), NodeSpec::new(1, Some(0), 1.0)]).unwrap();
        assert_eq!(lat.validate(), vec![Violation::SingleChild(0)]);
    }

    #[test]
    fn explicit_generations_allow_gaps() {
        let lat = build_lattice(&LatticeSpec::Nodes(vec![
            NodeSpec::new(0, None, 1.0f64).with_generation(-4),
            NodeSpec::new(1, Some(0), 0.5).with_generation(2),
            NodeSpec::new(2, Some(0), 0.5),
        ]))
        .unwrap();
        assert_eq!(lat.generation(NodeId(2)), -3);
    }

    #[test]
    fn json_round_trip() {
        let lat = uniform_radic(3, 2, 1.0f64).unwrap();
        let back = Lattice::<f64>::from_json(&lat.to_json()).unwrap();
        assert_eq!(lat, back);
    }

    #[test]
    fn leaves_cover_roots() {
        let lat = build_lattice(&LatticeSpec::Nodes(dyadic2())).unwrap();
        let total: f64 = lat.leaf_measures().iter().sum();
        assert_eq!(total, lat.total_measure());
    }
}

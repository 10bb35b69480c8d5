//! Determinization of a set-valued quantized controller into an
//! axis-aligned decision tree.
//!
//! A region accepts mode `p` when every cell in it either leaves the choice
//! free or permits `p`. Regions that accept some mode become a leaf (lowest
//! accepting mode); others are split on their widest axis (lowest axis on
//! ties) at the median cell, the left child keeping `k_axis <= threshold`.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lattice::CellRange;
use crate::synthesis::{ModeSet, RefinedController, SpecKind, INF};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Split { axis: usize, threshold: i64 },
    Leaf(usize),
}

/// Per-cell modes a determinization may choose; all modes where the choice
/// is unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct Permissions {
    pub cells: CellRange,
    pub modes: usize,
    pub permitted: Vec<ModeSet>,
}

impl Permissions {
    /// Safety: `K(q) != {} => K_d(q) in K(q)`.
    pub fn safety(k: &RefinedController, modes: usize) -> Self {
        let all = ModeSet::all(modes);
        Permissions {
            cells: k.cells.clone(),
            modes,
            permitted: k.k.iter().map(|&s| if s.is_empty() { all } else { s }).collect(),
        }
    }

    /// Reachability: constrained only on cells with finite `J~` that meet
    /// the safe set outside the target. `target_inside` lists the cells
    /// lying wholly inside the target box.
    pub fn reach(k: &RefinedController, target_inside: &CellRange, modes: usize) -> Result<Self> {
        let jt = k
            .j_tilde
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("reach determinization needs J~".into()))?;
        let all = ModeSet::all(modes);
        let exempt = k.cells.mask_of(target_inside);
        let permitted = (0..k.cells.len())
            .map(|i| if jt[i] == INF || exempt[i] { all } else { k.k[i] })
            .collect();
        Ok(Permissions { cells: k.cells.clone(), modes, permitted })
    }

    pub fn for_controller(k: &RefinedController, target_inside: Option<&CellRange>, modes: usize) -> Result<Self> {
        match (k.kind, target_inside) {
            (SpecKind::Safety, _) => Ok(Self::safety(k, modes)),
            (SpecKind::Reach, Some(t)) => Self::reach(k, t, modes),
            (SpecKind::Reach, None) => Err(Error::InvalidParameter("reach determinization needs the target".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTree {
    cells: CellRange,
    modes: usize,
    /// Preorder.
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn from_nodes(cells: CellRange, modes: usize, nodes: Vec<Node>) -> Result<Self> {
        let tree = DecisionTree { cells, modes, nodes };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        // every subtree must be complete and each region nonempty
        fn walk(t: &DecisionTree, pos: usize, lo: &mut Vec<i64>, hi: &mut Vec<i64>) -> Result<usize> {
            if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
                return Err(Error::Format("tree contains an empty region".into()));
            }
            match t.nodes.get(pos) {
                None => Err(Error::Format("truncated tree".into())),
                Some(Node::Leaf(p)) => {
                    if *p >= t.modes {
                        return Err(Error::Format(format!("leaf mode {p} out of range")));
                    }
                    Ok(pos + 1)
                }
                Some(&Node::Split { axis, threshold }) => {
                    if axis >= lo.len() {
                        return Err(Error::Format(format!("split axis {axis} out of range")));
                    }
                    let saved_hi = hi[axis];
                    hi[axis] = threshold;
                    let next = walk(t, pos + 1, lo, hi)?;
                    hi[axis] = saved_hi;
                    let saved_lo = lo[axis];
                    lo[axis] = threshold + 1;
                    let end = walk(t, next, lo, hi)?;
                    lo[axis] = saved_lo;
                    Ok(end)
                }
            }
        }
        if self.cells.is_empty() {
            return Err(Error::Format("tree over an empty cell range".into()));
        }
        let end = walk(self, 0, &mut self.cells.kmin.clone(), &mut self.cells.kmax.clone())?;
        if end != self.nodes.len() {
            return Err(Error::Format("trailing nodes after the tree".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> &CellRange {
        &self.cells
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Longest root-to-leaf path, counted in split nodes.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], pos: usize) -> (usize, usize) {
            match nodes[pos] {
                Node::Leaf(_) => (0, pos + 1),
                Node::Split { .. } => {
                    let (dl, next) = walk(nodes, pos + 1);
                    let (dr, end) = walk(nodes, next);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    /// `sum_i ceil(log2(extent_i))`.
    pub fn depth_bound(&self) -> usize {
        self.cells
            .extents()
            .iter()
            .map(|&e| (usize::BITS - (e.max(1) - 1).leading_zeros()) as usize)
            .sum()
    }

    pub fn lookup(&self, cell: &[i64]) -> Result<usize> {
        if !self.cells.contains(cell) {
            return Err(Error::OutOfDomain { cell: cell.to_vec() });
        }
        Ok(self.lookup_unchecked(cell))
    }

    fn lookup_unchecked(&self, cell: &[i64]) -> usize {
        // preorder: the left child follows its parent; the right child
        // follows the left subtree
        let mut pos = 0;
        loop {
            match self.nodes[pos] {
                Node::Leaf(p) => return p,
                Node::Split { axis, threshold } => {
                    if cell[axis] <= threshold {
                        pos += 1;
                    } else {
                        pos = self.skip(pos + 1);
                    }
                }
            }
        }
    }

    /// Index just past the subtree rooted at `pos`.
    fn skip(&self, mut pos: usize) -> usize {
        let mut pending = 1usize;
        while pending > 0 {
            match self.nodes[pos] {
                Node::Leaf(_) => pending -= 1,
                Node::Split { .. } => pending += 1,
            }
            pos += 1;
        }
        pos
    }

    /// Leaf mode of every cell, row-major.
    pub fn to_array(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.cells.len()];
        let mut lo = self.cells.kmin.clone();
        let mut hi = self.cells.kmax.clone();
        self.paint(0, &mut lo, &mut hi, &mut out);
        out
    }

    fn paint(&self, pos: usize, lo: &mut [i64], hi: &mut [i64], out: &mut [usize]) -> usize {
        match self.nodes[pos] {
            Node::Leaf(p) => {
                let region = CellRange { kmin: lo.to_vec(), kmax: hi.to_vec() };
                for k in region.iter() {
                    out[self.cells.index_of(&k).expect("region inside range")] = p;
                }
                pos + 1
            }
            Node::Split { axis, threshold } => {
                let h = hi[axis];
                hi[axis] = threshold;
                let next = self.paint(pos + 1, lo, hi, out);
                hi[axis] = h;
                let l = lo[axis];
                lo[axis] = threshold + 1;
                let end = self.paint(next, lo, hi, out);
                lo[axis] = l;
                end
            }
        }
    }
}

/// Builds the decision tree for a permission map.
pub fn determinize(perm: &Permissions) -> Result<DecisionTree> {
    if perm.cells.is_empty() {
        return Err(Error::InvalidParameter("cannot determinize over an empty cell range".into()));
    }
    if perm.permitted.len() != perm.cells.len() {
        return Err(Error::Dimension("permission array does not match the cell range".into()));
    }
    let all = ModeSet::all(perm.modes);
    let mut nodes = Vec::new();
    let mut lo = perm.cells.kmin.clone();
    let mut hi = perm.cells.kmax.clone();
    let strides = perm.cells.strides();
    build(perm, all, &strides, &mut lo, &mut hi, &mut nodes);
    DecisionTree::from_nodes(perm.cells.clone(), perm.modes, nodes)
}

pub fn determinize_safety(k: &RefinedController, modes: usize) -> Result<DecisionTree> {
    determinize(&Permissions::safety(k, modes))
}

pub fn determinize_reach(k: &RefinedController, target_inside: &CellRange, modes: usize) -> Result<DecisionTree> {
    determinize(&Permissions::reach(k, target_inside, modes)?)
}

fn region_intersection(perm: &Permissions, strides: &[usize], lo: &[i64], hi: &[i64], all: ModeSet) -> ModeSet {
    let n = lo.len();
    let kmin = &perm.cells.kmin;
    let last = n - 1;
    let mut acc = all;
    let mut k = lo.to_vec();
    loop {
        let mut base = 0usize;
        for a in 0..last {
            base += (k[a] - kmin[a]) as usize * strides[a];
        }
        let start = base + (lo[last] - kmin[last]) as usize;
        let end = base + (hi[last] - kmin[last]) as usize;
        for s in &perm.permitted[start..=end] {
            acc = acc.intersect(*s);
        }
        if acc.is_empty() {
            return acc;
        }
        // advance the prefix odometer
        let mut a = last;
        loop {
            if a == 0 {
                return acc;
            }
            a -= 1;
            if k[a] < hi[a] {
                k[a] += 1;
                break;
            }
            k[a] = lo[a];
        }
    }
}

fn build(perm: &Permissions, all: ModeSet, strides: &[usize], lo: &mut [i64], hi: &mut [i64], nodes: &mut Vec<Node>) {
    let accepted = region_intersection(perm, strides, lo, hi, all);
    if let Some(p) = accepted.lowest() {
        nodes.push(Node::Leaf(p));
        return;
    }
    let (axis, extent) = lo
        .iter()
        .zip(hi.iter())
        .map(|(a, b)| b - a + 1)
        .enumerate()
        .fold((0, 0), |best, (a, e)| if e > best.1 { (a, e) } else { best });
    if extent <= 1 {
        // single cell with no permitted mode: verification reports it
        nodes.push(Node::Leaf(0));
        return;
    }
    let threshold = lo[axis] + (extent - 1) / 2;
    nodes.push(Node::Split { axis, threshold });
    let h = hi[axis];
    hi[axis] = threshold;
    build(perm, all, strides, lo, hi, nodes);
    hi[axis] = h;
    let l = lo[axis];
    lo[axis] = threshold + 1;
    build(perm, all, strides, lo, hi, nodes);
    lo[axis] = l;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub checked: usize,
    /// Flat indices of violating cells, ascending.
    pub violations: Vec<usize>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustive membership check of every cell's leaf against its permitted set.
pub fn verify_determinization(tree: &DecisionTree, perm: &Permissions, exec: Exec) -> Result<VerificationReport> {
    if tree.cells() != &perm.cells {
        return Err(Error::InvalidParameter("tree and controller cover different cell ranges".into()));
    }
    let leaves = tree.to_array();
    let flags = exec.map(leaves.len(), |i| !perm.permitted[i].contains(leaves[i]));
    Ok(VerificationReport {
        checked: leaves.len(),
        violations: flags.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect(),
    })
}

//! Balanced dyadic partition trees over discrete grids.
//!
//! A grid of `total` cells is split recursively into half-spaces. Each
//! internal node carries one logit `E`; the probability of descending into
//! the right child is `σ(E)`. The mass of a cell is the product of the split
//! probabilities along its root-to-leaf path, so the tree is normalized by
//! construction.
//!
//! Split convention: a node over `[lo, hi]` along `split_dim` gives the first
//! `⌈s/2⌉` cells to the left child, and `threshold` is the first index of the
//! right child. A coordinate goes right iff `y[split_dim] >= threshold`.
//!
//! Nodes are numbered breadth-first. At tree depth `t` the node splits
//! dimension `t mod d`, moving on cyclically past dimensions whose extent in
//! the current region is already 1.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

/// Shape of a d-dimensional discrete grid, flattened in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridShape {
    dims: Vec<usize>,
    total: usize,
}

impl GridShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::domain("grid shape needs at least one dimension"));
        }
        if dims.contains(&0) {
            return Err(Error::domain(format!("grid sizes must be >= 1, got {dims:?}")));
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::domain("grid too large"))?;
        Ok(GridShape { dims, total })
    }

    pub fn line(size: usize) -> Result<Self> {
        Self::new(vec![size])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn contains(&self, coord: &[usize]) -> bool {
        coord.len() == self.dims.len() && coord.iter().zip(&self.dims).all(|(c, d)| c < d)
    }

    pub fn flatten(&self, coord: &[usize]) -> Result<usize> {
        if !self.contains(coord) {
            return Err(Error::domain(format!(
                "coordinate {coord:?} outside grid {:?}",
                self.dims
            )));
        }
        Ok(self.flatten_unchecked(coord))
    }

    pub(crate) fn flatten_unchecked(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &d)| acc * d + c)
    }

    pub fn unflatten(&self, mut index: usize) -> Vec<usize> {
        let mut coord = vec![0; self.dims.len()];
        for (c, &d) in coord.iter_mut().zip(&self.dims).rev() {
            *c = index % d;
            index /= d;
        }
        coord
    }

    pub(crate) fn unflatten_into(&self, mut index: usize, coord: &mut [usize]) {
        for (c, &d) in coord.iter_mut().zip(&self.dims).rev() {
            *c = index % d;
            index /= d;
        }
    }
}

/// Target of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    Node(usize),
    /// Flat (row-major) index of the single cell in the leaf region.
    Leaf(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitNode {
    pub id: usize,
    pub depth: usize,
    pub split_dim: usize,
    /// First index of the right child along `split_dim`.
    pub threshold: usize,
    /// Inclusive region bounds per dimension.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub left: Child,
    pub right: Child,
}

impl SplitNode {
    fn intersects(&self, lo: &[usize], hi: &[usize]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(lo.iter().zip(hi))
            .all(|((&a, &b), (&c, &d))| a <= d && c <= b)
    }
}

/// The balanced split tree over a grid.
#[derive(Debug, Clone)]
pub struct DyadicLayout {
    shape: GridShape,
    nodes: Vec<SplitNode>,
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: usize,
    pub direction: Direction,
    /// Padding steps are inactive and contribute nothing.
    pub active: bool,
}

/// Root-to-leaf path padded to the layout depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPath {
    pub steps: Vec<PathStep>,
}

impl SplitPath {
    pub fn active(&self) -> impl Iterator<Item = &PathStep> {
        self.steps.iter().filter(|s| s.active)
    }

    pub fn active_len(&self) -> usize {
        self.active().count()
    }
}

/// Clipped hypercube of radius `r` around a grid coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodWindow {
    pub center: Vec<usize>,
    pub radius: usize,
    /// Inclusive per-dimension bounds after clipping.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Flat grid indices of the cells in the window, row-major over the window.
    pub leaves: Vec<usize>,
}

impl NeighborhoodWindow {
    /// Extent of the window along each dimension.
    pub fn dims(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l + 1).collect()
    }

    /// Position of the center within `leaves`.
    pub fn center_position(&self) -> usize {
        self.center
            .iter()
            .zip(&self.lo)
            .zip(self.dims())
            .fold(0, |acc, ((c, l), d)| acc * d + (c - l))
    }

    fn position_of(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.lo)
            .zip(self.lo.iter().zip(&self.hi))
            .fold(0, |acc, ((c, l), (lo, hi))| acc * (hi - lo + 1) + (c - l))
    }
}

pub fn build_layout(shape: &GridShape) -> DyadicLayout {
    let d = shape.ndim();
    let mut nodes: Vec<SplitNode> = Vec::with_capacity(shape.total().saturating_sub(1));
    let mut max_depth = 0;

    // Regions waiting to become nodes, in id order.
    let mut queue: VecDeque<(Vec<usize>, Vec<usize>, usize)> = VecDeque::new();
    if shape.total() > 1 {
        let lo = vec![0; d];
        let hi: Vec<usize> = shape.dims().iter().map(|s| s - 1).collect();
        queue.push_back((lo, hi, 0));
    }

    while let Some((lo, hi, depth)) = queue.pop_front() {
        let id = nodes.len();
        let split_dim = (0..d)
            .map(|offset| (depth + offset) % d)
            .find(|&dim| hi[dim] > lo[dim])
            .expect("regions with more than one cell have a splittable dimension");
        let extent = hi[split_dim] - lo[split_dim] + 1;
        let threshold = lo[split_dim] + extent.div_ceil(2);

        let mut left_hi = hi.clone();
        left_hi[split_dim] = threshold - 1;
        let mut right_lo = lo.clone();
        right_lo[split_dim] = threshold;

        // Children that still need splitting get ids in push order, which is
        // exactly breadth-first numbering.
        let next_id = id + 1 + queue.len();
        let mut assign = |clo: Vec<usize>, chi: Vec<usize>, offset: usize| -> Child {
            if clo == chi {
                Child::Leaf(shape.flatten_unchecked(&clo))
            } else {
                queue.push_back((clo, chi, depth + 1));
                Child::Node(next_id + offset)
            }
        };
        let left = assign(lo.clone(), left_hi, 0);
        let right_offset = usize::from(matches!(left, Child::Node(_)));
        let right = assign(right_lo, hi.clone(), right_offset);

        max_depth = max_depth.max(depth + 1);
        nodes.push(SplitNode {
            id,
            depth,
            split_dim,
            threshold,
            lo,
            hi,
            left,
            right,
        });
    }

    DyadicLayout {
        shape: shape.clone(),
        nodes,
        depth: max_depth,
    }
}

impl DyadicLayout {
    pub fn new(shape: &GridShape) -> Self {
        build_layout(shape)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn nodes(&self) -> &[SplitNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Padded path length: the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn check_logits(&self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.nodes.len() {
            return Err(Error::domain(format!(
                "expected {} split logits, got {}",
                self.nodes.len(),
                logits.len()
            )));
        }
        Ok(())
    }

    fn check_index(&self, leaf: usize) -> Result<()> {
        if leaf >= self.shape.total() {
            return Err(Error::domain(format!(
                "leaf index {leaf} outside grid of {} cells",
                self.shape.total()
            )));
        }
        Ok(())
    }

    /// Walks from the root to `leaf`, calling `visit(node, direction)` per step.
    #[inline]
    fn walk(&self, leaf: usize, coord: &mut [usize], mut visit: impl FnMut(usize, Direction)) {
        if self.nodes.is_empty() {
            return;
        }
        self.shape.unflatten_into(leaf, coord);
        let mut current = 0;
        loop {
            let node = &self.nodes[current];
            let (dir, next) = if coord[node.split_dim] >= node.threshold {
                (Direction::Right, node.right)
            } else {
                (Direction::Left, node.left)
            };
            visit(current, dir);
            match next {
                Child::Node(id) => current = id,
                Child::Leaf(_) => return,
            }
        }
    }

    pub fn path_for(&self, coord: &[usize]) -> Result<SplitPath> {
        let leaf = self.shape.flatten(coord)?;
        Ok(self.path_for_index(leaf))
    }

    pub(crate) fn path_for_index(&self, leaf: usize) -> SplitPath {
        let mut steps = Vec::with_capacity(self.depth);
        let mut scratch = vec![0; self.shape.ndim()];
        self.walk(leaf, &mut scratch, |node, direction| {
            steps.push(PathStep {
                node,
                direction,
                active: true,
            })
        });
        steps.resize(
            self.depth,
            PathStep {
                node: 0,
                direction: Direction::Left,
                active: false,
            },
        );
        SplitPath { steps }
    }

    /// Log-mass of a coordinate.
    pub fn log_prob(&self, logits: &[f64], coord: &[usize]) -> Result<f64> {
        let leaf = self.shape.flatten(coord)?;
        self.log_prob_index(logits, leaf)
    }

    /// Log-mass of a flat cell index.
    pub fn log_prob_index(&self, logits: &[f64], leaf: usize) -> Result<f64> {
        self.check_logits(logits)?;
        self.check_index(leaf)?;
        let mut scratch = [0usize; 8];
        let mut heap;
        let coord: &mut [usize] = if self.shape.ndim() <= 8 {
            &mut scratch[..self.shape.ndim()]
        } else {
            heap = vec![0; self.shape.ndim()];
            &mut heap
        };
        let mut total = 0.0;
        self.walk(leaf, coord, |node, dir| {
            total += branch_log_prob(logits[node], dir);
        });
        Ok(total)
    }

    /// Sparse gradient of `log_prob` w.r.t. the split logits: one entry per
    /// active path node.
    pub fn log_prob_grad(&self, logits: &[f64], coord: &[usize]) -> Result<Vec<(usize, f64)>> {
        let leaf = self.shape.flatten(coord)?;
        self.check_logits(logits)?;
        let mut grad = Vec::with_capacity(self.depth);
        let mut scratch = vec![0; self.shape.ndim()];
        self.walk(leaf, &mut scratch, |node, dir| {
            grad.push((node, branch_grad(logits[node], dir)));
        });
        Ok(grad)
    }

    /// Adds `scale * ∇ log p(leaf)` into a dense gradient buffer.
    pub(crate) fn accumulate_log_prob_grad(
        &self,
        logits: &[f64],
        leaf: usize,
        scale: f64,
        grad: &mut [f64],
        scratch: &mut [usize],
    ) {
        self.walk(leaf, scratch, |node, dir| {
            grad[node] += scale * branch_grad(logits[node], dir);
        });
    }

    /// Full distribution over every cell.
    pub fn decode_full(&self, logits: &[f64]) -> Result<Vec<f64>> {
        self.check_logits(logits)?;
        let mut mass = vec![0.0; self.shape.total()];
        if self.nodes.is_empty() {
            mass[0] = 1.0;
            return Ok(mass);
        }
        let mut log_mass = vec![0.0; self.nodes.len()];
        // Parents precede children in breadth-first order.
        for node in &self.nodes {
            let base = log_mass[node.id];
            let e = logits[node.id];
            for (child, lp) in [
                (node.left, base + log_sigmoid(-e)),
                (node.right, base + log_sigmoid(e)),
            ] {
                match child {
                    Child::Node(id) => log_mass[id] = lp,
                    Child::Leaf(cell) => mass[cell] = lp.exp(),
                }
            }
        }
        Ok(mass)
    }

    /// Leaf log-masses for every cell of a window, in the window's row-major
    /// order. One traversal covers the whole window: shared path prefixes
    /// are evaluated once.
    pub fn gather_window_logprobs(
        &self,
        logits: &[f64],
        window: &NeighborhoodWindow,
    ) -> Result<Vec<f64>> {
        self.check_logits(logits)?;
        let mut out = vec![0.0; window.leaves.len()];
        if self.nodes.is_empty() {
            return Ok(out);
        }
        let mut coord = vec![0; self.shape.ndim()];
        self.gather_rec(0, 0.0, logits, window, &mut out, &mut coord);
        Ok(out)
    }

    fn gather_rec(
        &self,
        id: usize,
        prefix: f64,
        logits: &[f64],
        window: &NeighborhoodWindow,
        out: &mut [f64],
        coord: &mut [usize],
    ) {
        let node = &self.nodes[id];
        let e = logits[id];
        for (child, lp) in [
            (node.left, prefix + log_sigmoid(-e)),
            (node.right, prefix + log_sigmoid(e)),
        ] {
            match child {
                Child::Node(cid) => {
                    if self.nodes[cid].intersects(&window.lo, &window.hi) {
                        self.gather_rec(cid, lp, logits, window, out, coord);
                    }
                }
                Child::Leaf(cell) => {
                    self.shape.unflatten_into(cell, coord);
                    if in_bounds(coord, &window.lo, &window.hi) {
                        out[window.position_of(coord)] = lp;
                    }
                }
            }
        }
    }

    /// Back-propagates `upstream` (one value per window cell, the gradient
    /// of some loss w.r.t. the gathered leaf log-masses) onto the split
    /// logits, adding `scale *` the result into `grad`.
    pub fn window_logprob_backward(
        &self,
        logits: &[f64],
        window: &NeighborhoodWindow,
        upstream: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_logits(logits)?;
        if upstream.len() != window.leaves.len() {
            return Err(Error::domain(format!(
                "upstream has {} entries for a window of {}",
                upstream.len(),
                window.leaves.len()
            )));
        }
        if self.nodes.is_empty() {
            return Ok(());
        }
        let mut coord = vec![0; self.shape.ndim()];
        self.backward_rec(0, logits, window, upstream, scale, grad, &mut coord);
        Ok(())
    }

    /// Returns the sum of upstream values over window leaves below `id`.
    #[allow(clippy::too_many_arguments)]
    fn backward_rec(
        &self,
        id: usize,
        logits: &[f64],
        window: &NeighborhoodWindow,
        upstream: &[f64],
        scale: f64,
        grad: &mut [f64],
        coord: &mut [usize],
    ) -> f64 {
        let node = &self.nodes[id];
        let mut sums = [0.0; 2];
        for (slot, child) in [node.left, node.right].into_iter().enumerate() {
            sums[slot] = match child {
                Child::Node(cid) => {
                    if self.nodes[cid].intersects(&window.lo, &window.hi) {
                        self.backward_rec(cid, logits, window, upstream, scale, grad, coord)
                    } else {
                        0.0
                    }
                }
                Child::Leaf(cell) => {
                    self.shape.unflatten_into(cell, coord);
                    if in_bounds(coord, &window.lo, &window.hi) {
                        upstream[window.position_of(coord)]
                    } else {
                        0.0
                    }
                }
            };
        }
        let s = sigmoid(logits[id]);
        grad[id] += scale * (sums[1] * (1.0 - s) - sums[0] * s);
        sums[0] + sums[1]
    }
}

#[inline]
fn in_bounds(coord: &[usize], lo: &[usize], hi: &[usize]) -> bool {
    coord
        .iter()
        .zip(lo.iter().zip(hi))
        .all(|(c, (l, h))| l <= c && c <= h)
}

#[inline]
fn branch_log_prob(e: f64, dir: Direction) -> f64 {
    match dir {
        Direction::Right => log_sigmoid(e),
        Direction::Left => log_sigmoid(-e),
    }
}

#[inline]
fn branch_grad(e: f64, dir: Direction) -> f64 {
    match dir {
        Direction::Right => sigmoid(-e),
        Direction::Left => -sigmoid(e),
    }
}

/// Clipped hypercube of radius `r` centered at `center`.
pub fn neighborhood(shape: &GridShape, center: &[usize], radius: usize) -> Result<NeighborhoodWindow> {
    if !shape.contains(center) {
        return Err(Error::domain(format!(
            "coordinate {center:?} outside grid {:?}",
            shape.dims()
        )));
    }
    let lo: Vec<usize> = center.iter().map(|&c| c.saturating_sub(radius)).collect();
    let hi: Vec<usize> = center
        .iter()
        .zip(shape.dims())
        .map(|(&c, &s)| (c + radius).min(s - 1))
        .collect();
    let extents: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| h - l + 1).collect();
    let count: usize = extents.iter().product();
    let mut leaves = Vec::with_capacity(count);
    let mut offset = vec![0usize; lo.len()];
    let mut coord = lo.clone();
    for _ in 0..count {
        for ((c, l), o) in coord.iter_mut().zip(&lo).zip(&offset) {
            *c = l + o;
        }
        leaves.push(shape.flatten_unchecked(&coord));
        // Row-major increment: last dimension fastest.
        for dim in (0..offset.len()).rev() {
            offset[dim] += 1;
            if offset[dim] < extents[dim] {
                break;
            }
            offset[dim] = 0;
        }
    }
    Ok(NeighborhoodWindow {
        center: center.to_vec(),
        radius,
        lo,
        hi,
        leaves,
    })
}

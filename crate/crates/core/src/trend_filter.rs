//! Graph trend filtering operators on grid graphs.
//!
//! The order-1 operator is the oriented edge incidence matrix `D` of the
//! grid graph (axis-aligned neighbours). Higher orders follow the
//! alternating recursion `Δ(k+1) = Dᵀ Δ(k)` for odd `k` and `D Δ(k)` for even
//! `k`, so even orders are powers of the graph Laplacian.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::grid_tree::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub value: i64,
}

/// Sparse k-th order difference operator, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PenaltyOperator {
    rows: usize,
    cols: usize,
    order: usize,
    shape: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<i64>,
}

/// Row-major sparse rows used while composing operators.
type Rows = Vec<Vec<(usize, i64)>>;

impl PenaltyOperator {
    fn from_rows(rows: Rows, cols: usize, order: usize, shape: Vec<usize>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        PenaltyOperator {
            rows: rows.len(),
            cols,
            order,
            shape,
            row_ptr,
            col_idx,
            values,
        }
    }

    fn to_rows(&self) -> Rows {
        (0..self.rows).map(|r| self.row(r).collect()).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Shape of the grid the operator was built for.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, i64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<Triplet> {
        (0..self.rows)
            .flat_map(|row| self.row(row).map(move |(col, value)| Triplet { row, col, value }))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<i64>> {
        let mut dense = vec![vec![0; self.cols]; self.rows];
        for t in self.triplets() {
            dense[t.row][t.col] = t.value;
        }
        dense
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.cols {
            return Err(Error::domain(format!(
                "operator has {} columns, vector has {} entries",
                self.cols,
                z.len()
            )));
        }
        Ok(())
    }

    /// `Δ z`.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v as f64 * z[c]).sum())
            .collect())
    }

    /// `Δᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::domain(format!(
                "operator has {} rows, vector has {} entries",
                self.rows,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (c, coef) in self.row(r) {
                out[c] += coef as f64 * vr;
            }
        }
        Ok(out)
    }

    /// `‖Δ z‖₁`.
    pub fn penalty(&self, z: &[f64]) -> Result<f64> {
        Ok(self.apply(z)?.iter().map(|d| d.abs()).sum())
    }

    /// `Δᵀ sign(Δ z)` with `sign(0) = 0`.
    pub fn penalty_subgrad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let signs: Vec<f64> = self.apply(z)?.into_iter().map(sign).collect();
        self.apply_transpose(&signs)
    }

    /// Penalty value and subgradient in one pass.
    pub fn penalty_and_subgrad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let diffs = self.apply(z)?;
        let value = diffs.iter().map(|d| d.abs()).sum();
        let signs: Vec<f64> = diffs.into_iter().map(sign).collect();
        Ok((value, self.apply_transpose(&signs)?))
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Edge incidence matrix of the grid graph. Edges are enumerated by their
/// lower cell (row-major) and then by axis; each row is `e_j − e_i` with
/// `i < j`.
pub fn incidence(shape: &GridShape) -> PenaltyOperator {
    let dims = shape.dims();
    let mut strides = vec![1usize; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * dims[d + 1];
    }
    let mut rows: Rows = Vec::new();
    let mut coord = vec![0; dims.len()];
    for i in 0..shape.total() {
        shape.unflatten_into(i, &mut coord);
        for (axis, &stride) in strides.iter().enumerate() {
            if coord[axis] + 1 < dims[axis] {
                rows.push(vec![(i, -1), (i + stride, 1)]);
            }
        }
    }
    PenaltyOperator::from_rows(rows, shape.total(), 1, dims.to_vec())
}

/// k-th order graph trend filtering operator.
pub fn gtf_operator(shape: &GridShape, order: usize) -> Result<PenaltyOperator> {
    if order < 1 {
        return Err(Error::domain("trend filtering order must be >= 1"));
    }
    let d = incidence(shape);
    let d_rows = d.to_rows();
    let dt_rows = transpose(&d_rows, d.cols);
    let mut current = d_rows.clone();
    for k in 1..order {
        current = if k % 2 == 1 {
            multiply(&dt_rows, &current)
        } else {
            multiply(&d_rows, &current)
        };
    }
    Ok(PenaltyOperator::from_rows(
        current,
        shape.total(),
        order,
        shape.dims().to_vec(),
    ))
}

fn transpose(rows: &Rows, cols: usize) -> Rows {
    let mut out: Rows = vec![Vec::new(); cols];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            out[c].push((r, v));
        }
    }
    out
}

/// Sparse product `a · b` where `b`'s rows are indexed by `a`'s columns.
fn multiply(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .map(|row| {
            let mut acc: BTreeMap<usize, i64> = BTreeMap::new();
            for &(k, av) in row {
                for &(c, bv) in &b[k] {
                    *acc.entry(c).or_insert(0) += av * bv;
                }
            }
            acc.into_iter().filter(|&(_, v)| v != 0).collect()
        })
        .collect()
}

type OperatorKey = (Vec<usize>, usize);

/// Shape-keyed cache of window operators. Reads are shared; a miss builds the
/// operator once under the write lock.
#[derive(Debug, Default)]
pub struct OperatorCache {
    inner: RwLock<HashMap<OperatorKey, Arc<PenaltyOperator>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dims: &[usize], order: usize) -> Result<Arc<PenaltyOperator>> {
        let key = (dims.to_vec(), order);
        if let Some(op) = self.inner.read().expect("operator cache poisoned").get(&key) {
            return Ok(Arc::clone(op));
        }
        let mut guard = self.inner.write().expect("operator cache poisoned");
        if let Some(op) = guard.get(&key) {
            return Ok(Arc::clone(op));
        }
        let shape = GridShape::new(dims.to_vec())?;
        let op = Arc::new(gtf_operator(&shape, order)?);
        guard.insert(key, Arc::clone(&op));
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("operator cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

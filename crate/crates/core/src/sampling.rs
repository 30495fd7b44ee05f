//! Dual-scale candidate sets.
//!
//! Every node draws candidates from a dense `L x L` window around itself and
//! from a sparse `G x G` lattice that shares the node's residue modulo the
//! strides `(H / G, W / G)`. Out-of-bounds window cells are dropped, so
//! local sets shrink at image borders. Lattice points pass through the same
//! in-bounds filter, though floor strides never place one outside the image.

use serde::{Deserialize, Serialize};

use crate::error::{GfaError, Result};
use crate::tensor::{NodeIndex, Shape};

/// Which parts of the dual-scale candidate set to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    LocalOnly,
    GlobalOnly,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    #[serde(rename = "node")]
    pub owner: usize,
    pub local: Vec<usize>,
    pub global: Vec<usize>,
    pub merged: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.merged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }
}

/// Offsets covered by a window of side `side`: `[-floor(L/2), ceil(L/2) - 1]`.
///
/// Odd sides give the symmetric `|d| <= (L-1)/2` window; even sides lean one
/// cell toward negative offsets so the interior window still has `L * L` cells.
pub fn window_offsets(side: usize) -> std::ops::RangeInclusive<isize> {
    let lo = -((side / 2) as isize);
    let hi = (side.div_ceil(2) as isize) - 1;
    lo..=hi
}

fn check_local(shape: Shape, side: usize) -> Result<()> {
    if side == 0 {
        return Err(GfaError::config("local window side must be at least 1"));
    }
    if side > 2 * shape.height.max(shape.width) {
        return Err(GfaError::config(format!(
            "local window side {side} exceeds twice the image extent {}x{}",
            shape.height, shape.width
        )));
    }
    Ok(())
}

fn check_global(shape: Shape, grid: usize) -> Result<()> {
    if grid == 0 {
        return Err(GfaError::config("global grid side must be at least 1"));
    }
    if grid > shape.height || grid > shape.width {
        return Err(GfaError::config(format!(
            "global grid side {grid} exceeds image extent {}x{} (zero stride)",
            shape.height, shape.width
        )));
    }
    Ok(())
}

/// In-bounds nodes of the local window around `node`, ascending.
pub fn sample_local(node: NodeIndex, shape: Shape, side: usize) -> Result<Vec<usize>> {
    check_local(shape, side)?;
    let (u, v) = shape.node_to_coord(node)?;
    let offsets = window_offsets(side);
    let rows = clip_range(u, offsets.clone(), shape.height);
    let cols = clip_range(v, offsets, shape.width);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        for c in cols.clone() {
            out.push(r * shape.width + c);
        }
    }
    Ok(out)
}

fn clip_range(
    center: usize,
    offsets: std::ops::RangeInclusive<isize>,
    extent: usize,
) -> std::ops::Range<usize> {
    let lo = (center as isize + offsets.start()).max(0) as usize;
    let hi = ((center as isize + offsets.end()).min(extent as isize - 1) + 1) as usize;
    lo..hi
}

/// Strides of the global lattice for `grid`.
pub fn lattice_strides(shape: Shape, grid: usize) -> Result<(usize, usize)> {
    check_global(shape, grid)?;
    Ok((shape.height / grid, shape.width / grid))
}

/// In-bounds lattice points aligned with `node`'s stride residue, ascending.
pub fn sample_global(node: NodeIndex, shape: Shape, grid: usize) -> Result<Vec<usize>> {
    let (stride_h, stride_w) = lattice_strides(shape, grid)?;
    let (u, v) = shape.node_to_coord(node)?;
    let (r, c) = (u % stride_h, v % stride_w);
    let rows: Vec<usize> = (0..grid)
        .map(|a| r + a * stride_h)
        .filter(|&row| row < shape.height)
        .collect();
    let cols: Vec<usize> = (0..grid)
        .map(|b| c + b * stride_w)
        .filter(|&col| col < shape.width)
        .collect();
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            out.push(row * shape.width + col);
        }
    }
    Ok(out)
}

/// Builds the candidate set of `node` for the requested `mode`.
///
/// Parts that `mode` excludes are left empty and their parameters are not
/// validated.
pub fn build_candidates(
    node: NodeIndex,
    shape: Shape,
    local_side: usize,
    grid: usize,
    mode: CandidateMode,
) -> Result<CandidateSet> {
    let local = match mode {
        CandidateMode::LocalOnly | CandidateMode::Both => sample_local(node, shape, local_side)?,
        CandidateMode::GlobalOnly => Vec::new(),
    };
    let global = match mode {
        CandidateMode::GlobalOnly | CandidateMode::Both => sample_global(node, shape, grid)?,
        CandidateMode::LocalOnly => Vec::new(),
    };
    let merged = merge_sorted(&local, &global);
    Ok(CandidateSet {
        owner: shape.check(node)?,
        local,
        global,
        merged,
    })
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Candidate sets for every node, in node order.
pub fn build_all_candidates(
    shape: Shape,
    local_side: usize,
    grid: usize,
    mode: CandidateMode,
) -> Result<Vec<CandidateSet>> {
    (0..shape.nodes())
        .map(|i| build_candidates(NodeIndex(i), shape, local_side, grid, mode))
        .collect()
}

//! Four-direction 2D selective scanning (SS2D).
//!
//! A feature map is flattened into four 1D sequences (raster order,
//! transposed raster order, and their reversals), each sequence runs through
//! its own selective scan, the results are mapped back to the original
//! layout and summed. Flattening is a bijective reindexing, so each
//! direction is exactly invertible.

use crate::error::{Result, SigmaError};
use crate::scalar::Scalar;
use crate::ssm::{BbarForm, SelectiveSsmParams};
use crate::tensor::{DenseArray, FeatureMap};

/// Traversal order for flattening an (H, W) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDirection {
    /// Raster order: rows left-to-right, top-to-bottom.
    RowMajor,
    /// Transposed raster: columns top-to-bottom, left-to-right.
    ColMajor,
    /// Element-reversed raster.
    RowMajorReversed,
    /// Element-reversed transposed raster.
    ColMajorReversed,
}

pub const ALL_DIRECTIONS: [ScanDirection; 4] = [
    ScanDirection::RowMajor,
    ScanDirection::ColMajor,
    ScanDirection::RowMajorReversed,
    ScanDirection::ColMajorReversed,
];

impl ScanDirection {
    pub fn reversed_of(self) -> ScanDirection {
        match self {
            ScanDirection::RowMajor => ScanDirection::RowMajorReversed,
            ScanDirection::ColMajor => ScanDirection::ColMajorReversed,
            ScanDirection::RowMajorReversed => ScanDirection::RowMajor,
            ScanDirection::ColMajorReversed => ScanDirection::ColMajor,
        }
    }

    /// Flat grid index visited at sequence position `pos`.
    fn grid_index(self, pos: usize, h: usize, w: usize) -> usize {
        let n = h * w;
        match self {
            ScanDirection::RowMajor => pos,
            ScanDirection::RowMajorReversed => n - 1 - pos,
            ScanDirection::ColMajor => {
                let (col, row) = (pos / h, pos % h);
                row * w + col
            }
            ScanDirection::ColMajorReversed => {
                let p = n - 1 - pos;
                let (col, row) = (p / h, p % h);
                row * w + col
            }
        }
    }
}

/// Flatten an (H, W, C) map into an (H*W, C) sequence along a direction.
pub fn flatten_direction<T: Scalar>(f: &FeatureMap<T>, dir: ScanDirection) -> DenseArray<T> {
    let (h, w, c) = (f.h(), f.w(), f.c());
    let src = f.data();
    let mut out = Vec::with_capacity(h * w * c);
    for pos in 0..h * w {
        let g = dir.grid_index(pos, h, w);
        out.extend_from_slice(&src[g * c..(g + 1) * c]);
    }
    DenseArray::new(vec![h * w, c], out).expect("flatten preserves element count")
}

/// Exact inverse of [`flatten_direction`].
pub fn unflatten_direction<T: Scalar>(
    s: &DenseArray<T>,
    dir: ScanDirection,
    h: usize,
    w: usize,
) -> Result<FeatureMap<T>> {
    if s.rank() != 2 || s.shape()[0] != h * w {
        return Err(SigmaError::dim(format!(
            "unflatten: sequence {:?} does not match {h}x{w} grid",
            s.shape()
        )));
    }
    let c = s.shape()[1];
    let src = s.data();
    let mut out = vec![T::ZERO; h * w * c];
    for pos in 0..h * w {
        let g = dir.grid_index(pos, h, w);
        out[g * c..(g + 1) * c].copy_from_slice(&src[pos * c..(pos + 1) * c]);
    }
    FeatureMap::new(DenseArray::new(vec![h, w, c], out)?)
}

/// One selective scan parameter set per direction.
#[derive(Debug, Clone)]
pub struct DirectionalParams<T> {
    pub dirs: [SelectiveSsmParams<T>; 4],
}

impl<T: Scalar> DirectionalParams<T> {
    pub fn new(dirs: [SelectiveSsmParams<T>; 4]) -> Result<Self> {
        let (c0, n0) = (dirs[0].channels(), dirs[0].state_size());
        for p in &dirs {
            if p.channels() != c0 || p.state_size() != n0 {
                return Err(SigmaError::config(
                    "all four directional parameter sets must share channels and state size",
                ));
            }
        }
        Ok(DirectionalParams { dirs })
    }

    pub fn channels(&self) -> usize {
        self.dirs[0].channels()
    }
}

/// Flatten along all four directions, scan each with its own parameters,
/// map every result back and sum in fixed direction order.
pub fn ss2d<T: Scalar>(f: &FeatureMap<T>, params: &DirectionalParams<T>) -> Result<FeatureMap<T>> {
    if f.c() != params.channels() {
        return Err(SigmaError::dim(format!(
            "ss2d: map has {} channels, params expect {}",
            f.c(),
            params.channels()
        )));
    }
    let (h, w) = (f.h(), f.w());
    let mut acc: Option<FeatureMap<T>> = None;
    for (dir, p) in ALL_DIRECTIONS.iter().zip(&params.dirs) {
        let seq = flatten_direction(f, *dir);
        let y = p.scan(&seq, BbarForm::Taylor)?;
        let back = unflatten_direction(&y, *dir, h, w)?;
        acc = Some(match acc {
            None => back,
            Some(a) => a.add(&back)?,
        });
    }
    Ok(acc.expect("four directions always produce output"))
}

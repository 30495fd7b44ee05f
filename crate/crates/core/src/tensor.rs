//! Dense `H x W x C` feature maps.
//!
//! Pixels are graph nodes. Node `i` sits at row `i / W`, column `i % W`,
//! and its feature vector occupies `data[i * C .. (i + 1) * C]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GfaError, Result};

/// Spatial extent of a feature map, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Self {
        Shape { height, width }
    }

    pub fn nodes(&self) -> usize {
        self.height * self.width
    }

    /// Maps a node index to its `(row, col)` coordinate.
    pub fn node_to_coord(&self, node: NodeIndex) -> Result<(usize, usize)> {
        let i = node.get();
        if i >= self.nodes() {
            return Err(GfaError::Index {
                index: i,
                nodes: self.nodes(),
            });
        }
        Ok((i / self.width, i % self.width))
    }

    pub fn coord_to_node(&self, row: usize, col: usize) -> Result<NodeIndex> {
        if row >= self.height || col >= self.width {
            return Err(GfaError::Index {
                index: row.saturating_mul(self.width).saturating_add(col),
                nodes: self.nodes(),
            });
        }
        Ok(NodeIndex(row * self.width + col))
    }

    pub(crate) fn check(&self, node: NodeIndex) -> Result<usize> {
        if node.get() < self.nodes() {
            Ok(node.get())
        } else {
            Err(GfaError::Index {
                index: node.get(),
                nodes: self.nodes(),
            })
        }
    }
}

/// Flat row-major pixel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIndex(pub usize);

impl NodeIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for NodeIndex {
    fn from(i: usize) -> Self {
        NodeIndex(i)
    }
}

/// Immutable `H x W x C` tensor of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Rejects zero dimensions, a length mismatch, and any non-finite value.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GfaError::domain(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| GfaError::domain("feature map dimensions overflow"))?;
        if data.len() != expected {
            return Err(GfaError::domain(format!(
                "expected {expected} values for {height}x{width}x{channels}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GfaError::domain(format!(
                "non-finite value {} at flat offset {pos}",
                data[pos]
            )));
        }
        Ok(FeatureMap {
            shape: Shape::new(height, width),
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds a map by evaluating `f(row, col, channel)` at every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for u in 0..height {
            for v in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Uniform values in `[-1, 1)` from a ChaCha8 stream seeded by `seed`.
    pub fn random_uniform(height: usize, width: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..height * width * channels)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn nodes(&self) -> usize {
        self.shape.nodes()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector `x_i` as a read-only slice.
    pub fn feature(&self, node: NodeIndex) -> Result<&[f32]> {
        let i = self.shape.check(node)?;
        Ok(self.row(i))
    }

    /// Unchecked-by-`Result` access for hot loops; panics on a bad index.
    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.shape.width + col) * self.channels + channel]
    }

    /// Multiplies every value by `factor`, re-validating finiteness.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.height(),
            self.width(),
            self.channels,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub(crate) fn add(&self, other: &FeatureMap) -> Result<Self> {
        if self.shape != other.shape || self.channels != other.channels {
            return Err(GfaError::config("residual shapes differ"));
        }
        Self::new(
            self.height(),
            self.width(),
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_examples() {
        let s = Shape::new(4, 4);
        assert_eq!(s.node_to_coord(NodeIndex(0)).unwrap(), (0, 0));
        assert_eq!(s.node_to_coord(NodeIndex(5)).unwrap(), (1, 1));
        assert_eq!(s.node_to_coord(NodeIndex(15)).unwrap(), (3, 3));
        assert!(matches!(
            s.node_to_coord(NodeIndex(16)),
            Err(GfaError::Index { index: 16, nodes: 16 })
        ));
    }

    #[test]
    fn coord_round_trip_exhaustive() {
        for h in 1..=7 {
            for w in 1..=7 {
                let s = Shape::new(h, w);
                for i in 0..s.nodes() {
                    let (u, v) = s.node_to_coord(NodeIndex(i)).unwrap();
                    assert_eq!(s.coord_to_node(u, v).unwrap(), NodeIndex(i));
                }
            }
        }
    }

    #[test]
    fn feature_examples() {
        let f = FeatureMap::filled(3, 2, 4, 2.0).unwrap();
        assert_eq!(f.feature(NodeIndex(4)).unwrap(), &[2.0; 4]);

        let ramp = FeatureMap::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(ramp.feature(NodeIndex(0)).unwrap(), &[0.0, 1.0, 2.0]);
        assert_eq!(ramp.feature(NodeIndex(3)).unwrap(), &[9.0, 10.0, 11.0]);
        assert!(ramp.feature(NodeIndex(4)).is_err());

        let one = FeatureMap::new(1, 1, 3, vec![0.5, -1.0, 7.0]).unwrap();
        assert_eq!(one.feature(NodeIndex(0)).unwrap(), one.data());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(FeatureMap::new(0, 2, 1, vec![]).is_err());
        assert!(FeatureMap::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 2, 1, vec![0.0, f32::NAN]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn feature_matches_layout_formula() {
        let (h, w, c) = (5, 3, 4);
        let f = FeatureMap::from_fn(h, w, c, |u, v, k| (u * 100 + v * 10 + k) as f32).unwrap();
        for i in 0..h * w {
            let (u, v) = f.shape().node_to_coord(NodeIndex(i)).unwrap();
            let x = f.feature(NodeIndex(i)).unwrap();
            for k in 0..c {
                assert_eq!(x[k], f.data()[(u * w + v) * c + k]);
                assert_eq!(x[k], f.at(u, v, k));
            }
        }
    }
}

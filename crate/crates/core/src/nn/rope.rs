//! 3D rotary position embeddings over (time, y, x) coordinate triples.
//!
//! Head channels are split into three equal axis groups; within a group the
//! two halves form rotation pairs driven by the standard inverse-power
//! frequency ladder of that axis. Attention scores then depend only on
//! relative positions, which the tests check numerically.

use crate::error::{Error, Result};
use crate::tensor::{concat, Real, Tensor};

/// Per-token cos/sin tables laid out to match the half-split pair convention:
/// channel `i` and channel `i + d_axis/2` of each axis group rotate together
/// by `pos_axis * base^(-2i/d_axis)`.
pub struct RopeTables {
    /// [N, head_dim / 2] per-pair cosines, axis groups concatenated.
    cos: Tensor,
    /// [N, head_dim / 2] per-pair sines.
    sin: Tensor,
    head_dim: usize,
}

impl RopeTables {
    pub fn new(positions: &[[i64; 3]], head_dim: usize, base: Real) -> Result<RopeTables> {
        if head_dim % 6 != 0 {
            return Err(Error::Config(format!(
                "rope head dim must be divisible by 6 (three axes x rotation pairs), got {head_dim}"
            )));
        }
        if base <= 1.0 {
            return Err(Error::Config(format!("rope frequency base must be > 1, got {base}")));
        }
        let d_axis = head_dim / 3;
        let half = d_axis / 2;
        let n = positions.len();
        let mut cos = Vec::with_capacity(n * 3 * half);
        let mut sin = Vec::with_capacity(n * 3 * half);
        for p in positions {
            for axis in 0..3 {
                let coord = p[axis] as Real;
                for i in 0..half {
                    let theta = base.powf(-2.0 * i as Real / d_axis as Real);
                    let angle = coord * theta;
                    cos.push(angle.cos());
                    sin.push(angle.sin());
                }
            }
        }
        Ok(RopeTables {
            cos: Tensor::from_vec(&[n, 3 * half], cos)?,
            sin: Tensor::from_vec(&[n, 3 * half], sin)?,
            head_dim,
        })
    }

    /// Rotate `x` of shape [.., N, head_dim]. Leading axes broadcast (heads).
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let rank = x.rank();
        if rank < 2 || x.shape()[rank - 1] != self.head_dim {
            return Err(Error::shape(format!(
                "rope expects trailing dim {}, got shape {:?}",
                self.head_dim,
                x.shape()
            )));
        }
        let d_axis = self.head_dim / 3;
        let half = d_axis / 2;
        let last = rank - 1;
        let mut parts: Vec<Tensor> = Vec::with_capacity(6);
        for axis in 0..3 {
            let x1 = x.slice(last, axis * d_axis, half)?;
            let x2 = x.slice(last, axis * d_axis + half, half)?;
            let c = self.cos.slice(1, axis * half, half)?;
            let s = self.sin.slice(1, axis * half, half)?;
            let y1 = x1.mul(&c)?.sub(&x2.mul(&s)?)?;
            let y2 = x1.mul(&s)?.add(&x2.mul(&c)?)?;
            parts.push(y1);
            parts.push(y2);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        concat(last, &refs)
    }
}

/// Rotate a [N, head_dim] query or key block by its token positions.
pub fn rope3d_apply(
    x: &Tensor,
    positions: &[[i64; 3]],
    base: Real,
) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != positions.len() {
        return Err(Error::shape(format!(
            "rope3d_apply wants [N, head_dim] with N = {} positions, got {:?}",
            positions.len(),
            x.shape()
        )));
    }
    RopeTables::new(positions, x.shape()[1], base)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::Splitmix;

    fn dot(a: &[Real], b: &[Real]) -> Real {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_position_is_identity() {
        let mut rng = Splitmix::new(1);
        let x = Tensor::from_vec(&[1, 12], rng.fill_unit(12)).unwrap();
        let y = rope3d_apply(&x, &[[0, 0, 0]], 100.0).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_preserves_pair_norms() {
        let mut rng = Splitmix::new(2);
        let x = Tensor::from_vec(&[1, 12], rng.fill_unit(12)).unwrap();
        let y = rope3d_apply(&x, &[[3, -2, 7]], 100.0).unwrap();
        // Pair (i, i + half) within each axis group of d_axis = 4, half = 2.
        for axis in 0..3 {
            for i in 0..2 {
                let a = axis * 4 + i;
                let b = axis * 4 + 2 + i;
                let n_in = x.data()[a].hypot(x.data()[b]);
                let n_out = y.data()[a].hypot(y.data()[b]);
                assert!((n_in - n_out).abs() < 1e-12, "axis {axis} pair {i}");
            }
        }
    }

    #[test]
    fn scores_depend_only_on_relative_position() {
        let mut rng = Splitmix::new(3);
        let q = Tensor::from_vec(&[1, 18], rng.fill_unit(18)).unwrap();
        let k = Tensor::from_vec(&[1, 18], rng.fill_unit(18)).unwrap();
        let p1 = [2i64, -1, 5];
        let p2 = [-3i64, 4, 1];
        let reference = dot(
            rope3d_apply(&q, &[p1], 100.0).unwrap().data(),
            rope3d_apply(&k, &[p2], 100.0).unwrap().data(),
        );
        for delta in [[1i64, 0, 0], [0, 7, 0], [0, 0, -4], [5, -3, 11]] {
            let p1s = [p1[0] + delta[0], p1[1] + delta[1], p1[2] + delta[2]];
            let p2s = [p2[0] + delta[0], p2[1] + delta[1], p2[2] + delta[2]];
            let shifted = dot(
                rope3d_apply(&q, &[p1s], 100.0).unwrap().data(),
                rope3d_apply(&k, &[p2s], 100.0).unwrap().data(),
            );
            assert!(
                (reference - shifted).abs() < 1e-10,
                "shift {delta:?}: {reference} vs {shifted}"
            );
        }
    }

    #[test]
    fn per_axis_relative_property() {
        // Shifting along one axis only must also leave scores unchanged,
        // independently for each of t, y, x.
        let mut rng = Splitmix::new(4);
        let q = Tensor::from_vec(&[1, 12], rng.fill_unit(12)).unwrap();
        let k = Tensor::from_vec(&[1, 12], rng.fill_unit(12)).unwrap();
        for axis in 0..3 {
            let mut p1 = [1i64, 2, 3];
            let mut p2 = [4i64, -2, 0];
            let reference = dot(
                rope3d_apply(&q, &[p1], 100.0).unwrap().data(),
                rope3d_apply(&k, &[p2], 100.0).unwrap().data(),
            );
            p1[axis] += 13;
            p2[axis] += 13;
            let shifted = dot(
                rope3d_apply(&q, &[p1], 100.0).unwrap().data(),
                rope3d_apply(&k, &[p2], 100.0).unwrap().data(),
            );
            assert!((reference - shifted).abs() < 1e-10, "axis {axis}");
        }
    }

    #[test]
    fn rejects_bad_head_dim() {
        let x = Tensor::zeros(&[1, 16]);
        assert!(rope3d_apply(&x, &[[0, 0, 0]], 100.0).is_err());
    }
}

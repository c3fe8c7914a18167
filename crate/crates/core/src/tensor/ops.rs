//! Contractions, reductions, and shape-moving primitives.

use std::rc::Rc;

use super::{numel_of, strides_of, BackFn, Gradients, Real, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Matmul kernels. Loop orders keep the innermost access contiguous; the
// summation order over k is ascending in all three, which the correlation
// oracle tests rely on for bit-exact agreement.
// ---------------------------------------------------------------------------

/// c[m,n] += a[m,k] · b[k,n]
fn mm_nn(a: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[m,k] += g[m,n] · b[k,n]ᵀ
fn mm_nt(g: &[Real], b: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += grow[j] * brow[j];
            }
            crow[p] += s;
        }
    }
}

/// c[k,n] += a[m,k]ᵀ · g[m,n]
fn mm_tn(a: &[Real], g: &[Real], c: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
}

impl Tensor {
    /// Matrix product. Both operands rank 2, or equal rank > 2 with identical
    /// leading (batch) extents.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let ra = self.rank();
        let rb = other.rank();
        if ra < 2 || rb < 2 || ra != rb {
            return Err(Error::shape(format!(
                "matmul wants equal ranks >= 2, got {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (la, lb) = (&self.shape()[..ra - 2], &other.shape()[..rb - 2]);
        if la != lb {
            return Err(Error::shape(format!(
                "matmul batch extents differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let m = self.shape()[ra - 2];
        let k = self.shape()[ra - 1];
        let k2 = other.shape()[rb - 2];
        let n = other.shape()[rb - 1];
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let batch: usize = la.iter().product();
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            mm_nn(
                &self.data[b * m * k..(b + 1) * m * k],
                &other.data[b * k * n..(b + 1) * k * n],
                &mut out[b * m * n..(b + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut oshape = la.to_vec();
        oshape.push(m);
        oshape.push(n);

        let tape = Tensor::joint_tape(&[self, other])?;
        let result = Tensor::from_vec(&oshape, out)?;
        let Some(tape) = tape else { return Ok(result) };

        let a_node = self.node_id();
        let b_node = other.node_id();
        let a_data = self.data.clone();
        let b_data = other.data.clone();
        let back: BackFn = Box::new(move |g, sink| {
            if let Some(id) = a_node {
                let dst = sink.buf_mut(id, a_data.len());
                for b in 0..batch {
                    mm_nt(
                        &g[b * m * n..(b + 1) * m * n],
                        &b_data[b * k * n..(b + 1) * k * n],
                        &mut dst[b * m * k..(b + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(id) = b_node {
                let dst = sink.buf_mut(id, b_data.len());
                for b in 0..batch {
                    mm_tn(
                        &a_data[b * m * k..(b + 1) * m * k],
                        &g[b * m * n..(b + 1) * m * n],
                        &mut dst[b * k * n..(b + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        });
        Ok(result.with_node(Some(tape), Some(back)))
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, lanes, inner) = self.lane_split(axis)?;
        let mut out = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lanes * inner + i;
                let mut mx = Real::NEG_INFINITY;
                for l in 0..lanes {
                    mx = mx.max(self.data[base + l * inner]);
                }
                let mut sum = 0.0;
                for l in 0..lanes {
                    let e = (self.data[base + l * inner] - mx).exp();
                    out[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..lanes {
                    out[base + l * inner] /= sum;
                }
            }
        }
        let result = Tensor::from_vec(self.shape(), out)?;
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let y = result.data.clone();
        let n = self.numel();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * lanes * inner + i;
                    let mut dot = 0.0;
                    for l in 0..lanes {
                        let idx = base + l * inner;
                        dot += g[idx] * y[idx];
                    }
                    for l in 0..lanes {
                        let idx = base + l * inner;
                        dst[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
        Ok(Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back)))
    }

    /// (outer, axis extent, inner) factorization for lane-wise ops.
    fn lane_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::arg(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let lanes = self.shape()[axis];
        let inner: usize = self.shape()[axis + 1..].iter().product();
        Ok((outer, lanes, inner))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: Real = self.data.iter().sum();
        let result = Tensor::scalar(s);
        let Some(node) = &self.node else { return result };
        let pid = node.id;
        let n = self.numel();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            for d in dst.iter_mut() {
                *d += g[0];
            }
        });
        Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back))
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as Real)
    }

    /// Sum along `axis`, optionally keeping it as extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let (outer, lanes, inner) = self.lane_split(axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..lanes {
                for i in 0..inner {
                    out[o * inner + i] += self.data[(o * lanes + l) * inner + i];
                }
            }
        }
        let mut oshape = self.shape().to_vec();
        if keepdim {
            oshape[axis] = 1;
        } else {
            oshape.remove(axis);
            if oshape.is_empty() {
                oshape.push(1);
            }
        }
        let result = Tensor::from_vec(&oshape, out)?;
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let n = self.numel();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            for o in 0..outer {
                for l in 0..lanes {
                    for i in 0..inner {
                        dst[(o * lanes + l) * inner + i] += g[o * inner + i];
                    }
                }
            }
        });
        Ok(Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back)))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let lanes = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::arg(format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / lanes as Real))
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let result = Tensor {
            data: self.data.clone(),
            shape: Rc::new(shape.to_vec()),
            node: None,
        };
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let n = self.numel();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            for (d, v) in dst.iter_mut().zip(g) {
                *d += v;
            }
        });
        Ok(result.with_node(Some(node.tape.clone()), Some(back)))
    }

    /// Axis permutation, materialized into a fresh buffer.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::arg(format!(
                "invalid permutation {axes:?} for rank {rank}"
            )));
        }
        let oshape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let out = permute_copy(&self.data, self.shape(), axes);
        let result = Tensor::from_vec(&oshape, out)?;
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let n = self.numel();
        // Backward permutes the gradient by the inverse axis map.
        let mut inverse = vec![0usize; rank];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let back: BackFn = Box::new(move |g, sink| {
            let gperm = permute_copy(g, &oshape, &inverse);
            let dst = sink.buf_mut(pid, n);
            for (d, v) in dst.iter_mut().zip(&gperm) {
                *d += v;
            }
        });
        Ok(Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back)))
    }

    /// Contiguous sub-range along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, lanes, inner) = self.lane_split(axis)?;
        if start + len > lanes || len == 0 {
            return Err(Error::arg(format!(
                "slice [{start}..{}] out of range on axis {axis} (extent {lanes})",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * lanes + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut oshape = self.shape().to_vec();
        oshape[axis] = len;
        let result = Tensor::from_vec(&oshape, out)?;
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let n = self.numel();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            for o in 0..outer {
                let src = o * len * inner;
                let base = (o * lanes + start) * inner;
                for i in 0..len * inner {
                    dst[base + i] += g[src + i];
                }
            }
        });
        Ok(Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back)))
    }

    /// Edge-replicating pad of the trailing axes up to `targets`. `targets`
    /// aligns with the last `targets.len()` axes; extents may only grow.
    pub fn pad_edge(&self, targets: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if targets.len() > rank {
            return Err(Error::arg("pad_edge targets exceed tensor rank".to_string()));
        }
        let mut oshape = self.shape().to_vec();
        let off = rank - targets.len();
        for (i, &t) in targets.iter().enumerate() {
            if t < oshape[off + i] {
                return Err(Error::arg(format!(
                    "pad_edge cannot shrink axis {} from {} to {}",
                    off + i,
                    oshape[off + i],
                    t
                )));
            }
            oshape[off + i] = t;
        }
        if oshape == *self.shape() {
            return Ok(self.clone());
        }
        let in_shape = self.shape().to_vec();
        let out = pad_edge_copy(&self.data, &in_shape, &oshape);
        let result = Tensor::from_vec(&oshape, out)?;
        let Some(node) = &self.node else { return Ok(result) };
        let pid = node.id;
        let n = self.numel();
        let oshape_b = oshape.clone();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, n);
            let in_strides = strides_of(&in_shape);
            let mut idx = vec![0usize; oshape_b.len()];
            for &gv in g {
                let mut src = 0;
                for ax in 0..oshape_b.len() {
                    src += idx[ax].min(in_shape[ax] - 1) * in_strides[ax];
                }
                dst[src] += gv;
                for ax in (0..oshape_b.len()).rev() {
                    idx[ax] += 1;
                    if idx[ax] < oshape_b[ax] {
                        break;
                    }
                    idx[ax] = 0;
                }
            }
        });
        Ok(Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back)))
    }

    /// Average pooling over the last two axes. Input is edge-replicate padded
    /// to a multiple of `factor`; output extents are `ceil(dim / factor)`.
    pub fn pool2d(&self, factor: usize) -> Result<Tensor> {
        if factor < 1 {
            return Err(Error::arg("pool2d factor must be >= 1".to_string()));
        }
        if self.rank() < 2 {
            return Err(Error::shape("pool2d wants rank >= 2".to_string()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let rank = self.rank();
        let h = self.shape()[rank - 2];
        let w = self.shape()[rank - 1];
        let oh = h.div_ceil(factor);
        let ow = w.div_ceil(factor);
        let padded = self.pad_edge(&[oh * factor, ow * factor])?;
        // [lead.., oh, f, ow, f] -> [lead.., oh, ow, f, f] -> mean over the window
        let mut block = padded.shape()[..rank - 2].to_vec();
        block.extend_from_slice(&[oh, factor, ow, factor]);
        let v = padded.reshape(&block)?;
        let lead = rank - 2;
        let mut axes: Vec<usize> = (0..lead).collect();
        axes.extend_from_slice(&[lead, lead + 2, lead + 1, lead + 3]);
        let v = v.permute(&axes)?;
        let mut flat = v.shape()[..lead + 2].to_vec();
        flat.push(factor * factor);
        let v = v.reshape(&flat)?;
        v.mean_axis(lead + 2, false)
    }
}

fn permute_copy(data: &[Real], shape: &[usize], axes: &[usize]) -> Vec<Real> {
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides_of(shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; oshape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for ax in (0..oshape.len()).rev() {
            idx[ax] += 1;
            off += perm_strides[ax];
            if idx[ax] < oshape[ax] {
                break;
            }
            off -= perm_strides[ax] * oshape[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn pad_edge_copy(data: &[Real], in_shape: &[usize], out_shape: &[usize]) -> Vec<Real> {
    let in_strides = strides_of(in_shape);
    let n: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let mut src = 0;
        for ax in 0..out_shape.len() {
            src += idx[ax].min(in_shape[ax] - 1) * in_strides[ax];
        }
        out.push(data[src]);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

/// Concatenate along `axis`. All other extents must agree.
pub fn concat(axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::arg("concat of zero tensors".to_string()));
    }
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let rank = parts[0].rank();
    if axis >= rank {
        return Err(Error::arg(format!("concat axis {axis} out of range")));
    }
    let mut total = 0usize;
    for p in parts {
        if p.rank() != rank {
            return Err(Error::shape("concat rank mismatch".to_string()));
        }
        for ax in 0..rank {
            if ax != axis && p.shape()[ax] != parts[0].shape()[ax] {
                return Err(Error::shape(format!(
                    "concat extent mismatch on axis {ax}: {:?} vs {:?}",
                    p.shape(),
                    parts[0].shape()
                )));
            }
        }
        total += p.shape()[axis];
    }
    let mut oshape = parts[0].shape().to_vec();
    oshape[axis] = total;
    let outer: usize = oshape[..axis].iter().product();
    let inner: usize = oshape[axis + 1..].iter().product();

    let mut out = Vec::with_capacity(numel_of(&oshape));
    for o in 0..outer {
        for p in parts {
            let lanes = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * lanes * inner..(o + 1) * lanes * inner]);
        }
    }

    let tape = Tensor::joint_tape(parts)?;
    let result = Tensor::from_vec(&oshape, out)?;
    let Some(tape) = tape else { return Ok(result) };

    let metas: Vec<(Option<usize>, usize, usize)> = parts
        .iter()
        .map(|p| (p.node_id(), p.shape()[axis], p.numel()))
        .collect();
    let back: BackFn = Box::new(move |g: &[Real], sink: &mut Gradients| {
        let mut start = 0usize;
        for &(node, lanes, numel) in &metas {
            if let Some(id) = node {
                let dst = sink.buf_mut(id, numel);
                for o in 0..outer {
                    let gbase = (o * total + start) * inner;
                    let dbase = o * lanes * inner;
                    for i in 0..lanes * inner {
                        dst[dbase + i] += g[gbase + i];
                    }
                }
            }
            start += lanes;
        }
    });
    Ok(result.with_node(Some(tape), Some(back)))
}

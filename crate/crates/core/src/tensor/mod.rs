//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tensor::backward`]
//! replays the records in reverse, accumulating gradients into per-node buffers.
//! Tensors are immutable: every operation returns a fresh tensor, and a tensor
//! participates in differentiation iff it carries a node id on some tape.
//!
//! One tape and its tensors form a single-threaded unit of work. Independent
//! tapes never share state, so separate sequences can be processed on separate
//! threads with read-only parameter snapshots.

mod ops;

pub use ops::concat;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type for all numerical code. Tests and gradient checks require f64;
/// the `f32` feature trades precision for speed in training experiments.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub(crate) type BackFn = Box<dyn Fn(&[Real], &mut Gradients)>;

struct TapeNode {
    /// None for leaves; Some for recorded operations.
    back: Option<BackFn>,
    /// Leaves keep their gradient buffer after backward; interior buffers are
    /// dropped once consumed.
    leaf: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<TapeNode>,
}

/// Ordered record of primitive operations. Inputs are always recorded before
/// the operations that consume them, so reverse id order is a valid
/// backward schedule.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, back: Option<BackFn>, leaf: bool) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(TapeNode { back, leaf });
        inner.nodes.len() - 1
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Create a differentiable leaf holding `data`.
    pub fn leaf(&self, shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.watch(&t))
    }

    /// Return a copy of `t` registered as a differentiable leaf on this tape.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let id = self.push(None, true);
        Tensor {
            data: t.data.clone(),
            shape: t.shape.clone(),
            node: Some(NodeRef { tape: self.clone(), id }),
        }
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    tape: Tape,
    id: usize,
}

/// Gradient buffers produced by a backward sweep, indexed by tape node.
pub struct Gradients {
    bufs: Vec<Option<Vec<Real>>>,
}

impl Gradients {
    fn buf_mut(&mut self, id: usize, len: usize) -> &mut [Real] {
        self.bufs[id].get_or_insert_with(|| vec![0.0; len])
    }

    /// Gradient of the backward root with respect to `t`. Present for leaves
    /// that the root depends on; interior buffers are released during the sweep.
    pub fn wrt(&self, t: &Tensor) -> Option<&[Real]> {
        let node = t.node.as_ref()?;
        self.bufs.get(node.id)?.as_deref()
    }
}

/// Dense row-major tensor. Cloning is cheap (shared immutable storage).
#[derive(Clone)]
pub struct Tensor {
    data: Rc<Vec<Real>>,
    shape: Rc<Vec<usize>>,
    node: Option<NodeRef>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} wants {} elements, data has {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            data: Rc::new(data),
            shape: Rc::new(shape.to_vec()),
            node: None,
        })
    }

    pub fn scalar(v: Real) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; numel_of(shape)]).unwrap()
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![1.0; numel_of(shape)]).unwrap()
    }

    pub fn full(shape: &[usize], v: Real) -> Tensor {
        Tensor::from_vec(shape, vec![v; numel_of(shape)]).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Real {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Copy of this tensor detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor { data: self.data.clone(), shape: self.shape.clone(), node: None }
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Tape shared by the given tensors, if any participates in recording.
    /// Errors when two tensors come from different tapes.
    fn joint_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
        let mut found: Option<&Tape> = None;
        for t in inputs {
            if let Some(tape) = t.tape() {
                match found {
                    None => found = Some(tape),
                    Some(prev) if prev.same_tape(tape) => {}
                    Some(_) => {
                        return Err(Error::arg(
                            "operands recorded on different gradient tapes",
                        ))
                    }
                }
            }
        }
        Ok(found.cloned())
    }

    fn with_node(mut self, tape: Option<Tape>, back: Option<BackFn>) -> Tensor {
        if let Some(tape) = tape {
            let id = tape.push(back, false);
            self.node = Some(NodeRef { tape, id });
        }
        self
    }

    /// Reverse sweep from a scalar root. Returns the gradient buffers; the
    /// tape itself stays intact and may be extended or replayed.
    pub fn backward(&self) -> Result<Gradients> {
        let node = self
            .node
            .as_ref()
            .ok_or_else(|| Error::arg("backward root is not on a tape"))?;
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape
            )));
        }
        let inner = node.tape.inner.borrow();
        let mut grads = Gradients { bufs: (0..inner.nodes.len()).map(|_| None).collect() };
        grads.buf_mut(node.id, 1)[0] = 1.0;
        for id in (0..=node.id).rev() {
            let rec = &inner.nodes[id];
            if rec.leaf {
                continue;
            }
            // Take ownership: interior gradients are not needed once propagated.
            let Some(g) = grads.bufs[id].take() else { continue };
            if let Some(back) = &rec.back {
                back(&g, &mut grads);
            }
        }
        Ok(grads)
    }
}

// ---------------------------------------------------------------------------
// Broadcasting machinery
// ---------------------------------------------------------------------------

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}")));
        };
    }
    Ok(out)
}

/// Row-major strides.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside broadcast shape `out` (0 on expanded axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let native = strides_of(shape);
    let pad = out.len() - shape.len();
    let mut s = vec![0usize; out.len()];
    for i in 0..shape.len() {
        s[pad + i] = if shape[i] == 1 && out[pad + i] != 1 { 0 } else { native[i] };
    }
    s
}

/// Odometer over `shape` yielding a flat offset per configured stride set.
/// Walks in row-major order, advancing both offsets in lockstep.
struct Odometer<'a> {
    shape: &'a [usize],
    idx: Vec<usize>,
    offs: [usize; 2],
    strides: [&'a [usize]; 2],
    done: bool,
}

impl<'a> Odometer<'a> {
    fn new(shape: &'a [usize], sa: &'a [usize], sb: &'a [usize]) -> Self {
        Odometer {
            shape,
            idx: vec![0; shape.len()],
            offs: [0, 0],
            strides: [sa, sb],
            done: shape.iter().any(|&d| d == 0),
        }
    }

    fn step(&mut self) {
        for ax in (0..self.shape.len()).rev() {
            self.idx[ax] += 1;
            self.offs[0] += self.strides[0][ax];
            self.offs[1] += self.strides[1][ax];
            if self.idx[ax] < self.shape[ax] {
                return;
            }
            self.offs[0] -= self.strides[0][ax] * self.shape[ax];
            self.offs[1] -= self.strides[1][ax] * self.shape[ax];
            self.idx[ax] = 0;
        }
        self.done = true;
    }
}

// ---------------------------------------------------------------------------
// Elementwise machinery
// ---------------------------------------------------------------------------

impl Tensor {
    /// Generic broadcasting binary elementwise op with analytic partials.
    /// `f(a,b)` is the value; `da`/`db` give ∂f/∂a and ∂f/∂b at `(a,b)`.
    fn binary(
        &self,
        other: &Tensor,
        f: impl Fn(Real, Real) -> Real,
        da: impl Fn(Real, Real) -> Real + 'static,
        db: impl Fn(Real, Real) -> Real + 'static,
    ) -> Result<Tensor> {
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let n = numel_of(&out_shape);
        let mut out = Vec::with_capacity(n);

        let same = *self.shape == *other.shape;
        if same {
            for i in 0..n {
                out.push(f(self.data[i], other.data[i]));
            }
        } else {
            let sa = broadcast_strides(&self.shape, &out_shape);
            let sb = broadcast_strides(&other.shape, &out_shape);
            let mut odo = Odometer::new(&out_shape, &sa, &sb);
            while !odo.done {
                out.push(f(self.data[odo.offs[0]], other.data[odo.offs[1]]));
                odo.step();
            }
        }

        let tape = Tensor::joint_tape(&[self, other])?;
        let result = Tensor::from_vec(&out_shape, out)?;
        let Some(tape) = tape else { return Ok(result) };

        let a_node = self.node_id();
        let b_node = other.node_id();
        let a_data = self.data.clone();
        let b_data = other.data.clone();
        let a_shape = self.shape.clone();
        let b_shape = other.shape.clone();
        let oshape = out_shape.clone();
        let back: BackFn = Box::new(move |g, sink| {
            let sa = broadcast_strides(&a_shape, &oshape);
            let sb = broadcast_strides(&b_shape, &oshape);
            let mut odo = Odometer::new(&oshape, &sa, &sb);
            // Two passes would walk the odometer twice; accumulate both in one.
            let mut ga = a_node.map(|_| vec![0.0; a_data.len()]);
            let mut gb = b_node.map(|_| vec![0.0; b_data.len()]);
            let mut i = 0usize;
            while !odo.done {
                let av = a_data[odo.offs[0]];
                let bv = b_data[odo.offs[1]];
                if let Some(ga) = ga.as_mut() {
                    ga[odo.offs[0]] += g[i] * da(av, bv);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[odo.offs[1]] += g[i] * db(av, bv);
                }
                odo.step();
                i += 1;
            }
            if let (Some(id), Some(ga)) = (a_node, ga) {
                let dst = sink.buf_mut(id, ga.len());
                for (d, v) in dst.iter_mut().zip(&ga) {
                    *d += v;
                }
            }
            if let (Some(id), Some(gb)) = (b_node, gb) {
                let dst = sink.buf_mut(id, gb.len());
                for (d, v) in dst.iter_mut().zip(&gb) {
                    *d += v;
                }
            }
        });
        Ok(result.with_node(Some(tape), Some(back)))
    }

    /// Generic unary elementwise op. `df(x, y)` is dy/dx given input and output.
    fn unary(
        &self,
        f: impl Fn(Real) -> Real,
        df: impl Fn(Real, Real) -> Real + 'static,
    ) -> Tensor {
        let out: Vec<Real> = self.data.iter().map(|&v| f(v)).collect();
        let result = Tensor::from_vec(&self.shape, out).unwrap();
        let Some(node) = &self.node else { return result };
        let pid = node.id;
        let x = self.data.clone();
        let y = result.data.clone();
        let back: BackFn = Box::new(move |g, sink| {
            let dst = sink.buf_mut(pid, x.len());
            for i in 0..g.len() {
                dst[i] += g[i] * df(x[i], y[i]);
            }
        });
        Tensor { node: None, ..result }.with_node(Some(node.tape.clone()), Some(back))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn scale(&self, s: Real) -> Tensor {
        self.unary(|v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: Real) -> Tensor {
        self.unary(|v| v + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Real::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary(Real::ln, |x, _| 1.0 / x)
    }

    /// Square root with a guarded derivative: d√x/dx is taken as 0 at x = 0 so
    /// exact-zero residual norms stay finite.
    pub fn sqrt(&self) -> Tensor {
        self.unary(Real::sqrt, |_, y| if y > 1e-150 { 0.5 / y } else { 0.0 })
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Real::tanh, |_, y| 1.0 - y * y)
    }

    /// Clamp with pass-through gradient inside the interval.
    pub fn clamp(&self, lo: Real, hi: Real) -> Tensor {
        self.unary(
            move |v| v.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Gaussian error linear unit (tanh approximation), built from primitives
    /// so its gradient follows from the tape.
    pub fn gelu(&self) -> Tensor {
        const SQRT_2_OVER_PI: Real = 0.797_884_560_802_865_4;
        let x3 = self.mul(self).unwrap().mul(self).unwrap();
        let inner = self.add(&x3.scale(0.044715)).unwrap().scale(SQRT_2_OVER_PI);
        let gate = inner.tanh().add_scalar(1.0).scale(0.5);
        self.mul(&gate).unwrap()
    }
}

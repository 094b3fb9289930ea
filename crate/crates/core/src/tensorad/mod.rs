//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Define-by-run: every op records its inputs and a backward closure on the
//! output node. `backward()` walks the graph in reverse topological order and
//! accumulates gradients into every reachable tensor with `requires_grad`.
//! Gradients keep accumulating across calls until `zero_grad()`.
//!
//! The engine is deliberately single-threaded per graph (one logical worker
//! owns a graph); independent graphs may live on independent threads. All
//! reductions run in a fixed order so repeated runs are bit-identical.

mod conv;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod optim;

pub use conv::{col2im_acc, im2col};

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// Run `f` without recording backward closures; forward values only.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let out = f();
    NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

pub(crate) type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to a tensor node. Cloning is cheap (reference count).
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(
            numel_of(shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; numel_of(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(shape, vec![value; numel_of(shape)])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![value])
    }

    /// Mark as a trainable leaf. Only meaningful on leaves.
    pub fn requires_grad(self) -> Tensor {
        assert!(
            self.0.backward.is_none(),
            "requires_grad must be set on leaf tensors"
        );
        Tensor(Rc::new(Inner {
            id: self.0.id,
            shape: self.0.shape.clone(),
            data: RefCell::new(self.0.data.borrow().clone()),
            grad: RefCell::new(None),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Build a custom op node (crate-internal escape hatch for layers that
    /// fuse their forward math).
    pub(crate) fn result_pub(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        bw: BackwardFn,
    ) -> Tensor {
        Tensor::result(shape, data, parents, bw)
    }

    fn result(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, bw: BackwardFn) -> Tensor {
        let tracked = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: tracked,
            parents: if tracked { parents } else { Vec::new() },
            backward: if tracked { Some(bw) } else { None },
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    /// Copy of the forward values.
    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() needs a scalar, got {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn value_at(&self, idx: usize) -> f64 {
        self.0.data.borrow()[idx]
    }

    /// Overwrite forward values in place (leaves only; optimizer use).
    pub fn set_data(&self, new: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.0.data.borrow())
    }

    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.0.data.borrow_mut())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// New leaf with the same values and no history.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(&self.0.shape, self.to_vec())
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable `requires_grad` tensor.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() needs a scalar loss, got shape {:?}",
            self.shape()
        );
        // Iterative post-order DFS: parents before children in `order`.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, pi)) = stack.pop() {
            if pi < node.0.parents.len() {
                let parent = node.0.parents[pi].clone();
                stack.push((node, pi + 1));
                if parent.0.requires_grad && visited.insert(parent.0.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        // Seed and sweep in reverse topological order.
        let mut seeds: std::collections::HashMap<u64, Vec<f64>> = std::collections::HashMap::new();
        seeds.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let upstream = match seeds.remove(&node.0.id) {
                Some(g) => g,
                None => continue,
            };
            node.accumulate_grad(&upstream);
            if let Some(bw) = &node.0.backward {
                // The closure accumulates directly into parent seed buffers.
                CURRENT_SEEDS.with(|s| {
                    *s.borrow_mut() = Some(std::mem::take(&mut seeds));
                });
                bw(&upstream);
                CURRENT_SEEDS.with(|s| {
                    seeds = s.borrow_mut().take().unwrap();
                });
            }
        }
    }
}

thread_local! {
    static CURRENT_SEEDS: RefCell<Option<std::collections::HashMap<u64, Vec<f64>>>> =
        const { RefCell::new(None) };
}

/// Accumulate `g` into the backward seed buffer of `t` (used inside
/// backward closures).
pub(crate) fn seed_acc(t: &Tensor, g: &[f64]) {
    if !t.0.requires_grad {
        return;
    }
    CURRENT_SEEDS.with(|s| {
        let mut map = s.borrow_mut();
        let map = map.as_mut().expect("seed_acc outside backward sweep");
        match map.get_mut(&t.0.id) {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => {
                map.insert(t.0.id, g.to_vec());
            }
        }
    });
}

pub(crate) fn seed_acc_with(t: &Tensor, len: usize, f: impl FnOnce(&mut [f64])) {
    if !t.0.requires_grad {
        return;
    }
    CURRENT_SEEDS.with(|s| {
        let mut map = s.borrow_mut();
        let map = map.as_mut().expect("seed_acc outside backward sweep");
        let buf = map.entry(t.0.id).or_insert_with(|| vec![0.0; len]);
        f(buf);
    });
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "add");
        let data: Vec<f64> = self
            .0
            .data
            .borrow()
            .iter()
            .zip(other.0.data.borrow().iter())
            .map(|(a, b)| a + b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                seed_acc(&pa, g);
                seed_acc(&pb, g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "sub");
        let data: Vec<f64> = self
            .0
            .data
            .borrow()
            .iter()
            .zip(other.0.data.borrow().iter())
            .map(|(a, b)| a - b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                seed_acc(&pa, g);
                seed_acc_with(&pb, g.len(), |buf| {
                    for (b, v) in buf.iter_mut().zip(g) {
                        *b -= v;
                    }
                });
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "mul");
        let data: Vec<f64> = self
            .0
            .data
            .borrow()
            .iter()
            .zip(other.0.data.borrow().iter())
            .map(|(a, b)| a * b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, g.len(), |buf| {
                    let b = pb.0.data.borrow();
                    for i in 0..g.len() {
                        buf[i] += g[i] * b[i];
                    }
                });
                seed_acc_with(&pb, g.len(), |buf| {
                    let a = pa.0.data.borrow();
                    for i in 0..g.len() {
                        buf[i] += g[i] * a[i];
                    }
                });
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|a| a * c).collect();
        let pa = self.clone();
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, g.len(), |buf| {
                    for (b, v) in buf.iter_mut().zip(g) {
                        *b += c * v;
                    }
                });
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.0.data.borrow().iter().map(|a| a + c).collect();
        let pa = self.clone();
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g| seed_acc(&pa, g)),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x = self.to_vec();
        let data: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y = data.clone();
        let pa = self.clone();
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, g.len(), |buf| {
                    let x = pa.0.data.borrow();
                    for i in 0..g.len() {
                        buf[i] += g[i] * dfdx(x[i], y[i]);
                    }
                });
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        // Subgradient 0 at exactly 0.
        self.unary(|v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(|v| v.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(|v| v.exp(), |_, y| y)
    }

    /// Natural log; inputs are clamped to 1e-300 to keep saturated
    /// probabilities finite.
    pub fn ln(&self) -> Tensor {
        self.unary(|v| v.max(1e-300).ln(), |x, _| 1.0 / x.max(1e-300))
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(|v| v.sqrt(), |_, y| 0.5 / y.max(1e-12))
    }

    pub fn powf(&self, p: f64) -> Tensor {
        self.unary(
            move |v| v.powf(p),
            move |x, _| {
                if x == 0.0 && p < 1.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            },
        )
    }

    pub fn abs(&self) -> Tensor {
        self.unary(|v| v.abs(), |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Smooth-L1 with the given transition: 0.5x²/β inside, |x| − β/2 outside.
    pub fn huber(&self, beta: f64) -> Tensor {
        assert!(beta > 0.0);
        self.unary(
            move |v| {
                if v.abs() < beta {
                    0.5 * v * v / beta
                } else {
                    v.abs() - 0.5 * beta
                }
            },
            move |x, _| {
                if x.abs() < beta {
                    x / beta
                } else {
                    x.signum()
                }
            },
        )
    }

    /// Elementwise max of two tensors; ties route the gradient to `self`.
    pub fn max2(&self, other: &Tensor) -> Tensor {
        same_shape(self, other, "max2");
        let a = self.to_vec();
        let b = other.to_vec();
        let data: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| x.max(y)).collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::result(
            self.0.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let a = pa.0.data.borrow().clone();
                let b = pb.0.data.borrow().clone();
                seed_acc_with(&pa, g.len(), |buf| {
                    for i in 0..g.len() {
                        if a[i] >= b[i] {
                            buf[i] += g[i];
                        }
                    }
                });
                seed_acc_with(&pb, g.len(), |buf| {
                    for i in 0..g.len() {
                        if b[i] > a[i] {
                            buf[i] += g[i];
                        }
                    }
                });
            }),
        )
    }

    pub fn min2(&self, other: &Tensor) -> Tensor {
        self.neg().max2(&other.neg()).neg()
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.0.data.borrow().iter().sum();
        let pa = self.clone();
        let n = self.numel();
        Tensor::result(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, n, |buf| {
                    for b in buf.iter_mut() {
                        *b += g[0];
                    }
                });
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Softmax over the given axis.
    pub fn softmax(&self, axis: usize) -> Tensor {
        let shape = self.0.shape.clone();
        assert!(axis < shape.len(), "softmax axis {axis} out of range {shape:?}");
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.to_vec();
        let mut data = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    mx = mx.max(x[base + a * inner]);
                }
                let mut z = 0.0;
                for a in 0..axis_len {
                    let e = (x[base + a * inner] - mx).exp();
                    data[base + a * inner] = e;
                    z += e;
                }
                for a in 0..axis_len {
                    data[base + a * inner] /= z;
                }
            }
        }
        let y = data.clone();
        let pa = self.clone();
        Tensor::result(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, g.len(), |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * axis_len * inner + i;
                            let mut dot = 0.0;
                            for a in 0..axis_len {
                                let k = base + a * inner;
                                dot += g[k] * y[k];
                            }
                            for a in 0..axis_len {
                                let k = base + a * inner;
                                buf[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Elementwise maximum over a non-empty set of same-shape tensors.
    /// Ties route the subgradient to the first attaining tensor.
    pub fn max_over_set(set: &[Tensor]) -> Tensor {
        assert!(!set.is_empty(), "max_over_set needs at least one tensor");
        let shape = set[0].shape().to_vec();
        for t in set {
            assert_eq!(t.shape(), &shape[..], "max_over_set: mismatched shapes");
        }
        let n = numel_of(&shape);
        let mut data = set[0].to_vec();
        let mut argmax = vec![0u32; n];
        for (si, t) in set.iter().enumerate().skip(1) {
            let d = t.0.data.borrow();
            for i in 0..n {
                if d[i] > data[i] {
                    data[i] = d[i];
                    argmax[i] = si as u32;
                }
            }
        }
        let parents: Vec<Tensor> = set.to_vec();
        let closure_parents = parents.clone();
        Tensor::result(
            shape,
            data,
            parents,
            Box::new(move |g| {
                for (si, t) in closure_parents.iter().enumerate() {
                    seed_acc_with(t, g.len(), |buf| {
                        for i in 0..g.len() {
                            if argmax[i] == si as u32 {
                                buf[i] += g[i];
                            }
                        }
                    });
                }
            }),
        )
    }

    /// Concatenate 1-D tensors.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            assert_eq!(p.shape().len(), 1, "concat expects 1-D tensors");
            spans.push((data.len(), p.numel()));
            data.extend_from_slice(&p.0.data.borrow());
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let cp = parents.clone();
        Tensor::result(
            vec![data.len()],
            data,
            parents,
            Box::new(move |g| {
                for (t, &(off, len)) in cp.iter().zip(&spans) {
                    seed_acc(t, &g[off..off + len]);
                }
            }),
        )
    }

    /// Contiguous 1-D slice.
    pub fn slice(&self, start: usize, len: usize) -> Tensor {
        assert_eq!(self.shape().len(), 1, "slice expects a 1-D tensor");
        assert!(start + len <= self.numel(), "slice out of range");
        let data = self.0.data.borrow()[start..start + len].to_vec();
        let pa = self.clone();
        let n = self.numel();
        Tensor::result(
            vec![len],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, n, |buf| {
                    for (i, v) in g.iter().enumerate() {
                        buf[start + i] += v;
                    }
                });
            }),
        )
    }

    /// Gather flat indices into a 1-D tensor; backward scatter-adds.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let d = self.0.data.borrow();
        let data: Vec<f64> = indices.iter().map(|&i| d[i]).collect();
        drop(d);
        let idx = indices.to_vec();
        let pa = self.clone();
        let n = self.numel();
        Tensor::result(
            vec![indices.len()],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                seed_acc_with(&pa, n, |buf| {
                    for (k, &i) in idx.iter().enumerate() {
                        buf[i] += g[k];
                    }
                });
            }),
        )
    }

    /// Same data, new shape (copies; backward reshapes back).
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        let data = self.to_vec();
        let pa = self.clone();
        Tensor::result(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| seed_acc(&pa, g)),
        )
    }

    /// Per-channel affine on a [C,H,W] tensor: `y[c,·] = x[c,·]·a[c] + b[c]`.
    pub fn channel_affine(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 3, "channel_affine expects [C,H,W]");
        let c = shape[0];
        let hw = shape[1] * shape[2];
        assert_eq!(a.shape(), &[c], "channel_affine scale shape");
        assert_eq!(b.shape(), &[c], "channel_affine shift shape");
        let x = self.0.data.borrow();
        let av = a.0.data.borrow();
        let bv = b.0.data.borrow();
        let mut data = vec![0.0; x.len()];
        for ci in 0..c {
            let (s, t) = (av[ci], bv[ci]);
            for i in 0..hw {
                data[ci * hw + i] = x[ci * hw + i] * s + t;
            }
        }
        drop(x);
        drop(av);
        drop(bv);
        let (px, pa, pb) = (self.clone(), a.clone(), b.clone());
        Tensor::result(
            shape,
            data,
            vec![self.clone(), a.clone(), b.clone()],
            Box::new(move |g| {
                seed_acc_with(&px, c * hw, |buf| {
                    let av = pa.0.data.borrow();
                    for ci in 0..c {
                        let s = av[ci];
                        for i in 0..hw {
                            buf[ci * hw + i] += g[ci * hw + i] * s;
                        }
                    }
                });
                seed_acc_with(&pa, c, |buf| {
                    let xv = px.0.data.borrow();
                    for ci in 0..c {
                        let mut acc = 0.0;
                        for i in 0..hw {
                            acc += g[ci * hw + i] * xv[ci * hw + i];
                        }
                        buf[ci] += acc;
                    }
                });
                seed_acc_with(&pb, c, |buf| {
                    for ci in 0..c {
                        let mut acc = 0.0;
                        for i in 0..hw {
                            acc += g[ci * hw + i];
                        }
                        buf[ci] += acc;
                    }
                });
            }),
        )
    }
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

impl Tensor {
    /// `[m,k] × [k,n] -> [m,n]`, or `[m,k] × [k] -> [m]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = match self.shape() {
            [m, k] => (*m, *k),
            s => panic!("matmul lhs must be 2-D, got {s:?}"),
        };
        let (k2, n, vec_rhs) = match other.shape() {
            [k2, n] => (*k2, *n, false),
            [k2] => (*k2, 1, true),
            s => panic!("matmul rhs must be 1-D or 2-D, got {s:?}"),
        };
        assert_eq!(
            k, k2,
            "matmul inner dims differ: {:?} × {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = vec![0.0; m * n];
        conv::gemm_nn(
            m,
            k,
            n,
            &self.0.data.borrow(),
            &other.0.data.borrow(),
            &mut out,
        );
        let (pa, pb) = (self.clone(), other.clone());
        let out_shape = if vec_rhs { vec![m] } else { vec![m, n] };
        Tensor::result(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // ga += g · bᵀ
                seed_acc_with(&pa, m * k, |buf| {
                    conv::gemm_nt_acc(m, n, k, g, &pb.0.data.borrow(), buf);
                });
                // gb += aᵀ · g
                seed_acc_with(&pb, k * n, |buf| {
                    conv::gemm_tn_acc(k, m, n, &pa.0.data.borrow(), g, buf);
                });
            }),
        )
    }
}

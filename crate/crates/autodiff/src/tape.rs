use std::ops::Range;
use std::rc::Rc;

use crate::basis::{bspline_basis, bspline_basis_derivative, chebyshev_basis};
use crate::{AdError, Result, Shape};

/// Handle to a node on a [`Tape`]. Cheap to copy; only meaningful for the
/// tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value {
    id: usize,
    shape: Shape,
}

impl Value {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Reshape(usize),
    Softmax {
        input: usize,
        causal: bool,
    },
    BSpline {
        input: usize,
        knots: Rc<[f64]>,
        degree: usize,
    },
    Chebyshev {
        input: usize,
        degree: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient for `v`, or zeros when `v` does not influence the root or is
    /// a constant.
    pub fn get(&self, v: Value) -> Vec<f64> {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; v.shape.len()],
        }
    }

    pub fn get_ref(&self, v: Value) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn shape_of(&self, v: Value) -> Option<Shape> {
        self.shapes.get(v.id).copied()
    }
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AdError::NonFinite { op })
    }
}

#[inline]
fn bcast(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, op: &'static str, node_op: Op, shape: Shape, value: Vec<f64>, needs_grad: bool) -> Result<Value> {
        debug_assert_eq!(shape.len(), value.len());
        check_finite(op, &value)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: node_op,
            shape,
            value,
            needs_grad,
        });
        Ok(Value { id, shape })
    }

    fn node(&self, v: Value) -> &Node {
        &self.nodes[v.id]
    }

    pub fn value(&self, v: Value) -> &[f64] {
        &self.nodes[v.id].value
    }

    /// First element of `v`; intended for scalars.
    pub fn scalar_value(&self, v: Value) -> f64 {
        self.nodes[v.id].value[0]
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.id].needs_grad
    }

    // ---- leaves -------------------------------------------------------

    fn leaf(&mut self, shape: Shape, values: Vec<f64>, needs_grad: bool) -> Result<Value> {
        if values.len() != shape.len() {
            return Err(AdError::InvalidArgument {
                op: "leaf",
                detail: format!("{} values for shape {shape}", values.len()),
            });
        }
        self.push("leaf", Op::Leaf, shape, values, needs_grad)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, shape: Shape, values: Vec<f64>) -> Result<Value> {
        self.leaf(shape, values, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, shape: Shape, values: Vec<f64>) -> Result<Value> {
        self.leaf(shape, values, false)
    }

    pub fn param_scalar(&mut self, v: f64) -> Result<Value> {
        self.param(Shape::Scalar, vec![v])
    }

    pub fn scalar(&mut self, v: f64) -> Result<Value> {
        self.constant(Shape::Scalar, vec![v])
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Result<Value> {
        let n = values.len();
        self.constant(Shape::Vector(n), values)
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Value> {
        self.constant(Shape::Matrix(rows, cols), values)
    }

    // ---- elementwise binary ----------------------------------------------

    fn binary_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
        if a == b {
            Ok(a)
        } else if a == Shape::Scalar {
            Ok(b)
        } else if b == Shape::Scalar {
            Ok(a)
        } else {
            Err(AdError::ShapeMismatch { op, lhs: a, rhs: b })
        }
    }

    fn binary(&mut self, op: &'static str, a: Value, b: Value, f: impl Fn(f64, f64) -> f64, node_op: Op) -> Result<Value> {
        let shape = Self::binary_shape(op, a.shape, b.shape)?;
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let out = (0..shape.len()).map(|i| f(bcast(va, i), bcast(vb, i))).collect();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(op, node_op, shape, out, ng)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value> {
        if self.node(b).value.contains(&0.0) {
            return Err(AdError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a.id, b.id))
    }

    /// `a * c` for a constant `c`.
    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        let k = self.scalar(c)?;
        self.mul(a, k)
    }

    /// `a + c` for a constant `c`.
    pub fn add_const(&mut self, a: Value, c: f64) -> Result<Value> {
        let k = self.scalar(c)?;
        self.add(a, k)
    }

    pub fn neg(&mut self, a: Value) -> Result<Value> {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Value) -> Result<Value> {
        self.mul(a, a)
    }

    /// Matrix `(r, c)` plus a vector of length `c` added to every row.
    pub fn add_row(&mut self, m: Value, v: Value) -> Result<Value> {
        let (r, c) = match (m.shape, v.shape) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => (r, c),
            _ => {
                return Err(AdError::ShapeMismatch {
                    op: "add_row",
                    lhs: m.shape,
                    rhs: v.shape,
                })
            }
        };
        let (vm, vv) = (&self.node(m).value, &self.node(v).value);
        let mut out = vm.clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += vv[j];
            }
        }
        let ng = self.node(m).needs_grad || self.node(v).needs_grad;
        self.push("add_row", Op::AddRow(m.id, v.id), m.shape, out, ng)
    }

    // ---- linear algebra ---------------------------------------------------

    /// `(r,k) x (k,c) -> (r,c)` and `(r,k) x vector(k) -> vector(r)`.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let mismatch = AdError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape,
            rhs: b.shape,
        };
        let (r, k) = match a.shape {
            Shape::Matrix(r, k) => (r, k),
            _ => return Err(mismatch),
        };
        let (k2, c, out_shape) = match b.shape {
            Shape::Matrix(k2, c) => (k2, c, Shape::Matrix(r, c)),
            Shape::Vector(k2) => (k2, 1, Shape::Vector(r)),
            Shape::Scalar => return Err(mismatch),
        };
        if k != k2 {
            return Err(mismatch);
        }
        let out = matmul_raw(&self.node(a).value, &self.node(b).value, r, k, c);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push("matmul", Op::MatMul(a.id, b.id), out_shape, out, ng)
    }

    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        let (r, c) = match a.shape {
            Shape::Matrix(r, c) => (r, c),
            other => {
                return Err(AdError::InvalidArgument {
                    op: "transpose",
                    detail: format!("expected matrix, got {other}"),
                })
            }
        };
        let va = &self.node(a).value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va[i * c + j];
            }
        }
        let ng = self.node(a).needs_grad;
        self.push("transpose", Op::Transpose(a.id), Shape::Matrix(c, r), out, ng)
    }

    // ---- elementwise unary ------------------------------------------------

    fn unary(&mut self, op: &'static str, a: Value, f: impl Fn(f64) -> f64, node_op: Op) -> Result<Value> {
        let out = self.node(a).value.iter().map(|&x| f(x)).collect();
        let ng = self.node(a).needs_grad;
        self.push(op, node_op, a.shape, out, ng)
    }

    pub fn tanh(&mut self, a: Value) -> Result<Value> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a.id))
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a.id))
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Value) -> Result<Value> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a.id))
    }

    pub fn exp(&mut self, a: Value) -> Result<Value> {
        self.unary("exp", a, f64::exp, Op::Exp(a.id))
    }

    pub fn log(&mut self, a: Value) -> Result<Value> {
        if let Some(x) = self.node(a).value.iter().find(|&&x| x <= 0.0) {
            return Err(AdError::Domain {
                op: "log",
                detail: format!("non-positive argument {x}"),
            });
        }
        self.unary("log", a, f64::ln, Op::Log(a.id))
    }

    /// `a^p` for a constant exponent.
    pub fn pow(&mut self, a: Value, p: f64) -> Result<Value> {
        let integral = p.fract() == 0.0;
        for &x in &self.node(a).value {
            if x < 0.0 && !integral {
                return Err(AdError::Domain {
                    op: "pow",
                    detail: format!("negative base {x} with fractional exponent {p}"),
                });
            }
            if x == 0.0 && p < 1.0 && p != 0.0 {
                return Err(AdError::Domain {
                    op: "pow",
                    detail: format!("zero base with exponent {p}"),
                });
            }
        }
        self.unary("pow", a, |x| x.powf(p), Op::Pow(a.id, p))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Value) -> Result<Value> {
        let s = self.node(a).value.iter().sum();
        let ng = self.node(a).needs_grad;
        self.push("sum", Op::Sum(a.id), Shape::Scalar, vec![s], ng)
    }

    pub fn mean(&mut self, a: Value) -> Result<Value> {
        let n = a.shape.len();
        if n == 0 {
            return Err(AdError::InvalidArgument {
                op: "mean",
                detail: "empty input".into(),
            });
        }
        let s: f64 = self.node(a).value.iter().sum();
        let ng = self.node(a).needs_grad;
        self.push("mean", Op::Mean(a.id), Shape::Scalar, vec![s / n as f64], ng)
    }

    // ---- structural -------------------------------------------------------

    /// Scalars and vectors concatenate into a vector; matrices with equal
    /// row counts concatenate column-wise.
    pub fn concat(&mut self, parts: &[Value]) -> Result<Value> {
        let Some(first) = parts.first() else {
            return Err(AdError::InvalidArgument {
                op: "concat",
                detail: "no inputs".into(),
            });
        };
        let ng = parts.iter().any(|p| self.node(*p).needs_grad);
        let ids = parts.iter().map(|p| p.id).collect();
        match first.shape {
            Shape::Scalar | Shape::Vector(_) => {
                let mut out = Vec::new();
                for p in parts {
                    if let Shape::Matrix(..) = p.shape {
                        return Err(AdError::ShapeMismatch {
                            op: "concat",
                            lhs: first.shape,
                            rhs: p.shape,
                        });
                    }
                    out.extend_from_slice(&self.node(*p).value);
                }
                let n = out.len();
                self.push("concat", Op::Concat(ids), Shape::Vector(n), out, ng)
            }
            Shape::Matrix(r, _) => {
                let mut total = 0;
                for p in parts {
                    match p.shape {
                        Shape::Matrix(r2, c) if r2 == r => total += c,
                        _ => {
                            return Err(AdError::ShapeMismatch {
                                op: "concat",
                                lhs: first.shape,
                                rhs: p.shape,
                            })
                        }
                    }
                }
                let mut out = vec![0.0; r * total];
                let mut off = 0;
                for p in parts {
                    let (_, c) = p.shape.dims();
                    let v = &self.node(*p).value;
                    for i in 0..r {
                        out[i * total + off..i * total + off + c].copy_from_slice(&v[i * c..(i + 1) * c]);
                    }
                    off += c;
                }
                self.push("concat", Op::Concat(ids), Shape::Matrix(r, total), out, ng)
            }
        }
    }

    fn slice_impl(&mut self, a: Value, rows: Range<usize>, cols: Range<usize>, out_shape: Shape) -> Result<Value> {
        let (r, c) = a.shape.dims();
        if rows.end > r || cols.end > c || rows.start >= rows.end || cols.start >= cols.end {
            return Err(AdError::InvalidArgument {
                op: "slice",
                detail: format!("range rows {rows:?} cols {cols:?} out of bounds for {}", a.shape),
            });
        }
        let v = &self.node(a).value;
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            out.extend_from_slice(&v[i * c + cols.start..i * c + cols.end]);
        }
        let ng = self.node(a).needs_grad;
        self.push("slice", Op::Slice { input: a.id, rows, cols }, out_shape, out, ng)
    }

    /// Contiguous sub-range of a vector.
    pub fn slice(&mut self, a: Value, range: Range<usize>) -> Result<Value> {
        match a.shape {
            Shape::Vector(_) => {
                let n = range.len();
                self.slice_impl(a, range, 0..1, Shape::Vector(n))
            }
            other => Err(AdError::InvalidArgument {
                op: "slice",
                detail: format!("expected vector, got {other}"),
            }),
        }
    }

    pub fn slice_rows(&mut self, a: Value, rows: Range<usize>) -> Result<Value> {
        match a.shape {
            Shape::Matrix(_, c) => {
                let n = rows.len();
                self.slice_impl(a, rows, 0..c, Shape::Matrix(n, c))
            }
            other => Err(AdError::InvalidArgument {
                op: "slice_rows",
                detail: format!("expected matrix, got {other}"),
            }),
        }
    }

    pub fn slice_cols(&mut self, a: Value, cols: Range<usize>) -> Result<Value> {
        match a.shape {
            Shape::Matrix(r, _) => {
                let n = cols.len();
                self.slice_impl(a, 0..r, cols, Shape::Matrix(r, n))
            }
            other => Err(AdError::InvalidArgument {
                op: "slice_cols",
                detail: format!("expected matrix, got {other}"),
            }),
        }
    }

    pub fn reshape(&mut self, a: Value, shape: Shape) -> Result<Value> {
        if shape.len() != a.shape.len() {
            return Err(AdError::InvalidArgument {
                op: "reshape",
                detail: format!("{} -> {shape}", a.shape),
            });
        }
        let out = self.node(a).value.clone();
        let ng = self.node(a).needs_grad;
        self.push("reshape", Op::Reshape(a.id), shape, out, ng)
    }

    /// Softmax over a vector, or over each row of a matrix. With `causal`
    /// the matrix must be square and entries above the diagonal are masked
    /// to exactly zero.
    pub fn softmax(&mut self, a: Value, causal: bool) -> Result<Value> {
        let (r, c) = match a.shape {
            Shape::Vector(n) => (1, n),
            Shape::Matrix(r, c) => (r, c),
            Shape::Scalar => (1, 1),
        };
        if causal && (r != c || !matches!(a.shape, Shape::Matrix(..))) {
            return Err(AdError::InvalidArgument {
                op: "softmax",
                detail: format!("causal mask needs a square matrix, got {}", a.shape),
            });
        }
        let v = &self.node(a).value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let width = if causal { i + 1 } else { c };
            let row = &v[i * c..i * c + width];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                out[i * c + j] = e;
                z += e;
            }
            for o in &mut out[i * c..i * c + width] {
                *o /= z;
            }
        }
        let ng = self.node(a).needs_grad;
        self.push("softmax", Op::Softmax { input: a.id, causal }, a.shape, out, ng)
    }

    // ---- basis expansions -------------------------------------------------

    /// Expands each entry of a `(b, n)` matrix into the `k = knots.len() -
    /// degree - 1` B-spline basis values, giving `(b, n * k)` with input `i`
    /// occupying columns `i*k .. (i+1)*k`.
    pub fn bspline(&mut self, a: Value, knots: Rc<[f64]>, degree: usize) -> Result<Value> {
        let (b, n) = match a.shape {
            Shape::Matrix(b, n) => (b, n),
            other => {
                return Err(AdError::InvalidArgument {
                    op: "bspline",
                    detail: format!("expected matrix, got {other}"),
                })
            }
        };
        if knots.len() < degree + 2 || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(AdError::InvalidArgument {
                op: "bspline",
                detail: "knots must be nondecreasing with at least degree + 2 entries".into(),
            });
        }
        let k = knots.len() - degree - 1;
        let v = &self.node(a).value;
        let mut out = vec![0.0; b * n * k];
        for (idx, &x) in v.iter().enumerate() {
            bspline_basis(&knots, degree, x, &mut out[idx * k..(idx + 1) * k]);
        }
        let ng = self.node(a).needs_grad;
        self.push(
            "bspline",
            Op::BSpline {
                input: a.id,
                knots,
                degree,
            },
            Shape::Matrix(b, n * k),
            out,
            ng,
        )
    }

    /// Expands each entry of a `(b, n)` matrix into Chebyshev polynomials
    /// `T_0..=T_degree`, giving `(b, n * (degree + 1))`.
    pub fn chebyshev(&mut self, a: Value, degree: usize) -> Result<Value> {
        let (b, n) = match a.shape {
            Shape::Matrix(b, n) => (b, n),
            other => {
                return Err(AdError::InvalidArgument {
                    op: "chebyshev",
                    detail: format!("expected matrix, got {other}"),
                })
            }
        };
        let k = degree + 1;
        let v = &self.node(a).value;
        let mut out = vec![0.0; b * n * k];
        for (idx, &u) in v.iter().enumerate() {
            chebyshev_basis(u, degree, &mut out[idx * k..(idx + 1) * k], None);
        }
        let ng = self.node(a).needs_grad;
        self.push("chebyshev", Op::Chebyshev { input: a.id, degree }, Shape::Matrix(b, n * k), out, ng)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients accumulate additively
    /// across fan-out; only leaves keep their gradient in the result.
    pub fn backward(&self, root: Value) -> Result<Gradients> {
        if root.shape != Shape::Scalar {
            return Err(AdError::NonScalarRoot(root.shape));
        }
        let n = root.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let shapes = self.nodes[..n].iter().map(|nd| nd.shape).collect();
        if !self.nodes[root.id].needs_grad {
            return Ok(Gradients { grads, shapes });
        }
        grads[root.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { grads, shapes })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[id];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.acc_broadcast(grads, a, g, |_, gi| gi);
                self.acc_broadcast(grads, b, g, |_, gi| gi);
            }
            &Op::Sub(a, b) => {
                self.acc_broadcast(grads, a, g, |_, gi| gi);
                self.acc_broadcast(grads, b, g, |_, gi| -gi);
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                self.acc_broadcast(grads, a, g, |i, gi| gi * bcast(vb, i));
                self.acc_broadcast(grads, b, g, |i, gi| gi * bcast(va, i));
            }
            &Op::Div(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                self.acc_broadcast(grads, a, g, |i, gi| gi / bcast(vb, i));
                self.acc_broadcast(grads, b, g, |i, gi| {
                    let d = bcast(vb, i);
                    -gi * bcast(va, i) / (d * d)
                });
            }
            &Op::AddRow(m, v) => {
                if let Some(gm) = self.acc(grads, m) {
                    gm.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gv) = self.acc(grads, v) {
                    let c = gv.len();
                    for (i, gi) in g.iter().enumerate() {
                        gv[i % c] += gi;
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (r, k) = self.nodes[a].shape.dims();
                let (_, c) = self.nodes[b].shape.dims();
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if let Some(ga) = self.acc(grads, a) {
                    // dA = G B^T
                    for i in 0..r {
                        for j in 0..c {
                            let gij = g[i * c + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for t in 0..k {
                                ga[i * k + t] += gij * vb[t * c + j];
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    // dB = A^T G
                    for i in 0..r {
                        for t in 0..k {
                            let a_it = va[i * k + t];
                            if a_it == 0.0 {
                                continue;
                            }
                            let row = &g[i * c..(i + 1) * c];
                            let dst = &mut gb[t * c..(t + 1) * c];
                            for (d, gij) in dst.iter_mut().zip(row) {
                                *d += a_it * gij;
                            }
                        }
                    }
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = self.nodes[a].shape.dims();
                if let Some(ga) = self.acc(grads, a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            &Op::Tanh(a) => self.acc_unary(grads, a, g, |i, _| 1.0 - out[i] * out[i]),
            &Op::Sigmoid(a) => self.acc_unary(grads, a, g, |i, _| out[i] * (1.0 - out[i])),
            &Op::Relu(a) => self.acc_unary(grads, a, g, |_, x| if x > 0.0 { 1.0 } else { 0.0 }),
            &Op::Exp(a) => self.acc_unary(grads, a, g, |i, _| out[i]),
            &Op::Log(a) => self.acc_unary(grads, a, g, |_, x| 1.0 / x),
            &Op::Pow(a, p) => self.acc_unary(grads, a, g, |_, x| if p == 0.0 { 0.0 } else { p * x.powf(p - 1.0) }),
            &Op::Sum(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::Mean(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Concat(ids) => {
                let (r, total) = node.shape.dims();
                let is_matrix = matches!(node.shape, Shape::Matrix(..));
                let mut off = 0;
                for &p in ids {
                    let shape = self.nodes[p].shape;
                    let len = shape.len();
                    if let Some(gp) = self.acc(grads, p) {
                        if is_matrix {
                            let (_, c) = shape.dims();
                            for i in 0..r {
                                for j in 0..c {
                                    gp[i * c + j] += g[i * total + off + j];
                                }
                            }
                        } else {
                            for j in 0..len {
                                gp[j] += g[off + j];
                            }
                        }
                    }
                    off += if is_matrix { shape.dims().1 } else { len };
                }
            }
            Op::Slice { input, rows, cols } => {
                let (_, c) = self.nodes[*input].shape.dims();
                let w = cols.len();
                if let Some(ga) = self.acc(grads, *input) {
                    for (ri, i) in rows.clone().enumerate() {
                        for j in 0..w {
                            ga[i * c + cols.start + j] += g[ri * w + j];
                        }
                    }
                }
            }
            &Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            &Op::Softmax { input, causal } => {
                let (r, c) = match node.shape {
                    Shape::Matrix(r, c) => (r, c),
                    s => (1, s.len()),
                };
                if let Some(ga) = self.acc(grads, input) {
                    for i in 0..r {
                        let width = if causal { i + 1 } else { c };
                        let y = &out[i * c..i * c + width];
                        let gy = &g[i * c..i * c + width];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..width {
                            ga[i * c + j] += y[j] * (gy[j] - dot);
                        }
                    }
                }
            }
            Op::BSpline { input, knots, degree } => {
                let k = knots.len() - degree - 1;
                let xs = &self.nodes[*input].value;
                if let Some(ga) = self.acc(grads, *input) {
                    let mut d = vec![0.0; k];
                    for (idx, &x) in xs.iter().enumerate() {
                        bspline_basis_derivative(knots, *degree, x, &mut d);
                        ga[idx] += d.iter().zip(&g[idx * k..(idx + 1) * k]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            &Op::Chebyshev { input, degree } => {
                let k = degree + 1;
                let xs = &self.nodes[input].value;
                if let Some(ga) = self.acc(grads, input) {
                    let mut t = vec![0.0; k];
                    let mut d = vec![0.0; k];
                    for (idx, &u) in xs.iter().enumerate() {
                        chebyshev_basis(u, degree, &mut t, Some(&mut d));
                        ga[idx] += d.iter().zip(&g[idx * k..(idx + 1) * k]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<f64>>], target: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if let Some(gt) = self.acc(grads, target) {
            if gt.len() == 1 && g.len() != 1 {
                gt[0] += g.iter().enumerate().map(|(i, &gi)| f(i, gi)).sum::<f64>();
            } else {
                for (i, (d, &gi)) in gt.iter_mut().zip(g).enumerate() {
                    *d += f(i, gi);
                }
            }
        }
    }

    fn acc_unary(&self, grads: &mut [Option<Vec<f64>>], a: usize, g: &[f64], dfdx: impl Fn(usize, f64) -> f64) {
        let xs = &self.nodes[a].value;
        if let Some(ga) = self.acc(grads, a) {
            for (i, (d, &gi)) in ga.iter_mut().zip(g).enumerate() {
                *d += gi * dfdx(i, xs[i]);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for t in 0..k {
            let a_it = a[i * k + t];
            if a_it == 0.0 {
                continue;
            }
            let brow = &b[t * c..(t + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += a_it * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_and_its_gradient() {
        let mut t = Tape::new();
        let x = t.param_scalar(2.0).unwrap();
        let y = t.param_scalar(3.0).unwrap();
        let z = t.mul(x, y).unwrap();
        assert_eq!(t.scalar_value(z), 6.0);
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x), vec![3.0]);
        assert_eq!(g.get(y), vec![2.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.param_scalar(0.0).unwrap();
        let y = t.tanh(x).unwrap();
        assert_eq!(t.scalar_value(y), 0.0);
        assert_eq!(t.backward(y).unwrap().get(x), vec![1.0]);
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut t = Tape::new();
        let x = t.vector(vec![0.7, 0.7, 0.7]).unwrap();
        let s = t.softmax(x, false).unwrap();
        for v in t.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Shape::Vector(3), vec![-1.0, 0.0, 2.0]).unwrap();
        let y = t.relu(x).unwrap();
        let s = t.sum(y).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.param_scalar(1.5).unwrap();
        let a = t.mul(x, x).unwrap();
        let b = t.add(a, x).unwrap();
        let g = t.backward(b).unwrap();
        assert_eq!(g.get(x), vec![4.0]);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let v = t.vector(vec![1.0, 2.0]).unwrap();
        let w = t.vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(t.add(v, w), Err(AdError::ShapeMismatch { .. })));
        let z = t.vector(vec![1.0, 0.0]).unwrap();
        assert!(matches!(t.log(z), Err(AdError::Domain { op: "log", .. })));
        assert!(matches!(t.div(v, z), Err(AdError::Domain { op: "div", .. })));
        assert!(matches!(t.backward(v), Err(AdError::NonScalarRoot(_))));
        assert!(matches!(t.scalar(f64::NAN), Err(AdError::NonFinite { .. })));
        let big = t.scalar(1000.0).unwrap();
        assert!(matches!(t.exp(big), Err(AdError::NonFinite { op: "exp" })));
    }

    #[test]
    fn constants_get_zero_gradient() {
        let mut t = Tape::new();
        let c = t.vector(vec![1.0, 2.0]).unwrap();
        let p = t.param(Shape::Vector(2), vec![3.0, 4.0]).unwrap();
        let m = t.mul(c, p).unwrap();
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(c), vec![0.0, 0.0]);
        assert!(g.get_ref(c).is_none());
        assert_eq!(g.get(p), vec![1.0, 2.0]);
    }

    #[test]
    fn causal_softmax_masks_upper_triangle() {
        let mut t = Tape::new();
        let m = t.matrix(2, 2, vec![1.0, 5.0, 2.0, 2.0]).unwrap();
        let s = t.softmax(m, true).unwrap();
        assert_eq!(t.value(s), &[1.0, 0.0, 0.5, 0.5]);
    }
}

//! Reverse-mode autodiff on a flat operation tape. Ops execute eagerly and
//! record just enough to replay adjoints in reverse. Every value is produced
//! by exactly one op, and inputs always precede outputs, so one reverse sweep
//! over op indices is a topological traversal.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

/// Rows whose norm falls at or below this are treated as flat (zero gradient)
/// by the normalization head instead of erroring; raw l2norm keeps the strict
/// degenerate-gradient contract.
const NORM_EPS: f64 = 1e-12;

/// Slack on the unit-direction check of the rotation op. Loose enough that
/// central differences (h = 1e-5) can probe the direction input, tight enough
/// to catch an unnormalized head.
const UNIT_SLACK: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf { requires_grad: bool },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    AddRow { a: usize, b: usize },
    MulCol { a: usize, c: usize },
    Relu { a: usize },
    Softplus { a: usize },
    Sqrt { a: usize },
    Abs { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    SumAxis { a: usize, axis: usize },
    MeanAxis { a: usize, axis: usize },
    L2NormRows { a: usize },
    Concat { a: usize, b: usize, axis: usize },
    SoftmaxRows { a: usize },
    NormalizeRows { a: usize },
    SliceCols { a: usize, lo: usize, hi: usize },
    MeanGroupRows { a: usize, k: usize },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Reshape { a: usize },
    CrossEntropyRows { logits: usize, labels: Vec<usize> },
    Rodrigues { points: usize, dir: usize, pivot: usize, alpha: f64 },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::AddRow { .. } => "add_row",
        Op::MulCol { .. } => "mul_col",
        Op::Relu { .. } => "relu",
        Op::Softplus { .. } => "softplus",
        Op::Sqrt { .. } => "sqrt",
        Op::Abs { .. } => "abs",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::SumAxis { .. } => "sum_axis",
        Op::MeanAxis { .. } => "mean_axis",
        Op::L2NormRows { .. } => "l2norm_rows",
        Op::Concat { .. } => "concat",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::NormalizeRows { .. } => "normalize_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::MeanGroupRows { .. } => "mean_group_rows",
        Op::Matmul { .. } => "matmul",
        Op::Transpose { .. } => "transpose",
        Op::Reshape { .. } => "reshape",
        Op::CrossEntropyRows { .. } => "cross_entropy_rows",
        Op::Rodrigues { .. } => "rodrigues",
    }
}

/// Leaf gradients extracted by backward. Indexed by the Var ids that were
/// live on the tape when backward ran; the tape itself is cleared.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    needs: Vec<bool>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            needs: Vec::new(),
            check_finite: true,
        }
    }

    /// NaN/Inf screening after every op; on by default.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, op: Op, value: Tensor, needs: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name(&op) });
        }
        let id = self.values.len();
        self.ops.push(op);
        self.values.push(value);
        self.needs.push(needs);
        Ok(Var(id))
    }

    fn needs(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(Op::Leaf { requires_grad }, t, requires_grad)
    }

    /// Leaf with no gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(TensorError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = &self.values[v.0];
        if t.rank() != 2 {
            return Err(TensorError::shape(
                op,
                format!("expected rank 2, got {:?}", t.shape()),
            ));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Add { a: a.0, b: b.0 }, out, self.needs(a) || self.needs(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Sub { a: a.0, b: b.0 }, out, self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Mul { a: a.0, b: b.0 }, out, self.needs(a) || self.needs(b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|x| x * c).collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Scale { a: a.0, c }, out, self.needs(a))
    }

    /// [n x d] plus a [d] row broadcast over rows (bias add).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.rank2("add_row", a)?;
        let bt = &self.values[b.0];
        if bt.rank() != 1 || bt.numel() != d {
            return Err(TensorError::shape(
                "add_row",
                format!("bias {:?} vs row width {d}", bt.shape()),
            ));
        }
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(d) {
            for (x, y) in row.iter_mut().zip(bt.data()) {
                *x += y;
            }
        }
        let out = Tensor::matrix(n, d, data)?;
        self.push(Op::AddRow { a: a.0, b: b.0 }, out, self.needs(a) || self.needs(b))
    }

    /// [n x d] scaled per row by a [n] column broadcast.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (n, d) = self.rank2("mul_col", a)?;
        let ct = &self.values[c.0];
        if ct.rank() != 1 || ct.numel() != n {
            return Err(TensorError::shape(
                "mul_col",
                format!("column {:?} vs row count {n}", ct.shape()),
            ));
        }
        let mut data = self.values[a.0].data().to_vec();
        for (i, row) in data.chunks_mut(d).enumerate() {
            let s = ct.data()[i];
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        let out = Tensor::matrix(n, d, data)?;
        self.push(Op::MulCol { a: a.0, c: c.0 }, out, self.needs(a) || self.needs(c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Relu { a: a.0 }, out, self.needs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0]
            .data()
            .iter()
            .map(|&x| kernels::softplus(x))
            .collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Softplus { a: a.0 }, out, self.needs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.values[a.0].data().iter().any(|&x| x < 0.0) {
            return Err(TensorError::Domain {
                op: "sqrt",
                what: "negative input".into(),
            });
        }
        let data = self.values[a.0].data().iter().map(|&x| x.sqrt()).collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Sqrt { a: a.0 }, out, self.needs(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let data = self.values[a.0].data().iter().map(|&x| x.abs()).collect();
        let out = Tensor::from_vec(self.values[a.0].shape().to_vec(), data)?;
        self.push(Op::Abs { a: a.0 }, out, self.needs(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push(Op::Sum { a: a.0 }, Tensor::scalar(s), self.needs(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.values[a.0];
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean { a: a.0 }, Tensor::scalar(s), self.needs(a))
    }

    /// Sum a rank-2 tensor along axis (0: over rows -> [d], 1: over cols -> [n]).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (n, d) = self.rank2("sum_axis", a)?;
        if axis > 1 {
            return Err(TensorError::contract("sum_axis", "axis must be 0 or 1"));
        }
        let src = self.values[a.0].data();
        let out = if axis == 0 {
            let mut acc = vec![0.0; d];
            for row in src.chunks(d) {
                for (o, &x) in acc.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Tensor::from_vec(vec![d], acc)?
        } else {
            let acc: Vec<f64> = src.chunks(d).map(|row| row.iter().sum()).collect();
            Tensor::from_vec(vec![n], acc)?
        };
        self.push(Op::SumAxis { a: a.0, axis }, out, self.needs(a))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (n, d) = self.rank2("mean_axis", a)?;
        if axis > 1 {
            return Err(TensorError::contract("mean_axis", "axis must be 0 or 1"));
        }
        let denom = if axis == 0 { n } else { d } as f64;
        let src = self.values[a.0].data();
        let out = if axis == 0 {
            let mut acc = vec![0.0; d];
            for row in src.chunks(d) {
                for (o, &x) in acc.iter_mut().zip(row) {
                    *o += x;
                }
            }
            for o in acc.iter_mut() {
                *o /= denom;
            }
            Tensor::from_vec(vec![d], acc)?
        } else {
            let acc: Vec<f64> = src
                .chunks(d)
                .map(|row| row.iter().sum::<f64>() / denom)
                .collect();
            Tensor::from_vec(vec![n], acc)?
        };
        self.push(Op::MeanAxis { a: a.0, axis }, out, self.needs(a))
    }

    /// Euclidean norm of each row of [n x d] -> [n]. Backward errors on a
    /// zero row (gradient undefined there).
    pub fn l2norm_rows(&mut self, a: Var) -> Result<Var> {
        let (n, _d) = self.rank2("l2norm_rows", a)?;
        let norms: Vec<f64> = self.values[a.0]
            .data()
            .chunks(self.values[a.0].cols())
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_vec(vec![n], norms)?;
        self.push(Op::L2NormRows { a: a.0 }, out, self.needs(a))
    }

    /// Concatenate two rank-2 tensors along axis 0 (rows) or 1 (cols).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (na, da) = self.rank2("concat", a)?;
        let (nb, db) = self.rank2("concat", b)?;
        let out = match axis {
            0 => {
                if da != db {
                    return Err(TensorError::shape("concat", format!("cols {da} vs {db}")));
                }
                let mut data = self.values[a.0].data().to_vec();
                data.extend_from_slice(self.values[b.0].data());
                Tensor::matrix(na + nb, da, data)?
            }
            1 => {
                if na != nb {
                    return Err(TensorError::shape("concat", format!("rows {na} vs {nb}")));
                }
                let mut data = Vec::with_capacity(na * (da + db));
                for i in 0..na {
                    data.extend_from_slice(self.values[a.0].row(i));
                    data.extend_from_slice(self.values[b.0].row(i));
                }
                Tensor::matrix(na, da + db, data)?
            }
            _ => return Err(TensorError::contract("concat", "axis must be 0 or 1")),
        };
        self.push(
            Op::Concat { a: a.0, b: b.0, axis },
            out,
            self.needs(a) || self.needs(b),
        )
    }

    /// Row-stochastic softmax of [n x d].
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.rank2("softmax_rows", a)?;
        let mut data = self.values[a.0].data().to_vec();
        kernels::softmax_rows_inplace(&mut data, d);
        let out = Tensor::matrix(n, d, data)?;
        self.push(Op::SoftmaxRows { a: a.0 }, out, self.needs(a))
    }

    /// Each row divided by max(norm, 1e-12). Rows at the floor pass zero
    /// gradient instead of erroring; the unit-vector heads rely on this.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.rank2("normalize_rows", a)?;
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(d) {
            let r = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            for x in row.iter_mut() {
                *x /= r;
            }
        }
        let out = Tensor::matrix(n, d, data)?;
        self.push(Op::NormalizeRows { a: a.0 }, out, self.needs(a))
    }

    /// Columns lo..hi of [n x d] -> [n x (hi-lo)].
    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let (n, d) = self.rank2("slice_cols", a)?;
        if lo >= hi || hi > d {
            return Err(TensorError::contract(
                "slice_cols",
                format!("range {lo}..{hi} out of width {d}"),
            ));
        }
        let mut data = Vec::with_capacity(n * (hi - lo));
        for i in 0..n {
            data.extend_from_slice(&self.values[a.0].row(i)[lo..hi]);
        }
        let out = Tensor::matrix(n, hi - lo, data)?;
        self.push(Op::SliceCols { a: a.0, lo, hi }, out, self.needs(a))
    }

    /// [n*k x d] -> [n x d], averaging each consecutive group of k rows.
    pub fn mean_group_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let (nk, d) = self.rank2("mean_group_rows", a)?;
        if k == 0 || nk % k != 0 {
            return Err(TensorError::contract(
                "mean_group_rows",
                format!("row count {nk} not divisible by group size {k}"),
            ));
        }
        let n = nk / k;
        let src = self.values[a.0].data();
        let mut data = vec![0.0; n * d];
        for (i, orow) in data.chunks_mut(d).enumerate() {
            for t in 0..k {
                let row = &src[(i * k + t) * d..(i * k + t + 1) * d];
                for (o, &x) in orow.iter_mut().zip(row) {
                    *o += x;
                }
            }
            for o in orow.iter_mut() {
                *o /= k as f64;
            }
        }
        let out = Tensor::matrix(n, d, data)?;
        self.push(Op::MeanGroupRows { a: a.0, k }, out, self.needs(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.rank2("matmul", a)?;
        let (kb, p) = self.rank2("matmul", b)?;
        if ka != kb {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dims {ka} vs {kb}"),
            ));
        }
        let mut data = vec![0.0; m * p];
        kernels::matmul_acc(
            self.values[a.0].data(),
            self.values[b.0].data(),
            m,
            ka,
            p,
            &mut data,
        );
        let out = Tensor::matrix(m, p, data)?;
        self.push(Op::Matmul { a: a.0, b: b.0 }, out, self.needs(a) || self.needs(b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.rank2("transpose", a)?;
        let src = self.values[a.0].data();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[j * n + i] = src[i * d + j];
            }
        }
        let out = Tensor::matrix(d, n, data)?;
        self.push(Op::Transpose { a: a.0 }, out, self.needs(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = Tensor::from_vec(shape, self.values[a.0].data().to_vec())?;
        if out.numel() != self.values[a.0].numel() {
            return Err(TensorError::shape("reshape", "element count changed"));
        }
        self.push(Op::Reshape { a: a.0 }, out, self.needs(a))
    }

    /// Per-row cross entropy of logits [n x c] against integer labels [n],
    /// computed via logsumexp. Output is the [n] vector of losses.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.rank2("cross_entropy_rows", logits)?;
        if labels.len() != n {
            return Err(TensorError::shape(
                "cross_entropy_rows",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::contract(
                "cross_entropy_rows",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let mut losses = Vec::with_capacity(n);
        for (i, &y) in labels.iter().enumerate() {
            let row = self.values[logits.0].row(i);
            losses.push(kernels::logsumexp(row) - row[y]);
        }
        let out = Tensor::from_vec(vec![n], losses)?;
        let needs = self.needs(logits);
        self.push(
            Op::CrossEntropyRows {
                logits: logits.0,
                labels: labels.to_vec(),
            },
            out,
            needs,
        )
    }

    /// Rotate points [m x 3] about the axis (dir [3] through pivot [3]) by
    /// alpha radians, axis-angle form. Differentiable in points, dir, pivot.
    pub fn rodrigues(&mut self, points: Var, dir: Var, pivot: Var, alpha: f64) -> Result<Var> {
        let (m, d3) = self.rank2("rodrigues", points)?;
        if d3 != 3 {
            return Err(TensorError::shape("rodrigues", "points must be m x 3"));
        }
        for (name, v) in [("dir", dir), ("pivot", pivot)] {
            let t = &self.values[v.0];
            if t.numel() != 3 || t.rank() != 1 {
                return Err(TensorError::shape(
                    "rodrigues",
                    format!("{name} must be a [3] vector, got {:?}", t.shape()),
                ));
            }
        }
        if !alpha.is_finite() {
            return Err(TensorError::contract("rodrigues", "non-finite angle"));
        }
        let u = vec3(&self.values[dir.0]);
        let norm = kernels::dot3(u, u).sqrt();
        if (norm - 1.0).abs() > UNIT_SLACK {
            return Err(TensorError::contract(
                "rodrigues",
                format!("direction norm {norm} is not unit"),
            ));
        }
        let q = vec3(&self.values[pivot.0]);
        let (s, c) = alpha.sin_cos();
        let src = self.values[points.0].data();
        let mut data = vec![0.0; m * 3];
        for (i, orow) in data.chunks_mut(3).enumerate() {
            let p = [src[i * 3], src[i * 3 + 1], src[i * 3 + 2]];
            let v = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            let uv = kernels::cross(u, v);
            let udv = kernels::dot3(u, v);
            for t in 0..3 {
                orow[t] = q[t] + c * v[t] + s * uv[t] + (1.0 - c) * udv * u[t];
            }
        }
        let out = Tensor::matrix(m, 3, data)?;
        let needs = self.needs(points) || self.needs(dir) || self.needs(pivot);
        self.push(
            Op::Rodrigues {
                points: points.0,
                dir: dir.0,
                pivot: pivot.0,
                alpha,
            },
            out,
            needs,
        )
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// requires_grad leaf (zeros when the loss does not reach it) and clears
    /// the tape; all Vars from before the call are invalidated.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.ops.is_empty() {
            return Err(TensorError::contract("backward", "empty tape"));
        }
        if !self.values[loss.0].is_scalar() {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.values[loss.0].shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.needs[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_op(id, &g, &mut grads)?;
            if matches!(self.ops[id], Op::Leaf { requires_grad: true }) {
                grads[id] = Some(g);
            }
        }

        let mut out: Vec<Option<Tensor>> = vec![None; self.values.len()];
        for (id, op) in self.ops.iter().enumerate() {
            if let Op::Leaf { requires_grad: true } = op {
                let data = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.values[id].numel()]);
                if self.check_finite && !data.iter().all(|v| v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                out[id] = Some(Tensor::from_vec(self.values[id].shape().to_vec(), data)?);
            }
        }
        self.ops.clear();
        self.values.clear();
        self.needs.clear();
        Ok(Gradients { grads: out })
    }

    fn backprop_op(
        &self,
        id: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let val = |i: usize| self.values[i].data();
        // Allocate-on-demand accumulator for an input's gradient.
        macro_rules! gbuf {
            ($i:expr) => {
                grads[$i].get_or_insert_with(|| vec![0.0; self.values[$i].numel()])
            };
        }
        match &self.ops[id] {
            Op::Leaf { .. } => {}
            Op::Add { a, b } => {
                for (x, inp) in [(*a, 1.0_f64), (*b, 1.0)] {
                    if self.needs[x] {
                        let gb = gbuf!(x);
                        for (o, &gv) in gb.iter_mut().zip(g) {
                            *o += inp * gv;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.needs[*a] {
                    let gb = gbuf!(*a);
                    for (o, &gv) in gb.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if self.needs[*b] {
                    let gb = gbuf!(*b);
                    for (o, &gv) in gb.iter_mut().zip(g) {
                        *o -= gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs[*a] {
                    let vb = val(*b).to_vec();
                    let gb = gbuf!(*a);
                    for ((o, &gv), &bv) in gb.iter_mut().zip(g).zip(&vb) {
                        *o += gv * bv;
                    }
                }
                if self.needs[*b] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*b);
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(&va) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.needs[*a] {
                    let gb = gbuf!(*a);
                    for (o, &gv) in gb.iter_mut().zip(g) {
                        *o += c * gv;
                    }
                }
            }
            Op::AddRow { a, b } => {
                let d = self.values[*b].numel();
                if self.needs[*a] {
                    let gb = gbuf!(*a);
                    for (o, &gv) in gb.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
                if self.needs[*b] {
                    let gb = gbuf!(*b);
                    for grow in g.chunks(d) {
                        for (o, &gv) in gb.iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::MulCol { a, c } => {
                let d = self.values[*a].cols();
                if self.needs[*a] {
                    let cv = val(*c).to_vec();
                    let gb = gbuf!(*a);
                    for (i, (orow, grow)) in gb.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        for (o, &gv) in orow.iter_mut().zip(grow) {
                            *o += gv * cv[i];
                        }
                    }
                }
                if self.needs[*c] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*c);
                    for (i, (arow, grow)) in va.chunks(d).zip(g.chunks(d)).enumerate() {
                        gb[i] += arow.iter().zip(grow).map(|(&av, &gv)| av * gv).sum::<f64>();
                    }
                }
            }
            Op::Relu { a } => {
                if self.needs[*a] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*a);
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(&va) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Softplus { a } => {
                if self.needs[*a] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*a);
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(&va) {
                        *o += gv * kernels::sigmoid(x);
                    }
                }
            }
            Op::Sqrt { a } => {
                if self.needs[*a] {
                    let out = val(id).to_vec();
                    if out.iter().any(|&y| y == 0.0) {
                        return Err(TensorError::DegenerateGradient {
                            op: "sqrt",
                            what: "derivative unbounded at zero".into(),
                        });
                    }
                    let gb = gbuf!(*a);
                    for ((o, &gv), &y) in gb.iter_mut().zip(g).zip(&out) {
                        *o += gv * 0.5 / y;
                    }
                }
            }
            Op::Abs { a } => {
                if self.needs[*a] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*a);
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(&va) {
                        *o += gv * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                    }
                }
            }
            Op::Sum { a } => {
                if self.needs[*a] {
                    let gb = gbuf!(*a);
                    for o in gb.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Mean { a } => {
                if self.needs[*a] {
                    let n = self.values[*a].numel() as f64;
                    let gb = gbuf!(*a);
                    for o in gb.iter_mut() {
                        *o += g[0] / n;
                    }
                }
            }
            Op::SumAxis { a, axis } | Op::MeanAxis { a, axis } => {
                if self.needs[*a] {
                    let d = self.values[*a].cols();
                    let n = self.values[*a].rows();
                    let denom = match &self.ops[id] {
                        Op::MeanAxis { .. } => {
                            if *axis == 0 {
                                n as f64
                            } else {
                                d as f64
                            }
                        }
                        _ => 1.0,
                    };
                    let gb = gbuf!(*a);
                    if *axis == 0 {
                        for orow in gb.chunks_mut(d) {
                            for (o, &gv) in orow.iter_mut().zip(g) {
                                *o += gv / denom;
                            }
                        }
                    } else {
                        for (i, orow) in gb.chunks_mut(d).enumerate() {
                            for o in orow.iter_mut() {
                                *o += g[i] / denom;
                            }
                        }
                    }
                }
            }
            Op::L2NormRows { a } => {
                if self.needs[*a] {
                    let d = self.values[*a].cols();
                    let va = val(*a).to_vec();
                    let norms = val(id).to_vec();
                    if norms.iter().any(|&r| r == 0.0) {
                        return Err(TensorError::DegenerateGradient {
                            op: "l2norm_rows",
                            what: "zero row has no direction".into(),
                        });
                    }
                    let gb = gbuf!(*a);
                    for (i, (orow, arow)) in gb.chunks_mut(d).zip(va.chunks(d)).enumerate() {
                        let k = g[i] / norms[i];
                        for (o, &x) in orow.iter_mut().zip(arow) {
                            *o += k * x;
                        }
                    }
                }
            }
            Op::Concat { a, b, axis } => {
                let (na, da) = (self.values[*a].rows(), self.values[*a].cols());
                let (_nb, db) = (self.values[*b].rows(), self.values[*b].cols());
                if *axis == 0 {
                    if self.needs[*a] {
                        let gb = gbuf!(*a);
                        for (o, &gv) in gb.iter_mut().zip(&g[..na * da]) {
                            *o += gv;
                        }
                    }
                    if self.needs[*b] {
                        let gb = gbuf!(*b);
                        for (o, &gv) in gb.iter_mut().zip(&g[na * da..]) {
                            *o += gv;
                        }
                    }
                } else {
                    let w = da + db;
                    if self.needs[*a] {
                        let gb = gbuf!(*a);
                        for (i, orow) in gb.chunks_mut(da).enumerate() {
                            for (o, &gv) in orow.iter_mut().zip(&g[i * w..i * w + da]) {
                                *o += gv;
                            }
                        }
                    }
                    if self.needs[*b] {
                        let gb = gbuf!(*b);
                        for (i, orow) in gb.chunks_mut(db).enumerate() {
                            for (o, &gv) in orow.iter_mut().zip(&g[i * w + da..(i + 1) * w]) {
                                *o += gv;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.needs[*a] {
                    let d = self.values[id].cols();
                    let y = val(id).to_vec();
                    let gb = gbuf!(*a);
                    for (orow, (yrow, grow)) in
                        gb.chunks_mut(d).zip(y.chunks(d).zip(g.chunks(d)))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::NormalizeRows { a } => {
                if self.needs[*a] {
                    let d = self.values[id].cols();
                    let va = val(*a).to_vec();
                    let y = val(id).to_vec();
                    let gb = gbuf!(*a);
                    for ((orow, arow), (yrow, grow)) in gb
                        .chunks_mut(d)
                        .zip(va.chunks(d))
                        .zip(y.chunks(d).zip(g.chunks(d)))
                    {
                        let r = arow.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if r <= NORM_EPS {
                            continue;
                        }
                        let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                        for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                            *o += (gv - yv * dot) / r;
                        }
                    }
                }
            }
            Op::SliceCols { a, lo, hi } => {
                if self.needs[*a] {
                    let d = self.values[*a].cols();
                    let w = hi - lo;
                    let gb = gbuf!(*a);
                    for (i, grow) in g.chunks(w).enumerate() {
                        for (o, &gv) in gb[i * d + lo..i * d + hi].iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::MeanGroupRows { a, k } => {
                if self.needs[*a] {
                    let d = self.values[id].cols();
                    let kf = *k as f64;
                    let gb = gbuf!(*a);
                    for (i, grow) in g.chunks(d).enumerate() {
                        for t in 0..*k {
                            let orow = &mut gb[(i * k + t) * d..(i * k + t + 1) * d];
                            for (o, &gv) in orow.iter_mut().zip(grow) {
                                *o += gv / kf;
                            }
                        }
                    }
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.values[*a].rows(), self.values[*a].cols());
                let p = self.values[*b].cols();
                if self.needs[*a] {
                    let vb = val(*b).to_vec();
                    let gb = gbuf!(*a);
                    kernels::matmul_nt_acc(g, &vb, m, k, p, gb);
                }
                if self.needs[*b] {
                    let va = val(*a).to_vec();
                    let gb = gbuf!(*b);
                    kernels::matmul_tn_acc(&va, g, m, k, p, gb);
                }
            }
            Op::Transpose { a } => {
                if self.needs[*a] {
                    let (n, d) = (self.values[*a].rows(), self.values[*a].cols());
                    let gb = gbuf!(*a);
                    for i in 0..n {
                        for j in 0..d {
                            gb[i * d + j] += g[j * n + i];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.needs[*a] {
                    let gb = gbuf!(*a);
                    for (o, &gv) in gb.iter_mut().zip(g) {
                        *o += gv;
                    }
                }
            }
            Op::CrossEntropyRows { logits, labels } => {
                if self.needs[*logits] {
                    let c = self.values[*logits].cols();
                    let vl = val(*logits).to_vec();
                    let gb = gbuf!(*logits);
                    for (i, &y) in labels.iter().enumerate() {
                        let row = &vl[i * c..(i + 1) * c];
                        let mut sm = row.to_vec();
                        kernels::softmax_rows_inplace(&mut sm, c);
                        let orow = &mut gb[i * c..(i + 1) * c];
                        for (j, (o, &p)) in orow.iter_mut().zip(&sm).enumerate() {
                            let delta = if j == y { 1.0 } else { 0.0 };
                            *o += g[i] * (p - delta);
                        }
                    }
                }
            }
            Op::Rodrigues {
                points,
                dir,
                pivot,
                alpha,
            } => {
                let u = vec3(&self.values[*dir]);
                let q = vec3(&self.values[*pivot]);
                let (s, c) = alpha.sin_cos();
                let m = self.values[*points].rows();
                let ps = val(*points).to_vec();
                let mut dpts = if self.needs[*points] {
                    Some(vec![0.0; m * 3])
                } else {
                    None
                };
                let mut du = [0.0; 3];
                let mut dq = [0.0; 3];
                for i in 0..m {
                    let p = [ps[i * 3], ps[i * 3 + 1], ps[i * 3 + 2]];
                    let v = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                    let gi = [g[i * 3], g[i * 3 + 1], g[i * 3 + 2]];
                    // out = q + c v + s (u x v) + (1-c) u (u . v)
                    let gxu = kernels::cross(gi, u);
                    let udg = kernels::dot3(u, gi);
                    let dv = [
                        c * gi[0] + s * gxu[0] + (1.0 - c) * u[0] * udg,
                        c * gi[1] + s * gxu[1] + (1.0 - c) * u[1] * udg,
                        c * gi[2] + s * gxu[2] + (1.0 - c) * u[2] * udg,
                    ];
                    if let Some(dp) = dpts.as_mut() {
                        for t in 0..3 {
                            dp[i * 3 + t] += dv[t];
                        }
                    }
                    if self.needs[*pivot] {
                        for t in 0..3 {
                            dq[t] += gi[t] - dv[t];
                        }
                    }
                    if self.needs[*dir] {
                        let vxg = kernels::cross(v, gi);
                        let udv = kernels::dot3(u, v);
                        for t in 0..3 {
                            du[t] += s * vxg[t] + (1.0 - c) * (udv * gi[t] + v[t] * udg);
                        }
                    }
                }
                if let Some(dp) = dpts {
                    let gb = gbuf!(*points);
                    for (o, x) in gb.iter_mut().zip(dp) {
                        *o += x;
                    }
                }
                if self.needs[*dir] {
                    let gb = gbuf!(*dir);
                    for (o, x) in gb.iter_mut().zip(du) {
                        *o += x;
                    }
                }
                if self.needs[*pivot] {
                    let gb = gbuf!(*pivot);
                    for (o, x) in gb.iter_mut().zip(dq) {
                        *o += x;
                    }
                }
            }
        }
        Ok(())
    }
}

fn vec3(t: &Tensor) -> [f64; 3] {
    let d = t.data();
    [d[0], d[1], d[2]]
}

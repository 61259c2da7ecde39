//! Reverse-mode automatic differentiation over dense 64-bit matrices.
//!
//! Every tensor is a 2-D row-major matrix (vectors are `n x 1` or `1 x d`,
//! scalars `1 x 1`). A [`Tape`] records each op in execution order;
//! [`Tape::grad_of`] replays it in exact reverse order, accumulating
//! gradients additively. The op set is the closed list needed by the
//! heterogeneous models and the physics penalties; shape mismatches inside
//! model code are programming errors and panic.

use ndarray::{Array2, Axis};
use thiserror::Error;

/// Dense 64-bit matrix, the only tensor value type on the tape.
pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("grad_of requires a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
}

/// Leaky-relu slope used across the models.
pub const LEAKY_SLOPE: f64 = 0.2;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    MatMul(usize, usize),
    /// `[n x d] + [1 x d]` broadcast over rows.
    AddRow(usize, usize),
    /// `[n x d] * [n x 1]` broadcast over columns.
    MulCol(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    /// Row gather: `out[k] = in[idx[k]]`.
    Gather(usize, Vec<u32>),
    SegmentSum(usize, Vec<u32>, usize),
    SegmentMean(usize, Vec<u32>, usize),
    /// Saved per-(segment, column) winning row, `u32::MAX` when empty.
    SegmentMax(usize, Vec<u32>, Vec<u32>),
    SegmentMin(usize, Vec<u32>, Vec<u32>),
    /// Saves per-segment means and counts for the backward pass.
    SegmentStd(usize, Vec<u32>, Mat, Vec<u32>),
    /// Scores are `[m x 1]`; output normalized per segment.
    SegmentSoftmax(usize, Vec<u32>, usize),
    SumAll(usize),
    MeanAll(usize),
    /// Sum along axis 1, `[n x d] -> [n x 1]`.
    SumCols(usize),
    /// Mean squared error: `(1/rows) * sum of squared entries of (a - b)`.
    MseMean(usize, usize),
    /// Mean of `max(x,0) - x*y + ln(1 + exp(-|x|))` over `[n x 1]` logits.
    BceWithLogitsMean(usize, usize),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Reduction mode for [`Tape::segment_reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
    Min,
    Std,
}

/// Records forward ops and replays them backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let v = self.value(id);
        (v.nrows(), v.ncols())
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "expected scalar node");
        v[(0, 0)]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node { value, op, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Inserts an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Mat) -> TensorId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(Mat::from_elem((1, 1), v))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        let v = self.value(a) * k;
        let rg = self.needs(a.0);
        self.push(v, Op::Scale(a.0, k), rg)
    }

    pub fn add_scalar(&mut self, a: TensorId, k: f64) -> TensorId {
        let v = self.value(a) + k;
        let rg = self.needs(a.0);
        self.push(v, Op::AddScalar(a.0, k), rg)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul inner dim mismatch {ar}x{ac} . {br}x{bc}");
        let v = self.value(a).dot(self.value(b));
        let rg = self.needs(a.0) || self.needs(b.0);
        self.push(v, Op::MatMul(a.0, b.0), rg)
    }

    /// `x [n x d] + row [1 x d]`.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (_, d) = self.shape(x);
        assert_eq!(self.shape(row), (1, d), "add_row shape mismatch");
        let v = self.value(x) + &self.value(row).row(0);
        let rg = self.needs(x.0) || self.needs(row.0);
        self.push(v, Op::AddRow(x.0, row.0), rg)
    }

    /// `x [n x d] * col [n x 1]`, broadcast across columns.
    pub fn mul_col(&mut self, x: TensorId, col: TensorId) -> TensorId {
        let (n, _) = self.shape(x);
        assert_eq!(self.shape(col), (n, 1), "mul_col shape mismatch");
        let mut v = self.value(x).clone();
        let c = self.value(col);
        for (mut row, &k) in v.axis_iter_mut(Axis(0)).zip(c.column(0)) {
            row.mapv_inplace(|e| e * k);
        }
        let rg = self.needs(x.0) || self.needs(col.0);
        self.push(v, Op::MulCol(x.0, col.0), rg)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Mat::zeros((n, total));
        let mut at = 0;
        for &p in parts {
            let src = self.value(p);
            assert_eq!(src.nrows(), n, "concat_cols row mismatch");
            v.slice_mut(ndarray::s![.., at..at + src.ncols()]).assign(src);
            at += src.ncols();
        }
        let rg = parts.iter().any(|&p| self.needs(p.0));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg)
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> TensorId {
        let (_, d) = self.shape(x);
        assert!(start <= end && end <= d, "slice_cols out of range");
        let v = self.value(x).slice(ndarray::s![.., start..end]).to_owned();
        let rg = self.needs(x.0);
        self.push(v, Op::SliceCols(x.0, start, end), rg)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(|e| e.max(0.0));
        let rg = self.needs(x.0);
        self.push(v, Op::Relu(x.0), rg)
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> TensorId {
        let v = self.value(x).mapv(|e| if e > 0.0 { e } else { slope * e });
        let rg = self.needs(x.0);
        self.push(v, Op::LeakyRelu(x.0, slope), rg)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(sigmoid);
        let rg = self.needs(x.0);
        self.push(v, Op::Sigmoid(x.0), rg)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::tanh);
        let rg = self.needs(x.0);
        self.push(v, Op::Tanh(x.0), rg)
    }

    pub fn sin(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::sin);
        let rg = self.needs(x.0);
        self.push(v, Op::Sin(x.0), rg)
    }

    pub fn cos(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::cos);
        let rg = self.needs(x.0);
        self.push(v, Op::Cos(x.0), rg)
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x).mapv(f64::sqrt);
        let rg = self.needs(x.0);
        self.push(v, Op::Sqrt(x.0), rg)
    }

    /// Gathers rows: `out[k] = x[idx[k]]`.
    pub fn gather(&mut self, x: TensorId, idx: &[u32]) -> TensorId {
        let src = self.value(x);
        let n = src.nrows();
        let mut v = Mat::zeros((idx.len(), src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            assert!((i as usize) < n, "gather index {i} out of range (n={n})");
            v.row_mut(k).assign(&src.row(i as usize));
        }
        let rg = self.needs(x.0);
        self.push(v, Op::Gather(x.0, idx.to_vec()), rg)
    }

    /// Per-segment reduction of `values [m x d]` into `[num_segments x d]`.
    ///
    /// Empty segments yield zero rows in every mode. Max/min route gradients
    /// to the winning element, ties to the lowest row index.
    pub fn segment_reduce(
        &mut self,
        values: TensorId,
        segment_ids: &[u32],
        num_segments: usize,
        mode: SegmentMode,
    ) -> TensorId {
        let src = self.value(values);
        assert_eq!(src.nrows(), segment_ids.len(), "segment id count mismatch");
        for &s in segment_ids {
            assert!((s as usize) < num_segments, "segment id {s} out of range");
        }
        let d = src.ncols();
        let mut counts = vec![0u32; num_segments];
        for &s in segment_ids {
            counts[s as usize] += 1;
        }
        let rg = self.needs(values.0);
        let ids = segment_ids.to_vec();

        match mode {
            SegmentMode::Sum | SegmentMode::Mean => {
                let mut out = Mat::zeros((num_segments, d));
                for (r, &s) in segment_ids.iter().enumerate() {
                    for c in 0..d {
                        out[(s as usize, c)] += src[(r, c)];
                    }
                }
                if mode == SegmentMode::Mean {
                    for s in 0..num_segments {
                        if counts[s] > 0 {
                            let inv = 1.0 / counts[s] as f64;
                            for c in 0..d {
                                out[(s, c)] *= inv;
                            }
                        }
                    }
                    self.push(out, Op::SegmentMean(values.0, ids, num_segments), rg)
                } else {
                    self.push(out, Op::SegmentSum(values.0, ids, num_segments), rg)
                }
            }
            SegmentMode::Max | SegmentMode::Min => {
                let mut out = Mat::zeros((num_segments, d));
                let mut arg = vec![u32::MAX; num_segments * d];
                for (r, &s) in segment_ids.iter().enumerate() {
                    let s = s as usize;
                    for c in 0..d {
                        let slot = s * d + c;
                        let v = src[(r, c)];
                        let better = if arg[slot] == u32::MAX {
                            true
                        } else if mode == SegmentMode::Max {
                            v > out[(s, c)]
                        } else {
                            v < out[(s, c)]
                        };
                        if better {
                            out[(s, c)] = v;
                            arg[slot] = r as u32;
                        }
                    }
                }
                let op = if mode == SegmentMode::Max {
                    Op::SegmentMax(values.0, ids, arg)
                } else {
                    Op::SegmentMin(values.0, ids, arg)
                };
                self.push(out, op, rg)
            }
            SegmentMode::Std => {
                let mut mean = Mat::zeros((num_segments, d));
                for (r, &s) in segment_ids.iter().enumerate() {
                    for c in 0..d {
                        mean[(s as usize, c)] += src[(r, c)];
                    }
                }
                for s in 0..num_segments {
                    if counts[s] > 0 {
                        let inv = 1.0 / counts[s] as f64;
                        for c in 0..d {
                            mean[(s, c)] *= inv;
                        }
                    }
                }
                let mut var = Mat::zeros((num_segments, d));
                for (r, &s) in segment_ids.iter().enumerate() {
                    let s = s as usize;
                    for c in 0..d {
                        let dev = src[(r, c)] - mean[(s, c)];
                        var[(s, c)] += dev * dev;
                    }
                }
                let mut out = Mat::zeros((num_segments, d));
                for s in 0..num_segments {
                    if counts[s] > 0 {
                        let inv = 1.0 / counts[s] as f64;
                        for c in 0..d {
                            out[(s, c)] = (var[(s, c)] * inv).sqrt();
                        }
                    }
                }
                self.push(out, Op::SegmentStd(values.0, ids, mean, counts), rg)
            }
        }
    }

    /// Exp-normalizes `scores [m x 1]` within each segment, with
    /// max-subtraction for stability. Non-empty segments sum to 1.
    pub fn segment_softmax(
        &mut self,
        scores: TensorId,
        segment_ids: &[u32],
        num_segments: usize,
    ) -> TensorId {
        let src = self.value(scores);
        assert_eq!(src.ncols(), 1, "segment_softmax expects [m x 1] scores");
        assert_eq!(src.nrows(), segment_ids.len(), "segment id count mismatch");
        for &s in segment_ids {
            assert!((s as usize) < num_segments, "segment id {s} out of range");
        }
        let mut seg_max = vec![f64::NEG_INFINITY; num_segments];
        for (r, &s) in segment_ids.iter().enumerate() {
            seg_max[s as usize] = seg_max[s as usize].max(src[(r, 0)]);
        }
        let mut denom = vec![0.0f64; num_segments];
        let mut v = Mat::zeros((src.nrows(), 1));
        for (r, &s) in segment_ids.iter().enumerate() {
            let e = (src[(r, 0)] - seg_max[s as usize]).exp();
            v[(r, 0)] = e;
            denom[s as usize] += e;
        }
        for (r, &s) in segment_ids.iter().enumerate() {
            v[(r, 0)] /= denom[s as usize];
        }
        let rg = self.needs(scores.0);
        self.push(v, Op::SegmentSoftmax(scores.0, segment_ids.to_vec(), num_segments), rg)
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let v = row_major_sum(self.value(x));
        let rg = self.needs(x.0);
        self.push(Mat::from_elem((1, 1), v), Op::SumAll(x.0), rg)
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let src = self.value(x);
        let n = src.len().max(1);
        let v = row_major_sum(src) / n as f64;
        let rg = self.needs(x.0);
        self.push(Mat::from_elem((1, 1), v), Op::MeanAll(x.0), rg)
    }

    /// Row-wise sum: `[n x d] -> [n x 1]`.
    pub fn sum_cols(&mut self, x: TensorId) -> TensorId {
        let src = self.value(x);
        let mut v = Mat::zeros((src.nrows(), 1));
        for (r, row) in src.rows().into_iter().enumerate() {
            v[(r, 0)] = row.iter().sum();
        }
        let rg = self.needs(x.0);
        self.push(v, Op::SumCols(x.0), rg)
    }

    /// `(1/rows) * sum_i ||a_i - b_i||^2`, accumulated row-major so it is
    /// bit-identical to a plain double loop.
    pub fn mse_mean(&mut self, pred: TensorId, target: TensorId) -> TensorId {
        assert_eq!(self.shape(pred), self.shape(target), "mse shape mismatch");
        let a = self.value(pred);
        let b = self.value(target);
        let mut acc = 0.0f64;
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                let d = a[(r, c)] - b[(r, c)];
                acc += d * d;
            }
        }
        let v = acc / a.nrows() as f64;
        let rg = self.needs(pred.0) || self.needs(target.0);
        self.push(Mat::from_elem((1, 1), v), Op::MseMean(pred.0, target.0), rg)
    }

    /// Numerically stable binary cross-entropy with logits, mean over rows.
    pub fn bce_with_logits_mean(&mut self, logits: TensorId, targets: TensorId) -> TensorId {
        assert_eq!(self.shape(logits), self.shape(targets), "bce shape mismatch");
        assert_eq!(self.shape(logits).1, 1, "bce expects [n x 1] logits");
        let x = self.value(logits);
        let y = self.value(targets);
        let n = x.nrows();
        let mut acc = 0.0f64;
        for r in 0..n {
            let xi = x[(r, 0)];
            let yi = y[(r, 0)];
            acc += xi.max(0.0) - xi * yi + (-xi.abs()).exp().ln_1p();
        }
        let v = acc / n as f64;
        let rg = self.needs(logits.0) || self.needs(targets.0);
        self.push(Mat::from_elem((1, 1), v), Op::BceWithLogitsMean(logits.0, targets.0), rg)
    }

    /// Backpropagates from a scalar `output`. Returns the gradient of each
    /// requested leaf; leaves the output does not depend on get zero
    /// gradients and are listed in the detached report.
    pub fn grad_of(
        &self,
        output: TensorId,
        params: &[TensorId],
    ) -> Result<(Vec<Mat>, Vec<usize>), TapeError> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(TapeError::NonScalarOutput { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_step(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Vec::with_capacity(params.len());
        let mut detached = Vec::new();
        for (k, &p) in params.iter().enumerate() {
            match grads[p.0].take() {
                Some(g) => out.push(g),
                None => {
                    let (r, c) = self.shape(p);
                    out.push(Mat::zeros((r, c)));
                    detached.push(k);
                }
            }
        }
        Ok((out, detached))
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], target: usize, delta: Mat) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_step(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g * &self.nodes[*b].value);
                self.accumulate(grads, *b, g * &self.nodes[*a].value);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::AddScalar(a, _) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                self.accumulate(grads, *a, g.dot(&bv.t()));
                self.accumulate(grads, *b, av.t().dot(g));
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                let mut gr = Mat::zeros((1, g.ncols()));
                for r in g.rows() {
                    for (c, &v) in r.iter().enumerate() {
                        gr[(0, c)] += v;
                    }
                }
                self.accumulate(grads, *row, gr);
            }
            Op::MulCol(x, col) => {
                let xv = &self.nodes[*x].value;
                let cv = &self.nodes[*col].value;
                let mut gx = g.clone();
                for (mut row, &k) in gx.axis_iter_mut(Axis(0)).zip(cv.column(0)) {
                    row.mapv_inplace(|e| e * k);
                }
                self.accumulate(grads, *x, gx);
                let mut gc = Mat::zeros((xv.nrows(), 1));
                for r in 0..xv.nrows() {
                    let mut acc = 0.0;
                    for c in 0..xv.ncols() {
                        acc += g[(r, c)] * xv[(r, c)];
                    }
                    gc[(r, 0)] = acc;
                }
                self.accumulate(grads, *col, gc);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.nodes[p].value.ncols();
                    let sub = g.slice(ndarray::s![.., at..at + w]).to_owned();
                    self.accumulate(grads, p, sub);
                    at += w;
                }
            }
            Op::SliceCols(x, start, end) => {
                let (n, d) = (self.nodes[*x].value.nrows(), self.nodes[*x].value.ncols());
                let mut gx = Mat::zeros((n, d));
                gx.slice_mut(ndarray::s![.., *start..*end]).assign(g);
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                let gx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| if xi > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = &self.nodes[*x].value;
                let s = *slope;
                let gx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| if xi > 0.0 { gi } else { s * gi });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let out = &self.nodes[i].value;
                let gx = ndarray::Zip::from(g).and(out).map_collect(|&gi, &o| gi * o * (1.0 - o));
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let out = &self.nodes[i].value;
                let gx = ndarray::Zip::from(g).and(out).map_collect(|&gi, &o| gi * (1.0 - o * o));
                self.accumulate(grads, *x, gx);
            }
            Op::Sin(x) => {
                let xv = &self.nodes[*x].value;
                let gx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| gi * xi.cos());
                self.accumulate(grads, *x, gx);
            }
            Op::Cos(x) => {
                let xv = &self.nodes[*x].value;
                let gx = ndarray::Zip::from(g).and(xv).map_collect(|&gi, &xi| -gi * xi.sin());
                self.accumulate(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let out = &self.nodes[i].value;
                let gx = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&gi, &o| if o == 0.0 { 0.0 } else { gi / (2.0 * o) });
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(x, idx) => {
                let (n, d) = (self.nodes[*x].value.nrows(), self.nodes[*x].value.ncols());
                let mut gx = Mat::zeros((n, d));
                for (k, &src_row) in idx.iter().enumerate() {
                    for c in 0..d {
                        gx[(src_row as usize, c)] += g[(k, c)];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSum(x, ids, _) => {
                let d = g.ncols();
                let mut gx = Mat::zeros((ids.len(), d));
                for (r, &s) in ids.iter().enumerate() {
                    for c in 0..d {
                        gx[(r, c)] = g[(s as usize, c)];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentMean(x, ids, num) => {
                let d = g.ncols();
                let mut counts = vec![0u32; *num];
                for &s in ids {
                    counts[s as usize] += 1;
                }
                let mut gx = Mat::zeros((ids.len(), d));
                for (r, &s) in ids.iter().enumerate() {
                    let inv = 1.0 / counts[s as usize] as f64;
                    for c in 0..d {
                        gx[(r, c)] = g[(s as usize, c)] * inv;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentMax(x, ids, arg) | Op::SegmentMin(x, ids, arg) => {
                let d = g.ncols();
                let mut gx = Mat::zeros((ids.len(), d));
                for s in 0..g.nrows() {
                    for c in 0..d {
                        let winner = arg[s * d + c];
                        if winner != u32::MAX {
                            gx[(winner as usize, c)] += g[(s, c)];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentStd(x, ids, mean, counts) => {
                // d std_s / d x_r = (x_r - mu_s) / (n_s * std_s); zero at std = 0.
                let xv = &self.nodes[*x].value;
                let out = &self.nodes[i].value;
                let d = g.ncols();
                let mut gx = Mat::zeros((ids.len(), d));
                for (r, &s) in ids.iter().enumerate() {
                    let s = s as usize;
                    for c in 0..d {
                        let std = out[(s, c)];
                        if std > 0.0 {
                            let dev = xv[(r, c)] - mean[(s, c)];
                            gx[(r, c)] = g[(s, c)] * dev / (counts[s] as f64 * std);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSoftmax(x, ids, num) => {
                let out = &self.nodes[i].value;
                let mut dot = vec![0.0f64; *num];
                for (r, &s) in ids.iter().enumerate() {
                    dot[s as usize] += out[(r, 0)] * g[(r, 0)];
                }
                let mut gx = Mat::zeros((ids.len(), 1));
                for (r, &s) in ids.iter().enumerate() {
                    gx[(r, 0)] = out[(r, 0)] * (g[(r, 0)] - dot[s as usize]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let (n, d) = (self.nodes[*x].value.nrows(), self.nodes[*x].value.ncols());
                self.accumulate(grads, *x, Mat::from_elem((n, d), g[(0, 0)]));
            }
            Op::MeanAll(x) => {
                let (n, d) = (self.nodes[*x].value.nrows(), self.nodes[*x].value.ncols());
                let k = g[(0, 0)] / (n * d).max(1) as f64;
                self.accumulate(grads, *x, Mat::from_elem((n, d), k));
            }
            Op::SumCols(x) => {
                let (n, d) = (self.nodes[*x].value.nrows(), self.nodes[*x].value.ncols());
                let mut gx = Mat::zeros((n, d));
                for r in 0..n {
                    for c in 0..d {
                        gx[(r, c)] = g[(r, 0)];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MseMean(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let k = 2.0 * g[(0, 0)] / av.nrows() as f64;
                self.accumulate(grads, *a, (av - bv) * k);
                self.accumulate(grads, *b, (bv - av) * k);
            }
            Op::BceWithLogitsMean(x, y) => {
                let xv = &self.nodes[*x].value;
                let yv = &self.nodes[*y].value;
                let n = xv.nrows() as f64;
                let k = g[(0, 0)] / n;
                let gx = ndarray::Zip::from(xv).and(yv).map_collect(|&xi, &yi| k * (sigmoid(xi) - yi));
                self.accumulate(grads, *x, gx);
                // Targets are constants in practice; rule kept for completeness.
                let gy = xv.mapv(|xi| -k * xi);
                self.accumulate(grads, *y, gy);
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

fn row_major_sum(m: &Mat) -> f64 {
    let mut acc = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            acc += m[(r, c)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::{check_gradient, GradCheck};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
        Mat::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sum_of_squares_gradient_is_analytic() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0], [2.0], [3.0]], true);
        let sq = tape.mul(x, x);
        let out = tape.sum_all(sq);
        let (grads, detached) = tape.grad_of(out, &[x]).unwrap();
        assert!(detached.is_empty());
        assert_eq!(grads[0], array![[2.0], [4.0], [6.0]]);
    }

    #[test]
    fn unused_param_gets_zero_grad_and_report() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]], true);
        let p = tape.leaf(array![[5.0]], true);
        let out = tape.mul(x, x);
        let (grads, detached) = tape.grad_of(out, &[x, p]).unwrap();
        assert_eq!(grads[1], array![[0.0]]);
        assert_eq!(detached, vec![1]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]], true);
        assert!(matches!(
            tape.grad_of(x, &[x]),
            Err(TapeError::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn segment_mean_matches_hand_value() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0], [3.0]], true);
        let out = tape.segment_reduce(x, &[0, 0], 1, SegmentMode::Mean);
        assert_eq!(tape.value(out), &array![[2.0]]);
    }

    #[test]
    fn empty_segment_yields_zero_row() {
        for mode in [
            SegmentMode::Sum,
            SegmentMode::Mean,
            SegmentMode::Max,
            SegmentMode::Min,
            SegmentMode::Std,
        ] {
            let mut tape = Tape::new();
            let x = tape.leaf(array![[1.5], [2.5]], true);
            let out = tape.segment_reduce(x, &[0, 0], 2, mode);
            assert_eq!(tape.value(out).row(1).to_vec(), vec![0.0], "{mode:?}");
        }
    }

    #[test]
    fn std_of_single_element_segment_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[7.25]], true);
        let out = tape.segment_reduce(x, &[0], 1, SegmentMode::Std);
        assert_eq!(tape.scalar_value(out), 0.0);
        // And its gradient is exactly zero (std stays 0 under perturbation).
        let s = tape.sum_all(out);
        let (grads, _) = tape.grad_of(s, &[x]).unwrap();
        assert_eq!(grads[0], array![[0.0]]);
    }

    #[test]
    fn softmax_uniform_for_equal_scores() {
        let mut tape = Tape::new();
        let s = tape.leaf(Mat::from_elem((4, 1), 3.7), true);
        let out = tape.segment_softmax(s, &[0, 0, 0, 0], 1);
        for r in 0..4 {
            assert!((tape.value(out)[(r, 0)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_edge_segment_is_one() {
        let mut tape = Tape::new();
        let s = tape.leaf(array![[-2.0]], true);
        let out = tape.segment_softmax(s, &[0], 1);
        assert_eq!(tape.value(out)[(0, 0)], 1.0);
    }

    #[test]
    fn softmax_is_stable_for_huge_scores() {
        let mut tape = Tape::new();
        let s = tape.leaf(array![[1000.0], [1000.0]], true);
        let out = tape.segment_softmax(s, &[0, 0], 1);
        assert_eq!(tape.value(out)[(0, 0)], 0.5);
        assert_eq!(tape.value(out)[(1, 0)], 0.5);
    }

    #[test]
    fn softmax_segments_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = vec![0u32, 1, 0, 2, 1, 0, 2];
        let mut tape = Tape::new();
        let s = tape.leaf(rand_mat(&mut rng, ids.len(), 1), true);
        let out = tape.segment_softmax(s, &ids, 3);
        let mut sums = [0.0f64; 3];
        for (r, &s) in ids.iter().enumerate() {
            sums[s as usize] += tape.value(out)[(r, 0)];
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    /// Every backward rule vs central finite differences on random inputs.
    #[test]
    fn composite_ops_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand_mat(&mut rng, 5, 3);
        let w0 = rand_mat(&mut rng, 3, 4);
        let b0 = rand_mat(&mut rng, 1, 4);
        let ids = vec![0u32, 1, 1, 0, 2];

        let f = |inputs: &[Mat]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf(inputs[0].clone(), true);
            let w = tape.leaf(inputs[1].clone(), true);
            let b = tape.leaf(inputs[2].clone(), true);
            let h = tape.matmul(x, w);
            let h = tape.add_row(h, b);
            let h = tape.leaky_relu(h, 0.2);
            let a = tape.slice_cols(h, 0, 2);
            let bpart = tape.slice_cols(h, 2, 4);
            let cat = tape.concat_cols(&[a, bpart]);
            let t = tape.tanh(cat);
            let sg = tape.sigmoid(t);
            let sn = tape.sin(sg);
            let cs = tape.cos(sn);
            let sum = tape.segment_reduce(cs, &ids, 3, SegmentMode::Sum);
            let mn = tape.segment_reduce(cs, &ids, 3, SegmentMode::Mean);
            let mx = tape.segment_reduce(cs, &ids, 3, SegmentMode::Max);
            let mi = tape.segment_reduce(cs, &ids, 3, SegmentMode::Min);
            let st = tape.segment_reduce(cs, &ids, 3, SegmentMode::Std);
            let both = tape.concat_cols(&[sum, mn, mx, mi, st]);
            let g = tape.gather(both, &[2, 0, 1, 2]);
            let sc = tape.sum_cols(g);
            let sm = tape.segment_softmax(sc, &[0, 0, 1, 1], 2);
            let weighted = tape.mul_col(g, sm);
            let pos = tape.relu(weighted);
            let shifted = tape.add_scalar(pos, 1.0);
            let rooted = tape.sqrt(shifted);
            tape.scalar_value(tape.mean_all(rooted))
        };

        let report = check_gradient(
            f,
            &[x0, w0, b0],
            &|inputs| {
                let mut tape = Tape::new();
                let x = tape.leaf(inputs[0].clone(), true);
                let w = tape.leaf(inputs[1].clone(), true);
                let b = tape.leaf(inputs[2].clone(), true);
                let h = tape.matmul(x, w);
                let h = tape.add_row(h, b);
                let h = tape.leaky_relu(h, 0.2);
                let a = tape.slice_cols(h, 0, 2);
                let bpart = tape.slice_cols(h, 2, 4);
                let cat = tape.concat_cols(&[a, bpart]);
                let t = tape.tanh(cat);
                let sg = tape.sigmoid(t);
                let sn = tape.sin(sg);
                let cs = tape.cos(sn);
                let sum = tape.segment_reduce(cs, &ids, 3, SegmentMode::Sum);
                let mn = tape.segment_reduce(cs, &ids, 3, SegmentMode::Mean);
                let mx = tape.segment_reduce(cs, &ids, 3, SegmentMode::Max);
                let mi = tape.segment_reduce(cs, &ids, 3, SegmentMode::Min);
                let st = tape.segment_reduce(cs, &ids, 3, SegmentMode::Std);
                let both = tape.concat_cols(&[sum, mn, mx, mi, st]);
                let g = tape.gather(both, &[2, 0, 1, 2]);
                let sc = tape.sum_cols(g);
                let sm = tape.segment_softmax(sc, &[0, 0, 1, 1], 2);
                let weighted = tape.mul_col(g, sm);
                let pos = tape.relu(weighted);
                let shifted = tape.add_scalar(pos, 1.0);
                let rooted = tape.sqrt(shifted);
                let out = tape.mean_all(rooted);
                let leaves = [x, w, b];
                let (grads, _) = tape.grad_of(out, &leaves).unwrap();
                grads
            },
            GradCheck::default(),
        );
        assert!(report.max_rel_error < 1e-4, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn loss_ops_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pred = rand_mat(&mut rng, 6, 2);
        let target = rand_mat(&mut rng, 6, 2);
        let logits = rand_mat(&mut rng, 6, 1);
        let labels = Mat::from_shape_fn((6, 1), |_| if rng.random_range(0.0..1.0) > 0.5 { 1.0 } else { 0.0 });

        let t = target.clone();
        let l = labels.clone();
        let forward = move |inputs: &[Mat]| -> f64 {
            let mut tape = Tape::new();
            let p = tape.leaf(inputs[0].clone(), true);
            let tgt = tape.constant(t.clone());
            let mse = tape.mse_mean(p, tgt);
            let lg = tape.leaf(inputs[1].clone(), true);
            let lab = tape.constant(l.clone());
            let bce = tape.bce_with_logits_mean(lg, lab);
            let total = tape.add(mse, bce);
            tape.scalar_value(total)
        };
        let t2 = target.clone();
        let l2 = labels.clone();
        let report = check_gradient(
            forward,
            &[pred, logits],
            &move |inputs| {
                let mut tape = Tape::new();
                let p = tape.leaf(inputs[0].clone(), true);
                let tgt = tape.constant(t2.clone());
                let mse = tape.mse_mean(p, tgt);
                let lg = tape.leaf(inputs[1].clone(), true);
                let lab = tape.constant(l2.clone());
                let bce = tape.bce_with_logits_mean(lg, lab);
                let total = tape.add(mse, bce);
                let leaves = [p, lg];
                let (grads, _) = tape.grad_of(total, &leaves).unwrap();
                grads
            },
            GradCheck::default(),
        );
        assert!(report.max_rel_error < 1e-4, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn forward_and_grad_are_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x0 = rand_mat(&mut rng, 8, 4);
            let w0 = rand_mat(&mut rng, 4, 4);
            let mut tape = Tape::new();
            let x = tape.leaf(x0, true);
            let w = tape.leaf(w0, true);
            let h = tape.matmul(x, w);
            let h = tape.tanh(h);
            let out = tape.mean_all(h);
            let (grads, _) = tape.grad_of(out, &[x, w]).unwrap();
            (tape.scalar_value(out), grads)
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a, b);
        }
    }
}

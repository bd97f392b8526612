//! Reverse-mode differentiation over small dense tensors.
//!
//! A `Tape` records operations eagerly: every call computes the forward
//! value immediately and appends a node. `backward` walks the node list in
//! reverse, accumulating gradients. Nodes can only reference earlier nodes,
//! so reverse id order is a valid topological order.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise activation for fully connected layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Elu,
    Sigmoid,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation input.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Softplus => sigmoid(x),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "tanh" => Activation::Tanh,
            "elu" => Activation::Elu,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Dropout / evaluation switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    /// Position in the tape's node list; indexes the vector returned by
    /// [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatVec { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    Activate { x: NodeId, kind: Activation },
    Concat { parts: Vec<NodeId> },
    Conv1d { x: NodeId, kernels: NodeId, bias: NodeId, stride: usize },
    Dropout { x: NodeId, mask: Vec<f64> },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Ln { x: NodeId },
    Mean { x: NodeId },
    Transpose { x: NodeId, rows: usize, cols: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Eager computation tape.
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

    /// Insert an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Matrix-vector product. `w` is `[out, in]`; `x` is flattened to `in`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let wt = self.value(w);
        let xt = self.value(x);
        if wt.shape().len() != 2 {
            return Err(Error::shape(
                "matvec",
                format!("weight must be 2-d, got {:?}", wt.shape()),
            ));
        }
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        if cols != xt.len() {
            return Err(Error::shape(
                "matvec",
                format!("weight {:?} incompatible with input of length {}", wt.shape(), xt.len()),
            ));
        }
        let mut out = vec![0.0; rows];
        let wd = wt.data();
        let xd = xt.data();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wd[r * cols..(r + 1) * cols];
            *o = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { w, x }))
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: NodeId, b: NodeId) -> Result<(Vec<f64>, Vec<usize>)> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.shape() != bt.shape() {
            return Err(Error::shape(
                op_name,
                format!("operands {:?} vs {:?}", at.shape(), bt.shape()),
            ));
        }
        Ok((Vec::with_capacity(at.len()), at.shape().to_vec()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (mut out, shape) = self.binary_same_shape("add", a, b)?;
        out.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y),
        );
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (mut out, shape) = self.binary_same_shape("sub", a, b)?;
        out.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x - y),
        );
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (mut out, shape) = self.binary_same_shape("mul", a, b)?;
        out.extend(
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y),
        );
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())
            .expect("scale preserves shape");
        self.push(out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + c).collect())
            .expect("add_scalar preserves shape");
        self.push(out, Op::AddScalar { x })
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn activate(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| kind.apply(v)).collect(),
        )
        .expect("activation preserves shape");
        self.push(out, Op::Activate { x, kind })
    }

    /// phi(w . x + b): one dense layer.
    pub fn fully_connected(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        activation: Activation,
    ) -> Result<NodeId> {
        let bt = self.value(b);
        let wt = self.value(w);
        if wt.shape().len() != 2 || bt.shape().len() != 1 || bt.len() != wt.shape()[0] {
            return Err(Error::shape(
                "fully_connected",
                format!(
                    "weight {:?} and bias {:?} must be [out, in] and [out]",
                    wt.shape(),
                    bt.shape()
                ),
            ));
        }
        let wx = self.matvec(w, x)?;
        let z = self.add(wx, b)?;
        Ok(self.activate(z, activation))
    }

    /// Flatten parts (in order) into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no operands"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat { parts: parts.to_vec() }))
    }

    /// Valid (unpadded) 1-d cross-correlation.
    ///
    /// `x`: `[channels_in, length]`, `kernels`: `[channels_out, channels_in, width]`,
    /// `bias`: `[channels_out]`. Output `[channels_out, length_out]` with
    /// `length_out = (length - width) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let xt = self.value(x);
        let kt = self.value(kernels);
        let bt = self.value(bias);
        if xt.shape().len() != 2 || kt.shape().len() != 3 || bt.shape().len() != 1 {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "want x [c_in, len], kernels [c_out, c_in, w], bias [c_out]; got {:?}, {:?}, {:?}",
                    xt.shape(),
                    kt.shape(),
                    bt.shape()
                ),
            ));
        }
        let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
        let (c_out, kc_in, width) = (kt.shape()[0], kt.shape()[1], kt.shape()[2]);
        if kc_in != c_in || bt.len() != c_out {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "kernels {:?} / bias {:?} inconsistent with input {:?}",
                    kt.shape(),
                    bt.shape(),
                    xt.shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d", "stride must be positive"));
        }
        if width > len {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel width {width} exceeds input length {len}"),
            ));
        }
        let len_out = (len - width) / stride + 1;
        if len_out < 1 {
            return Err(Error::invalid(
                "conv1d",
                format!("output length {len_out} < 1 for length {len}, width {width}, stride {stride}"),
            ));
        }
        let xd = xt.data();
        let kd = kt.data();
        let bd = bt.data();
        let mut out = vec![0.0; c_out * len_out];
        for co in 0..c_out {
            for t in 0..len_out {
                let mut acc = bd[co];
                let t0 = t * stride;
                for ci in 0..c_in {
                    let xrow = &xd[ci * len + t0..ci * len + t0 + width];
                    let krow = &kd[(co * c_in + ci) * width..(co * c_in + ci + 1) * width];
                    acc += xrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                }
                out[co * len_out + t] = acc;
            }
        }
        Ok(self.push(
            Tensor::new(vec![c_out, len_out], out)?,
            Op::Conv1d { x, kernels, bias, stride },
        ))
    }

    /// Inverted dropout. Train mode zeroes entries with probability `rate`
    /// and scales survivors by 1/(1-rate); eval mode returns `x` unchanged.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate must be in [0, 1), got {rate}"),
            ));
        }
        if mode == Mode::Eval {
            return Ok(x);
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with a caller-supplied mask (already scaled). Used by the
    /// gradient checker, where the mask must be held fixed across evaluations.
    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return Err(Error::shape(
                "dropout",
                format!("mask length {} vs input length {}", mask.len(), t.len()),
            ));
        }
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Clamp to [lo, hi]. The gradient passes through inside the range and
    /// is zero where the value was clipped.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let t = self.value(x);
        let out = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.clamp(lo, hi)).collect(),
        )
        .expect("clamp preserves shape");
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Natural log, elementwise. All entries must be positive.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("ln", "non-positive entry"));
        }
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.ln()).collect())?;
        Ok(self.push(out, Op::Ln { x }))
    }

    /// Arithmetic mean of all entries; returns a scalar node.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x })
    }

    /// Reinterpret a length rows*cols buffer as [rows, cols] and transpose
    /// to [cols, rows].
    pub fn transpose(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.len() != rows * cols {
            return Err(Error::shape(
                "transpose",
                format!("length {} != {rows}x{cols}", t.len()),
            ));
        }
        let d = t.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = d[r * cols + c];
            }
        }
        Ok(self.push(Tensor::new(vec![cols, rows], out)?, Op::Transpose { x, rows, cols }))
    }

    /// Reverse sweep from a scalar root. Returns one gradient tensor per
    /// node, in node order.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Tensor>> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        grads[root.0].data_mut()[0] = 1.0;

        for idx in (0..=root.0).rev() {
            if grads[idx].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            let gd = g.data();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    let wt = &self.nodes[w.0].value;
                    let xt = &self.nodes[x.0].value;
                    let cols = wt.shape()[1];
                    {
                        let gw = grads[w.0].data_mut();
                        for (r, &gr) in gd.iter().enumerate() {
                            for (i, &xi) in xt.data().iter().enumerate() {
                                gw[r * cols + i] += gr * xi;
                            }
                        }
                    }
                    {
                        let gx = grads[x.0].data_mut();
                        for (r, &gr) in gd.iter().enumerate() {
                            let row = &wt.data()[r * cols..(r + 1) * cols];
                            for (i, &wi) in row.iter().enumerate() {
                                gx[i] += gr * wi;
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (acc, &gi) in grads[a.0].data_mut().iter_mut().zip(gd) {
                        *acc += gi;
                    }
                    for (acc, &gi) in grads[b.0].data_mut().iter_mut().zip(gd) {
                        *acc += gi;
                    }
                }
                Op::Sub { a, b } => {
                    for (acc, &gi) in grads[a.0].data_mut().iter_mut().zip(gd) {
                        *acc += gi;
                    }
                    for (acc, &gi) in grads[b.0].data_mut().iter_mut().zip(gd) {
                        *acc -= gi;
                    }
                }
                Op::Mul { a, b } => {
                    let bt = self.nodes[b.0].value.clone();
                    let at = self.nodes[a.0].value.clone();
                    for ((acc, &gi), &bv) in grads[a.0].data_mut().iter_mut().zip(gd).zip(bt.data()) {
                        *acc += gi * bv;
                    }
                    for ((acc, &gi), &av) in grads[b.0].data_mut().iter_mut().zip(gd).zip(at.data()) {
                        *acc += gi * av;
                    }
                }
                Op::Scale { x, c } => {
                    for (acc, &gi) in grads[x.0].data_mut().iter_mut().zip(gd) {
                        *acc += gi * c;
                    }
                }
                Op::AddScalar { x } => {
                    for (acc, &gi) in grads[x.0].data_mut().iter_mut().zip(gd) {
                        *acc += gi;
                    }
                }
                Op::Activate { x, kind } => {
                    let xt = self.nodes[x.0].value.clone();
                    for ((acc, &gi), &xv) in grads[x.0].data_mut().iter_mut().zip(gd).zip(xt.data()) {
                        *acc += gi * kind.derivative(xv);
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        for (acc, &gi) in grads[p.0].data_mut().iter_mut().zip(&gd[offset..offset + n]) {
                            *acc += gi;
                        }
                        offset += n;
                    }
                }
                Op::Conv1d { x, kernels, bias, stride } => {
                    let xt = self.nodes[x.0].value.clone();
                    let kt = self.nodes[kernels.0].value.clone();
                    let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
                    let (c_out, _, width) = (kt.shape()[0], kt.shape()[1], kt.shape()[2]);
                    let len_out = (len - width) / stride + 1;
                    {
                        let gb = grads[bias.0].data_mut();
                        for co in 0..c_out {
                            gb[co] += gd[co * len_out..(co + 1) * len_out].iter().sum::<f64>();
                        }
                    }
                    {
                        let gk = grads[kernels.0].data_mut();
                        for co in 0..c_out {
                            for t in 0..len_out {
                                let go = gd[co * len_out + t];
                                if go == 0.0 {
                                    continue;
                                }
                                let t0 = t * stride;
                                for ci in 0..c_in {
                                    for w in 0..width {
                                        gk[(co * c_in + ci) * width + w] += go * xt.data()[ci * len + t0 + w];
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gx = grads[x.0].data_mut();
                        for co in 0..c_out {
                            for t in 0..len_out {
                                let go = gd[co * len_out + t];
                                if go == 0.0 {
                                    continue;
                                }
                                let t0 = t * stride;
                                for ci in 0..c_in {
                                    for w in 0..width {
                                        gx[ci * len + t0 + w] += go * kt.data()[(co * c_in + ci) * width + w];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    for ((acc, &gi), &m) in grads[x.0].data_mut().iter_mut().zip(gd).zip(mask) {
                        *acc += gi * m;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xt = self.nodes[x.0].value.clone();
                    for ((acc, &gi), &xv) in grads[x.0].data_mut().iter_mut().zip(gd).zip(xt.data()) {
                        if xv >= *lo && xv <= *hi {
                            *acc += gi;
                        }
                    }
                }
                Op::Ln { x } => {
                    let xt = self.nodes[x.0].value.clone();
                    for ((acc, &gi), &xv) in grads[x.0].data_mut().iter_mut().zip(gd).zip(xt.data()) {
                        *acc += gi / xv;
                    }
                }
                Op::Mean { x } => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let gi = gd[0] / n;
                    for acc in grads[x.0].data_mut() {
                        *acc += gi;
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let gx = grads[x.0].data_mut();
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[r * cols + c] += gd[c * rows + r];
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tape_with(values: &[Tensor]) -> (Tape, Vec<NodeId>) {
        let mut tape = Tape::new();
        let ids = values.iter().map(|t| tape.leaf(t.clone())).collect();
        (tape, ids)
    }

    #[test]
    fn fully_connected_sigmoid_at_zero_is_half() {
        let (mut tape, ids) = tape_with(&[
            Tensor::vector(vec![0.0]),
            Tensor::matrix(&[vec![0.0]]).unwrap(),
            Tensor::vector(vec![0.0]),
        ]);
        let y = tape
            .fully_connected(ids[0], ids[1], ids[2], Activation::Sigmoid)
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn fully_connected_identity_map() {
        let (mut tape, ids) = tape_with(&[
            Tensor::vector(vec![1.0, 2.0]),
            Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
        ]);
        let y = tape
            .fully_connected(ids[0], ids[1], ids[2], Activation::Identity)
            .unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn elu_negative_branch() {
        let (mut tape, ids) = tape_with(&[
            Tensor::vector(vec![-1.0]),
            Tensor::matrix(&[vec![1.0]]).unwrap(),
            Tensor::vector(vec![0.0]),
        ]);
        let y = tape
            .fully_connected(ids[0], ids[1], ids[2], Activation::Elu)
            .unwrap();
        let expected = (-1.0f64).exp() - 1.0; // ~ -0.632121
        assert!((tape.value(y).data()[0] - expected).abs() < 1e-12);
        assert!((expected + 0.632121).abs() < 1e-6);
    }

    #[test]
    fn fully_connected_shape_mismatch_names_operands() {
        let (mut tape, ids) = tape_with(&[
            Tensor::vector(vec![1.0, 2.0, 3.0]),
            Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
        ]);
        let err = tape
            .fully_connected(ids[0], ids[1], ids[2], Activation::Identity)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matvec") || msg.contains("fully_connected"), "{msg}");
    }

    #[test]
    fn conv1d_unit_kernel_is_identity() {
        let (mut tape, ids) = tape_with(&[
            Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
            Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(),
            Tensor::vector(vec![0.0]),
        ]);
        let y = tape.conv1d(ids[0], ids[1], ids[2], 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv1d_stride_two_sliding_sums() {
        let (mut tape, ids) = tape_with(&[
            Tensor::new(vec![1, 4], vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
            Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0]),
        ]);
        let y = tape.conv1d(ids[0], ids[1], ids[2], 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 2.0]);
    }

    #[test]
    fn conv1d_zero_kernels_pass_bias() {
        let (mut tape, ids) = tape_with(&[
            Tensor::new(vec![2, 5], vec![3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0, -5.0, 3.0]).unwrap(),
            Tensor::zeros(&[1, 2, 3]),
            Tensor::vector(vec![7.5]),
        ]);
        let y = tape.conv1d(ids[0], ids[1], ids[2], 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 7.5));
    }

    #[test]
    fn conv1d_rejects_too_wide_kernel() {
        let (mut tape, ids) = tape_with(&[
            Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
            Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0]),
        ]);
        assert!(tape.conv1d(ids[0], ids[1], ids[2], 1).is_err());
    }

    #[test]
    fn dropout_eval_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let (mut tape, ids) = tape_with(std::slice::from_ref(&x));
        let y = tape.dropout(ids[0], 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, ids[0]);
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut tape, ids) = tape_with(&[Tensor::vector(vec![1.0, 2.0])]);
        let y = tape.dropout(ids[0], 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut tape, ids) = tape_with(&[Tensor::vector(vec![1.0])]);
        assert!(tape.dropout(ids[0], 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_train_mode_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let (mut tape, ids) = tape_with(&[Tensor::vector(vec![1.0; n])]);
        let y = tape.dropout(ids[0], 0.5, Mode::Train, &mut rng).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mean_and_ln_backward() {
        // d/dx mean(ln x) = 1/(n x_i)
        let x = Tensor::vector(vec![1.0, 2.0, 4.0]);
        let (mut tape, ids) = tape_with(std::slice::from_ref(&x));
        let l = tape.ln(ids[0]).unwrap();
        let m = tape.mean(l);
        let grads = tape.backward(m).unwrap();
        let g = grads[0].data();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!((gi - 1.0 / (3.0 * xi)).abs() < 1e-14);
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let (mut tape, ids) = tape_with(&[Tensor::vector(vec![1.0; 64])]);
            let y = tape.dropout(ids[0], 0.3, Mode::Train, &mut rng).unwrap();
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}

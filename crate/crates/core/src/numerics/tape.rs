use super::{NumericsError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Neg,
}

impl UnaryKind {
    pub const ALL: [UnaryKind; 5] = [
        UnaryKind::Sigmoid,
        UnaryKind::Tanh,
        UnaryKind::Exp,
        UnaryKind::Log,
        UnaryKind::Neg,
    ];

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Neg => "neg",
        }
    }
}

/// How the second operand of a binary elementwise op lines up with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// right operand has one element
    RightScalar,
    /// left operand has one element
    LeftScalar,
    /// left is `[m, n]`, right is `[n]`
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var, bc: Broadcast },
    Mul { a: Var, b: Var, bc: Broadcast },
    Concat { parts: Vec<Var> },
    Slice { x: Var, offset: usize, len: usize },
    Reshape { x: Var },
    Gather { table: Var, rows: Vec<usize>, width: usize },
    Pick { x: Var, indices: Vec<usize> },
    ScatterAdd { x: Var, indices: Vec<usize> },
    Softmax { x: Var },
    Unary { x: Var, kind: UnaryKind },
    Sum { x: Var },
    Scale { x: Var, factor: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Nodes are stored in creation
/// order, so every node's inputs precede it.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the tape's trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_node.get(var.0).and_then(Option::as_ref)
    }

    /// Moves the gradient for `var` out of the map.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.by_node.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(NumericsError::NonFinite { op: name, index });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// Matrix product. Either side may be rank 1: `[m,k]·[k]` yields `[m]` and
    /// `[k]·[k,n]` yields `[n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n, vec![m, n]),
            (&[m, k], &[k2]) if k == k2 => (m, k, 1, vec![m]),
            (&[k], &[k2, n]) if k == k2 => (1, k, n, vec![n]),
            _ => {
                return Err(NumericsError::Shape {
                    op: "matmul",
                    left: sa,
                    right: sb,
                })
            }
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("matmul", value, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if sa == sb {
            Ok((Broadcast::Same, sa.to_vec()))
        } else if nb == 1 {
            Ok((Broadcast::RightScalar, sa.to_vec()))
        } else if na == 1 {
            Ok((Broadcast::LeftScalar, sb.to_vec()))
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            Ok((Broadcast::Row, sa.to_vec()))
        } else {
            Err(NumericsError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Broadcast, Tensor)> {
        let (bc, shape) = self.broadcast(name, a, b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match bc {
            Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::RightScalar => ad.iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::LeftScalar => bd.iter().map(|&y| f(ad[0], y)).collect(),
            Broadcast::Row => {
                let n = bd.len();
                ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % n])).collect()
            }
        };
        Ok((bc, Tensor::new(shape, out)?))
    }

    /// Elementwise sum with scalar or row broadcasting of either operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, value) = self.elementwise("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add { a, b, bc }, &[a, b])
    }

    /// Elementwise product with scalar or row broadcasting of either operand.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, value) = self.elementwise("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul { a, b, bc }, &[a, b])
    }

    /// `a - b`, composed from `neg` and `add`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.unary(b, UnaryKind::Neg)?;
        self.add(a, nb)
    }

    /// Concatenation along the leading axis. Rank-1 inputs give a rank-1 output.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Dimension {
                op: "concat",
                message: "no inputs".into(),
            });
        };
        let trailing = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != trailing[..] {
                return Err(NumericsError::Shape {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&trailing);
        let value = Tensor::new(shape, data)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        )
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(NumericsError::Dimension {
                op: "slice",
                message: format!("range {start}..{} out of bounds for {shape:?}", start + len),
            });
        }
        let row: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "slice",
            value,
            Op::Slice {
                x,
                offset: start * row,
                len: len * row,
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    /// Gathers rows of a `[rows, width]` table into `[ids.len(), width]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let value = self.gather_rows(table, ids)?;
        let width = value.len() / ids.len().max(1);
        self.push(
            "embedding",
            value,
            Op::Gather {
                table,
                rows: ids.to_vec(),
                width,
            },
            &[table],
        )
    }

    /// A single embedding row as a rank-1 `[width]` tensor.
    pub fn embedding_row(&mut self, table: Var, id: usize) -> Result<Var> {
        let value = self.gather_rows(table, &[id])?;
        let width = value.len();
        let value = value.reshaped(vec![width])?;
        self.push(
            "embedding",
            value,
            Op::Gather {
                table,
                rows: vec![id],
                width,
            },
            &[table],
        )
    }

    fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Tensor> {
        let shape = self.shape(table);
        let &[rows, width] = shape else {
            return Err(NumericsError::Dimension {
                op: "embedding",
                message: format!("table must be rank 2, got {shape:?}"),
            });
        };
        if ids.is_empty() {
            return Err(NumericsError::Dimension {
                op: "embedding",
                message: "no ids".into(),
            });
        }
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::Dimension {
                    op: "embedding",
                    message: format!("row {id} out of range for {rows} rows"),
                });
            }
            data.extend_from_slice(&td[id * width..(id + 1) * width]);
        }
        Tensor::new(vec![ids.len(), width], data)
    }

    fn rank1_indices(&self, op: &'static str, x: Var, indices: &[usize], bound: usize) -> Result<()> {
        let shape = self.shape(x);
        if shape.len() != 1 {
            return Err(NumericsError::Dimension {
                op,
                message: format!("expected rank 1, got {shape:?}"),
            });
        }
        if indices.is_empty() {
            return Err(NumericsError::Dimension {
                op,
                message: "no indices".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= bound) {
            return Err(NumericsError::Dimension {
                op,
                message: format!("index {bad} out of range for length {bound}"),
            });
        }
        Ok(())
    }

    /// `out[k] = x[indices[k]]` for a rank-1 `x`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.rank1_indices("pick", x, indices, self.value(x).len())?;
        let xd = self.value(x).data();
        let value = Tensor::vector(&indices.iter().map(|&i| xd[i]).collect::<Vec<_>>());
        self.push(
            "pick",
            value,
            Op::Pick {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    /// Rank-1 output of length `size` with `out[indices[k]] += x[k]`.
    pub fn scatter_add(&mut self, x: Var, indices: &[usize], size: usize) -> Result<Var> {
        self.rank1_indices("scatter_add", x, indices, size)?;
        if indices.len() != self.value(x).len() {
            return Err(NumericsError::Shape {
                op: "scatter_add",
                left: self.shape(x).to_vec(),
                right: vec![indices.len()],
            });
        }
        let mut out = vec![0.0; size];
        for (&i, &v) in indices.iter().zip(self.value(x).data()) {
            out[i] += v;
        }
        let value = Tensor::new(vec![size], out)?;
        self.push(
            "scatter_add",
            value,
            Op::ScatterAdd {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    /// Max-subtracted softmax of a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(NumericsError::Dimension {
                op: "softmax",
                message: format!("expected rank 1, got {shape:?}"),
            });
        }
        let xd = self.value(x).data();
        let max = xd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = xd.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = out.iter().sum();
        for o in &mut out {
            *o /= total;
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax { x }, &[x])
    }

    pub fn unary(&mut self, x: Var, kind: UnaryKind) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<f64> = match kind {
            UnaryKind::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
            UnaryKind::Exp => xv.data().iter().map(|&v| v.exp()).collect(),
            UnaryKind::Neg => xv.data().iter().map(|&v| -v).collect(),
            UnaryKind::Log => {
                if let Some((index, &value)) =
                    xv.data().iter().enumerate().find(|(_, &v)| v <= 0.0 || v.is_nan())
                {
                    return Err(NumericsError::Domain {
                        op: "log",
                        index,
                        value,
                    });
                }
                xv.data().iter().map(|&v| v.ln()).collect()
            }
        };
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(kind.name(), value, Op::Unary { x, kind }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Log)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Neg)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("scale", value, Op::Scale { x, factor }, &[x])
    }

    /// `x / sum(x)`, composed as `x * exp(-log(sum(x)))`. Fails with a domain
    /// error when the sum is not positive.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let total = self.sum(x)?;
        let log_total = self.log(total)?;
        let neg = self.neg(log_total)?;
        let inv = self.exp(neg)?;
        self.mul(x, inv)
    }

    /// Reverse pass from a one-element `loss`. Every trainable leaf gets a
    /// gradient of its own shape (zeros when the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(NumericsError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves[i] = Some(Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_node: leaves })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                if self.requires_grad(a) {
                    let da = slot(grads, a, m * k);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if self.requires_grad(b) {
                    let db = slot(grads, b, k * n);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += aip * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add { a, b, bc } => {
                let (na, nb) = (self.value(a).len(), self.value(b).len());
                if self.requires_grad(a) {
                    let da = slot(grads, a, na);
                    match bc {
                        Broadcast::LeftScalar => da[0] += g.iter().sum::<f64>(),
                        _ => add_into(da, g),
                    }
                }
                if self.requires_grad(b) {
                    let db = slot(grads, b, nb);
                    match bc {
                        Broadcast::Same | Broadcast::LeftScalar => add_into(db, g),
                        Broadcast::RightScalar => db[0] += g.iter().sum::<f64>(),
                        Broadcast::Row => {
                            for (i, &gv) in g.iter().enumerate() {
                                db[i % nb] += gv;
                            }
                        }
                    }
                }
            }
            &Op::Mul { a, b, bc } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                let (na, nb) = (ad.len(), bd.len());
                if self.requires_grad(a) {
                    let da = slot(grads, a, na);
                    match bc {
                        Broadcast::Same => {
                            for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(bd) {
                                *d += gv * bv;
                            }
                        }
                        Broadcast::RightScalar => {
                            for (d, &gv) in da.iter_mut().zip(g) {
                                *d += gv * bd[0];
                            }
                        }
                        Broadcast::LeftScalar => {
                            da[0] += g.iter().zip(bd).map(|(x, y)| x * y).sum::<f64>();
                        }
                        Broadcast::Row => {
                            for (i, (d, &gv)) in da.iter_mut().zip(g).enumerate() {
                                *d += gv * bd[i % nb];
                            }
                        }
                    }
                }
                if self.requires_grad(b) {
                    let db = slot(grads, b, nb);
                    match bc {
                        Broadcast::Same => {
                            for ((d, &gv), &av) in db.iter_mut().zip(g).zip(ad) {
                                *d += gv * av;
                            }
                        }
                        Broadcast::RightScalar => {
                            db[0] += g.iter().zip(ad).map(|(x, y)| x * y).sum::<f64>();
                        }
                        Broadcast::LeftScalar => {
                            for (d, &gv) in db.iter_mut().zip(g) {
                                *d += gv * ad[0];
                            }
                        }
                        Broadcast::Row => {
                            for (i, (&gv, &av)) in g.iter().zip(ad).enumerate() {
                                db[i % nb] += gv * av;
                            }
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.requires_grad(p) {
                        add_into(slot(grads, p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            &Op::Slice { x, offset, len } => {
                let n = self.value(x).len();
                let dx = slot(grads, x, n);
                add_into(&mut dx[offset..offset + len], g);
            }
            &Op::Reshape { x } => {
                add_into(slot(grads, x, g.len()), g);
            }
            Op::Gather { table, rows, width } => {
                let n = self.value(*table).len();
                let dt = slot(grads, *table, n);
                for (r, &id) in rows.iter().enumerate() {
                    add_into(&mut dt[id * width..(id + 1) * width], &g[r * width..(r + 1) * width]);
                }
            }
            Op::Pick { x, indices } => {
                let dx = slot(grads, *x, self.value(*x).len());
                for (&i, &gv) in indices.iter().zip(g) {
                    dx[i] += gv;
                }
            }
            Op::ScatterAdd { x, indices } => {
                let dx = slot(grads, *x, indices.len());
                for (d, &i) in dx.iter_mut().zip(indices) {
                    *d += g[i];
                }
            }
            &Op::Softmax { x } => {
                let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                let dx = slot(grads, x, y.len());
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                    *d += yv * (gv - dot);
                }
            }
            &Op::Unary { x, kind } => {
                let xd = self.value(x).data();
                let dx = slot(grads, x, xd.len());
                for i in 0..xd.len() {
                    let local = match kind {
                        UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryKind::Tanh => 1.0 - y[i] * y[i],
                        UnaryKind::Exp => y[i],
                        UnaryKind::Log => 1.0 / xd[i],
                        UnaryKind::Neg => -1.0,
                    };
                    dx[i] += g[i] * local;
                }
            }
            &Op::Sum { x } => {
                let n = self.value(x).len();
                for d in slot(grads, x, n) {
                    *d += g[0];
                }
            }
            &Op::Scale { x, factor } => {
                let dx = slot(grads, x, g.len());
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

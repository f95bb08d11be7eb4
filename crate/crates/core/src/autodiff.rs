//! Minimal reverse-mode automatic differentiation over a flat tape.
//!
//! The op set is exactly what the convolutional encoder needs: 3x3 same-pad
//! convolution, dense layers, ReLU, 2x2 max pooling, global average pooling,
//! and scalar reductions. Each tape instance is single-threaded; distinct
//! tapes may run on different threads.

use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Gradient buffer, populated by optimizers/backward consumers.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3x3 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `id`; zero-filled if the node was never reached.
    pub fn wrt(&self, id: NodeId, len: usize) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; len],
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(value.data.iter().all(|v| v.is_finite()));
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    fn shape3(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        let s = &self.value(id).shape;
        if s.len() != 3 {
            return Err(Error::ShapeMismatch(format!("{what} expects a CxHxW input, got {s:?}")));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// 3x3 convolution, stride 1, zero same-padding.
    /// x: [C_in, H, W]; w: [C_out, C_in, 3, 3]; b: [C_out] -> [C_out, H, W].
    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (c_in, h, wd) = self.shape3(x, "conv3x3")?;
        let ws = &self.value(w).shape;
        if ws.len() != 4 || ws[1] != c_in || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "conv3x3 weight {ws:?} does not match input with {c_in} channels"
            )));
        }
        let c_out = ws[0];
        if self.value(b).shape != [c_out] {
            return Err(Error::ShapeMismatch(format!(
                "conv3x3 bias {:?} does not match {c_out} output channels",
                self.value(b).shape
            )));
        }

        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[w.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; c_out * h * wd];
        for oc in 0..c_out {
            for y in 0..h {
                for xc in 0..wd {
                    let mut acc = bv[oc];
                    for ic in 0..c_in {
                        for dy in 0..3usize {
                            let iy = y as isize + dy as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..3usize {
                                let ix = xc as isize + dx as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let wi = ((oc * c_in + ic) * 3 + dy) * 3 + dx;
                                let xi = (ic * h + iy as usize) * wd + ix as usize;
                                acc += wv[wi] * xv[xi];
                            }
                        }
                    }
                    out[(oc * h + y) * wd + xc] = acc;
                }
            }
        }
        let value = Tensor::from_vec(&[c_out, h, wd], out)?;
        Ok(self.push(Op::Conv3x3 { x, w, b }, value))
    }

    /// Dense layer: x [in], w [out, in], b [out] -> [out].
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let n_in = self.value(x).len();
        let ws = &self.value(w).shape;
        if ws.len() != 2 || ws[1] != n_in {
            return Err(Error::ShapeMismatch(format!(
                "dense weight {ws:?} does not match input of {n_in}"
            )));
        }
        let n_out = ws[0];
        if self.value(b).shape != [n_out] {
            return Err(Error::ShapeMismatch(format!(
                "dense bias {:?} does not match {n_out} outputs",
                self.value(b).shape
            )));
        }
        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[w.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let row = &wv[o * n_in..(o + 1) * n_in];
            out[o] = bv[o] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        let value = Tensor::from_vec(&[n_out], out)?;
        Ok(self.push(Op::Dense { x, w, b }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = Tensor {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|&v| v.max(0.0)).collect(),
            grad: None,
        };
        self.push(Op::Relu { x }, value)
    }

    /// 2x2 max pooling with stride 2; trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.shape3(x, "max_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::ShapeMismatch(format!(
                "max_pool2 needs at least 2x2 spatial extent, got {h}x{w}"
            )));
        }
        let xv = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xc in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = (ch * h + 2 * y + dy) * w + 2 * xc + dx;
                            if xv[i] > best {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (ch * oh + y) * ow + xc;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out)?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, value))
    }

    /// Mean over the spatial axes: [C, H, W] -> [C].
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.shape3(x, "global_avg_pool")?;
        let xv = &self.nodes[x.0].value.data;
        let hw = (h * w) as f64;
        let out: Vec<f64> = (0..c)
            .map(|ch| xv[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw)
            .collect();
        let value = Tensor::from_vec(&[c], out)?;
        Ok(self.push(Op::GlobalAvgPool { x }, value))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum { x }, Tensor::from_vec(&[1], vec![s]).unwrap())
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let m = self.value(x).data.iter().sum::<f64>() / n;
        self.push(Op::Mean { x }, Tensor::from_vec(&[1], vec![m]).unwrap())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::ShapeMismatch(format!(
                "add over shapes {:?} and {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data,
            grad: None,
        };
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = Tensor {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|v| v * c).collect(),
            grad: None,
        };
        self.push(Op::Scale { x, c }, value)
    }

    /// Reverse pass from a scalar root with seed gradient 1.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(self.value(root).shape.clone()));
        }
        self.backward_seeded(root, &[1.0])
    }

    /// Reverse pass seeding `seed` as dL/d(node). Consumes the tape: a second
    /// backward on the same tape is an error.
    pub fn backward_seeded(&mut self, node: NodeId, seed: &[f64]) -> Result<Gradients> {
        if self.spent {
            return Err(Error::BackwardTwice);
        }
        if seed.len() != self.value(node).len() {
            return Err(Error::ShapeMismatch(format!(
                "seed of {} values for node of {}",
                seed.len(),
                self.value(node).len()
            )));
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[node.0] = Some(seed.to_vec());

        for idx in (0..=node.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv3x3 { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (c_in, h, wd) = {
                        let s = &self.nodes[x.0].value.shape;
                        (s[0], s[1], s[2])
                    };
                    let c_out = self.nodes[w.0].value.shape[0];
                    let xv = &self.nodes[x.0].value.data;
                    let wv = &self.nodes[w.0].value.data;
                    let mut gx = take_or_zeros(&mut grads[x.0], c_in * h * wd);
                    let mut gw = take_or_zeros(&mut grads[w.0], c_out * c_in * 9);
                    let mut gb = take_or_zeros(&mut grads[b.0], c_out);
                    for oc in 0..c_out {
                        for y in 0..h {
                            for xc in 0..wd {
                                let go = g[(oc * h + y) * wd + xc];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[oc] += go;
                                for ic in 0..c_in {
                                    for dy in 0..3usize {
                                        let iy = y as isize + dy as isize - 1;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for dx in 0..3usize {
                                            let ix = xc as isize + dx as isize - 1;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            let wi = ((oc * c_in + ic) * 3 + dy) * 3 + dx;
                                            let xi = (ic * h + iy as usize) * wd + ix as usize;
                                            gw[wi] += go * xv[xi];
                                            gx[xi] += go * wv[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    grads[x.0] = Some(gx);
                    grads[w.0] = Some(gw);
                    grads[b.0] = Some(gb);
                }
                Op::Dense { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let n_in = self.nodes[x.0].value.len();
                    let n_out = self.nodes[b.0].value.len();
                    let xv = &self.nodes[x.0].value.data;
                    let wv = &self.nodes[w.0].value.data;
                    let mut gx = take_or_zeros(&mut grads[x.0], n_in);
                    let mut gw = take_or_zeros(&mut grads[w.0], n_out * n_in);
                    let mut gb = take_or_zeros(&mut grads[b.0], n_out);
                    for o in 0..n_out {
                        let go = g[o];
                        gb[o] += go;
                        for i in 0..n_in {
                            gw[o * n_in + i] += go * xv[i];
                            gx[i] += go * wv[o * n_in + i];
                        }
                    }
                    grads[x.0] = Some(gx);
                    grads[w.0] = Some(gw);
                    grads[b.0] = Some(gb);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let xv = &self.nodes[x.0].value.data;
                    let mut gx = take_or_zeros(&mut grads[x.0], xv.len());
                    for (i, (&gv, &v)) in g.iter().zip(xv).enumerate() {
                        if v > 0.0 {
                            gx[i] += gv;
                        }
                    }
                    grads[x.0] = Some(gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.len();
                    let mut gx = take_or_zeros(&mut grads[x.0], n);
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    grads[x.0] = Some(gx);
                }
                Op::GlobalAvgPool { x } => {
                    let x = *x;
                    let s = &self.nodes[x.0].value.shape;
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let hw = (h * w) as f64;
                    let mut gx = take_or_zeros(&mut grads[x.0], c * h * w);
                    for ch in 0..c {
                        let gc = g[ch] / hw;
                        for i in gx[ch * h * w..(ch + 1) * h * w].iter_mut() {
                            *i += gc;
                        }
                    }
                    grads[x.0] = Some(gx);
                }
                Op::Sum { x } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.len();
                    let mut gx = take_or_zeros(&mut grads[x.0], n);
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                    grads[x.0] = Some(gx);
                }
                Op::Mean { x } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.len();
                    let mut gx = take_or_zeros(&mut grads[x.0], n);
                    let gm = g[0] / n as f64;
                    for v in gx.iter_mut() {
                        *v += gm;
                    }
                    grads[x.0] = Some(gx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let n = g.len();
                    if a == b {
                        // both operands are the same node: y = 2x
                        let mut gx = take_or_zeros(&mut grads[a.0], n);
                        for i in 0..n {
                            gx[i] += 2.0 * g[i];
                        }
                        grads[a.0] = Some(gx);
                    } else {
                        let mut ga = take_or_zeros(&mut grads[a.0], n);
                        let mut gb = take_or_zeros(&mut grads[b.0], n);
                        for i in 0..n {
                            ga[i] += g[i];
                            gb[i] += g[i];
                        }
                        grads[a.0] = Some(ga);
                        grads[b.0] = Some(gb);
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    let n = g.len();
                    let mut gx = take_or_zeros(&mut grads[x.0], n);
                    for i in 0..n {
                        gx[i] += g[i] * c;
                    }
                    grads[x.0] = Some(gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn take_or_zeros(slot: &mut Option<Vec<f64>>, len: usize) -> Vec<f64> {
    slot.take().unwrap_or_else(|| vec![0.0; len])
}

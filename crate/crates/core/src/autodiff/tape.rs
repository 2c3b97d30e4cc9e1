//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes only refer
//! to earlier nodes, so the tape is always in topological order and the
//! backward pass is a single reverse sweep. Gradients flow into a
//! [`ParamGrads`] aligned with the [`ParamStore`] the parameters came from.
//!
//! Shapes are explicit and never broadcast. One-dimensional operators
//! (`affine`, `slice`, `concat`, `mse`) require rank-1 inputs; use
//! [`Tape::flatten`] to get there.

use super::params::{ParamGrads, ParamKind, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    Conv1d { input: Var, kernel: Var, bias: Var },
    Affine { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Lstm(Box<LstmSaved>),
    Mse { pred: Var, target: Var },
    SumSquares(Vec<Var>),
}

#[derive(Debug)]
struct LstmSaved {
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    /// Activated gates `[i, f, g, o]`, each of hidden size.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::invalid(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
        Ok(self.param_at(store, idx))
    }

    pub fn param_at(&mut self, store: &ParamStore, index: usize) -> Var {
        self.push(store.params()[index].value.clone(), Op::Param(index), true)
    }

    /// Valid 1D convolution: `[C_in, L] * [C_out, C_in, K] + [C_out] -> [C_out, L - K + 1]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ks, bs) = (
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 2 || ks.len() != 3 || bs.len() != 1 {
            return Err(shape_err("conv1d", format!("ranks {xs:?} {ks:?} {bs:?}")));
        }
        let (c_in, len) = (xs[0], xs[1]);
        let (c_out, k) = (ks[0], ks[2]);
        if ks[1] != c_in || bs[0] != c_out || len < k {
            return Err(shape_err("conv1d", format!("shapes {xs:?} {ks:?} {bs:?}")));
        }
        let l_out = len - k + 1;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; c_out * l_out];
        for o in 0..c_out {
            let row = &mut out[o * l_out..(o + 1) * l_out];
            row.fill(b[o]);
            for c in 0..c_in {
                let xrow = &x[c * len..(c + 1) * len];
                for j in 0..k {
                    let wv = w[(o * c_in + c) * k + j];
                    for (r, xv) in row.iter_mut().zip(&xrow[j..j + l_out]) {
                        *r += wv * xv;
                    }
                }
            }
        }
        let needs = self.needs(&[input, kernel, bias]);
        let value = Tensor::new(&[c_out, l_out], out)?;
        Ok(self.push(value, Op::Conv1d { input, kernel, bias }, needs))
    }

    /// `W x + b` with `x: [m]`, `W: [n, m]`, `b: [n]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || bs[0] != ws[0] {
            return Err(shape_err("affine", format!("shapes {xs:?} {ws:?} {bs:?}")));
        }
        let m = xs[0];
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let out: Vec<f64> = self
            .value(bias)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &bi)| bi + dot(&w[i * m..(i + 1) * m], x))
            .collect();
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(Tensor::vector(out), Op::Affine { input, weight, bias }, needs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let mut value = x.clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let needs = self.needs(&[input]);
        self.push(value, Op::Relu(input), needs)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x += y;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x -= y;
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|v| *v *= factor);
        let needs = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), needs)
    }

    /// Row-major flatten to rank 1.
    pub fn flatten(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = x.reshaped(&[x.len()]);
        let needs = self.needs(&[a]);
        self.push(value, Op::Reshape(a), needs)
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(shape_err("concat", format!("rank of {:?}", t.shape())));
            }
            out.extend_from_slice(t.data());
        }
        let needs = self.needs(parts);
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), needs))
    }

    /// `input[start..start + len]` of a rank-1 tensor.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 || len == 0 || start + len > t.len() {
            return Err(shape_err("slice", format!("{start}+{len} of {:?}", t.shape())));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        let needs = self.needs(&[input]);
        Ok(self.push(value, Op::Slice { input, start }, needs))
    }

    /// One LSTM step with gates ordered `[input, forget, cell, output]`.
    ///
    /// `w_ih: [4H, D]`, `w_hh: [4H, H]`, `bias: [4H]`, `x: [D]`, `h, c: [H]`.
    /// Returns `(h_t, c_t)`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let state = self.lstm_state(x, h, c, w_ih, w_hh, bias)?;
        let hidden = self.value(state).len() / 2;
        Ok((self.slice(state, 0, hidden)?, self.slice(state, hidden, hidden)?))
    }

    /// Fused LSTM step returning the concatenated `[h_t; c_t]`.
    fn lstm_state(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let (xs, hs, cs) = (self.value(x).shape(), self.value(h).shape(), self.value(c).shape());
        let (wis, whs, bs) = (
            self.value(w_ih).shape(),
            self.value(w_hh).shape(),
            self.value(bias).shape(),
        );
        let ok = xs.len() == 1
            && hs.len() == 1
            && hs == cs
            && wis.len() == 2
            && whs.len() == 2
            && bs.len() == 1
            && wis[0] == 4 * hs[0]
            && wis[1] == xs[0]
            && whs[0] == 4 * hs[0]
            && whs[1] == hs[0]
            && bs[0] == 4 * hs[0];
        if !ok {
            return Err(shape_err(
                "lstm_cell",
                format!("x {xs:?} h {hs:?} c {cs:?} w_ih {wis:?} w_hh {whs:?} b {bs:?}"),
            ));
        }
        let (d, hd) = (xs[0], hs[0]);
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let cv = self.value(c).data();
        let wi = self.value(w_ih).data();
        let wh = self.value(w_hh).data();
        let b = self.value(bias).data();

        let mut gates = vec![0.0; 4 * hd];
        for (r, gate) in gates.iter_mut().enumerate() {
            let z = b[r] + dot(&wi[r * d..(r + 1) * d], xv) + dot(&wh[r * hd..(r + 1) * hd], hv);
            *gate = if (2 * hd..3 * hd).contains(&r) { z.tanh() } else { sigmoid(z) };
        }
        let mut out = vec![0.0; 2 * hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let c_new = f * cv[k] + i * g;
            tanh_c[k] = c_new.tanh();
            out[k] = o * tanh_c[k];
            out[hd + k] = c_new;
        }
        let needs = self.needs(&[x, h, c, w_ih, w_hh, bias]);
        let saved = LstmSaved {
            x,
            h,
            c,
            w_ih,
            w_hh,
            bias,
            gates,
            tanh_c,
        };
        Ok(self.push(Tensor::vector(out), Op::Lstm(Box::new(saved)), needs))
    }

    /// Mean squared difference of two rank-1 tensors, as a `[1]` tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        if self.value(pred).shape().len() != 1 {
            return Err(shape_err("mse", format!("rank of {:?}", self.value(pred).shape())));
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let m = p.len() as f64;
        let v = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m;
        let needs = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target }, needs))
    }

    /// Sum of squares of all entries of `vars`, as a `[1]` tensor.
    pub fn sum_squares(&mut self, vars: &[Var]) -> Var {
        let v = vars
            .iter()
            .flat_map(|&x| self.value(x).data())
            .map(|x| x * x)
            .sum();
        let needs = self.needs(vars);
        self.push(Tensor::scalar(v), Op::SumSquares(vars.to_vec()), needs)
    }

    /// `||W||^2` over the weight tensors of `store` (biases excluded).
    pub fn l2_penalty(&mut self, store: &ParamStore) -> Var {
        let weights: Vec<Var> = (0..store.len())
            .filter(|&i| store.params()[i].kind == ParamKind::Weight)
            .map(|i| self.param_at(store, i))
            .collect();
        self.sum_squares(&weights)
    }

    /// Gradients of the scalar `loss` with respect to the store's parameters.
    pub fn gradients(&self, loss: Var, store: &ParamStore) -> Result<ParamGrads> {
        let mut grads = store.zero_grads();
        self.backward(loss, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates d`loss`/d`param` into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut ParamGrads) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => {
                    let target = grads.tensor_mut(*idx);
                    if target.len() != g.len() {
                        return Err(Error::invalid("gradient set does not match tape parameters"));
                    }
                    add_into(target.data_mut(), g);
                }
                Op::Conv1d { input, kernel, bias } => {
                    let xt = self.value(*input);
                    let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
                    let ks = self.value(*kernel).shape();
                    let (c_out, k) = (ks[0], ks[2]);
                    let l_out = len - k + 1;
                    let x = xt.data();
                    let w = self.value(*kernel).data();
                    if let Some(db) = self.adj_slot(&mut adj, *bias) {
                        for o in 0..c_out {
                            db[o] += g[o * l_out..(o + 1) * l_out].iter().sum::<f64>();
                        }
                    }
                    if let Some(dw) = self.adj_slot(&mut adj, *kernel) {
                        for o in 0..c_out {
                            let grow = &g[o * l_out..(o + 1) * l_out];
                            for c in 0..c_in {
                                for j in 0..k {
                                    dw[(o * c_in + c) * k + j] +=
                                        dot(grow, &x[c * len + j..c * len + j + l_out]);
                                }
                            }
                        }
                    }
                    if let Some(dx) = self.adj_slot(&mut adj, *input) {
                        for o in 0..c_out {
                            let grow = &g[o * l_out..(o + 1) * l_out];
                            for c in 0..c_in {
                                for j in 0..k {
                                    let wv = w[(o * c_in + c) * k + j];
                                    let dst = &mut dx[c * len + j..c * len + j + l_out];
                                    for (d, gv) in dst.iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Affine { input, weight, bias } => {
                    let x = self.value(*input).data();
                    let w = self.value(*weight).data();
                    let m = x.len();
                    if let Some(db) = self.adj_slot(&mut adj, *bias) {
                        add_into(db, g);
                    }
                    if let Some(dw) = self.adj_slot(&mut adj, *weight) {
                        for (row, &gi) in dw.chunks_exact_mut(m).zip(g) {
                            for (d, xv) in row.iter_mut().zip(x) {
                                *d += gi * xv;
                            }
                        }
                    }
                    if let Some(dx) = self.adj_slot(&mut adj, *input) {
                        for (row, &gi) in w.chunks_exact(m).zip(g) {
                            for (d, wv) in dx.iter_mut().zip(row) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                Op::Relu(input) => {
                    let x = self.value(*input).data();
                    if let Some(dx) = self.adj_slot(&mut adj, *input) {
                        for ((d, gv), xv) in dx.iter_mut().zip(g).zip(x) {
                            if *xv > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = self.adj_slot(&mut adj, *a) {
                        add_into(da, g);
                    }
                    if let Some(db) = self.adj_slot(&mut adj, *b) {
                        add_into(db, g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = self.adj_slot(&mut adj, *a) {
                        add_into(da, g);
                    }
                    if let Some(db) = self.adj_slot(&mut adj, *b) {
                        db.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv);
                    }
                }
                Op::Scale(a, factor) => {
                    if let Some(da) = self.adj_slot(&mut adj, *a) {
                        da.iter_mut().zip(g).for_each(|(d, gv)| *d += factor * gv);
                    }
                }
                Op::Reshape(a) => {
                    if let Some(da) = self.adj_slot(&mut adj, *a) {
                        add_into(da, g);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if let Some(dp) = self.adj_slot(&mut adj, p) {
                            add_into(dp, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::Slice { input, start } => {
                    if let Some(dx) = self.adj_slot(&mut adj, *input) {
                        add_into(&mut dx[*start..*start + g.len()], g);
                    }
                }
                Op::Lstm(saved) => self.lstm_backward(saved, g, &mut adj),
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let t = self.value(*target).data();
                    let scale = 2.0 * g[0] / p.len() as f64;
                    if let Some(dp) = self.adj_slot(&mut adj, *pred) {
                        for ((d, a), b) in dp.iter_mut().zip(p).zip(t) {
                            *d += scale * (a - b);
                        }
                    }
                    if let Some(dt) = self.adj_slot(&mut adj, *target) {
                        for ((d, a), b) in dt.iter_mut().zip(p).zip(t) {
                            *d -= scale * (a - b);
                        }
                    }
                }
                Op::SumSquares(vars) => {
                    for &v in vars {
                        let x = self.value(v).data();
                        if let Some(dv) = self.adj_slot(&mut adj, v) {
                            for (d, xv) in dv.iter_mut().zip(x) {
                                *d += 2.0 * g[0] * xv;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn lstm_backward(&self, s: &LstmSaved, g: &[f64], adj: &mut [Option<Tensor>]) {
        let hd = s.tanh_c.len();
        let d = self.value(s.x).len();
        let cv = self.value(s.c).data();
        let gates = &s.gates;

        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, gg, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let th = s.tanh_c[k];
            let dh = g[k];
            let dc = g[hd + k] + dh * o * (1.0 - th * th);
            dz[k] = dc * gg * i * (1.0 - i);
            dz[hd + k] = dc * cv[k] * f * (1.0 - f);
            dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
            dz[3 * hd + k] = dh * th * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }

        let xv = self.value(s.x).data();
        let hv = self.value(s.h).data();
        let wi = self.value(s.w_ih).data();
        let wh = self.value(s.w_hh).data();
        if let Some(db) = self.adj_slot(adj, s.bias) {
            add_into(db, &dz);
        }
        if let Some(dwi) = self.adj_slot(adj, s.w_ih) {
            for (row, &dzr) in dwi.chunks_exact_mut(d).zip(&dz) {
                row.iter_mut().zip(xv).for_each(|(w, x)| *w += dzr * x);
            }
        }
        if let Some(dwh) = self.adj_slot(adj, s.w_hh) {
            for (row, &dzr) in dwh.chunks_exact_mut(hd).zip(&dz) {
                row.iter_mut().zip(hv).for_each(|(w, h)| *w += dzr * h);
            }
        }
        if let Some(dx) = self.adj_slot(adj, s.x) {
            for (row, &dzr) in wi.chunks_exact(d).zip(&dz) {
                dx.iter_mut().zip(row).for_each(|(a, w)| *a += dzr * w);
            }
        }
        if let Some(dh) = self.adj_slot(adj, s.h) {
            for (row, &dzr) in wh.chunks_exact(hd).zip(&dz) {
                dh.iter_mut().zip(row).for_each(|(a, w)| *a += dzr * w);
            }
        }
        if let Some(dc) = self.adj_slot(adj, s.c) {
            add_into(dc, &dc_prev);
        }
    }

    /// Adjoint buffer for `v`, created on first use; `None` if `v` needs no gradient.
    fn adj_slot<'a>(&self, adj: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(
            adj[v.0]
                .get_or_insert_with(|| node.value.zeros_like())
                .data_mut(),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

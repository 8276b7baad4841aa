//! Minimal reverse-mode differentiation over vectors.
//!
//! A [`Tape`] records the forward computation of one example; every value is
//! a dense `f64` vector. Learnable weights live in a [`ParamStore`] and are
//! referenced by [`ParamId`]; [`Tape::backward`] accumulates their gradients
//! into a [`Grads`] buffer of matching shape. The recurrent cell and the
//! gated message are fused ops with hand-written adjoints.

use serde::{Deserialize, Serialize};

pub type ParamId = usize;

/// Row-major matrix (or vector when `cols == 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> ParamId {
        let data = (0..rows * cols).map(|_| init()).collect();
        self.tensors.push(Tensor {
            name: name.into(),
            rows,
            cols,
            data,
        });
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().flatten().for_each(|g| *g = 0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Parameters of a GRU cell with stacked `[reset, update, candidate]` gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
}

/// Parameters of a gated message `sigmoid(G h + g) * (M h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateParams {
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub map_w: ParamId,
}

enum Op {
    Const,
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Vec<Var>),
    WeightedSum(Vec<(Var, f64)>),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Gru {
        p: GruParams,
        x: Var,
        h: Var,
        r: Vec<f64>,
        u: Vec<f64>,
        n: Vec<f64>,
        ah_n: Vec<f64>,
    },
    Gate {
        p: GateParams,
        h: Var,
        s: Vec<f64>,
        m: Vec<f64>,
    },
    Reparam {
        mu: Var,
        logvar: Var,
        eps: Vec<f64>,
    },
    LogSoftmaxPick {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    LogSigmoid {
        logit: Var,
        target: bool,
    },
    Kl {
        mu: Var,
        logvar: Var,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matvec(t: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(t.cols, x.len());
    for (o, row) in out.iter_mut().zip(t.data.chunks_exact(t.cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `grad_w += dy x^T`, and `dx += W^T dy` when `dx` is given.
fn matvec_backward(t: &Tensor, gw: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
    for (i, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let g = &mut gw[i * t.cols..(i + 1) * t.cols];
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += d * xj;
        }
    }
    if let Some(dx) = dx {
        for (i, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &t.data[i * t.cols..(i + 1) * t.cols];
            for (dxj, wj) in dx.iter_mut().zip(row) {
                *dxj += d * wj;
            }
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let t = self.params.get(w);
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; t.rows],
        };
        matvec(t, self.value(x), &mut out);
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn sum(&mut self, vars: Vec<Var>) -> Var {
        let mut v = vec![0.0; self.value(vars[0]).len()];
        for &x in &vars {
            for (o, a) in v.iter_mut().zip(self.value(x)) {
                *o += a;
            }
        }
        self.push(v, Op::Sum(vars))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let mut v = vec![0.0; self.value(terms[0].0).len()];
        for &(x, w) in &terms {
            for (o, a) in v.iter_mut().zip(self.value(x)) {
                *o += w * a;
            }
        }
        self.push(v, Op::WeightedSum(terms))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let v = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        self.push(v, Op::Concat(parts))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(v, Op::Clamp { x, lo, hi })
    }

    pub fn gru(&mut self, p: GruParams, x: Var, h: Var) -> Var {
        let wx = self.params.get(p.wx);
        let wh = self.params.get(p.wh);
        let hs = wh.cols;
        let mut ax = self.params.get(p.bx).data.clone();
        let mut ah = self.params.get(p.bh).data.clone();
        matvec(wx, self.value(x), &mut ax);
        let hv = self.value(h);
        matvec(wh, hv, &mut ah);
        let mut r = vec![0.0; hs];
        let mut u = vec![0.0; hs];
        let mut n = vec![0.0; hs];
        let mut out = vec![0.0; hs];
        for i in 0..hs {
            r[i] = sigmoid(ax[i] + ah[i]);
            u[i] = sigmoid(ax[hs + i] + ah[hs + i]);
            n[i] = (ax[2 * hs + i] + r[i] * ah[2 * hs + i]).tanh();
            out[i] = (1.0 - u[i]) * n[i] + u[i] * hv[i];
        }
        let ah_n = ah[2 * hs..].to_vec();
        self.push(
            out,
            Op::Gru {
                p,
                x,
                h,
                r,
                u,
                n,
                ah_n,
            },
        )
    }

    pub fn gate(&mut self, p: GateParams, h: Var) -> Var {
        let hv = self.value(h);
        let mut a = self.params.get(p.gate_b).data.clone();
        matvec(self.params.get(p.gate_w), hv, &mut a);
        let mut m = vec![0.0; a.len()];
        matvec(self.params.get(p.map_w), hv, &mut m);
        let s: Vec<f64> = a.iter().map(|&x| sigmoid(x)).collect();
        let out = s.iter().zip(&m).map(|(a, b)| a * b).collect();
        self.push(out, Op::Gate { p, h, s, m })
    }

    /// `mu + exp(logvar / 2) * eps` with a fixed noise vector.
    pub fn reparam(&mut self, mu: Var, logvar: Var, eps: Vec<f64>) -> Var {
        let v = self
            .value(mu)
            .iter()
            .zip(self.value(logvar))
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        self.push(v, Op::Reparam { mu, logvar, eps })
    }

    /// Log-probability of class `target` under `softmax(logits)`.
    pub fn log_softmax_pick(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = l.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let value = l[target] - max - z.ln();
        self.push(
            vec![value],
            Op::LogSoftmaxPick {
                logits,
                target,
                probs,
            },
        )
    }

    /// Log-probability of a Bernoulli outcome given its logit.
    pub fn log_sigmoid(&mut self, logit: Var, target: bool) -> Var {
        let l = self.scalar(logit);
        let v = if target { -softplus(-l) } else { -softplus(l) };
        self.push(vec![v], Op::LogSigmoid { logit, target })
    }

    /// `KL(N(mu, exp(logvar)) || N(0, I))`.
    pub fn kl(&mut self, mu: Var, logvar: Var) -> Var {
        let v = kl_divergence(self.value(mu), self.value(logvar));
        self.push(vec![v], Op::Kl { mu, logvar })
    }

    /// Accumulates `seed * d(root)/d(param)` into `grads`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut adj: Vec<Vec<f64>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, Vec::new);
        adj[root.0] = vec![seed; self.nodes[root.0].value.len()];

        fn acc<'a>(adj: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
            if matches!(nodes[v.0].op, Op::Const) {
                return None;
            }
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; nodes[v.0].value.len()];
            }
            Some(slot.as_mut_slice())
        }

        for i in (0..=root.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let dy = std::mem::take(&mut adj[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Affine { w, b, x } => {
                    let t = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    if let Some(b) = b {
                        for (g, d) in grads.tensors[*b].iter_mut().zip(&dy) {
                            *g += d;
                        }
                    }
                    let dx = acc(&mut adj, &self.nodes, *x);
                    matvec_backward(t, &mut grads.tensors[*w], xv, &dy, dx);
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = acc(&mut adj, &self.nodes, v) {
                            d.iter_mut().zip(&dy).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if let Some(d) = acc(&mut adj, &self.nodes, *a) {
                        for ((x, y), o) in d.iter_mut().zip(&dy).zip(bv) {
                            *x += y * o;
                        }
                    }
                    if let Some(d) = acc(&mut adj, &self.nodes, *b) {
                        for ((x, y), o) in d.iter_mut().zip(&dy).zip(av) {
                            *x += y * o;
                        }
                    }
                }
                Op::Sum(vars) => {
                    for &v in vars {
                        if let Some(d) = acc(&mut adj, &self.nodes, v) {
                            d.iter_mut().zip(&dy).for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if let Some(d) = acc(&mut adj, &self.nodes, v) {
                            d.iter_mut().zip(&dy).for_each(|(x, y)| *x += w * y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(d) = acc(&mut adj, &self.nodes, *a) {
                        for ((x, y), t) in d.iter_mut().zip(&dy).zip(&node.value) {
                            *x += y * (1.0 - t * t);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(d) = acc(&mut adj, &self.nodes, *a) {
                        for ((x, y), s) in d.iter_mut().zip(&dy).zip(&node.value) {
                            *x += y * s * (1.0 - s);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        if let Some(d) = acc(&mut adj, &self.nodes, p) {
                            d.iter_mut()
                                .zip(&dy[offset..offset + len])
                                .for_each(|(x, y)| *x += y);
                        }
                        offset += len;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    if let Some(d) = acc(&mut adj, &self.nodes, *x) {
                        for ((g, y), v) in d.iter_mut().zip(&dy).zip(xv) {
                            if *lo <= *v && *v <= *hi {
                                *g += y;
                            }
                        }
                    }
                }
                Op::Gru {
                    p,
                    x,
                    h,
                    r,
                    u,
                    n,
                    ah_n,
                } => {
                    let hs = r.len();
                    let hv = &self.nodes[h.0].value;
                    let xv = &self.nodes[x.0].value;
                    let mut dax = vec![0.0; 3 * hs];
                    let mut dah = vec![0.0; 3 * hs];
                    let mut dh_direct = vec![0.0; hs];
                    for k in 0..hs {
                        let d = dy[k];
                        let dn = d * (1.0 - u[k]);
                        let du = d * (hv[k] - n[k]);
                        dh_direct[k] = d * u[k];
                        let dan = dn * (1.0 - n[k] * n[k]);
                        dax[2 * hs + k] = dan;
                        dah[2 * hs + k] = dan * r[k];
                        let dr = dan * ah_n[k];
                        let dpu = du * u[k] * (1.0 - u[k]);
                        dax[hs + k] = dpu;
                        dah[hs + k] = dpu;
                        let dpr = dr * r[k] * (1.0 - r[k]);
                        dax[k] = dpr;
                        dah[k] = dpr;
                    }
                    for (g, d) in grads.tensors[p.bx].iter_mut().zip(&dax) {
                        *g += d;
                    }
                    for (g, d) in grads.tensors[p.bh].iter_mut().zip(&dah) {
                        *g += d;
                    }
                    let dx = acc(&mut adj, &self.nodes, *x);
                    matvec_backward(
                        self.params.get(p.wx),
                        &mut grads.tensors[p.wx],
                        xv,
                        &dax,
                        dx,
                    );
                    if let Some(dh) = acc(&mut adj, &self.nodes, *h) {
                        for (a, b) in dh.iter_mut().zip(&dh_direct) {
                            *a += b;
                        }
                        matvec_backward(
                            self.params.get(p.wh),
                            &mut grads.tensors[p.wh],
                            hv,
                            &dah,
                            Some(dh),
                        );
                    } else {
                        matvec_backward(
                            self.params.get(p.wh),
                            &mut grads.tensors[p.wh],
                            hv,
                            &dah,
                            None,
                        );
                    }
                }
                Op::Gate { p, h, s, m } => {
                    let hv = &self.nodes[h.0].value;
                    let da: Vec<f64> = (0..s.len())
                        .map(|k| dy[k] * m[k] * s[k] * (1.0 - s[k]))
                        .collect();
                    let dm: Vec<f64> = (0..s.len()).map(|k| dy[k] * s[k]).collect();
                    for (g, d) in grads.tensors[p.gate_b].iter_mut().zip(&da) {
                        *g += d;
                    }
                    if let Some(dh) = acc(&mut adj, &self.nodes, *h) {
                        matvec_backward(
                            self.params.get(p.gate_w),
                            &mut grads.tensors[p.gate_w],
                            hv,
                            &da,
                            Some(&mut *dh),
                        );
                        matvec_backward(
                            self.params.get(p.map_w),
                            &mut grads.tensors[p.map_w],
                            hv,
                            &dm,
                            Some(dh),
                        );
                    } else {
                        matvec_backward(
                            self.params.get(p.gate_w),
                            &mut grads.tensors[p.gate_w],
                            hv,
                            &da,
                            None,
                        );
                        matvec_backward(
                            self.params.get(p.map_w),
                            &mut grads.tensors[p.map_w],
                            hv,
                            &dm,
                            None,
                        );
                    }
                }
                Op::Reparam { mu, logvar, eps } => {
                    let lv = &self.nodes[logvar.0].value;
                    if let Some(d) = acc(&mut adj, &self.nodes, *mu) {
                        d.iter_mut().zip(&dy).for_each(|(x, y)| *x += y);
                    }
                    if let Some(d) = acc(&mut adj, &self.nodes, *logvar) {
                        for k in 0..d.len() {
                            d[k] += dy[k] * 0.5 * (0.5 * lv[k]).exp() * eps[k];
                        }
                    }
                }
                Op::LogSoftmaxPick {
                    logits,
                    target,
                    probs,
                } => {
                    if let Some(d) = acc(&mut adj, &self.nodes, *logits) {
                        for (k, (g, p)) in d.iter_mut().zip(probs).enumerate() {
                            let ind = if k == *target { 1.0 } else { 0.0 };
                            *g += dy[0] * (ind - p);
                        }
                    }
                }
                Op::LogSigmoid { logit, target } => {
                    let l = self.nodes[logit.0].value[0];
                    let s = sigmoid(l);
                    if let Some(d) = acc(&mut adj, &self.nodes, *logit) {
                        d[0] += dy[0] * if *target { 1.0 - s } else { -s };
                    }
                }
                Op::Kl { mu, logvar } => {
                    let (mv, lv) = (
                        self.nodes[mu.0].value.clone(),
                        self.nodes[logvar.0].value.clone(),
                    );
                    if let Some(d) = acc(&mut adj, &self.nodes, *mu) {
                        for k in 0..d.len() {
                            d[k] += dy[0] * mv[k];
                        }
                    }
                    if let Some(d) = acc(&mut adj, &self.nodes, *logvar) {
                        for k in 0..d.len() {
                            d[k] += dy[0] * 0.5 * (lv[k].exp() - 1.0);
                        }
                    }
                }
            }
        }
    }
}

/// Closed form `1/2 * sum(mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

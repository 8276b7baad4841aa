use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;

use super::{CvaeError, ModelConfig};
use crate::embed::{MlpReducer, Normalizer, REDUCER_HIDDEN};
use crate::eqdag::{Edge, EquationDag, NodeType};
use crate::rng;
use crate::tape::{GateParams, GruParams, ParamId, ParamStore, Tape, Var};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Ids {
    enc_gru: GruParams,
    enc_gate: [GateParams; 2],
    mu: Linear,
    logvar: Linear,
    init: Linear,
    dec_gru: GruParams,
    dec_gate: [GateParams; 2],
    type_hidden: Linear,
    type_out: Linear,
    edge_src: ParamId,
    edge_dst: Linear,
    edge_out: Linear,
    slot_hidden: Linear,
    slot_out: Linear,
    reducer: Option<(Linear, Linear)>,
}

fn build(config: &ModelConfig, ps: &mut ParamStore) -> Ids {
    let mut r = rng::stream(config.seed, "init", 0);
    let mut tensor =
        |ps: &mut ParamStore, name: String, rows: usize, cols: usize, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            ps.add(name, rows, cols, || r.random_range(-s..s))
        };
    let h = config.hidden_dim;
    let k = config.latent_dim;
    let v = config.vocab_size();
    let c = config.condition_dim();
    let x = v + c;

    let mut linear = |ps: &mut ParamStore, name: &str, rows: usize, cols: usize| Linear {
        w: tensor(ps, format!("{name}.w"), rows, cols, cols),
        b: tensor(ps, format!("{name}.b"), rows, 1, cols),
    };
    let gru =
        |ps: &mut ParamStore,
         name: &str,
         linear: &mut dyn FnMut(&mut ParamStore, &str, usize, usize) -> Linear| {
            let input = linear(ps, &format!("{name}.input"), 3 * h, x);
            let hidden = linear(ps, &format!("{name}.hidden"), 3 * h, h);
            GruParams {
                wx: input.w,
                bx: input.b,
                wh: hidden.w,
                bh: hidden.b,
            }
        };
    let enc_gru = gru(ps, "encoder.gru", &mut linear);
    let enc_gate = [0, 1].map(|s| {
        let g = linear(ps, &format!("encoder.gate{s}"), h, h);
        let m = linear(ps, &format!("encoder.map{s}"), h, h);
        GateParams {
            gate_w: g.w,
            gate_b: g.b,
            map_w: m.w,
        }
    });
    let mu = linear(ps, "encoder.mu", k, h);
    let logvar = linear(ps, "encoder.logvar", k, h);
    let init = linear(ps, "decoder.init", h, k + c);
    let dec_gru = gru(ps, "decoder.gru", &mut linear);
    let dec_gate = [0, 1].map(|s| {
        let g = linear(ps, &format!("decoder.gate{s}"), h, h);
        let m = linear(ps, &format!("decoder.map{s}"), h, h);
        GateParams {
            gate_w: g.w,
            gate_b: g.b,
            map_w: m.w,
        }
    });
    let type_hidden = linear(ps, "decoder.type_hidden", h, 2 * h);
    let type_out = linear(ps, "decoder.type_out", v, h);
    let edge_src = linear(ps, "decoder.edge_src", h, h).w;
    let edge_dst = linear(ps, "decoder.edge_dst", h, h);
    let edge_out = linear(ps, "decoder.edge_out", 1, h);
    let slot_hidden = linear(ps, "decoder.slot_hidden", h, 3 * h);
    let slot_out = linear(ps, "decoder.slot_out", 1, h);
    let reducer = config
        .conditioning
        .and_then(|p| p.reducer_width())
        .map(|w| {
            (
                linear(
                    ps,
                    "reducer.layer1",
                    REDUCER_HIDDEN,
                    config.condition_features,
                ),
                linear(ps, "reducer.layer2", w, REDUCER_HIDDEN),
            )
        });
    Ids {
        enc_gru,
        enc_gate,
        mu,
        logvar,
        init,
        dec_gru,
        dec_gate,
        type_hidden,
        type_out,
        edge_src,
        edge_dst,
        edge_out,
        slot_hidden,
        slot_out,
        reducer,
    }
}

/// Decoder emission policy.
pub enum DecodeMode<'a> {
    /// Follow the target's node types, edges and operand order.
    TeacherForced(&'a EquationDag),
    /// Most likely type; edges and operand swaps at probability >= 0.5.
    Greedy,
    Stochastic(&'a mut dyn RngCore),
}

impl DecodeMode<'_> {
    fn choose_type(&mut self, logits: &[f64], target: impl FnOnce() -> usize) -> usize {
        match self {
            DecodeMode::TeacherForced(_) => target(),
            DecodeMode::Greedy => {
                let mut best = 0;
                for (i, l) in logits.iter().enumerate() {
                    if *l > logits[best] {
                        best = i;
                    }
                }
                best
            }
            DecodeMode::Stochastic(r) => {
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let mut u = r.random::<f64>() * exps.iter().sum::<f64>();
                for (i, e) in exps.iter().enumerate() {
                    if u < *e {
                        return i;
                    }
                    u -= e;
                }
                exps.len() - 1
            }
        }
    }

    fn choose_bool(&mut self, logit: f64, target: impl FnOnce() -> bool) -> bool {
        match self {
            DecodeMode::TeacherForced(_) => target(),
            DecodeMode::Greedy => logit >= 0.0,
            DecodeMode::Stochastic(r) => r.random::<f64>() < 1.0 / (1.0 + (-logit).exp()),
        }
    }
}

/// Decoder output with the log-likelihood of every decision taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub dag: EquationDag,
    pub log_likelihood_terms: Vec<f64>,
    pub type_terms: usize,
    pub edge_terms: usize,
    /// Operand-order decisions for ordered binary operators.
    pub slot_terms: usize,
}

impl Decoded {
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood_terms.iter().sum()
    }
}

struct Trace {
    dag: EquationDag,
    terms: Vec<Var>,
    type_terms: usize,
    edge_terms: usize,
    slot_terms: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Model parameters together with the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct Cvae {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Standardization of raw condition features, fitted on training data.
    pub normalizer: Option<Normalizer>,
    ids: Ids,
}

/// Rank-based argument slots; for a two-operand ordered node `swapped`
/// makes the later-emitted operand the left one.
fn assign_slots(chosen: &[usize], swapped: bool) -> Vec<(usize, u8)> {
    let mut sorted = chosen.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(usize, u8)> = sorted
        .iter()
        .enumerate()
        .map(|(r, &u)| (u, r.min(255) as u8))
        .collect();
    if swapped && out.len() == 2 {
        out[0].1 = 1;
        out[1].1 = 0;
    }
    out
}

impl Cvae {
    pub fn new(config: ModelConfig) -> Result<Self, CvaeError> {
        config.validate()?;
        let mut params = ParamStore::default();
        let ids = build(&config, &mut params);
        Ok(Self {
            config,
            params,
            normalizer: None,
            ids,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        normalizer: Option<Normalizer>,
    ) -> Result<Self, CvaeError> {
        let fresh = Self::new(config)?;
        if fresh.params.tensors.len() != params.tensors.len() {
            return Err(CvaeError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                fresh.params.tensors.len(),
                params.tensors.len()
            )));
        }
        for (a, b) in fresh.params.tensors.iter().zip(&params.tensors) {
            if a.name != b.name
                || a.rows != b.rows
                || a.cols != b.cols
                || b.data.len() != a.rows * a.cols
            {
                return Err(CvaeError::ShapeMismatch(format!(
                    "tensor `{}` ({}x{}) does not match stored `{}` ({}x{})",
                    a.name, a.rows, a.cols, b.name, b.rows, b.cols
                )));
            }
        }
        if let Some(n) = &normalizer {
            if n.len() != fresh.config.condition_features {
                return Err(CvaeError::ShapeMismatch(
                    "normalizer width differs from condition_features".into(),
                ));
            }
        }
        Ok(Self {
            params,
            normalizer,
            ..fresh
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.config.conditioning.is_some()
    }

    /// Standardized condition features; `None` for the unconditional model
    /// whatever `raw` is.
    pub fn standardize(&self, raw: Option<&[f64]>) -> Result<Option<Vec<f64>>, CvaeError> {
        if !self.is_conditional() {
            return Ok(None);
        }
        let raw = raw.ok_or_else(|| {
            CvaeError::ShapeMismatch("conditional model needs a condition vector".into())
        })?;
        if raw.len() != self.config.condition_features {
            return Err(CvaeError::ShapeMismatch(format!(
                "condition has {} values, model expects {}",
                raw.len(),
                self.config.condition_features
            )));
        }
        Ok(Some(match &self.normalizer {
            Some(n) => n.apply(raw),
            None => raw.to_vec(),
        }))
    }

    /// Reducer weights for the MLP providers.
    pub fn reducer(&self) -> Option<MlpReducer> {
        self.ids.reducer.map(|(l1, l2)| MlpReducer {
            w1: self.params.get(l1.w).clone(),
            b1: self.params.get(l1.b).clone(),
            w2: self.params.get(l2.w).clone(),
            b2: self.params.get(l2.b).clone(),
        })
    }

    fn condition_var(&self, t: &mut Tape, standardized: Option<&[f64]>) -> Option<Var> {
        let c = standardized?;
        let c = t.constant(c.to_vec());
        Some(match self.ids.reducer {
            None => c,
            Some((l1, l2)) => {
                let a = t.affine(l1.w, Some(l1.b), c);
                let h = t.tanh(a);
                t.affine(l2.w, Some(l2.b), h)
            }
        })
    }

    fn node_input(&self, t: &mut Tape, vocab: usize, c: Option<Var>) -> Var {
        let mut onehot = vec![0.0; self.config.vocab_size()];
        if let Some(slot) = onehot.get_mut(vocab) {
            *slot = 1.0;
        }
        let x = t.constant(onehot);
        match c {
            Some(c) => t.concat(vec![x, c]),
            None => x,
        }
    }

    fn message(
        &self,
        t: &mut Tape,
        gates: &[GateParams; 2],
        states: &[Var],
        preds: &[(usize, u8)],
        ordered: bool,
    ) -> Var {
        let parts: Vec<Var> = preds
            .iter()
            .map(|&(u, slot)| {
                let g = if ordered {
                    gates[slot.min(1) as usize]
                } else {
                    gates[0]
                };
                t.gate(g, states[u])
            })
            .collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            t.sum(parts)
        }
    }

    fn encode_on(&self, t: &mut Tape, dag: &EquationDag, c: Option<Var>) -> (Var, Var) {
        let d = self.config.num_inputs;
        let zero = t.constant(vec![0.0; self.config.hidden_dim]);
        let mut states = Vec::with_capacity(dag.len());
        for (i, node) in dag.nodes.iter().enumerate() {
            let x = self.node_input(t, node.vocab_index(d), c);
            let preds = dag.predecessors(i);
            let msg = if preds.is_empty() {
                zero
            } else {
                self.message(
                    t,
                    &self.ids.enc_gate,
                    &states,
                    &preds,
                    node.is_ordered_binary(),
                )
            };
            states.push(t.gru(self.ids.enc_gru, x, msg));
        }
        let out = states[dag.output_index().expect("valid DAG has an output")];
        let mu = t.affine(self.ids.mu.w, Some(self.ids.mu.b), out);
        let lv = t.affine(self.ids.logvar.w, Some(self.ids.logvar.b), out);
        let lv = t.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        (mu, lv)
    }

    pub(crate) fn check_dag(&self, dag: &EquationDag) -> Result<(), CvaeError> {
        let report = dag.validate();
        if !report.valid {
            return Err(CvaeError::InvalidDag(report));
        }
        if dag.num_inputs > self.config.num_inputs {
            return Err(CvaeError::ShapeMismatch(format!(
                "DAG has {} inputs, model vocabulary covers {}",
                dag.num_inputs, self.config.num_inputs
            )));
        }
        Ok(())
    }

    /// `(mu, logvar)` of the approximate posterior.
    pub fn encode(
        &self,
        dag: &EquationDag,
        condition: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>), CvaeError> {
        self.check_dag(dag)?;
        let c = self.standardize(condition)?;
        let mut t = Tape::new(&self.params);
        let cv = self.condition_var(&mut t, c.as_deref());
        let (mu, lv) = self.encode_on(&mut t, dag, cv);
        Ok((t.value(mu).to_vec(), t.value(lv).to_vec()))
    }

    #[allow(clippy::needless_range_loop)] // `i` indexes the target and several buffers
    fn decode_on(&self, t: &mut Tape, z: Var, c: Option<Var>, mut mode: DecodeMode) -> Trace {
        let ids = &self.ids;
        let d = self.config.num_inputs;
        let target = match &mode {
            DecodeMode::TeacherForced(dag) => Some(*dag),
            _ => None,
        };
        let target_preds: Vec<Vec<(usize, u8)>> = target
            .map(|dag| (0..dag.len()).map(|i| dag.predecessors(i)).collect())
            .unwrap_or_default();
        let limit = target.map_or(self.config.max_nodes, |dag| dag.len());

        let zc = match c {
            Some(c) => t.concat(vec![z, c]),
            None => z,
        };
        let pre = t.affine(ids.init.w, Some(ids.init.b), zc);
        let h0 = t.tanh(pre);

        let mut terms = Vec::new();
        let (mut type_terms, mut edge_terms, mut slot_terms) = (0, 0, 0);
        let mut types: Vec<NodeType> = Vec::new();
        let mut states: Vec<Var> = Vec::new();
        let mut src_proj: Vec<Var> = Vec::new();
        let mut edges = Vec::new();
        let mut graph_state = h0;

        for i in 0..limit {
            let type_in = t.concat(vec![graph_state, h0]);
            let a = t.affine(ids.type_hidden.w, Some(ids.type_hidden.b), type_in);
            let a = t.tanh(a);
            let logits = t.affine(ids.type_out.w, Some(ids.type_out.b), a);
            let vocab =
                mode.choose_type(t.value(logits), || target.unwrap().nodes[i].vocab_index(d));
            terms.push(t.log_softmax_pick(logits, vocab));
            type_terms += 1;
            let node = NodeType::from_vocab_index(vocab, d).expect("vocabulary index in range");
            let ordered = node.is_ordered_binary();
            let x = self.node_input(t, vocab, c);

            // Sources chain off the previous node so repeated input types get
            // distinct states.
            let mut h = t.gru(ids.dec_gru, x, graph_state);
            let mut dst = t.affine(ids.edge_dst.w, Some(ids.edge_dst.b), h);
            let mut chosen: Vec<usize> = Vec::new();
            for u in (0..i).rev() {
                let s = t.add(src_proj[u], dst);
                let s = t.tanh(s);
                let logit = t.affine(ids.edge_out.w, Some(ids.edge_out.b), s);
                let yes = mode.choose_bool(t.scalar(logit), || {
                    target_preds[i].iter().any(|&(p, _)| p == u)
                });
                terms.push(t.log_sigmoid(logit, yes));
                edge_terms += 1;
                if yes {
                    chosen.push(u);
                    let preds = assign_slots(&chosen, false);
                    let msg = self.message(t, &ids.dec_gate, &states, &preds, ordered);
                    h = t.gru(ids.dec_gru, x, msg);
                    if u > 0 {
                        dst = t.affine(ids.edge_dst.w, Some(ids.edge_dst.b), h);
                    }
                }
            }

            let mut swapped = false;
            if ordered && chosen.len() == 2 {
                let (lo, hi) = (chosen[1], chosen[0]);
                let cat = t.concat(vec![states[lo], states[hi], h]);
                let a = t.affine(ids.slot_hidden.w, Some(ids.slot_hidden.b), cat);
                let a = t.tanh(a);
                let logit = t.affine(ids.slot_out.w, Some(ids.slot_out.b), a);
                swapped = mode.choose_bool(t.scalar(logit), || {
                    target_preds[i].iter().any(|&(p, s)| p == lo && s == 1)
                });
                terms.push(t.log_sigmoid(logit, swapped));
                slot_terms += 1;
                if swapped {
                    let preds = assign_slots(&chosen, true);
                    let msg = self.message(t, &ids.dec_gate, &states, &preds, ordered);
                    h = t.gru(ids.dec_gru, x, msg);
                }
            }
            for (u, slot) in assign_slots(&chosen, swapped) {
                edges.push(Edge::new(u, i, slot));
            }

            types.push(node);
            src_proj.push(t.affine(ids.edge_src, None, h));
            states.push(h);
            graph_state = h;
            if target.is_none() && node == NodeType::Output {
                break;
            }
        }
        edges.sort_by_key(|e| (e.dst, e.slot, e.src));
        Trace {
            dag: EquationDag::new(types, edges, d),
            terms,
            type_terms,
            edge_terms,
            slot_terms,
        }
    }

    pub fn decode(
        &self,
        z: &[f64],
        condition: Option<&[f64]>,
        mode: DecodeMode,
    ) -> Result<Decoded, CvaeError> {
        if z.len() != self.config.latent_dim {
            return Err(CvaeError::ShapeMismatch(format!(
                "z has {} values, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        if let DecodeMode::TeacherForced(dag) = &mode {
            self.check_dag(dag)?;
        }
        let c = self.standardize(condition)?;
        let mut t = Tape::new(&self.params);
        let cv = self.condition_var(&mut t, c.as_deref());
        let zv = t.constant(z.to_vec());
        let trace = self.decode_on(&mut t, zv, cv, mode);
        Ok(Decoded {
            log_likelihood_terms: trace.terms.iter().map(|&v| t.scalar(v)).collect(),
            dag: trace.dag,
            type_terms: trace.type_terms,
            edge_terms: trace.edge_terms,
            slot_terms: trace.slot_terms,
        })
    }

    /// Greedy decode of the posterior mean.
    pub fn reconstruct(
        &self,
        dag: &EquationDag,
        condition: Option<&[f64]>,
    ) -> Result<EquationDag, CvaeError> {
        let (mu, _) = self.encode(dag, condition)?;
        Ok(self.decode(&mu, condition, DecodeMode::Greedy)?.dag)
    }

    /// Loss of one DAG; `eps = None` decodes from the posterior mean. When
    /// `grads` is given, `scale * d(loss)` is accumulated into it.
    pub(crate) fn loss_with_grads(
        &self,
        dag: &EquationDag,
        standardized: Option<&[f64]>,
        eps: Option<&[f64]>,
        grads: Option<(&mut crate::tape::Grads, f64)>,
    ) -> LossParts {
        let mut t = Tape::new(&self.params);
        let c = self.condition_var(&mut t, standardized);
        let (mu, lv) = self.encode_on(&mut t, dag, c);
        let z = match eps {
            Some(e) => t.reparam(mu, lv, e.to_vec()),
            None => mu,
        };
        let trace = self.decode_on(&mut t, z, c, DecodeMode::TeacherForced(dag));
        let ll = t.sum(trace.terms);
        let kl = t.kl(mu, lv);
        let total = t.weighted_sum(vec![(ll, -1.0), (kl, self.config.alpha)]);
        if let Some((g, scale)) = grads {
            t.backward(total, scale, g);
        }
        LossParts {
            total: t.scalar(total),
            recon: -t.scalar(ll),
            kl: t.scalar(kl),
        }
    }

    /// Teacher-forced loss `recon + alpha * KL` of a single DAG.
    pub fn loss(
        &self,
        dag: &EquationDag,
        condition: Option<&[f64]>,
        eps: Option<&[f64]>,
    ) -> Result<LossParts, CvaeError> {
        self.check_dag(dag)?;
        let c = self.standardize(condition)?;
        if let Some(e) = eps {
            if e.len() != self.config.latent_dim {
                return Err(CvaeError::ShapeMismatch(
                    "noise length differs from latent_dim".into(),
                ));
            }
        }
        Ok(self.loss_with_grads(dag, c.as_deref(), eps, None))
    }

    /// Loss and parameter gradients of one DAG.
    pub fn loss_and_grads(
        &self,
        dag: &EquationDag,
        condition: Option<&[f64]>,
        eps: Option<&[f64]>,
    ) -> Result<(LossParts, crate::tape::Grads), CvaeError> {
        self.check_dag(dag)?;
        let c = self.standardize(condition)?;
        let mut g = self.params.zero_grads();
        let parts = self.loss_with_grads(dag, c.as_deref(), eps, Some((&mut g, 1.0)));
        Ok((parts, g))
    }
}

/// `mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)`; `logvar` is clamped
/// to `[LOGVAR_MIN, LOGVAR_MAX]` first.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let e: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e
        })
        .collect()
}

/// Decodes `n` latent draws from the prior. A conditional model pairs each
/// draw with a condition picked uniformly from `conditions`.
pub fn sample_prior<R: Rng + ?Sized>(
    model: &Cvae,
    n: usize,
    conditions: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<EquationDag>, CvaeError> {
    if model.is_conditional() && conditions.is_empty() {
        return Err(CvaeError::ShapeMismatch(
            "conditional model needs a nonempty condition source".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..model.config.latent_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let c = if model.is_conditional() {
            Some(conditions[rng.random_range(0..conditions.len())].as_slice())
        } else {
            None
        };
        let mut child = crate::rng::Rng::seed_from_u64(rng.random());
        out.push(model.decode(&z, c, DecodeMode::Stochastic(&mut child))?.dag);
    }
    Ok(out)
}

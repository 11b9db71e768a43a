use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptmaml_autodiff::{GradStore, Graph, NodeId, ParamId, ParamSet, Tensor};

use super::{CellKind, Encoded, LearnerConfig, LearnerError, LossKind, StepTarget, Vocab};
use crate::sql::{query_from_decode, DecodeTag, DecodeToken, GrammarState, SqlQuery, Terminal};

type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Clone, Debug)]
struct CellIds {
    w: ParamId,
    u: ParamId,
    bx: ParamId,
    bh: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<(String, Vec<usize>)>,
    tok: ParamId,
    term: ParamId,
    enc: Vec<[CellIds; 2]>,
    bridge: Vec<(ParamId, ParamId)>,
    dec: Vec<CellIds>,
    attn: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ops_w: ParamId,
    ops_b: ParamId,
}

impl Layout {
    fn new(cfg: &LearnerConfig, vocab_len: usize) -> Self {
        let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            specs.push((name, shape));
            ParamId(specs.len() - 1)
        };
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let gates = match cfg.cell {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        };
        let cell = |prefix: String, input: usize, push: &mut dyn FnMut(String, Vec<usize>) -> ParamId| CellIds {
            w: push(format!("{prefix}.w"), vec![gates * h, input]),
            u: push(format!("{prefix}.u"), vec![gates * h, h]),
            bx: push(format!("{prefix}.bx"), vec![gates * h]),
            bh: push(format!("{prefix}.bh"), vec![gates * h]),
        };

        let tok = push("embed.tokens".into(), vec![vocab_len, e]);
        let term = push("embed.terminals".into(), vec![Terminal::ALL.len(), e]);
        let mut enc = Vec::new();
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { e } else { 2 * h };
            let fw = cell(format!("enc.{l}.fw"), input, &mut push);
            let bw = cell(format!("enc.{l}.bw"), input, &mut push);
            enc.push([fw, bw]);
        }
        let mut bridge = Vec::new();
        let mut dec = Vec::new();
        for l in 0..cfg.decoder_layers {
            bridge.push((
                push(format!("bridge.{l}.w"), vec![h, 2 * h]),
                push(format!("bridge.{l}.b"), vec![h]),
            ));
        }
        for l in 0..cfg.decoder_layers {
            let input = if l == 0 { e } else { h };
            dec.push(cell(format!("dec.{l}"), input, &mut push));
        }
        let attn = push("attn.w".into(), vec![2 * h, h]);
        let out_w = push("out.w".into(), vec![h, 3 * h]);
        let out_b = push("out.b".into(), vec![h]);
        let ops_w = push("ops.w".into(), vec![Terminal::ALL.len(), h]);
        let ops_b = push("ops.b".into(), vec![Terminal::ALL.len()]);
        Self {
            specs,
            tok,
            term,
            enc,
            bridge,
            dec,
            attn,
            out_w,
            out_b,
            ops_w,
            ops_b,
        }
    }
}

#[derive(Clone, Copy)]
struct State {
    h: NodeId,
    c: Option<NodeId>,
}

/// Probability distribution over the legal actions of one decode step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStepDist {
    pub state: GrammarState,
    /// Action labels: terminal names, or `@<pos>` for a copy from input position `pos`.
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

/// Model architecture plus its input vocabulary. Parameters live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Learner {
    cfg: LearnerConfig,
    vocab: Vocab,
    layout: Layout,
}

/// One step's heads, evaluated at the decoder output.
struct StepHeads {
    /// Softmax over the legal terminals (or over `{<END>, AND}` at a branch point).
    ops: Option<(NodeId, Vec<Terminal>)>,
    /// Softmax over the legal copy positions.
    copy: Option<(NodeId, Vec<usize>)>,
    tag_when_copy: DecodeTag,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, vocab: Vocab) -> Self {
        let layout = Layout::new(&cfg, vocab.len());
        Self { cfg, vocab, layout }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Same architecture with a different training loss.
    pub fn with_loss(mut self, kind: LossKind) -> Self {
        self.cfg.loss_kind = kind;
        self
    }

    /// Uniform initialisation in `(−r, r)`, `r = 1/√hidden_dim`.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let r = 1.0 / (self.cfg.hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in &self.layout.specs {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-r..r)).collect();
            let t = Tensor::new(shape.clone(), data).expect("layout shapes are consistent");
            params.insert(name.clone(), t).expect("layout names are unique");
        }
        params
    }

    /// Checks that `params` has exactly this model's names and shapes, in order.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        if params.len() != self.layout.specs.len() {
            return Err(LearnerError::Layout(format!(
                "expected {} tensors, found {}",
                self.layout.specs.len(),
                params.len()
            )));
        }
        for ((_, name, t), (want, shape)) in params.iter().zip(&self.layout.specs) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(LearnerError::Layout(format!(
                    "`{name}` {:?} where `{want}` {shape:?} was expected",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn cell(&self, g: &mut Graph<'_>, ids: &CellIds, x: NodeId, s: State) -> Result<State> {
        let h = self.cfg.hidden_dim;
        let (w, u, bx, bh) = (g.param(ids.w), g.param(ids.u), g.param(ids.bx), g.param(ids.bh));
        let wx = g.affine(w, x, bx)?;
        let uh = g.affine(u, s.h, bh)?;
        match self.cfg.cell {
            CellKind::Gru => {
                let (wr, ur) = (g.slice(wx, 0, h)?, g.slice(uh, 0, h)?);
                let (wz, uz) = (g.slice(wx, h, h)?, g.slice(uh, h, h)?);
                let (wn, un) = (g.slice(wx, 2 * h, h)?, g.slice(uh, 2 * h, h)?);
                let r = g.add(wr, ur)?;
                let r = g.sigmoid(r)?;
                let z = g.add(wz, uz)?;
                let z = g.sigmoid(z)?;
                let rn = g.mul(r, un)?;
                let n = g.add(wn, rn)?;
                let n = g.tanh(n)?;
                // h' = (1 − z)·n + z·h
                let d = g.sub(s.h, n)?;
                let zd = g.mul(z, d)?;
                Ok(State {
                    h: g.add(n, zd)?,
                    c: None,
                })
            }
            CellKind::Lstm => {
                let gates = g.add(wx, uh)?;
                let i = g.slice(gates, 0, h)?;
                let i = g.sigmoid(i)?;
                let f = g.slice(gates, h, h)?;
                let f = g.sigmoid(f)?;
                let cand = g.slice(gates, 2 * h, h)?;
                let cand = g.tanh(cand)?;
                let o = g.slice(gates, 3 * h, h)?;
                let o = g.sigmoid(o)?;
                let prev_c = s.c.expect("lstm state carries a cell");
                let keep = g.mul(f, prev_c)?;
                let write = g.mul(i, cand)?;
                let c = g.add(keep, write)?;
                let tc = g.tanh(c)?;
                Ok(State {
                    h: g.mul(o, tc)?,
                    c: Some(c),
                })
            }
        }
    }

    fn zero_state(&self, g: &mut Graph<'_>) -> State {
        let h = g.constant(Tensor::zeros(&[self.cfg.hidden_dim]));
        State {
            h,
            c: matches!(self.cfg.cell, CellKind::Lstm).then_some(h),
        }
    }

    /// Bidirectional encoder. Returns the memory matrix `[L, 2H]` and the initial decoder states.
    fn encode_graph(&self, g: &mut Graph<'_>, enc: &Encoded) -> Result<(NodeId, Vec<State>)> {
        let tok = g.param(self.layout.tok);
        let mut xs = Vec::with_capacity(enc.input_ids.len());
        for &id in &enc.input_ids {
            xs.push(g.lookup(tok, id)?);
        }
        let n = xs.len();
        let mut summary = None;
        for layer in &self.layout.enc {
            let mut fw = Vec::with_capacity(n);
            let mut s = self.zero_state(g);
            for &x in &xs {
                s = self.cell(g, &layer[0], x, s)?;
                fw.push(s.h);
            }
            let mut bw = vec![fw[0]; n];
            let mut s = self.zero_state(g);
            for i in (0..n).rev() {
                s = self.cell(g, &layer[1], xs[i], s)?;
                bw[i] = s.h;
            }
            summary = Some(g.concat(&[fw[n - 1], bw[0]])?);
            xs = (0..n)
                .map(|i| g.concat(&[fw[i], bw[i]]))
                .collect::<std::result::Result<_, _>>()?;
        }
        let mem = g.stack(&xs)?;
        let summary = summary.expect("at least one encoder layer");
        let mut states = Vec::new();
        for &(w, b) in &self.layout.bridge {
            let (w, b) = (g.param(w), g.param(b));
            let a = g.affine(w, summary, b)?;
            let h = g.tanh(a)?;
            let c = match self.cfg.cell {
                CellKind::Gru => None,
                CellKind::Lstm => Some(g.constant(Tensor::zeros(&[self.cfg.hidden_dim]))),
            };
            states.push(State { h, c });
        }
        Ok((mem, states))
    }

    /// One decoder step: advances `states` on input `x`, returns the output vector
    /// and the attention scores over input positions.
    fn decoder_step(&self, g: &mut Graph<'_>, states: &mut [State], x: NodeId, mem: NodeId) -> Result<(NodeId, NodeId)> {
        let mut input = x;
        for (s, ids) in states.iter_mut().zip(&self.layout.dec) {
            *s = self.cell(g, ids, input, *s)?;
            input = s.h;
        }
        let d = input;
        let wa = g.param(self.layout.attn);
        let q = g.matmul(wa, d)?;
        let scores = g.matmul(mem, q)?;
        let a = g.softmax(scores)?;
        let ctx = g.matmul(a, mem)?;
        let dc = g.concat(&[d, ctx])?;
        let (ow, ob) = (g.param(self.layout.out_w), g.param(self.layout.out_b));
        let o = g.affine(ow, dc, ob)?;
        Ok((g.tanh(o)?, scores))
    }

    /// The copy distribution is the attention distribution restricted to the legal
    /// candidates and renormalised.
    fn heads(&self, g: &mut Graph<'_>, o: NodeId, scores: NodeId, enc: &Encoded, state: GrammarState) -> Result<StepHeads> {
        let allowed = state.allowed()?;
        let tag_when_copy = if allowed.constant {
            DecodeTag::Constant
        } else {
            DecodeTag::Column
        };
        let copyable = allowed.constant || allowed.column.is_some();
        let ops = if allowed.terminals.is_empty() {
            None
        } else {
            // At a branch point the operator head decides between stopping and another condition.
            let terms = if copyable {
                vec![Terminal::End, Terminal::And]
            } else {
                allowed.terminals.clone()
            };
            let (w, b) = (g.param(self.layout.ops_w), g.param(self.layout.ops_b));
            let logits = g.affine(w, o, b)?;
            let picked = g.gather(logits, terms.iter().map(|t| t.index()).collect())?;
            Some((g.softmax(picked)?, terms))
        };
        let copy = if copyable {
            let cands = enc.candidates(tag_when_copy, allowed.column);
            let picked = g.gather(scores, cands.clone())?;
            Some((g.softmax(picked)?, cands))
        } else {
            None
        };
        Ok(StepHeads {
            ops,
            copy,
            tag_when_copy,
        })
    }

    fn neg_log(g: &mut Graph<'_>, p: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let picked = g.gather(p, idx)?;
        let total = g.sum(picked)?;
        let l = g.log(total)?;
        Ok(g.scale(l, -1.0)?)
    }

    /// Teacher-forced pass. Returns one scalar loss node per decode step.
    fn teacher_forced(
        &self,
        g: &mut Graph<'_>,
        enc: &Encoded,
        kind: LossKind,
        mut dists: Option<&mut Vec<DecodeStepDist>>,
    ) -> Result<Vec<NodeId>> {
        let (mem, mut states) = self.encode_graph(g, enc)?;
        let term = g.param(self.layout.term);
        let tok = g.param(self.layout.tok);
        let mut x = g.lookup(term, Terminal::Go.index())?;
        let mut state = GrammarState::initial();
        let mut losses = Vec::with_capacity(enc.targets.len());
        for target in &enc.targets {
            let (o, scores) = self.decoder_step(g, &mut states, x, mem)?;
            let heads = self.heads(g, o, scores, enc, state)?;
            if let Some(out) = dists.as_deref_mut() {
                out.push(self.distribution(g, &heads, state));
            }
            let (loss, token) = match target {
                StepTarget::Op(t) => {
                    let (p, terms) = heads.ops.as_ref().expect("gold decode follows the grammar");
                    let k = terms.iter().position(|u| u == t).expect("gold terminal is legal");
                    x = g.lookup(term, t.index())?;
                    (Self::neg_log(g, *p, vec![k])?, DecodeToken::Op(*t))
                }
                StepTarget::Copy { value, positions } => {
                    let (p, cands) = heads.copy.as_ref().expect("gold decode follows the grammar");
                    let hits: Vec<usize> = positions
                        .iter()
                        .map(|pos| cands.iter().position(|c| c == pos).expect("positions are candidates"))
                        .collect();
                    let chosen = match kind {
                        LossKind::Pointer => vec![hits[0]],
                        LossKind::Sum => hits,
                        LossKind::Max => {
                            let pv = g.value(*p).data();
                            let best = hits
                                .iter()
                                .copied()
                                .fold(hits[0], |b, i| if pv[i] > pv[b] { i } else { b });
                            vec![best]
                        }
                    };
                    let mut loss = Self::neg_log(g, *p, chosen)?;
                    if let Some((gate, _)) = heads.ops {
                        // index 1 is AND: "another condition follows"
                        let cont = Self::neg_log(g, gate, vec![1])?;
                        loss = g.add(loss, cont)?;
                    }
                    x = g.lookup(tok, enc.input_ids[positions[0]])?;
                    let token = match heads.tag_when_copy {
                        DecodeTag::Constant => DecodeToken::Value(value.clone()),
                        _ => DecodeToken::Column(value.clone()),
                    };
                    (loss, token)
                }
            };
            losses.push(loss);
            state = state.advance(&token)?;
        }
        Ok(losses)
    }

    fn distribution(&self, g: &Graph<'_>, heads: &StepHeads, state: GrammarState) -> DecodeStepDist {
        let mut labels = Vec::new();
        let mut probs = Vec::new();
        let mut copy_mass = 1.0;
        if let Some((p, terms)) = &heads.ops {
            let pv = g.value(*p).data();
            for (t, &v) in terms.iter().zip(pv) {
                if heads.copy.is_some() && *t == Terminal::And {
                    copy_mass = v;
                } else {
                    labels.push(format!("{t:?}"));
                    probs.push(v);
                }
            }
        }
        if let Some((p, cands)) = &heads.copy {
            for (c, &v) in cands.iter().zip(g.value(*p).data()) {
                labels.push(format!("@{c}"));
                probs.push(copy_mass * v);
            }
        }
        DecodeStepDist { state, labels, probs }
    }

    /// Builds the summed sequence loss in `g`.
    pub fn build_loss(&self, g: &mut Graph<'_>, enc: &Encoded, kind: LossKind) -> Result<NodeId> {
        let steps = self.teacher_forced(g, enc, kind, None)?;
        let mut total = steps[0];
        for &s in &steps[1..] {
            total = g.add(total, s)?;
        }
        Ok(total)
    }

    /// Sequence loss under the configured loss kind.
    pub fn loss(&self, params: &ParamSet, enc: &Encoded) -> Result<f64> {
        self.loss_with(params, enc, self.cfg.loss_kind)
    }

    pub fn loss_with(&self, params: &ParamSet, enc: &Encoded, kind: LossKind) -> Result<f64> {
        let mut g = Graph::new(params);
        let l = self.build_loss(&mut g, enc, kind)?;
        Ok(g.scalar(l))
    }

    pub fn loss_and_grad(&self, params: &ParamSet, enc: &Encoded) -> Result<(f64, GradStore)> {
        let mut g = Graph::new(params);
        let l = self.build_loss(&mut g, enc, self.cfg.loss_kind)?;
        let grads = g.backward(l)?;
        Ok((g.scalar(l), grads))
    }

    /// Per-step losses under teacher forcing.
    pub fn step_losses(&self, params: &ParamSet, enc: &Encoded, kind: LossKind) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        let steps = self.teacher_forced(&mut g, enc, kind, None)?;
        Ok(steps.iter().map(|&s| g.scalar(s)).collect())
    }

    /// Legal-action distributions along the gold decode path.
    pub fn step_distributions(&self, params: &ParamSet, enc: &Encoded) -> Result<Vec<DecodeStepDist>> {
        let mut g = Graph::new(params);
        let mut out = Vec::new();
        self.teacher_forced(&mut g, enc, self.cfg.loss_kind, Some(&mut out))?;
        Ok(out)
    }

    /// Greedy grammar-constrained decode.
    pub fn predict_tokens(&self, params: &ParamSet, enc: &Encoded) -> Result<Vec<DecodeToken>> {
        let mut g = Graph::new(params);
        let (mem, mut states) = self.encode_graph(&mut g, enc)?;
        let term = g.param(self.layout.term);
        let tok = g.param(self.layout.tok);
        let mut x = g.lookup(term, Terminal::Go.index())?;
        let mut state = GrammarState::initial();
        let mut out = Vec::new();
        while !state.is_accepting() {
            if out.len() == self.cfg.max_decode_len {
                return Err(LearnerError::Truncated(self.cfg.max_decode_len));
            }
            let (o, scores) = self.decoder_step(&mut g, &mut states, x, mem)?;
            let heads = self.heads(&mut g, o, scores, enc, state)?;
            // another condition needs three steps plus <END>; stop when it cannot fit
            let no_room = out.len() + 4 > self.cfg.max_decode_len;
            let mut stop_or_op = None;
            if let Some((p, terms)) = &heads.ops {
                let k = argmax(g.value(*p).data());
                if heads.copy.is_none() || terms[k] != Terminal::And {
                    stop_or_op = Some(terms[k]);
                } else if no_room {
                    stop_or_op = Some(Terminal::End);
                }
            }
            let token = match stop_or_op {
                Some(t) => {
                    x = g.lookup(term, t.index())?;
                    DecodeToken::Op(t)
                }
                None => {
                    let (p, cands) = heads.copy.as_ref().expect("a copy head exists when no terminal was chosen");
                    let pos = cands[argmax(g.value(*p).data())];
                    x = g.lookup(tok, enc.input_ids[pos])?;
                    let v = enc.values[pos].clone();
                    match heads.tag_when_copy {
                        DecodeTag::Constant => DecodeToken::Value(v),
                        _ => DecodeToken::Column(v),
                    }
                }
            };
            state = state.advance(&token)?;
            out.push(token);
        }
        Ok(out)
    }

    pub fn predict_greedy(&self, params: &ParamSet, enc: &Encoded) -> Result<SqlQuery> {
        let tokens = self.predict_tokens(params, enc)?;
        Ok(query_from_decode(&tokens)?)
    }
}

/// Index of the largest value; ties go to the first.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::tests::example;
    use ptmaml_autodiff::grad_check;

    fn tiny(cell: CellKind) -> LearnerConfig {
        LearnerConfig {
            embed_dim: 6,
            hidden_dim: 5,
            encoder_layers: 2,
            decoder_layers: 2,
            cell,
            ..LearnerConfig::desk()
        }
    }

    #[test]
    fn init_in_range_and_seeded() {
        let ex = example();
        let learner = Learner::new(LearnerConfig::desk(), Vocab::build([&ex]));
        let a = learner.init_params(4);
        let r = 1.0 / 64f64.sqrt();
        assert!(a.iter().all(|(_, _, t)| t.data().iter().all(|v| v.abs() < r)));
        assert_eq!(a.fingerprint(), learner.init_params(4).fingerprint());
        assert_ne!(a.fingerprint(), learner.init_params(5).fingerprint());
        learner.check_params(&a).unwrap();
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ex = example();
        for cell in [CellKind::Gru, CellKind::Lstm] {
            for kind in LossKind::ALL {
                let learner = Learner::new(tiny(cell), Vocab::build([&ex]));
                let params = learner.init_params(1);
                let enc = learner.encode(&ex).unwrap();
                let mut g = Graph::new(&params);
                let l = learner.build_loss(&mut g, &enc, kind).unwrap();
                let err = grad_check(&mut g, l, 1e-5).unwrap();
                assert!(err < 1e-4, "{cell:?} {kind:?}: {err}");
            }
        }
    }

    #[test]
    fn loss_ordering_per_step() {
        let ex = example();
        let learner = Learner::new(tiny(CellKind::Gru), Vocab::build([&ex]));
        let enc = learner.encode(&ex).unwrap();
        for seed in 0..5 {
            let params = learner.init_params(seed);
            let p = learner.step_losses(&params, &enc, LossKind::Pointer).unwrap();
            let m = learner.step_losses(&params, &enc, LossKind::Max).unwrap();
            let s = learner.step_losses(&params, &enc, LossKind::Sum).unwrap();
            for i in 0..p.len() {
                assert!(p[i] >= m[i] - 1e-12 && m[i] >= s[i] - 1e-12, "step {i}");
            }
            assert!(p.iter().sum::<f64>() > s.iter().sum::<f64>());
        }
    }

    #[test]
    fn distributions_normalised() {
        let ex = example();
        let learner = Learner::new(tiny(CellKind::Lstm), Vocab::build([&ex]));
        let params = learner.init_params(2);
        let enc = learner.encode(&ex).unwrap();
        let dists = learner.step_distributions(&params, &enc).unwrap();
        assert_eq!(dists.len(), enc.targets.len());
        for d in dists {
            let s: f64 = d.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{:?} sums to {s}", d.state);
            assert!(d.probs.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn greedy_output_is_grammatical() {
        let ex = example();
        let learner = Learner::new(tiny(CellKind::Gru), Vocab::build([&ex]));
        let enc = learner.encode(&ex).unwrap();
        for seed in 0..10 {
            let params = learner.init_params(seed);
            match learner.predict_tokens(&params, &enc) {
                Ok(tokens) => {
                    let q = query_from_decode(&tokens).unwrap();
                    assert_eq!(q.table, ex.table_id);
                }
                Err(LearnerError::Truncated(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn overfits_single_example() {
        let ex = example();
        let learner = Learner::new(
            LearnerConfig {
                embed_dim: 8,
                hidden_dim: 12,
                ..LearnerConfig::desk()
            },
            Vocab::build([&ex]),
        );
        let mut params = learner.init_params(0);
        let enc = learner.encode(&ex).unwrap();
        let first = learner.loss(&params, &enc).unwrap();
        let cfg = ptmaml_autodiff::OptimConfig {
            learning_rate: 0.3,
            noise_eta: 0.0,
            ..Default::default()
        };
        let mut opt = ptmaml_autodiff::Optimizer::new(cfg, &params);
        for _ in 0..150 {
            let (_, g) = learner.loss_and_grad(&params, &enc).unwrap();
            opt.step(&mut params, g);
        }
        let last = learner.loss(&params, &enc).unwrap();
        assert!(last < first * 0.05, "{first} -> {last}");
        let q = learner.predict_greedy(&params, &enc).unwrap();
        assert!(crate::sql::logical_form_match(&q, &ex.gold));
    }

    #[test]
    fn layout_mismatch_detected() {
        let ex = example();
        let a = Learner::new(tiny(CellKind::Gru), Vocab::build([&ex]));
        let b = Learner::new(tiny(CellKind::Lstm), Vocab::build([&ex]));
        assert!(matches!(a.check_params(&b.init_params(0)), Err(LearnerError::Layout(_))));
    }
}

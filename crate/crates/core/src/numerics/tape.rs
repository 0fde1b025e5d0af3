//! Minimal reverse-mode differentiation tape.
//!
//! Values are computed eagerly as nodes are recorded; `backward` walks
//! the arena in reverse creation order, which is a valid topological
//! order because every operand precedes its consumers. Only the vector
//! and matrix-vector operations the models actually use are provided.

use super::{log_softmax, softmax, NumericsError, ParamGrads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Constant,
    Param {
        slot: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Row {
        m: NodeId,
        row: usize,
        cols: usize,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    SumScalars {
        xs: Vec<NodeId>,
    },
    /// -log softmax(logits)[target]; `probs` caches the forward softmax.
    CrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
    /// KL(teacher || softmax(logits)); `probs` caches the forward softmax.
    KlToSoftmax {
        logits: NodeId,
        teacher: Vec<f64>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Floor applied to probabilities inside logarithms of the KL loss.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Leaf holding a copy of the parameter in `slot`; gradients flow
    /// back to that slot in [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, slot: usize) -> NodeId {
        let value = store.tensor(slot).data().to_vec();
        self.push(value, Op::Param { slot })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "add length mismatch");
        let value = va.iter().zip(vb.iter()).map(|(x, y)| x + y).collect();
        self.push(value, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "mul length mismatch");
        let value = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
        self.push(value, Op::Mul { a, b })
    }

    /// y = W x where node `w` holds a row-major (rows x cols) matrix.
    pub fn matvec(&mut self, w: NodeId, rows: usize, cols: usize, x: NodeId) -> NodeId {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        assert_eq!(wv.len(), rows * cols, "matvec matrix size");
        assert_eq!(xv.len(), cols, "matvec vector size");
        let value = super::matvec(wv, rows, cols, xv);
        self.push(value, Op::MatVec { w, x, rows, cols })
    }

    /// Row `row` of the (rows x cols) matrix in node `m`.
    pub fn row(&mut self, m: NodeId, row: usize, cols: usize) -> NodeId {
        let mv = &self.nodes[m.0].value;
        assert!((row + 1) * cols <= mv.len(), "row out of range");
        let value = mv[row * cols..(row + 1) * cols].to_vec();
        self.push(value, Op::Row { m, row, cols })
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.nodes[a.0].value.clone();
        value.extend_from_slice(&self.nodes[b.0].value);
        self.push(value, Op::Concat { a, b })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(value, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(value, Op::Tanh { x })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(value, Op::Scale { x, factor })
    }

    pub fn sum_scalars(&mut self, xs: Vec<NodeId>) -> NodeId {
        let total: f64 = xs.iter().map(|id| self.scalar(*id)).sum();
        self.push(vec![total], Op::SumScalars { xs })
    }

    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        target: usize,
    ) -> Result<NodeId, NumericsError> {
        let lv = &self.nodes[logits.0].value;
        assert!(target < lv.len(), "cross_entropy target out of range");
        let log_probs = log_softmax(lv)?;
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let loss = -log_probs[target];
        Ok(self.push(
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// KL(teacher || softmax(logits)). Zero-probability teacher entries
    /// contribute nothing; predicted probabilities are floored at 1e-12
    /// inside the logarithm.
    pub fn kl_to_softmax(
        &mut self,
        logits: NodeId,
        teacher: &[f64],
    ) -> Result<NodeId, NumericsError> {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.len(), teacher.len(), "kl_to_softmax length mismatch");
        let probs = softmax(lv)?;
        let mut loss = 0.0;
        for (p, q) in teacher.iter().zip(probs.iter()) {
            if *p > 0.0 {
                loss += p * (p.ln() - q.max(PROB_FLOOR).ln());
            }
        }
        Ok(self.push(
            vec![loss],
            Op::KlToSoftmax {
                logits,
                teacher: teacher.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from the scalar node `root`, accumulating parameter
    /// gradients into a buffer aligned with `store`.
    pub fn backward(&self, root: NodeId, store: &ParamStore) -> ParamGrads {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root not scalar"
        );
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[root.0] = vec![1.0];
        let mut out = ParamGrads::zeros_like(store);

        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let touch = |grads: &mut Vec<Vec<f64>>, id: NodeId, len: usize| {
                if grads[id.0].is_empty() {
                    grads[id.0] = vec![0.0; len];
                }
            };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param { slot } => {
                    let acc = out.slot_mut(*slot);
                    for (a, v) in acc.iter_mut().zip(g.iter()) {
                        *a += v;
                    }
                }
                Op::Add { a, b } => {
                    touch(&mut grads, *a, g.len());
                    touch(&mut grads, *b, g.len());
                    for (k, v) in g.iter().enumerate() {
                        grads[a.0][k] += v;
                        grads[b.0][k] += v;
                    }
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    touch(&mut grads, *a, g.len());
                    touch(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        grads[a.0][k] += g[k] * vb[k];
                        grads[b.0][k] += g[k] * va[k];
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    touch(&mut grads, *w, rows * cols);
                    touch(&mut grads, *x, *cols);
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let base = r * cols;
                        for c in 0..*cols {
                            grads[w.0][base + c] += gr * xv[c];
                            grads[x.0][c] += gr * wv[base + c];
                        }
                    }
                }
                Op::Row { m, row, cols } => {
                    let len = self.nodes[m.0].value.len();
                    touch(&mut grads, *m, len);
                    let base = row * cols;
                    for (k, v) in g.iter().enumerate() {
                        grads[m.0][base + k] += v;
                    }
                }
                Op::Concat { a, b } => {
                    let la = self.nodes[a.0].value.len();
                    let lb = self.nodes[b.0].value.len();
                    touch(&mut grads, *a, la);
                    touch(&mut grads, *b, lb);
                    for k in 0..la {
                        grads[a.0][k] += g[k];
                    }
                    for k in 0..lb {
                        grads[b.0][k] += g[la + k];
                    }
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[i].value;
                    touch(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        grads[x.0][k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].value;
                    touch(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        grads[x.0][k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Scale { x, factor } => {
                    touch(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        grads[x.0][k] += g[k] * factor;
                    }
                }
                Op::SumScalars { xs } => {
                    for id in xs {
                        touch(&mut grads, *id, 1);
                        grads[id.0][0] += g[0];
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    touch(&mut grads, *logits, probs.len());
                    for (k, p) in probs.iter().enumerate() {
                        let delta = if k == *target { 1.0 } else { 0.0 };
                        grads[logits.0][k] += g[0] * (p - delta);
                    }
                }
                Op::KlToSoftmax {
                    logits,
                    teacher,
                    probs,
                } => {
                    touch(&mut grads, *logits, probs.len());
                    for k in 0..probs.len() {
                        grads[logits.0][k] += g[0] * (probs[k] - teacher[k]);
                    }
                }
            }
        }
        out
    }
}

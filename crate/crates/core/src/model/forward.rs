use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;

use super::{tables, Model};
use crate::error::{Error, Result};
use crate::featureizer::{FeatureFrame, TrainingWindow};
use crate::numerics::{sigmoid, AttentionMask, BoolMatrix, Graph, NodeId, RowSource, Scalar, Tensor, LAYER_NORM_EPS};

/// Which decoder outputs reach the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// The final slot of each window (the target interaction).
    Last,
    /// Every non-pad slot.
    All,
}

/// Parameter nodes of one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    nodes: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[rows.len(), 1]` logits.
    pub logits: NodeId,
    /// `(window, slot)` of every logit row.
    pub rows: Vec<(usize, usize)>,
}

/// Slot `i` may attend to slot `j` iff `j <= i` and `j` is not padding.
pub fn causal_mask(pads: &[bool]) -> BoolMatrix {
    let n = pads.len();
    BoolMatrix::from_fn(n, n, |i, j| j <= i && !pads[j])
}

fn index_of(table: &str, frame: &FeatureFrame, slot: usize) -> usize {
    (match table {
        "question" => frame.question,
        "part" => frame.category,
        "hour" => frame.hour,
        "weekday" => frame.weekday,
        "position" => slot as u32,
        "session_position" => frame.session_position.saturating_sub(1),
        "correctness" => frame.correct,
        "elapsed" => frame.elapsed,
        "on_time" => frame.on_time,
        "dropout" => frame.dropout,
        other => unreachable!("unknown embedding table {other}"),
    }) as usize
}

struct Pass<'a, 'r, T: Scalar> {
    g: &'a mut Graph<T>,
    bound: &'a Bound,
    heads: usize,
    dropout: f64,
    rng: Option<&'r mut dyn RngCore>,
    mask: Arc<AttentionMask>,
}

impl<T: Scalar> Pass<'_, '_, T> {
    fn p(&self, name: &str) -> Result<NodeId> {
        self.bound.get(name)
    }

    fn drop(&mut self, x: NodeId) -> NodeId {
        match self.rng.as_deref_mut() {
            Some(rng) => self.g.dropout(x, self.dropout, rng),
            None => x,
        }
    }

    fn attention(&mut self, prefix: &str, xq: NodeId, xkv: NodeId) -> Result<NodeId> {
        let q = self.g.matmul(xq, self.p(&format!("{prefix}.wq"))?)?;
        let k = self.g.matmul(xkv, self.p(&format!("{prefix}.wk"))?)?;
        let v = self.g.matmul(xkv, self.p(&format!("{prefix}.wv"))?)?;
        let a = self.g.attention(q, k, v, self.heads, self.mask.clone())?;
        self.g.matmul(a, self.p(&format!("{prefix}.wo"))?)
    }

    fn ffn(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let h = self.g.matmul(x, self.p(&format!("{prefix}.w1"))?)?;
        let h = self.g.add_row(h, self.p(&format!("{prefix}.b1"))?)?;
        let h = self.g.relu(h);
        let y = self.g.matmul(h, self.p(&format!("{prefix}.w2"))?)?;
        self.g.add_row(y, self.p(&format!("{prefix}.b2"))?)
    }

    /// `LayerNorm(x + Dropout(y))`.
    fn residual(&mut self, prefix: &str, x: NodeId, y: NodeId) -> Result<NodeId> {
        let y = self.drop(y);
        let s = self.g.add(x, y)?;
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        self.g.layer_norm(s, gamma, beta, T::of(LAYER_NORM_EPS))
    }
}

impl<T: Scalar> Model<T> {
    /// Adds every parameter to `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let nodes = self
            .params
            .iter()
            .map(|(name, t)| {
                let id = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.to_string(), id)
            })
            .collect();
        Bound { nodes }
    }

    fn embed(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        windows: &[&TrainingWindow],
        encoder: bool,
        skip_position: bool,
    ) -> Result<Option<NodeId>> {
        let side = if encoder { "e" } else { "l" };
        let mut acc: Option<NodeId> = None;
        for (table, size) in tables(&self.spec.features, &self.spec.sizes, encoder) {
            if skip_position && table == "position" {
                continue;
            }
            let idx = windows
                .iter()
                .flat_map(|w| {
                    w.frames.iter().enumerate().map(move |(i, f)| match f {
                        Some(f) => index_of(table, f, i),
                        None => size as usize,
                    })
                })
                .collect();
            let name = format!("emb.{side}.{table}");
            let e = g.gather(bound.get(&name)?, idx, &name)?;
            acc = Some(match acc {
                Some(a) => g.add(a, e)?,
                None => e,
            });
        }
        Ok(acc)
    }

    /// Summed question-side (`encoder`) or response-side embeddings of every
    /// slot, `[windows·seq_size, d_model]`, before the decoder shift.
    pub fn embeddings(&self, windows: &[&TrainingWindow], encoder: bool) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        match self.embed(&mut g, &bound, windows, encoder, false)? {
            Some(x) => Ok(g.value(x).clone()),
            None => Err(Error::Config("feature set has no embeddings on this side".into())),
        }
    }

    /// Records the network on `windows` and returns the head logits.
    ///
    /// Dropout is active iff `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        windows: &[&TrainingWindow],
        readout: Readout,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward> {
        let cfg = &self.spec.config;
        let n = cfg.seq_size;
        if windows.is_empty() {
            return Err(Error::Contract("forward needs at least one window".into()));
        }
        for w in windows {
            if w.len() != n {
                return Err(Error::Dimension {
                    op: "forward",
                    left: vec![w.len()],
                    right: vec![n],
                });
            }
            if w.first_real() == n {
                return Err(Error::Contract("window has no real interaction".into()));
            }
        }
        let masks: Vec<BoolMatrix> = windows.iter().map(|w| causal_mask(&w.pad_flags())).collect();
        let pads: Vec<bool> = windows.iter().flat_map(|w| w.pad_flags()).collect();
        let mask = Arc::new(AttentionMask::new(&masks, pads.clone())?);

        let enc_in = self
            .embed(g, bound, windows, true, false)?
            .ok_or_else(|| Error::Config("encoder has no features".into()))?;
        let responses = match self.embed(g, bound, windows, false, true)? {
            Some(x) => x,
            None => g.constant(Tensor::zeros(&[windows.len() * n, cfg.d_model])),
        };
        let mut plan = Vec::with_capacity(windows.len() * n);
        for (b, w) in windows.iter().enumerate() {
            let first = w.first_real();
            for i in 0..n {
                plan.push(if i < first {
                    RowSource::Row(b * n + i)
                } else if i == first {
                    RowSource::Start
                } else {
                    RowSource::Row(b * n + i - 1)
                });
            }
        }
        let mut dec_in = g.compose_rows(responses, bound.get("start_token")?, plan)?;
        if self.spec.features.decoder().contains(&crate::featureizer::Feature::Position) {
            let size = self.spec.sizes.position as usize;
            let idx = pads
                .iter()
                .enumerate()
                .map(|(r, &pad)| if pad { size } else { r % n })
                .collect();
            let pos = g.gather(bound.get("emb.l.position")?, idx, "emb.l.position")?;
            dec_in = g.add(dec_in, pos)?;
        }

        let mut pass = Pass {
            g,
            bound,
            heads: cfg.heads,
            dropout: cfg.dropout,
            rng,
            mask,
        };
        let mut x = pass.drop(enc_in);
        for k in 0..cfg.layers {
            let a = pass.attention(&format!("enc.{k}.self_attn"), x, x)?;
            x = pass.residual(&format!("enc.{k}.ln1"), x, a)?;
            let f = pass.ffn(&format!("enc.{k}.ffn"), x)?;
            x = pass.residual(&format!("enc.{k}.ln2"), x, f)?;
        }
        let memory = x;
        let mut y = pass.drop(dec_in);
        for k in 0..cfg.layers {
            let a = pass.attention(&format!("dec.{k}.self_attn"), y, y)?;
            y = pass.residual(&format!("dec.{k}.ln1"), y, a)?;
            let c = pass.attention(&format!("dec.{k}.cross_attn"), y, memory)?;
            y = pass.residual(&format!("dec.{k}.ln2"), y, c)?;
            let f = pass.ffn(&format!("dec.{k}.ffn"), y)?;
            y = pass.residual(&format!("dec.{k}.ln3"), y, f)?;
        }

        let rows: Vec<(usize, usize)> = match readout {
            Readout::Last => (0..windows.len()).map(|b| (b, n - 1)).collect(),
            Readout::All => (0..windows.len() * n)
                .filter(|&r| !pads[r])
                .map(|r| (r / n, r % n))
                .collect(),
        };
        let g = pass.g;
        let picked = g.select_rows(y, rows.iter().map(|&(b, i)| b * n + i).collect())?;
        let z = g.matmul(picked, bound.get("head.weight")?)?;
        let logits = g.add_row(z, bound.get("head.bias")?)?;
        Ok(Forward { logits, rows })
    }

    /// Dropout probability of the target (last) interaction of each window.
    pub fn predict(&self, windows: &[TrainingWindow]) -> Result<Vec<f64>> {
        const CHUNK: usize = 256;
        let parts: Vec<Vec<f64>> = windows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let refs: Vec<&TrainingWindow> = chunk.iter().collect();
                let mut g = Graph::new();
                let bound = self.bind(&mut g, false);
                let out = self.forward(&mut g, &bound, &refs, Readout::Last, None)?;
                Ok(g.value(out.logits).data().iter().map(|&z| sigmoid(z).as_f64()).collect())
            })
            .collect::<Result<_>>()?;
        Ok(parts.concat())
    }

    /// Dropout probability at every slot of one window; pad slots are `None`.
    pub fn predict_positions(&self, window: &TrainingWindow) -> Result<Vec<Option<f64>>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let out = self.forward(&mut g, &bound, &[window], Readout::All, None)?;
        let mut probs = vec![None; window.len()];
        for (k, &(_, slot)) in out.rows.iter().enumerate() {
            probs[slot] = Some(sigmoid(g.value(out.logits).data()[k]).as_f64());
        }
        Ok(probs)
    }
}

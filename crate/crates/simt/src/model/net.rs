//! Network parameters and the batched (teacher-forced) training forward pass.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{route, ModelConfig};
use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::ndgrad::{concat_last, Tensor};

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()
}

pub(crate) struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
}

impl Linear {
    fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear {
        Linear {
            w: Tensor::param(xavier(rng, input, output), &[input, output]),
            b: Tensor::param(vec![0.0; output], &[output]),
        }
    }

    fn zero_output(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear {
        // burn the same number of rng draws as new() so initialization stays
        // aligned whether or not a projection starts at zero
        let _ = xavier(rng, input, output);
        Linear {
            w: Tensor::param(vec![0.0; input * output], &[input, output]),
            b: Tensor::param(vec![0.0; output], &[output]),
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match x.rank() {
            2 => x.matmul(&self.w)?.add(&self.b),
            3 => {
                let s = x.shape();
                let flat = x.reshape(&[s[0] * s[1], s[2]])?;
                let y = flat.matmul(&self.w)?.add(&self.b)?;
                y.reshape(&[s[0], s[1], self.b.numel()])
            }
            _ => Err(Error::ShapeMismatch {
                op: "linear",
                lhs: x.shape(),
                rhs: self.w.shape(),
            }),
        }
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub(crate) struct Norm {
    pub g: Tensor,
    pub b: Tensor,
}

impl Norm {
    fn new(dim: usize) -> Norm {
        Norm {
            g: Tensor::param(vec![1.0; dim], &[dim]),
            b: Tensor::param(vec![0.0; dim], &[dim]),
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.g, &self.b, 1e-5)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.g"), self.g.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub(crate) struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> MultiHeadAttention {
        MultiHeadAttention {
            wq: Linear::new(rng, dim, dim),
            wk: Linear::new(rng, dim, dim),
            wv: Linear::new(rng, dim, dim),
            wo: Linear::new(rng, dim, dim),
            heads,
        }
    }

    /// Batched attention with an additive mask broadcastable onto the
    /// per-head score shape `[B, Tq, Tk]`.
    pub(crate) fn apply(&self, q_in: &Tensor, kv_in: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let q = self.wq.apply(q_in)?;
        let k = self.wk.apply(kv_in)?;
        let v = self.wv.apply(kv_in)?;
        let dim = *q.shape().last().unwrap();
        let dk = dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut ctx = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow_last(h * dk, dk)?;
            let kh = k.narrow_last(h * dk, dk)?;
            let vh = v.narrow_last(h * dk, dk)?;
            let scores = qh.matmul(&kh.transpose_last2()?)?.scale(scale).add(mask)?;
            let attn = scores.softmax(scores.rank() - 1)?;
            ctx.push(attn.matmul(&vh)?);
        }
        self.wo.apply(&concat_last(&ctx)?)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.wq.params(&format!("{prefix}.wq"), out);
        self.wk.params(&format!("{prefix}.wk"), out);
        self.wv.params(&format!("{prefix}.wv"), out);
        self.wo.params(&format!("{prefix}.wo"), out);
    }
}

pub(crate) struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    fn new(rng: &mut ChaCha8Rng, dim: usize, hidden: usize) -> FeedForward {
        FeedForward {
            w1: Linear::new(rng, dim, hidden),
            w2: Linear::new(rng, hidden, dim),
        }
    }

    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.w2.apply(&self.w1.apply(x)?.relu())
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.w1.params(&format!("{prefix}.w1"), out);
        self.w2.params(&format!("{prefix}.w2"), out);
    }
}

/// Residual bottleneck adapter: layer norm, down-projection, rectifier,
/// up-projection. The up-projection starts at zero so a freshly inserted
/// adapter is the identity map on the backbone function.
pub(crate) struct Adapter {
    pub norm: Norm,
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    fn new(rng: &mut ChaCha8Rng, dim: usize, bottleneck: usize) -> Adapter {
        Adapter {
            norm: Norm::new(dim),
            down: Linear::new(rng, dim, bottleneck),
            up: Linear::zero_output(rng, bottleneck, dim),
        }
    }

    /// Pre-residual adapter output A(h); the caller adds the residual.
    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.up.apply(&self.down.apply(&self.norm.apply(x)?)?.relu())
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.norm.params(&format!("{prefix}.norm"), out);
        self.down.params(&format!("{prefix}.down"), out);
        self.up.params(&format!("{prefix}.up"), out);
    }
}

pub(crate) struct EncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: Norm,
    pub ffn: FeedForward,
    pub norm2: Norm,
}

pub(crate) struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: Norm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: Norm,
    pub ffn: FeedForward,
    pub norm3: Norm,
    /// One adapter per adapter-lagging entry, or None when this layer does
    /// not carry adapters.
    pub adapters: Option<Vec<Adapter>>,
}

/// The full streaming translation model.
pub struct SimtModel {
    pub config: ModelConfig,
    pub(crate) src_embed: Tensor, // [V_src, D]
    pub(crate) tgt_embed: Tensor, // [V_tgt, D] (also the output projection)
    pub(crate) pos: Vec<f64>,     // [max_positions, D] sinusoidal table
    pub(crate) enc_layers: Vec<EncoderLayer>,
    pub(crate) dec_layers: Vec<DecoderLayer>,
}

fn sinusoidal_table(max_positions: usize, dim: usize) -> Vec<f64> {
    let mut table = vec![0.0; max_positions * dim];
    for p in 0..max_positions {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            table[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    table
}

pub(crate) fn dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    x.mul(&Tensor::from_vec(mask, &x.shape()))
}

impl SimtModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<SimtModel> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let std = 1.0 / (d as f64).sqrt();
        let src_embed = Tensor::param(
            (0..config.src_vocab * d).map(|_| normal(&mut rng, std)).collect(),
            &[config.src_vocab, d],
        );
        let tgt_embed = Tensor::param(
            (0..config.tgt_vocab * d).map(|_| normal(&mut rng, std)).collect(),
            &[config.tgt_vocab, d],
        );
        let enc_layers = (0..config.num_layers)
            .map(|_| EncoderLayer {
                self_attn: MultiHeadAttention::new(&mut rng, d, config.num_heads),
                norm1: Norm::new(d),
                ffn: FeedForward::new(&mut rng, d, config.ffn_dim),
                norm2: Norm::new(d),
            })
            .collect();
        let dec_layers = (0..config.num_layers)
            .map(|l| DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut rng, d, config.num_heads),
                norm1: Norm::new(d),
                cross_attn: MultiHeadAttention::new(&mut rng, d, config.num_heads),
                norm2: Norm::new(d),
                ffn: FeedForward::new(&mut rng, d, config.ffn_dim),
                norm3: Norm::new(d),
                adapters: config.adapter_layers.contains(&l).then(|| {
                    config
                        .adapter_lagging
                        .iter()
                        .map(|_| Adapter::new(&mut rng, d, config.adapter_bottleneck))
                        .collect()
                }),
            })
            .collect();
        let pos = sinusoidal_table(config.max_positions, d);
        Ok(SimtModel {
            config,
            src_embed,
            tgt_embed,
            pos,
            enc_layers,
            dec_layers,
        })
    }

    /// All parameters in a stable name order.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("src_embed".to_string(), self.src_embed.clone()));
        out.push(("tgt_embed".to_string(), self.tgt_embed.clone()));
        for (l, layer) in self.enc_layers.iter().enumerate() {
            layer.self_attn.params(&format!("enc.{l}.self"), &mut out);
            layer.norm1.params(&format!("enc.{l}.norm1"), &mut out);
            layer.ffn.params(&format!("enc.{l}.ffn"), &mut out);
            layer.norm2.params(&format!("enc.{l}.norm2"), &mut out);
        }
        for (l, layer) in self.dec_layers.iter().enumerate() {
            layer.self_attn.params(&format!("dec.{l}.self"), &mut out);
            layer.norm1.params(&format!("dec.{l}.norm1"), &mut out);
            layer.cross_attn.params(&format!("dec.{l}.cross"), &mut out);
            layer.norm2.params(&format!("dec.{l}.norm2"), &mut out);
            layer.ffn.params(&format!("dec.{l}.ffn"), &mut out);
            layer.norm3.params(&format!("dec.{l}.norm3"), &mut out);
            if let Some(adapters) = &layer.adapters {
                for (a, adapter) in adapters.iter().enumerate() {
                    let ka = self.config.adapter_lagging[a];
                    adapter.params(&format!("dec.{l}.adapter.{ka}"), &mut out);
                }
            }
        }
        out
    }

    pub fn is_adapter_param(name: &str) -> bool {
        name.contains(".adapter.")
    }

    /// Adapter parameters grouped by adapter-lagging index, for isolation checks.
    pub fn adapter_params_by_index(&self) -> Vec<Vec<(String, Tensor)>> {
        let mut groups = vec![Vec::new(); self.config.adapter_lagging.len()];
        for (name, t) in self.parameters() {
            if let Some(rest) = name.split(".adapter.").nth(1) {
                let ka: usize = rest.split('.').next().unwrap().parse().unwrap();
                let idx = self.config.adapter_lagging.iter().position(|&v| v == ka).unwrap();
                groups[idx].push((name, t));
            }
        }
        groups
    }

    /// Mark backbone parameters (everything but adapters) as frozen.
    pub fn freeze_backbone(&mut self) {
        self.config.backbone_frozen = true;
        for (name, t) in self.parameters() {
            if !Self::is_adapter_param(&name) {
                t.set_requires_grad(false);
            }
        }
    }

    pub(crate) fn pos_slice(&self, offset: usize, len: usize) -> Result<Tensor> {
        let d = self.config.embed_dim;
        if offset + len > self.config.max_positions {
            return Err(Error::Usage(format!(
                "sequence of length {} exceeds max_positions {}",
                offset + len,
                self.config.max_positions
            )));
        }
        Ok(Tensor::from_vec(
            self.pos[offset * d..(offset + len) * d].to_vec(),
            &[len, d],
        ))
    }

    /// Embed a padded id matrix `[rows, width]` into `[rows, width, D]` with
    /// the sqrt(d) scaling and positional signal.
    fn embed_sequence(
        &self,
        table: &Tensor,
        ids: &[usize],
        rows: usize,
        width: usize,
    ) -> Result<Tensor> {
        let d = self.config.embed_dim;
        let x = table
            .embed(ids)?
            .reshape(&[rows, width, d])?
            .scale((d as f64).sqrt());
        x.add(&self.pos_slice(0, width)?)
    }

    /// Run the causal (unidirectional) encoder over a padded batch.
    pub(crate) fn encode_batch(
        &self,
        src_ids: &[usize],
        rows: usize,
        width: usize,
        p_drop: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let mut x = self.embed_sequence(&self.src_embed, src_ids, rows, width)?;
        x = dropout(&x, p_drop, rng)?;
        let causal = causal_mask(width);
        for layer in &self.enc_layers {
            let attn = layer.self_attn.apply(&x, &x, &causal)?;
            x = layer.norm1.apply(&x.add(&dropout(&attn, p_drop, rng)?)?)?;
            let ff = layer.ffn.apply(&x)?;
            x = layer.norm2.apply(&x.add(&dropout(&ff, p_drop, rng)?)?)?;
        }
        Ok(x)
    }

    /// Teacher-forced loss of one batch under lagging `k` (Wait-k masks, one
    /// adapter column active). With a frozen backbone only adapter parameters
    /// receive gradients.
    pub fn forward_train(
        &self,
        batch: &Batch,
        k: usize,
        label_smoothing: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        self.forward_train_inner(batch, Some(k), label_smoothing, self.config.dropout, rng)
    }

    /// Same loss with full (unmasked) cross-attention over content + end
    /// marker; the offline full-sentence objective.
    pub fn forward_train_full_attention(
        &self,
        batch: &Batch,
        adapter_k: usize,
        label_smoothing: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        // None = no wait-k restriction; adapter still routed by adapter_k
        self.forward_train_masked(batch, None, adapter_k, label_smoothing, self.config.dropout, rng)
    }

    fn forward_train_inner(
        &self,
        batch: &Batch,
        k: Option<usize>,
        label_smoothing: f64,
        p_drop: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let adapter_k = k.unwrap_or(usize::MAX);
        self.forward_train_masked(batch, k, adapter_k, label_smoothing, p_drop, rng)
    }

    /// Teacher-forced loss value without dropout or gradient recording.
    pub fn eval_loss(&self, batch: &Batch, k: usize, label_smoothing: f64) -> Result<f64> {
        use rand::SeedableRng;
        let _g = crate::ndgrad::no_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout disabled; stream unused
        let loss = self.forward_train_inner(batch, Some(k), label_smoothing, 0.0, &mut rng)?;
        Ok(loss.item())
    }

    /// A new model sharing this backbone's weights but carrying freshly
    /// initialized adapters under a (possibly different) adapter config.
    pub fn with_fresh_adapters(
        &self,
        adapter_lagging: Vec<usize>,
        adapter_bottleneck: usize,
        adapter_layers: Vec<usize>,
        seed: u64,
    ) -> Result<SimtModel> {
        let config = ModelConfig {
            adapter_lagging,
            adapter_bottleneck,
            adapter_layers,
            backbone_frozen: false,
            ..self.config.clone()
        };
        let model = SimtModel::new(config, seed)?;
        let source: std::collections::HashMap<String, Tensor> =
            self.parameters().into_iter().collect();
        for (name, t) in model.parameters() {
            if SimtModel::is_adapter_param(&name) {
                continue;
            }
            let from = source.get(&name).ok_or_else(|| {
                Error::Usage(format!("backbone parameter {name} missing in source model"))
            })?;
            t.set_data(&from.to_vec());
        }
        Ok(model)
    }

    fn forward_train_masked(
        &self,
        batch: &Batch,
        k: Option<usize>,
        adapter_k: usize,
        label_smoothing: f64,
        p_drop: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if let Some(k) = k {
            if k == 0 {
                return Err(Error::Usage("lagging k must be at least 1".into()));
            }
        }
        let d = self.config.embed_dim;
        let (b, s, t) = (batch.size, batch.src_width, batch.tgt_width);

        let enc = self.encode_batch(&batch.src_ids, b, s, p_drop, rng)?;

        let mut x = self.embed_sequence(&self.tgt_embed, &batch.tgt_in, b, t)?;
        x = dropout(&x, p_drop, rng)?;
        let self_mask = causal_mask(t);
        let cross = cross_attention_mask(b, t, s, &batch.src_lens, k);
        let adapter_idx = if self.config.has_adapters() {
            Some(route(adapter_k, &self.config.adapter_lagging)?)
        } else {
            None
        };
        for layer in &self.dec_layers {
            let attn = layer.self_attn.apply(&x, &x, &self_mask)?;
            x = layer.norm1.apply(&x.add(&dropout(&attn, p_drop, rng)?)?)?;
            let ca = layer.cross_attn.apply(&x, &enc, &cross)?;
            x = layer.norm2.apply(&x.add(&dropout(&ca, p_drop, rng)?)?)?;
            let ff = layer.ffn.apply(&x)?;
            x = layer.norm3.apply(&x.add(&dropout(&ff, p_drop, rng)?)?)?;
            if let (Some(adapters), Some(idx)) = (&layer.adapters, adapter_idx) {
                x = adapters[idx].apply(&x)?.add(&x)?;
            }
        }
        let logits = x
            .reshape(&[b * t, d])?
            .matmul(&self.tgt_embed.transpose_last2()?)?;
        logits.cross_entropy_label_smoothed(&batch.tgt_out, &batch.tgt_mask, label_smoothing)
    }
}

/// Additive causal mask `[T, T]`: position i attends to positions <= i.
fn causal_mask(t: usize) -> Tensor {
    let mut m = vec![0.0; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            m[i * t + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::from_vec(m, &[t, t])
}

/// Additive cross-attention mask `[B, T, S]` implementing the wait-k schedule.
///
/// Target position t (1-based) of sentence i sees source content positions
/// `p < min(m_i, t+k-1)` plus the end-marker position `m_i` once the wait-k
/// reader would have run past the end (`t+k-1 > m_i`). `k = None` means full
/// visibility of content and end marker (offline attention).
fn cross_attention_mask(
    b: usize,
    t_width: usize,
    s_width: usize,
    src_lens: &[usize],
    k: Option<usize>,
) -> Tensor {
    let mut m = vec![f64::NEG_INFINITY; b * t_width * s_width];
    for (i, &mi) in src_lens.iter().enumerate() {
        for t in 1..=t_width {
            let (content, end_visible) = match k {
                Some(k) => {
                    let reach = t + k - 1;
                    (reach.min(mi), reach > mi)
                }
                None => (mi, true),
            };
            let row = &mut m[(i * t_width + t - 1) * s_width..(i * t_width + t) * s_width];
            for cell in row.iter_mut().take(content) {
                *cell = 0.0;
            }
            if end_visible {
                row[mi] = 0.0;
            }
        }
    }
    Tensor::from_vec(m, &[b, t_width, s_width])
}

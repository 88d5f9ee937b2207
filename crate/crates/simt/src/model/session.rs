//! Streaming inference: incremental encoding and the two decode drivers.
//!
//! `IncrementalDecoder` caches decoder hidden rows (each target position is
//! computed exactly once, at its own wait-k source visibility) and is the
//! fast path for fixed wait-k decoding. `RecomputeDecoder` re-runs the whole
//! target prefix at every query under the queried lagging, which is the
//! semantics the adaptive policy needs (the "wait-k view" of the current
//! prefix pair changes as the lagging changes) and doubles as the reference
//! implementation for streaming-equivalence checks.

use super::net::SimtModel;
use super::route;
use crate::error::{Error, Result};
use crate::ndgrad::{no_grad, Tensor};
use crate::policy::StreamDecoder;

/// Cached per-layer hidden rows of the source prefix consumed so far.
/// Appending never rewrites existing positions (causal encoder).
#[derive(Debug, Clone)]
pub struct EncoderState {
    /// `num_layers + 1` levels; level 0 holds embedded inputs, level `l`
    /// the output rows of encoder layer `l`. Flattened `[len, D]`.
    levels: Vec<Vec<f64>>,
    len: usize,
    content_len: usize,
    has_end: bool,
}

impl EncoderState {
    /// Positions stored, including the end-marker position when present.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Source content tokens consumed (the g(t) currency).
    pub fn content_len(&self) -> usize {
        self.content_len
    }

    pub fn has_end(&self) -> bool {
        self.has_end
    }

    /// Final-layer hidden state of position `i`.
    pub fn final_row(&self, i: usize) -> &[f64] {
        let d = self.row_dim();
        &self.levels[self.levels.len() - 1][i * d..(i + 1) * d]
    }

    fn row_dim(&self) -> usize {
        if self.len == 0 {
            0
        } else {
            self.levels[0].len() / self.len
        }
    }
}

impl SimtModel {
    /// Empty encoder state.
    pub fn encoder_state(&self) -> EncoderState {
        EncoderState {
            levels: vec![Vec::new(); self.config.num_layers + 1],
            len: 0,
            content_len: 0,
            has_end: false,
        }
    }

    /// Append one source content token. Previous positions are untouched.
    pub fn encode_append(&self, state: &mut EncoderState, token: usize) -> Result<()> {
        if state.has_end {
            return Err(Error::Usage("cannot append after the end marker".into()));
        }
        if token >= self.config.src_vocab {
            return Err(Error::InvalidInput(format!(
                "source token id {token} out of range for vocabulary of {}",
                self.config.src_vocab
            )));
        }
        self.encode_push(state, token)?;
        state.content_len += 1;
        Ok(())
    }

    /// Append the end-of-source marker as a final encoder position.
    pub fn encode_append_end(&self, state: &mut EncoderState) -> Result<()> {
        if state.has_end {
            return Err(Error::Usage("end marker already appended".into()));
        }
        self.encode_push(state, crate::corpus::EOS_ID)?;
        state.has_end = true;
        Ok(())
    }

    /// Encode a full sentence by repeated appends.
    pub fn encode_full(&self, tokens: &[usize], with_end: bool) -> Result<EncoderState> {
        let mut state = self.encoder_state();
        for &t in tokens {
            self.encode_append(&mut state, t)?;
        }
        if with_end {
            self.encode_append_end(&mut state)?;
        }
        Ok(state)
    }

    fn encode_push(&self, state: &mut EncoderState, token: usize) -> Result<()> {
        let _g = no_grad();
        let d = self.config.embed_dim;
        let i = state.len;
        let x0 = self
            .src_embed
            .embed(&[token])?
            .scale((d as f64).sqrt())
            .add(&self.pos_slice(i, 1)?)?;
        state.levels[0].extend_from_slice(&x0.to_vec());
        let mut x = x0;
        for (l, layer) in self.enc_layers.iter().enumerate() {
            // keys/values over positions 0..=i at this level
            let kv = Tensor::from_vec(state.levels[l].clone(), &[i + 1, d]);
            let zero_mask = Tensor::zeros(&[1, i + 1]);
            let attn = layer.self_attn.apply(&x, &kv, &zero_mask)?;
            x = layer.norm1.apply(&x.add(&attn)?)?;
            let ff = layer.ffn.apply(&x)?;
            x = layer.norm2.apply(&x.add(&ff)?)?;
            state.levels[l + 1].extend_from_slice(&x.to_vec());
        }
        state.len += 1;
        Ok(())
    }

    /// Final-layer encoder rows from the batched causal path (one-shot
    /// full-sentence encode). Used to cross-check incremental encoding.
    pub fn encode_oneshot_final(&self, tokens: &[usize], with_end: bool) -> Result<Vec<f64>> {
        let _g = no_grad();
        let mut ids = tokens.to_vec();
        if with_end {
            ids.push(crate::corpus::EOS_ID);
        }
        let width = ids.len();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0); // dropout off; rng unused
        let out = self.encode_batch(&ids, 1, width, 0.0, &mut rng)?;
        Ok(out.to_vec())
    }
}

/// Per-sentence record of adapter output norms (pre-residual), one entry per
/// adapter-carrying layer, averaged over recorded decode steps.
#[derive(Debug, Clone, Default)]
struct NormLog {
    sums: Vec<f64>,
    steps: usize,
}

impl NormLog {
    fn record(&mut self, per_layer: &[f64]) {
        if self.sums.is_empty() {
            self.sums = vec![0.0; per_layer.len()];
        }
        for (s, v) in self.sums.iter_mut().zip(per_layer) {
            *s += v;
        }
        self.steps += 1;
    }

    fn mean(&self) -> Option<Vec<f64>> {
        (self.steps > 0).then(|| self.sums.iter().map(|s| s / self.steps as f64).collect())
    }
}

/// Mean adapter norms over sentences: rows of `per_sentence` are per-layer
/// means; the result is their unweighted average.
pub fn mean_adapter_norms(per_sentence: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_sentence.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let layers = per_sentence[0].len();
    let mut out = vec![0.0; layers];
    for row in per_sentence {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o /= per_sentence.len() as f64;
    }
    Ok(out)
}

/// One decoder position computed under lagging `lag`: returns the new hidden
/// row at every level (level 0 = embedded input, level L = final output).
fn decode_position(
    model: &SimtModel,
    enc: &EncoderState,
    levels: &[Vec<f64>],
    t: usize,
    input_id: usize,
    lag: usize,
    mut norm_sink: Option<&mut Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    let _g = no_grad();
    let d = model.config.embed_dim;
    debug_assert!(t >= 1 && lag >= 1);

    let reach = t + lag - 1;
    if !enc.has_end() && enc.content_len() < reach {
        return Err(Error::Usage(format!(
            "insufficient encoder positions: step {t} at lagging {lag} needs {reach} \
             source tokens, only {} read and source not exhausted (policy bug)",
            enc.content_len()
        )));
    }
    let content_vis = reach.min(enc.content_len());
    let end_vis = enc.has_end() && reach > enc.content_len();
    let visible = content_vis + usize::from(end_vis);
    if visible == 0 {
        return Err(Error::Usage(
            "decode with no source positions read (policy bug)".into(),
        ));
    }

    let mut new_rows = Vec::with_capacity(model.config.num_layers + 1);
    let x0 = model
        .tgt_embed
        .embed(&[input_id])?
        .scale((d as f64).sqrt())
        .add(&model.pos_slice(t - 1, 1)?)?;
    new_rows.push(x0.to_vec());
    let mut x = x0;

    let adapter_idx = if model.config.has_adapters() {
        Some(route(lag, &model.config.adapter_lagging)?)
    } else {
        None
    };

    let enc_final = &enc.levels[enc.levels.len() - 1];
    let cross_kv = Tensor::from_vec(enc_final[..visible * d].to_vec(), &[visible, d]);
    let cross_mask = Tensor::zeros(&[1, visible]);

    for (l, layer) in model.dec_layers.iter().enumerate() {
        // self-attention over committed rows at this level plus the new row
        let mut kv_data = levels[l].clone();
        kv_data.extend_from_slice(&x.to_vec());
        let kv = Tensor::from_vec(kv_data, &[t, d]);
        let self_mask = Tensor::zeros(&[1, t]);
        let attn = layer.self_attn.apply(&x, &kv, &self_mask)?;
        x = layer.norm1.apply(&x.add(&attn)?)?;

        let ca = layer.cross_attn.apply(&x, &cross_kv, &cross_mask)?;
        x = layer.norm2.apply(&x.add(&ca)?)?;

        let ff = layer.ffn.apply(&x)?;
        x = layer.norm3.apply(&x.add(&ff)?)?;

        if let (Some(adapters), Some(idx)) = (&layer.adapters, adapter_idx) {
            let a_out = adapters[idx].apply(&x)?;
            if let Some(sink) = norm_sink.as_deref_mut() {
                let norm = a_out.with_data(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt());
                sink.push(norm);
            }
            x = a_out.add(&x)?;
        }
        new_rows.push(x.to_vec());
    }
    Ok(new_rows)
}

fn dist_from_row(model: &SimtModel, row: &[f64]) -> Result<Vec<f64>> {
    let _g = no_grad();
    let d = model.config.embed_dim;
    let h = Tensor::from_vec(row.to_vec(), &[1, d]);
    let logits = h.matmul(&model.tgt_embed.transpose_last2()?)?;
    Ok(logits.softmax(1)?.to_vec())
}

fn argmax(dist: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in dist.iter().enumerate() {
        if v > dist[best] {
            best = i;
        }
    }
    (best, dist[best])
}

/// Fixed wait-k decode driver: every target position is computed once, at its
/// own wait-k source visibility, and cached.
pub struct IncrementalDecoder<'m> {
    model: &'m SimtModel,
    enc: EncoderState,
    tokens: Vec<usize>,
    levels: Vec<Vec<f64>>,
    pending: Option<Pending>,
    norms: Option<NormLog>,
}

struct Pending {
    rows: Vec<Vec<f64>>,
    fingerprint: (usize, bool, usize, usize), // (content, end, lag, t)
}

impl<'m> IncrementalDecoder<'m> {
    pub fn new(model: &'m SimtModel) -> IncrementalDecoder<'m> {
        IncrementalDecoder {
            enc: model.encoder_state(),
            tokens: Vec::new(),
            levels: vec![Vec::new(); model.config.num_layers + 1],
            pending: None,
            norms: None,
            model,
        }
    }

    pub fn with_norm_recording(mut self) -> Self {
        self.norms = Some(NormLog::default());
        self
    }

    pub fn encoder(&self) -> &EncoderState {
        &self.enc
    }

    fn next_input(&self) -> usize {
        *self.tokens.last().unwrap_or(&crate::corpus::BOS_ID)
    }

    /// Full next-token distribution at lagging `lag`.
    pub fn query_dist(&mut self, lag: usize) -> Result<Vec<f64>> {
        let t = self.tokens.len() + 1;
        let mut sink = self.norms.is_some().then(Vec::new);
        let rows = decode_position(
            self.model,
            &self.enc,
            &self.levels,
            t,
            self.next_input(),
            lag,
            sink.as_mut(),
        )?;
        if let (Some(log), Some(sink)) = (&mut self.norms, sink) {
            log.record(&sink);
        }
        let dist = dist_from_row(self.model, rows.last().unwrap())?;
        self.pending = Some(Pending {
            rows,
            fingerprint: (self.enc.content_len(), self.enc.has_end(), lag, t),
        });
        Ok(dist)
    }

    /// Mean adapter norms recorded for this sentence, if enabled.
    pub fn sentence_norms(&self) -> Option<Vec<f64>> {
        self.norms.as_ref().and_then(NormLog::mean)
    }
}

impl StreamDecoder for IncrementalDecoder<'_> {
    fn read_token(&mut self, token: usize) -> Result<()> {
        self.model.encode_append(&mut self.enc, token)
    }

    fn read_end(&mut self) -> Result<()> {
        self.model.encode_append_end(&mut self.enc)
    }

    fn source_len(&self) -> usize {
        self.enc.content_len()
    }

    fn exhausted(&self) -> bool {
        self.enc.has_end()
    }

    fn target_len(&self) -> usize {
        self.tokens.len()
    }

    fn query(&mut self, lag: usize) -> Result<(usize, f64)> {
        Ok(argmax(&self.query_dist(lag)?))
    }

    fn commit(&mut self, token: usize) -> Result<()> {
        let t = self.tokens.len() + 1;
        let pending = self.pending.take().ok_or_else(|| {
            Error::Usage("commit without a preceding query".into())
        })?;
        let (content, end, _lag, pt) = pending.fingerprint;
        if pt != t || content != self.enc.content_len() || end != self.enc.has_end() {
            return Err(Error::Usage(
                "decoder state changed between query and commit".into(),
            ));
        }
        for (level, row) in self.levels.iter_mut().zip(&pending.rows) {
            level.extend_from_slice(row);
        }
        self.tokens.push(token);
        Ok(())
    }
}

/// Full-prefix recompute driver: every query re-runs the decoder over the
/// whole target prefix under the queried lagging.
pub struct RecomputeDecoder<'m> {
    model: &'m SimtModel,
    enc: EncoderState,
    tokens: Vec<usize>,
    norms: Option<NormLog>,
}

impl<'m> RecomputeDecoder<'m> {
    pub fn new(model: &'m SimtModel) -> RecomputeDecoder<'m> {
        RecomputeDecoder {
            enc: model.encoder_state(),
            tokens: Vec::new(),
            norms: None,
            model,
        }
    }

    pub fn with_norm_recording(mut self) -> Self {
        self.norms = Some(NormLog::default());
        self
    }

    pub fn encoder(&self) -> &EncoderState {
        &self.enc
    }

    pub fn query_dist(&mut self, lag: usize) -> Result<Vec<f64>> {
        let mut levels = vec![Vec::new(); self.model.config.num_layers + 1];
        let steps = self.tokens.len() + 1;
        let mut last_rows = None;
        let mut sink = self.norms.is_some().then(Vec::new);
        for t in 1..=steps {
            let input = if t == 1 {
                crate::corpus::BOS_ID
            } else {
                self.tokens[t - 2]
            };
            // norms are recorded for the queried position only
            let want_norms = t == steps;
            let rows = decode_position(
                self.model,
                &self.enc,
                &levels,
                t,
                input,
                lag,
                if want_norms { sink.as_mut() } else { None },
            )?;
            for (level, row) in levels.iter_mut().zip(&rows) {
                level.extend_from_slice(row);
            }
            last_rows = Some(rows);
        }
        if let (Some(log), Some(sink)) = (&mut self.norms, sink) {
            log.record(&sink);
        }
        dist_from_row(self.model, last_rows.unwrap().last().unwrap())
    }

    pub fn sentence_norms(&self) -> Option<Vec<f64>> {
        self.norms.as_ref().and_then(NormLog::mean)
    }
}

impl StreamDecoder for RecomputeDecoder<'_> {
    fn read_token(&mut self, token: usize) -> Result<()> {
        self.model.encode_append(&mut self.enc, token)
    }

    fn read_end(&mut self) -> Result<()> {
        self.model.encode_append_end(&mut self.enc)
    }

    fn source_len(&self) -> usize {
        self.enc.content_len()
    }

    fn exhausted(&self) -> bool {
        self.enc.has_end()
    }

    fn target_len(&self) -> usize {
        self.tokens.len()
    }

    fn query(&mut self, lag: usize) -> Result<(usize, f64)> {
        Ok(argmax(&self.query_dist(lag)?))
    }

    fn commit(&mut self, token: usize) -> Result<()> {
        self.tokens.push(token);
        Ok(())
    }
}

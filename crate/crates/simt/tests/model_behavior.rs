//! Behavioral contracts of the model: incremental/batched encoder agreement,
//! streaming equivalence, adapter isolation and identity, causality, and
//! checkpoint round-trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simt::corpus::{batch_corpus, generate, ParallelCorpus, Split, TaskKind, TaskSpec, Vocabulary};
use simt::model::{
    mean_adapter_norms, IncrementalDecoder, ModelConfig, RecomputeDecoder, SimtModel,
};
use simt::policy::{fixed_waitk_decode, StreamDecoder};
use simt::Error;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        src_vocab: 12,
        tgt_vocab: 12,
        embed_dim: 16,
        ffn_dim: 32,
        num_layers: 2,
        num_heads: 2,
        dropout: 0.0,
        adapter_lagging: vec![1, 3],
        adapter_bottleneck: 4,
        adapter_layers: vec![0, 1],
        backbone_frozen: false,
        max_positions: 64,
    }
}

fn tiny_model(seed: u64) -> SimtModel {
    SimtModel::new(tiny_config(), seed).unwrap()
}

/// Randomize every parameter (including the zero-initialized up-projections)
/// so gradient and equivalence tests see generic weights.
fn randomize(model: &SimtModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in model.parameters() {
        let n = t.numel();
        t.set_data(&(0..n).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>());
    }
}

fn random_sentence(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(4..vocab)).collect()
}

fn toy_batch(seed: u64) -> simt::corpus::Batch {
    let spec = TaskSpec {
        kind: TaskKind::Shift(2),
        vocab_size: 12,
        min_len: 4,
        max_len: 6,
        train_count: 6,
        valid_count: 1,
        test_count: 1,
        seed,
    };
    let data = generate(&spec).unwrap();
    let plan = batch_corpus(&data.train, &data.vocab, &data.vocab, 256, seed).unwrap();
    plan.batches()[0].clone()
}

// ---- encoder ----

#[test]
fn encode_append_equals_oneshot_causal_encode() {
    let model = tiny_model(3);
    randomize(&model, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for with_end in [false, true] {
        let tokens = random_sentence(&mut rng, 7, 12);
        let state = model.encode_full(&tokens, with_end).unwrap();
        let oneshot = model.encode_oneshot_final(&tokens, with_end).unwrap();
        let d = 16;
        assert_eq!(state.len(), tokens.len() + usize::from(with_end));
        for i in 0..state.len() {
            assert_eq!(
                state.final_row(i),
                &oneshot[i * d..(i + 1) * d],
                "row {i} diverges (with_end={with_end})"
            );
        }
    }
}

#[test]
fn encoder_prefix_states_are_exact_prefixes() {
    let model = tiny_model(4);
    randomize(&model, 31);
    let abc = vec![4, 5, 6];
    let abcd = vec![4, 5, 6, 7];
    let short = model.encode_full(&abc, false).unwrap();
    let long = model.encode_full(&abcd, false).unwrap();
    for i in 0..3 {
        assert_eq!(short.final_row(i), long.final_row(i));
    }
}

#[test]
fn encoder_empty_plus_token_has_length_one() {
    let model = tiny_model(5);
    let mut state = model.encoder_state();
    assert!(state.is_empty());
    model.encode_append(&mut state, 4).unwrap();
    assert_eq!(state.len(), 1);
    assert_eq!(state.content_len(), 1);
}

#[test]
fn encoder_causality_under_perturbation() {
    let model = tiny_model(6);
    randomize(&model, 32);
    let a = model.encode_full(&[4, 5, 6, 7], false).unwrap();
    let b = model.encode_full(&[4, 5, 9, 7], false).unwrap();
    for i in 0..2 {
        assert_eq!(a.final_row(i), b.final_row(i), "position {i} depends on the future");
    }
    assert_ne!(a.final_row(2), b.final_row(2));
}

#[test]
fn encoder_rejects_out_of_vocabulary_and_post_end_appends() {
    let model = tiny_model(7);
    let mut state = model.encoder_state();
    assert!(matches!(
        model.encode_append(&mut state, 99),
        Err(Error::InvalidInput(_))
    ));
    model.encode_append(&mut state, 4).unwrap();
    model.encode_append_end(&mut state).unwrap();
    assert!(model.encode_append(&mut state, 4).is_err());
    assert!(model.encode_append_end(&mut state).is_err());
}

// ---- decoding ----

#[test]
fn decode_distributions_sum_to_one() {
    let model = tiny_model(8);
    randomize(&model, 33);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let src = random_sentence(&mut rng, 6, 12);
        let mut session = IncrementalDecoder::new(&model);
        for &t in &src {
            session.read_token(t).unwrap();
        }
        session.read_end().unwrap();
        let dist = session.query_dist(3).unwrap();
        let sum: f64 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        assert!(dist.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn decode_is_deterministic() {
    let model = tiny_model(9);
    randomize(&model, 34);
    let src = vec![4, 5, 6, 7, 8];
    let run = || {
        let mut s = IncrementalDecoder::new(&model);
        fixed_waitk_decode(&mut s, &src, 2, None).unwrap()
    };
    let (tok1, trace1) = run();
    let (tok2, trace2) = run();
    assert_eq!(tok1, tok2);
    assert_eq!(trace1, trace2);
}

#[test]
fn full_read_decode_equals_full_sentence_decoding() {
    // once k >= |x| every step sees the whole source + end marker, so any
    // larger lagging produces the identical distribution
    let model = tiny_model(10);
    randomize(&model, 35);
    let src = vec![4, 5, 6, 7];
    let mut a = IncrementalDecoder::new(&model);
    let mut b = IncrementalDecoder::new(&model);
    for s in [&mut a, &mut b] {
        for &t in &src {
            s.read_token(t).unwrap();
        }
        s.read_end().unwrap();
    }
    let da = a.query_dist(src.len() + 1).unwrap();
    let db = b.query_dist(src.len() + 40).unwrap();
    assert_eq!(da, db);
}

#[test]
fn streaming_equivalence_incremental_vs_recompute() {
    let model = tiny_model(11);
    randomize(&model, 36);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [1usize, 2, 5, 64] {
        let src = random_sentence(&mut rng, 6, 12);
        let mut inc = IncrementalDecoder::new(&model);
        let mut rec = RecomputeDecoder::new(&model);
        let mut stream = src.iter();
        for step in 0..10 {
            let t = inc.target_len() + 1;
            while !inc.exhausted() && inc.source_len() < t + k - 1 {
                match stream.next() {
                    Some(&tok) => {
                        inc.read_token(tok).unwrap();
                        rec.read_token(tok).unwrap();
                    }
                    None => {
                        inc.read_end().unwrap();
                        rec.read_end().unwrap();
                    }
                }
            }
            let di = inc.query_dist(k).unwrap();
            let dr = rec.query_dist(k).unwrap();
            assert_eq!(di, dr, "k={k} step={step} distributions diverge");
            let next = di
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            inc.commit(next).unwrap();
            rec.commit(next).unwrap();
        }
    }
}

#[test]
fn decode_before_enough_source_is_a_policy_bug_error() {
    let model = tiny_model(12);
    let mut session = IncrementalDecoder::new(&model);
    session.read_token(4).unwrap();
    // step 1 at lagging 3 needs 3 source tokens; only 1 read, not exhausted
    assert!(matches!(session.query_dist(3), Err(Error::Usage(_))));
}

// ---- training-path contracts ----

#[test]
fn inactive_adapters_get_exactly_zero_gradients() {
    let model = tiny_model(13);
    randomize(&model, 37);
    let batch = toy_batch(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let loss = model.forward_train(&batch, 1, 0.1, &mut rng).unwrap();
    loss.backward().unwrap();
    let groups = model.adapter_params_by_index();
    // k = 1 routes to adapter 0; adapter 1 (lagging 3) must be untouched
    for (name, t) in &groups[1] {
        assert!(t.grad().is_none(), "{name} should be unreached");
        assert!(t.grad_or_zeros().iter().all(|g| *g == 0.0));
    }
    let touched = groups[0].iter().any(|(_, t)| {
        t.grad().map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false)
    });
    assert!(touched, "active adapter received no gradient");
}

#[test]
fn frozen_backbone_receives_no_gradients() {
    let mut model = tiny_model(14);
    randomize(&model, 38);
    model.freeze_backbone();
    let batch = toy_batch(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let loss = model.forward_train(&batch, 3, 0.1, &mut rng).unwrap();
    loss.backward().unwrap();
    let mut adapter_grads = 0usize;
    for (name, t) in model.parameters() {
        if SimtModel::is_adapter_param(&name) {
            if t.grad().is_some() {
                adapter_grads += 1;
            }
        } else {
            assert!(t.grad().is_none(), "frozen {name} received a gradient");
        }
    }
    assert!(adapter_grads > 0);
}

#[test]
fn large_k_loss_equals_unmasked_full_attention_loss() {
    let model = tiny_model(15);
    randomize(&model, 39);
    let batch = toy_batch(3);
    let k = batch.max_src_len + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let masked = model.forward_train(&batch, k, 0.1, &mut rng).unwrap().item();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let full = model
        .forward_train_full_attention(&batch, k, 0.1, &mut rng)
        .unwrap()
        .item();
    assert_eq!(masked, full);
}

#[test]
fn fresh_adapters_are_the_identity_map() {
    let base_cfg = ModelConfig { adapter_layers: vec![], ..tiny_config() };
    let base = SimtModel::new(base_cfg, 21).unwrap();
    let adapted = base.with_fresh_adapters(vec![1, 3], 4, vec![0, 1], 99).unwrap();
    let src = vec![4, 5, 6, 7, 8];
    let mut a = IncrementalDecoder::new(&base);
    let mut b = IncrementalDecoder::new(&adapted);
    for s in [&mut a as &mut dyn StreamDecoder, &mut b as &mut dyn StreamDecoder] {
        for &t in &src {
            s.read_token(t).unwrap();
        }
        s.read_end().unwrap();
    }
    assert_eq!(a.query_dist(2).unwrap(), b.query_dist(2).unwrap());
}

// ---- adapter norm instrumentation ----

#[test]
fn zero_initialized_adapters_give_zero_norms() {
    let model = tiny_model(16); // up-projections start at zero
    let src = vec![4, 5, 6, 7];
    let mut session = IncrementalDecoder::new(&model).with_norm_recording();
    fixed_waitk_decode(&mut session, &src, 2, Some(6)).unwrap();
    let norms = session.sentence_norms().unwrap();
    assert_eq!(norms.len(), 2);
    assert!(norms.iter().all(|n| *n == 0.0), "{norms:?}");
}

#[test]
fn doubling_up_projection_doubles_norms() {
    let model = tiny_model(17);
    randomize(&model, 40);
    let src = vec![4, 5, 6, 7, 8, 9];
    let record = |m: &SimtModel| {
        let mut session = IncrementalDecoder::new(m).with_norm_recording();
        fixed_waitk_decode(&mut session, &src, 3, Some(8)).unwrap();
        session.sentence_norms().unwrap()
    };
    let before = record(&model);
    assert!(before.iter().all(|n| *n >= 0.0));
    for (name, t) in model.parameters() {
        if name.contains(".adapter.") && name.ends_with(".up.w") {
            let doubled: Vec<f64> = t.to_vec().iter().map(|v| v * 2.0).collect();
            t.set_data(&doubled);
        }
        // biases of the up-projection are zero, so scaling weights alone
        // scales the pre-residual output linearly at the first decode step;
        // later steps change trajectory, so compare a single-step record
    }
    // re-record just the first query deterministically
    let mut s1 = IncrementalDecoder::new(&model).with_norm_recording();
    for &t in &src {
        s1.read_token(t).unwrap();
    }
    s1.read_end().unwrap();
    s1.query_dist(3).unwrap();
    let after_step = s1.sentence_norms().unwrap();

    let fresh = tiny_model(17);
    randomize(&fresh, 40);
    let mut s0 = IncrementalDecoder::new(&fresh).with_norm_recording();
    for &t in &src {
        s0.read_token(t).unwrap();
    }
    s0.read_end().unwrap();
    s0.query_dist(3).unwrap();
    let before_step = s0.sentence_norms().unwrap();

    for (b, a) in before_step.iter().zip(&after_step) {
        assert!((a - 2.0 * b).abs() < 1e-9, "{a} != 2*{b}");
    }
    // norms from the earlier full decode stay non-negative
    assert!(before.iter().all(|n| *n >= 0.0));
}

#[test]
fn empty_norm_aggregation_is_an_error() {
    assert!(matches!(mean_adapter_norms(&[]), Err(Error::EmptyTrace)));
}

// ---- checkpointing ----

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let model = tiny_model(18);
    randomize(&model, 41);
    let vocab = Vocabulary::from_tokens(&(0..8).map(|i| format!("t{i}")).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path, &vocab, &vocab).unwrap();
    let (loaded, sv, tv) = SimtModel::load(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    assert_eq!(sv.tokens(), vocab.tokens());
    assert_eq!(tv.tokens(), vocab.tokens());
    let orig: Vec<_> = model.parameters();
    let new: Vec<_> = loaded.parameters();
    assert_eq!(orig.len(), new.len());
    for ((n1, t1), (n2, t2)) in orig.iter().zip(&new) {
        assert_eq!(n1, n2);
        let (a, b) = (t1.to_vec(), t2.to_vec());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits(), "{n1} not bit-identical");
        }
    }
    // byte-identical when saved again
    let path2 = dir.path().join("model2.ckpt");
    loaded.save(&path2, &sv, &tv).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_rejects_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(SimtModel::load(&path).is_err());
}

// keep ParallelCorpus/Split linked into this test for the helper above
#[allow(dead_code)]
fn _unused(c: ParallelCorpus) -> Split {
    c.split
}

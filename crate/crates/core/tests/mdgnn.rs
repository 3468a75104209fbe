use memtrain_core::analysis::{synthetic_stream, SyntheticConfig};
use memtrain_core::event::{partition_batches, pending_stats};
use memtrain_core::mdgnn::{
    decode_link, embed, memory_update, message_fn, prepare_batches, process_batch, time_encoding,
    train_epoch, EmbeddingMode, MemoryUpdateSource,
};
use memtrain_core::numerics::Tensor;
use memtrain_core::{Event, EventStream, Hyperparams, MemoryStore, Model, TemporalBatch, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_hyper() -> Hyperparams {
    Hyperparams {
        memory_dim: 4,
        message_dim: 3,
        hidden_dim: 5,
        batch_size: 4,
        ..Hyperparams::default()
    }
}

fn random_stream(seed: u64, events: usize, vertices: usize, fdim: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let evs = (0..events)
        .map(|_| {
            t += rng.random_range(0.1..2.0);
            let src = rng.random_range(0..vertices);
            let mut dst = rng.random_range(0..vertices - 1);
            if dst >= src {
                dst += 1;
            }
            let f = (0..fdim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Event::positive(src, dst, t, f)
        })
        .collect();
    EventStream::new(evs, vertices, fdim).unwrap()
}

fn randomize(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let t = model.param(&name).unwrap();
        let data = (0..t.len()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let fresh = Tensor::new(t.rows(), t.cols(), data).unwrap();
        model.set_param(&name, fresh).unwrap();
    }
}

fn zero_all(model: &mut Model) {
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let (r, c) = model.param(&name).unwrap().shape();
        model.set_param(&name, Tensor::zeros(r, c)).unwrap();
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x·W + b` for a row vector, written out with loops.
fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|c| {
            b.get(0, c)
                + x.iter()
                    .enumerate()
                    .map(|(r, xr)| xr * w.get(r, c))
                    .sum::<f64>()
        })
        .collect()
}

fn reference_gru(model: &Model, s: &[f64], m: &[f64]) -> Vec<f64> {
    let p = |n: &str| model.param(n).unwrap();
    let sm: Vec<f64> = s.iter().chain(m).copied().collect();
    let z: Vec<f64> = affine(&sm, p("gru.wz"), p("gru.bz"))
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = affine(&sm, p("gru.wr"), p("gru.br"))
        .into_iter()
        .map(sigmoid)
        .collect();
    let rs: Vec<f64> = r
        .iter()
        .zip(s)
        .map(|(a, b)| a * b)
        .chain(m.iter().copied())
        .collect();
    let n: Vec<f64> = affine(&rs, p("gru.wn"), p("gru.bn"))
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..s.len())
        .map(|k| (1.0 - z[k]) * s[k] + z[k] * n[k])
        .collect()
}

fn reference_message(model: &Model, si: &[f64], sj: &[f64], f: &[f64], dt: f64) -> Vec<f64> {
    let p = |n: &str| model.param(n).unwrap();
    let x: Vec<f64> = si
        .iter()
        .chain(sj)
        .chain(f)
        .copied()
        .chain([(1.0 + dt).ln()])
        .collect();
    let h: Vec<f64> = affine(&x, p("msg.w1"), p("msg.b1"))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    affine(&h, p("msg.w2"), p("msg.b2"))
        .into_iter()
        .map(f64::tanh)
        .collect()
}

fn reference_decode(model: &Model, hi: &[f64], hj: &[f64]) -> f64 {
    let p = |n: &str| model.param(n).unwrap();
    let x: Vec<f64> = hi.iter().chain(hj).copied().collect();
    let h: Vec<f64> = affine(&x, p("dec.w1"), p("dec.b1"))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    sigmoid(affine(&h, p("dec.w2"), p("dec.b2"))[0])
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn gru_matches_reference_cell() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        randomize(&mut model, trial);
        let s = random_vec(&mut rng, 4);
        let m = random_vec(&mut rng, 3);
        let got = memory_update(&model, &s, &m).unwrap();
        let want = reference_gru(&model, &s, &m);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gru_zero_case_and_dims() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    zero_all(&mut model);
    let out = memory_update(&model, &[0.0; 4], &[0.0; 3]).unwrap();
    assert!(out.data().iter().all(|&x| x == 0.0));
    assert!(memory_update(&model, &[0.0; 3], &[0.0; 3]).is_err());
    assert!(memory_update(&model, &[0.0; 4], &[0.0; 4]).is_err());
}

#[test]
fn message_matches_reference_forward() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        randomize(&mut model, 100 + trial);
        let si = random_vec(&mut rng, 4);
        let sj = random_vec(&mut rng, 4);
        let f = random_vec(&mut rng, 2);
        let dt = rng.random_range(0.0..10.0);
        let got = message_fn(&model, &si, &sj, &f, dt).unwrap();
        let want = reference_message(&model, &si, &sj, &f, dt);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn message_edge_cases() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    assert_eq!(time_encoding(0.0), 0.0);
    zero_all(&mut model);
    let m = message_fn(&model, &[0.0; 4], &[0.0; 4], &[0.0; 2], 0.0).unwrap();
    assert!(m.data().iter().all(|&x| x == 0.0));
    let bias = Tensor::row_vector(&[0.5, -1.0, 2.0]);
    model.set_param("msg.b2", bias).unwrap();
    let m = message_fn(&model, &[0.0; 4], &[0.0; 4], &[0.0; 2], 3.0).unwrap();
    assert_eq!(m.data(), &[0.5f64.tanh(), (-1.0f64).tanh(), 2.0f64.tanh()]);
    assert!(message_fn(&model, &[0.0; 4], &[0.0; 4], &[0.0; 2], -1e-9).is_err());
}

fn store_with(state: &[f64]) -> MemoryStore {
    let mut mem = MemoryStore::new(3, state.len(), 10);
    mem.set_state(1, state).unwrap();
    mem
}

#[test]
fn embedding_modes() {
    let s = [0.3, -0.2, 0.1, 0.7];
    let mem = store_with(&s);
    let identity = Model::new(2, &small_hyper()).unwrap();
    assert_eq!(embed(&identity, 1, &mem, 0.0).unwrap().data(), &s);
    assert!(embed(&identity, 3, &mem, 0.0).is_err());

    let tp = Model::new(
        2,
        &Hyperparams {
            embedding_mode: EmbeddingMode::TimeProjection,
            ..small_hyper()
        },
    )
    .unwrap();
    let w = tp.param("emb.w").unwrap();
    let ws = Tensor::row_vector(&s).matmul(w).unwrap();
    let at_last = embed(&tp, 1, &mem, mem.last_update(1)).unwrap();
    for (a, b) in at_last.data().iter().zip(ws.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let later = embed(&tp, 1, &mem, 4.0).unwrap();
    for (a, b) in later.data().iter().zip(ws.data()) {
        assert!((a - (1.0 + 5f64.ln()) * b).abs() < 1e-12);
    }

    let nm = Model::new(
        2,
        &Hyperparams {
            embedding_mode: EmbeddingMode::NeighborMean,
            ..small_hyper()
        },
    )
    .unwrap();
    let own = Tensor::row_vector(&s)
        .matmul(nm.param("emb.w1").unwrap())
        .unwrap();
    let h = embed(&nm, 1, &mem, 0.0).unwrap();
    for (a, b) in h.data().iter().zip(own.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(
        "neighbor_mean".parse::<EmbeddingMode>().unwrap(),
        EmbeddingMode::NeighborMean
    );
    assert!("attention".parse::<EmbeddingMode>().is_err());
}

#[test]
fn decoder_matches_reference_and_zero_weights() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        randomize(&mut model, 200 + trial);
        let hi = random_vec(&mut rng, 4);
        let hj = random_vec(&mut rng, 4);
        let p = decode_link(&model, &hi, &hj).unwrap();
        assert!((p - reference_decode(&model, &hi, &hj)).abs() < 1e-12);
        assert!(p > 0.0 && p < 1.0);
    }
    zero_all(&mut model);
    assert_eq!(decode_link(&model, &[1.0; 4], &[-1.0; 4]).unwrap(), 0.5);
    assert!(decode_link(&model, &[1.0; 3], &[-1.0; 4]).is_err());
}

#[test]
fn decoder_with_mirrored_weights_is_swap_invariant() {
    let mut model = Model::new(2, &small_hyper()).unwrap();
    randomize(&mut model, 77);
    let w1 = model.param("dec.w1").unwrap().clone();
    let half = w1.rows() / 2;
    let rows: Vec<Vec<f64>> = (0..w1.rows()).map(|r| w1.row(r % half).to_vec()).collect();
    model
        .set_param("dec.w1", Tensor::from_rows(&rows).unwrap())
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = random_vec(&mut rng, 4);
        let b = random_vec(&mut rng, 4);
        let ab = decode_link(&model, &a, &b).unwrap();
        let ba = decode_link(&model, &b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!((ab - reference_decode(&model, &a, &b)).abs() < 1e-12);
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[test]
fn first_batch_scores_zero_memory() {
    let stream = random_stream(1, 12, 6, 2);
    let hyper = small_hyper();
    let mut model = Model::new(2, &hyper).unwrap();
    let batches = prepare_batches(&stream, &hyper, 0).unwrap();
    let mut mem = MemoryStore::new(6, 4, 10);
    let out = process_batch(
        &mut model,
        &mut mem,
        &TemporalBatch::empty(),
        &batches[0],
        MemoryUpdateSource::PositivesOnly,
    )
    .unwrap();
    assert!(out.updated.is_empty());
    assert_eq!(mem, MemoryStore::new(6, 4, 10));
    let p = decode_link(&model, &[0.0; 4], &[0.0; 4]).unwrap();
    let z = (p / (1.0 - p)).ln();
    let npos = batches[0].positives().len() as f64;
    let nneg = batches[0].negatives().len() as f64;
    let want = npos * softplus(-z) + nneg * softplus(z);
    assert!((out.loss - want).abs() < 1e-9, "{} vs {want}", out.loss);
}

#[test]
fn busy_vertex_is_written_once() {
    let f = vec![0.0];
    let prev = vec![
        Event::positive(0, 1, 1.0, f.clone()),
        Event::positive(0, 2, 2.0, f.clone()),
        Event::positive(3, 0, 3.0, f.clone()),
    ];
    let cur = vec![Event::positive(1, 2, 4.0, f.clone())];
    let stream = EventStream::new([prev.clone(), cur.clone()].concat(), 4, 1).unwrap();
    let hyper = Hyperparams {
        batch_size: 3,
        ..small_hyper()
    };
    let mut model = Model::new(1, &hyper).unwrap();
    let batches = partition_batches(&stream, 3).unwrap();
    assert_eq!(pending_stats(&batches[0]).num_pending, 2);
    let mut mem = MemoryStore::new(4, 4, 10);
    let out = process_batch(
        &mut model,
        &mut mem,
        &batches[0],
        &batches[1],
        MemoryUpdateSource::PositivesOnly,
    )
    .unwrap();
    assert_eq!(out.updated, vec![0, 1, 2, 3]);
    for v in 0..4 {
        assert_eq!(mem.update_count(v), 1);
    }
    assert_eq!(mem.last_update(0), 3.0);
}

/// Replays events one at a time with the public cell functions.
fn sequential_memory(model: &Model, stream: &EventStream) -> MemoryStore {
    let mut mem = MemoryStore::new(stream.num_vertices(), model.memory_dim(), 10);
    let mut times = vec![0.0; stream.num_vertices()];
    for e in stream.events() {
        let si = mem.state(e.src).to_vec();
        let sj = mem.state(e.dst).to_vec();
        let mi = message_fn(model, &si, &sj, &e.features, e.timestamp - times[e.src]).unwrap();
        let mj = message_fn(model, &sj, &si, &e.features, e.timestamp - times[e.dst]).unwrap();
        let ni = memory_update(model, &si, mi.data()).unwrap();
        let nj = memory_update(model, &sj, mj.data()).unwrap();
        mem.set_state(e.src, ni.data()).unwrap();
        mem.set_state(e.dst, nj.data()).unwrap();
        times[e.src] = e.timestamp;
        times[e.dst] = e.timestamp;
    }
    mem
}

#[test]
fn unit_batches_follow_the_sequential_trajectory() {
    let stream = random_stream(4, 30, 5, 2);
    let hyper = Hyperparams {
        batch_size: 1,
        lr: 0.0,
        ..small_hyper()
    };
    let mut model = Model::new(2, &hyper).unwrap();
    randomize(&mut model, 8);
    let oracle = sequential_memory(&model, &stream);
    let mut batches = partition_batches(&stream, 1).unwrap();
    let last = stream.events().last().unwrap().clone();
    batches.push(TemporalBatch::new(batches.len(), stream.len(), vec![last]).unwrap());
    let mut mem = MemoryStore::new(5, 4, 10);
    let mut prev = TemporalBatch::empty();
    for cur in &batches {
        process_batch(
            &mut model,
            &mut mem,
            &prev,
            cur,
            MemoryUpdateSource::PositivesOnly,
        )
        .unwrap();
        prev = cur.clone();
    }
    for v in 0..5 {
        for (a, b) in mem.state(v).iter().zip(oracle.state(v)) {
            assert!((a - b).abs() < 1e-12, "vertex {v}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let stream = random_stream(2, 40, 8, 2);
    let hyper = Hyperparams {
        lr: 0.0,
        ..small_hyper()
    };
    let mut model = Model::new(2, &hyper).unwrap();
    let before = model.params().flat_values();
    let mut mem = MemoryStore::new(8, 4, 10);
    train_epoch(&mut model, &mut mem, &stream, &hyper, 0).unwrap();
    assert_eq!(model.params().flat_values(), before);
}

#[test]
fn single_batch_epoch_loss_is_that_batch() {
    let stream = random_stream(6, 7, 5, 2);
    let hyper = Hyperparams {
        batch_size: 10,
        ..small_hyper()
    };
    let model = Model::new(2, &hyper).unwrap();
    let batches = prepare_batches(&stream, &hyper, 0).unwrap();
    assert_eq!(batches.len(), 1);
    let mut m = model.clone();
    let mut mem = MemoryStore::new(5, 4, 10);
    let out = process_batch(
        &mut m,
        &mut mem,
        &TemporalBatch::empty(),
        &batches[0],
        MemoryUpdateSource::PositivesOnly,
    )
    .unwrap();
    let mut m = model.clone();
    let mut mem = MemoryStore::new(5, 4, 10);
    let stats = train_epoch(&mut m, &mut mem, &stream, &hyper, 0).unwrap();
    assert_eq!(stats.num_batches, 1);
    assert_eq!(stats.loss, out.loss);
}

#[test]
fn batch_order_is_enforced() {
    let stream = random_stream(3, 8, 5, 2);
    let hyper = small_hyper();
    let mut model = Model::new(2, &hyper).unwrap();
    let batches = partition_batches(&stream, 4).unwrap();
    let mut mem = MemoryStore::new(5, 4, 10);
    let res = process_batch(
        &mut model,
        &mut mem,
        &batches[1],
        &batches[0],
        MemoryUpdateSource::PositivesOnly,
    );
    assert!(res.is_err());
}

/// Epoch losses for the default synthetic stream at b = 20, lr = 0.001, seed 0.
const GOLDEN_LOSSES: [f64; 3] = [2684.6310680841293, 2549.2311919203153, 2502.687929373186];

#[test]
fn synthetic_loss_decreases_over_first_epochs() {
    let stream = synthetic_stream(&SyntheticConfig::default()).unwrap();
    let hyper = Hyperparams {
        batch_size: 20,
        lr: 0.001,
        ..Hyperparams::default()
    };
    let mut trainer = Trainer::new(&stream, hyper).unwrap();
    let losses: Vec<f64> = (0..3)
        .map(|_| trainer.train_epoch(&stream).unwrap().loss)
        .collect();
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    for (got, want) in losses.iter().zip(GOLDEN_LOSSES) {
        assert!((got - want).abs() <= 1e-9 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn epochs_are_deterministic() {
    let stream = random_stream(11, 60, 10, 2);
    let run = || {
        let mut t = Trainer::new(&stream, small_hyper()).unwrap();
        let s = t.train_epoch(&stream).unwrap();
        (s.loss, t.model().params().flat_values(), t.memory().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn evaluation_leaves_the_trainer_untouched() {
    let stream = synthetic_stream(&SyntheticConfig {
        events: 300,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (train, val, _) = memtrain_core::event::chronological_split(&stream, 0.7, 0.15).unwrap();
    let mut t = Trainer::new(
        &train,
        Hyperparams {
            batch_size: 20,
            ..Hyperparams::default()
        },
    )
    .unwrap();
    t.train_epoch(&train).unwrap();
    let before = t.memory().clone();
    let ap = t.evaluate(&val).unwrap();
    assert!((0.0..=1.0).contains(&ap));
    assert_eq!(t.memory(), &before);
    assert_eq!(ap, t.evaluate(&val).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn memory_stays_in_open_unit_cube(seed in 0u64..1000, b in 1usize..12, n in 5usize..60) {
        let stream = random_stream(seed, n, 7, 2);
        let hyper = Hyperparams { batch_size: b, lr: 0.05, seed, ..small_hyper() };
        let mut model = Model::new(2, &hyper).unwrap();
        let mut mem = MemoryStore::new(7, 4, 10);
        for epoch in 0..2 {
            train_epoch(&mut model, &mut mem, &stream, &hyper, epoch).unwrap();
            prop_assert!(mem.states().data().iter().all(|x| x.abs() < 1.0));
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replayscope::features::{stack_channels, ChannelKind, SpectroTensor};
use replayscope::models::{
    bonafide_probability, infer_score, spectro_batch, IvecDnnConfig, ModelConfig, ModelGraph, SpecCnnGruConfig,
    WaveCnnGruConfig,
};
use replayscope_autodiff::{Graph, Tensor};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn shapes(trace: &[(String, Vec<usize>)]) -> Vec<(&str, Vec<usize>)> {
    trace.iter().map(|(n, s)| (n.as_str(), s.clone())).collect()
}

/// `[N, C, T, F]` as the frames x bins x maps layout of the layer shape listing.
fn table_row(s: &[usize]) -> Vec<usize> {
    match s {
        [_, c, t, f] => vec![*t, *f, *c],
        [_, d] => vec![*d],
        other => other.to_vec(),
    }
}

#[test]
fn spec_model_shape_chain_at_120_frames() {
    let mut model = ModelGraph::build(ModelConfig::Spec(SpecCnnGruConfig::default()), 1).unwrap();
    let (logits, trace) = model.logits(random_tensor(&[1, 1, 120, 1025], 2)).unwrap();
    let rows: Vec<(&str, Vec<usize>)> = shapes(&trace).into_iter().map(|(n, s)| (n, table_row(&s))).collect();
    assert_eq!(
        rows,
        vec![
            // Conv1 keeps all 1025 one-sided bins, not 1024.
            ("conv1", vec![120, 1025, 16]),
            ("res1", vec![60, 257, 32]),
            ("res2", vec![30, 65, 64]),
            ("res3", vec![15, 17, 128]),
            ("pool", vec![15, 1, 128]),
            ("gru", vec![512]),
            ("dense1", vec![64]),
            ("output", vec![2]),
        ]
    );
    assert_ne!(rows[0].1[1], 1024);
    assert!(logits.all_finite());
}

#[test]
fn spec_model_minimum_length_and_whole_utterances() {
    let mut model = ModelGraph::build(ModelConfig::Spec(SpecCnnGruConfig::desk(1025, 1)), 4).unwrap();
    for (l, want) in [(8, [8, 4, 2, 1]), (37, [37, 19, 10, 5]), (300, [300, 150, 75, 38])] {
        let (_, trace) = model.logits(random_tensor(&[1, 1, l, 1025], l as u64)).unwrap();
        let frames: Vec<usize> = trace[..4].iter().map(|(_, s)| s[2]).collect();
        assert_eq!(frames, want);
        let bins: Vec<usize> = trace[..5].iter().map(|(_, s)| s[3]).collect();
        assert_eq!(bins, [1025, 257, 65, 17, 1]);
    }
}

#[test]
fn spec_model_is_deterministic() {
    let cfg = ModelConfig::Spec(SpecCnnGruConfig::desk(257, 2));
    let x = random_tensor(&[2, 2, 20, 257], 9);
    let mut a = ModelGraph::build(cfg.clone(), 5).unwrap();
    let mut b = ModelGraph::build(cfg, 5).unwrap();
    let (la, _) = a.logits(x.clone()).unwrap();
    let (lb, _) = b.logits(x.clone()).unwrap();
    let (la2, _) = a.logits(x).unwrap();
    assert_eq!(la.data(), lb.data());
    assert_eq!(la.data(), la2.data());
}

#[test]
fn spec_model_rejects_bad_channels_and_shapes() {
    let mut cfg = SpecCnnGruConfig::desk(257, 4);
    assert!(matches!(
        ModelGraph::build(ModelConfig::Spec(cfg.clone()), 0),
        Err(replayscope::Error::Config(_))
    ));
    cfg.input_channels = 1;
    let mut m = ModelGraph::build(ModelConfig::Spec(cfg), 0).unwrap();
    assert!(m.logits(random_tensor(&[1, 1, 20, 513], 0)).is_err());
}

#[test]
fn wave_model_sequence_shape() {
    let mut model = ModelGraph::build(ModelConfig::Wave(WaveCnnGruConfig::default()), 3).unwrap();
    let (logits, trace) = model.logits(random_tensor(&[1, 1, 26_244], 1)).unwrap();
    let t = shapes(&trace);
    assert_eq!(t[0], ("frame", vec![1, 128, 8748]));
    assert_eq!(t[4], ("block4", vec![1, 128, 108]));
    assert_eq!(t[5], ("sequence", vec![1, 108, 128]));
    assert_eq!(t[6], ("gru", vec![1, 512]));
    assert_eq!(t[7], ("dense1", vec![1, 64]));
    assert_eq!(logits.shape(), [1, 2]);
}

#[test]
fn wave_model_zero_input_and_short_input() {
    let mut model = ModelGraph::build(ModelConfig::Wave(WaveCnnGruConfig::desk()), 3).unwrap();
    let (logits, _) = model.logits(Tensor::zeros(&[2, 1, 26_244])).unwrap();
    assert!(logits.all_finite());
    assert!(model.logits(Tensor::zeros(&[1, 1, 200])).is_err());
    assert!(model.logits(Tensor::zeros(&[1, 1, 243])).is_ok());
}

#[test]
fn ivec_dnn_parameter_count() {
    let model = ModelGraph::build(ModelConfig::Ivec(IvecDnnConfig::default()), 0).unwrap();
    let expected = 200 * 1024 + 1024 + 2 * (1024 * 1024 + 1024) + 1024 * 2 + 2;
    assert_eq!(expected, 2_307_074);
    assert_eq!(model.num_parameters(), expected);
}

#[test]
fn ivec_dnn_logits_finite() {
    let mut model = ModelGraph::build(ModelConfig::Ivec(IvecDnnConfig::default()), 1).unwrap();
    let (logits, trace) = model.logits(random_tensor(&[3, 200], 4)).unwrap();
    assert!(logits.all_finite());
    assert_eq!(trace.len(), 4);
    assert!(model.logits(random_tensor(&[3, 199], 4)).is_err());
}

#[test]
fn bonafide_probability_examples() {
    assert_eq!(bonafide_probability(&[0.0, 0.0]).unwrap(), 0.5);
    let p = bonafide_probability(&[3.0, -3.0]).unwrap();
    assert!((p - 1.0 / (1.0 + (-6.0f64).exp())).abs() < 1e-15);
    assert!((p - 0.99753).abs() < 5e-6);
    assert_eq!(bonafide_probability(&[800.0, -800.0]).unwrap(), 1.0);
    assert_eq!(bonafide_probability(&[-800.0, 800.0]).unwrap(), 0.0);
    assert!(bonafide_probability(&[f64::NAN, 0.0]).is_err());
    assert!(bonafide_probability(&[0.0]).is_err());
}

#[test]
fn infer_score_in_unit_interval() {
    let mut model = ModelGraph::build(ModelConfig::Spec(SpecCnnGruConfig::desk(257, 1)), 2).unwrap();
    for seed in 0..5 {
        let s = infer_score(&mut model, random_tensor(&[1, 1, 30 + seed as usize, 257], seed)).unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
    assert!(infer_score(&mut model, random_tensor(&[2, 1, 30, 257], 0)).is_err());
}

#[test]
fn stacked_channels_feed_the_model() {
    let mk = |kind, seed| {
        let t = random_tensor(&[12 * 257], seed);
        SpectroTensor::new(12, 257, vec![kind], t.into_data()).unwrap()
    };
    let stacked = stack_channels(&[
        mk(ChannelKind::Magnitude, 1),
        mk(ChannelKind::Psd, 2),
        mk(ChannelKind::Phase, 3),
    ])
    .unwrap();
    assert_eq!(stacked.n_channels(), 3);
    let x = spectro_batch(&[&stacked]).unwrap();
    assert_eq!(x.shape(), [1, 3, 12, 257]);
    let mut model = ModelGraph::build(ModelConfig::Spec(SpecCnnGruConfig::desk(257, 3)), 0).unwrap();
    assert!(model.logits(x).is_ok());
}

fn assert_all_grads_nonzero(cfg: ModelConfig, x: Tensor) {
    let mut model = ModelGraph::build(cfg, 11).unwrap();
    let n = x.shape()[0];
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let (net, store) = model.parts();
    let mut g = Graph::new(store);
    let xv = g.input(x);
    let out = net.forward(&mut g, xv, true, &mut Vec::new()).unwrap();
    let loss = g.softmax_cross_entropy(out.logits, &labels).unwrap();
    g.backward(loss).unwrap();
    drop(g);
    for id in model.store.trainable_ids() {
        let norm: f64 = model.store.grad(id).iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "{} has a zero gradient", model.store.name(id));
    }
}

#[test]
fn gradients_reach_every_parameter() {
    assert_all_grads_nonzero(
        ModelConfig::Spec(SpecCnnGruConfig::desk(257, 2)),
        random_tensor(&[4, 2, 16, 257], 1),
    );
    assert_all_grads_nonzero(ModelConfig::Wave(WaveCnnGruConfig::desk()), random_tensor(&[4, 1, 2000], 2));
    assert_all_grads_nonzero(ModelConfig::Ivec(IvecDnnConfig::desk(20)), random_tensor(&[4, 20], 3));
}

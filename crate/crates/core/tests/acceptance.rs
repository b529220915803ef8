//! Acceptance criteria 1 to 10. Each test writes one `PASS` or `FAIL` line to
//! stderr (bypassing the harness capture) before asserting.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use replayscope::audio::{synthesize_corpus, AudioClip, Grade, Label, SynthConfig};
use replayscope::config::ExperimentConfig;
use replayscope::features::{hamming, stft, FeatureConfig};
use replayscope::ivector::{extract_ivector, train_tv, train_ubm, BwStats, GmmModel, TvConfig, TvMatrix, UbmConfig};
use replayscope::metrics::{
    breakdown_report, compute_eer, compute_min_tdcf, fuse_scores, ScoreEntry, ScoreSet, TdcfParams,
};
use replayscope::models::{ModelConfig, ModelGraph, SpecCnnGruConfig};
use replayscope::pipeline;
use replayscope::systems::{score_clips, SystemRegistry};
use replayscope_autodiff::gradcheck::{run_layer_suite, LayerKind};
use replayscope_autodiff::Tensor;
use rustfft::num_complex::Complex;

type Outcome = Result<String, String>;

fn report(id: u32, name: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("acceptance {id:>2} PASS  {name}: {detail} ({secs:.1} s)\n"),
        Err(detail) => format!("acceptance {id:>2} FAIL  {name}: {detail} ({secs:.1} s)\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(detail) = outcome {
        panic!("criterion {id} ({name}) failed: {detail}");
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

// ---------------------------------------------------------------------------
// 1. DSP oracle equivalence

/// Windowed DFT evaluated term by term.
fn naive_frame(x: &[f64], n_fft: usize) -> Vec<Complex<f64>> {
    let w = hamming(x.len());
    (0..=n_fft / 2)
        .map(|k| {
            let mut acc = Complex::new(0.0, 0.0);
            for (n, (xv, wv)) in x.iter().zip(&w).enumerate() {
                let angle = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                acc += Complex::from_polar(xv * wv, angle);
            }
            acc
        })
        .collect()
}

#[test]
fn criterion_01_stft_matches_naive_dft() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let geometries = [(50.0, 20.0, 2048), (30.0, 10.0, 512), (25.0, 10.0, 1024)];
    let (mut worst_bin, mut worst_parseval, mut frames) = (0.0f64, 0.0f64, 0usize);
    for signal in 0..50 {
        let (window_ms, shift_ms, n_fft) = geometries[signal % geometries.len()];
        let cfg = FeatureConfig {
            window_ms,
            shift_ms,
            n_fft,
            ..FeatureConfig::default()
        };
        let len = rng.gen_range(1000..2600);
        let amp = rng.gen_range(0.01..1.0);
        let x: Vec<f64> = (0..len).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        let spec = stft(&AudioClip::new("s", x.clone(), 16_000).unwrap(), &cfg).unwrap();
        let (win, hop) = ((window_ms * 16.0) as usize, (shift_ms * 16.0) as usize);
        let w = hamming(win);
        for (f, row) in spec.rows().enumerate() {
            let seg = &x[f * hop..f * hop + win];
            for (a, b) in row.iter().zip(naive_frame(seg, n_fft)) {
                worst_bin = worst_bin.max((a - b).norm() / b.norm());
            }
            let n = row.len();
            let two_sided = row[0].norm_sqr()
                + row[n - 1].norm_sqr()
                + 2.0 * row[1..n - 1].iter().map(|v| v.norm_sqr()).sum::<f64>();
            let time: f64 = seg.iter().zip(&w).map(|(a, b)| (a * b) * (a * b)).sum();
            let n_fft = n_fft as f64;
            worst_parseval = worst_parseval.max((two_sided - n_fft * time).abs() / (n_fft * time));
            frames += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let outcome = check(
        worst_bin <= 1e-9 && worst_parseval <= 1e-9 && secs < 30.0,
        format!("50 signals, {frames} frames, worst bin rel err {worst_bin:.1e}, worst Parseval rel err {worst_parseval:.1e}"),
    );
    report(1, "STFT vs windowed-DFT oracle", started, outcome);
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

#[test]
fn criterion_02_gradient_checks() {
    let started = Instant::now();
    let mut worst = (0.0f64, LayerKind::Dense);
    let mut failures = Vec::new();
    let mut coords = 0;
    for (i, kind) in LayerKind::ALL.into_iter().enumerate() {
        match run_layer_suite(kind, 20, 500 + i as u64) {
            Ok(r) => {
                coords += r.coords_checked;
                if r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err, kind);
                }
                if r.max_rel_err > 1e-4 {
                    failures.push(format!("{kind:?} {:.1e}", r.max_rel_err));
                }
            }
            Err(e) => failures.push(format!("{kind:?}: {e}")),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let outcome = check(
        failures.is_empty() && secs < 300.0,
        format!(
            "{} layer kinds x 20 shapes, {coords} coordinates, worst {:.1e} ({:?}){}",
            LayerKind::ALL.len(),
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join("; ")) }
        ),
    );
    report(2, "central finite differences", started, outcome);
}

// ---------------------------------------------------------------------------
// 3. Spec model shape chain

#[test]
fn criterion_03_spec_model_shapes() {
    let started = Instant::now();
    let mut model = ModelGraph::build(ModelConfig::Spec(SpecCnnGruConfig::default()), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[1, 1, 120, 1025], |_| rng.gen_range(-1.0..1.0));
    let (logits, trace) = model.logits(x).unwrap();
    // [N, C, T, F] printed as frames x bins x maps.
    let rows: Vec<(String, Vec<usize>)> = trace
        .iter()
        .map(|(n, s)| {
            let row = match s.as_slice() {
                [_, c, t, f] => vec![*t, *f, *c],
                [_, d] => vec![*d],
                other => other.to_vec(),
            };
            (n.clone(), row)
        })
        .collect();
    let expected: Vec<(String, Vec<usize>)> = [
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
    .into_iter()
    .map(|(n, s)| (n.to_string(), s))
    .collect();
    let outcome = check(
        rows == expected && rows[0].1[1] == 1025 && logits.shape() == [1, 2],
        format!("l=120 chain {rows:?}"),
    );
    report(3, "spec model shape chain", started, outcome);
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

fn labelled_set(bona: &[f64], spoof: &[f64]) -> ScoreSet {
    let mut entries = Vec::new();
    for (i, s) in bona.iter().enumerate() {
        entries.push(entry(format!("b{i}"), *s, Label::Bonafide, None));
    }
    for (i, s) in spoof.iter().enumerate() {
        entries.push(entry(format!("s{i}"), *s, Label::Spoof, Some((Grade::A, Grade::A))));
    }
    ScoreSet::new("oracle", entries).unwrap()
}

fn entry(id: String, score: f64, label: Label, cell: Option<(Grade, Grade)>) -> ScoreEntry {
    ScoreEntry {
        utterance_id: id,
        score,
        label,
        attacker_distance: cell.map(|c| c.0),
        speaker_quality: cell.map(|c| c.1),
    }
}

fn candidates(bona: &[f64], spoof: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all.push(f64::INFINITY);
    all
}

fn rates(bona: &[f64], spoof: &[f64], th: f64) -> (f64, f64) {
    let frr = bona.iter().filter(|&&s| s < th).count() as f64 / bona.len() as f64;
    let far = spoof.iter().filter(|&&s| s >= th).count() as f64 / spoof.len() as f64;
    (frr, far)
}

/// Count errors at every candidate threshold, then interpolate linearly at
/// the first point where FRR reaches FAR.
fn brute_eer(bona: &[f64], spoof: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = candidates(bona, spoof).iter().map(|&t| rates(bona, spoof, t)).collect();
    let i = pts.iter().position(|p| p.0 >= p.1).unwrap();
    let (a, b) = (pts[i - 1], pts[i]);
    let (da, db) = (a.0 - a.1, b.0 - b.1);
    a.0 + (-da / (db - da)) * (b.0 - a.0)
}

fn brute_tdcf(bona: &[f64], spoof: &[f64], p: &TdcfParams) -> f64 {
    let c1 = p.pi_tar * (p.c_miss - p.c_miss * p.p_miss_asv) - p.pi_non * p.c_fa * p.p_fa_asv;
    let c2 = p.c_fa * p.pi_spoof * (1.0 - p.p_miss_spoof_asv);
    candidates(bona, spoof)
        .into_iter()
        .map(|t| {
            let (frr, far) = rates(bona, spoof, t);
            (c1 * frr + c2 * far) / c1.min(c2)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_04_metric_oracles() {
    let started = Instant::now();
    let p = TdcfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (nb, ns) = (rng.gen_range(1..60), rng.gen_range(1..60));
        let quantised = rng.gen_bool(0.3);
        let shift = rng.gen_range(-1.0..2.0);
        let mut draw = |mu: f64| {
            let v: f64 = mu + rng.gen_range(-1.0..1.0);
            if quantised {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        };
        let bona: Vec<f64> = (0..nb).map(|_| draw(shift)).collect();
        let spoof: Vec<f64> = (0..ns).map(|_| draw(0.0)).collect();
        let set = labelled_set(&bona, &spoof);
        if compute_eer(&set).unwrap().eer != brute_eer(&bona, &spoof)
            || compute_min_tdcf(&set, &p).unwrap() != brute_tdcf(&bona, &spoof, &p)
        {
            mismatches += 1;
        }
    }
    let perfect = labelled_set(&[0.9, 0.8, 0.75], &[0.1, 0.3]);
    let blind = labelled_set(&[0.5; 9], &[0.5; 6]);
    let perfect_eer = compute_eer(&perfect).unwrap().eer;
    let perfect_tdcf = compute_min_tdcf(&perfect, &p).unwrap();
    let blind_tdcf = compute_min_tdcf(&blind, &p).unwrap();
    let outcome = check(
        mismatches == 0 && perfect_eer == 0.0 && perfect_tdcf == 0.0 && blind_tdcf == 1.0,
        format!(
            "1000 instances, {mismatches} mismatches; perfect EER {perfect_eer} t-DCF {perfect_tdcf}; score-blind t-DCF {blind_tdcf}"
        ),
    );
    report(4, "EER and min t-DCF vs brute force", started, outcome);
}

// ---------------------------------------------------------------------------
// Shared desk-scale training runs for criteria 5 and 6.

const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_EPOCHS: usize = 12;

struct TrendCorpus {
    train: Vec<AudioClip>,
    dev: Vec<AudioClip>,
}

fn trend_corpus() -> &'static TrendCorpus {
    static CORPUS: OnceLock<TrendCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        replayscope::runtime::retain_heap_memory();
        let base = ExperimentConfig::desk().synth;
        let make = |n, seed, prefix: &str| {
            synthesize_corpus(&SynthConfig {
                n_utts_per_class: n,
                rng_seed: seed,
                id_prefix: prefix.into(),
                ..base.clone()
            })
            .unwrap()
            .0
        };
        TrendCorpus {
            train: make(200, 1, "tr"),
            dev: make(100, 2, "dv"),
        }
    })
}

/// Dev scores of a desk-scale system, memoised across tests.
fn dev_scores(system: &str, n_fft: usize, seed: u64) -> ScoreSet {
    static CACHE: OnceLock<Mutex<HashMap<(String, usize, u64), ScoreSet>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry((system.to_string(), n_fft, seed))
        .or_insert_with(|| {
            let corpus = trend_corpus();
            let mut cfg = ExperimentConfig::desk();
            cfg.features.n_fft = n_fft;
            cfg.train.epochs = TREND_EPOCHS;
            cfg.train.seed = seed;
            let mut det = SystemRegistry::with_builtins().create(system, &cfg).unwrap();
            det.fit(&corpus.train, Some(&corpus.dev)).unwrap();
            score_clips(det.as_mut(), &corpus.dev).unwrap()
        })
        .clone()
}

fn eer(set: &ScoreSet) -> f64 {
    compute_eer(set).unwrap().eer
}

// ---------------------------------------------------------------------------
// 5. Resolution trend

#[test]
fn criterion_05_finer_fft_resolution_helps() {
    let started = Instant::now();
    let mut fine = Vec::new();
    let mut coarse = Vec::new();
    for seed in TREND_SEEDS {
        fine.push(eer(&dev_scores("spec-magnitude", 2048, seed)));
        coarse.push(eer(&dev_scores("spec-magnitude", 512, seed)));
    }
    let (m_fine, m_coarse) = (median(fine.clone()), median(coarse.clone()));
    let list = |v: &[f64]| v.iter().map(|x| pct(*x)).collect::<Vec<_>>().join(" ");
    let outcome = check(
        m_fine <= m_coarse,
        format!(
            "median dev EER nFFT 2048 {} [{}] vs nFFT 512 {} [{}]",
            pct(m_fine),
            list(&fine),
            pct(m_coarse),
            list(&coarse)
        ),
    );
    report(5, "nFFT 2048 vs 512", started, outcome);
}

// ---------------------------------------------------------------------------
// 6. Ensemble trend

#[test]
fn criterion_06_score_fusion_matches_best_member() {
    let started = Instant::now();
    let mut margins = Vec::new();
    let mut lines = Vec::new();
    for seed in TREND_SEEDS {
        let members: Vec<ScoreSet> = ["spec-magnitude", "spec-psd", "spec-phase"]
            .iter()
            .map(|s| dev_scores(s, 2048, seed))
            .collect();
        let best = members.iter().map(eer).fold(f64::INFINITY, f64::min);
        let fused = eer(&fuse_scores(&members, false).unwrap());
        margins.push(fused - best);
        lines.push(format!(
            "seed {seed}: members {} fused {}",
            members.iter().map(|m| pct(eer(m))).collect::<Vec<_>>().join("/"),
            pct(fused)
        ));
    }
    let m = median(margins);
    let outcome = check(
        m <= 0.005,
        format!("median fused minus best member {:+.2} pp; {}", 100.0 * m, lines.join("; ")),
    );
    report(6, "score-level fusion of magnitude, psd and phase", started, outcome);
}

// ---------------------------------------------------------------------------
// 7. Overfit sanity

#[test]
fn criterion_07_each_family_overfits_forty_utterances() {
    let started = Instant::now();
    replayscope::runtime::retain_heap_memory();
    let mut cfg = ExperimentConfig::desk();
    cfg.train.epochs = 200;
    cfg.train.stop_after_perfect_epochs = 1;
    let (clips, _) = synthesize_corpus(&SynthConfig {
        n_utts_per_class: 20,
        rng_seed: 70,
        id_prefix: "of".into(),
        ..cfg.synth.clone()
    })
    .unwrap();
    let registry = SystemRegistry::with_builtins();
    let mut results = Vec::new();
    let mut all_ok = true;
    for system in ["spec-magnitude", "wave", "ivector"] {
        let mut det = registry.create(system, &cfg).unwrap();
        let log = det.fit(&clips, None).unwrap().log;
        match log.epochs.iter().find(|e| e.train_accuracy == 1.0) {
            Some(e) => results.push(format!("{system} at epoch {}", e.epoch)),
            None => {
                all_ok = false;
                let best = log.epochs.iter().map(|e| e.train_accuracy).fold(0.0, f64::max);
                results.push(format!("{system} never (best {best:.3})"));
            }
        }
    }
    let outcome = check(all_ok, format!("100% train accuracy on 40 utterances: {}", results.join(", ")));
    report(7, "overfit sanity", started, outcome);
}

// ---------------------------------------------------------------------------
// 8. i-vector pipeline

fn unit_ubm(c: usize, d: usize, var: f64) -> GmmModel {
    GmmModel::new(
        DVector::from_element(c, 1.0 / c as f64),
        DMatrix::zeros(c, d),
        DMatrix::from_element(c, d, var),
    )
    .unwrap()
}

fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0).acos().to_degrees()
}

fn monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] - w[0] >= -1e-8 * w[0].abs())
}

#[test]
fn criterion_08_ivector_pipeline() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let centers = [[-4.0, 0.0, 1.0], [3.0, 3.0, -2.0], [0.0, -5.0, 4.0], [5.0, -3.0, 0.0]];
    let x = DMatrix::from_fn(2000, 3, |t, k| {
        let g: f64 = StandardNormal.sample(&mut rng);
        centers[t % 4][k] + 0.7 * g
    });
    let ubm_cfg = UbmConfig {
        components: 6,
        em_iterations: 12,
        seed: 3,
        ..UbmConfig::default()
    };
    let (_, ubm_report) = train_ubm(&x, &ubm_cfg).unwrap();
    let ubm_monotone = monotone(&ubm_report.log_likelihood);

    let (single, _) = train_ubm(
        &x,
        &UbmConfig {
            components: 1,
            em_iterations: 3,
            ..UbmConfig::default()
        },
    )
    .unwrap();
    let mut closed_form_err = 0.0f64;
    for k in 0..3 {
        let col = x.column(k);
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        closed_form_err = closed_form_err
            .max((single.means[(0, k)] - mean).abs() / mean.abs().max(1.0))
            .max((single.variances[(0, k)] - var).abs() / var);
    }

    let (c, d, r, var) = (4, 3, 2, 0.05);
    let ubm = unit_ubm(c, d, var);
    let t0 = DMatrix::from_fn(c * d, r, |_, _| rng.gen_range(-1.0..1.0));
    let stats: Vec<BwStats> = (0..400)
        .map(|_| {
            let w = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            let shift = &t0 * w;
            let n = DVector::from_fn(c, |_, _| rng.gen_range(20.0..60.0));
            let f = DMatrix::from_fn(c, d, |ci, k| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                n[ci] * shift[ci * d + k] + (n[ci] * var).sqrt() * noise
            });
            BwStats { n, f, frames: 0 }
        })
        .collect();
    let (tv, tv_report) = train_tv(
        &stats,
        &ubm,
        &TvConfig {
            rank: r,
            iterations: 30,
            seed: 1,
        },
    )
    .unwrap();
    let tv_monotone = monotone(&tv_report.objective);
    let angle = max_principal_angle(&tv.t, &t0);

    let scalar_ubm = unit_ubm(1, 1, 1.0);
    let scalar_tv = TvMatrix::new(DMatrix::from_element(1, 1, 1.0), &scalar_ubm).unwrap();
    let scalar_stats = BwStats {
        n: DVector::from_element(1, 2.0),
        f: DMatrix::from_element(1, 1, 3.0),
        frames: 2,
    };
    let w = extract_ivector(&scalar_stats, &scalar_tv, &scalar_ubm).unwrap()[0];

    let outcome = check(
        ubm_monotone && tv_monotone && closed_form_err <= 1e-12 && angle <= 5.0 && (w - 1.0).abs() <= 1e-12,
        format!(
            "UBM EM monotone {ubm_monotone}, T EM monotone {tv_monotone}, C=1 rel err {closed_form_err:.1e}, \
             subspace angle {angle:.2} deg, scalar w {w}"
        ),
    );
    report(8, "i-vector EM and extraction", started, outcome);
}

// ---------------------------------------------------------------------------
// 9. Determinism

fn run_pipeline(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut cfg = ExperimentConfig::desk();
    cfg.synth.n_utts_per_class = 10;
    cfg.synth.id_prefix = "tr".into();
    cfg.synth.rng_seed = 90;
    cfg.train.epochs = 3;
    let registry = SystemRegistry::with_builtins();
    let (tr, ev) = (dir.join("train"), dir.join("eval"));
    pipeline::synth(&cfg, &tr).unwrap();
    let mut eval_cfg = cfg.clone();
    eval_cfg.synth.n_utts_per_class = 6;
    eval_cfg.synth.id_prefix = "ev".into();
    eval_cfg.synth.rng_seed = 91;
    pipeline::synth(&eval_cfg, &ev).unwrap();
    let train = pipeline::load_corpus(&tr, cfg.synth.sample_rate).unwrap();
    let eval = pipeline::load_corpus(&ev, cfg.synth.sample_rate).unwrap();
    pipeline::extract(&cfg, "spec-magnitude", &eval, &dir.join("features")).unwrap();
    let mut scores = Vec::new();
    for system in ["spec-magnitude", "wave", "ivector"] {
        let ck = dir.join(format!("{system}.ck"));
        pipeline::train(&registry, &cfg, system, &train, Some(&eval), &ck, &dir.join(format!("{system}.log"))).unwrap();
        let out = dir.join(format!("{system}.txt"));
        pipeline::score(&registry, &ck, &eval, &out).unwrap();
        scores.push(out);
    }
    let fused = dir.join("fused.txt");
    pipeline::fuse(&scores, false, &fused).unwrap();
    scores.push(fused);
    let evaluation = pipeline::evaluate(&cfg, &scores, &ev.join(pipeline::PROTOCOL_FILE)).unwrap();
    pipeline::write_atomic(&dir.join("report.txt"), evaluation.to_text().as_bytes()).unwrap();
    pipeline::write_atomic(&dir.join("report.json"), evaluation.to_json().unwrap().as_bytes()).unwrap();

    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_09_pipeline_is_byte_identical() {
    let started = Instant::now();
    replayscope::runtime::retain_heap_memory();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let differing: Vec<String> = first
        .iter()
        .filter(|(p, bytes)| second.get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let bytes: usize = first.values().map(Vec::len).sum();
    let outcome = check(
        differing.is_empty() && first.len() == second.len(),
        format!(
            "{} files ({bytes} bytes) from synth, extract, train x3, score, fuse, eval; differing: {:?}",
            first.len(),
            differing
        ),
    );
    report(9, "synth to eval determinism", started, outcome);
}

// ---------------------------------------------------------------------------
// 10. Breakdown grid

#[test]
fn criterion_10_breakdown_grid_filters_cells() {
    let started = Instant::now();
    let p = TdcfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let bona: Vec<f64> = (0..120).map(|_| rng.gen_range(0.5..1.0)).collect();
    let mut entries: Vec<ScoreEntry> = bona
        .iter()
        .enumerate()
        .map(|(i, s)| entry(format!("b{i:03}"), *s, Label::Bonafide, None))
        .collect();
    // Cell (d, q) holds 10 + d spoofs of which exactly 2q + d sit above every
    // bona fide score; the rest sit below.
    let mut planted = BTreeMap::new();
    let mut cell_spoofs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in Grade::ALL {
        for q in Grade::ALL {
            let label = format!("{d:?}{q:?}");
            let n = 10 + d.index();
            let above = 2 * q.index() + d.index();
            let scores: Vec<f64> = (0..n)
                .map(|k| if k < above { rng.gen_range(1.5..2.0) } else { rng.gen_range(0.0..0.4) })
                .collect();
            for (k, s) in scores.iter().enumerate() {
                entries.push(entry(format!("{label}{k:02}"), *s, Label::Spoof, Some((d, q))));
            }
            planted.insert(label.clone(), (n, above));
            cell_spoofs.insert(label, scores);
        }
    }
    let report10 = breakdown_report(&ScoreSet::new("planted", entries.clone()).unwrap(), &p).unwrap();
    let labels: Vec<&str> = report10.cells.iter().map(|c| c.0.as_str()).collect();
    let mut problems = Vec::new();
    if labels != ["AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"] {
        problems.push(format!("labels {labels:?}"));
    }
    let table = report10.to_table();
    if !table.lines().any(|l| l.contains("Pooled") && l.contains("AA") && l.contains("CC")) {
        problems.push("table header lacks Pooled..CC".into());
    }
    let all_spoof: Vec<f64> = cell_spoofs.values().flatten().copied().collect();
    let pooled_eer = brute_eer(&bona, &all_spoof);
    if report10.pooled.eer != pooled_eer || report10.pooled.n_spoof != all_spoof.len() {
        problems.push(format!("pooled {} vs {pooled_eer}", report10.pooled.eer));
    }
    for (label, metrics) in &report10.cells {
        let Some(m) = metrics else {
            problems.push(format!("{label} empty"));
            continue;
        };
        let spoof = &cell_spoofs[label];
        let (n, above) = planted[label];
        // Spoofs above every bona fide score are false accepts until FRR is 1.
        let planted_eer = above as f64 / n as f64;
        let want_eer = brute_eer(&bona, spoof);
        let want_tdcf = brute_tdcf(&bona, spoof, &p);
        if m.n_spoof != n || m.n_bonafide != bona.len() {
            problems.push(format!("{label} counts {}/{}", m.n_spoof, m.n_bonafide));
        }
        if m.eer != want_eer || (m.eer - planted_eer).abs() > 1e-12 || m.min_tdcf != want_tdcf {
            problems.push(format!("{label} EER {} (planted {planted_eer}) t-DCF {}", m.eer, m.min_tdcf));
        }
    }
    let outcome = check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "Pooled + 9 cells, planted EERs from {} (AA) to {} (CC) recovered exactly",
                pct(0.0),
                pct(report10.cells[8].1.as_ref().unwrap().eer)
            )
        } else {
            problems.join("; ")
        },
    );
    report(10, "breakdown grid", started, outcome);
}

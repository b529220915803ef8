use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replayscope::audio::{Grade, Label};
use replayscope::metrics::{
    breakdown_report, compute_eer, compute_min_tdcf, det_points, format_scores, fuse_scores, parse_scores,
    ScoreEntry, ScoreSet, TdcfParams,
};

fn entry(id: usize, score: f64, label: Label, cfg: Option<(Grade, Grade)>) -> ScoreEntry {
    ScoreEntry {
        utterance_id: format!("u{id:04}"),
        score,
        label,
        attacker_distance: cfg.map(|c| c.0),
        speaker_quality: cfg.map(|c| c.1),
    }
}

fn set_from(bona: &[f64], spoof: &[f64]) -> ScoreSet {
    let mut entries = Vec::new();
    for (i, s) in bona.iter().enumerate() {
        entries.push(entry(i, *s, Label::Bonafide, None));
    }
    for (i, s) in spoof.iter().enumerate() {
        entries.push(entry(10_000 + i, *s, Label::Spoof, Some((Grade::A, Grade::A))));
    }
    ScoreSet::new("sys", entries).unwrap()
}

/// Candidate thresholds: every distinct score and +inf, ascending.
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

/// Quadratic sweep: direct counting at each candidate threshold, then the same
/// linear interpolation at the first FRR >= FAR crossing.
fn brute_eer(bona: &[f64], spoof: &[f64]) -> (f64, f64) {
    let ths = candidates(bona, spoof);
    let max = ths[ths.len() - 2];
    let pts: Vec<(f64, f64, f64)> = ths
        .iter()
        .map(|&t| {
            let (frr, far) = rates(bona, spoof, t);
            (t, frr, far)
        })
        .collect();
    let i = pts.iter().position(|p| p.1 >= p.2).unwrap();
    let (a, b) = (pts[i - 1], pts[i]);
    let (da, db) = (a.1 - a.2, b.1 - b.2);
    let t = -da / (db - da);
    let th = |x: f64| if x.is_finite() { x } else { max };
    (a.1 + t * (b.1 - a.1), th(a.0) + t * (th(b.0) - th(a.0)))
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

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let nb = rng.gen_range(1..40);
    let ns = rng.gen_range(1..40);
    let quantised = rng.gen_bool(0.3);
    let shift = rng.gen_range(-1.0..2.0);
    let draw = |rng: &mut ChaCha8Rng, mu: f64| {
        let v: f64 = mu + rng.gen_range(-1.0..1.0);
        if quantised {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    };
    let bona = (0..nb).map(|_| draw(rng, shift)).collect();
    let spoof = (0..ns).map(|_| draw(rng, 0.0)).collect();
    (bona, spoof)
}

#[test]
fn eer_extremes() {
    let perfect = set_from(&[0.9, 0.8, 0.7], &[0.1, 0.2]);
    assert_eq!(compute_eer(&perfect).unwrap().eer, 0.0);
    let inverted = set_from(&[0.1, 0.2], &[0.9, 0.8, 0.7]);
    assert_eq!(compute_eer(&inverted).unwrap().eer, 1.0);
}

#[test]
fn eer_small_example_matches_oracle() {
    let bona = [0.9, 0.6, 0.4];
    let spoof = [0.7, 0.5, 0.2];
    let got = compute_eer(&set_from(&bona, &spoof)).unwrap();
    let (eer, th) = brute_eer(&bona, &spoof);
    assert_eq!(got.eer, eer);
    assert_eq!(got.threshold, th);
    assert!((eer - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn eer_matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (bona, spoof) = random_instance(&mut rng);
        let got = compute_eer(&set_from(&bona, &spoof)).unwrap();
        let (eer, th) = brute_eer(&bona, &spoof);
        assert_eq!(got.eer, eer, "{bona:?} {spoof:?}");
        assert_eq!(got.threshold, th);
        assert!((0.0..=1.0).contains(&got.eer));
    }
}

#[test]
fn eer_invariant_under_monotone_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (bona, spoof) = random_instance(&mut rng);
        let base = compute_eer(&set_from(&bona, &spoof)).unwrap().eer;
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 7.0, |x: f64| 0.5 * x + 100.0] {
            let b: Vec<f64> = bona.iter().map(|&x| f(x)).collect();
            let s: Vec<f64> = spoof.iter().map(|&x| f(x)).collect();
            assert_eq!(compute_eer(&set_from(&b, &s)).unwrap().eer, base);
        }
    }
}

#[test]
fn single_class_is_input_error() {
    let only_bona = ScoreSet::new("x", vec![entry(0, 0.5, Label::Bonafide, None)]).unwrap();
    assert!(matches!(compute_eer(&only_bona), Err(replayscope::Error::Input(_))));
}

#[test]
fn tdcf_matches_oracle_and_extremes() {
    let p = TdcfParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let bona: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let spoof: Vec<f64> = (0..50).map(|_| rng.gen_range(-0.5..0.7)).collect();
        let got = compute_min_tdcf(&set_from(&bona, &spoof), &p).unwrap();
        assert_eq!(got, brute_tdcf(&bona, &spoof, &p));
        assert!(got >= 0.0);
    }
    assert_eq!(compute_min_tdcf(&set_from(&[0.9, 0.8], &[0.1, 0.3]), &p).unwrap(), 0.0);
    assert_eq!(compute_min_tdcf(&set_from(&[0.5; 7], &[0.5; 5]), &p).unwrap(), 1.0);
}

#[test]
fn tdcf_rejects_bad_params() {
    let set = set_from(&[0.9], &[0.1]);
    let mut p = TdcfParams {
        pi_tar: 0.5,
        ..TdcfParams::default()
    };
    assert!(matches!(compute_min_tdcf(&set, &p), Err(replayscope::Error::Config(_))));
    p = TdcfParams {
        p_miss_spoof_asv: 1.0,
        ..TdcfParams::default()
    };
    assert!(matches!(compute_min_tdcf(&set, &p), Err(replayscope::Error::Config(_))));
}

#[test]
fn fusion_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bona: Vec<f64> = (0..30).map(|_| rng.gen_range(0.2..1.0)).collect();
    let spoof: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..0.8)).collect();
    let s = set_from(&bona, &spoof);
    assert_eq!(fuse_scores(&[s.clone()], false).unwrap().entries, s.entries);
    let doubled = fuse_scores(&[s.clone(), s.clone()], false).unwrap();
    assert_eq!(doubled.system_id, "sys+sys");
    assert_eq!(compute_eer(&doubled).unwrap().eer, compute_eer(&s).unwrap().eer);
    for (d, e) in doubled.entries.iter().zip(&s.entries) {
        assert_eq!(d.score, 2.0 * e.score);
    }
    let z = fuse_scores(&[s.clone(), s.clone()], true).unwrap();
    assert_eq!(compute_eer(&z).unwrap().eer, compute_eer(&s).unwrap().eer);

    let mut other = s.clone();
    other.entries[0].utterance_id = "stranger".into();
    let err = fuse_scores(&[s, other], false).unwrap_err().to_string();
    assert!(err.contains("stranger") && err.contains("u0000"));
}

#[test]
fn breakdown_with_a_single_populated_cell() {
    let set = set_from(&[0.9, 0.7, 0.4], &[0.5, 0.1]);
    let p = TdcfParams::default();
    let r = breakdown_report(&set, &p).unwrap();
    let populated: Vec<&str> = r.cells.iter().filter(|c| c.1.is_some()).map(|c| c.0.as_str()).collect();
    assert_eq!(populated, ["AA"]);
    assert_eq!(r.cell(Grade::A, Grade::A), Some(&r.pooled));
    assert!(r.cell(Grade::C, Grade::C).is_none());
    let labels: Vec<&str> = r.cells.iter().map(|c| c.0.as_str()).collect();
    assert_eq!(labels, ["AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"]);
    assert!(r.to_table().contains("Pooled"));
}

#[test]
fn breakdown_orders_cells_by_planted_difficulty() {
    // Quality C spoofs sit far below bona fide; quality A overlaps heavily.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut entries = Vec::new();
    let mut id = 0;
    for _ in 0..90 {
        entries.push(entry(id, rng.gen_range(0.3..1.0), Label::Bonafide, None));
        id += 1;
    }
    for d in Grade::ALL {
        for q in Grade::ALL {
            let hi = [0.9, 0.6, 0.35][q.index()];
            for _ in 0..20 {
                entries.push(entry(id, rng.gen_range(0.0..hi), Label::Spoof, Some((d, q))));
                id += 1;
            }
        }
    }
    let set = ScoreSet::new("planted", entries).unwrap();
    let r = breakdown_report(&set, &TdcfParams::default()).unwrap();
    for d in Grade::ALL {
        let e = |q| r.cell(d, q).unwrap().eer;
        assert!(e(Grade::C) < e(Grade::B) && e(Grade::B) < e(Grade::A));
    }
    let spoofs: usize = r.cells.iter().map(|c| c.1.as_ref().unwrap().n_spoof).sum();
    assert_eq!(spoofs + r.untagged_spoof, r.pooled.n_spoof);
    assert_eq!(r.pooled.n_spoof + r.pooled.n_bonafide, set.entries.len());
}

#[test]
fn score_file_roundtrip_and_errors() {
    let set = set_from(&[0.123456789012345, 1e-17], &[0.5]);
    let text = format_scores(&set);
    let parsed = parse_scores(&text).unwrap();
    for (p, e) in parsed.iter().zip(&set.entries) {
        assert_eq!(p.0, e.utterance_id);
        assert_eq!(p.1, e.score);
    }
    assert!(matches!(parse_scores("a 0.1\nb x"), Err(replayscope::Error::Parse { line: 2, .. })));
    assert!(matches!(parse_scores("a 0.1\na 0.2"), Err(replayscope::Error::Parse { line: 2, .. })));
    assert!(parse_scores("a NaN").is_err());
}

#[test]
fn det_curve_is_monotone() {
    let set = set_from(&[0.9, 0.6, 0.4, 0.4], &[0.7, 0.5, 0.2]);
    let pts = det_points(&set).unwrap();
    assert_eq!((pts[0].frr, pts[0].far), (0.0, 1.0));
    assert_eq!((pts.last().unwrap().frr, pts.last().unwrap().far), (1.0, 0.0));
    for w in pts.windows(2) {
        assert!(w[1].frr >= w[0].frr && w[1].far <= w[0].far);
    }
}

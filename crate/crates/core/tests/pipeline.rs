use trajcon::metrics::GroundTruthFrame;
use trajcon::sim::{generate_scenario, ScenarioConfig};
use trajcon::{evaluate, run_sequence, EvalResult, TrackerConfig};

fn track(cfg: &ScenarioConfig, tracker: &TrackerConfig) -> EvalResult {
    let scenario = generate_scenario(cfg).unwrap();
    let out = run_sequence(&scenario.detections(), tracker).unwrap();
    let hyp: Vec<GroundTruthFrame<f64>> = out
        .iter()
        .map(|f| GroundTruthFrame::new(f.frame, f.boxes.iter().map(|b| (b.id, b.bbox)).collect()))
        .collect();
    evaluate(&scenario.ground_truth(), &hyp).unwrap()
}

fn small(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_identities: 8,
        n_frames: 80,
        seed,
        ..ScenarioConfig::default()
    }
}

#[test]
fn noiseless_sequence_is_tracked_exactly() {
    let r = track(&small(3).noiseless(), &TrackerConfig::default());
    assert_eq!((r.mota, r.idf1, r.ids, r.fp, r.fn_), (1.0, 1.0, 0, 0, 0));
    assert_eq!(r.gt_total, 8 * 80);
}

#[test]
fn noisy_sequence_stays_usable() {
    for seed in 0..3 {
        let r = track(&small(seed), &TrackerConfig::default());
        assert!(r.mota > 0.5, "seed {seed}: {r:?}");
        assert!(r.idf1 > 0.5, "seed {seed}: {r:?}");
        assert!(r.motp > 0.5 && r.motp <= 1.0);
    }
}

#[test]
fn pipeline_is_deterministic() {
    let a = track(&small(5), &TrackerConfig::mot20());
    let b = track(&small(5), &TrackerConfig::mot20());
    assert_eq!(a, b);
}

#[test]
fn simulator_respects_its_configuration() {
    let cfg = small(1);
    let s = generate_scenario(&cfg).unwrap();
    assert_eq!(s.frames.len(), cfg.n_frames);
    assert_eq!(s.latents.len(), cfg.n_identities);
    for f in &s.frames {
        assert_eq!(f.gt.objects.len(), cfg.n_identities);
        assert!(f.detections.len() <= cfg.n_identities);
        assert!(f.visibility.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(f.detections.iter().all(|d| d.embedding.dim() == cfg.embed_dim));
    }
    let occ = s.occluded_fraction(0.5);
    assert!((0.0..=1.0).contains(&occ));
    assert!(generate_scenario(&ScenarioConfig { p_drop: 2.0, ..cfg }).is_err());
}

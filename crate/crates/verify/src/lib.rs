//! Acceptance checks. Each check returns a one-line summary on success and the
//! reason on failure; `tests/acceptance.rs` runs them all and prints one line each.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajcon::assignment::{brute_force_oracle, solve_min_cost, CostMatrix};
use trajcon::gradcheck::{run_gradcheck, GradcheckConfig};
use trajcon::metrics::{clear_mot, evaluate, idf1, GroundTruthFrame};
use trajcon::mtcl::{
    info_nce, initial_model, model_separation, train, train_with, ConstantDetectionLoss, TrainConfig,
    TrajectoryCenterBank, UpdateStrategy,
};
use trajcon::sim::{generate_scenario, ScenarioConfig};
use trajcon::tracker::Stage;
use trajcon::{run_sequence, BetaMode, BoundingBox, Detection, Embedding, TrackStatus, Tracker, TrackerConfig};
use trajcon_cli::commands::{run, Cli, Status};

pub type Outcome = Result<String, String>;

pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

pub const CHECKS: [Check; 10] = [
    Check { id: 1, name: "assignment matches brute-force oracle", run: assignment_oracle },
    Check { id: 2, name: "analytic gradients match finite differences", run: gradients },
    Check { id: 3, name: "InfoNCE analytic anchors", run: info_nce_anchors },
    Check { id: 4, name: "memory-bank semantics", run: bank_semantics },
    Check { id: 5, name: "discriminability trend and hard-strategy ranking", run: discriminability },
    Check { id: 6, name: "adaptive fusion vs fixed beta under occlusion", run: fusion_trend },
    Check { id: 7, name: "noiseless end-to-end identity", run: noiseless_identity },
    Check { id: 8, name: "metrics hand-computed cases", run: metrics_oracle },
    Check { id: 9, name: "CLI reruns are bit-identical", run: cli_determinism },
    Check { id: 10, name: "tracker lifecycle under fuzzing", run: lifecycle_fuzz },
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn assignment_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut forbidden_cases = 0;
    for case in 0..1000 {
        let (n, m) = (rng.random_range(0..=7), rng.random_range(0..=7));
        let with_forbidden = case % 4 == 3;
        let costs = CostMatrix::from_fn(n, m, |_, _| {
            if with_forbidden && rng.random_bool(0.25) {
                f64::INFINITY
            } else {
                rng.random_range(0..40) as f64 * 0.25
            }
        });
        forbidden_cases += usize::from(with_forbidden);
        let fast = solve_min_cost(&costs);
        let oracle = brute_force_oracle(&costs).map_err(|e| e.to_string())?;
        ensure(fast.matches.len() == oracle.matches.len(), || {
            format!("case {case}: {n}x{m} cardinality {} vs oracle {}", fast.matches.len(), oracle.matches.len())
        })?;
        let (a, b) = (fast.total_cost(&costs), oracle.total_cost(&costs));
        ensure(a == b, || format!("case {case}: {n}x{m} cost {a} vs oracle {b}"))?;
    }
    Ok(format!("1000 matrices up to 7x7 agree exactly ({forbidden_cases} with forbidden entries)"))
}

pub fn gradients() -> Outcome {
    let report = run_gradcheck(&GradcheckConfig::default()).map_err(|e| e.to_string())?;
    let worst = report
        .parameters
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .ok_or("no parameters checked")?;
    let entries: usize = report.parameters.iter().map(|p| p.entries_checked).sum();
    let worst_abs = report.parameters.iter().map(|p| p.max_abs_error).fold(0.0, f64::max);
    ensure(report.passed(), || {
        let bad: Vec<String> = report
            .parameters
            .iter()
            .filter(|p| p.failures > 0)
            .map(|p| format!("{} ({} failures)", p.name, p.failures))
            .collect();
        format!("out of tolerance: {}", bad.join(", "))
    })?;
    Ok(format!(
        "{} configs, {} parameters, {entries} entries; worst relative error {:.2e} ({}), worst absolute {worst_abs:.2e}",
        report.configs,
        report.parameters.len(),
        worst.max_relative_error,
        worst.name
    ))
}

pub fn info_nce_anchors() -> Outcome {
    let mut one = TrajectoryCenterBank::<f64>::new(1, 3).map_err(|e| e.to_string())?;
    one.update_center(0, &[0.3, -0.5, 0.8], 0.2).map_err(|e| e.to_string())?;
    let single = info_nce(&[0.6, 0.0, 0.8], &one, 0, 0.05).map_err(|e| e.to_string())?;
    ensure(single == 0.0, || format!("single center loss {single}, expected exactly 0"))?;

    let mut two = TrajectoryCenterBank::<f64>::new(2, 2).map_err(|e| e.to_string())?;
    two.update_center(0, &[1.0, 0.0], 0.2).map_err(|e| e.to_string())?;
    two.update_center(1, &[0.0, 1.0], 0.2).map_err(|e| e.to_string())?;
    let loss = info_nce(&[1.0, 0.0], &two, 0, 1.0).map_err(|e| e.to_string())?;
    let expected = (-1.0f64).exp().ln_1p();
    ensure((loss - expected).abs() <= 1e-12, || format!("orthogonal pair loss {loss}, expected {expected}"))?;
    Ok(format!("single center 0 exactly; orthogonal pair {loss:.15} (|err| {:.1e})", (loss - expected).abs()))
}

pub fn bank_semantics() -> Outcome {
    let err = |e: trajcon::Error| e.to_string();
    let mut bank = TrajectoryCenterBank::<f64>::new(1, 3).map_err(err)?;
    bank.update_center(0, &[0.0, 3.0, 4.0], 0.5).map_err(err)?;
    let before = bank.center(0).map_err(err)?.to_vec();
    bank.update_center(0, &[1.0, -2.0, 0.5], 1.0).map_err(err)?;
    let after = bank.center(0).map_err(err)?.to_vec();
    let drift = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(drift <= 1e-12, || format!("alpha=1 moved the center by {drift}"))?;

    bank.update_center(0, &[2.0, 0.0, 0.0], 0.0).map_err(err)?;
    let replaced = bank.center(0).map_err(err)?;
    ensure(replaced == [1.0, 0.0, 0.0], || format!("alpha=0 gave {replaced:?}"))?;

    let mut b2 = TrajectoryCenterBank::<f64>::new(1, 2).map_err(err)?;
    b2.update_center(0, &[1.0, 0.0], 0.0).map_err(err)?;
    b2.update_center(0, &[0.0, 1.0], 0.2).map_err(err)?;
    let c = b2.center(0).map_err(err)?;
    ensure((c[0] - 0.2425).abs() <= 1e-4 && (c[1] - 0.9701).abs() <= 1e-4, || format!("momentum case gave {c:?}"))?;
    let exact = 0.2 / (0.2f64.powi(2) + 0.8f64.powi(2)).sqrt();
    ensure((c[0] - exact).abs() <= 1e-6, || format!("momentum case {} vs {exact}", c[0]))?;

    // 24 frames in batches of 8: a label seen in every batch counts 1, 2, 3 per epoch.
    let scenario = generate_scenario(&ScenarioConfig {
        n_identities: 4,
        n_frames: 24,
        seed: 3,
        ..ScenarioConfig::default()
    })
    .map_err(err)?;
    let data = scenario.training_frames().map_err(err)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    train_with(&data, &cfg, &ConstantDetectionLoss(0.0), |bank| {
        seen.push(bank.update_counts().iter().copied().max().unwrap_or(0));
    })
    .map_err(err)?;
    ensure(seen == [1, 2, 3, 1, 2, 3, 1, 2, 3], || format!("per-batch max update counts {seen:?}"))?;
    Ok(format!("alpha=1 drift {drift:.1e}; alpha=0 replaces; ({:.4}, {:.4}); counts restart each epoch", c[0], c[1]))
}

/// Epochs and step size for the desk-scale strategy comparison.
pub const TREND_EPOCHS: usize = 3;
pub const TREND_LEARNING_RATE: f64 = 1e-3;

pub fn discriminability() -> Outcome {
    let mut hard_wins = 0;
    let mut reduced = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let sc = ScenarioConfig {
            seed,
            ..ScenarioConfig::default()
        };
        let scenario = generate_scenario(&sc).map_err(|e| e.to_string())?;
        let data = scenario.training_frames().map_err(|e| e.to_string())?;
        let mut base = TrainConfig {
            epochs: TREND_EPOCHS,
            learning_rate: TREND_LEARNING_RATE,
            seed,
            ..TrainConfig::default()
        };
        base.dims.input = sc.fmap_channels;
        let untrained = model_separation(&data, &initial_model::<f64>(&base).map_err(|e| e.to_string())?, 5)
            .map_err(|e| e.to_string())?;
        let mut ratios = Vec::new();
        for strategy in UpdateStrategy::ALL {
            let out = train(&data, &TrainConfig { strategy, ..base.clone() }).map_err(|e| e.to_string())?;
            ratios.push(model_separation(&data, &out.model, 5).map_err(|e| e.to_string())?);
        }
        let hard = ratios[0];
        if hard < untrained {
            reduced += 1;
        }
        if ratios[1..].iter().all(|&r| hard <= r) {
            hard_wins += 1;
        }
        lines.push(format!(
            "seed {seed}: untrained {untrained:.4} hard {:.4} easy {:.4} random {:.4} average {:.4}",
            ratios[0], ratios[1], ratios[2], ratios[3]
        ));
    }
    let summary = format!("training reduced the ratio in {reduced}/10 seeds; hard best in {hard_wins}/10 seeds");
    if reduced == 10 && hard_wins >= 7 {
        Ok(summary)
    } else {
        Err(format!("{summary} (need 10/10 and >= 7/10)\n      {}", lines.join("\n      ")))
    }
}

/// Crowd density at which every seed has at least 20% of instances below 0.3 visibility.
pub const OCCLUSION_IDENTITIES: usize = 34;

pub fn fusion_trend() -> Outcome {
    let (mut ids_a, mut ids_f, mut idf1_a, mut idf1_f) = (vec![], vec![], vec![], vec![]);
    let mut min_occ = f64::INFINITY;
    for seed in 0..10u64 {
        let scenario = generate_scenario(&ScenarioConfig {
            n_identities: OCCLUSION_IDENTITIES,
            seed,
            ..ScenarioConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let occ = scenario.occluded_fraction(0.3);
        min_occ = min_occ.min(occ);
        ensure(occ >= 0.2, || format!("seed {seed} is not occlusion-heavy ({occ:.3} < 0.2)"))?;
        let gt = scenario.ground_truth();
        let dets = scenario.detections();
        for (mode, ids, f1) in [
            (BetaMode::Adaptive, &mut ids_a, &mut idf1_a),
            (BetaMode::Fixed(0.9), &mut ids_f, &mut idf1_f),
        ] {
            let out = run_sequence(&dets, &TrackerConfig { beta_mode: mode, ..TrackerConfig::default() })
                .map_err(|e| e.to_string())?;
            let hyp: Vec<GroundTruthFrame<f64>> = out
                .iter()
                .map(|f| GroundTruthFrame::new(f.frame, f.boxes.iter().map(|b| (b.id, b.bbox)).collect()))
                .collect();
            let r = evaluate(&gt, &hyp).map_err(|e| e.to_string())?;
            ids.push(r.ids as f64);
            f1.push(r.idf1);
        }
    }
    let (ma, mf) = (median(&mut ids_a), median(&mut ids_f));
    let (fa, ff) = (median(&mut idf1_a), median(&mut idf1_f));
    let summary = format!(
        "min occluded fraction {min_occ:.3}; median IDS adaptive {ma} vs fixed {mf}; median IDF1 {fa:.4} vs {ff:.4}"
    );
    if ma <= mf && fa >= ff - 0.01 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

pub fn noiseless_identity() -> Outcome {
    let scenario = generate_scenario(&ScenarioConfig::default().noiseless()).map_err(|e| e.to_string())?;
    let out = run_sequence(&scenario.detections(), &TrackerConfig::default()).map_err(|e| e.to_string())?;
    let hyp: Vec<GroundTruthFrame<f64>> = out
        .iter()
        .map(|f| GroundTruthFrame::new(f.frame, f.boxes.iter().map(|b| (b.id, b.bbox)).collect()))
        .collect();
    let r = evaluate(&scenario.ground_truth(), &hyp).map_err(|e| e.to_string())?;
    let summary = format!("MOTA {} IDF1 {} IDS {} over {} gt boxes", r.mota, r.idf1, r.ids, r.gt_total);
    if r.mota == 1.0 && r.idf1 == 1.0 && r.ids == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn unit_box(x: f64) -> BoundingBox<f64> {
    BoundingBox::new(x, 0.0, 10.0, 10.0)
}

fn frame(f: u32, objs: &[(u32, f64)]) -> GroundTruthFrame<f64> {
    GroundTruthFrame::new(f, objs.iter().map(|&(id, x)| (id, unit_box(x))).collect())
}

pub fn metrics_oracle() -> Outcome {
    // Ten gt boxes: one false positive (frame 2), two misses (frames 3 and 4),
    // one identity switch (frame 5, target 2 reappears under a new id).
    let gt: Vec<_> = (1..=5).map(|f| frame(f, &[(1, 0.0), (2, 100.0)])).collect();
    let hyp = vec![
        frame(1, &[(1, 0.0), (2, 100.0)]),
        frame(2, &[(1, 0.0), (2, 100.0), (9, 300.0)]),
        frame(3, &[(1, 0.0)]),
        frame(4, &[(1, 0.0)]),
        frame(5, &[(1, 0.0), (3, 100.0)]),
    ];
    let r = clear_mot(&gt, &hyp).map_err(|e| e.to_string())?;
    ensure((r.fp, r.fn_, r.ids, r.gt_total) == (1, 2, 1, 10), || {
        format!("counts FP {} FN {} IDS {} GT {}", r.fp, r.fn_, r.ids, r.gt_total)
    })?;
    ensure(r.mota == 0.6, || format!("MOTA {}", r.mota))?;

    // One identity over ten frames, covered by one hypothesis for the first five.
    let gt: Vec<_> = (1..=10).map(|f| frame(f, &[(1, 0.0)])).collect();
    let hyp: Vec<_> = (1..=5).map(|f| frame(f, &[(4, 0.0)])).collect();
    let s = idf1(&gt, &hyp).map_err(|e| e.to_string())?;
    ensure(s.idf1 == 2.0 / 3.0, || format!("IDF1 {}", s.idf1))?;
    Ok(format!("MOTA {} (FP 1, FN 2, IDS 1, GT 10); IDF1 {}", r.mota, s.idf1))
}

fn cli(args: &[&str]) -> Result<Status, String> {
    let cli = Cli::from_args(std::iter::once("trajcon").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    run(cli, &mut std::io::sink()).map_err(|e| format!("{args:?}: {e:#}"))
}

fn files_under(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).map_err(|e| e.to_string())?;
                out.insert(rel.display().to_string(), fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn cli_session(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).display().to_string();
    let (sim, ckpt, results) = (p("sim"), p("train/checkpoint.txt"), p("track/results.txt"));
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate", "-o", &sim, "--seed", "7", "--fmaps", "--set", "n_frames=30", "--set", "n_identities=6"]
            .into_iter()
            .map(String::from)
            .collect(),
        ["train", "--scenario", &sim, "-o", &p("train"), "--epochs", "2", "--set", "learning_rate=0.001"]
            .map(String::from)
            .to_vec(),
        ["train", "--scenario", &sim, "-o", &p("train_avg"), "--epochs", "1", "--strategy", "average", "--seed", "3"]
            .map(String::from)
            .to_vec(),
        ["track", "--scenario", &sim, "-o", &p("track")].map(String::from).to_vec(),
        ["track", "--scenario", &sim, "--checkpoint", &ckpt, "--beta", "fixed:0.9", "--preset", "mot20", "-o", &p("track_ckpt")]
            .map(String::from)
            .to_vec(),
        ["evaluate", "--gt", &format!("{sim}/gt.txt"), "--result", &results, "-o", &p("eval")]
            .map(String::from)
            .to_vec(),
        ["gradcheck", "--configs", "3", "--seed", "5", "-o", &p("gradcheck")].map(String::from).to_vec(),
        ["bench", "--set", "n_frames=20", "--repeat", "1"].map(String::from).to_vec(),
    ];
    for args in &steps {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let status = cli(&refs)?;
        ensure(status == Status::Ok, || format!("{refs:?} reported a verification failure"))?;
    }
    Ok(())
}

pub fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli_session(&a)?;
    cli_session(&b)?;
    let (fa, fb) = (files_under(&a)?, files_under(&b)?);
    ensure(fa.keys().eq(fb.keys()), || format!("file sets differ: {:?} vs {:?}", fa.keys(), fb.keys()))?;
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("files differ between runs: {differing:?}"))?;
    let bytes: usize = fa.values().map(Vec::len).sum();
    Ok(format!(
        "simulate, train x2, track x2, evaluate, gradcheck, bench: {} files ({bytes} bytes) identical",
        fa.len()
    ))
}

/// A random sequence: agents that wander, vanish for long spells and reappear,
/// plus clutter detections with random appearance.
fn fuzz_sequence(seed: u64, n_agents: usize, n_frames: usize) -> Vec<Vec<Detection<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 8;
    let unit = |rng: &mut ChaCha8Rng| -> Embedding<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        trajcon::l2_normalize(&v).vector
    };
    let latents: Vec<Embedding<f64>> = (0..n_agents).map(|_| unit(&mut rng)).collect();
    let mut pos: Vec<(f64, f64)> = (0..n_agents)
        .map(|_| (rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)))
        .collect();
    let mut visible = vec![true; n_agents];
    (1..=n_frames as u32)
        .map(|f| {
            let mut dets = Vec::new();
            for a in 0..n_agents {
                if rng.random_bool(0.06) {
                    visible[a] = !visible[a];
                }
                pos[a].0 += rng.random_range(-6.0..6.0);
                pos[a].1 += rng.random_range(-6.0..6.0);
                if visible[a] && rng.random_bool(0.85) {
                    let bbox = BoundingBox::new(pos[a].0, pos[a].1, 20.0 + rng.random_range(0.0..4.0), 50.0);
                    let emb = if rng.random_bool(0.8) { latents[a].clone() } else { unit(&mut rng) };
                    dets.push(Detection::new(f, bbox, 0.9, emb));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                let bbox = BoundingBox::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), 20.0, 40.0);
                dets.push(Detection::new(f, bbox, 0.5, unit(&mut rng)));
            }
            dets
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub frames: usize,
    pub matches: usize,
    pub lambda_deletions: usize,
    pub unconfirmed_deletions: usize,
}

/// Steps a tracker over `frames`, checking the status graph, the one-match-per-step
/// partition and the deletion rule after every frame.
pub fn check_lifecycle(frames: &[Vec<Detection<f64>>], cfg: &TrackerConfig) -> Result<FuzzStats, String> {
    let mut tracker: Tracker<f64> = Tracker::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut stats = FuzzStats::default();
    let mut ever_seen: HashSet<u32> = HashSet::new();
    for (t, dets) in frames.iter().enumerate() {
        let before: BTreeMap<u32, (TrackStatus, u32)> = tracker
            .trajectories()
            .iter()
            .map(|tr| (tr.id, (tr.status, tr.missing_frames)))
            .collect();
        let res = tracker.step(dets).map_err(|e| e.to_string())?;
        let after: BTreeMap<u32, (TrackStatus, u32)> = tracker
            .trajectories()
            .iter()
            .map(|tr| (tr.id, (tr.status, tr.missing_frames)))
            .collect();
        let ctx = |m: String| format!("frame {}: {m}", t + 1);

        let det_ids: HashSet<usize> = res.matches.iter().map(|m| m.0).collect();
        let track_ids: HashSet<u32> = res.matches.iter().map(|m| m.1).collect();
        ensure(det_ids.len() == res.matches.len(), || ctx("a detection matched twice".into()))?;
        ensure(track_ids.len() == res.matches.len(), || ctx("a trajectory matched twice".into()))?;
        ensure(res.matches.len() + res.created.len() == dets.len(), || {
            ctx(format!("{} matched + {} created != {} detections", res.matches.len(), res.created.len(), dets.len()))
        })?;
        for &(d, id, stage) in &res.matches {
            let Some(&(prev, _)) = before.get(&id) else {
                return Err(ctx(format!("detection {d} matched unknown trajectory {id}")));
            };
            let eligible = match stage {
                Stage::Appearance => matches!(prev, TrackStatus::Active | TrackStatus::Lost),
                Stage::Iou => prev == TrackStatus::Active,
                Stage::Unactivated => prev == TrackStatus::Unactivated,
            };
            ensure(eligible, || ctx(format!("{prev:?} trajectory {id} matched in stage {stage:?}")))?;
            ensure(after.get(&id) == Some(&(TrackStatus::Active, 0)), || {
                ctx(format!("matched trajectory {id} is {:?}", after.get(&id)))
            })?;
        }
        for &id in &res.created {
            ensure(!before.contains_key(&id) && ever_seen.insert(id), || ctx(format!("id {id} reused")))?;
            let want = if t == 0 && cfg.activate_first_frame { TrackStatus::Active } else { TrackStatus::Unactivated };
            ensure(after.get(&id).map(|s| s.0) == Some(want), || ctx(format!("new trajectory {id} not {want:?}")))?;
        }
        for &id in &res.deleted {
            let Some(&(prev, missing)) = before.get(&id) else {
                return Err(ctx(format!("deleted trajectory {id} did not exist")));
            };
            ensure(!after.contains_key(&id), || ctx(format!("deleted trajectory {id} still present")))?;
            ensure(prev.can_become(TrackStatus::Deleted), || ctx(format!("{prev:?} cannot be deleted")))?;
            match prev {
                TrackStatus::Unactivated => stats.unconfirmed_deletions += 1,
                _ => {
                    ensure(missing == cfg.lambda, || {
                        ctx(format!("trajectory {id} deleted after {} missed frames", missing + 1))
                    })?;
                    stats.lambda_deletions += 1;
                }
            }
        }
        for (id, &(prev, missing)) in &before {
            if res.deleted.contains(id) || track_ids.contains(id) {
                continue;
            }
            let Some(&(now, now_missing)) = after.get(id) else {
                return Err(ctx(format!("trajectory {id} vanished without deletion")));
            };
            ensure(prev.can_become(now), || ctx(format!("illegal transition {prev:?} -> {now:?}")))?;
            ensure(prev != TrackStatus::Unactivated, || ctx(format!("unmatched unconfirmed {id} survived")))?;
            ensure(now == TrackStatus::Lost && now_missing == missing + 1 && now_missing <= cfg.lambda, || {
                ctx(format!("unmatched trajectory {id}: {prev:?}/{missing} -> {now:?}/{now_missing}"))
            })?;
        }
        stats.frames += 1;
        stats.matches += res.matches.len();
    }
    Ok(stats)
}

pub fn lifecycle_fuzz() -> Outcome {
    let cfg = TrackerConfig::default();
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 100,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let total = std::cell::Cell::new(FuzzStats::default());
    runner
        .run(&(any::<u64>(), 1usize..9), |(seed, agents)| {
            let s = check_lifecycle(&fuzz_sequence(seed, agents, 100), &cfg).map_err(TestCaseError::fail)?;
            let mut t = total.get();
            t.frames += s.frames;
            t.matches += s.matches;
            t.lambda_deletions += s.lambda_deletions;
            t.unconfirmed_deletions += s.unconfirmed_deletions;
            total.set(t);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let t = total.get();
    ensure(t.frames >= 10_000, || format!("only {} frames fuzzed", t.frames))?;
    ensure(t.lambda_deletions > 0, || "no trajectory aged out; the deletion rule was never exercised".into())?;
    Ok(format!(
        "{} frames, {} matches, {} aged-out and {} unconfirmed deletions, no violations",
        t.frames, t.matches, t.lambda_deletions, t.unconfirmed_deletions
    ))
}

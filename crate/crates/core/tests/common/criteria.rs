//! One check per acceptance criterion. Each returns a short detail line on
//! success and the reason on failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nearsight::alert::{AlertEngine, AlertPolicy};
use nearsight::fusion::ProximityHit;
use nearsight::ingest::{decode_kitti_depth, decode_kitti_raw, encode_kitti_raw, RawDepthImage};
use nearsight::metrics::{
    abs_rel, average_precision, depth_metrics, rmse, sq_rel, DepthSamplePair, DetectionEvaluator, MatchConfig,
    MetricError, ScoredFlag,
};
use nearsight::postprocess::nms;
use nearsight::types::{BBox, DepthMap, Detection, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn ap_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    let cfg = MatchConfig { iou_threshold: 0.5 };
    let n = 2000;
    for case in 0..n {
        let (preds, truth) = random_instance(&mut rng, 20, 10, 3);
        let mut ev = DetectionEvaluator::new(cfg);
        ev.add_image(&preds, &truth);
        let oracle = oracle_detection(&[(preds.clone(), truth.clone())], 0.5);
        match ev.finish(11) {
            Ok(m) => {
                for c in 0..NUM_CLASSES {
                    let (got, want) = (m.per_class_ap[c], oracle.per_class_ap[c]);
                    let same = match (got, want) {
                        (Some(g), Some(w)) => close(g, w, 1e-9),
                        (None, None) => true,
                        _ => false,
                    };
                    ensure!(same, "case {case} class {c}: AP {got:?}, oracle {want:?}");
                }
                ensure!(close(m.map, oracle.map, 1e-9), "case {case}: mAP {} vs {}", m.map, oracle.map);
            }
            Err(MetricError::NoDefinedClasses) => {
                ensure!(truth.is_empty(), "case {case}: mAP undefined with {} truths", truth.len());
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
        // the AP routine directly, on flags with heavy ties
        let flags: Vec<(f64, bool)> = (0..rng.random_range(0..=20))
            .map(|_| (random_confidence(&mut rng), rng.random_bool(0.5)))
            .collect();
        let n_tp = flags.iter().filter(|f| f.1).count();
        let n_truth = n_tp + rng.random_range(0..=5);
        let scored: Vec<ScoredFlag> = flags
            .iter()
            .map(|&(confidence, is_tp)| ScoredFlag { confidence, is_tp })
            .collect();
        let (got, want) = (average_precision(&scored, n_truth), oracle_ap(&flags, n_truth));
        let same = match (got, want) {
            (Some(g), Some(w)) => close(g, w, 1e-9),
            (None, None) => true,
            _ => false,
        };
        ensure!(same, "case {case}: flag AP {got:?}, oracle {want:?}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{n} instances in {secs:.2} s"))
}

fn map_1d(values: &[f64]) -> DepthMap {
    DepthMap::dense(values.len() as u32, 1, values.to_vec()).unwrap()
}

pub fn depth_fixtures() -> Check {
    let pair_metric = |f: fn(&DepthSamplePair<'_>) -> Result<f64, MetricError>, est: &[f64], truth: &[f64]| {
        let (e, t) = (map_1d(est), map_1d(truth));
        f(&DepthSamplePair::new(&e, &t).unwrap()).unwrap()
    };
    let cases: [(&str, fn(&DepthSamplePair<'_>) -> Result<f64, MetricError>, &[f64], &[f64], f64); 6] = [
        ("abs_rel [1,5] vs [2,4]", abs_rel, &[1.0, 5.0], &[2.0, 4.0], 0.375),
        ("abs_rel [3] vs [1]", abs_rel, &[3.0], &[1.0], 2.0),
        ("sq_rel [1,5] vs [2,4]", sq_rel, &[1.0, 5.0], &[2.0, 4.0], 0.375),
        ("sq_rel [3] vs [1]", sq_rel, &[3.0], &[1.0], 4.0),
        ("rmse [3,4] vs [0,0]", rmse, &[3.0, 4.0], &[0.0, 0.0], 12.5f64.sqrt()),
        ("rmse off by 2", rmse, &[7.0], &[5.0], 2.0),
    ];
    for (name, f, est, truth, want) in cases {
        let got = pair_metric(f, est, truth);
        ensure!(close(got, want, 1e-12), "{name}: {got} != {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xD3);
    for case in 0..200 {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = (w * h) as usize;
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..80.0)).collect();
        let est: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..80.0)).collect();
        let valid: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.8)).collect();
        let t = DepthMap::new(w, h, truth.clone(), valid.clone()).unwrap();
        let e = DepthMap::dense(w, h, est.clone()).unwrap();

        let same = depth_metrics(&DepthSamplePair::new(&t, &t).unwrap()).unwrap();
        ensure!(
            same.abs_rel == 0.0 && same.sq_rel == 0.0 && same.rmse == 0.0,
            "case {case}: identical maps give {same:?}"
        );

        let m = depth_metrics(&DepthSamplePair::new(&e, &t).unwrap()).unwrap();
        let pixels: Vec<(f64, f64, bool)> = (0..n).map(|i| (est[i], truth[i], valid[i])).collect();
        let (ar, sr, rm) = oracle_depth(&pixels);
        ensure!(
            close(m.abs_rel, ar, 1e-9) && close(m.sq_rel, sr, 1e-9) && close(m.rmse, rm, 1e-9),
            "case {case}: {m:?} vs oracle ({ar}, {sr}, {rm})"
        );

        let k = rng.random_range(0.1..10.0);
        let ts = DepthMap::new(w, h, truth.iter().map(|v| v * k).collect(), valid).unwrap();
        let es = DepthMap::dense(w, h, est.iter().map(|v| v * k).collect()).unwrap();
        let scaled = depth_metrics(&DepthSamplePair::new(&es, &ts).unwrap()).unwrap();
        ensure!(
            close(scaled.abs_rel, m.abs_rel, 1e-9 * m.abs_rel.max(1.0)),
            "case {case}: AbsRel {} -> {} under scale {k}",
            m.abs_rel,
            scaled.abs_rel
        );
        ensure!(
            close(scaled.rmse, k * m.rmse, 1e-9 * (k * m.rmse).max(1.0)),
            "case {case}: RMSE not scale covariant"
        );
    }
    Ok("6 worked examples, 200 random maps".into())
}

fn random_detections(rng: &mut impl Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| Detection {
            bbox: random_box(rng, 60.0, 60.0),
            class_id: cid(rng.random_range(0..3)),
            confidence: random_confidence(rng),
        })
        .collect()
}

pub fn nms_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4E);
    let n = 2000;
    let mut suppressed = 0usize;
    for case in 0..n {
        let len = rng.random_range(0..=50);
        let dets = random_detections(&mut rng, len);
        let thr = [0.3, 0.45, 0.5, 0.7, 1.0][rng.random_range(0..5)];
        let agnostic = rng.random_bool(0.3);
        let max_out = if rng.random_bool(0.2) { rng.random_range(0..10) } else { 300 };
        let got = nms(&dets, thr, agnostic, max_out);
        let want = oracle_nms(&dets, thr, agnostic, max_out);
        ensure!(got == want, "case {case}: {} kept, oracle {}", got.len(), want.len());
        ensure!(got.len() <= dets.len().min(max_out), "case {case}: output too long");
        let again = nms(&got, thr, agnostic, max_out);
        ensure!(again == got, "case {case}: not idempotent");
        suppressed += dets.len().min(max_out) - got.len();
    }
    ensure!(suppressed > 0, "no instance exercised suppression");
    Ok(format!("{n} instances, {suppressed} suppressions"))
}

pub fn kitti_decode() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x16);
    for case in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let pixels: Vec<u16> = (0..w * h)
            .map(|_| match rng.random_range(0..4) {
                0 => 0,
                1 => u16::MAX,
                _ => rng.random(),
            })
            .collect();
        let img = RawDepthImage { width: w, height: h, pixels };
        let bytes = encode_kitti_raw(&img).map_err(|e| e.to_string())?;
        let back = decode_kitti_raw(&bytes).map_err(|e| e.to_string())?;
        ensure!(back == img, "case {case}: round trip changed pixels");
        let again = encode_kitti_raw(&back).map_err(|e| e.to_string())?;
        ensure!(
            decode_kitti_raw(&again).map_err(|e| e.to_string())? == img,
            "case {case}: second round trip differs"
        );
    }
    let bytes = encode_kitti_raw(&RawDepthImage {
        width: 3,
        height: 1,
        pixels: vec![5120, 0, 256],
    })
    .map_err(|e| e.to_string())?;
    let map = decode_kitti_depth(&bytes).map_err(|e| e.to_string())?;
    ensure!(map.at(0, 0) == Some(20.0), "5120 decodes to {:?}", map.at(0, 0));
    ensure!(map.at(1, 0).is_none() && !map.valid()[1], "0 is not invalid");
    ensure!(map.at(2, 0) == Some(1.0), "256 decodes to {:?}", map.at(2, 0));
    Ok("100 random images bit-exact, 5120 -> 20 m, 0 -> invalid".into())
}

fn run_scenario(config: &Path) -> Result<(Vec<u8>, serde_json::Value), String> {
    let dir = config.parent().unwrap();
    let trace = dir.join("trace.tsv");
    let _ = std::fs::remove_file(&trace);
    let out = Command::new(nearsight_bin())
        .arg("--config")
        .arg(config)
        .arg("run")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "run exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    Ok((std::fs::read(&trace).map_err(|e| e.to_string())?, stats))
}

pub fn end_to_end_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_truck_scenario(dir.path());
    let (first, stats) = run_scenario(&config)?;
    let (second, _) = run_scenario(&config)?;
    ensure!(stats["frames_processed"] == 10, "processed {}", stats["frames_processed"]);
    ensure!(first == second, "traces differ between runs");
    let text = String::from_utf8(first).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure!(lines.len() == 1, "expected one event, trace has {}:\n{text}", lines.len());
    let fields: Vec<&str> = lines[0].split('\t').collect();
    ensure!(fields[1] == "5" && fields[2] == "truck", "unexpected event {:?}", lines[0]);
    Ok(format!("one event `{}`, traces identical", lines[0]))
}

fn random_hits(rng: &mut impl Rng) -> Vec<ProximityHit> {
    (0..rng.random_range(0..5))
        .map(|_| {
            let depth_m = rng.random_range(0.5..6.0);
            ProximityHit {
                detection: Detection {
                    bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                    // a few classes so streaks build up
                    class_id: cid([0, 4, 6, 9][rng.random_range(0..4)]),
                    confidence: rng.random_range(0.1..1.0),
                },
                depth_m,
                is_close: depth_m < 3.0 && rng.random_bool(0.9),
                valid_fraction: 1.0,
            }
        })
        .collect()
}

/// Replays a random hit sequence and checks every emitted event against
/// the policy, using only the inputs and outputs.
pub fn alert_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut total_events = 0;
    let runs = 6;
    let frames = 20_000u64;
    for run in 0..runs {
        let policy = AlertPolicy {
            debounce_frames: rng.random_range(1..5),
            cooldown_ms: [0, 100, 500, 2000][rng.random_range(0..4)],
            max_alerts_per_frame: rng.random_range(1..3),
            ..AlertPolicy::default()
        };
        let cooldown_ns = policy.cooldown_ms * 1_000_000;
        let mut engine = AlertEngine::new(policy.clone()).map_err(|e| e.to_string())?;
        let mut close_history: Vec<[bool; NUM_CLASSES]> = Vec::new();
        let mut last_fired: [Option<u64>; NUM_CLASSES] = [None; NUM_CLASSES];
        let mut now = 0u64;
        for id in 0..frames {
            now += rng.random_range(10_000_000..80_000_000);
            let hits = random_hits(&mut rng);
            let mut close_now = [false; NUM_CLASSES];
            for h in hits.iter().filter(|h| h.is_close) {
                close_now[h.detection.class_id.index()] = true;
            }
            close_history.push(close_now);
            let events = engine.step(id, &hits, now).map_err(|e| e.to_string())?;
            ensure!(
                events.len() <= policy.max_alerts_per_frame,
                "run {run} frame {id}: {} events",
                events.len()
            );
            for e in &events {
                let c = e.class_id.index();
                let need = policy.debounce_frames as usize;
                ensure!(
                    close_history.len() >= need && close_history[close_history.len() - need..].iter().all(|f| f[c]),
                    "run {run} frame {id}: class {c} fired without {need} close frames"
                );
                if let Some(t) = last_fired[c] {
                    ensure!(now - t >= cooldown_ns, "run {run} frame {id}: class {c} inside cooldown");
                }
                last_fired[c] = Some(now);
            }
            total_events += events.len();
        }
    }
    ensure!(total_events > 0, "no events were emitted");
    Ok(format!("{} frames, {total_events} events", runs as u64 * frames))
}

pub fn throughput() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stats_path = dir.path().join("bench.json");
    let out = Command::new(nearsight_bin())
        .current_dir(dir.path())
        .args(["bench", "--frames", "100", "--stats", "bench.json"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "bench exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats_path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let fps = stats["fps"].as_f64().ok_or("no fps")?;
    ensure!(stats["frames_processed"] == 100, "processed {}", stats["frames_processed"]);
    ensure!(fps >= 15.0, "{fps:.1} fps");

    // memory: the second half of the run must not grow past the first half
    let samples: Vec<(u64, u64)> = stats["rss_samples"]
        .as_array()
        .ok_or("no rss samples")?
        .iter()
        .filter_map(|s| Some((s["frames"].as_u64()?, s["rss_bytes"].as_u64()?)))
        .collect();
    ensure!(samples.len() >= 3, "only {} rss samples", samples.len());
    let half = samples.iter().filter(|s| s.0 <= 50).map(|s| s.1).max().unwrap_or(0);
    let late = samples.iter().filter(|s| s.0 > 50).map(|s| s.1).max().unwrap_or(0);
    ensure!(
        late as f64 <= half as f64 * 1.10 + 4e6,
        "rss grew from {half} to {late} bytes"
    );
    Ok(format!("{fps:.0} fps, peak rss {:.1} MB", late.max(half) as f64 / 1e6))
}

fn report_models(dir: &Path, original: u64, quantized: u64) -> Result<f64, String> {
    let (o, q) = (dir.join(format!("o{original}.onnx")), dir.join(format!("q{quantized}.onnx")));
    for (p, len) in [(&o, original), (&q, quantized)] {
        std::fs::File::create(p).and_then(|f| f.set_len(len)).map_err(|e| e.to_string())?;
    }
    let out = Command::new(nearsight_bin())
        .arg("report-models")
        .args([&o, &q])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "report-models failed: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    v["reduction_percent"].as_f64().ok_or_else(|| "no reduction_percent".into())
}

pub fn quantization_report() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let depth = report_models(dir.path(), 470_000_000, 162_400_000)?;
    let detect = report_models(dir.path(), 49_600_000, 25_000_000)?;
    ensure!(close(depth, 65.4, 0.1), "470 -> 162.4 MB reports {depth}%");
    ensure!(close(detect, 49.6, 0.1), "49.6 -> 25 MB reports {detect}%");
    Ok(format!("{depth:.2}% and {detect:.2}%"))
}

pub fn synthetic_evaluation() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = write_eval_fixture(dir.path(), 0x20);
    let out_dir = dir.path().join("report");
    let out = Command::new(nearsight_bin())
        .args(["evaluate", "--manifest"])
        .arg(&fixture.manifest)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "evaluate failed: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let det = &report["detection"];
    let (map50, f1) = (det["map50"].as_f64().ok_or("no map50")?, det["f1"].as_f64().ok_or("no f1")?);
    let abs_rel = report["depth"]["abs_rel"].as_f64().ok_or("no abs_rel")?;

    let oracle = fixture_oracle(dir.path());
    ensure!(close(map50, oracle.map50, 1e-9), "mAP50 {map50} vs oracle {}", oracle.map50);
    ensure!(close(f1, oracle.f1, 1e-9), "F1 {f1} vs oracle {}", oracle.f1);
    ensure!(close(abs_rel, oracle.abs_rel, 1e-9), "AbsRel {abs_rel} vs oracle {}", oracle.abs_rel);
    ensure!(oracle.map50 < 1.0 && oracle.f1 < 1.0 && oracle.abs_rel > 0.0, "planted errors had no effect");
    for f in ["report.json", "pr_curve.tsv", "confusion_matrix.tsv"] {
        ensure!(out_dir.join(f).is_file(), "{f} not written");
    }
    Ok(format!(
        "mAP50 {map50:.6}, F1 {f1:.6}, AbsRel {abs_rel:.6} match the oracle; published model figures need the unpublished models and data"
    ))
}

pub fn perfect_input() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = write_perfect_fixture(dir.path(), 0x10);
    let out = Command::new(nearsight_bin())
        .args(["evaluate", "--manifest"])
        .arg(&fixture)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "evaluate failed: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let det = &report["detection"];
    let depth = &report["depth"];
    ensure!(det["map50"] == 1.0 && det["f1"] == 1.0, "mAP50 {} F1 {}", det["map50"], det["f1"]);
    for k in ["abs_rel", "sq_rel", "rmse"] {
        ensure!(depth[k] == 0.0, "{k} = {}", depth[k]);
    }
    Ok("mAP50 = F1 = 1, depth errors = 0".into())
}

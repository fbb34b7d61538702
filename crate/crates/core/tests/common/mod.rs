//! Brute-force oracles and fixture builders shared by the integration tests.
//!
//! The oracles are written from the metric definitions, not from the
//! library code, and deliberately take different routes to the same answer.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nearsight::types::{BBox, ClassId, Detection, GroundTruthObject};
use rand::Rng;

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `true` if `a` outranks `b`: higher confidence, then lower class id,
/// then earlier input position.
fn outranks(a: (usize, &Detection), b: (usize, &Detection)) -> bool {
    let (ia, da) = a;
    let (ib, db) = b;
    if da.confidence != db.confidence {
        return da.confidence > db.confidence;
    }
    if da.class_id != db.class_id {
        return da.class_id < db.class_id;
    }
    ia < ib
}

/// Greedy NMS by repeated selection: take the best remaining box, delete
/// everything it suppresses, repeat.
pub fn oracle_nms(dets: &[Detection], thresh: f64, agnostic: bool, max_out: usize) -> Vec<Detection> {
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut kept = Vec::new();
    while kept.len() < max_out {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.map_or(true, |b| outranks((i, &dets[i]), (b, &dets[b]))) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(dets[b]);
        for j in 0..dets.len() {
            if alive[j]
                && (agnostic || dets[j].class_id == dets[b].class_id)
                && oracle_iou(&dets[j].bbox, &dets[b].bbox) >= thresh
            {
                alive[j] = false;
            }
        }
    }
    kept
}

/// TP flag per prediction (input order) under greedy one-to-one matching.
pub fn oracle_match(preds: &[Detection], truth: &[GroundTruthObject], thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // insertion sort keeps ties in input order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && preds[order[j]].confidence > preds[order[j - 1]].confidence {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut used = vec![false; truth.len()];
    let mut tp = vec![false; preds.len()];
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truth.iter().enumerate() {
            if used[j] || t.class_id != preds[i].class_id {
                continue;
            }
            let v = oracle_iou(&preds[i].bbox, &t.bbox);
            if v >= thresh && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            tp[i] = true;
        }
    }
    tp
}

/// AP by enumerating every distinct confidence as a threshold, then
/// integrating the upper envelope of precision over recall.
pub fn oracle_ap(flags: &[(f64, bool)], n_truth: usize) -> Option<f64> {
    if n_truth == 0 {
        return None;
    }
    let mut levels: Vec<f64> = flags.iter().map(|f| f.0).collect();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&t| {
            let kept: Vec<&(f64, bool)> = flags.iter().filter(|f| f.0 >= t).collect();
            let tp = kept.iter().filter(|f| f.1).count() as f64;
            (tp / n_truth as f64, tp / kept.len() as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let envelope = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * envelope;
        prev = r;
    }
    Some(ap)
}

pub struct OracleDetection {
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl OracleDetection {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Dataset-level detection metrics from the oracles above.
pub fn oracle_detection(images: &[(Vec<Detection>, Vec<GroundTruthObject>)], thresh: f64) -> OracleDetection {
    let mut flags: Vec<Vec<(f64, bool)>> = vec![Vec::new(); 13];
    let mut n_truth = vec![0usize; 13];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (preds, truth) in images {
        let m = oracle_match(preds, truth, thresh);
        for (p, is_tp) in preds.iter().zip(m) {
            flags[p.class_id.index()].push((p.confidence, is_tp));
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for t in truth {
            n_truth[t.class_id.index()] += 1;
        }
    }
    let total_truth: usize = n_truth.iter().sum();
    let per_class_ap: Vec<Option<f64>> = (0..13).map(|c| oracle_ap(&flags[c], n_truth[c])).collect();
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    OracleDetection {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class_ap,
        tp,
        fp,
        fn_: total_truth as u64 - tp,
    }
}

/// Pooled AbsRel, SqRel and RMSE over `(estimate, truth, valid)` pixels.
pub fn oracle_depth(pixels: &[(f64, f64, bool)]) -> (f64, f64, f64) {
    let rel: Vec<(f64, f64)> = pixels.iter().filter(|p| p.2 && p.1 > 0.0).map(|p| (p.0, p.1)).collect();
    let all: Vec<(f64, f64)> = pixels.iter().filter(|p| p.2).map(|p| (p.0, p.1)).collect();
    let n = rel.len() as f64;
    let abs_rel = rel.iter().map(|(e, t)| (e - t).abs() / t).sum::<f64>() / n;
    let sq_rel = rel.iter().map(|(e, t)| (e - t).powi(2) / t).sum::<f64>() / n;
    let rmse = (all.iter().map(|(e, t)| (e - t).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    (abs_rel, sq_rel, rmse)
}

pub fn cid(c: usize) -> ClassId {
    ClassId::new(c as i64).unwrap()
}

/// A random box inside `w x h` with sides of at least 2 pixels.
pub fn random_box(rng: &mut impl Rng, w: f64, h: f64) -> BBox {
    let x0 = rng.random_range(0.0..w - 2.0);
    let y0 = rng.random_range(0.0..h - 2.0);
    let x1 = rng.random_range(x0 + 1.0..w);
    let y1 = rng.random_range(y0 + 1.0..h);
    BBox::new(x0, y0, x1, y1).unwrap()
}

/// Confidence drawn from a small set so that ties occur.
pub fn random_confidence(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.3) {
        [0.25, 0.5, 0.75][rng.random_range(0..3)]
    } else {
        rng.random_range(0.0..=1.0)
    }
}

/// A random detection instance clustered so that overlaps are common.
pub fn random_instance(
    rng: &mut impl Rng,
    max_preds: usize,
    max_truth: usize,
    n_classes: usize,
) -> (Vec<Detection>, Vec<GroundTruthObject>) {
    let truth: Vec<GroundTruthObject> = (0..rng.random_range(0..=max_truth))
        .map(|_| GroundTruthObject {
            bbox: random_box(rng, 40.0, 40.0),
            class_id: cid(rng.random_range(0..n_classes)),
        })
        .collect();
    let preds = (0..rng.random_range(0..=max_preds))
        .map(|_| {
            let bbox = match truth.is_empty() || rng.random_bool(0.3) {
                true => random_box(rng, 40.0, 40.0),
                false => {
                    let t = truth[rng.random_range(0..truth.len())].bbox;
                    let j = |r: &mut dyn rand::RngCore| (r.next_u32() % 5) as f64 - 2.0;
                    BBox::new(
                        t.x_min + j(rng),
                        t.y_min + j(rng),
                        t.x_max + j(rng) + 2.0,
                        t.y_max + j(rng) + 2.0,
                    )
                    .unwrap_or(t)
                }
            };
            Detection {
                bbox,
                class_id: cid(rng.random_range(0..n_classes)),
                confidence: random_confidence(rng),
            }
        })
        .collect();
    (preds, truth)
}

pub fn write_rgb_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::RgbImage::from_pixel(w, h, image::Rgb(rgb)).save(path).unwrap();
}

pub fn nearsight_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_nearsight"))
}

/// The scripted scenario: ten black frames, a close truck on frames 3 to 5,
/// debounce 3 and cooldown 2 s. Returns the config path.
pub fn write_truck_scenario(dir: &Path) -> PathBuf {
    for i in 0..10 {
        write_rgb_png(&dir.join(format!("frames/f{i:02}.png")), 64, 48, [0, 0, 0]);
    }
    let truck = r#"[{"box": [60.0, 60.0, 160.0, 160.0], "class_id": 4, "score": 0.9}]"#;
    let fixture = format!(r#"{{"frames": {{"3": {truck}, "4": {truck}, "5": {truck}}}}}"#);
    std::fs::write(dir.join("fixture.json"), fixture).unwrap();
    let config = r#"
[input]
kind = "replay"
dir = "frames"
fps = 10.0

[queue]
depth = 4
policy = "block"

[backends.depth]
kind = "stub"
base = 1.0
gain = 9.0

[backends.detect]
kind = "stub"
fixture = "fixture.json"

[fusion]
proximity_threshold_m = 3.0

[alert]
debounce_frames = 3
cooldown_ms = 2000
max_alerts_per_frame = 1

[sinks]
trace = "trace.tsv"
"#;
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub mod criteria;

pub const EVAL_W: u32 = 640;
pub const EVAL_H: u32 = 480;
const DEPTH_W: u32 = 24;
const DEPTH_H: u32 = 16;

pub struct EvalFixture {
    pub manifest: PathBuf,
}

fn int_box(rng: &mut impl Rng) -> [i64; 4] {
    let w = rng.random_range(20..200);
    let h = rng.random_range(20..160);
    let x = rng.random_range(0..EVAL_W as i64 - w);
    let y = rng.random_range(0..EVAL_H as i64 - h);
    [x, y, x + w, y + h]
}

fn to_bbox(b: [i64; 4]) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).unwrap()
}

fn shifted(b: [i64; 4], dx: i64, dy: i64) -> [i64; 4] {
    let dx = dx.clamp(-b[0], EVAL_W as i64 - b[2]);
    let dy = dy.clamp(-b[1], EVAL_H as i64 - b[3]);
    [b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy]
}

fn label_line(class: usize, conf: Option<f64>, b: [i64; 4]) -> String {
    let (w, h) = (EVAL_W as f64, EVAL_H as f64);
    let cx = (b[0] + b[2]) as f64 / 2.0 / w;
    let cy = (b[1] + b[3]) as f64 / 2.0 / h;
    let bw = (b[2] - b[0]) as f64 / w;
    let bh = (b[3] - b[1]) as f64 / h;
    match conf {
        Some(c) => format!("{class} {c} {cx} {cy} {bw} {bh}\n"),
        None => format!("{class} {cx} {cy} {bw} {bh}\n"),
    }
}

fn write_depth_png(path: &Path, pixels: &[u16]) {
    let raw = nearsight::ingest::RawDepthImage {
        width: DEPTH_W,
        height: DEPTH_H,
        pixels: pixels.to_vec(),
    };
    std::fs::write(path, nearsight::ingest::encode_kitti_raw(&raw).unwrap()).unwrap();
}

fn write_manifest(dir: &Path) -> PathBuf {
    let path = dir.join("dataset.toml");
    std::fs::write(
        &path,
        format!(
            "label_dir = \"labels\"\nprediction_dir = \"predictions\"\n\
             depth_truth_dir = \"depth_truth\"\ndepth_estimate_dir = \"depth_estimate\"\n\
             image_width = {EVAL_W}\nimage_height = {EVAL_H}\n"
        ),
    )
    .unwrap();
    path
}

/// Twenty images with planted detection errors (misses, large shifts,
/// class swaps, spurious boxes) and noisy depth estimates over truth maps
/// with holes. IoUs are kept away from the 0.5 threshold so that the
/// outcome does not hinge on float rounding.
pub fn write_eval_fixture(dir: &Path, seed: u64) -> EvalFixture {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for sub in ["labels", "predictions", "depth_truth", "depth_estimate"] {
        std::fs::create_dir_all(dir.join(sub)).unwrap();
    }
    let mut confidences: Vec<u32> = (1..1000).collect();
    confidences.shuffle(&mut rng);
    let mut next_conf = || confidences.pop().unwrap() as f64 / 1000.0;

    for i in 0..20 {
        let stem = format!("img{i:02}");
        let truth: Vec<(usize, [i64; 4])> = (0..rng.random_range(1..=5))
            .map(|_| (rng.random_range(0..5), int_box(&mut rng)))
            .collect();
        let mut preds: Vec<(usize, [i64; 4])> = Vec::new();
        for &(c, b) in &truth {
            match rng.random_range(0..10) {
                0 => {}
                1 => preds.push((c, shifted(b, rng.random_range(60..120), rng.random_range(-40..40)))),
                2 => preds.push(((c + 1 + rng.random_range(0..4)) % 5, b)),
                3 => {
                    // duplicate on the same object
                    preds.push((c, b));
                    preds.push((c, shifted(b, rng.random_range(-3..=3), rng.random_range(-3..=3))));
                }
                _ => preds.push((c, shifted(b, rng.random_range(-4..=4), rng.random_range(-4..=4)))),
            }
        }
        for _ in 0..rng.random_range(0..=2) {
            preds.push((rng.random_range(0..5), int_box(&mut rng)));
        }
        // nudge boxes whose IoU with any truth sits too close to 0.5
        for p in preds.iter_mut() {
            while truth
                .iter()
                .any(|t| (oracle_iou(&to_bbox(p.1), &to_bbox(t.1)) - 0.5).abs() < 1e-3)
            {
                p.1 = shifted(p.1, 1, 0);
            }
        }

        let labels: String = truth.iter().map(|&(c, b)| label_line(c, None, b)).collect();
        let predictions: String = preds.iter().map(|&(c, b)| label_line(c, Some(next_conf()), b)).collect();
        std::fs::write(dir.join(format!("labels/{stem}.txt")), labels).unwrap();
        std::fs::write(dir.join(format!("predictions/{stem}.txt")), predictions).unwrap();

        let n = (DEPTH_W * DEPTH_H) as usize;
        let truth_px: Vec<u16> = (0..n)
            .map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(256..20_000) })
            .collect();
        let est_px: Vec<u16> = truth_px
            .iter()
            .map(|&t| {
                let base = if t == 0 { rng.random_range(256..20_000) } else { t as u32 };
                let noisy = base as f64 * rng.random_range(0.8..1.25);
                noisy.round().clamp(1.0, u16::MAX as f64) as u16
            })
            .collect();
        write_depth_png(&dir.join(format!("depth_truth/{stem}.png")), &truth_px);
        write_depth_png(&dir.join(format!("depth_estimate/{stem}.png")), &est_px);
    }
    EvalFixture {
        manifest: write_manifest(dir),
    }
}

/// Predictions identical to the labels and estimates identical to truth.
pub fn write_perfect_fixture(dir: &Path, seed: u64) -> PathBuf {
    let f = write_eval_fixture(dir, seed);
    for entry in std::fs::read_dir(dir.join("labels")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let preds: String = text
            .lines()
            .map(|l| {
                let (c, rest) = l.split_once(' ').unwrap();
                format!("{c} 0.9 {rest}\n")
            })
            .collect();
        std::fs::write(dir.join("predictions").join(path.file_name().unwrap()), preds).unwrap();
    }
    for entry in std::fs::read_dir(dir.join("depth_truth")).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, dir.join("depth_estimate").join(path.file_name().unwrap())).unwrap();
    }
    f.manifest
}

pub struct OracleEval {
    pub map50: f64,
    pub f1: f64,
    pub abs_rel: f64,
}

fn parse_yolo_line(line: &str, with_conf: bool) -> (usize, Option<f64>, BBox) {
    let v: Vec<f64> = line.split_whitespace().map(|s| s.parse().unwrap()).collect();
    let (conf, coords) = if with_conf { (Some(v[1]), &v[2..]) } else { (None, &v[1..]) };
    let (w, h) = (EVAL_W as f64, EVAL_H as f64);
    let (cx, cy, bw, bh) = (coords[0] * w, coords[1] * h, coords[2] * w, coords[3] * h);
    let b = BBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0).unwrap();
    (v[0] as usize, conf, b)
}

fn read_u16_png(path: &Path) -> Vec<u16> {
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect()
}

/// Recomputes the headline metrics straight from the fixture files.
pub fn fixture_oracle(dir: &Path) -> OracleEval {
    let mut stems: Vec<String> = std::fs::read_dir(dir.join("labels"))
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    stems.sort();
    let mut images = Vec::new();
    let mut pixels = Vec::new();
    for stem in &stems {
        let read = |sub: &str| std::fs::read_to_string(dir.join(format!("{sub}/{stem}.txt"))).unwrap();
        let truth: Vec<GroundTruthObject> = read("labels")
            .lines()
            .map(|l| {
                let (c, _, bbox) = parse_yolo_line(l, false);
                GroundTruthObject { bbox, class_id: cid(c) }
            })
            .collect();
        let preds: Vec<Detection> = read("predictions")
            .lines()
            .map(|l| {
                let (c, conf, bbox) = parse_yolo_line(l, true);
                Detection {
                    bbox,
                    class_id: cid(c),
                    confidence: conf.unwrap(),
                }
            })
            .collect();
        images.push((preds, truth));

        let t = read_u16_png(&dir.join(format!("depth_truth/{stem}.png")));
        let e = read_u16_png(&dir.join(format!("depth_estimate/{stem}.png")));
        pixels.extend(t.iter().zip(&e).map(|(&t, &e)| (e as f64 / 256.0, t as f64 / 256.0, t != 0)));
    }
    let det = oracle_detection(&images, 0.5);
    OracleEval {
        map50: det.map,
        f1: det.f1(),
        abs_rel: oracle_depth(&pixels).0,
    }
}

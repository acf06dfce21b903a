//! Acceptance criteria 1-10. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities, then asserts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simflow_core::exchange::{StubFrameMode, StubKind, StubServer};
use simflow_core::flow::{encode_flo, read_flo, write_flo};
use simflow_core::generators::{boundary_band, generate_spatial_warp, SceneMotion, SyntheticScene, SyntheticSceneGenerator, WarpRanges};
use simflow_core::metrics::{average_scores, f_measure, mae, s_measure, threshold, FMode, Scores, S_ALPHA, THRESHOLDS};
use simflow_core::pairs::{build_final_pairs, ingest_real_video, load_pair, simulate_sources, FlowSource, SimulationSettings, SourceItem};
use simflow_core::scene::textured_scene;
use simflow_core::segnet::{encode_inputs, encode_masks, NetworkConfig, SegNet};
use simflow_core::training::{train, MixtureSampler, PairPool, TrainConfig, TrainOutputs};
use simflow_core::{
    estimate_flow, load_manifest, save_image, save_mask, FlowEstimatorConfig, FlowField, HornSchunck, Image, SaliencyMap, TrainingPair,
};

fn verdict(n: usize, title: &str, pass: bool, detail: &str) {
    println!("criterion {n} ({title}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["simflow"];
    full.extend_from_slice(args);
    simflow_cli::run_from(full)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Writes `n` textured stills and their masks.
fn write_sources(dir: &Path, n: usize, side: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (images, masks) = (dir.join("images"), dir.join("masks"));
    for i in 0..n {
        let (img, mask) = textured_scene(side, side, seed + i as u64);
        save_image(&img, images.join(format!("src{i:02}.png"))).unwrap();
        save_mask(&mask, masks.join(format!("src{i:02}.png"))).unwrap();
    }
    (images, masks)
}

/// Renders a moving-object clip with its per-frame masks.
fn write_clip(frames_dir: &Path, masks_dir: &Path, side: usize, frames: usize, seed: u64) {
    let (img, mask) = textured_scene(side, side, seed);
    let motion = simflow_core::generators::VelocityRanges::default().sample(seed);
    let scene = SyntheticScene::new(&img, &mask, motion).unwrap();
    for t in 0..frames {
        save_image(&scene.frame(t as f64), frames_dir.join(format!("{t:05}.png"))).unwrap();
        save_mask(&scene.mask_at(t as f64), masks_dir.join(format!("{t:05}.png"))).unwrap();
    }
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap().flatten() {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_01_flo_round_trip() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut exact = 0;
    for i in 0..100 {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let mut draw = || {
            let scale = [1e-3f32, 1.0, 50.0, 1e4][rng.random_range(0..4)];
            rng.random_range(-1.0f32..1.0) * scale
        };
        let u = Array2::from_shape_simple_fn((h, w), &mut draw);
        let v = Array2::from_shape_simple_fn((h, w), &mut draw);
        let flow = FlowField::new(u, v).unwrap();
        let path = dir.path().join(format!("f{i}.flo"));
        write_flo(&flow, &path).unwrap();
        let back = read_flo(&path).unwrap();
        let bits = |f: &FlowField| f.u().iter().chain(f.v().iter()).map(|x| x.to_bits()).collect::<Vec<_>>();
        if back.dims() == flow.dims() && bits(&back) == bits(&flow) {
            exact += 1;
        }
    }
    let one = FlowField::new(Array2::from_elem((1, 1), 1.5), Array2::from_elem((1, 1), -2.25)).unwrap();
    let mut oracle = b"PIEH".to_vec();
    oracle.extend_from_slice(&1i32.to_le_bytes());
    oracle.extend_from_slice(&1i32.to_le_bytes());
    oracle.extend_from_slice(&1.5f32.to_le_bytes());
    oracle.extend_from_slice(&(-2.25f32).to_le_bytes());
    let path = dir.path().join("one.flo");
    write_flo(&one, &path).unwrap();
    let layout = encode_flo(&one) == oracle && std::fs::read(&path).unwrap() == oracle;
    let elapsed = start.elapsed();
    let pass = exact == 100 && layout && elapsed < Duration::from_secs(5);
    verdict(1, "flo format fidelity", pass, &format!("{exact}/100 bit-exact, 1x1 layout {layout}, {elapsed:.2?}"));
    assert!(pass);
}

mod oracle {
    //! Brute-force metric definitions on nested vectors.
    #![allow(clippy::needless_range_loop)]

    pub type Grid = Vec<Vec<f64>>;
    const EPS: f64 = f64::EPSILON;

    fn flat(g: &Grid) -> Vec<f64> {
        g.iter().flatten().cloned().collect()
    }

    pub fn mae(p: &Grid, g: &Grid) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for y in 0..p.len() {
            for x in 0..p[0].len() {
                s += (p[y][x] - g[y][x]).abs();
                n += 1.0;
            }
        }
        s / n
    }

    /// F at one threshold, from explicit tp/fp/fn counts.
    pub fn f_at(p: &Grid, g: &Grid, tau: f64) -> f64 {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for y in 0..p.len() {
            for x in 0..p[0].len() {
                let pos = p[y][x] >= tau;
                let truth = g[y][x] > 0.5;
                match (pos, truth) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    _ => {}
                }
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = tp / (tp + fneg);
        if precision + recall == 0.0 {
            0.0
        } else {
            1.3 * precision * recall / (0.3 * precision + recall)
        }
    }

    pub fn f_grid(p: &Grid, g: &Grid) -> Vec<f64> {
        (1..=255).map(|k| f_at(p, g, k as f64 / 256.0)).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn sample_std(v: &[f64]) -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    }

    fn object(v: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let m = mean(v);
        2.0 * m / (m * m + 1.0 + sample_std(v) + EPS)
    }

    fn block_similarity(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len() as f64;
        let (mp, mg) = (mean(p), mean(g));
        let dof = if p.len() > 1 { n - 1.0 } else { 1.0 };
        let mut vp = 0.0;
        let mut vg = 0.0;
        let mut c = 0.0;
        for i in 0..p.len() {
            vp += (p[i] - mp) * (p[i] - mp);
            vg += (g[i] - mg) * (g[i] - mg);
            c += (p[i] - mp) * (g[i] - mg);
        }
        let (vp, vg, c) = (vp / dof, vg / dof, c / dof);
        let num = 4.0 * mp * mg * c;
        let den = (mp * mp + mg * mg) * (vp + vg);
        if num != 0.0 {
            num / (den + EPS)
        } else if den == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn banker_round(v: f64) -> f64 {
        let f = v.floor();
        let d = v - f;
        if d > 0.5 || (d == 0.5 && f % 2.0 != 0.0) {
            f + 1.0
        } else {
            f
        }
    }

    pub fn s_measure(p: &Grid, g: &Grid, alpha: f64) -> f64 {
        let (h, w) = (p.len(), p[0].len());
        let gt = flat(g);
        let fg_frac = gt.iter().filter(|&&v| v > 0.5).count() as f64 / gt.len() as f64;
        if fg_frac == 0.0 {
            return (1.0 - mean(&flat(p))).clamp(0.0, 1.0);
        }
        if fg_frac == 1.0 {
            return mean(&flat(p)).clamp(0.0, 1.0);
        }
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if g[y][x] > 0.5 {
                    fg.push(p[y][x]);
                } else {
                    bg.push(1.0 - p[y][x]);
                }
            }
        }
        let so = fg_frac * object(&fg) + (1.0 - fg_frac) * object(&bg);

        let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if g[y][x] > 0.5 {
                    sx += x as f64;
                    sy += y as f64;
                    cnt += 1.0;
                }
            }
        }
        let cx = (banker_round(sx / cnt) as usize + 1).min(w);
        let cy = (banker_round(sy / cnt) as usize + 1).min(h);
        let mut sr = 0.0;
        for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
            let mut bp = Vec::new();
            let mut bg = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    bp.push(p[y][x]);
                    bg.push(g[y][x]);
                }
            }
            if bp.is_empty() {
                continue;
            }
            sr += bp.len() as f64 / (h * w) as f64 * block_similarity(&bp, &bg);
        }
        (alpha * so + (1.0 - alpha) * sr).clamp(0.0, 1.0)
    }
}

fn grid(map: &SaliencyMap) -> oracle::Grid {
    map.values().rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn random_case(i: usize, rng: &mut ChaCha8Rng) -> (SaliencyMap, SaliencyMap) {
    let n = 32;
    let gt = match i % 10 {
        0 => SaliencyMap::zeros(n, n),
        1 => SaliencyMap::new(Array2::ones((n, n))).unwrap(),
        2 => SaliencyMap::binary(Array2::from_shape_simple_fn((n, n), || rng.random_bool(0.3) as u8 as f32)).unwrap(),
        _ => {
            let (cx, cy) = (rng.random_range(4.0..28.0f32), rng.random_range(4.0..28.0f32));
            let (rx, ry) = (rng.random_range(2.0..12.0f32), rng.random_range(2.0..12.0f32));
            SaliencyMap::from_fn(n, n, |(y, x)| ((((x as f32 - cx) / rx).powi(2) + ((y as f32 - cy) / ry).powi(2)) <= 1.0) as u8 as f32)
                .unwrap()
        }
    };
    let pred = match i % 4 {
        0 => Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..=1.0f32)),
        1 => gt.values().mapv(|g| (0.7 * g + 0.3 * rng.random_range(0.0..1.0f32)).clamp(0.0, 1.0)),
        2 => Array2::from_shape_simple_fn((n, n), || rng.random_range(0..=255u8) as f32 / 255.0),
        _ => Array2::from_elem((n, n), rng.random_range(0.0..=1.0f32)),
    };
    (SaliencyMap::new(pred).unwrap(), gt)
}

#[test]
fn criterion_02_metric_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut empty_errors = 0;
    for i in 0..50 {
        let (pred, gt) = random_case(i, &mut rng);
        let (pg, gg) = (grid(&pred), grid(&gt));
        worst = worst.max((mae(&pred, &gt).unwrap() - oracle::mae(&pg, &gg)).abs());
        worst = worst.max((s_measure(&pred, &gt, S_ALPHA).unwrap() - oracle::s_measure(&pg, &gg, S_ALPHA)).abs());
        if gt.foreground_count() == 0 {
            empty_errors += f_measure(&pred, &gt, FMode::Max).is_err() as usize;
            continue;
        }
        let curve = oracle::f_grid(&pg, &gg);
        let max = curve.iter().cloned().fold(0.0, f64::max);
        let mean = curve.iter().sum::<f64>() / curve.len() as f64;
        worst = worst.max((f_measure(&pred, &gt, FMode::Max).unwrap() - max).abs());
        worst = worst.max((f_measure(&pred, &gt, FMode::Mean).unwrap() - mean).abs());
        let k = i * 5 % THRESHOLDS;
        worst = worst.max((f_measure(&pred, &gt, FMode::Fixed(threshold(k))).unwrap() - curve[k]).abs());
    }
    let gt = SaliencyMap::new(Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
    let pred = SaliencyMap::new(Array2::from_shape_vec((2, 2), vec![0.2, 0.8, 0.5, 0.0]).unwrap()).unwrap();
    let mae_hand = (mae(&pred, &gt).unwrap() - 0.225).abs();
    // precision = recall = 0.5: two predicted, two true, one overlap
    let gt4 = SaliencyMap::new(Array2::from_shape_vec((1, 4), vec![1.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
    let p4 = SaliencyMap::new(Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
    let f_half = (f_measure(&p4, &gt4, FMode::Fixed(0.5)).unwrap() - 0.5).abs();
    let quarter = SaliencyMap::from_fn(8, 8, |(y, x)| (y < 4 && x < 4) as u8 as f32).unwrap();
    let ones = SaliencyMap::new(Array2::ones((8, 8))).unwrap();
    let rho = 0.25;
    let f_rho = (f_measure(&ones, &quarter, FMode::Max).unwrap() - 1.3 * rho / (0.3 * rho + 1.0)).abs();
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && empty_errors == 5 && mae_hand < 1e-7 && f_half < 1e-12 && f_rho < 1e-12 && elapsed < Duration::from_secs(30);
    verdict(
        2,
        "metric oracle equivalence",
        pass,
        &format!("max |impl - oracle| {worst:.2e} over 50 pairs, MAE example err {mae_hand:.1e}, F(P=R=0.5) err {f_half:.1e}, F(rho) err {f_rho:.1e}, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_table_average() {
    let scores: Vec<Scores> = [94.5, 92.6, 80.3, 96.2]
        .iter()
        .map(|&s| Scores {
            s_measure: s / 100.0,
            f_measure: 0.0,
            mean_f_measure: 0.0,
            mae: 0.0,
        })
        .collect();
    let avg = average_scores(&scores).s_measure * 100.0;
    let pass = (avg - 90.9).abs() <= 0.05;
    verdict(3, "table arithmetic", pass, &format!("average S = {avg:.3}"));
    assert!(pass);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn criterion_04_flow_recovery() {
    let start = Instant::now();
    let config = FlowEstimatorConfig::default();
    let ranges = simflow_core::generators::VelocityRanges::default();
    let (mut fg_err, mut bg_err) = (Vec::new(), Vec::new());
    let mut scene_medians = Vec::new();
    for seed in 0..10u64 {
        let (img, mask) = textured_scene(128, 128, 400 + seed);
        let scene = SyntheticScene::new(&img, &mask, ranges.sample(400 + seed)).unwrap();
        let est = estimate_flow(&img, &scene.frame(1.0), &config).unwrap();
        let truth = scene.flow(1.0);
        let band = boundary_band(mask.values(), 3);
        let (mut f, mut b) = (Vec::new(), Vec::new());
        for ((y, x), &m) in mask.values().indexed_iter() {
            if band[[y, x]] {
                continue;
            }
            let (eu, ev) = est.at(y, x);
            let (tu, tv) = truth.at(y, x);
            let epe = ((eu - tu) as f64).hypot((ev - tv) as f64);
            if m > 0.5 {
                f.push(epe);
            } else {
                b.push(epe);
            }
        }
        scene_medians.push((median(f.clone()), median(b.clone())));
        fg_err.extend(f);
        bg_err.extend(b);
    }
    let (fg, bg) = (median(fg_err), median(bg_err));
    let (img, _) = textured_scene(128, 128, 499);
    let still = estimate_flow(&img, &img, &config).unwrap();
    let still_max = still.magnitude().iter().cloned().fold(0.0f32, f32::max);
    let elapsed = start.elapsed();
    let worst_fg = scene_medians.iter().map(|m| m.0).fold(0.0, f64::max);
    let worst_bg = scene_medians.iter().map(|m| m.1).fold(0.0, f64::max);
    let pass = fg <= 0.7 && bg <= 0.5 && still_max <= 0.2 && elapsed < Duration::from_secs(120);
    verdict(
        4,
        "flow estimator recovery",
        pass,
        &format!(
            "median EPE object {fg:.3} px, background {bg:.3} px (worst scene {worst_fg:.3}/{worst_bg:.3}), identical frames max {still_max:.4} px, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_pipeline_cardinality() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (images, masks) = write_sources(dir.path(), 3, 64, 50);
    let runs = [("a", "1"), ("b", "2")];
    for (name, workers) in runs {
        let out = dir.path().join(name);
        cli(&[
            "simulate", "--images", p(&images), "--masks", p(&masks), "--out", p(&out), "--generator", "synthetic", "--estimator", "builtin",
            "--frames", "4", "--seed", "9", "--workers", workers,
        ])
        .unwrap();
    }
    let manifest = load_manifest(&dir.path().join("a")).unwrap();
    let aligned = manifest.entries.iter().filter(|e| load_pair(&manifest, e).and_then(|p| p.validate()).is_ok()).count();
    let identical = files_under(&dir.path().join("a")) == files_under(&dir.path().join("b"));
    let elapsed = start.elapsed();
    let pass = manifest.len() == 12 && aligned == 12 && identical && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "pipeline cardinality and alignment",
        pass,
        &format!("{} pairs, {aligned} aligned, rerun byte-identical {identical} (workers 1 vs 2), {elapsed:.2?}", manifest.len()),
    );
    assert!(pass);
}

/// Difference between the mean flow over foreground pixels and over
/// background pixels within `radius` of the mask edge.
fn boundary_contrast(flow: &FlowField, mask: &SaliencyMap, radius: usize) -> f64 {
    let band = boundary_band(mask.values(), radius);
    let (mut inside, mut outside) = ([0.0f64; 3], [0.0f64; 3]);
    for ((y, x), &near) in band.indexed_iter() {
        if !near {
            continue;
        }
        let (u, v) = flow.at(y, x);
        let acc = if mask.values()[[y, x]] > 0.5 { &mut inside } else { &mut outside };
        acc[0] += u as f64;
        acc[1] += v as f64;
        acc[2] += 1.0;
    }
    (inside[0] / inside[2] - outside[0] / outside[2]).hypot(inside[1] / inside[2] - outside[1] / outside[2])
}

#[test]
fn criterion_06_boundary_contrast() {
    let hs = HornSchunck::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..6u64 {
        let (img, mask) = textured_scene(128, 128, seed);
        let motion = SceneMotion {
            fg_velocity: (3.0, 0.0),
            bg_velocity: (-1.0, 0.0),
        };
        let scene = SyntheticScene::new(&img, &mask, motion).unwrap();
        let seq = simflow_core::FrameSequence {
            source: img.clone(),
            frames: vec![scene.frame(1.0)],
            generator_id: "synthetic-scene".into(),
            config: Default::default(),
        };
        let pipeline = build_final_pairs("scene", &img, &mask, &seq, &hs).unwrap();
        let ours = boundary_contrast(&pipeline.pairs[0].flow, &mask, 2);
        let (warp_seq, warp_flows) = generate_spatial_warp(&img, &WarpRanges::default().sample(seed), 1).unwrap();
        let warp = boundary_contrast(&warp_flows[0], &mask, 2);
        let warp_est = boundary_contrast(&estimate_flow(&img, &warp_seq.frames[0], &hs.config).unwrap(), &mask, 2);
        pass &= ours >= 1.0 && warp <= 0.3;
        lines.push(format!("scene {seed}: pipeline {ours:.2} px, warp {warp:.3} px (estimated {warp_est:.3})"));
    }
    verdict(6, "mask-aligned flow discontinuity", pass, &lines.join("; "));
    assert!(pass);
}

fn memory_pairs(n: usize, side: usize, seed: u64) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| {
            let (img, mask) = textured_scene(side, side, seed + i as u64);
            let scene = SyntheticScene::new(&img, &mask, simflow_core::generators::VelocityRanges::default().sample(seed + i as u64)).unwrap();
            let seq = simflow_core::FrameSequence {
                source: img.clone(),
                frames: vec![scene.frame(1.0)],
                generator_id: "synthetic-scene".into(),
                config: Default::default(),
            };
            let mut fin = build_final_pairs(&format!("p{i}"), &img, &mask, &seq, &HornSchunck::default()).unwrap();
            fin.pairs.remove(0)
        })
        .collect()
}

#[test]
fn criterion_07_network_sanity() {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    for side in [64, 128, 256] {
        let net = SegNet::new(NetworkConfig::default().with_input_size(side, side), 0).unwrap();
        let (img, _) = textured_scene(side, side, 1);
        let pred = net.forward(&img, &FlowField::zeros(side, side)).unwrap();
        pass &= pred.probability.dim() == (side, side);
    }
    notes.push("output sizes 64/128/256 ok".to_string());

    let mut net = SegNet::new(NetworkConfig::default().with_input_size(64, 64), 3).unwrap();
    let pairs = memory_pairs(2, 64, 70);
    let inputs: Vec<(&Image, &FlowField)> = pairs.iter().map(|p| (&p.image, &p.flow)).collect();
    let (a, m) = encode_inputs(&inputs, net.config().flow_input_mode);
    let masks = encode_masks(&pairs.iter().map(|p| &p.mask).collect::<Vec<_>>());
    let (_, grads) = net.loss_and_gradients(&a, &m, &masks).unwrap();
    let dead = grads.iter().filter(|g| g.iter().all(|&v| v == 0.0)).count();
    pass &= dead == 0;
    notes.push(format!("{} of {} tensors without gradient", dead, grads.len()));
    net.zero_head();
    let half = net.forward(&pairs[0].image, &pairs[0].flow).unwrap();
    let spread = half.probability.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    pass &= spread == 0.0;
    notes.push(format!("zero head max |p - 0.5| {spread:.1e}"));

    // Reduced model: every gradient entry sampled, central differences.
    let reduced = NetworkConfig {
        encoder_widths: [4, 6, 8, 10],
        decoder_widths: [8, 6, 4, 4],
        attention_reduction: 2,
        spatial_kernel: 3,
        ..NetworkConfig::default()
    }
    .with_input_size(32, 32);
    let small = SegNet::new(reduced.clone(), 11).unwrap();
    let pairs = memory_pairs(1, 32, 90);
    let (a, m) = encode_inputs(&[(&pairs[0].image, &pairs[0].flow)], reduced.flow_input_mode);
    let masks = encode_masks(&[&pairs[0].mask]);
    let (_, grads) = small.loss_and_gradients(&a, &m, &masks).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ti = rng.random_range(0..grads.len());
        let k = rng.random_range(0..grads[ti].len());
        // near the cube root of machine epsilon; smaller steps lose digits to cancellation
        let h = 1e-5;
        let loss_at = |delta: f64| {
            let mut params = small.params().to_vec();
            params[ti].as_slice_mut().unwrap()[k] += delta;
            SegNet::from_parameters(reduced.clone(), params).unwrap().loss_and_gradients(&a, &m, &masks).unwrap().0
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let analytic = grads[ti].as_slice().unwrap()[k];
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
        worst = worst.max(rel);
    }
    pass &= worst <= 1e-4;
    notes.push(format!("gradient check worst relative error {worst:.2e}"));

    let config = TrainConfig {
        max_steps: 200,
        mixture: BTreeMap::from([("toy".into(), 1.0)]),
        ..TrainConfig::desk()
    };
    let sources = BTreeMap::from([("toy".to_string(), PairPool::Memory(memory_pairs(4, 128, 120)))]);
    let outcome = train(&NetworkConfig::default(), &config, &sources, &TrainOutputs::default()).unwrap();
    let reached = outcome.log.iter().find(|r| r.loss < 0.05).map(|r| r.step);
    pass &= reached.is_some();
    notes.push(format!("overfit loss < 0.05 at step {reached:?} (first {:.3})", outcome.log[0].loss));
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    notes.push(format!("{elapsed:.2?}"));
    verdict(7, "network sanity", pass, &notes.join(", "));
    assert!(pass);
}

/// Two real datasets of rendered clips plus a simulated set, as manifests.
fn mixture_datasets(root: &Path, side: usize) -> Vec<(String, PathBuf)> {
    let (images, masks) = write_sources(&root.join("stills"), 3, side, 300);
    let sim = root.join("sim");
    cli(&["simulate", "--images", p(&images), "--masks", p(&masks), "--out", p(&sim), "--generator", "synthetic", "--frames", "2"]).unwrap();
    let mut out = vec![("sim".to_string(), sim)];
    for (k, name) in ["davis", "davsod"].iter().enumerate() {
        let (frames, masks) = (root.join(name).join("frames"), root.join(name).join("masks"));
        for c in 0..2 {
            let clip = format!("clip{c}");
            write_clip(&frames.join(&clip), &masks.join(&clip), side, 3, 500 + 10 * k as u64 + c);
        }
        let ds = root.join(format!("{name}_ds"));
        cli(&["build-dataset", "--frames", p(&frames), "--masks", p(&masks), "--name", name, "--out", p(&ds)]).unwrap();
        out.push((name.to_string(), ds));
    }
    out
}

#[test]
fn criterion_08_mixture_fidelity() {
    let items = vec![("sim".to_string(), vec![0], 2.0), ("davis".to_string(), vec![1], 1.0), ("davsod".to_string(), vec![2], 1.0)];
    let mut sampler = MixtureSampler::new(items, 8).unwrap();
    let mut counts = [0usize; 3];
    for (s, _) in sampler.sample_batch(10_000) {
        counts[s] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / 10_000.0).collect();
    let target = [0.5, 0.25, 0.25];
    let draws_ok = freq.iter().zip(target).all(|(f, t)| (f - t).abs() <= 0.02);

    let dir = tempfile::tempdir().unwrap();
    let sets = mixture_datasets(dir.path(), 32);
    let config = dir.path().join("desk.toml");
    std::fs::write(
        &config,
        "[segnet]\nencoder_widths = [4, 6, 8, 10]\ndecoder_widths = [8, 6, 4, 4]\n\n[training]\nlearning_rate = 0.001\nbatch_size = 2\ninput_size = [32, 32]\nmax_steps = 500\ncheckpoint_every = 1000\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let mut args: Vec<String> = vec!["train".into(), "--config".into(), p(&config).into(), "--out".into(), p(&out).into()];
    for (name, path) in &sets {
        args.push("--manifest".into());
        args.push(format!("{name}={}", p(path)));
    }
    for m in ["sim=2", "davis=1", "davsod=1"] {
        args.push("--mixture".into());
        args.push(m.into());
    }
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    let comp = &last["summary"]["composition"];
    let run_freq: Vec<f64> = ["sim", "davis", "davsod"].iter().map(|n| comp[n].as_f64().unwrap()).collect();
    let run_ok = run_freq.iter().zip(target).all(|(f, t)| (f - t).abs() <= 0.03) && log.lines().count() == 501;
    let pass = draws_ok && run_ok;
    verdict(
        8,
        "mixture fidelity",
        pass,
        &format!(
            "10k draws {:.4}/{:.4}/{:.4}; 500-step log composition {:.4}/{:.4}/{:.4}",
            freq[0], freq[1], freq[2], run_freq[0], run_freq[1], run_freq[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_mixed_training_trend() {
    let start = Instant::now();
    let side = 64;
    let dir = tempfile::tempdir().unwrap();
    let hs = HornSchunck::default();

    let mut real: BTreeMap<String, Vec<TrainingPair>> = BTreeMap::new();
    for (k, name) in ["davis", "davsod"].iter().enumerate() {
        let mut pairs = Vec::new();
        for c in 0..4u64 {
            let (frames, masks) = (dir.path().join(name).join(format!("f{c}")), dir.path().join(name).join(format!("m{c}")));
            write_clip(&frames, &masks, side, 6, 2000 + 100 * k as u64 + c);
            pairs.extend(ingest_real_video(&frames, &masks, &hs, name).unwrap());
        }
        real.insert(name.to_string(), pairs);
    }
    let stills: Vec<SourceItem> = (0..24u64)
        .map(|i| {
            let (image, mask) = textured_scene(side, side, 3000 + i);
            SourceItem {
                source_id: format!("still{i}"),
                image,
                mask,
            }
        })
        .collect();
    let settings = SimulationSettings {
        frames: 2,
        seed: 5,
        one_per_source: false,
    };
    let sim = simulate_sources(&stills, &SyntheticSceneGenerator::default(), FlowSource::Estimated(&hs), &settings).pairs;

    let test: Vec<(Image, FlowField, SaliencyMap)> = (0..20u64)
        .map(|i| {
            let (img, mask) = textured_scene(side, side, 9000 + i);
            let scene = SyntheticScene::new(&img, &mask, simflow_core::generators::VelocityRanges::default().sample(9000 + i)).unwrap();
            let (a, b) = (scene.frame(2.0), scene.frame(3.0));
            let flow = estimate_flow(&a, &b, &hs.config).unwrap();
            (a, flow, scene.mask_at(2.0))
        })
        .collect();

    let network = NetworkConfig {
        encoder_widths: [8, 16, 32, 64],
        decoder_widths: [32, 16, 8, 8],
        ..NetworkConfig::default()
    };
    let pools = || {
        let mut m = BTreeMap::new();
        m.insert("sim".to_string(), PairPool::Memory(sim.clone()));
        for (k, v) in &real {
            m.insert(k.clone(), PairPool::Memory(v.clone()));
        }
        m
    };
    let protocols: [(&str, Vec<(&str, f64)>); 3] = [
        ("real-only", vec![("davis", 1.0), ("davsod", 1.0)]),
        ("sim-only", vec![("sim", 1.0)]),
        ("mixed", vec![("sim", 2.0), ("davis", 1.0), ("davsod", 1.0)]),
    ];
    let mut means = BTreeMap::new();
    for (label, mixture) in &protocols {
        let mut total = 0.0;
        for seed in 0..3u64 {
            let config = TrainConfig {
                learning_rate: 1e-3,
                batch_size: 4,
                input_size: (side, side),
                max_steps: 300,
                mixture: mixture.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
                seed,
                checkpoint_every: 10_000,
                flip_augmentation: true,
            };
            let net = train(&network, &config, &pools(), &TrainOutputs::default()).unwrap().net;
            let s: f64 = test
                .iter()
                .map(|(img, flow, gt)| s_measure(&net.forward(img, flow).unwrap().to_saliency(), gt, S_ALPHA).unwrap())
                .sum::<f64>()
                / test.len() as f64;
            total += s;
        }
        means.insert(*label, total / 3.0);
    }
    let (r, s, m) = (means["real-only"], means["sim-only"], means["mixed"]);
    let elapsed = start.elapsed();
    let pass = m >= r.max(s) - 0.01 && elapsed < Duration::from_secs(1800);
    verdict(
        9,
        "mixed training trend",
        pass,
        &format!("mean S over 3 seeds, 20 held-out scenes: real-only {r:.4}, sim-only {s:.4}, mixed {m:.4}; {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_external_backend_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (images, masks) = write_sources(dir.path(), 2, 32, 700);
    let config = dir.path().join("ext.toml");
    std::fs::write(&config, "[generation]\nresolution = [32, 32]\n\n[pair_factory]\nbackend_timeout_secs = 60\n").unwrap();
    let run = |mode: StubFrameMode, name: &str| {
        let exchange = dir.path().join(format!("exchange_{name}"));
        std::fs::create_dir_all(&exchange).unwrap();
        let out = dir.path().join(name);
        let _server = StubServer::spawn(&exchange, StubKind::Frames(mode));
        let result = cli(&[
            "simulate", "--images", p(&images), "--masks", p(&masks), "--out", p(&out), "--generator", "external", "--frame-exchange",
            p(&exchange), "--frames", "3", "--config", p(&config),
        ]);
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("build_report.json")).unwrap()).unwrap();
        (result, report)
    };

    let (ok, report) = run(StubFrameMode::CopySource, "copy");
    let mean_mag = report["flow_stats"]["mean_magnitude"].as_f64().unwrap();
    let copy_pass = ok.is_ok() && report["totals"]["pairs"] == 6 && mean_mag <= 0.05;

    let (failed, report) = run(StubFrameMode::DropLast, "short");
    let diagnostics = report["sources"].as_array().unwrap().iter().filter(|s| s["error"].as_str().is_some_and(|e| e.contains("incomplete sequence"))).count();
    let short_pass = failed.is_err()
        && diagnostics == 2
        && report["totals"]["failed_sources"] == 2
        && report["totals"]["skipped_frames"] == 6
        && report["totals"]["pairs"] == 0;
    let pass = copy_pass && short_pass;
    verdict(
        10,
        "external backend contract",
        pass,
        &format!(
            "copier: 6 pairs expected, mean flow {mean_mag:.4} px; T-1 backend: {diagnostics} incomplete-sequence diagnostics, skipped frames {}",
            report["totals"]["skipped_frames"]
        ),
    );
    assert!(pass);
}

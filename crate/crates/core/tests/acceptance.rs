//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pandaid::align::{align_face, AlignParams};
use pandaid::dedup::{dedup_dataset, start_index, DedupParams};
use pandaid::eval::{compute_cmc, compute_roc, make_split, sample_pairs, LabeledImage, SplitSpec};
use pandaid::gallery::{Embedding, Gallery, GalleryError};
use pandaid::imaging::{ssim, ImageBuffer, Point2, SsimParams};
use pandaid::landmarks::{
    extract_landmarks, localization_error, render_masks, FaceLandmarks, MaskParams,
};
use pandaid::manifest::{DatasetManifest, ManifestRecord, Source};
use pandaid::pipeline::{process_face, PipelineConfig};
use pandaid::providers::Providers;
use pandaid::seeds;
use pandaid::synthetic::{jitter, texture_image, SyntheticDataset, SyntheticSpec};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn face(l: Point2, r: Point2, n: Point2) -> FaceLandmarks {
    FaceLandmarks::new(l, r, n).expect("valid landmarks")
}

// ---------------------------------------------------------------------------
// 1. alignment geometry

/// Aligned coordinates of `p` derived from the eye-line frame directly:
/// project onto the unit eye axis and its downward normal, then apply the
/// crop offset and resize factor.
fn oracle_aligned(p: Point2, lm: &FaceLandmarks, grid: (i64, i64, i64, i64), side: usize) -> Point2 {
    let (l, r) = (lm.left_eye, lm.right_eye);
    let d = l.distance(&r);
    let (ux, uy) = ((r.x - l.x) / d, (r.y - l.y) / d);
    let m = l.midpoint(&r);
    let (dx, dy) = (p.x - m.x, p.y - m.y);
    let along = dx * ux + dy * uy;
    let across = -dx * uy + dy * ux;
    let (gx, gy, gw, gh) = grid;
    Point2::new(
        (m.x + along - gx as f64) * side as f64 / gw as f64,
        (m.y + across - gy as f64) * side as f64 / gh as f64,
    )
}

fn bright_centroid(img: &ImageBuffer, cols: std::ops::Range<usize>) -> Option<Point2> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for i in 0..img.height() {
        for j in cols.clone() {
            let v = img.get(i, j, 0) as f64;
            if v > 0.0 {
                sx += v * (j as f64 + 0.5);
                sy += v * (i as f64 + 0.5);
                n += v;
            }
        }
    }
    (n > 0.0).then(|| Point2::new(sx / n, sy / n))
}

fn criterion_alignment() -> Check {
    let start = Instant::now();
    let params = AlignParams::default();
    let side = params.output_side;
    let nominal = side as f64 / (1.0 + 2.0 * params.c);
    let blank = ImageBuffer::zeros(32, 32, 1);
    let mut g = rng(1);
    let (mut max_dy, mut max_dw, mut max_dh, mut max_dd, mut max_oracle) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut dists = Vec::with_capacity(500);
    for k in 0..500 {
        let d: f64 = g.gen_range(20.0..=300.0);
        let theta = g.gen_range(-PI / 4.0..=PI / 4.0);
        let m = Point2::new(g.gen_range(-200.0..800.0), g.gen_range(-200.0..800.0));
        let (s, c) = theta.sin_cos();
        let lm = face(
            Point2::new(m.x - 0.5 * d * c, m.y - 0.5 * d * s),
            Point2::new(m.x + 0.5 * d * c, m.y + 0.5 * d * s),
            Point2::new(m.x - 0.8 * d * s, m.y + 0.8 * d * c),
        );
        let a = align_face(&blank, &lm, &params).map_err(|e| format!("face {k}: {e}"))?;
        let grid = (a.crop_grid.x, a.crop_grid.y, a.crop_grid.w, a.crop_grid.h);
        let got = a.aligned_landmarks();
        for (p, q) in lm.points().iter().zip(got.points()) {
            let o = oracle_aligned(*p, &lm, grid, side);
            max_oracle = max_oracle.max(o.distance(&q));
        }
        let (l, r) = (
            oracle_aligned(lm.left_eye, &lm, grid, side),
            oracle_aligned(lm.right_eye, &lm, grid, side),
        );
        max_dy = max_dy.max((l.y - r.y).abs());
        max_dw = max_dw.max((a.crop_grid.w as f64 - 3.4 * d).abs());
        max_dh = max_dh.max((a.crop_grid.h as f64 - 3.0 * d).abs());
        let dist = l.distance(&r);
        max_dd = max_dd.max((dist - nominal).abs());
        dists.push(dist);
        ensure!(a.image.width() == side && a.image.height() == side, "face {k}: output not {side}x{side}");
    }
    ensure!(max_oracle < 1e-6, "transform disagrees with the eye-frame oracle by {max_oracle:.3e} px");
    ensure!(max_dy <= 0.5, "aligned eyes differ in y by {max_dy:.4} px");
    ensure!(max_dw <= 1.0 && max_dh <= 1.0, "crop off by ({max_dw:.3}, {max_dh:.3}) px");
    ensure!(max_dd <= 0.5, "normalized eye distance deviates by {max_dd:.4} px");

    // pixel check: bright eye dots land where the geometry says
    let mut max_px = 0.0f64;
    for k in 0..20 {
        let d: f64 = g.gen_range(40.0..=120.0);
        let theta = g.gen_range(-PI / 4.0..=PI / 4.0);
        let canvas = (4.0 * d).ceil() as usize;
        let m = Point2::new(canvas as f64 / 2.0 + g.gen_range(-3.0..3.0), canvas as f64 / 2.0 + g.gen_range(-3.0..3.0));
        let (s, c) = theta.sin_cos();
        let lm = face(
            Point2::new(m.x - 0.5 * d * c, m.y - 0.5 * d * s),
            Point2::new(m.x + 0.5 * d * c, m.y + 0.5 * d * s),
            Point2::new(m.x - 0.8 * d * s, m.y + 0.8 * d * c),
        );
        let rad = 0.12 * d;
        let img = ImageBuffer::from_fn_gray(canvas, canvas, |i, j| {
            let p = Point2::new(j as f64 + 0.5, i as f64 + 0.5);
            if p.distance(&lm.left_eye) <= rad || p.distance(&lm.right_eye) <= rad { 255 } else { 0 }
        });
        let a = align_face(&img, &lm, &params).map_err(|e| format!("pixel face {k}: {e}"))?;
        let want = a.aligned_landmarks();
        let half = side / 2;
        let l = bright_centroid(&a.image, 0..half).ok_or("left eye vanished")?;
        let r = bright_centroid(&a.image, half..side).ok_or("right eye vanished")?;
        max_px = max_px.max(l.distance(&want.left_eye)).max(r.distance(&want.right_eye));
    }
    ensure!(max_px <= 1.0, "rendered eye dots {max_px:.3} px from their predicted spots");

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s (limit 10 s)");
    Ok(format!(
        "500 faces: max |dy| {max_dy:.3} px, crop error ({max_dw:.3}, {max_dh:.3}) px, eye distance {:.2}..{:.2} (nominal {nominal:.2}), pixel check {max_px:.2} px, {secs:.1} s",
        dists.iter().cloned().fold(f64::INFINITY, f64::min),
        dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ))
}

// ---------------------------------------------------------------------------
// 2. mask round trip

fn brute_disk_count(w: usize, h: usize, c: Point2, r: f64) -> usize {
    let mut n = 0;
    for i in 0..h {
        for j in 0..w {
            let (dx, dy) = (j as f64 + 0.5 - c.x, i as f64 + 0.5 - c.y);
            if dx * dx + dy * dy <= r * r {
                n += 1;
            }
        }
    }
    n
}

fn criterion_masks() -> Check {
    let params = MaskParams::default();
    ensure!(
        params.eye_radius == 7.0 && params.nose_radius == 13.0,
        "default radii are {}/{}",
        params.eye_radius,
        params.nose_radius
    );
    let (w, h) = (params.canvas_width, params.canvas_height);
    let mut worst = 0.0f64;
    for gi in 0..10 {
        for gj in 0..10 {
            // irregular sub-pixel phase per placement
            let fx = ((gi * 10 + gj) as f64 * 0.137).fract();
            let fy = ((gi * 10 + gj) as f64 * 0.291).fract();
            let base = Point2::new(16.0 + gj as f64 * 16.0 + fx, 16.0 + gi as f64 * 15.0 + fy);
            let lm = face(
                base,
                Point2::new(base.x + 30.0, base.y + 1.3),
                Point2::new(base.x + 15.0, base.y + 36.0),
            );
            let masks = render_masks(&lm, &params).map_err(|e| e.to_string())?;
            let radii = [params.eye_radius, params.eye_radius, params.nose_radius];
            for ((m, p), r) in masks.channels().iter().zip(lm.points()).zip(radii) {
                ensure!(
                    m.pixels().iter().all(|&v| v == 0 || v == 255),
                    "mask at {p:?} is not binary"
                );
                let lit = m.pixels().iter().filter(|&&v| v == 255).count();
                let want = brute_disk_count(w, h, p, r);
                ensure!(lit == want, "disk at {p:?} r={r}: {lit} pixels, brute force {want}");
            }
            let got = extract_landmarks(&masks).map_err(|e| e.to_string())?;
            ensure!(!got.swapped, "channels swapped at {base:?}");
            for (a, b) in got.landmarks.points().iter().zip(lm.points()) {
                worst = worst.max(a.distance(&b));
            }
        }
    }
    ensure!(worst <= 0.5, "centroid off by {worst:.4} px");
    Ok(format!("100 placements x 3 disks: exact pixel counts, binary masks, max centroid error {worst:.4} px"))
}

// ---------------------------------------------------------------------------
// 3. SSIM

/// Direct 2-D sliding window: per-window weighted mean, variance and
/// covariance, no separability or moment caching.
fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer, p: &SsimParams) -> f64 {
    let n = p.window_side;
    let sigma = 1.5;
    let half = (n / 2) as f64;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 - half, j as f64 - half);
            w[i * n + j] = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let side = a.width();
    let (mut sum, mut count) = (0.0, 0.0);
    for r in 0..=side - n {
        for c in 0..=side - n {
            let px = |img: &ImageBuffer, i: usize, j: usize| img.get(r + i, c + j, 0) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += w[i * n + j] * px(a, i, j);
                    mb += w[i * n + j] * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += w[i * n + j] * da * da;
                    vb += w[i * n + j] * db * db;
                    cov += w[i * n + j] * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    sum / count
}

fn uniform_noise(side: usize, seed: u64) -> ImageBuffer {
    let mut g = rng(seed);
    ImageBuffer::from_fn_gray(side, side, |_, _| g.gen())
}

fn criterion_ssim() -> Check {
    let p = SsimParams {
        compare_size: 64,
        ..SsimParams::default()
    };
    let images: Vec<ImageBuffer> = (0..20)
        .map(|k| if k % 2 == 0 { uniform_noise(64, 100 + k) } else { texture_image(64, 64, 100 + k) })
        .collect();
    let mut worst_self = 0.0f64;
    let mut worst_ref = 0.0f64;
    for (k, a) in images.iter().enumerate() {
        worst_self = worst_self.max((ssim(a, a, &p) - 1.0).abs());
        // one unrelated partner and one near-duplicate per image
        let b = &images[(k + 1) % images.len()];
        let near = jitter(a, 8, 500 + k as u64);
        for other in [b, &near] {
            let s_ab = ssim(a, other, &p);
            let s_ba = ssim(other, a, &p);
            ensure!(s_ab.to_bits() == s_ba.to_bits(), "asymmetric: {s_ab} vs {s_ba}");
            worst_ref = worst_ref.max((s_ab - naive_ssim(a, other, &p)).abs());
        }
    }
    ensure!(worst_self <= 1e-9, "self-similarity off by {worst_self:.3e}");
    ensure!(worst_ref <= 1e-6, "naive reference differs by {worst_ref:.3e}");

    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let mut worst_const = 0.0f64;
    for (x, y) in [(0u8, 0u8), (0, 255), (100, 120), (255, 255), (37, 200), (128, 1)] {
        let a = ImageBuffer::filled(64, 64, 1, x);
        let b = ImageBuffer::filled(64, 64, 1, y);
        let (x, y) = (x as f64, y as f64);
        let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
        worst_const = worst_const.max((ssim(&a, &b, &p) - want).abs());
    }
    ensure!(worst_const <= 1e-9, "constant images off closed form by {worst_const:.3e}");
    Ok(format!(
        "20 images: |self - 1| {worst_self:.1e}, symmetry bit-exact, naive reference {worst_ref:.1e}, constant pairs {worst_const:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 4. dedup protocol

struct DedupFixture {
    manifest: DatasetManifest,
    images: HashMap<String, ImageBuffer>,
}

/// 5 identities x (3 near-duplicates of one texture + 2 unrelated textures),
/// interleaved so the near-duplicates are not adjacent.
fn dedup_fixture() -> DedupFixture {
    let mut records = Vec::new();
    let mut images = HashMap::new();
    for id in 0..5u64 {
        let identity = format!("panda-{id}");
        let base = texture_image(64, 64, 1000 + id);
        let set = [
            jitter(&base, 6, 10 * id + 1),
            texture_image(64, 64, 2000 + id),
            jitter(&base, 6, 10 * id + 2),
            jitter(&base, 6, 10 * id + 3),
            texture_image(64, 64, 3000 + id),
        ];
        for (k, img) in set.into_iter().enumerate() {
            let path = format!("{identity}/{k}.png");
            let mut r = ManifestRecord::new(&path, &identity, Source::VideoFrame);
            r.frame_index = Some(k as u64);
            records.push(r);
            images.insert(path, img);
        }
    }
    DedupFixture {
        manifest: DatasetManifest::new(records),
        images,
    }
}

/// Greedy filter replayed over a precomputed similarity matrix; returns
/// kept indices in visit order.
fn oracle_greedy(sim: &[Vec<f64>], start: usize, t: f64) -> Vec<usize> {
    let n = sim.len();
    let mut kept: Vec<usize> = vec![start];
    for step in 1..n {
        let k = (start + step) % n;
        if kept.iter().all(|&j| sim[k][j] < t) {
            kept.push(k);
        }
    }
    kept
}

fn criterion_dedup() -> Check {
    let fx = dedup_fixture();
    let ssim_params = SsimParams {
        compare_size: 64,
        ..SsimParams::default()
    };
    let seed = 42;
    let load = |r: &ManifestRecord| Ok::<_, String>(fx.images[&r.path].clone());

    let mut matrices = HashMap::new();
    for (identity, idx) in fx.manifest.groups() {
        let imgs: Vec<&ImageBuffer> = idx.iter().map(|&k| &fx.images[&fx.manifest.records[k].path]).collect();
        let sim: Vec<Vec<f64>> = imgs
            .iter()
            .map(|a| imgs.iter().map(|b| naive_ssim(a, b, &ssim_params)).collect())
            .collect();
        matrices.insert(identity, (idx, sim));
    }

    let sweep: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
    let mut retained_by_t: Vec<HashSet<String>> = Vec::new();
    for &t in &sweep {
        let params = DedupParams {
            threshold: t,
            seed,
            ssim: ssim_params,
            sources: None,
        };
        let report = dedup_dataset(&fx.manifest, &params, load).map_err(|e| e.to_string())?;
        for entry in &report.identities {
            let (idx, sim) = &matrices[&entry.identity];
            let start = start_index(idx.len(), seeds::labeled(seed, &entry.identity));
            let mut kept = oracle_greedy(sim, start, t);
            kept.sort_unstable();
            let want: Vec<&str> = kept
                .into_iter()
                .map(|k| fx.manifest.records[idx[k]].path.as_str())
                .collect();
            ensure!(
                entry.retained.iter().map(String::as_str).eq(want.iter().copied()),
                "T={t:.2} {}: retained {:?}, oracle {:?}",
                entry.identity,
                entry.retained,
                want
            );
        }
        retained_by_t.push(report.kept_paths().into_iter().map(str::to_string).collect());
    }
    for i in 0..sweep.len() {
        for j in i + 1..sweep.len() {
            ensure!(
                retained_by_t[i].is_subset(&retained_by_t[j]),
                "retained({:.2}) is not a subset of retained({:.2})",
                sweep[i],
                sweep[j]
            );
        }
    }

    // at T = 0.6 exactly one near-duplicate survives per identity
    let params = DedupParams {
        threshold: 0.6,
        seed,
        ssim: ssim_params,
        sources: None,
    };
    let report = dedup_dataset(&fx.manifest, &params, load).map_err(|e| e.to_string())?;
    ensure!(report.totals.retained == 15, "expected 15 kept at T=0.6, got {}", report.totals.retained);

    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool")
            .install(|| dedup_dataset(&fx.manifest, &params, load).map(|r| r.to_jsonl()))
    };
    let (one, four) = (run(1).map_err(|e| e.to_string())?, run(4).map_err(|e| e.to_string())?);
    ensure!(one == four, "reports differ between runs");
    ensure!(one.as_bytes() == run(4).map_err(|e| e.to_string())?.as_bytes(), "repeat run differs");
    Ok(format!(
        "oracle agreement at {} thresholds, nested retained sets, 15/25 kept at T=0.6, byte-identical reports",
        sweep.len()
    ))
}

// ---------------------------------------------------------------------------
// 5. matching

fn random_vec(g: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| g.gen_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn brute_cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Best score per identity with the earliest enrollment achieving it,
/// sorted by score then enrollment.
fn brute_ranking(entries: &[(String, Vec<f32>)], probe: &[f32]) -> Vec<(String, f64)> {
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for (seq, (id, v)) in entries.iter().enumerate() {
        let s = brute_cos(probe, v);
        let e = best.entry(id.as_str()).or_insert((s, seq));
        if s > e.0 {
            *e = (s, seq);
        }
    }
    let mut out: Vec<(&str, f64, usize)> = best.into_iter().map(|(k, (s, q))| (k, s, q)).collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)));
    out.into_iter().map(|(k, s, _)| (k.to_string(), s)).collect()
}

fn criterion_matching() -> Check {
    let mut g = rng(5);
    let mut worst = 0.0f64;
    let mut self_hits = 0usize;
    let mut self_total = 0usize;
    for trial in 0..50 {
        let n = g.gen_range(1..=100);
        let dim = g.gen_range(2..=64);
        let ids = g.gen_range(1..=20);
        let entries: Vec<(String, Vec<f32>)> = (0..n)
            .map(|_| (format!("id{}", g.gen_range(0..ids)), random_vec(&mut g, dim)))
            .collect();
        let mut gallery = Gallery::new();
        for (k, (id, v)) in entries.iter().enumerate() {
            gallery
                .enroll(id, Embedding::new(v.clone()).map_err(|e| e.to_string())?, format!("img{k}"))
                .map_err(|e| e.to_string())?;
        }
        let probe = random_vec(&mut g, dim);
        let want = brute_ranking(&entries, &probe);
        let base: Vec<String> = want.iter().map(|(id, _)| id.clone()).collect();
        for lambda in [1e-3f32, 1.0, 1e3] {
            let scaled = Embedding::new(probe.iter().map(|x| x * lambda).collect()).map_err(|e| e.to_string())?;
            let got = gallery.identify(&scaled, None).map_err(|e| e.to_string())?;
            ensure!(
                got.identities() == base,
                "trial {trial}, lambda {lambda}: ranking {:?} vs brute force {:?}",
                got.identities(),
                base
            );
            for (r, (_, s)) in got.ranking.iter().zip(&want) {
                worst = worst.max((r.score - s).abs());
            }
        }
        for (id, v) in &entries {
            let got = gallery
                .identify(&Embedding::new(v.clone()).map_err(|e| e.to_string())?, None)
                .map_err(|e| e.to_string())?;
            self_total += 1;
            if &got.top().identity == id && (got.top().score - 1.0).abs() < 1e-9 {
                self_hits += 1;
            }
        }
    }
    ensure!(worst <= 1e-6, "scores differ from brute force by {worst:.3e}");
    ensure!(self_hits == self_total, "self-retrieval {self_hits}/{self_total}");
    Ok(format!(
        "50 random galleries x 3 scales: rankings identical to brute force (max score gap {worst:.1e}), self-retrieval {self_hits}/{self_total}"
    ))
}

// ---------------------------------------------------------------------------
// 6. CMC / ROC

/// Probability that a random genuine score beats a random imposter score,
/// ties counting half.
fn pairwise_auc(genuine: &[f64], imposter: &[f64]) -> f64 {
    let mut wins = 0.0;
    for g in genuine {
        for i in imposter {
            if g > i {
                wins += 1.0;
            } else if g == i {
                wins += 0.5;
            }
        }
    }
    wins / (genuine.len() * imposter.len()) as f64
}

fn criterion_cmc_roc() -> Check {
    let mut g = rng(6);
    for trial in 0..1000 {
        let ids: Vec<String> = (0..g.gen_range(1..=30)).map(|k| format!("id{k}")).collect();
        let probes = g.gen_range(1..=50);
        let mut rankings = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..probes {
            let mut perm = ids.clone();
            for k in (1..perm.len()).rev() {
                perm.swap(k, g.gen_range(0..=k));
            }
            truth.push(ids[g.gen_range(0..ids.len())].clone());
            rankings.push(perm);
        }
        let cmc = compute_cmc(&rankings, &truth, ids.len()).map_err(|e| e.to_string())?;
        for k in 1..=ids.len() {
            let hits = rankings
                .iter()
                .zip(&truth)
                .filter(|(r, t)| r[..k].contains(t))
                .count();
            ensure!(
                cmc.rate_at(k) == hits as f64 / probes as f64,
                "trial {trial}: rank-{k} {} vs count {hits}/{probes}",
                cmc.rate_at(k)
            );
        }
        ensure!(cmc.rates.windows(2).all(|w| w[0] <= w[1]), "trial {trial}: CMC not monotone");
        ensure!(*cmc.rates.last().unwrap() == 1.0, "trial {trial}: terminal rate {}", cmc.rates.last().unwrap());
    }

    let all: Vec<&str> = vec!["a", "b", "c", "d", "e"];
    let at = |rank: usize| {
        let mut v = all.clone();
        v.swap(0, rank - 1);
        v
    };
    let hand = compute_cmc(&[at(1), at(2), at(2), at(5)], &["a"; 4], 5).map_err(|e| e.to_string())?;
    ensure!(hand.rates == vec![0.25, 0.75, 0.75, 0.75, 1.0], "hand fixture {:?}", hand.rates);

    let r = |gs: &[f64], is: &[f64]| compute_roc(gs, is).map_err(|e| e.to_string());
    ensure!(r(&[0.9, 0.8, 0.7], &[0.1, 0.2])?.auc == 1.0, "separable auc != 1");
    ensure!(r(&[0.4; 5], &[0.4; 7])?.auc == 0.5, "constant auc != 0.5");
    let (gf, imf) = ([0.9, 0.8, 0.4], [0.7, 0.3, 0.2]);
    let fixture = r(&gf, &imf)?.auc;
    let oracle = pairwise_auc(&gf, &imf);
    ensure!((fixture - oracle).abs() <= 1e-9 && (oracle - 8.0 / 9.0).abs() <= 1e-12, "3+3 auc {fixture} vs oracle {oracle}");
    for trial in 0..200 {
        let gs: Vec<f64> = (0..g.gen_range(1..40)).map(|_| (g.gen_range(0..20) as f64) / 10.0).collect();
        let is: Vec<f64> = (0..g.gen_range(1..40)).map(|_| (g.gen_range(0..20) as f64) / 12.0).collect();
        let roc = r(&gs, &is)?;
        ensure!((roc.auc - pairwise_auc(&gs, &is)).abs() <= 1e-9, "trial {trial}: auc {} vs oracle", roc.auc);
        let swapped = r(&is, &gs)?;
        let (n1, d1) = roc.auc_rational();
        let (n2, d2) = swapped.auc_rational();
        ensure!(d1 == d2 && n1 + n2 == d1, "trial {trial}: swap is not exactly 1 - auc");
        ensure!(
            roc.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr),
            "trial {trial}: ROC not a monotone staircase"
        );
    }

    let data = SyntheticDataset::generate(&SyntheticSpec::reference());
    let images: Vec<LabeledImage> = data
        .manifest
        .records
        .iter()
        .map(|r| LabeledImage::new(&r.path, &r.identity))
        .collect();
    let pairs = sample_pairs(&images, 1000, 1000, 9).map_err(|e| e.to_string())?;
    let key = |p: &pandaid::eval::Pair| {
        let (a, b) = (p.a.path.clone(), p.b.path.clone());
        if a < b { (a, b) } else { (b, a) }
    };
    let uniq: BTreeSet<_> = pairs.genuine.iter().chain(&pairs.imposter).map(key).collect();
    ensure!(pairs.genuine.len() == 1000 && pairs.imposter.len() == 1000, "wrong pair counts");
    ensure!(uniq.len() == 2000, "only {} unique pairs", uniq.len());
    ensure!(pairs.genuine.iter().all(|p| p.a.identity == p.b.identity && p.a.path != p.b.path), "bad genuine pair");
    ensure!(pairs.imposter.iter().all(|p| p.a.identity != p.b.identity), "bad imposter pair");
    let again = sample_pairs(&images, 1000, 1000, 9).map_err(|e| e.to_string())?;
    ensure!(again == pairs, "sampler not seed-deterministic");
    let other = sample_pairs(&images, 1000, 1000, 10).map_err(|e| e.to_string())?;
    ensure!(other != pairs, "different seeds gave identical samples");
    Ok("1000 CMC trials monotone and terminal-1, hand fixture exact, ROC 1 / 0.5 / 8/9, 1000+1000 unique consistent pairs".into())
}

// ---------------------------------------------------------------------------
// 7. end-to-end mock pipeline

fn criterion_end_to_end() -> Check {
    let start = Instant::now();
    let data = SyntheticDataset::generate(&SyntheticSpec::reference());
    ensure!(data.manifest.len() == 2877 && data.manifest.identity_count() == 51, "fixture scale");
    let split = make_split(&data.manifest, &SplitSpec { seed: 17, ..SplitSpec::default() })
        .map_err(|e| e.to_string())?;
    ensure!(
        split.train_identities.len() == 34 && split.test_identities.len() == 17,
        "split sizes"
    );
    split.check_invariants()?;
    let providers = Providers::mock(&data.manifest);
    let config = PipelineConfig::default();
    let embed = |img: &LabeledImage| -> Result<Embedding, String> {
        let rec = data.manifest.find(&img.path).ok_or("missing record")?;
        process_face(&providers, &img.path, &data.render(rec), &config)
            .map(|f| f.embedding)
            .map_err(|e| e.to_string())
    };
    let gallery_embs: Vec<Embedding> = split.gallery.par_iter().map(embed).collect::<Result<_, _>>()?;
    let mut gallery = Gallery::new();
    for (img, e) in split.gallery.iter().zip(gallery_embs) {
        gallery.enroll(&img.identity, e, &img.path).map_err(|e| e.to_string())?;
    }
    let hits: usize = split
        .probe
        .par_iter()
        .map(|p| -> Result<usize, String> {
            let e = embed(p)?;
            let m = gallery.identify(&e, None).map_err(|e| e.to_string())?;
            Ok(usize::from(m.top().identity == p.identity))
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    let secs = start.elapsed().as_secs_f64();
    let rate = hits as f64 / split.probe.len() as f64;
    ensure!(rate == 1.0, "rank-1 {:.2}% ({hits}/{})", 100.0 * rate, split.probe.len());
    ensure!(secs < 60.0, "took {secs:.1} s (limit 60 s)");
    Ok(format!(
        "2877 images / 51 identities, 34/17 split, {} gallery + {} probes, rank-1 100%, {secs:.1} s",
        split.gallery.len(),
        split.probe.len()
    ))
}

// ---------------------------------------------------------------------------
// 8. landmark report

fn criterion_landmark_report() -> Check {
    let mut g = rng(8);
    // quarter-pixel coordinates keep the +3 shift exact in binary
    let q = |g: &mut ChaCha8Rng, lo: i32, hi: i32| g.gen_range(lo * 4..hi * 4) as f64 / 4.0;
    let truth: Vec<FaceLandmarks> = (0..50)
        .map(|_| {
            let (x, y) = (q(&mut g, 20, 100), q(&mut g, 20, 150));
            face(Point2::new(x, y), Point2::new(x + q(&mut g, 20, 60), y + q(&mut g, -5, 5)), Point2::new(x + 20.0, y + 40.0))
        })
        .collect();
    let zero = localization_error(&truth, &truth).map_err(|e| e.to_string())?;
    ensure!(zero.mean_distance == [0.0; 3] && zero.average == 0.0, "self error {zero:?}");
    let shifted: Vec<FaceLandmarks> = truth
        .iter()
        .map(|lm| lm.map(|p| Point2::new(p.x + 3.0, p.y)))
        .collect();
    let three = localization_error(&shifted, &truth).map_err(|e| e.to_string())?;
    ensure!(three.mean_distance == [3.0; 3] && three.average == 3.0, "offset error {three:?}");
    let table = three.to_string();
    let lines: Vec<&str> = table.lines().collect();
    ensure!(lines.len() == 3, "table has {} lines", lines.len());
    let order = ["Left eye", "Right eye", "Nose", "Average"];
    let pos: Vec<Option<usize>> = order.iter().map(|h| lines[0].find(h)).collect();
    ensure!(
        pos.iter().all(Option::is_some) && pos.windows(2).all(|w| w[0] < w[1]),
        "header out of order: {}",
        lines[0]
    );
    ensure!(lines[2].matches("3.00").count() == 4, "value row: {}", lines[2]);
    Ok("zero for exact predictions, exactly 3.0 for a (+3, 0) shift, 4-column table".into())
}

// ---------------------------------------------------------------------------
// 9. persistence

fn criterion_persistence() -> Check {
    let mut g = rng(9);
    let mut injected = 0usize;
    for trial in 0..3 {
        let dim = g.gen_range(8..=128);
        let mut gallery = Gallery::new();
        for k in 0..1000 {
            let id = format!("panda-{:02}", g.gen_range(0..60));
            let v = random_vec(&mut g, dim);
            gallery
                .enroll(id, Embedding::new(v).map_err(|e| e.to_string())?, format!("img/{trial}/{k}.png"))
                .map_err(|e| e.to_string())?;
        }
        let mut bytes = Vec::new();
        gallery.save(&mut bytes).map_err(|e| e.to_string())?;
        let back = Gallery::from_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure!(back == gallery, "trial {trial}: round trip changed the gallery");
        let mut again = Vec::new();
        back.save(&mut again).map_err(|e| e.to_string())?;
        ensure!(again == bytes, "trial {trial}: re-save not byte-identical");

        let expect = |bad: &[u8], want: fn(&GalleryError) -> bool, what: &str| -> Result<(), String> {
            match Gallery::from_bytes(bad) {
                Ok(_) => Err(format!("trial {trial}: {what} loaded a gallery")),
                Err(e) if want(&e) => Ok(()),
                Err(e) => Err(format!("trial {trial}: {what} gave {e:?}")),
            }
        };
        let patch = |range: std::ops::Range<usize>, value: &[u8]| {
            let mut b = bytes.clone();
            b[range].copy_from_slice(value);
            b
        };
        expect(&patch(0..4, b"PNG\0"), |e| matches!(e, GalleryError::BadMagic(_)), "bad magic")?;
        expect(&patch(4..8, &2u32.to_le_bytes()), |e| matches!(e, GalleryError::VersionMismatch { .. }), "version")?;
        for wrong in [dim as u32 - 1, dim as u32 + 1, 2 * dim as u32] {
            expect(&patch(8..12, &wrong.to_le_bytes()), |e| matches!(e, GalleryError::DimInconsistency(_)), "dim field")?;
        }
        for count in [1001u64, 2000, u64::MAX] {
            expect(&patch(12..20, &count.to_le_bytes()), |e| matches!(e, GalleryError::Truncated(_)), "count field")?;
        }
        for _ in 0..100 {
            let cut = g.gen_range(0..bytes.len());
            expect(&bytes[..cut], |e| matches!(e, GalleryError::Truncated(_)), "truncation")?;
        }
        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0, 1, 2]);
        expect(&trailing, |e| matches!(e, GalleryError::Corrupt(_)), "trailing bytes")?;
        injected += 1 + 1 + 3 + 3 + 100 + 1;
    }
    Ok(format!("3 x 1000-entry galleries round-trip exactly; {injected} injected faults all rejected with their designated error"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("alignment geometry", criterion_alignment),
        ("mask round trip", criterion_masks),
        ("SSIM correctness", criterion_ssim),
        ("dedup protocol", criterion_dedup),
        ("matching", criterion_matching),
        ("CMC/ROC", criterion_cmc_roc),
        ("end-to-end mock pipeline", criterion_end_to_end),
        ("landmark error report", criterion_landmark_report),
        ("persistence", criterion_persistence),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

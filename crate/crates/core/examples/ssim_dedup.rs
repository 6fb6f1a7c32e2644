//! Near-duplicate filtering of one panda's video frames.
//!
//! Builds a small manifest in memory (three increasingly noisy frames of the same pose plus two
//! unrelated ones per identity), runs the greedy SSIM filter at a few
//! thresholds and prints what survives.

use std::collections::HashMap;

use pandaid::dedup::{dedup_dataset, DedupParams};
use pandaid::imaging::{ssim, SsimParams};
use pandaid::manifest::{DatasetManifest, ManifestRecord, Source};
use pandaid::synthetic::{jitter, texture_image};

fn main() {
    let mut records = Vec::new();
    let mut pixels = HashMap::new();
    for id in ["bao", "lin"] {
        let pose = texture_image(96, 96, pandaid::seeds::fnv1a(id.as_bytes()));
        for k in 0..5u64 {
            let img = if k < 3 { jitter(&pose, [4, 30, 70][k as usize], k) } else { texture_image(96, 96, 100 + k) };
            let path = format!("{id}/frame{:03}.png", k * 10);
            let mut r = ManifestRecord::new(&path, id, Source::VideoFrame);
            r.frame_index = Some(k * 10);
            records.push(r);
            pixels.insert(path, img);
        }
    }
    let manifest = DatasetManifest::new(records);

    let cmp = SsimParams { compare_size: 96, ..SsimParams::default() };
    let a = &pixels["bao/frame000.png"];
    println!("ssim(frame000, frame010) = {:.3}", ssim(a, &pixels["bao/frame010.png"], &cmp));
    println!("ssim(frame000, frame030) = {:.3}", ssim(a, &pixels["bao/frame030.png"], &cmp));

    for threshold in [0.2, 0.6, 0.95] {
        let params = DedupParams { threshold, seed: 7, ssim: cmp, ..DedupParams::default() };
        let report = dedup_dataset(&manifest, &params, |r| Ok::<_, String>(pixels[&r.path].clone()))
            .expect("in-memory loader never fails");
        println!(
            "\nT = {threshold}: kept {} of {}, {} ssim calls",
            report.totals.retained, report.totals.input, report.totals.ssim_calls
        );
        for i in &report.identities {
            println!("  {:<4} start {:?} kept {:?}", i.identity, i.start.as_deref().unwrap_or("-"), i.retained);
        }
    }
}

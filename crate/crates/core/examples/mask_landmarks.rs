//! Landmarks as disk masks and back.

use pandaid::imaging::Point2;
use pandaid::landmarks::{extract_landmarks, localization_error, render_masks, FaceLandmarks, MaskParams};

fn main() {
    let truth = FaceLandmarks::new(
        Point2::new(80.3, 95.7),
        Point2::new(141.9, 92.2),
        Point2::new(110.4, 150.1),
    )
    .unwrap();
    let params = MaskParams::default();
    let masks = render_masks(&truth, &params).unwrap();
    for (name, m) in ["left eye", "right eye", "nose"].iter().zip(masks.channels()) {
        let lit = m.pixels().iter().filter(|&&v| v == 255).count();
        println!("{name:<9} {lit} pixels lit");
    }

    let got = extract_landmarks(&masks).unwrap();
    for (a, b) in got.landmarks.points().iter().zip(truth.points()) {
        println!("({:7.3}, {:7.3}) -> ({:7.3}, {:7.3})", b.x, b.y, a.x, a.y);
    }

    // a predictor that is consistently 2 px too far right
    let predicted: Vec<_> = (0..4).map(|_| truth.map(|p| Point2::new(p.x + 2.0, p.y))).collect();
    let report = localization_error(&predicted, &[truth; 4]).unwrap();
    println!("\n{report}");
}

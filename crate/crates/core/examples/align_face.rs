//! Eye-line alignment of a tilted synthetic face.
//!
//! Writes the source and the aligned crop as PNGs to the system temp
//! directory and prints the geometry.

use pandaid::align::{align_face, AlignParams};
use pandaid::imaging::io::save_image;
use pandaid::imaging::Point2;
use pandaid::landmarks::FaceLandmarks;
use pandaid::synthetic::render_face;

fn main() {
    let (d, tilt) = (56.0f64, 20f64.to_radians());
    let m = Point2::new(150.0, 130.0);
    let (s, c) = tilt.sin_cos();
    let lm = FaceLandmarks::new(
        Point2::new(m.x - 0.5 * d * c, m.y - 0.5 * d * s),
        Point2::new(m.x + 0.5 * d * c, m.y + 0.5 * d * s),
        Point2::new(m.x - 0.8 * d * s, m.y + 0.8 * d * c),
    )
    .unwrap();
    let img = render_face(300, 300, &lm, [230, 225, 220], 1);

    let params = AlignParams::parse("a=1.3,b=1.7,c=1.2").unwrap();
    let out = align_face(&img, &lm, &params).unwrap();
    let al = out.aligned_landmarks();
    println!("rotation      {:.2} deg about {:?}", out.rotation_angle.to_degrees(), out.rotation_center);
    println!("crop grid     {}x{} (3.4d = {:.1}, 3.0d = {:.1})", out.crop_grid.w, out.crop_grid.h, 3.4 * d, 3.0 * d);
    println!("aligned eyes  {:?} {:?}", al.left_eye, al.right_eye);
    println!("eye distance  {:.2} (target {:.2})", al.left_eye.distance(&al.right_eye), params.normalized_eye_distance());
    println!("affine        {:?}", out.transform.coefficients());

    let dir = std::env::temp_dir();
    let (src, dst) = (dir.join("pandaid_source.png"), dir.join("pandaid_aligned.png"));
    save_image(&img, &src).unwrap();
    save_image(&out.image, &dst).unwrap();
    println!("wrote {} and {}", src.display(), dst.display());
}

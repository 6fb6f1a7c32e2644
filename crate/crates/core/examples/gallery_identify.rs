//! Enrollment, open-set identification and the binary gallery format.

use pandaid::gallery::{Embedding, Gallery};

fn emb(v: &[f32]) -> Embedding {
    Embedding::new(v.to_vec()).unwrap()
}

fn main() {
    let mut gallery = Gallery::new();
    gallery.enroll("bao", emb(&[1.0, 0.1, 0.0]), "bao/1.png").unwrap();
    gallery.enroll("bao", emb(&[0.9, 0.2, 0.1]), "bao/2.png").unwrap();
    gallery.enroll("lin", emb(&[0.0, 1.0, 0.2]), "lin/1.png").unwrap();
    gallery.enroll("mei", emb(&[0.1, 0.1, 1.0]), "mei/1.png").unwrap();

    let probe = emb(&[0.8, 0.3, 0.05]);
    for threshold in [None, Some(0.9), Some(0.999)] {
        let m = gallery.identify(&probe, threshold).unwrap();
        println!("threshold {threshold:?}: {:?}", m.decision);
        for r in &m.ranking {
            println!("  {:<4} {:.4}", r.identity, r.score);
        }
    }

    // scale does not matter to cosine matching
    let louder = gallery.identify(&probe.scaled(1000.0).unwrap(), None).unwrap();
    println!("scaled probe ranks {:?}", louder.identities());

    let mut bytes = Vec::new();
    gallery.save(&mut bytes).unwrap();
    let back = Gallery::from_bytes(&bytes).unwrap();
    println!("\nsaved {} bytes, reloaded {} entries, equal: {}", bytes.len(), back.len(), back == gallery);
    match Gallery::from_bytes(&bytes[..bytes.len() - 3]) {
        Ok(_) => println!("truncated file loaded?!"),
        Err(e) => println!("truncated file: {e}"),
    }
}

//! One image through detect, crop, segment, landmarks, align, embed and
//! identify, with the stage trace printed.

use pandaid::gallery::Gallery;
use pandaid::pipeline::{process_face, run_pipeline, PipelineConfig};
use pandaid::providers::Providers;
use pandaid::synthetic::{SyntheticDataset, SyntheticSpec};

fn main() {
    let data = SyntheticDataset::generate(&SyntheticSpec::default());
    let providers = Providers::mock(&data.manifest);
    println!("{providers:?}");

    let (query, rest) = data.manifest.records.split_first().unwrap();
    let mut gallery = Gallery::new();
    for r in rest {
        let face = process_face(&providers, &r.path, &data.render(r), &PipelineConfig::default()).unwrap();
        gallery.enroll(&r.identity, face.embedding, &r.path).unwrap();
    }

    let config = PipelineConfig { trace: true, threshold: Some(0.5), ..PipelineConfig::default() };
    let out = run_pipeline(&providers, &gallery, &query.path, &data.render(query), &config).unwrap();
    for e in &out.face.trace {
        println!("{:<10} {}", e.stage.to_string(), e.detail);
    }
    println!("truth {} -> {:?}", query.identity, out.result.decision);

    let err = run_pipeline(&providers, &gallery, "not-annotated.png", &data.render(query), &config).unwrap_err();
    println!("unannotated image fails at stage {}: {err}", err.stage());
}

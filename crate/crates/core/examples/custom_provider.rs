//! Plugging a user-supplied embedder in next to the mock detector and
//! segmenter, and registering it for `--provider external:<name>`.

use std::sync::Arc;

use pandaid::imaging::ImageBuffer;
use pandaid::pipeline::{process_face, PipelineConfig};
use pandaid::providers::{
    Embedder, ImageContext, MockDetector, MockSegmenter, ProviderError, ProviderMetadata,
    ProviderRegistry, ProviderSelection, Providers,
};
use pandaid::synthetic::{SyntheticDataset, SyntheticSpec};

/// Mean intensity of each 4x4 block: a crude but real image descriptor.
struct BlockMeans;

impl Embedder for BlockMeans {
    fn metadata(&self) -> ProviderMetadata {
        ProviderMetadata { name: "block-means".into(), input_side: 64, embedding_dim: Some(16 * 3), concurrent: true }
    }

    fn embed(&self, _: &ImageContext, img: &ImageBuffer) -> Result<Vec<f32>, ProviderError> {
        let cell = img.width() / 4;
        let mut out = Vec::with_capacity(48);
        for by in 0..4 {
            for bx in 0..4 {
                for ch in 0..img.channels() {
                    let mut sum = 0.0;
                    for i in by * cell..(by + 1) * cell {
                        for j in bx * cell..(bx + 1) * cell {
                            sum += img.get(i, j, ch) as f32;
                        }
                    }
                    out.push(sum / (cell * cell) as f32 + 1.0);
                }
            }
        }
        Ok(out)
    }
}

fn main() {
    let data = SyntheticDataset::generate(&SyntheticSpec { identities: 2, images_per_identity: 2, ..SyntheticSpec::default() });
    let m = data.manifest.clone();

    let mut registry = ProviderRegistry::default();
    registry.register(
        "blocks",
        Box::new(move |_spec| {
            Ok(Providers::new(
                Arc::new(MockDetector::from_manifest(&m)),
                Arc::new(MockSegmenter::from_manifest(&m, 224)),
                Arc::new(BlockMeans),
            ))
        }),
    );

    let providers = registry.build(&"external:blocks".parse::<ProviderSelection>().unwrap(), &data.manifest).unwrap();
    let r = &data.manifest.records[0];
    let face = process_face(&providers, &r.path, &data.render(r), &PipelineConfig::default()).unwrap();
    println!("{} -> {}-dim embedding from {}", r.path, face.embedding.dim(), providers.embedder_metadata().name);

    match registry.build(&"external:onnx:model.onnx".parse().unwrap(), &data.manifest) {
        Ok(_) => println!("unexpected"),
        Err(e) => println!("unregistered runtime: {e}"),
    }
}

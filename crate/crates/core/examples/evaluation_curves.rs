//! Identity-disjoint split, CMC, ROC and a cross-validated rank table on the
//! synthetic reference-scale dataset with mock embeddings.

use pandaid::eval::{compute_cmc, compute_roc, make_split, rank_k_table, sample_pairs, SplitSpec, TABLE_RANKS};
use pandaid::gallery::{cosine_similarity, Gallery};
use pandaid::pipeline::{process_face, PipelineConfig};
use pandaid::providers::Providers;
use pandaid::synthetic::{SyntheticDataset, SyntheticSpec};

fn main() {
    let data = SyntheticDataset::generate(&SyntheticSpec {
        identities: 12,
        images_per_identity: 10,
        ..SyntheticSpec::default()
    });
    let providers = Providers::mock(&data.manifest);
    let config = PipelineConfig::default();
    let embed = |img: &pandaid::eval::LabeledImage| {
        let r = data.manifest.find(&img.path).ok_or("unknown path")?;
        process_face(&providers, &img.path, &data.render(r), &config)
            .map(|f| f.embedding)
            .map_err(|e| e.to_string())
    };

    let spec = SplitSpec { train_identities: 8, test_identities: 4, probe_fraction: 0.5, seed: 3 };
    let split = make_split(&data.manifest, &spec).unwrap();
    println!("gallery {} images, probes {}", split.gallery.len(), split.probe.len());

    let mut gallery = Gallery::new();
    for g in &split.gallery {
        gallery.enroll(&g.identity, embed(g).unwrap(), &g.path).unwrap();
    }
    let mut rankings = Vec::new();
    let mut truth = Vec::new();
    for p in &split.probe {
        rankings.push(gallery.identify(&embed(p).unwrap(), None).unwrap().identities());
        truth.push(p.identity.clone());
    }
    let cmc = compute_cmc(&rankings, &truth, 5).unwrap();
    println!("CMC ranks 1..5: {:?}", cmc.rates);

    let pairs = sample_pairs(&split.test, 60, 60, 11).unwrap();
    let score = |p: &pandaid::eval::Pair| cosine_similarity(&embed(&p.a).unwrap(), &embed(&p.b).unwrap()).unwrap();
    let genuine: Vec<f64> = pairs.genuine.iter().map(score).collect();
    let imposter: Vec<f64> = pairs.imposter.iter().map(score).collect();
    let roc = compute_roc(&genuine, &imposter).unwrap();
    println!("ROC: {} points, AUC {:.4}", roc.points.len(), roc.auc);

    let table = rank_k_table(&split, embed, 3, &TABLE_RANKS).unwrap();
    println!("\n{table}");
}

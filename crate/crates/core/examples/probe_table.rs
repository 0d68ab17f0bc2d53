//! Swaps each record's image features for another image's, then renders a
//! comparison table of scores against a text-only baseline.
//!
//! cargo run --example probe_table

use mmtlab::corpus::{CorpusSplit, FeatureMap, FeatureMatrix, SplitName, TranslationRecord};
use mmtlab::metrics::Metric;
use mmtlab::probing::{self, ComparisonTable, ProbeConfig, ScoreRow, ScoreSet, Subset, Substitution};

fn scores(label: &str, bleu: [f64; 4]) -> ScoreSet {
    let mut s = ScoreSet::new(label);
    let cells = [("hi", Subset::Test), ("hi", Subset::Challenge), ("bn", Subset::Test), ("bn", Subset::Challenge)];
    for ((language, subset), bleu) in cells.into_iter().zip(bleu) {
        s.push(ScoreRow { language: language.into(), subset, bleu, chrf2: None, ter: None })
            .expect("unique cell");
    }
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = (0..6)
        .map(|i| TranslationRecord {
            id: i,
            source: format!("sentence {i}"),
            target: format!("target {i}"),
            image_id: format!("img{}", i % 3),
            bbox: None,
            lang: Some("hi".into()),
        })
        .collect();
    let split = CorpusSplit::new(SplitName::Test, records)?;
    let mut features = FeatureMap::new();
    for id in probing::image_pool(&split) {
        features.insert(id.clone(), FeatureMatrix::new(id, 1, 2, vec![1.0, 2.0])?);
    }
    let config = ProbeConfig { substitution: Substitution::RandomDerangement, seed: 3, ..Default::default() };
    let swapped = probing::substitute_features(&split, &features, &config)?;
    for r in &split.records {
        println!("record {} image {} -> {}", r.id, r.image_id, swapped.assignment[&r.id]);
    }

    let base = scores("Text", [45.79, 56.72, 50.08, 47.78]);
    let systems = [scores("SelAttn-crop", [46.04, 56.36, 48.70, 47.82]), scores("MMtrans-full", [45.10, 56.59, 50.45, 47.24])];
    let table = ComparisonTable::build(&base, &systems, Metric::Bleu)?;
    print!("{}", table.to_markdown());
    Ok(())
}

//! Reads a TSV corpus, writes it back, and stores matching image features.
//!
//! cargo run --example corpus_roundtrip

use mmtlab::corpus::{self, CorpusFormat, FeatureMap, FeatureMatrix, SplitName};

const TSV: &str = "id\tsource\ttarget\timage_id\tx\ty\tw\th\tlang
1\tA man rides a horse.\tएक आदमी घोड़े की सवारी करता है।\timg1\t10\t20\t100\t80\thi
2\tThe tree is green.\tपेड़ हरा है।\timg2\t\t\t\t\thi
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let split = corpus::read_corpus(TSV.as_bytes(), CorpusFormat::Tsv, SplitName::Test)?;
    println!("{} records in split `{}`", split.len(), split.name);

    let mut out = Vec::new();
    corpus::write_tsv(&split, &mut out)?;
    let again = corpus::read_corpus(&out[..], CorpusFormat::Tsv, SplitName::Test)?;
    assert_eq!(again, split);
    print!("{}", String::from_utf8(out)?);

    let mut features = FeatureMap::new();
    for r in &split.records {
        let data = (0..8).map(|i| (r.id as f32) + i as f32 / 10.0).collect();
        features.insert(r.image_id.clone(), FeatureMatrix::new(r.image_id.clone(), 2, 4, data)?);
    }
    split.ensure_features(&features)?;
    let dir = std::env::temp_dir().join("mmtlab-corpus-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("features.bin");
    corpus::save_features(&features, &path)?;
    assert_eq!(corpus::load_features(&path)?, features);
    println!("features round-tripped through {}", path.display());
    Ok(())
}

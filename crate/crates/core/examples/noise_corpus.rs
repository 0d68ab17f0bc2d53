//! Corrupts sentences under the low and high presets, replays the traces and
//! measures how far each regime moves the text.
//!
//! cargo run --example noise_corpus

use mmtlab::corpus::{CorpusSplit, SplitName, TranslationRecord};
use mmtlab::noiser::{self, CorruptionTrace, NoiseConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sentences = [
        "The man is riding a horse on the beach.",
        "A green apple sits beside the coffee cup.",
        "Two dogs play with a ball in the street.",
        "An old woman feeds the ducks near the pool.",
    ];
    let records = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| TranslationRecord {
            id: i as u64,
            source: s.to_string(),
            target: "-".into(),
            image_id: format!("img{i}"),
            bbox: None,
            lang: None,
        })
        .collect();
    let split = CorpusSplit::new(SplitName::Train, records)?;

    for (name, config) in [("low", NoiseConfig::low(42)), ("high", NoiseConfig::high(42))] {
        let (noisy, traces) = noiser::corrupt_corpus(&split, &config)?;
        println!("== {name} {:?}", config.probabilities());
        for t in &traces {
            assert_eq!(CorruptionTrace::replay(&t.original, &t.edits)?, t.corrupted);
            println!("{}\n  -> {} ({} edits)", t.original, t.corrupted, t.edits.len());
        }
        let m = noiser::characterize_noise(&split, &noisy)?;
        println!("BLEU {:.2}  chrF2 {:.2}  TER {:.2}", m.bleu, m.chrf2, m.ter);
    }
    Ok(())
}

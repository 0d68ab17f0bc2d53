//! Corpus and per-segment BLEU, chrF2 and TER.
//!
//! cargo run --example score_metrics

use mmtlab::metrics::{self, MetricOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let refs = ["the cat sat on the mat", "a dog runs in the park", "she reads a book"];
    let hyps = ["the cat sat on mat", "in the park a dog runs", "she reads a book"];
    let report = metrics::evaluate(&hyps, &refs, &MetricOptions::default(), true)?;
    println!("corpus\tBLEU {:.2}\tchrF2 {:.2}\tTER {:.2}", report.bleu, report.chrf2, report.ter);
    for (i, s) in report.per_segment.iter().flatten().enumerate() {
        println!("seg {i}\tBLEU {:.2}\tchrF2 {:.2}\tTER {:.2}", s.bleu, s.chrf2, s.ter);
    }

    let h: Vec<&str> = hyps[1].split_whitespace().collect();
    let r: Vec<&str> = refs[1].split_whitespace().collect();
    let with = metrics::ter_stats(&h, &r);
    let without = metrics::ter_without_shifts(&h, &r);
    println!(
        "block shifts: {} edits ({} shifts) vs {} edits without shifts",
        with.edits, with.shifts, without.edits
    );
    Ok(())
}

use mmtlab::corpus::{self, BoundingBox, CorpusFormat, CorpusSplit, SplitName, TranslationRecord};
use mmtlab::metrics::{self, MetricOptions};
use mmtlab::noiser::{self, CorruptionTrace, NoiseConfig, NoiseStream};
use mmtlab::probing;
use mmtlab::rng::stream_rng;
use proptest::prelude::*;

fn field() -> impl Strategy<Value = String> {
    "[a-zA-Zअ-ह0-9 .,'!?-]{0,30}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn record(id: u64) -> impl Strategy<Value = TranslationRecord> {
    (
        field(),
        field(),
        "[a-z0-9_]{0,8}",
        proptest::option::of((0u32..500, 0u32..500, 1u32..500, 1u32..500)),
        proptest::option::of("(hi|bn|ml)"),
    )
        .prop_map(move |(source, target, image_id, bbox, lang)| TranslationRecord {
            id,
            source,
            target,
            image_id,
            bbox: bbox.map(|(x, y, width, height)| BoundingBox { x, y, width, height }),
            lang,
        })
}

fn split() -> impl Strategy<Value = CorpusSplit> {
    (0usize..12)
        .prop_flat_map(|n| (0..n as u64).map(|i| record(i * 3 + 1)).collect::<Vec<_>>())
        .prop_map(|records| CorpusSplit::new(SplitName::Test, records).unwrap())
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just("the".to_string()),
            Just("An".to_string()),
            Just("a".to_string()),
            "[a-zA-Z]{1,9}",
            "[a-z]{1,4}[.,!]",
        ],
        0..15,
    )
    .prop_map(|w| w.join(" "))
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("(ab|ba|a|cat|the|sat)", 0..10).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn corpus_tsv_round_trips(split in split()) {
        let mut buf = Vec::new();
        corpus::write_tsv(&split, &mut buf).unwrap();
        let back = corpus::read_corpus(&buf[..], CorpusFormat::Tsv, SplitName::Test).unwrap();
        prop_assert_eq!(back, split);
    }

    #[test]
    fn noise_traces_replay(s in sentence(), pa in 0.0..=1.0f64, pv in 0.0..=1.0f64, pd in 0.0..=1.0f64,
                           secondary in any::<bool>(), seed in any::<u64>(), rec in any::<u64>()) {
        let cfg = NoiseConfig::new(pa, pv, pd, secondary, seed).unwrap();
        let tr = noiser::corrupt_sentence(&s, &cfg, &NoiseStream::new(seed, rec));
        prop_assert!(tr.verify());
        prop_assert_eq!(CorruptionTrace::replay(&s, &tr.edits).unwrap(), tr.corrupted.clone());
        prop_assert!(tr.corrupted.chars().count() <= s.chars().count());
        let again = noiser::corrupt_sentence(&s, &cfg, &NoiseStream::new(seed, rec));
        prop_assert_eq!(again, tr);
    }

    #[test]
    fn zero_noise_is_identity(s in sentence(), seed in any::<u64>()) {
        let tr = noiser::corrupt_sentence(&s, &NoiseConfig::zero(seed), &NoiseStream::new(seed, 0));
        prop_assert_eq!(tr.corrupted, s);
        prop_assert!(tr.edits.is_empty());
    }

    #[test]
    fn metrics_are_bounded_and_reflexive(h in words(), r in words()) {
        let opts = MetricOptions::default();
        let rep = metrics::evaluate(&[&h], &[&r], &opts, false).unwrap();
        prop_assert!((0.0..=100.0).contains(&rep.bleu));
        prop_assert!((0.0..=100.0).contains(&rep.chrf2));
        prop_assert!(rep.ter >= 0.0);
        let same = metrics::evaluate(&[&r], &[&r], &opts, false).unwrap();
        prop_assert_eq!((same.bleu, same.chrf2, same.ter), (100.0, 100.0, 0.0));
    }

    #[test]
    fn shifts_never_cost_more_than_plain_edits(h in words(), r in words()) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        let with = metrics::ter_stats(&h, &r);
        prop_assert!(with.edits <= metrics::ter_without_shifts(&h, &r).edits);
        prop_assert!(with.edits >= h.len().abs_diff(r.len()));
    }

    #[test]
    fn derangements_have_no_fixed_points(n in 2usize..200, seed in any::<u64>()) {
        let p = probing::random_derangement(n, &mut stream_rng(seed, "prop"));
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(p.iter().enumerate().all(|(i, v)| i != *v));
    }
}

//! Runs a gated-fusion encoder block forward and verifies its gradients and
//! invariants numerically.
//!
//! cargo run --example fusion_check

use mmtlab::fusion::{self, check, Dims, EncoderParams, FusionMode, Tensor2};
use mmtlab::rng::stream_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dims = Dims { d: 8, heads: 2, d_img: 12, m: 4, n: 6 };
    let mut rng = stream_rng(7, "example");
    let params = EncoderParams::random(&dims, 16, &mut rng);
    let text = Tensor2::random(dims.m, dims.d, -1.0, 1.0, &mut rng);
    let image = Tensor2::random(dims.n, dims.d_img, -1.0, 1.0, &mut rng);
    for mode in [FusionMode::TextOnly, FusionMode::Selective, FusionMode::Concat] {
        let img = (mode != FusionMode::TextOnly).then_some(&image);
        let out = fusion::encoder_block(&text, &params, img, mode)?;
        println!("{mode:?}: output {}x{}", out.rows(), out.cols());
    }

    let rows = check::run_suite(7, &dims, &check::FdOptions::default())?;
    for row in &rows {
        println!("{}", row.tsv_line());
    }
    let passed = rows.iter().filter(|r| r.passed).count();
    println!("{passed} of {} checks passed", rows.len());
    Ok(())
}

use mmtlab::fusion::{encoder_block, positional_encoding, Dims, EncoderParams, FusionMode, Tensor2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn m(t: &Tensor2) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn cols(a: &M, start: usize, len: usize) -> M {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

fn attention(queries: &M, kv: &M, wq: &M, wk: &M, wv: &M, heads: usize) -> M {
    let d = wq.len();
    let dk = d / heads;
    let (q, k, v) = (mm(queries, wq), mm(kv, wk), mm(kv, wv));
    let mut out = vec![Vec::new(); queries.len()];
    for h in 0..heads {
        let (qh, kh, vh) = (cols(&q, h * dk, dk), cols(&k, h * dk, dk), cols(&v, h * dk, dk));
        for (i, qi) in qh.iter().enumerate() {
            let logits: Vec<f64> = kh
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dk {
                out[i].push(e.iter().zip(&vh).map(|(w, row)| w / z * row[c]).sum());
            }
        }
    }
    out
}

fn layer_norm(x: &M, gain: &[f64], bias: &[f64], eps: f64) -> M {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn reference_block(x: &M, p: &EncoderParams, image: Option<&M>, heads: usize) -> M {
    let eps = p.ln_eps;
    let ln = |t: &Tensor2| t.row(0).to_vec();
    let att = attention(x, x, &m(&p.attn_q), &m(&p.attn_k), &m(&p.attn_v), heads);
    let mut h = layer_norm(&add(x, &att), &ln(&p.ln1_gain), &ln(&p.ln1_bias), eps);
    if let Some(img) = image {
        let proj = mm(img, &m(&p.fusion.w_img));
        let sel = attention(&h, &proj, &m(&p.fusion.q), &m(&p.fusion.k), &m(&p.fusion.v), heads);
        let a = mm(&h, &m(&p.fusion.w_t));
        let b = mm(&sel, &m(&p.fusion.w_i));
        h = (0..h.len())
            .map(|i| {
                (0..h[i].len())
                    .map(|j| {
                        let l = 1.0 / (1.0 + (-(a[i][j] + b[i][j])).exp());
                        (1.0 - l) * h[i][j] + l * sel[i][j]
                    })
                    .collect()
            })
            .collect();
    }
    let mut hidden = mm(&h, &m(&p.ffn_w1));
    for r in hidden.iter_mut() {
        for (v, b) in r.iter_mut().zip(p.ffn_b1.row(0)) {
            *v = (*v + b).max(0.0);
        }
    }
    let mut ff = mm(&hidden, &m(&p.ffn_w2));
    for r in ff.iter_mut() {
        for (v, b) in r.iter_mut().zip(p.ffn_b2.row(0)) {
            *v += b;
        }
    }
    layer_norm(&add(&h, &ff), &ln(&p.ln2_gain), &ln(&p.ln2_bias), eps)
}

fn max_diff(a: &Tensor2, b: &M) -> f64 {
    let mut worst = 0.0f64;
    for (r, row) in b.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((a.get(r, c) - v).abs());
        }
    }
    worst
}

fn instance(seed: u64) -> (Dims, EncoderParams, Tensor2, Tensor2) {
    let dims = Dims {
        d: 8,
        heads: 2,
        d_img: 6,
        m: 4,
        n: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::random(&dims, 16, &mut rng);
    p.ln1_gain = Tensor2::random(1, 8, 0.5, 1.5, &mut rng);
    p.ln2_bias = Tensor2::random(1, 8, -0.5, 0.5, &mut rng);
    let pe = positional_encoding(4, 8, 10_000.0).unwrap();
    let x = Tensor2::random(4, 8, -1.0, 1.0, &mut rng).add(&pe);
    let img = Tensor2::random(5, 6, -1.0, 1.0, &mut rng);
    (dims, p, x, img)
}

#[test]
fn text_only_block_matches_reference() {
    for seed in 0..5 {
        let (dims, p, x, _) = instance(seed);
        let ours = encoder_block(&x, &p, None, FusionMode::TextOnly).unwrap();
        let theirs = reference_block(&m(&x), &p, None, dims.heads);
        assert!(max_diff(&ours, &theirs) < 1e-10, "seed {seed}");
    }
}

#[test]
fn selective_block_matches_reference() {
    for seed in 0..5 {
        let (dims, p, x, img) = instance(seed);
        let ours = encoder_block(&x, &p, Some(&img), FusionMode::Selective).unwrap();
        let theirs = reference_block(&m(&x), &p, Some(&m(&img)), dims.heads);
        assert!(max_diff(&ours, &theirs) < 1e-10, "seed {seed}");
    }
}

#[test]
fn concat_without_image_rows_equals_text_only() {
    let (_, p, x, _) = instance(9);
    let empty = Tensor2::zeros(0, 6);
    let concat = encoder_block(&x, &p, Some(&empty), FusionMode::Concat).unwrap();
    let text = encoder_block(&x, &p, None, FusionMode::TextOnly).unwrap();
    assert_eq!(concat.shape(), (4, 8));
    assert!(concat.max_abs_diff(&text) < 1e-15);
}

#[test]
fn concat_block_has_row_per_token_and_patch() {
    let (_, p, x, img) = instance(11);
    let out = encoder_block(&x, &p, Some(&img), FusionMode::Concat).unwrap();
    assert_eq!(out.shape(), (9, 8));
    // layer norm with unit gain, zero shift keeps every row centered
    let mut q = p.clone();
    q.ln2_gain = Tensor2::filled(1, 8, 1.0);
    q.ln2_bias = Tensor2::zeros(1, 8);
    let out = encoder_block(&x, &q, Some(&img), FusionMode::Concat).unwrap();
    for r in 0..9 {
        assert!(out.row(r).iter().sum::<f64>().abs() < 1e-12);
    }
}

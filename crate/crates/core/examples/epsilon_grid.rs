//! Grid search for the per-width codebook curvature defaults.
//!
//! For every width in {2, 4, 8} and every epsilon in {0.05, 0.10, ..., 2.00},
//! quantize 10^6 groups of 16 standard-normal entries (each normalized by its
//! max magnitude) and report the per-group vNMSE. The conditional variance of
//! stochastic rounding between brackets `a <= v <= b` is `(b - v)(v - a)`, so
//! the expected error is accumulated exactly instead of sampling the rounding.
//!
//! Usage: cargo run --release --example epsilon_grid [groups]

use dynamiq::codebook::Codebook;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const GROUP: usize = 16;
const BLOCK: usize = 4096;

fn group_error(cb: &Codebook, groups: &[[f32; GROUP]]) -> (f64, f64) {
    let q = cb.values();
    let mut err = 0.0f64;
    let mut norm = 0.0f64;
    for g in groups {
        let m = g.iter().fold(0.0f32, |a, x| a.max(x.abs()));
        for &x in g {
            norm += (x as f64) * (x as f64);
            let v = (x.abs() / m) as f64;
            let above = q.partition_point(|&c| (c as f64) <= v);
            let lo = q[above - 1] as f64;
            if lo != v {
                let hi = q[above] as f64;
                err += (hi - v) * (v - lo) * (m as f64) * (m as f64);
            }
        }
    }
    (err, norm)
}

fn main() {
    let groups: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("group count"))
        .unwrap_or(1_000_000);
    let blocks: Vec<Vec<[f32; GROUP]>> = (0..groups.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + b as u64);
            let count = BLOCK.min(groups - b * BLOCK);
            (0..count)
                .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
                .collect()
        })
        .collect();

    for width in [2u32, 4, 8] {
        let mut best: Option<(f64, f64)> = None;
        for k in 1..=40 {
            let eps = k as f64 * 0.05;
            let cb = match Codebook::new(width, eps) {
                Ok(cb) => cb,
                Err(e) => {
                    println!("b={width} eps={eps:.2} skipped: {e}");
                    continue;
                }
            };
            let (err, norm) = blocks
                .par_iter()
                .map(|blk| group_error(&cb, blk))
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let vnmse = err / norm;
            println!("b={width} eps={eps:.2} vnmse={vnmse:.6e}");
            if best.is_none_or(|(_, v)| vnmse < v) {
                best = Some((eps, vnmse));
            }
        }
        let (eps, v) = best.expect("at least one valid epsilon");
        println!("BEST b={width} eps={eps:.2} vnmse={v:.6e}");
    }
}

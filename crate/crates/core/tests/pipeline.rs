use dynamiq::cli::{cmd_sweep_budget, Experiment};
use dynamiq::engine::{run_round, AllocatorKind, PipelineConfig};
use dynamiq::randomness::SharedSeed;
use dynamiq::stats::{locality_cdf, GradientView, Granularity, GroupLayout};
use dynamiq::synth::{generate, generate_workers, GeneratorKind, GeneratorSpec};
use dynamiq::topology::TopologyKind;

fn workers(kind: GeneratorKind, d: usize, n: usize, seed: u64) -> Vec<Vec<f32>> {
    generate_workers(
        &GeneratorSpec {
            kind,
            d,
            seed,
            ..Default::default()
        },
        n,
    )
    .unwrap()
}

/// Per-entry t statistics of the mean synced gradient over `rounds` seeds,
/// plus the per-entry sample standard deviation.
fn seed_statistics(base: &PipelineConfig, rounds: u64) -> (Vec<f64>, Vec<f64>) {
    let w = workers(GeneratorKind::IidGaussian, 1 << 14, 4, 77);
    let d = w[0].len();
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut exact = Vec::new();
    for seed in 0..rounds {
        let cfg = PipelineConfig {
            seed,
            trace: false,
            ..base.clone()
        };
        let r = run_round(&w, &cfg).unwrap();
        for (k, &v) in r.synced.iter().enumerate() {
            sum[k] += v as f64;
            sq[k] += (v as f64).powi(2);
        }
        exact = r.exact;
    }
    let n = rounds as f64;
    (0..d)
        .map(|k| {
            let m = sum[k] / n;
            let sd = ((sq[k] / n - m * m).max(0.0) * n / (n - 1.0)).sqrt();
            let dev = m - exact[k];
            let t = if sd > 0.0 {
                dev / (sd / n.sqrt())
            } else if dev.abs() <= 1e-6 * exact[k].abs() {
                0.0
            } else {
                f64::INFINITY
            };
            (t, sd)
        })
        .unzip()
}

#[test]
fn round_is_unbiased_with_independent_rounding() {
    let base = PipelineConfig {
        correlated: false,
        ..Default::default()
    };
    let (t, _) = seed_statistics(&base, 200);
    // an unbiased estimator puts about 1.4 of 16384 entries beyond 4 SE
    let beyond = t.iter().filter(|z| z.abs() > 4.0).count();
    let mean_sq = t.iter().map(|z| z * z).sum::<f64>() / t.len() as f64;
    assert!(beyond <= 8, "{beyond} entries beyond 4 SE");
    assert!((0.9..1.15).contains(&mean_sq), "mean t^2 {mean_sq}");
}

#[test]
fn correlated_rounding_bias_is_second_order() {
    // Each compression is unbiased, but along a path a hop's rounding variable
    // shares the permutation with the hops that produced its input.
    let (t, sd) = seed_statistics(&PipelineConfig::default(), 200);
    let mean_sq = t.iter().filter(|z| z.is_finite()).map(|z| z * z).sum::<f64>() / t.len() as f64;
    // squared bias over squared per-round noise: (E[t^2] - 1) / rounds
    let relative_bias = ((mean_sq - 1.0).max(0.0) / 200.0).sqrt();
    let typical_sd = (sd.iter().map(|s| s * s).sum::<f64>() / sd.len() as f64).sqrt();
    eprintln!("mean t^2 {mean_sq:.3}, bias about {:.3} of the per-entry noise {typical_sd:.3}", relative_bias);
    assert!(t.iter().all(|z| z.is_finite()));
    assert!(relative_bias < 0.15, "relative bias {relative_bias}");
}

#[test]
fn ring_error_grows_along_the_path() {
    let n = 6;
    let mut by_subtree = vec![0.0f64; n + 1];
    let mut counts = vec![0usize; n + 1];
    for seed in 0..20 {
        let w = workers(GeneratorKind::IidGaussian, 1 << 13, n, seed);
        let r = run_round(&w, &PipelineConfig { seed, ..Default::default() }).unwrap();
        for h in &r.report.per_hop {
            by_subtree[h.subtree] += h.mse();
            counts[h.subtree] += 1;
        }
    }
    let means: Vec<f64> = (1..=n).map(|k| by_subtree[k] / counts[k] as f64).collect();
    assert!(means.windows(2).all(|p| p[0] <= p[1]), "{means:?}");
}

fn ks(a: &[f64], b: &[f64]) -> f64 {
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    best
}

#[test]
fn locality_separates_from_shuffled_and_iid_does_not() {
    let layout = GroupLayout::new(16, 256).unwrap();
    let seed = SharedSeed::new(4, 0);
    let loc = GeneratorSpec {
        kind: GeneratorKind::Locality,
        d: 1 << 20,
        seed: 4,
        ..Default::default()
    };
    let g = GradientView::new(generate(&loc, 0).unwrap(), layout).unwrap();
    let below = |norms: &[f64]| {
        let median = norms[norms.len() / 2];
        norms.iter().filter(|&&x| x < median / 100.0).count() as f64 / norms.len() as f64
    };
    let orig = locality_cdf(&g, Granularity::SuperGroup, false, seed).unwrap();
    let shuf = locality_cdf(&g, Granularity::SuperGroup, true, seed).unwrap();
    assert!(below(&orig) >= 0.10, "original tail {}", below(&orig));
    assert!(below(&shuf) < 0.01, "shuffled tail {}", below(&shuf));

    // 2^22 entries keep the two-sample KS noise near 0.01 at super-group granularity
    let iid_spec = GeneratorSpec {
        d: 1 << 22,
        seed: 4,
        ..Default::default()
    };
    let iid = GradientView::new(generate(&iid_spec, 0).unwrap(), layout).unwrap();
    for gran in [Granularity::Group, Granularity::SuperGroup] {
        let a = locality_cdf(&iid, gran, false, seed).unwrap();
        let b = locality_cdf(&iid, gran, true, seed).unwrap();
        assert!(ks(&a, &b) <= 0.02, "{gran:?}: KS {}", ks(&a, &b));
    }
}

#[test]
fn more_budget_means_less_error() {
    let exp = Experiment {
        n: 4,
        generator: GeneratorSpec {
            kind: GeneratorKind::Locality,
            d: 1 << 15,
            ..Default::default()
        },
        seeds: vec![0, 1],
        ..Default::default()
    };
    let rows = cmd_sweep_budget(&exp).unwrap();
    assert_eq!(rows.len(), 4 * 2);
    let mean = |b: f64| rows.iter().filter(|r| r.b == b).map(|r| r.vnmse).sum::<f64>() / 2.0;
    let curve: Vec<f64> = [3.0, 4.0, 5.0, 6.0].iter().map(|&b| mean(b)).collect();
    assert!(curve.windows(2).all(|p| p[1] < p[0]), "{curve:?}");
}

#[test]
fn bits_stay_within_budget_for_both_allocators() {
    for (k, b) in [3.0, 4.25, 5.0, 6.5, 8.0].into_iter().enumerate() {
        for allocator in [AllocatorKind::General, AllocatorKind::Fast] {
            for topology in [TopologyKind::Ring, TopologyKind::Butterfly] {
                let w = workers(GeneratorKind::Locality, 40_000, 4, k as u64);
                let cfg = PipelineConfig {
                    bits_per_coordinate: b,
                    allocator,
                    topology,
                    seed: k as u64,
                    trace: false,
                    ..Default::default()
                };
                let bits = run_round(&w, &cfg).unwrap().report.bits.per_representation;
                assert!(bits <= b, "{allocator:?}/{topology} b={b}: {bits}");
            }
        }
    }
}

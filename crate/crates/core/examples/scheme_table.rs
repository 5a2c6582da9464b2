//! Runs every scheme on the default desk task and prints a comparison table.
//!
//! `cargo run --release --example scheme_table -- [seeds] [key=value ...]`

use std::time::Instant;

use rankdistill::harness::{ExperimentConfig, Scheme, Workbench};

fn main() -> rankdistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let overrides: Vec<String> = args.collect();
    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    for scheme in Scheme::ALL {
        variants.push((scheme.to_string(), ExperimentConfig { scheme, ..Default::default() }));
    }
    variants.push((
        "label-smoothing σ=0.5".into(),
        ExperimentConfig::default()
            .with_field("scheme", "label-smoothing")?
            .with_field("baselines.sigma", "0.5")?,
    ));
    let mut sums = vec![[0.0f64; 4]; variants.len()];
    for seed in 0..seeds {
        let mut bench = Workbench::new();
        for (i, (name, base)) in variants.iter().enumerate() {
            let mut cfg = base.clone().with_seed(seed);
            for o in &overrides {
                let (k, v) = o.split_once('=').expect("key=value");
                cfg = cfg.with_field(k, v)?;
            }
            let t = Instant::now();
            let r = bench.run(&cfg)?;
            println!(
                "seed {seed} {name:<24} acc1 {:.4} hit5 {:.4} ndcg5 {:.4} recov {:.4} | teacher acc1 {:.4} | {:.1}s",
                r.test.acc_at_1,
                r.test.hit_at_k,
                r.test.ndcg_at_k,
                r.hidden_positive_recovery,
                r.teacher_test.acc_at_1,
                t.elapsed().as_secs_f64()
            );
            let s = &mut sums[i];
            s[0] += r.test.acc_at_1;
            s[1] += r.test.hit_at_k;
            s[2] += r.test.ndcg_at_k;
            s[3] += r.hidden_positive_recovery;
        }
    }
    println!("\nmean over {seeds} seed(s)");
    for ((name, _), s) in variants.iter().zip(&sums) {
        let n = seeds as f64;
        println!(
            "{name:<24} acc1 {:.4} hit5 {:.4} ndcg5 {:.4} recov {:.4}",
            s[0] / n,
            s[1] / n,
            s[2] / n,
            s[3] / n
        );
    }
    Ok(())
}

//! Sweep helper for the synthetic signal strengths.
//!
//! `cargo run --release -p trajpref --example calibrate -- <erp_uv> <obs_shift> <sessions> [lapse]`
//!
//! Prints per-source pairwise accuracy and borda_conf nDCG with a bootstrap
//! interval, then the merged report table.

use std::time::Instant;

use trajpref::classify::Source;
use trajpref::eval::{bootstrap_mean_ci, MetricReport};
use trajpref::pipeline::{decode_session, rank_session, DecodeConfig, RankConfig};
use trajpref::rank::RankMethod;
use trajpref::synth::{gen_session, SynthConfig};

fn arg(args: &[String], i: usize, name: &str) -> Option<f64> {
    args.get(i).map(|a| a.parse().unwrap_or_else(|_| panic!("{name} must be a number, got {a:?}")))
}

fn main() -> trajpref::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let defaults = SynthConfig::default();
    let erp = arg(&args, 0, "erp_uv").unwrap_or(defaults.erp_amplitude_uv);
    let shift = arg(&args, 1, "obs_shift").unwrap_or(defaults.obs_cov_shift);
    let sessions = arg(&args, 2, "sessions").unwrap_or(4.0) as u64;
    let lapse = arg(&args, 3, "lapse").unwrap_or(defaults.obs_lapse_prob);

    let start = Instant::now();
    let mut reports = Vec::new();
    for s in 0..sessions {
        let cfg = SynthConfig {
            seed: 100 + s,
            participant: format!("p{s:02}"),
            erp_amplitude_uv: erp,
            obs_cov_shift: shift,
            obs_lapse_prob: lapse,
            ..SynthConfig::default()
        };
        let t = Instant::now();
        let session = gen_session(&cfg)?;
        let decoded = decode_session(&session, &DecodeConfig::default())?;
        let out = rank_session(&session, &decoded, &RankConfig::default())?;
        eprintln!("session {s}: {:.1}s", t.elapsed().as_secs_f64());
        reports.push(out.report);
    }
    let merged = MetricReport::merge(&reports)?;
    for source in Source::ALL {
        let sr = &merged.sources[&source];
        let bc = &sr.methods[&RankMethod::BordaConf];
        let v: Vec<f64> = bc.per_task.iter().map(|m| m.ndcg_at[&1]).collect();
        let (lo, hi) = bootstrap_mean_ci(&v, 0.95, 2000, 7)?;
        println!(
            "{:12} acc {:.3}  borda_conf nDCG@1 {:.3} [{lo:.3}, {hi:.3}]  nDCG@3 {:.3}",
            source.name(),
            sr.comparison_accuracy,
            bc.ndcg_at[&1],
            bc.ndcg_at[&3]
        );
    }
    print!("{}", merged.to_table());
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

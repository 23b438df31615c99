//! One PASS/FAIL line per acceptance criterion. Criteria 4 to 7 train the
//! toy models and take several minutes on one core.

#[path = "../../../core/tests/common/mod.rs"]
mod common;
mod oracles;
mod pipeline;
mod training;

use std::time::{Duration, Instant};

/// Outcome detail on success, reason on failure.
pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

fn report(id: u32, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = start.elapsed();
    let outcome = match (outcome, budget) {
        (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
        (o, _) => o,
    };
    let pass = outcome.is_ok();
    let detail = outcome.unwrap_or_else(|e| e);
    println!(
        "{} criterion {id} ({title}): {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and filters from other targets end up here too
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    let mut results = vec![
        report(1, "spectral oracle", Some(Duration::from_secs(10)), oracles::spectral),
        report(2, "gradient suite", Some(Duration::from_secs(60)), oracles::gradients),
        report(3, "sampling algebra", None, oracles::sampling),
        report(8, "evaluation oracles", None, oracles::evaluation),
        report(9, "determinism", None, pipeline::determinism),
    ];
    let toy = training::ToyData::generate();
    let mut stage1 = None;
    results.push(report(4, "stage-1 toy training", minutes(15), || {
        let (check, run) = training::stage1(&toy);
        stage1 = run;
        check
    }));
    let base = stage1.as_ref();
    results.push(report(5, "latent size trend", None, || training::latent_trend(&toy, base)));
    results.push(report(6, "Chebyshev order trend", None, || training::order_trend(&toy, base)));
    results.push(report(7, "stage-2 toy training", minutes(20), || training::stage2(&toy, base)));
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

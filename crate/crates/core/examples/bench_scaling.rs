//! Small run of the latency and storage benchmark. The full run is
//! `vrlog bench --out-dir results`.
//!
//! ```text
//! cargo run --release --example bench_scaling
//! ```

use vrlog::bench::{run, BenchConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BenchConfig { sizes: vec![500, 2000, 8000], samples: 30, batch: 500, seed: 7 };
    let report = run(&cfg, &dir.path().join("registry")).unwrap();
    println!("{:?}", report.machine);
    println!("{:<20} {:>7} {:>10} {:>10} {:>10}", "op", "n", "mean us", "p50 us", "p95 us");
    for s in report.stats() {
        println!("{:<20} {:>7} {:>10.1} {:>10.1} {:>10.1}", s.op, s.n, s.mean, s.p50, s.p95);
    }
    let fit = report.storage_fit();
    println!("storage: {:.0} bytes per record + {:.0}, r2 {:.4}", fit.slope, fit.intercept, fit.r2);
    if let Some(k) = report.loglog_slope("prove_append_only") {
        println!("prove_append_only log-log slope {k:.2}");
    }
}

//! Latency and storage benchmark over 1 KB synthetic records.
//!
//! Output is one CSV with two row shapes, `op,n,sample_idx,micros` and
//! `storage,n,bytes`, plus `#` comment lines describing the machine. Every
//! statistic in [`BenchReport`] is recomputable from that file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{MasterKeys, VoterId};
use crate::merkle::verify_consistency;
use crate::registry::{verify_lookup, Opcode, Registry, RegistryConfig, RegistryError};
use crate::synth::{kilobyte_schema, VoterGenerator};
use crate::workflows::{register, update_registration, WorkflowError};

pub const OPS: [&str; 6] = ["add", "update", "lookup_prove", "verify", "prove_append_only", "verify_append_only"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Registry sizes to measure at, ascending.
    pub sizes: Vec<usize>,
    /// Timed samples per operation per size.
    pub samples: usize,
    /// Records per epoch while filling.
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![1_000, 10_000, 100_000], samples: 100, batch: 1_000, seed: 7 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("verification failed during benchmark: {0}")]
    Verify(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub op: String,
    pub n: u64,
    pub idx: u64,
    pub micros: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl Machine {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpStats {
    pub op: String,
    pub n: u64,
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LinearFit { slope, intercept, r2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub machine: Machine,
    pub samples: Vec<Sample>,
    /// `(operations so far, bytes on disk)`.
    pub storage: Vec<(u64, u64)>,
}

impl BenchReport {
    pub fn stats(&self) -> Vec<OpStats> {
        let mut groups: BTreeMap<(u64, &str), Vec<f64>> = BTreeMap::new();
        for s in &self.samples {
            groups.entry((s.n, s.op.as_str())).or_default().push(s.micros);
        }
        groups
            .into_iter()
            .map(|((n, op), mut v)| {
                v.sort_by(f64::total_cmp);
                let pct = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
                OpStats {
                    op: op.into(),
                    n,
                    count: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    p50: pct(0.5),
                    p95: pct(0.95),
                }
            })
            .collect()
    }

    pub fn mean(&self, op: &str, n: u64) -> Option<f64> {
        self.stats().into_iter().find(|s| s.op == op && s.n == n).map(|s| s.mean)
    }

    pub fn storage_fit(&self) -> LinearFit {
        let pts: Vec<(f64, f64)> = self.storage.iter().map(|&(o, b)| (o as f64, b as f64)).collect();
        linear_fit(&pts)
    }

    /// Slope of log(mean latency) against log(n). Below 1 means sublinear.
    pub fn loglog_slope(&self, op: &str) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .stats()
            .into_iter()
            .filter(|s| s.op == op && s.mean > 0.0)
            .map(|s| ((s.n as f64).ln(), s.mean.ln()))
            .collect();
        (pts.len() >= 2).then(|| linear_fit(&pts).slope)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), BenchError> {
        writeln!(out, "# os={} arch={} cpus={}", self.machine.os, self.machine.arch, self.machine.cpus)?;
        let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(out);
        for s in &self.samples {
            w.write_record([s.op.clone(), s.n.to_string(), s.idx.to_string(), format!("{:.3}", s.micros)])?;
        }
        for (n, bytes) in &self.storage {
            w.write_record(["storage".to_string(), n.to_string(), bytes.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self, BenchError> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut machine = Machine { os: String::new(), arch: String::new(), cpus: 0 };
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            for kv in line.split_whitespace() {
                match kv.split_once('=') {
                    Some(("os", v)) => machine.os = v.into(),
                    Some(("arch", v)) => machine.arch = v.into(),
                    Some(("cpus", v)) => machine.cpus = v.parse().unwrap_or(0),
                    _ => {}
                }
            }
        }
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut report = BenchReport { machine, samples: Vec::new(), storage: Vec::new() };
        let bad = |row: &csv::StringRecord| BenchError::Verify(format!("malformed bench row {row:?}"));
        for row in r.records() {
            let row = row?;
            let num = |i: usize| row.get(i).and_then(|v| v.parse::<f64>().ok());
            if row.get(0) == Some("storage") {
                let (n, b) = (num(1).ok_or_else(|| bad(&row))?, num(2).ok_or_else(|| bad(&row))?);
                report.storage.push((n as u64, b as u64));
            } else {
                report.samples.push(Sample {
                    op: row.get(0).ok_or_else(|| bad(&row))?.to_owned(),
                    n: num(1).ok_or_else(|| bad(&row))? as u64,
                    idx: num(2).ok_or_else(|| bad(&row))? as u64,
                    micros: num(3).ok_or_else(|| bad(&row))?,
                });
            }
        }
        Ok(report)
    }
}

/// gnuplot script for `bench.csv`: latency per operation and storage.
pub const GNUPLOT_SCRIPT: &str = r#"set datafile separator ","
set terminal pngcairo size 1200,500
set output "bench.png"
set multiplot layout 1,2
set logscale x
set xlabel "records"
set ylabel "mean latency (us)"
set key top left
ops = "add update lookup_prove verify prove_append_only verify_append_only"
plot for [op in ops] "< awk -F, '$1==\"".op."\" {s[$2]+=$4; c[$2]++} END {for (n in s) print n\",\"s[n]/c[n]}' bench.csv | sort -t, -n -k1" using 1:2 with linespoints title op
unset logscale x
set xlabel "operations"
set ylabel "bytes on disk"
plot "< grep ^storage bench.csv" using 2:3 with lines title "storage"
unset multiplot
"#;

fn micros_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// Runs the benchmark in `dir`, which should be empty.
pub fn run(config: &BenchConfig, dir: &Path) -> Result<BenchReport, BenchError> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let keys = MasterKeys::generate_with(&mut rng, "bench");
    let pk = keys.public_key();
    let cfg = RegistryConfig { schema: kilobyte_schema(), ..RegistryConfig::default() };
    let mut reg = Registry::create(dir, keys, cfg)?;
    let mut gen = VoterGenerator::kilobyte(config.seed);
    let mut voters: Vec<(VoterId, Vec<String>)> = Vec::new();
    let mut report = BenchReport { machine: Machine::current(), samples: Vec::new(), storage: vec![(0, reg.storage_bytes())] };

    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    let batch = config.batch.max(1);
    for &n in &sizes {
        while voters.len() < n {
            let take = batch.min(n - voters.len());
            for _ in 0..take {
                let v = gen.voter();
                let id = register(&mut reg, v.base_id.as_bytes(), &v.data)?;
                voters.push((id, v.data));
            }
            reg.push_epoch()?;
            report.storage.push((reg.log().size(), reg.storage_bytes()));
        }
        let n64 = n as u64;
        let mut record = |op: &str, idx: usize, micros: f64| {
            report.samples.push(Sample { op: op.into(), n: n64, idx: idx as u64, micros });
        };
        for i in 0..config.samples {
            let v = gen.voter();
            let t = Instant::now();
            let id = register(&mut reg, v.base_id.as_bytes(), &v.data)?;
            reg.push_epoch()?;
            record("add", i, micros_since(t));
            voters.push((id, v.data));

            let j = rng.gen_range(0..voters.len());
            let data = gen.relocate(&voters[j].1);
            let t = Instant::now();
            update_registration(&mut reg, voters[j].0, Some(&data), Opcode::Update)?;
            reg.push_epoch()?;
            record("update", i, micros_since(t));
            voters[j].1 = data;

            let j = rng.gen_range(0..voters.len());
            let t = Instant::now();
            let proof = reg.lookup(&voters[j].0);
            record("lookup_prove", i, micros_since(t));
            let t = Instant::now();
            let ok = verify_lookup(reg.latest_commitment(), &pk, &proof);
            record("verify", i, micros_since(t));
            ok.map_err(|e| BenchError::Verify(e.to_string()))?;

            let commitments = reg.bulletin().entries();
            let old = &commitments[rng.gen_range(0..commitments.len() - 1)].commitment;
            let new = reg.latest_commitment();
            let t = Instant::now();
            let proof = reg.log().prove_consistency(old.log_size, new.log_size).map_err(RegistryError::from)?;
            record("prove_append_only", i, micros_since(t));
            let t = Instant::now();
            let ok = verify_consistency(&old.log_root, &new.log_root, &proof);
            record("verify_append_only", i, micros_since(t));
            if !ok {
                return Err(BenchError::Verify(format!("consistency {}..{}", old.log_size, new.log_size)));
            }
        }
    }
    Ok(report)
}

//! End-to-end runs: data source, solver, optional oracle, and artifacts on disk.
//!
//! Each entry point validates the whole [`RunSpec`] before touching the output
//! directory, so a rejected configuration or unreadable input leaves no files
//! behind. Every artifact is listed with its SHA-256 in a manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::covariance::CovarianceTracker;
use crate::error::{Error, Result};
use crate::io::{self, CsvSource, IngestOptions, MetricsWriter};
use crate::metrics::{nse, RunRecord};
use crate::models::{GraphModel, ModelSpec};
use crate::oracle::{diagnose, oracle_trajectory, OracleOptions};
use crate::solver::{OnlineSolver, SolverConfig};
use crate::synth::{default_density, generate, Scenario, SynthSpec, SyntheticData, DEFAULT_NOISE_VARIANCE};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        scenario: Scenario,
        n: usize,
        horizon: usize,
        /// Seed-graph edge probability; `None` uses [`default_density`].
        density: Option<f64>,
    },
    Csv { path: PathBuf, options: IngestOptions },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub solver: SolverConfig,
    /// EWMA forgetting factor; `None` means infinite memory. Ignored by the
    /// rank-one variants.
    pub gamma: Option<f64>,
    /// Samples used to initialize the covariance; defaults to `N`.
    pub warmup: Option<usize>,
    pub seed: u64,
    pub source: DataSource,
    /// 1-based sample indices whose estimate is exported as an edge list.
    pub snapshots: Vec<usize>,
    /// Solve the offline problem after every sample and record the NSE.
    pub oracle: bool,
    pub oracle_options: OracleOptions,
    pub jobs: usize,
    /// Write wall-clock step times into the metrics file.
    pub timing: bool,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.variant_policy().validate()?;
        match self.model {
            ModelSpec::Ggm { xi, chi } if !(xi > 0.0 && chi > xi && chi.is_finite()) => {
                return Err(Error::Config(format!("need 0 < xi < chi, got xi={xi}, chi={chi}")));
            }
            ModelSpec::Sem { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
            }
            ModelSpec::Sbm { lambda1, lambda2 }
                if !(lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite()) =>
            {
                return Err(Error::Config(format!(
                    "lambda1 and lambda2 must be positive, got {lambda1} and {lambda2}"
                )));
            }
            _ => {}
        }
        if self.warmup == Some(0) {
            return Err(Error::Config("warm-up needs at least one sample".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.snapshots.contains(&0) {
            return Err(Error::Config("snapshot indices are 1-based".into()));
        }
        if let DataSource::Synthetic { n, horizon, density, .. } = &self.source {
            if *n < 2 {
                return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
            }
            if *horizon == 0 {
                return Err(Error::Config("horizon must be positive".into()));
            }
            if let Some(d) = density {
                if !(*d > 0.0 && *d <= 1.0) {
                    return Err(Error::Config(format!("density must lie in (0, 1], got {d}")));
                }
            }
            if let Some(&t) = self.snapshots.iter().find(|&&t| t > *horizon) {
                return Err(Error::Config(format!("snapshot {t} is past the horizon {horizon}")));
            }
        }
        Ok(())
    }

    fn variant_policy(&self) -> crate::covariance::ForgettingPolicy {
        self.solver.variant.policy(self.gamma)
    }

    /// Plain `key=value` description, written next to the results.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model.kind());
        match self.model {
            ModelSpec::Ggm { xi, chi } => {
                let _ = writeln!(s, "xi={xi}\nchi={chi}");
            }
            ModelSpec::Sem { lambda } => {
                let _ = writeln!(s, "lambda={lambda}");
            }
            ModelSpec::Sbm { lambda1, lambda2 } => {
                let _ = writeln!(s, "lambda1={lambda1}\nlambda2={lambda2}");
            }
        }
        let c = &self.solver;
        let _ = writeln!(s, "variant={}", c.variant);
        let _ = writeln!(s, "p_steps={}\nc_steps={}\nalpha={}\nbeta={}", c.p_steps, c.c_steps, c.alpha, c.beta);
        match self.gamma {
            Some(g) => {
                let _ = writeln!(s, "gamma={g}");
            }
            None => s.push_str("gamma=infinite\n"),
        }
        if let Some(w) = self.warmup {
            let _ = writeln!(s, "warmup={w}");
        }
        let _ = writeln!(s, "seed={}", self.seed);
        match &self.source {
            DataSource::Synthetic { scenario, n, horizon, density } => {
                let _ = writeln!(s, "scenario={scenario}\nn={n}\nt={horizon}");
                if let Some(d) = density {
                    let _ = writeln!(s, "density={d}");
                }
            }
            DataSource::Csv { path, options } => {
                let _ = writeln!(s, "csv={}\nstandardize={}", path.display(), options.standardize);
                if options.sample_std {
                    s.push_str("sample_std=true\n");
                }
            }
        }
        s
    }
}

/// What a run produced, beyond the files themselves.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub mean_step_seconds: f64,
    /// Artifact names relative to the output directory, manifest excluded.
    pub files: Vec<String>,
    pub violations: Option<usize>,
    pub gaps: Option<usize>,
    /// Largest time-gradient norm seen, an estimate of the drift bound `C0`.
    pub c0_estimate: f64,
}

/// Generates a synthetic stream for `spec` (the CSV source is rejected).
pub fn synthetic_data(spec: &RunSpec) -> Result<SyntheticData> {
    let DataSource::Synthetic { scenario, n, horizon, density } = &spec.source else {
        return Err(Error::Config("this command needs a synthetic data source".into()));
    };
    let mut synth = SynthSpec::new(spec.model.kind(), *scenario, *n, *horizon, spec.seed);
    synth.warmup = spec.warmup.unwrap_or(*n);
    synth.density = density.unwrap_or_else(|| default_density(*n));
    synth.noise_variance = DEFAULT_NOISE_VARIANCE;
    generate(&synth)
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn snapshot_name(t: usize) -> String {
    format!("snapshot_t{t}.csv")
}

fn finish(out: &Path, spec: &RunSpec, mut files: Vec<String>) -> Result<Vec<String>> {
    std::fs::write(out.join("run.txt"), spec.describe()).map_err(|e| Error::io(out.join("run.txt"), e))?;
    files.push("run.txt".into());
    files.sort();
    io::write_manifest(out, &files)?;
    Ok(files)
}

fn mean_seconds(total: f64, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        total / steps as f64
    }
}

/// Attaches the oracle NSE to each record; steps whose reference is the empty
/// graph keep `None`.
fn attach_nse(records: &mut [RunRecord], stars: &[DVector<f64>]) {
    for (r, s) in records.iter_mut().zip(stars) {
        r.nse = nse(&r.s_hat, s).ok();
    }
}

/// Synthetic experiment: generate, track, optionally compare with the oracle.
pub fn run_synth(spec: &RunSpec) -> Result<(RunSummary, Vec<RunRecord>)> {
    spec.validate()?;
    let data = synthetic_data(spec)?;
    let tracker = CovarianceTracker::init(&data.warmup, spec.variant_policy())?;
    let mut solver = OnlineSolver::new(spec.model, spec.solver, tracker.clone())?;
    let mut records = solver.run(data.signals.iter().cloned().map(Ok))?;

    if spec.oracle {
        let model = spec.model.build(solver.model().n())?;
        let stars = oracle_trajectory(&model, &tracker, &data.signals, &spec.oracle_options, spec.jobs)?;
        let s: Vec<DVector<f64>> = stars.into_iter().map(|o| o.s).collect();
        attach_nse(&mut records, &s);
    }

    prepare_out(&spec.out)?;
    let mut files = vec!["metrics.csv".to_string(), "signals.csv".to_string()];
    io::write_metrics(spec.out.join("metrics.csv"), &records, spec.timing)?;
    io::write_signals(spec.out.join("signals.csv"), &data.signals)?;
    let (space, n) = (solver.model().space(), solver.model().n());
    for &t in spec.snapshots.iter().collect::<BTreeSet<_>>() {
        io::write_edge_list(spec.out.join(snapshot_name(t)), &records[t - 1].s_hat, space, n)?;
        files.push(snapshot_name(t));
    }
    let files = finish(&spec.out, spec, files)?;
    let total: f64 = records.iter().map(|r| r.step_seconds).sum();
    let summary = RunSummary {
        steps: records.len(),
        mean_step_seconds: mean_seconds(total, records.len()),
        files,
        violations: None,
        gaps: None,
        c0_estimate: records.iter().fold(0.0, |a, r| a.max(r.tgrad_norm)),
    };
    Ok((summary, records))
}

/// Streams a CSV file through the solver.
///
/// The covariance is initialized from the first `warmup` rows and then every
/// row, those included, is streamed, so that record `t` belongs to data row
/// `t`. Without the oracle nothing but the current state is kept in memory.
pub fn run_csv(spec: &RunSpec) -> Result<RunSummary> {
    spec.validate()?;
    let DataSource::Csv { path, options } = &spec.source else {
        return Err(Error::Config("this command needs a CSV data source".into()));
    };
    let source = CsvSource::open(path, *options)?;
    let n = source.n();
    if n < 2 {
        return Err(Error::Ingestion {
            row: None,
            column: None,
            message: "need at least two columns (nodes)".into(),
        });
    }
    let warmup_len = spec.warmup.unwrap_or(n).min(source.len());
    if let Some(&t) = spec.snapshots.iter().find(|&&t| t > source.len()) {
        return Err(Error::Config(format!("snapshot {t} is past the last row {}", source.len())));
    }
    let warmup = source.stream()?.take(warmup_len).collect::<Result<Vec<_>>>()?;
    let tracker = CovarianceTracker::init(&warmup, spec.variant_policy())?;
    let mut solver = OnlineSolver::new(spec.model, spec.solver, tracker.clone())?;
    let (space, dim) = (solver.model().space(), solver.model().dim());
    let wanted: BTreeSet<usize> = spec.snapshots.iter().copied().collect();

    // The oracle needs random access to the stream, so it forces a full read.
    let stars = if spec.oracle {
        let signals = source.read_all()?;
        let model = spec.model.build(n)?;
        let stars = oracle_trajectory(&model, &tracker, &signals, &spec.oracle_options, spec.jobs)?;
        Some(stars.into_iter().map(|o| o.s).collect::<Vec<_>>())
    } else {
        None
    };

    prepare_out(&spec.out)?;
    let mut metrics = MetricsWriter::create(spec.out.join("metrics.csv"), spec.timing)?;
    let mut files = vec!["metrics.csv".to_string()];
    let (mut steps, mut total, mut c0) = (0usize, 0.0, 0.0_f64);
    for (k, x) in source.stream()?.enumerate() {
        let mut record = x.and_then(|x| solver.step(&x)).map_err(|e| match e {
            Error::Ingestion { .. } | Error::Io { .. } => e,
            other => Error::Numerical(format!("at row {}: {other}", k + 1)),
        })?;
        if let Some(stars) = &stars {
            record.nse = nse(&record.s_hat, &stars[k]).ok();
        }
        metrics.write(&record)?;
        if wanted.contains(&record.t) {
            debug_assert_eq!(record.s_hat.len(), dim);
            io::write_edge_list(spec.out.join(snapshot_name(record.t)), &record.s_hat, space, n)?;
            files.push(snapshot_name(record.t));
        }
        steps += 1;
        total += record.step_seconds;
        c0 = c0.max(record.tgrad_norm);
    }
    metrics.finish()?;
    let files = finish(&spec.out, spec, files)?;
    Ok(RunSummary {
        steps,
        mean_step_seconds: mean_seconds(total, steps),
        files,
        violations: None,
        gaps: None,
        c0_estimate: c0,
    })
}

/// Synthetic run with the per-step tracking-bound check.
pub fn run_diagnose(spec: &RunSpec) -> Result<RunSummary> {
    spec.validate()?;
    let data = synthetic_data(spec)?;
    let tracker = CovarianceTracker::init(&data.warmup, spec.variant_policy())?;
    let solver = OnlineSolver::new(spec.model, spec.solver, tracker)?;
    let (space, n) = (solver.model().space(), solver.model().n());
    let report = diagnose(solver, &data.signals, &spec.oracle_options)?;

    prepare_out(&spec.out)?;
    io::write_metrics(spec.out.join("metrics.csv"), &report.records, spec.timing)?;
    io::write_diagnostics(spec.out.join("diagnostics.csv"), &report.steps)?;
    let mut files = vec!["metrics.csv".to_string(), "diagnostics.csv".to_string()];
    for &t in spec.snapshots.iter().collect::<BTreeSet<_>>() {
        io::write_edge_list(spec.out.join(snapshot_name(t)), &report.records[t - 1].s_hat, space, n)?;
        files.push(snapshot_name(t));
    }
    let summary = format!(
        "steps={}\nviolations={}\noracle_gaps={}\nc0_estimate={}\n",
        report.steps.len(),
        report.violations,
        report.gaps,
        io::fmt_f64(report.c0_estimate)
    );
    std::fs::write(spec.out.join("summary.txt"), summary).map_err(|e| Error::io(spec.out.join("summary.txt"), e))?;
    files.push("summary.txt".into());
    let files = finish(&spec.out, spec, files)?;
    let total: f64 = report.records.iter().map(|r| r.step_seconds).sum();
    Ok(RunSummary {
        steps: report.records.len(),
        mean_step_seconds: mean_seconds(total, report.records.len()),
        files,
        violations: Some(report.violations),
        gaps: Some(report.gaps),
        c0_estimate: report.c0_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Variant;

    fn spec(out: &Path) -> RunSpec {
        RunSpec {
            model: ModelSpec::Sem { lambda: 0.1 },
            solver: SolverConfig::for_variant(Variant::Pc, 1e-2, 1e-2),
            gamma: Some(0.95),
            warmup: None,
            seed: 3,
            source: DataSource::Synthetic { scenario: Scenario::Piecewise, n: 5, horizon: 40, density: None },
            snapshots: vec![10, 40],
            oracle: true,
            oracle_options: OracleOptions::default(),
            jobs: 2,
            timing: false,
            out: out.to_path_buf(),
        }
    }

    #[test]
    fn synth_writes_listed_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(dir.path());
        let (summary, records) = run_synth(&s).unwrap();
        assert_eq!(records.len(), 40);
        assert_eq!(
            summary.files,
            vec!["metrics.csv", "run.txt", "signals.csv", "snapshot_t10.csv", "snapshot_t40.csv"]
        );
        let manifest = std::fs::read_to_string(dir.path().join(io::MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().count(), 5);
    }

    #[test]
    fn bad_spec_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never");
        let mut s = spec(&out);
        s.snapshots = vec![41];
        assert_eq!(run_synth(&s).unwrap_err().exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn csv_rows_align_with_records() {
        let dir = tempfile::tempdir().unwrap();
        let synth_out = dir.path().join("synth");
        let (_, records) = run_synth(&spec(&synth_out)).unwrap();

        // Streaming the same signals from disk with the first N rows as warm-up
        // reproduces a solver started from those rows.
        let mut s = spec(&dir.path().join("csv"));
        s.source = DataSource::Csv { path: synth_out.join("signals.csv"), options: IngestOptions::default() };
        s.oracle = false;
        let summary = run_csv(&s).unwrap();
        assert_eq!(summary.steps, records.len());
        assert!(dir.path().join("csv/snapshot_t40.csv").exists());
    }
    #[test]
    fn temporal_deviation_spikes_at_the_change_point() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path());
        s.source = DataSource::Synthetic { scenario: Scenario::Piecewise, n: 10, horizon: 1000, density: None };
        s.solver = SolverConfig::for_variant(Variant::Pc, 1e-3, 1e-3);
        s.oracle = false;
        s.snapshots = vec![];
        let (_, records) = run_synth(&s).unwrap();
        let change = 500;
        let mut before: Vec<f64> = records[100..change].iter().map(|r| r.td).collect();
        before.sort_by(f64::total_cmp);
        let median = before[before.len() / 2];
        let spike = records[change..change + 10].iter().map(|r| r.td).fold(0.0, f64::max);
        assert!(spike > 5.0 * median, "spike {spike} vs median {median}");
    }
}

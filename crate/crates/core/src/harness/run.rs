//! Task pipelines and atomic result persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::acceptance::{validate_all, ValidationOptions};
use super::config::{ConfigError, InitialState, OperatorSpec, ScenarioConfig, TaskSpec};
use crate::bohm::{self, integrate_trajectories, sample_initial_positions, TrajectoryEnsemble, TrajectoryOptions};
use crate::intrinsics;
use crate::measure::{self, EstimatorMode, ProtocolConfig};
use crate::qgrid::{
    build_hamiltonian, expectation, propagate_frames, Evolution, Grid1D, SpectralOperator, WaveFunction,
};
use crate::weakval::{self, DwellOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Output files relative to the output directory, manifest excluded.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task {task}: {message}")]
    Numeric { task: String, message: String },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

type TaskResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// Files written into a hidden staging directory inside the output
/// directory and moved into place only when the whole task succeeds.
struct Staging {
    dir: tempfile::TempDir,
    files: Vec<String>,
}

impl Staging {
    fn new(out: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self { dir: tempfile::Builder::new().prefix(".partial-").tempdir_in(out)?, files: Vec::new() })
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.path().join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    fn commit(self, out: &Path, manifest: &RunManifest) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(manifest)? + "\n";
        std::fs::write(self.dir.path().join(MANIFEST_FILE), text)?;
        for name in self.files.iter().map(String::as_str).chain([MANIFEST_FILE]) {
            std::fs::rename(self.dir.path().join(name), out.join(name))?;
        }
        Ok(())
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Executes the task and writes its outputs plus `manifest.json` into
/// `out`. On error nothing is left behind.
pub fn run(config: &ScenarioConfig, out: &Path) -> Result<RunManifest, RunError> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ConfigError { violations }.into());
    }
    let start = Instant::now();
    let mut staging = Staging::new(out)?;
    let task = config.task.name().to_string();
    let metrics = execute(config, &mut staging).map_err(|e| match e.downcast::<std::io::Error>() {
        Ok(io) => RunError::Io(*io),
        Err(e) => RunError::Numeric { task: task.clone(), message: e.to_string() },
    })?;
    let manifest = RunManifest {
        task,
        config_hash: config.hash(),
        seed: config.ensemble.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: staging.files.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        metrics,
    };
    staging.commit(out, &manifest)?;
    Ok(manifest)
}

/// Default output directory for a task when none is given.
pub fn default_out_dir(task: &str) -> PathBuf {
    PathBuf::from("wvlab-out").join(task)
}

type Metrics = BTreeMap<String, serde_json::Value>;

fn put(m: &mut Metrics, key: &str, v: impl Serialize) {
    m.insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
}

/// Initial wavefunction on the configured grid.
pub fn initial_state(config: &ScenarioConfig) -> TaskResult<WaveFunction> {
    let grid = config.grid()?;
    let psi = match &config.initial_state {
        InitialState::Gaussian { center, width, momentum } => WaveFunction::gaussian(grid, *center, *width, *momentum)?,
        InitialState::Eigenstate { index } => {
            let h = hamiltonian(config, &grid)?;
            WaveFunction::new(grid, h.eigenfunction(*index)?, 0.0)?
        }
        InitialState::Superposition { components } => {
            let h = hamiltonian(config, &grid)?;
            let mut amps = vec![C64::new(0.0, 0.0); grid.len()];
            for c in components {
                let f = h.eigenfunction(c.index)?;
                let w = C64::new(c.re, c.im);
                for (a, v) in amps.iter_mut().zip(f) {
                    *a += w * v;
                }
            }
            let mut psi = WaveFunction::new(grid, amps, 0.0)?;
            psi.normalize()?;
            psi
        }
    };
    Ok(psi)
}

fn hamiltonian(config: &ScenarioConfig, grid: &Grid1D) -> TaskResult<SpectralOperator> {
    Ok(build_hamiltonian(grid, &config.potential, 0.0, &config.units, config.propagator.method.kinetic())?)
}

/// Operator on the configured grid; Hamiltonians are taken at `t = 0`.
pub fn operator(config: &ScenarioConfig, spec: &OperatorSpec) -> TaskResult<SpectralOperator> {
    let grid = config.grid()?;
    Ok(match spec {
        OperatorSpec::Position => SpectralOperator::position(grid),
        OperatorSpec::Momentum => SpectralOperator::momentum(grid, config.units),
        OperatorSpec::Hamiltonian { truncate } => {
            let h = hamiltonian(config, &grid)?;
            match truncate {
                Some(m) => h.truncated(*m),
                None => h,
            }
        }
        OperatorSpec::Window { a, b } => SpectralOperator::window(grid, *a, *b),
    })
}

fn evolve(config: &ScenarioConfig, psi: &WaveFunction) -> TaskResult<Evolution> {
    Ok(propagate_frames(psi, &config.potential, &config.units, &config.propagator, config.duration)?)
}

fn trajectories(
    config: &ScenarioConfig,
    psi: &WaveFunction,
    ev: &Evolution,
) -> TaskResult<(Vec<f64>, TrajectoryEnsemble)> {
    let starts = sample_initial_positions(psi, config.ensemble.n, config.ensemble.seed);
    let opts = TrajectoryOptions { substeps: config.ensemble.substeps, seed: config.ensemble.seed };
    let ens = integrate_trajectories(ev, &starts, opts)?;
    Ok((starts, ens))
}

fn execute(config: &ScenarioConfig, st: &mut Staging) -> TaskResult<Metrics> {
    let mut m = Metrics::new();
    if let TaskSpec::Validate { tolerance_scale, only } = &config.task {
        let opts = ValidationOptions {
            seed: config.ensemble.seed,
            tolerance_scale: tolerance_scale.clone(),
            only: only.clone(),
        };
        let report = validate_all(&opts);
        st.json("validation.json", &report)?;
        put(&mut m, "all_passed", report.all_passed);
        put(&mut m, "passed", report.criteria.iter().filter(|c| c.passed).count());
        put(&mut m, "criteria", report.criteria.len());
        return Ok(m);
    }
    let psi = initial_state(config)?;
    match &config.task {
        TaskSpec::Propagate => {
            let ev = evolve(config, &psi)?;
            let grid = *ev.grid();
            st.write("density.csv", |w| {
                write!(w, "x")?;
                for t in ev.times() {
                    write!(w, ",{}", fmt17(t))?;
                }
                writeln!(w)?;
                let rho: Vec<Vec<f64>> = ev.frames().iter().map(|f| f.density()).collect();
                for j in 0..grid.len() {
                    write!(w, "{}", fmt17(grid.x(j)))?;
                    for r in &rho {
                        write!(w, ",{}", fmt17(r[j]))?;
                    }
                    writeln!(w)?;
                }
                Ok(())
            })?;
            let kinetic = config.propagator.method.kinetic();
            let mut rows = Vec::with_capacity(ev.len());
            for f in ev.frames() {
                let h = build_hamiltonian(&grid, &config.potential, f.time(), &config.units, kinetic)?;
                rows.push((f.time(), f.norm_sqr(), expectation(&h, f)?));
            }
            st.write("norm.csv", |w| {
                writeln!(w, "t,norm,energy")?;
                for (t, n, e) in &rows {
                    writeln!(w, "{},{},{}", fmt17(*t), fmt17(*n), fmt17(*e))?;
                }
                Ok(())
            })?;
            let drift = rows.iter().map(|r| (r.1 - rows[0].1).abs()).fold(0.0, f64::max);
            put(&mut m, "frames", ev.len());
            put(&mut m, "max_norm_drift", drift);
            put(&mut m, "energy_initial", rows[0].2);
            put(&mut m, "energy_final", rows[rows.len() - 1].2);
        }
        TaskSpec::Trajectories { bins } => {
            let ev = evolve(config, &psi)?;
            let (_, ens) = trajectories(config, &psi, &ev)?;
            st.write("trajectories.csv", |w| ens.write_csv(w))?;
            let l1: Vec<f64> = (0..ev.len()).map(|k| bohm::equivariance_l1(&ens, &ev, k, *bins)).collect();
            st.write("equivariance.csv", |w| {
                writeln!(w, "t,l1")?;
                for (t, v) in ev.times().iter().zip(&l1) {
                    writeln!(w, "{},{}", fmt17(*t), fmt17(*v))?;
                }
                Ok(())
            })?;
            put(&mut m, "max_l1", l1.iter().copied().fold(0.0, f64::max));
            put(&mut m, "order_preserving", ens.is_order_preserving());
            put(&mut m, "truncated", ens.truncated_count());
        }
        TaskSpec::Weakvalue { operator: spec, frame_stride } => {
            let op = operator(config, spec)?;
            let ev = evolve(config, &psi)?;
            let grid = *ev.grid();
            let mut fields = Vec::new();
            for k in (0..ev.len()).step_by(*frame_stride) {
                fields.push((ev.frame(k).time(), weakval::WeakValueField::new(&op, ev.frame(k))?));
            }
            st.write("weakvalue.csv", |w| {
                writeln!(w, "t,x,re,im")?;
                for (t, f) in &fields {
                    for j in 0..grid.len() {
                        match f.value(j) {
                            Some(z) => {
                                writeln!(w, "{},{},{},{}", fmt17(*t), fmt17(grid.x(j)), fmt17(z.re), fmt17(z.im))?
                            }
                            None => writeln!(w, "{},{},,", fmt17(*t), fmt17(grid.x(j)))?,
                        }
                    }
                }
                Ok(())
            })?;
            let starts = sample_initial_positions(&psi, config.ensemble.n, config.ensemble.seed);
            let avg = weakval::ensemble_weak_average(&op, &psi, &starts)?;
            put(&mut m, "expectation", expectation(&op, &psi)?);
            put(&mut m, "quadrature_average", weakval::quadrature_weak_average(&op, &psi)?);
            put(&mut m, "ensemble_average", avg);
        }
        TaskSpec::Work { t1, t2 } => {
            let ev = evolve(config, &psi)?;
            let (_, ens) = trajectories(config, &psi, &ev)?;
            let records = intrinsics::work_ensemble(&ev, &ens.trajectories, *t1, *t2)?;
            let dist = intrinsics::work_distribution(&records)?;
            st.write("work_records.csv", |w| intrinsics::write_work_csv(&records, w))?;
            st.write("work_histogram.csv", |w| dist.write_csv(w))?;
            let h_at = |t: f64| -> TaskResult<f64> {
                let k = ev.frame_index(t).ok_or_else(|| format!("no frame at t = {t}"))?;
                let f = ev.frame(k);
                Ok(expectation(
                    &build_hamiltonian(ev.grid(), &config.potential, f.time(), &config.units, Default::default())?,
                    f,
                )?)
            };
            put(&mut m, "mean_work", dist.mean);
            put(&mut m, "stderr", dist.stderr);
            put(&mut m, "delta_h", h_at(*t2)? - h_at(*t1)?);
            put(&mut m, "flagged", dist.flagged);
        }
        TaskSpec::Dwell { region, require_exit, check_horizon } => {
            let region = (region[0], region[1]);
            let ev = evolve(config, &psi)?;
            let (starts, ens) = trajectories(config, &psi, &ev)?;
            let taus = intrinsics::dwell_times(&ens, region, *require_exit)?;
            let summary = intrinsics::dwell_time_ensemble(&ens, region, *require_exit)?;
            let density = intrinsics::dwell_time_density(&ev, region, *check_horizon)?;
            let opts = DwellOptions { check_horizon: *check_horizon, richardson: true };
            let field = weakval::dwell_operator_field(
                &psi,
                &config.potential,
                &config.units,
                region,
                config.duration,
                &config.propagator,
                opts,
            )?;
            let wv = field.at_many(&starts);
            st.write("dwell_times.csv", |w| {
                writeln!(w, "experiment_id,x0,tau,weak_value")?;
                for (i, ((x, tau), v)) in starts.iter().zip(&taus).zip(&wv).enumerate() {
                    let v = v.as_ref().map(|v| fmt17(*v)).unwrap_or_default();
                    writeln!(w, "{i},{},{},{v}", fmt17(*x), fmt17(*tau))?;
                }
                Ok(())
            })?;
            put(&mut m, "trajectory", summary);
            put(&mut m, "density", density);
            put(&mut m, "operator_quadrature", field.quadrature);
            put(&mut m, "operator_richardson_rel", field.richardson_rel);
            st.json("dwell_summary.json", &m)?;
        }
        TaskSpec::Psd { current, horizon, window } => {
            let ev = evolve(config, &psi)?;
            let (_, ens) = trajectories(config, &psi, &ev)?;
            let traces = intrinsics::current_traces(&ev, &ens, current)?;
            let spec = intrinsics::psd(&traces.clean(), ev.dt_out(), *horizon, *window)?;
            st.write("currents.csv", |w| traces.write_csv(w))?;
            st.write("psd.csv", |w| spec.write_csv(w))?;
            put(&mut m, "psd_at_zero", spec.value_at_zero());
            put(&mut m, "correlation_integral", spec.correlation_integral());
            put(&mut m, "flagged", traces.flagged);
        }
        TaskSpec::Measure { s, g, ancilla, second, post_selection, mode, joint } => {
            let cfg = ProtocolConfig {
                s: operator(config, s)?,
                g: operator(config, g)?,
                potential: config.potential.clone(),
                units: config.units,
                propagator: config.propagator,
                duration: config.duration,
                ancilla: *ancilla,
                second: *second,
                n: config.ensemble.n,
                seed: config.ensemble.seed,
            };
            let prep = measure::prepare(&psi, &cfg)?;
            let exact = measure::estimate_from_prepared(&prep, &cfg, *post_selection, EstimatorMode::Exact, false)?;
            let mut summary = Metrics::new();
            put(&mut summary, "post_selected_eigenvalue", prep.g_values[prep.atom_index(*post_selection)]);
            put(&mut summary, "exact", &exact);
            if *mode == EstimatorMode::MonteCarlo {
                let mc =
                    measure::estimate_from_prepared(&prep, &cfg, *post_selection, EstimatorMode::MonteCarlo, true)?;
                st.write("experiments.jsonl", |w| measure::write_experiment_log(&mc.log, w))?;
                put(&mut summary, "monte_carlo", &mc);
            }
            if *joint {
                let j = measure::joint_from_prepared(&prep, *second)?;
                put(&mut summary, "correlation", measure::two_time_correlation(&j));
                st.write("joint.csv", |w| j.write_csv(w))?;
            }
            st.json("estimator.json", &summary)?;
            m = summary;
        }
        TaskSpec::Validate { .. } => unreachable!("handled above"),
    }
    Ok(m)
}

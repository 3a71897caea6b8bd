//! Mode dispatch.

use std::path::{Path, PathBuf};

use freq_unravel::engine::{evolve_ordered_hierarchy, DecayRecord, HierarchyOptions};
use freq_unravel::grid::{make_grid, FrequencyGrid};
use freq_unravel::model::{preset, ModelSpec, EXCITED, GROUND, IDENTITY};
use freq_unravel::monte_carlo::{run_ensemble, EnsembleEstimate, TrialSetup};
use freq_unravel::numerics::{ComplexMatrix, ComplexVector, C64};
use freq_unravel::oracle::{
    emitted_photons, finite_tau_spectrum, integrate_master, reconstruct_density, spectral_tail,
    steady_state, truncation_bias, DensityMatrix, RecordOrdering, RECONSTRUCT_BUDGET,
};
use serde::Serialize;

use crate::config::{InitialState, Mode, RunConfig};
use crate::error::CliError;
use crate::output::{write_file, Table};
use crate::validate::run_validation;

/// Files written by a run.
#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
}

/// The model and initial state a run operates on.
pub struct Problem {
    pub model: ModelSpec,
    pub grid: FrequencyGrid,
    pub rho0: DensityMatrix,
}

impl Problem {
    pub fn new(config: &RunConfig) -> Result<Self, CliError> {
        let clean = preset(&config.model, config.omega_rabi)?;
        let rho0 = match config.initial {
            InitialState::Ground => DensityMatrix::pure(&ComplexVector::basis(clean.dim(), GROUND)),
            InitialState::Excited => {
                DensityMatrix::pure(&ComplexVector::basis(clean.dim(), EXCITED))
            }
            InitialState::Steady => steady_state(&clean)?,
        };
        clean.observable(&config.observable)?;
        clean.channel(config.channel)?;
        let model = if config.debug.nan_hamiltonian {
            let d = clean.dim();
            clean.with_raw_hamiltonian(ComplexMatrix::from_rows(&vec![
                vec![C64::new(f64::NAN, 0.0); d];
                d
            ]))
        } else {
            clean
        };
        Ok(Problem {
            model,
            grid: make_grid(config.tau, config.omega_max)?,
            rho0,
        })
    }

    /// The initial state as a vector, for modes that need a pure start.
    pub fn pure_initial(&self, mode: Mode) -> Result<ComplexVector, CliError> {
        let (values, vectors) = self.rho0.matrix().hermitian_eigen();
        let top = values.len() - 1;
        if (values[top] - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "initial: {mode} mode needs a pure initial state (ground or excited)"
            )));
        }
        Ok(vectors[top].clone())
    }
}

fn output_path(config: &RunConfig) -> PathBuf {
    config.output.clone().unwrap_or_else(|| {
        PathBuf::from(match config.mode {
            Mode::Validate => "validate.json".to_string(),
            m => format!("{m}.csv"),
        })
    })
}

/// `out.csv` → `out.<suffix>.csv`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let problem = Problem::new(config)?;
    let out = output_path(config);
    match config.mode {
        Mode::Trajectory => run_trajectory(config, &problem, &out),
        Mode::Ensemble => run_ensemble_mode(config, &problem, &out),
        Mode::Spectrum => run_spectrum(config, &problem, &out),
        Mode::Reconstruct => run_reconstruct(config, &problem, &out),
        Mode::Validate => {
            let report = run_validation(config, &problem)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&out, &(json + "\n"))?;
            if let Some(failed) = report.first_failure() {
                return Err(CliError::Validation(format!(
                    "{} of {} checks failed, first: {} (residual {:.3e} > bound {:.3e}); report in {}",
                    report.failures(),
                    report.checks.len(),
                    failed.name,
                    failed.residual,
                    failed.bound,
                    out.display()
                )));
            }
            Ok(RunOutcome { files: vec![out] })
        }
    }
}

fn run_trajectory(config: &RunConfig, p: &Problem, out: &Path) -> Result<RunOutcome, CliError> {
    let psi0 = p.pure_initial(config.mode)?;
    let record = DecayRecord::from_frequencies(config.record_pairs(), &p.model, &p.grid)?;
    let opts = HierarchyOptions {
        observables: vec![config.observable.clone()],
        ..Default::default()
    };
    let (series, _) = evolve_ordered_hierarchy(&p.model, &p.grid, &record, &psi0, config.dt, &opts)?;
    let mut header = vec!["t[1/Gamma]".to_string()];
    for k in 0..series.levels.len() {
        header.push(format!("norm_sqr_L{k}[1]"));
        header.push(format!("{}_L{k}[1]", config.observable));
    }
    let mut table = Table::new(header);
    for (i, &t) in series.times.iter().enumerate() {
        let mut row = vec![t];
        for level in &series.levels {
            row.push(level.norm_sqr[i]);
            row.push(level.values[0][i]);
        }
        table.push(row);
    }
    write_file(out, &table.to_csv())?;
    Ok(RunOutcome {
        files: vec![out.to_path_buf()],
    })
}

/// Runs the configured ensemble, with the spectrum when `spectrum` is set.
pub fn ensemble(config: &RunConfig, p: &Problem, spectrum: bool) -> Result<EnsembleEstimate, CliError> {
    let setup = TrialSetup::new(
        p.model.clone(),
        p.grid,
        &p.rho0,
        config.n_max,
        config.dt,
        spectrum.then_some(config.channel),
        &[config.observable.as_str()],
    )?;
    let acc = run_ensemble(
        &setup,
        config.n_trials,
        config.seed,
        &[config.observable.as_str(), IDENTITY],
    )?;
    Ok(acc.finalize()?)
}

fn run_ensemble_mode(config: &RunConfig, p: &Problem, out: &Path) -> Result<RunOutcome, CliError> {
    let est = ensemble(config, p, false)?;
    let obs = est.observable(&config.observable).expect("accumulated");
    let trace = est.observable(IDENTITY).expect("accumulated");
    let master = integrate_master(&p.model, &p.rho0, config.tau, config.dt)?;
    let exact = master.expect(p.model.observable(&config.observable)?);
    let bias = truncation_bias(&p.model, &p.grid, &p.rho0, config.n_max, config.dt)?;
    let o = &config.observable;
    let mut table = Table::new(vec![
        "t[1/Gamma]".into(),
        format!("{o}_mean[1]"),
        format!("{o}_stderr[1]"),
        "trace_mean[1]".into(),
        "trace_stderr[1]".into(),
        format!("{o}_master[1]"),
        "trace_bias_bound[1]".into(),
    ]);
    for (i, &t) in est.times.iter().enumerate() {
        table.push(vec![
            t,
            obs.mean[i],
            obs.stderr[i],
            trace.mean[i],
            trace.stderr[i],
            exact[i],
            bias.total(i),
        ]);
    }
    write_file(out, &table.to_csv())?;

    let levels = trace.level_mean.len();
    let mut header = vec!["t[1/Gamma]".to_string()];
    for k in 0..levels {
        header.push(format!("{o}_L{k}_mean[1]"));
        header.push(format!("{o}_L{k}_stderr[1]"));
        header.push(format!("trace_L{k}_mean[1]"));
        header.push(format!("trace_L{k}_stderr[1]"));
    }
    let mut per_level = Table::new(header);
    for (i, &t) in est.times.iter().enumerate() {
        let mut row = vec![t];
        for k in 0..levels {
            row.extend([
                obs.level_mean[k][i],
                obs.level_stderr[k][i],
                trace.level_mean[k][i],
                trace.level_stderr[k][i],
            ]);
        }
        per_level.push(row);
    }
    let levels_path = sibling(out, "levels");
    write_file(&levels_path, &per_level.to_csv())?;
    Ok(RunOutcome {
        files: vec![out.to_path_buf(), levels_path],
    })
}

fn run_spectrum(config: &RunConfig, p: &Problem, out: &Path) -> Result<RunOutcome, CliError> {
    let est = ensemble(config, p, true)?;
    let spec = est.spectrum.as_ref().expect("spectrum requested");
    let oracle = finite_tau_spectrum(
        &p.model,
        &p.rho0,
        config.tau,
        config.dt,
        config.channel,
        &spec.frequencies,
    )?;
    let mut table = Table::new(vec![
        "omega[Gamma]".into(),
        "S_sim[photons]".into(),
        "S_sim_stderr[photons]".into(),
        "S_oracle[photons]".into(),
    ]);
    for (i, &w) in spec.frequencies.iter().enumerate() {
        table.push(vec![w, spec.mean[i], spec.stderr[i], oracle[i]]);
    }
    write_file(out, &table.to_csv())?;

    let tail = spectral_tail(&p.model, &p.rho0, &p.grid, config.dt, config.channel)?;
    let bias = truncation_bias(&p.model, &p.grid, &p.rho0, config.n_max, config.dt)?;
    let summary = SpectrumSummary {
        trials: est.count,
        photons: emitted_photons(&p.model, &p.rho0, config.tau, config.dt, config.channel)?,
        sum_sim: spec.total_mean,
        sum_sim_stderr: spec.total_stderr,
        sum_oracle: oracle.iter().sum(),
        spectral_tail: tail,
        record_truncation: bias.photon_count(),
        sim_bound: tail + bias.photon_count() + 3.0 * spec.total_stderr,
        oracle_bound: ORACLE_TAIL_SLACK * tail + ORACLE_QUADRATURE,
    };
    let summary_path = sibling(out, "summary").with_extension("json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&summary_path, &(json + "\n"))?;
    Ok(RunOutcome {
        files: vec![out.to_path_buf(), summary_path],
    })
}

/// The oracle sum rule allows 5% error in the extrapolated tail plus a
/// fixed quadrature allowance.
pub const ORACLE_TAIL_SLACK: f64 = 1.05;
pub const ORACLE_QUADRATURE: f64 = 1e-3;

/// Sum rule `Σ_ω S(ω) = ∫₀^τ Tr(a†a ρ) dt` for a spectrum run.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub trials: u64,
    /// The right-hand side, from the master equation.
    pub photons: f64,
    pub sum_sim: f64,
    pub sum_sim_stderr: f64,
    pub sum_oracle: f64,
    /// Oracle spectral weight outside the grid.
    pub spectral_tail: f64,
    /// Photons lost with records that leave the grid.
    pub record_truncation: f64,
    /// Allowed `|sum_sim − photons|`.
    pub sim_bound: f64,
    /// Allowed `|sum_oracle − photons|`.
    pub oracle_bound: f64,
}

fn run_reconstruct(config: &RunConfig, p: &Problem, out: &Path) -> Result<RunOutcome, CliError> {
    let psi0 = p.pure_initial(config.mode)?;
    let cap = freq_unravel::engine::UNORDERED_CAP;
    if config.n_max > cap {
        return Err(CliError::Config(format!(
            "n_max: reconstruct mode evaluates unordered records, which are limited to {cap} decays"
        )));
    }
    let build = |mode| {
        reconstruct_density(&p.model, &p.grid, config.n_max, mode, &psi0, config.dt, RECONSTRUCT_BUDGET)
    };
    let ordered = build(RecordOrdering::Ordered)?;
    let unordered = build(RecordOrdering::Unordered)?;
    let master = integrate_master(&p.model, &p.rho0, config.tau, config.dt)?;
    let bias = truncation_bias(&p.model, &p.grid, &p.rho0, config.n_max, config.dt)?;

    let d = p.model.dim();
    let mut header = vec!["t[1/Gamma]".to_string()];
    for name in ["ordered", "unordered", "master"] {
        for r in 0..d {
            for c in r..d {
                header.push(format!("re_rho{r}{c}_{name}[1]"));
                header.push(format!("im_rho{r}{c}_{name}[1]"));
            }
        }
    }
    header.extend(
        [
            "trace_ordered[1]",
            "trace_unordered[1]",
            "max_err_ordered[1]",
            "max_err_unordered[1]",
            "truncation_bound[1]",
        ]
        .map(String::from),
    );
    let mut table = Table::new(header);
    for (i, &t) in master.times.iter().enumerate() {
        let mut row = vec![t];
        for rho in [&ordered.states[i], &unordered.states[i], &master.states[i]] {
            for r in 0..d {
                for c in r..d {
                    row.push(rho[(r, c)].re);
                    row.push(rho[(r, c)].im);
                }
            }
        }
        row.extend([
            ordered.states[i].trace().re,
            unordered.states[i].trace().re,
            ordered.states[i].max_abs_diff(&master.states[i]),
            unordered.states[i].max_abs_diff(&master.states[i]),
            bias.total(i),
        ]);
        table.push(row);
    }
    write_file(out, &table.to_csv())?;
    Ok(RunOutcome {
        files: vec![out.to_path_buf()],
    })
}

//! Invariant suite behind `validate` mode.

use serde::Serialize;

use freq_unravel::engine::{sum_identity_residual, DecayRecord};
use freq_unravel::grid::make_grid;
use freq_unravel::model::{EXCITED, IDENTITY};
use freq_unravel::numerics::{ComplexMatrix, ComplexVector};
use freq_unravel::oracle::{
    emitted_photons, finite_tau_spectrum, integrate_master, lindblad_rhs, liouvillian,
    reconstruct_density, spectral_tail, steady_state, truncation_bias, DensityMatrix,
    RecordOrdering, RECONSTRUCT_BUDGET,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{ensemble, Problem, ORACLE_QUADRATURE, ORACLE_TAIL_SLACK};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Mean trace contribution of each decay order at `τ`.
    pub trace_by_level: Vec<f64>,
    pub trace_stderr_by_level: Vec<f64>,
    pub mean_decays: f64,
    pub grid_bias: f64,
    pub decay_count_bias: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub diagnostics: Diagnostics,
    pub all_pass: bool,
}

impl Report {
    fn push(&mut self, name: &str, residual: f64, bound: f64, scale: f64) {
        let bound = bound * scale;
        self.checks.push(Check {
            name: name.to_string(),
            residual,
            bound,
            pass: residual <= bound,
        });
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// Reconstruction checks run on `[0, min(τ, 1)]` with at most this many
/// decays.
const RECONSTRUCT_DECAYS: usize = 3;
/// Trials for the ensemble trace check.
const TRACE_TRIALS: u64 = 200;

pub fn run_validation(config: &RunConfig, p: &Problem) -> Result<Report, CliError> {
    let s = config.debug.bound_scale;
    let mut r = Report::default();
    let model = &p.model;

    let master = integrate_master(model, &p.rho0, config.tau, config.dt)?;
    let (mut trace, mut herm, mut neg): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for rho in &master.states {
        trace = trace.max((rho.trace().re - 1.0).abs());
        herm = herm.max(rho.max_abs_diff(&rho.adjoint()));
        neg = neg.max(-rho.min_hermitian_eigenvalue());
    }
    r.push("master_trace", trace, 1e-8, s);
    r.push("master_hermiticity", herm, 1e-8, s);
    r.push("master_positivity", neg.max(0.0), 1e-8, s);

    let ss = steady_state(model)?;
    r.push("steady_state_residual", lindblad_rhs(model, ss.matrix()).max_abs(), 1e-10, s);
    let long = integrate_master(model, &ss_start(model.dim()), 50.0, config.dt)?;
    r.push(
        "steady_state_long_time",
        long.states.last().unwrap().max_abs_diff(ss.matrix()),
        1e-6,
        s,
    );

    // grid-sum identity from the excited state: O(1/omega_max) decay
    let excited = ComplexVector::basis(model.dim(), EXCITED);
    let coarse = make_grid(config.tau, config.omega_max)?;
    let fine = make_grid(config.tau, 2.0 * config.omega_max)?;
    let dt_fine = config.dt.min(RunConfig::dt_bound(2.0 * config.omega_max, config.omega_rabi));
    let r1 = sum_identity_residual(model, &coarse, &DecayRecord::empty(), config.channel, &excited, dt_fine)?;
    let r2 = sum_identity_residual(model, &fine, &DecayRecord::empty(), config.channel, &excited, dt_fine)?;
    r.push("identity_residual_halves", r2.residual, 0.75 * r1.residual + 1e-12, s);

    reconstruction_checks(config, p, &mut r)?;

    let tail = spectral_tail(model, &p.rho0, &p.grid, config.dt, config.channel)?;
    let spectrum = finite_tau_spectrum(
        model,
        &p.rho0,
        config.tau,
        config.dt,
        config.channel,
        &p.grid.frequencies(),
    )?;
    let photons = emitted_photons(model, &p.rho0, config.tau, config.dt, config.channel)?;
    r.push(
        "oracle_spectrum_sum_rule",
        (spectrum.iter().sum::<f64>() - photons).abs(),
        ORACLE_TAIL_SLACK * tail + ORACLE_QUADRATURE,
        s,
    );

    let mut small = config.clone();
    small.n_trials = config.n_trials.min(TRACE_TRIALS);
    let est = ensemble(&small, p, false)?;
    let bias = truncation_bias(model, &p.grid, &p.rho0, config.n_max, config.dt)?;
    let tr = est.observable(IDENTITY).expect("accumulated");
    let worst = (0..tr.mean.len())
        .map(|i| (tr.mean[i] - 1.0).abs() - (3.0 * tr.stderr[i] + bias.total(i)))
        .fold(f64::NEG_INFINITY, f64::max);
    // residual above the 3-SE-plus-bias envelope; passes when ≤ 0
    r.push("ensemble_trace_envelope", worst.max(0.0), 0.0, s);

    let last = tr.mean.len() - 1;
    r.diagnostics = Diagnostics {
        trace_by_level: tr.level_mean.iter().map(|l| l[last]).collect(),
        trace_stderr_by_level: tr.level_stderr.iter().map(|l| l[last]).collect(),
        mean_decays: bias.mean_decays[last],
        grid_bias: bias.grid[last],
        decay_count_bias: bias.decays[last],
    };
    r.all_pass = r.failures() == 0;
    Ok(r)
}

/// The long-time check starts from the ground state of the model.
fn ss_start(dim: usize) -> DensityMatrix {
    DensityMatrix::pure(&ComplexVector::basis(dim, 0))
}

fn reconstruction_checks(config: &RunConfig, p: &Problem, r: &mut Report) -> Result<(), CliError> {
    let s = config.debug.bound_scale;
    let model = &p.model;
    let psi0 = match p.pure_initial(config.mode) {
        Ok(v) => v,
        // mixed starts are covered by the ensemble checks only
        Err(_) => return Ok(()),
    };
    let short = config.tau.min(1.0);
    let grid = make_grid(short, config.omega_max).or_else(|_| make_grid(config.tau, config.omega_max))?;
    let tau = grid.tau();
    let n = config.n_max.min(RECONSTRUCT_DECAYS);
    let ordered =
        reconstruct_density(model, &grid, n, RecordOrdering::Ordered, &psi0, config.dt, RECONSTRUCT_BUDGET)?;
    let unordered =
        reconstruct_density(model, &grid, n, RecordOrdering::Unordered, &psi0, config.dt, RECONSTRUCT_BUDGET)?;
    let master = integrate_master(model, &p.rho0, tau, config.dt)?;
    let bias = truncation_bias(model, &grid, &p.rho0, n, config.dt)?;
    let bound = bias.max_total();

    r.push("reconstruct_ordered_vs_master", ordered.max_abs_diff(&master), bound, s);
    r.push("reconstruct_unordered_vs_master", unordered.max_abs_diff(&master), bound, s);
    r.push("reconstruct_ordered_vs_unordered", ordered.max_abs_diff(&unordered), bound, s);
    let trace = ordered
        .states
        .iter()
        .map(|m| (m.trace().re - 1.0).abs())
        .fold(0.0, f64::max);
    r.push("reconstruct_trace", trace, bound, s);

    let l_norm = liouvillian(model).norm();
    let h = ordered.times[1] - ordered.times[0];
    let k = ordered.times.len();
    let mut worst: f64 = 0.0;
    for i in [k / 4, k / 2, 3 * k / 4] {
        let fd: ComplexMatrix = (&ordered.states[i + 1] - &ordered.states[i - 1]).scale_real(0.5 / h);
        worst = worst.max(fd.max_abs_diff(&lindblad_rhs(model, &ordered.states[i])));
    }
    r.push("reconstruct_derivative", worst, l_norm * bound, s);
    Ok(())
}

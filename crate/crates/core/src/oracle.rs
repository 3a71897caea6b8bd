//! Brute-force references for every Monte Carlo estimate.
//!
//! Nothing in here samples. The master equation is integrated directly,
//! the steady state comes from a dense Liouvillian null-space solve, the
//! density operator is rebuilt by summing over every decay record on the
//! grid, and spectra follow from two-time correlations computed with the
//! quantum regression theorem. The record sum carries its own tree
//! integrator so that it does not share code paths with the trajectory
//! engine it is used to check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::DecayEvent;
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::model::{build_effective_hamiltonian, ModelSpec};
use crate::numerics::{
    matvec_add_into, matvec_into, ComplexMatrix, ComplexVector, Rk4, TimeGrid, C64, I, ONE, ZERO,
};

/// A density operator; see [`DensityMatrix::check`] for the invariants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix(pub ComplexMatrix);

impl DensityMatrix {
    pub fn pure(psi: &ComplexVector) -> Self {
        DensityMatrix(psi.outer())
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// `Tr(O ρ)`
    pub fn expect(&self, o: &ComplexMatrix) -> C64 {
        (o * &self.0).trace()
    }

    /// Hermitian within 1e-10, unit trace within 1e-8 and eigenvalues
    /// above −1e-8.
    pub fn check(&self) -> Result<()> {
        let herm = self.0.max_abs_diff(&self.0.adjoint());
        if herm > 1e-10 {
            return Err(Error::contract(format!("density matrix not Hermitian ({herm:.2e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::contract(format!("density matrix trace {tr} ≠ 1")));
        }
        let min = self.0.min_hermitian_eigenvalue();
        if min < -1e-8 {
            return Err(Error::contract(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

/// `dρ/dt = −i[H, ρ] + Σ_γ (a ρ a† − ½ a†a ρ − ½ ρ a†a)`
pub fn lindblad_rhs(model: &ModelSpec, rho: &ComplexMatrix) -> ComplexMatrix {
    let h = model.h_sys();
    let comm = &(h * rho) - &(rho * h);
    let mut out = comm.scale(-I);
    for ch in model.channels() {
        let a = &ch.operator;
        let ad = a.adjoint();
        let ada = &ad * a;
        let jump = &(a * rho) * &ad;
        let anti = &(&ada * rho) + &(rho * &ada);
        out = &out + &(&jump - &anti.scale_real(0.5));
    }
    out
}

fn matrix_from_slice(dim: usize, v: &[C64]) -> ComplexMatrix {
    let rows: Vec<Vec<C64>> = v.chunks(dim).map(|r| r.to_vec()).collect();
    ComplexMatrix::from_rows(&rows)
}

/// Density matrices at the sample times of a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySeries {
    pub times: Vec<f64>,
    pub states: Vec<ComplexMatrix>,
}

impl DensitySeries {
    pub fn at(&self, t: f64) -> &ComplexMatrix {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .expect("non-empty series");
        &self.states[i]
    }

    pub fn expect(&self, o: &ComplexMatrix) -> Vec<f64> {
        self.states.iter().map(|r| (o * r).trace().re).collect()
    }

    pub fn max_abs_diff(&self, other: &DensitySeries) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// RK4 integration of the master equation, sampled like the trajectory
/// engine. Fails with a validation error if trace, Hermiticity or
/// positivity drift by more than 1e-6.
pub fn integrate_master(
    model: &ModelSpec,
    rho0: &DensityMatrix,
    tau: f64,
    dt: f64,
) -> Result<DensitySeries> {
    rho0.check()?;
    let time = TimeGrid::new(tau, dt)?;
    let d = model.dim();
    let mut y = rho0.0.as_slice().to_vec();
    let mut rk = Rk4::new(y.len());
    let mut states = vec![rho0.0.clone()];
    for step in 0..time.steps {
        rk.step(
            |_, s, o| {
                let r = lindblad_rhs(model, &matrix_from_slice(d, s));
                o.copy_from_slice(r.as_slice());
            },
            &mut y,
            time.time(step),
            time.dt,
        )?;
        if time.is_sample(step + 1) {
            let rho = matrix_from_slice(d, &y);
            let t = time.time(step + 1);
            let drift = (rho.trace().re - 1.0)
                .abs()
                .max(rho.max_abs_diff(&rho.adjoint()))
                .max(-rho.min_hermitian_eigenvalue());
            if drift > 1e-6 {
                return Err(Error::Validation(format!(
                    "master equation invariants drifted by {drift:.3e} at t = {t}"
                )));
            }
            states.push(rho);
        }
    }
    Ok(DensitySeries {
        times: time.sample_times(),
        states,
    })
}

/// The Liouvillian as a `d² × d²` matrix acting on row-major `vec(ρ)`.
pub fn liouvillian(model: &ModelSpec) -> DMatrix<C64> {
    let d = model.dim();
    let n = d * d;
    let mut l = DMatrix::zeros(n, n);
    for col in 0..n {
        let basis = ComplexMatrix::basis_op(d, col / d, col % d);
        let image = lindblad_rhs(model, &basis);
        for (row, v) in image.as_slice().iter().enumerate() {
            l[(row, col)] = *v;
        }
    }
    l
}

/// Stationary state from the Liouvillian null space.
///
/// The null-space dimension is the number of singular values below
/// `1e-9·σ_max`; anything other than one is an error. The state is then
/// solved with one population equation replaced by `Tr ρ = 1`.
pub fn steady_state(model: &ModelSpec) -> Result<DensityMatrix> {
    let d = model.dim();
    let n = d * d;
    let l = liouvillian(model);
    let svd = l.clone().svd(false, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let null = svd
        .singular_values
        .iter()
        .filter(|&&s| s <= 1e-9 * smax.max(1e-300))
        .count();
    if null != 1 {
        return Err(Error::DegenerateSteadyState { dimension: null });
    }
    let mut a = l;
    let mut b = DVector::zeros(n);
    for c in 0..n {
        a[(0, c)] = ZERO;
    }
    for k in 0..d {
        a[(0, k * d + k)] = ONE;
    }
    b[0] = ONE;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical {
            time: f64::INFINITY,
            detail: "steady-state linear system is singular".into(),
        })?;
    let rho = matrix_from_slice(d, x.as_slice()).hermitian_part();
    let residual = lindblad_rhs(model, &rho).max_abs();
    if residual > 1e-10 {
        return Err(Error::Validation(format!(
            "steady-state residual {residual:.3e} exceeds 1e-10"
        )));
    }
    Ok(DensityMatrix(rho))
}

/// How record trajectories are combined into `ρ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordOrdering {
    Ordered,
    Unordered,
}

pub const RECONSTRUCT_BUDGET: usize = 1_000_000;

/// Deterministic `ρ(t) = Σ_n c_n Σ_{records} |ψ_record(t)⟩⟨ψ_record(t)|`
/// over every record of up to `n_max` decays on the grid, with `c_n = 1`
/// for ordered records and `1/n!` for unordered ones.
///
/// Records are lists of `(channel, grid index)` events; the list of length
/// `n` has index `Σ_i e_i K^{n−i}` within its level, with `K` events per
/// slot.
pub fn reconstruct_density(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    n_max: usize,
    mode: RecordOrdering,
    psi0: &ComplexVector,
    dt: f64,
    budget: usize,
) -> Result<DensitySeries> {
    let events: Vec<DecayEvent> = model
        .channels()
        .iter()
        .flat_map(|c| grid.indices().map(move |p| DecayEvent::new(c.id, p)))
        .collect();
    let k = events.len();
    let top = (k as f64).powi(n_max as i32);
    if top > budget as f64 {
        return Err(Error::config(format!(
            "record sum needs {k}^{n_max} = {top:.3e} terms, budget is {budget}; \
             use a smaller grid or n_max"
        )));
    }
    if psi0.dim() != model.dim() || (psi0.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::contract("initial state must be normalized"));
    }

    let d = model.dim();
    let time = TimeGrid::new(grid.tau(), dt)?;
    let heff = build_effective_hamiltonian(model).matrix;
    let scale = 1.0 / grid.tau().sqrt();
    let jumps: Vec<ComplexMatrix> = model
        .channels()
        .iter()
        .map(|c| c.operator.scale_real(scale))
        .collect();

    // level offsets and per-node detuning / last event / sources
    let mut offsets = vec![0usize];
    for n in 0..n_max {
        offsets.push(offsets[n] + k.pow(n as u32));
    }
    let total = offsets[n_max] + k.pow(n_max as u32);
    let mut detuning = vec![0.0; total];
    let mut sources: Vec<Vec<(usize, usize)>> = vec![Vec::new(); total];
    for n in 1..=n_max {
        for idx in 0..k.pow(n as u32) {
            let digits = digits_of(idx, k, n);
            let node = offsets[n] + idx;
            detuning[node] = digits.iter().map(|&e| grid.frequency(events[e].p)).sum();
            match mode {
                RecordOrdering::Ordered => {
                    let parent = offsets[n - 1] + idx / k;
                    sources[node].push((parent, events[digits[n - 1]].channel));
                }
                RecordOrdering::Unordered => {
                    for drop in 0..n {
                        let rest: Vec<usize> = digits
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != drop)
                            .map(|(_, &e)| e)
                            .collect();
                        let parent = offsets[n - 1] + index_of(&rest, k);
                        sources[node].push((parent, events[digits[drop]].channel));
                    }
                }
            }
        }
    }
    let level_weight: Vec<f64> = (0..=n_max)
        .map(|n| match mode {
            RecordOrdering::Ordered => 1.0,
            RecordOrdering::Unordered => 1.0 / (1..=n).map(|x| x as f64).product::<f64>(),
        })
        .collect();
    let level_of = |node: usize| offsets.iter().rposition(|&o| o <= node).unwrap();

    let rhs = |y: &[C64], out: &mut [C64]| {
        for node in 0..total {
            let yi = &y[node * d..(node + 1) * d];
            let oi = &mut out[node * d..(node + 1) * d];
            matvec_into(&heff, yi, oi);
            for (o, a) in oi.iter_mut().zip(yi) {
                *o = -I * (*o + a * detuning[node]);
            }
            for &(src, ch) in &sources[node] {
                matvec_add_into(&jumps[ch], &y[src * d..(src + 1) * d], ONE, oi);
            }
        }
    };
    let density = |y: &[C64]| {
        let mut rho = ComplexMatrix::zeros(d);
        for node in 0..total {
            let w = level_weight[level_of(node)];
            let v = &y[node * d..(node + 1) * d];
            for r in 0..d {
                for c in 0..d {
                    rho[(r, c)] += v[r] * v[c].conj() * w;
                }
            }
        }
        rho
    };

    let mut y = vec![ZERO; total * d];
    y[..d].copy_from_slice(psi0.as_slice());
    let mut rk = Rk4::new(y.len());
    let mut states = vec![density(&y)];
    for step in 0..time.steps {
        rk.step(|_, s, o| rhs(s, o), &mut y, time.time(step), time.dt)?;
        if time.is_sample(step + 1) {
            states.push(density(&y));
        }
    }
    Ok(DensitySeries {
        times: time.sample_times(),
        states,
    })
}

fn digits_of(mut idx: usize, base: usize, len: usize) -> Vec<usize> {
    let mut digits = vec![0; len];
    for slot in (0..len).rev() {
        digits[slot] = idx % base;
        idx /= base;
    }
    digits
}

fn index_of(digits: &[usize], base: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * base + d)
}

/// `C(s, s′) = ⟨a†(s) a(s′)⟩` on a uniform square grid over `[0, τ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGrid {
    pub times: Vec<f64>,
    /// Row-major: `values[i·N + j] = C(times[i], times[j])`.
    pub values: Vec<C64>,
}

impl CorrelationGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.len() + j]
    }

    pub fn hermitian_residual(&self) -> f64 {
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.get(j, i) - self.get(i, j).conj()).norm());
            }
        }
        worst
    }

    /// `S(ω) = (1/τ) ∫∫ e^{−iω(s−s′)} C(s, s′) ds ds′` by the 2-D
    /// trapezoid rule; negative round-off is clamped to zero.
    pub fn spectrum(&self, omega: f64) -> f64 {
        let n = self.len();
        let tau = self.times[n - 1] - self.times[0];
        let h = tau / (n - 1) as f64;
        let u: Vec<C64> = self
            .times
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
                C64::from_polar(w, omega * s)
            })
            .collect();
        let mut acc = ZERO;
        for i in 0..n {
            let row: C64 = (0..n).map(|j| self.get(i, j) * u[j]).sum();
            acc += u[i].conj() * row;
        }
        (acc.re / tau).max(0.0)
    }
}

/// Default correlation-grid spacing in integration steps. Coarser grids
/// under-resolve `e^{−iωs}` beyond the grid edge, which the spectral tail
/// depends on.
pub const CORRELATION_STRIDE: usize = 2;

/// Two-time correlation of `channel` by the quantum regression theorem:
/// for `s ≥ s′`, `C(s, s′) = Tr[a† Λ_{s−s′}(a ρ(s′))]`; the other half
/// follows from `C(s′, s) = conj C(s, s′)`.
///
/// The grid has spacing `stride·dt'`, with `dt' ≤ dt` chosen so the grid
/// divides `τ` exactly.
pub fn two_time_correlation(
    model: &ModelSpec,
    rho_init: &DensityMatrix,
    tau: f64,
    dt: f64,
    channel: usize,
    stride: usize,
) -> Result<CorrelationGrid> {
    rho_init.check()?;
    if stride == 0 {
        return Err(Error::config("correlation stride must be at least one step"));
    }
    let coarse = TimeGrid::new(tau, dt * stride as f64)?.steps;
    let h = tau / coarse as f64;
    let fine = h / stride as f64;
    let d = model.dim();
    let a = &model.channel(channel)?.operator;
    let ad = a.adjoint();
    let times: Vec<f64> = (0..=coarse).map(|i| if i == coarse { tau } else { i as f64 * h }).collect();

    let mut rk = Rk4::new(d * d);
    let mut advance = |m: &mut Vec<C64>, t0: f64| -> Result<()> {
        for k in 0..stride {
            rk.step(
                |_, s, o| {
                    let r = lindblad_rhs(model, &matrix_from_slice(d, s));
                    o.copy_from_slice(r.as_slice());
                },
                m,
                t0 + k as f64 * fine,
                fine,
            )?;
        }
        Ok(())
    };

    let n = coarse + 1;
    let mut values = vec![ZERO; n * n];
    let mut rho = rho_init.0.as_slice().to_vec();
    for j in 0..n {
        let mut b = (a * &matrix_from_slice(d, &rho)).as_slice().to_vec();
        values[j * n + j] = (&ad * &matrix_from_slice(d, &b)).trace();
        for i in (j + 1)..n {
            advance(&mut b, times[i - 1])?;
            let c = (&ad * &matrix_from_slice(d, &b)).trace();
            values[i * n + j] = c;
            values[j * n + i] = c.conj();
        }
        if j + 1 < n {
            advance(&mut rho, times[j])?;
        }
    }
    Ok(CorrelationGrid { times, values })
}

/// Finite-window fluorescence spectrum at each of `omegas`.
pub fn finite_tau_spectrum(
    model: &ModelSpec,
    rho_init: &DensityMatrix,
    tau: f64,
    dt: f64,
    channel: usize,
    omegas: &[f64],
) -> Result<Vec<f64>> {
    let c = two_time_correlation(model, rho_init, tau, dt, channel, CORRELATION_STRIDE)?;
    Ok(omegas.iter().map(|&w| c.spectrum(w)).collect())
}

/// `∫₀^τ Tr(a†a ρ(t)) dt` for one channel, by the trapezoid rule on the
/// master-equation samples.
pub fn emitted_photons(
    model: &ModelSpec,
    rho0: &DensityMatrix,
    tau: f64,
    dt: f64,
    channel: usize,
) -> Result<f64> {
    let a = &model.channel(channel)?.operator;
    let ada = &a.adjoint() * a;
    let series = integrate_master(model, rho0, tau, dt)?;
    let rate = series.expect(&ada);
    Ok(series
        .times
        .windows(2)
        .zip(rate.windows(2))
        .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
        .sum())
}

/// Spectral weight outside `grid`: `Σ_{|p| > p_max} S(ω_p)`.
///
/// Shells `p_max < |p| ≤ 3·p_max` are summed directly; the remainder
/// assumes the `1/ω²` fall-off of a finite window, using
/// `Σ_{|p|>Q} ω_p⁻² = τ/(π·edge_Q)`.
pub fn spectral_tail(
    model: &ModelSpec,
    rho_init: &DensityMatrix,
    grid: &FrequencyGrid,
    dt: f64,
    channel: usize,
) -> Result<f64> {
    let c = two_time_correlation(model, rho_init, grid.tau(), dt, channel, CORRELATION_STRIDE)?;
    let p = grid.p_max();
    let q = 3 * p;
    let mut tail = 0.0;
    for k in p + 1..=q {
        tail += c.spectrum(grid.frequency(k)) + c.spectrum(grid.frequency(-k));
    }
    let wq = grid.frequency(q);
    let edge_q = (q as f64 + 0.5) * grid.spacing();
    let outer = c.spectrum(wq) + c.spectrum(-wq);
    Ok(tail + outer * wq * wq * grid.tau() / (2.0 * PI * edge_q))
}

/// Reported bias of record sums truncated to `grid` and `n_max` decays,
/// per sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationBias {
    pub times: Vec<f64>,
    /// Mean number of decays emitted by each time, all channels.
    pub mean_decays: Vec<f64>,
    /// Frequency-cutoff part.
    pub grid: Vec<f64>,
    /// Decay-count part.
    pub decays: Vec<f64>,
}

impl TruncationBias {
    pub fn total(&self, sample: usize) -> f64 {
        self.grid[sample] + self.decays[sample]
    }

    pub fn max_total(&self) -> f64 {
        (0..self.times.len()).map(|i| self.total(i)).fold(0.0, f64::max)
    }

    /// Bias of a photon count summed over sampled records at `τ`.
    ///
    /// A record of `n` decays carries `n` photons and is lost with
    /// probability about `n` times the per-decay grid loss, so the count
    /// deficit is about `E[n(n−1)]` losses. Sub-Poissonian counting keeps
    /// that below `N̄²`, which `N̄·total` covers.
    pub fn photon_count(&self) -> f64 {
        let last = self.times.len() - 1;
        self.mean_decays[last] * self.total(last)
    }
}

/// Estimates the truncation bias from the master equation.
///
/// Each decay in a record, and the pending one, loses the grid tail
/// beyond the edge `(p_max + ½)·2π/τ`, worth about `γ/(π·edge)` for a
/// source of rate `γ`. The grid part is `(1 + N̄(t))·γ_max/(π·edge)`.
/// The decay-count part is the Poisson probability of more than `n_max`
/// decays at mean `N̄(t)`; resonance fluorescence is sub-Poissonian, so
/// this overstates it.
pub fn truncation_bias(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    rho0: &DensityMatrix,
    n_max: usize,
    dt: f64,
) -> Result<TruncationBias> {
    let series = integrate_master(model, rho0, grid.tau(), dt)?;
    let rate = series.expect(&model.total_decay_operator());
    let mut mean_decays = vec![0.0];
    for (t, r) in series.times.windows(2).zip(rate.windows(2)) {
        let last = *mean_decays.last().unwrap();
        mean_decays.push(last + 0.5 * (t[1] - t[0]) * (r[0] + r[1]));
    }
    let per_decay = model.max_decay_rate() / (PI * grid.edge());
    let grid_part = mean_decays.iter().map(|n| (1.0 + n) * per_decay).collect();
    let decays = mean_decays.iter().map(|&n| poisson_tail(n, n_max)).collect();
    Ok(TruncationBias {
        times: series.times,
        mean_decays,
        grid: grid_part,
        decays,
    })
}

/// `P(N > n)` for `N ~ Poisson(mean)`.
fn poisson_tail(mean: f64, n: usize) -> f64 {
    let mut term = (-mean).exp();
    let mut cdf = term;
    for k in 1..=n {
        term *= mean / k as f64;
        cdf += term;
    }
    (1.0 - cdf).max(0.0)
}

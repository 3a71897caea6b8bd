//! Frequency-record sampling and importance-weighted ensemble estimates.
//!
//! One trial draws an initial state, then repeatedly evolves the whole
//! candidate family for the next decay, records it, and picks one
//! candidate with probability proportional to its squared norm at `τ`.
//! A family of `n`-decay trajectories enters the estimate with weight
//! `1/P_traj`, the inverse probability that the sampler evaluated it:
//! unity for the zero- and one-decay families, `1/P(ω₁)` for the two-decay
//! family, and so on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    evolve_ordered_hierarchy, DecayEvent, DecayRecord, HierarchyOptions, SeriesBlock,
};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::model::{ModelSpec, IDENTITY};
use crate::numerics::ComplexVector;
use crate::oracle::DensityMatrix;

/// Branches whose total candidate norm at `τ` falls below this end the
/// trial.
pub const TERMINATION_THRESHOLD: f64 = 1e-12;

/// Per-trial random stream: ChaCha8 keyed by the master seed, with the
/// trial index as the stream id.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Probability of each candidate decay, proportional to its squared norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayDistribution {
    pub support: Vec<DecayEvent>,
    pub probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Outcome of normalizing the candidate norms.
#[derive(Clone, Debug, PartialEq)]
pub enum Branch {
    Continue(DecayDistribution),
    /// No further decay is possible from this branch.
    Terminated { norm_sum: f64 },
}

impl DecayDistribution {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Inverse-CDF draw; entries with zero probability are never chosen.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty support");
        let u: f64 = rng.random::<f64>() * total;
        match self.cumulative.iter().position(|&c| c > u) {
            Some(k) => k,
            None => self
                .probabilities
                .iter()
                .rposition(|&p| p > 0.0)
                .expect("some positive probability"),
        }
    }
}

/// Normalizes candidate squared norms into a sampling distribution.
pub fn decay_distribution(norms: &[(DecayEvent, f64)]) -> Result<Branch> {
    if let Some((ev, v)) = norms.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::contract(format!(
            "candidate {ev:?} has invalid squared norm {v}"
        )));
    }
    let total: f64 = norms.iter().map(|(_, v)| v).sum();
    if total < TERMINATION_THRESHOLD {
        return Ok(Branch::Terminated { norm_sum: total });
    }
    let mut cumulative = Vec::with_capacity(norms.len());
    let mut acc = 0.0;
    for (_, v) in norms {
        acc += v;
        cumulative.push(acc);
    }
    Ok(Branch::Continue(DecayDistribution {
        support: norms.iter().map(|(e, _)| *e).collect(),
        probabilities: norms.iter().map(|(_, v)| v / total).collect(),
        cumulative,
    }))
}

/// Eigen-decomposition of an initial density matrix, ready for drawing.
#[derive(Clone, Debug)]
pub struct InitialMixture {
    pub weights: Vec<f64>,
    pub states: Vec<ComplexVector>,
}

impl InitialMixture {
    pub fn new(rho0: &DensityMatrix) -> Result<Self> {
        let m = rho0.matrix();
        if !m.is_hermitian(1e-10) {
            return Err(Error::contract("initial density matrix is not Hermitian"));
        }
        if (m.trace().re - 1.0).abs() > 1e-10 {
            return Err(Error::contract(format!(
                "initial density matrix has trace {}",
                m.trace().re
            )));
        }
        let (values, vectors) = m.hermitian_eigen();
        if values[0] < -1e-10 {
            return Err(Error::contract(format!(
                "initial density matrix has negative eigenvalue {:.3e}",
                values[0]
            )));
        }
        let weights: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        Ok(InitialMixture {
            weights,
            states: vectors,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &ComplexVector {
        let total: f64 = self.weights.iter().sum();
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (w, s) in self.weights.iter().zip(&self.states) {
            acc += w;
            if *w > 0.0 && acc > u {
                return s;
            }
        }
        let last = self.weights.iter().rposition(|&w| w > 0.0).unwrap();
        &self.states[last]
    }
}

/// Draws an eigenvector of `rho0` with probability equal to its
/// eigenvalue.
pub fn sample_initial_state<R: Rng + ?Sized>(
    rho0: &DensityMatrix,
    rng: &mut R,
) -> Result<ComplexVector> {
    Ok(InitialMixture::new(rho0)?.sample(rng).clone())
}

/// Everything a trial needs, shared read-only across workers.
#[derive(Clone, Debug)]
pub struct TrialSetup {
    pub model: ModelSpec,
    pub grid: FrequencyGrid,
    pub initial: InitialMixture,
    pub n_max: usize,
    pub dt: f64,
    pub spectrum_channel: Option<usize>,
    /// Observables recorded per family; `"identity"` is always included.
    pub observables: Vec<String>,
}

impl TrialSetup {
    pub fn new(
        model: ModelSpec,
        grid: FrequencyGrid,
        rho0: &DensityMatrix,
        n_max: usize,
        dt: f64,
        spectrum_channel: Option<usize>,
        observables: &[&str],
    ) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::config("n_max must be at least 1"));
        }
        let mut names: Vec<String> = observables.iter().map(|s| s.to_string()).collect();
        if !names.iter().any(|n| n == IDENTITY) {
            names.push(IDENTITY.to_string());
        }
        for n in &names {
            model.observable(n)?;
        }
        if let Some(c) = spectrum_channel {
            model.channel(c)?;
        }
        Ok(TrialSetup {
            initial: InitialMixture::new(rho0)?,
            model,
            grid,
            n_max,
            dt,
            spectrum_channel,
            observables: names,
        })
    }
}

/// The `n`-decay family evaluated by one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFamily {
    pub level: usize,
    /// `1/P_traj`.
    pub weight: f64,
    /// Unweighted family sums per sample time.
    pub series: SeriesBlock,
    /// `‖ψ(τ)‖²` for each candidate (empty for the zero family).
    pub candidate_norms: Vec<f64>,
    /// Spectrum mode: `‖ψ^{(p)}(τ)‖²` per grid frequency, prefix of length
    /// `level − 1`.
    pub partial_norms: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: u64,
    pub initial_state: ComplexVector,
    pub record: DecayRecord,
    /// `P(ω_k)` of each sampled decay.
    pub probabilities: Vec<f64>,
    pub families: Vec<LevelFamily>,
    pub terminated: bool,
}

/// One pass of the sampler: draw `ψ(0)`, then for `n = 1..=n_max` evolve
/// the `n`-decay candidates of the current record, record them, and fix
/// the next frequency by its normalized weight at `τ`.
pub fn run_trial<R: Rng + ?Sized>(setup: &TrialSetup, index: u64, rng: &mut R) -> Result<TrialResult> {
    let psi0 = setup.initial.sample(rng).clone();
    let opts = HierarchyOptions {
        candidates: true,
        candidate_channel: None,
        spectrum_channel: setup.spectrum_channel,
        observables: setup.observables.clone(),
    };
    let mut record = DecayRecord::empty();
    let mut probabilities = Vec::new();
    let mut families = Vec::with_capacity(setup.n_max + 1);
    let mut p_traj = 1.0;
    let mut terminated = false;

    for n in 1..=setup.n_max {
        let (series, state) =
            evolve_ordered_hierarchy(&setup.model, &setup.grid, &record, &psi0, setup.dt, &opts)?;
        let mut levels = series.levels;
        if n == 1 {
            families.push(LevelFamily {
                level: 0,
                weight: 1.0,
                series: levels.swap_remove(0),
                candidate_norms: Vec::new(),
                partial_norms: None,
            });
        }
        families.push(LevelFamily {
            level: n,
            weight: 1.0 / p_traj,
            series: series.candidate_family.expect("candidates requested"),
            candidate_norms: series.candidate_norms.iter().map(|(_, v)| *v).collect(),
            partial_norms: setup
                .spectrum_channel
                .map(|_| state.top_partial_norms().into_iter().map(|(_, v)| v).collect()),
        });
        if n == setup.n_max {
            break;
        }
        match decay_distribution(&series.candidate_norms)? {
            Branch::Terminated { .. } => {
                terminated = true;
                break;
            }
            Branch::Continue(dist) => {
                let k = dist.sample(rng);
                record.push(dist.support[k]);
                probabilities.push(dist.probabilities[k]);
                p_traj *= dist.probabilities[k];
            }
        }
    }
    Ok(TrialResult {
        index,
        initial_state: psi0,
        record,
        probabilities,
        families,
        terminated,
    })
}

/// Runs trial `index` on its own stream, tagging failures with the seed.
pub fn run_seeded_trial(setup: &TrialSetup, seed: u64, index: u64) -> Result<TrialResult> {
    let mut rng = trial_rng(seed, index);
    run_trial(setup, index, &mut rng).map_err(|e| Error::Trial {
        seed,
        index,
        source: Box::new(e),
    })
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Moments {
    sum: Vec<CompensatedSum>,
    sum_sq: Vec<CompensatedSum>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Moments {
            sum: vec![CompensatedSum::default(); len],
            sum_sq: vec![CompensatedSum::default(); len],
        }
    }

    fn add(&mut self, xs: &[f64]) {
        for ((s, q), x) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(xs) {
            s.add(*x);
            q.add(x * x);
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            a.merge(b);
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            a.merge(b);
        }
    }

    fn finalize(&self, count: u64) -> (Vec<f64>, Vec<f64>) {
        let n = count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let mean = s.value() / n;
                let var = ((q.value() - n * mean * mean) / (n - 1.0)).max(0.0);
                (mean, (var / n).sqrt())
            })
            .unzip()
    }
}

/// Running sums of per-trial estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAccumulator {
    pub times: Vec<f64>,
    pub observables: Vec<String>,
    pub count: u64,
    levels: usize,
    /// `[observable]`: per-trial estimate at each sample time.
    totals: Vec<Moments>,
    /// `[observable][level]`: weighted family contribution per sample.
    per_level: Vec<Vec<Moments>>,
    spectrum_frequencies: Option<Vec<f64>>,
    spectrum: Option<Moments>,
    spectrum_per_level: Option<Vec<Moments>>,
}

impl EnsembleAccumulator {
    pub fn new(setup: &TrialSetup, times: Vec<f64>, observables: &[&str]) -> Result<Self> {
        for o in observables {
            if !setup.observables.iter().any(|n| n == o) {
                return Err(Error::config(format!(
                    "observable {o:?} is not recorded by the trials"
                )));
            }
        }
        let samples = times.len();
        let levels = setup.n_max + 1;
        let m = setup.grid.len();
        Ok(EnsembleAccumulator {
            times,
            observables: observables.iter().map(|s| s.to_string()).collect(),
            count: 0,
            levels,
            totals: vec![Moments::new(samples); observables.len()],
            per_level: vec![vec![Moments::new(samples); levels]; observables.len()],
            spectrum_frequencies: setup.spectrum_channel.map(|_| setup.grid.frequencies()),
            // one extra slot for the per-trial total
            spectrum: setup.spectrum_channel.map(|_| Moments::new(m + 1)),
            spectrum_per_level: setup.spectrum_channel.map(|_| vec![Moments::new(m + 1); levels]),
        })
    }

    /// Adds one trial's importance-weighted estimate.
    pub fn accumulate(&mut self, trial: &TrialResult, trial_observables: &[String]) -> Result<()> {
        let samples = self.times.len();
        for (k, name) in self.observables.iter().enumerate() {
            let idx = trial_observables
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(format!("unknown observable {name:?}")))?;
            let mut total = vec![0.0; samples];
            for fam in &trial.families {
                let contrib: Vec<f64> =
                    fam.series.values[idx].iter().map(|v| fam.weight * v).collect();
                for (t, c) in total.iter_mut().zip(&contrib) {
                    *t += c;
                }
                self.per_level[k][fam.level].add(&contrib);
            }
            // levels the trial never reached contribute zero
            let zeros = vec![0.0; samples];
            for level in 0..self.levels {
                if !trial.families.iter().any(|f| f.level == level) {
                    self.per_level[k][level].add(&zeros);
                }
            }
            self.totals[k].add(&total);
        }
        if let (Some(spec), Some(per_level)) =
            (self.spectrum.as_mut(), self.spectrum_per_level.as_mut())
        {
            let m = spec.sum.len();
            let mut total = vec![0.0; m];
            let mut seen = vec![false; self.levels];
            for fam in &trial.families {
                if let Some(norms) = &fam.partial_norms {
                    let mut contrib: Vec<f64> = norms.iter().map(|v| fam.weight * v).collect();
                    contrib.push(contrib.iter().sum());
                    for (t, c) in total.iter_mut().zip(&contrib) {
                        *t += c;
                    }
                    per_level[fam.level].add(&contrib);
                    seen[fam.level] = true;
                }
            }
            let zeros = vec![0.0; m];
            for (level, s) in seen.iter().enumerate() {
                if !s {
                    per_level[level].add(&zeros);
                }
            }
            spec.add(&total);
        }
        self.count += 1;
        Ok(())
    }

    /// Combines partial accumulators from independent workers.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if self.times != other.times || self.observables != other.observables {
            return Err(Error::contract("cannot merge accumulators of different runs"));
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            a.merge(b);
        }
        for (a, b) in self.per_level.iter_mut().zip(&other.per_level) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        if let (Some(a), Some(b)) = (self.spectrum.as_mut(), other.spectrum.as_ref()) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (
            self.spectrum_per_level.as_mut(),
            other.spectrum_per_level.as_ref(),
        ) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        self.count += other.count;
        Ok(())
    }

    /// Means and standard errors (`sample std / √count`).
    pub fn finalize(&self) -> Result<EnsembleEstimate> {
        if self.count < 2 {
            return Err(Error::config(format!(
                "need at least 2 trials to estimate errors, have {}",
                self.count
            )));
        }
        let observables = self
            .observables
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let (mean, stderr) = self.totals[k].finalize(self.count);
                let (level_mean, level_stderr) = self.per_level[k]
                    .iter()
                    .map(|m| m.finalize(self.count))
                    .unzip();
                ObservableEstimate {
                    name: name.clone(),
                    mean,
                    stderr,
                    level_mean,
                    level_stderr,
                }
            })
            .collect();
        let spectrum = match (&self.spectrum, &self.spectrum_per_level, &self.spectrum_frequencies) {
            (Some(s), Some(levels), Some(freqs)) => {
                let (mut mean, mut stderr) = s.finalize(self.count);
                let total_mean = mean.pop().expect("total slot");
                let total_stderr = stderr.pop().expect("total slot");
                let (level_mean, level_stderr) = levels
                    .iter()
                    .map(|m| {
                        let (mut mean, mut se) = m.finalize(self.count);
                        mean.pop();
                        se.pop();
                        (mean, se)
                    })
                    .unzip();
                Some(SpectrumEstimate {
                    frequencies: freqs.clone(),
                    mean,
                    stderr,
                    total_mean,
                    total_stderr,
                    level_mean,
                    level_stderr,
                })
            }
            _ => None,
        };
        Ok(EnsembleEstimate {
            count: self.count,
            times: self.times.clone(),
            observables,
            spectrum,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableEstimate {
    pub name: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `[level][sample]`: contribution of each decay order.
    pub level_mean: Vec<Vec<f64>>,
    pub level_stderr: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `Σ_ω S(ω)`, with its error taken over per-trial totals.
    pub total_mean: f64,
    pub total_stderr: f64,
    pub level_mean: Vec<Vec<f64>>,
    pub level_stderr: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub count: u64,
    pub times: Vec<f64>,
    pub observables: Vec<ObservableEstimate>,
    pub spectrum: Option<SpectrumEstimate>,
}

impl EnsembleEstimate {
    pub fn observable(&self, name: &str) -> Option<&ObservableEstimate> {
        self.observables.iter().find(|o| o.name == name)
    }
}

/// Trials are evaluated in parallel in fixed-size chunks and folded into
/// the accumulator in index order, so results do not depend on the
/// worker count.
pub const CHUNK: u64 = 64;

/// Runs trials `0..n_trials` of stream `seed` and accumulates
/// `observables` (plus the spectrum in spectrum mode).
pub fn run_ensemble(
    setup: &TrialSetup,
    n_trials: u64,
    seed: u64,
    observables: &[&str],
) -> Result<EnsembleAccumulator> {
    let times = crate::numerics::TimeGrid::new(setup.grid.tau(), setup.dt)?.sample_times();
    let mut acc = EnsembleAccumulator::new(setup, times, observables)?;
    let mut start = 0;
    while start < n_trials {
        let end = (start + CHUNK).min(n_trials);
        let trials: Vec<Result<TrialResult>> = (start..end)
            .into_par_iter()
            .map(|i| run_seeded_trial(setup, seed, i))
            .collect();
        for t in trials {
            acc.accumulate(&t?, &setup.observables)?;
        }
        start = end;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::{two_level_model, EXCITED, EXCITED_POPULATION, GROUND};
    use crate::numerics::ComplexMatrix;

    fn pure(i: usize) -> DensityMatrix {
        DensityMatrix::pure(&ComplexVector::basis(2, i))
    }

    #[test]
    fn uniform_and_single_distributions() {
        let evs: Vec<(DecayEvent, f64)> = (0..4).map(|p| (DecayEvent::new(0, p), 2.5)).collect();
        let Branch::Continue(d) = decay_distribution(&evs).unwrap() else { panic!() };
        assert!(d.probabilities.iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let mut one = evs.clone();
        for (k, e) in one.iter_mut().enumerate() {
            e.1 = if k == 2 { 0.3 } else { 0.0 };
        }
        let Branch::Continue(d) = decay_distribution(&one).unwrap() else { panic!() };
        assert_eq!(d.probabilities[2], 1.0);
        let mut rng = trial_rng(7, 0);
        assert!((0..100).all(|_| d.sample(&mut rng) == 2));
    }

    #[test]
    fn zero_norms_terminate() {
        let evs: Vec<(DecayEvent, f64)> = (0..3).map(|p| (DecayEvent::new(0, p), 0.0)).collect();
        assert_eq!(
            decay_distribution(&evs).unwrap(),
            Branch::Terminated { norm_sum: 0.0 }
        );
        let bad = vec![(DecayEvent::new(0, 0), -1.0)];
        assert!(matches!(decay_distribution(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn pure_initial_state_always_drawn() {
        let mut rng = trial_rng(1, 0);
        for _ in 0..100 {
            let psi = sample_initial_state(&pure(GROUND), &mut rng).unwrap();
            assert!((psi[GROUND].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maximally_mixed_draws() {
        let rho = DensityMatrix(ComplexMatrix::identity(2).scale_real(0.5));
        let mix = InitialMixture::new(&rho).unwrap();
        let mut rng = trial_rng(2, 0);
        let n = 10_000;
        let ground = (0..n)
            .filter(|_| mix.sample(&mut rng)[GROUND].norm() > 0.5)
            .count() as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((ground / n as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn non_positive_initial_state_rejected() {
        let rho = DensityMatrix(ComplexMatrix::from_real_rows(&[vec![1.5, 0.0], vec![0.0, -0.5]]));
        assert!(matches!(InitialMixture::new(&rho), Err(Error::Contract(_))));
    }

    #[test]
    fn dark_ground_state_terminates_immediately() {
        let setup = TrialSetup::new(
            two_level_model(0.0).unwrap(),
            make_grid(1.0, 13.0).unwrap(),
            &pure(GROUND),
            4,
            0.005,
            None,
            &[EXCITED_POPULATION],
        )
        .unwrap();
        let t = run_seeded_trial(&setup, 3, 0).unwrap();
        assert!(t.terminated);
        assert!(t.record.is_empty());
        assert_eq!(t.families.len(), 2);
        assert!(t.families[0].series.norm_sqr.iter().all(|&n| n == 1.0));
        assert!(t.families[1].series.norm_sqr.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn weights_follow_sampled_probabilities() {
        let setup = TrialSetup::new(
            two_level_model(6.0).unwrap(),
            make_grid(2.0, 10.0).unwrap(),
            &pure(GROUND),
            5,
            0.005,
            None,
            &[EXCITED_POPULATION],
        )
        .unwrap();
        for i in 0..8 {
            let t = run_seeded_trial(&setup, 11, i).unwrap();
            assert_eq!(t.families[0].weight, 1.0);
            assert_eq!(t.families[1].weight, 1.0);
            for f in &t.families[1..] {
                let p: f64 = t.probabilities[..f.level - 1].iter().product();
                assert_eq!(f.weight, 1.0 / p);
                assert!(f.weight >= 1.0);
            }
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let setup = TrialSetup::new(
            two_level_model(6.0).unwrap(),
            make_grid(4.0, 12.0).unwrap(),
            &pure(GROUND),
            3,
            0.005,
            Some(0),
            &[EXCITED_POPULATION],
        )
        .unwrap();
        let a = serde_json::to_string(&run_seeded_trial(&setup, 99, 5).unwrap()).unwrap();
        let b = serde_json::to_string(&run_seeded_trial(&setup, 99, 5).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&run_seeded_trial(&setup, 99, 6).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn finalize_needs_two_trials() {
        let setup = TrialSetup::new(
            two_level_model(0.0).unwrap(),
            make_grid(1.0, 13.0).unwrap(),
            &pure(GROUND),
            2,
            0.01,
            None,
            &[EXCITED_POPULATION],
        )
        .unwrap();
        let acc = run_ensemble(&setup, 0, 1, &[EXCITED_POPULATION]).unwrap();
        assert!(matches!(acc.finalize(), Err(Error::Config(_))));
        let acc = run_ensemble(&setup, 3, 1, &[EXCITED_POPULATION, IDENTITY]).unwrap();
        let est = acc.finalize().unwrap();
        // identical trials: no spread
        assert!(est.observables.iter().all(|o| o.stderr.iter().all(|&s| s == 0.0)));
        assert!(est.observable(EXCITED_POPULATION).unwrap().mean.iter().all(|&v| v == 0.0));
        let unknown = EnsembleAccumulator::new(&setup, acc.times.clone(), &["nope"]);
        assert!(unknown.is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn merge_matches_sequential() {
        let setup = TrialSetup::new(
            two_level_model(6.0).unwrap(),
            make_grid(1.0, 13.0).unwrap(),
            &pure(EXCITED),
            3,
            0.005,
            Some(0),
            &[EXCITED_POPULATION],
        )
        .unwrap();
        let times = crate::numerics::TimeGrid::new(1.0, 0.005).unwrap().sample_times();
        let trials: Vec<TrialResult> =
            (0..12).map(|i| run_seeded_trial(&setup, 5, i).unwrap()).collect();
        let names = [EXCITED_POPULATION, IDENTITY];
        let mut forward = EnsembleAccumulator::new(&setup, times.clone(), &names).unwrap();
        for t in &trials {
            forward.accumulate(t, &setup.observables).unwrap();
        }
        let mut a = EnsembleAccumulator::new(&setup, times.clone(), &names).unwrap();
        let mut b = EnsembleAccumulator::new(&setup, times, &names).unwrap();
        for t in trials.iter().rev() {
            if t.index % 2 == 0 {
                a.accumulate(t, &setup.observables).unwrap();
            } else {
                b.accumulate(t, &setup.observables).unwrap();
            }
        }
        b.merge(&a).unwrap();
        let f = forward.finalize().unwrap();
        let m = b.finalize().unwrap();
        for (x, y) in f.observables.iter().zip(&m.observables) {
            for (u, v) in x.mean.iter().zip(&y.mean) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        let (fs, ms) = (f.spectrum.unwrap(), m.spectrum.unwrap());
        for (u, v) in fs.mean.iter().zip(&ms.mean) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

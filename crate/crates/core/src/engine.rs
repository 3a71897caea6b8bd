//! Conditional wavefunctions for frequency-labeled decay records.
//!
//! Every object here is a node of one linear ODE system over `[0, τ]`:
//!
//! ```text
//! dψ_node/dt = Σ_sources (a_γ/√τ) ψ_source − i (H_eff + ν_node) ψ_node
//! ```
//!
//! where `ν_node` is the sum of the frequencies the node is conditioned on.
//! The zero-decay state is the only node with a nonzero initial value; all
//! other nodes start from the vacuum. The ordered chain, the candidate
//! family for the next decay, the partially ordered states used for
//! spectra and the unordered subset states are all built from this one
//! node type and integrated in lockstep with a single RK4 pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::model::{build_effective_hamiltonian, ModelSpec};
use crate::numerics::{
    expectation_slice, matvec_add_into, matvec_into, norm_sqr, ComplexMatrix, ComplexVector,
    Rk4, TimeGrid, C64, I, ZERO,
};

/// One decay: a channel id and a grid index (frequency `2πp/τ`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecayEvent {
    pub channel: usize,
    pub p: i64,
}

impl DecayEvent {
    pub fn new(channel: usize, p: i64) -> Self {
        DecayEvent { channel, p }
    }

    pub fn frequency(&self, grid: &FrequencyGrid) -> f64 {
        grid.frequency(self.p)
    }
}

/// An ordered list of decays conditioning a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecayRecord {
    events: Vec<DecayEvent>,
}

impl DecayRecord {
    pub fn empty() -> Self {
        DecayRecord::default()
    }

    /// Checks every channel against the model and every index against the
    /// grid.
    pub fn new(events: Vec<DecayEvent>, model: &ModelSpec, grid: &FrequencyGrid) -> Result<Self> {
        for e in &events {
            model.channel(e.channel)?;
            if !grid.contains_index(e.p) {
                return Err(Error::contract(format!(
                    "record frequency index {} outside the grid (|p| ≤ {})",
                    e.p,
                    grid.p_max()
                )));
            }
        }
        Ok(DecayRecord { events })
    }

    /// Builds a record from `(channel, frequency)` pairs, each frequency
    /// snapped to its grid index.
    pub fn from_frequencies(
        pairs: &[(usize, f64)],
        model: &ModelSpec,
        grid: &FrequencyGrid,
    ) -> Result<Self> {
        let events = pairs
            .iter()
            .map(|&(c, w)| Ok(DecayEvent::new(c, grid.index_of(w)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(events, model, grid)
    }

    pub fn events(&self) -> &[DecayEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub(crate) fn push(&mut self, event: DecayEvent) {
        self.events.push(event);
    }

    /// Sum of the frequencies of the first `k` events.
    pub fn detuning(&self, grid: &FrequencyGrid, k: usize) -> f64 {
        self.events[..k].iter().map(|e| e.frequency(grid)).sum()
    }
}

#[derive(Clone, Debug)]
struct Node {
    detuning: f64,
    sources: Vec<(usize, usize)>,
}

/// The linear system shared by every hierarchy.
#[derive(Clone, Debug)]
pub(crate) struct LinearHierarchy {
    dim: usize,
    heff: ComplexMatrix,
    /// `a_γ/√τ`, indexed by channel id.
    jumps: Vec<ComplexMatrix>,
    nodes: Vec<Node>,
}

impl LinearHierarchy {
    fn new(model: &ModelSpec, tau: f64) -> Self {
        let scale = 1.0 / tau.sqrt();
        LinearHierarchy {
            dim: model.dim(),
            heff: build_effective_hamiltonian(model).matrix,
            jumps: model
                .channels()
                .iter()
                .map(|ch| ch.operator.scale_real(scale))
                .collect(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, detuning: f64, sources: Vec<(usize, usize)>) -> usize {
        debug_assert!(sources.iter().all(|&(s, _)| s < self.nodes.len()));
        self.nodes.push(Node { detuning, sources });
        self.nodes.len() - 1
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    fn rhs(&self, y: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for (i, node) in self.nodes.iter().enumerate() {
            let yi = &y[i * d..(i + 1) * d];
            let oi = &mut out[i * d..(i + 1) * d];
            matvec_into(&self.heff, yi, oi);
            for (o, a) in oi.iter_mut().zip(yi) {
                *o = -I * (*o + a * node.detuning);
            }
            for &(src, ch) in &node.sources {
                matvec_add_into(&self.jumps[ch], &y[src * d..(src + 1) * d], C64::new(1.0, 0.0), oi);
            }
        }
    }

    /// Integrates from `init` over the time grid, calling `on_sample` at
    /// every sample step (including `t = 0` and `t = τ`).
    fn integrate<F>(&self, init: Vec<C64>, time: &TimeGrid, mut on_sample: F) -> Result<Vec<C64>>
    where
        F: FnMut(usize, &[C64]),
    {
        assert_eq!(init.len(), self.len() * self.dim);
        let mut y = init;
        let mut rk = Rk4::new(y.len());
        let mut sample = 0;
        on_sample(sample, &y);
        for step in 0..time.steps {
            rk.step(|_, s, o| self.rhs(s, o), &mut y, time.time(step), time.dt)?;
            if time.is_sample(step + 1) {
                sample += 1;
                on_sample(sample, &y);
            }
        }
        Ok(y)
    }

    /// Crude bound on `‖dψ/dt‖ / max‖ψ‖` for the whole system.
    pub(crate) fn rate_bound(&self) -> f64 {
        let nu = self.nodes.iter().map(|n| n.detuning.abs()).fold(0.0, f64::max);
        let max_sources = self.nodes.iter().map(|n| n.sources.len()).max().unwrap_or(0);
        let jump = self.jumps.iter().map(|j| j.frobenius_norm()).fold(0.0, f64::max);
        self.heff.frobenius_norm() + nu + max_sources as f64 * jump
    }
}

fn check_initial_state(model: &ModelSpec, psi0: &ComplexVector) -> Result<()> {
    if psi0.dim() != model.dim() {
        return Err(Error::contract(format!(
            "initial state has dimension {}, model has {}",
            psi0.dim(),
            model.dim()
        )));
    }
    if !psi0.is_finite() || (psi0.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "initial state must be normalized within 1e-9 (‖ψ‖² = {})",
            psi0.norm_sqr()
        )));
    }
    Ok(())
}

fn block(y: &[C64], node: usize, d: usize) -> &[C64] {
    &y[node * d..(node + 1) * d]
}

/// Scalars recorded for one state (or one summed family) at each sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesBlock {
    pub norm_sqr: Vec<f64>,
    /// `values[observable][sample]`, real part of `⟨ψ|O|ψ⟩`.
    pub values: Vec<Vec<f64>>,
}

impl SeriesBlock {
    fn new(observables: usize, samples: usize) -> Self {
        SeriesBlock {
            norm_sqr: vec![0.0; samples],
            values: vec![vec![0.0; samples]; observables],
        }
    }
}

/// Sampled output of one hierarchy integration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTimeSeries {
    pub times: Vec<f64>,
    pub observables: Vec<String>,
    /// One block per ordered chain level `0..=record.len()`.
    pub levels: Vec<SeriesBlock>,
    /// Sums over the whole candidate family, when candidates were evolved.
    pub candidate_family: Option<SeriesBlock>,
    /// `‖ψ_candidate(τ)‖²`, in candidate order.
    pub candidate_norms: Vec<(DecayEvent, f64)>,
}

/// All conditional states at `t = τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyState {
    /// `chain[k]` is conditioned on the first `k` record events.
    pub chain: Vec<ComplexVector>,
    /// One state per (channel, grid index) for the pending decay.
    pub candidates: Vec<(DecayEvent, ComplexVector)>,
    /// Per spectrum grid index: partially ordered states for prefix
    /// lengths `0..=record.len()`.
    pub partials: Vec<(i64, Vec<ComplexVector>)>,
}

impl HierarchyState {
    /// `‖ψ^{(p)}(τ)‖²` with the full record as prefix, per grid index.
    pub fn top_partial_norms(&self) -> Vec<(i64, f64)> {
        self.partials
            .iter()
            .map(|(p, states)| (*p, states.last().map_or(0.0, |s| s.norm_sqr())))
            .collect()
    }
}

/// What to evolve besides the ordered chain.
#[derive(Clone, Debug, Default)]
pub struct HierarchyOptions {
    /// Evolve one candidate per (channel, grid frequency) for the next decay.
    pub candidates: bool,
    /// Restrict candidates to a single channel.
    pub candidate_channel: Option<usize>,
    /// Evolve partially ordered states for this spectrum channel.
    pub spectrum_channel: Option<usize>,
    /// Observables recorded at every sample, by name.
    pub observables: Vec<String>,
}

impl HierarchyOptions {
    pub fn with_candidates(observables: &[&str]) -> Self {
        HierarchyOptions {
            candidates: true,
            observables: observables.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }
}

struct Layout {
    chain: Vec<usize>,
    candidates: Vec<(DecayEvent, usize)>,
    partials: Vec<(i64, Vec<usize>)>,
}

fn build_ordered(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    record: &DecayRecord,
    opts: &HierarchyOptions,
) -> Result<(LinearHierarchy, Layout)> {
    DecayRecord::new(record.events.clone(), model, grid)?;
    let mut h = LinearHierarchy::new(model, grid.tau());
    let n = record.len();

    let mut chain = Vec::with_capacity(n + 1);
    chain.push(h.push(0.0, vec![]));
    for k in 1..=n {
        let ev = record.events[k - 1];
        let node = h.push(record.detuning(grid, k), vec![(chain[k - 1], ev.channel)]);
        chain.push(node);
    }
    let top = chain[n];
    let top_detuning = record.detuning(grid, n);

    let mut candidates = Vec::new();
    if opts.candidates {
        let channels: Vec<usize> = match opts.candidate_channel {
            Some(c) => vec![model.channel(c)?.id],
            None => model.channels().iter().map(|c| c.id).collect(),
        };
        for c in channels {
            for p in grid.indices() {
                let node = h.push(top_detuning + grid.frequency(p), vec![(top, c)]);
                candidates.push((DecayEvent::new(c, p), node));
            }
        }
    }

    let mut partials = Vec::new();
    if let Some(gamma) = opts.spectrum_channel {
        model.channel(gamma)?;
        for p in grid.indices() {
            let w = grid.frequency(p);
            let mut levels: Vec<usize> = Vec::with_capacity(n + 1);
            for m in 0..=n {
                let mut sources = vec![(chain[m], gamma)];
                if m >= 1 {
                    sources.push((levels[m - 1], record.events[m - 1].channel));
                }
                levels.push(h.push(record.detuning(grid, m) + w, sources));
            }
            partials.push((p, levels));
        }
    }

    Ok((
        h,
        Layout {
            chain,
            candidates,
            partials,
        },
    ))
}

fn resolve_observables(model: &ModelSpec, names: &[String]) -> Result<Vec<ComplexMatrix>> {
    names.iter().map(|n| model.observable(n).cloned()).collect()
}

/// Ordered chain for `record`, plus candidates for the next decay and
/// partially ordered spectrum states when requested by `opts`.
pub fn evolve_ordered_hierarchy(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    record: &DecayRecord,
    psi0: &ComplexVector,
    dt: f64,
    opts: &HierarchyOptions,
) -> Result<(TrajectoryTimeSeries, HierarchyState)> {
    check_initial_state(model, psi0)?;
    let time = TimeGrid::new(grid.tau(), dt)?;
    let (h, layout) = build_ordered(model, grid, record, opts)?;
    let obs = resolve_observables(model, &opts.observables)?;
    let d = model.dim();
    let samples = time.sample_count();

    let mut levels = vec![SeriesBlock::new(obs.len(), samples); layout.chain.len()];
    let mut family = opts.candidates.then(|| SeriesBlock::new(obs.len(), samples));

    let mut init = vec![ZERO; h.len() * d];
    init[..d].copy_from_slice(psi0.as_slice());

    let y = h.integrate(init, &time, |s, y| {
        for (level, &node) in levels.iter_mut().zip(&layout.chain) {
            let v = block(y, node, d);
            level.norm_sqr[s] = norm_sqr(v);
            for (k, o) in obs.iter().enumerate() {
                level.values[k][s] = expectation_slice(o, v).re;
            }
        }
        if let Some(fam) = family.as_mut() {
            for &(_, node) in &layout.candidates {
                let v = block(y, node, d);
                fam.norm_sqr[s] += norm_sqr(v);
                for (k, o) in obs.iter().enumerate() {
                    fam.values[k][s] += expectation_slice(o, v).re;
                }
            }
        }
    })?;

    let state_of = |node: usize| ComplexVector::from_vec(block(&y, node, d).to_vec());
    let state = HierarchyState {
        chain: layout.chain.iter().map(|&n| state_of(n)).collect(),
        candidates: layout
            .candidates
            .iter()
            .map(|&(ev, n)| (ev, state_of(n)))
            .collect(),
        partials: layout
            .partials
            .iter()
            .map(|(p, nodes)| (*p, nodes.iter().map(|&n| state_of(n)).collect()))
            .collect(),
    };
    let series = TrajectoryTimeSeries {
        times: time.sample_times(),
        observables: opts.observables.clone(),
        levels,
        candidate_family: family,
        candidate_norms: state
            .candidates
            .iter()
            .map(|(ev, v)| (*ev, v.norm_sqr()))
            .collect(),
    };
    Ok((series, state))
}

/// No-decay evolution `dψ/dt = −i H_eff ψ`; records the norm and every
/// model observable.
pub fn evolve_zero(
    model: &ModelSpec,
    psi0: &ComplexVector,
    tau: f64,
    dt: f64,
) -> Result<TrajectoryTimeSeries> {
    check_initial_state(model, psi0)?;
    let time = TimeGrid::new(tau, dt)?;
    let names: Vec<String> = model.observable_names().map(String::from).collect();
    let obs = resolve_observables(model, &names)?;
    let mut h = LinearHierarchy::new(model, tau);
    h.push(0.0, vec![]);
    let mut block0 = SeriesBlock::new(obs.len(), time.sample_count());
    h.integrate(psi0.as_slice().to_vec(), &time, |s, y| {
        block0.norm_sqr[s] = norm_sqr(y);
        for (k, o) in obs.iter().enumerate() {
            block0.values[k][s] = expectation_slice(o, y).re;
        }
    })?;
    Ok(TrajectoryTimeSeries {
        times: time.sample_times(),
        observables: names,
        levels: vec![block0],
        candidate_family: None,
        candidate_norms: Vec::new(),
    })
}

/// Default cap on the number of unordered decays (the system has `2ⁿ`
/// coupled states).
pub const UNORDERED_CAP: usize = 3;

/// States of the unordered hierarchy at `τ`, one per subset of the events.
#[derive(Clone, Debug, PartialEq)]
pub struct UnorderedStates {
    pub events: Vec<DecayEvent>,
    /// Indexed by subset bitmask: bit `j` set means `events[j]` is included.
    pub states: Vec<ComplexVector>,
}

impl UnorderedStates {
    /// The state conditioned on every event.
    pub fn full(&self) -> &ComplexVector {
        self.states.last().expect("at least the empty subset")
    }

    pub fn subset(&self, mask: usize) -> &ComplexVector {
        &self.states[mask]
    }
}

/// Unordered-record hierarchy: every subset `S` of `events` couples to
/// each `S∖{e}` through `a_{γ_e}/√τ`.
pub fn evolve_unordered(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    events: &[DecayEvent],
    psi0: &ComplexVector,
    dt: f64,
    cap: usize,
) -> Result<UnorderedStates> {
    if events.len() > cap {
        return Err(Error::config(format!(
            "unordered hierarchy with {} decays exceeds the cap of {cap} (cost grows as 2^n)",
            events.len()
        )));
    }
    check_initial_state(model, psi0)?;
    DecayRecord::new(events.to_vec(), model, grid)?;
    let time = TimeGrid::new(grid.tau(), dt)?;
    let mut h = LinearHierarchy::new(model, grid.tau());
    let subsets = 1usize << events.len();
    for mask in 0..subsets {
        let members = (0..events.len()).filter(|j| mask & (1 << j) != 0);
        let detuning = members.clone().map(|j| events[j].frequency(grid)).sum();
        let sources = members
            .map(|j| (mask & !(1 << j), events[j].channel))
            .collect();
        h.push(detuning, sources);
    }
    let d = model.dim();
    let mut init = vec![ZERO; subsets * d];
    init[..d].copy_from_slice(psi0.as_slice());
    let y = h.integrate(init, &time, |_, _| {})?;
    Ok(UnorderedStates {
        events: events.to_vec(),
        states: (0..subsets)
            .map(|m| ComplexVector::from_vec(block(&y, m, d).to_vec()))
            .collect(),
    })
}

/// Residuals of the grid-sum identity for the pending decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// `‖Σ_ω ψ_ω(τ) − (√τ/2)(a ψ_prev(τ) + E)‖`, where `E` is the wrapped
    /// `s = 0` endpoint contribution (see [`sum_identity_residual`]).
    pub residual: f64,
    /// `‖Σ_ω ψ_ω(τ) − (√τ/2) a ψ_prev(τ)‖` without the endpoint term.
    pub literal_residual: f64,
    /// `‖(√τ/2) E‖`.
    pub endpoint_term: f64,
    /// `‖(√τ/2) a ψ_prev(τ)‖`, for scale.
    pub reference: f64,
}

/// Checks `Σ_{ω∈grid} ψ_{…,ω}(τ) = (√τ/2) a_γ ψ_{…}(τ)` for the decay that
/// would follow `record` in `channel`.
///
/// On the discrete grid `Σ_p e^{−iω_p x}` is a Dirac comb with period `τ`,
/// so at `t = τ` it picks up both ends of `[0, τ]` with half weight. The
/// `s = τ` end gives the identity's right-hand side; the `s = 0` end adds
/// `(√τ/2)·E` where `E = e^{−i(H_eff+ν)τ} a_γ ψ_prev(0)`. `E` vanishes
/// unless the record is empty and `a_γ ψ(0) ≠ 0`.
pub fn sum_identity_residual(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    record: &DecayRecord,
    channel: usize,
    psi0: &ComplexVector,
    dt: f64,
) -> Result<IdentityResidual> {
    check_initial_state(model, psi0)?;
    let time = TimeGrid::new(grid.tau(), dt)?;
    let opts = HierarchyOptions {
        candidates: true,
        candidate_channel: Some(channel),
        ..Default::default()
    };
    let (mut h, layout) = build_ordered(model, grid, record, &opts)?;
    let n = record.len();
    let top = layout.chain[n];
    let endpoint = h.push(record.detuning(grid, n), vec![]);

    let d = model.dim();
    let op = &model.channel(channel)?.operator;
    let mut init = vec![ZERO; h.len() * d];
    init[..d].copy_from_slice(psi0.as_slice());
    if n == 0 {
        let mut e0 = vec![ZERO; d];
        matvec_into(op, psi0.as_slice(), &mut e0);
        init[endpoint * d..(endpoint + 1) * d].copy_from_slice(&e0);
    }
    let y = h.integrate(init, &time, |_, _| {})?;

    let mut sum = vec![ZERO; d];
    for &(_, node) in &layout.candidates {
        for (s, v) in sum.iter_mut().zip(block(&y, node, d)) {
            *s += v;
        }
    }
    let half = C64::new(grid.tau().sqrt() / 2.0, 0.0);
    let mut rhs = vec![ZERO; d];
    matvec_add_into(op, block(&y, top, d), half, &mut rhs);
    let ends: Vec<C64> = block(&y, endpoint, d).iter().map(|v| v * half).collect();

    let literal: Vec<C64> = sum.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let corrected: Vec<C64> = literal.iter().zip(&ends).map(|(a, b)| a - b).collect();
    Ok(IdentityResidual {
        residual: norm_sqr(&corrected).sqrt(),
        literal_residual: norm_sqr(&literal).sqrt(),
        endpoint_term: norm_sqr(&ends).sqrt(),
        reference: norm_sqr(&rhs).sqrt(),
    })
}

/// Closed-form `‖ψ_ω(τ)‖²` for the undriven atom starting excited:
/// `(Γ/τ)|(e^{(iω−Γ/2)τ} − 1)/(iω − Γ/2)|²` with Γ = 1.
pub fn undriven_one_decay_norm(omega: f64, tau: f64) -> f64 {
    let z = C64::new(-0.5, omega);
    ((z * tau).exp() - 1.0).norm_sqr() / z.norm_sqr() / tau
}

/// Upper bound used by continuity checks: the largest rate at which any
/// recorded scalar can change, per unit time.
pub fn continuity_rate(
    model: &ModelSpec,
    grid: &FrequencyGrid,
    record: &DecayRecord,
    opts: &HierarchyOptions,
) -> Result<f64> {
    let (h, _) = build_ordered(model, grid, record, opts)?;
    let obs = resolve_observables(model, &opts.observables)?;
    let obs_norm = obs.iter().map(|o| o.frobenius_norm()).fold(1.0, f64::max);
    Ok(2.0 * obs_norm * h.rate_bound())
}

//! Small dense complex linear algebra and a fixed-step RK4 integrator.
//!
//! Hilbert dimensions here are tiny (two for the worked examples), so
//! matrices are stored row-major in a flat `Vec` and every product is a
//! plain loop. Eigen-decompositions are delegated to `nalgebra`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// An unnormalized state vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVector(Vec<C64>);

impl ComplexVector {
    pub fn zeros(dim: usize) -> Self {
        ComplexVector(vec![ZERO; dim])
    }

    pub fn from_vec(amplitudes: Vec<C64>) -> Self {
        ComplexVector(amplitudes)
    }

    /// The computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dimension {dim}");
        let mut v = Self::zeros(dim);
        v.0[index] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &ComplexVector) -> C64 {
        assert_eq!(self.dim(), other.dim(), "inner product dimension mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&self, factor: C64) -> Self {
        ComplexVector(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.0)
    }

    /// `|self⟩⟨self|`
    pub fn outer(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d);
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] = self.0[r] * self.0[c].conj();
            }
        }
        m
    }
}

impl fmt::Debug for ComplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Index<usize> for ComplexVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ComplexVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.0[i]
    }
}

impl Add for &ComplexVector {
    type Output = ComplexVector;
    fn add(self, rhs: &ComplexVector) -> ComplexVector {
        assert_eq!(self.dim(), rhs.dim(), "vector dimension mismatch");
        ComplexVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ComplexVector {
    type Output = ComplexVector;
    fn sub(self, rhs: &ComplexVector) -> ComplexVector {
        assert_eq!(self.dim(), rhs.dim(), "vector dimension mismatch");
        ComplexVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

/// A square complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        ComplexMatrix {
            dim,
            entries: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from rows; panics unless the rows form a square.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let dim = rows.len();
        assert!(
            rows.iter().all(|r| r.len() == dim),
            "matrix rows must form a square"
        );
        ComplexMatrix {
            dim,
            entries: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Self {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// `|ket⟩⟨bra|` for basis indices.
    pub fn basis_op(dim: usize, ket: usize, bra: usize) -> Self {
        let mut m = Self::zeros(dim);
        m[(ket, bra)] = ONE;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.entries
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut m = Self::zeros(d);
        for r in 0..d {
            for c in 0..d {
                m[(c, r)] = self[(r, c)].conj();
            }
        }
        m
    }

    pub fn scale(&self, factor: C64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm; an upper bound on the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        norm_sqr(&self.entries).sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// `(M + M†)/2`
    pub fn hermitian_part(&self) -> Self {
        (self + &self.adjoint()).scale_real(0.5)
    }

    /// `(M − M†)/2`
    pub fn anti_hermitian_part(&self) -> Self {
        (self - &self.adjoint()).scale_real(0.5)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.entries)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        assert!(m.is_square(), "matrix must be square");
        let dim = m.nrows();
        let mut out = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                out[(r, c)] = m[(r, c)];
            }
        }
        out
    }

    /// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues
    /// and the matching normalized eigenvectors.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, Vec<ComplexVector>) {
        let eig = self.hermitian_part().to_nalgebra().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = order
            .iter()
            .map(|&k| ComplexVector(eig.eigenvectors.column(k).iter().copied().collect()))
            .collect();
        (values, vectors)
    }

    pub fn min_hermitian_eigenvalue(&self) -> f64 {
        self.hermitian_eigen().0[0]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[C64]> = self.entries.chunks(self.dim.max(1)).collect();
        f.debug_list().entries(rows).finish()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.entries[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.entries[r * self.dim + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        let d = self.dim;
        let mut out = ComplexMatrix::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                for c in 0..d {
                    out.entries[r * d + c] += a * rhs[(k, c)];
                }
            }
        }
        out
    }
}

/// Matrix-vector product. Panics on dimension mismatch.
pub fn matvec(m: &ComplexMatrix, v: &ComplexVector) -> ComplexVector {
    assert_eq!(m.dim(), v.dim(), "matvec dimension mismatch");
    let mut out = ComplexVector::zeros(v.dim());
    matvec_into(m, v.as_slice(), out.as_mut_slice());
    out
}

/// `out = M·v` on raw slices.
#[inline]
pub fn matvec_into(m: &ComplexMatrix, v: &[C64], out: &mut [C64]) {
    let d = m.dim;
    for (r, o) in out.iter_mut().enumerate().take(d) {
        *o = m.entries[r * d..(r + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// `out += factor·M·v` on raw slices.
#[inline]
pub fn matvec_add_into(m: &ComplexMatrix, v: &[C64], factor: C64, out: &mut [C64]) {
    let d = m.dim;
    for (r, o) in out.iter_mut().enumerate().take(d) {
        let acc: C64 = m.entries[r * d..(r + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
        *o += factor * acc;
    }
}

/// `⟨v|O|v⟩` on the unnormalized vector.
pub fn expectation(o: &ComplexMatrix, v: &ComplexVector) -> C64 {
    assert_eq!(o.dim(), v.dim(), "expectation dimension mismatch");
    expectation_slice(o, v.as_slice())
}

#[inline]
pub fn expectation_slice(o: &ComplexMatrix, v: &[C64]) -> C64 {
    let d = o.dim;
    let mut acc = ZERO;
    for r in 0..d {
        let row: C64 = o.entries[r * d..(r + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
        acc += v[r].conj() * row;
    }
    acc
}

#[inline]
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

pub fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|a| a.re.is_finite() && a.im.is_finite())
}

/// One classical RK4 step of `dy/dt = f(t, y)`.
///
/// `derivative(t, y, out)` writes `f(t, y)` into `out`. Returns the updated
/// state, or a numerical failure carrying `t + dt` if any entry is not
/// finite.
pub fn rk4_step<F>(derivative: F, state: &[C64], t: f64, dt: f64) -> Result<Vec<C64>>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let mut next = state.to_vec();
    Rk4::new(state.len()).step(derivative, &mut next, t, dt)?;
    Ok(next)
}

/// Reusable RK4 scratch space for a state of fixed length.
pub struct Rk4 {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    probe: Vec<C64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![ZERO; len],
            k2: vec![ZERO; len],
            k3: vec![ZERO; len],
            k4: vec![ZERO; len],
            probe: vec![ZERO; len],
        }
    }

    pub fn len(&self) -> usize {
        self.k1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k1.is_empty()
    }

    /// Advances `state` in place from `t` to `t + dt`.
    pub fn step<F>(&mut self, mut derivative: F, state: &mut [C64], t: f64, dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        assert_eq!(state.len(), self.len(), "RK4 workspace length mismatch");
        debug_assert!(dt > 0.0);
        let half = 0.5 * dt;

        derivative(t, state, &mut self.k1);
        for ((p, y), k) in self.probe.iter_mut().zip(state.iter()).zip(&self.k1) {
            *p = y + k * half;
        }
        derivative(t + half, &self.probe, &mut self.k2);
        for ((p, y), k) in self.probe.iter_mut().zip(state.iter()).zip(&self.k2) {
            *p = y + k * half;
        }
        derivative(t + half, &self.probe, &mut self.k3);
        for ((p, y), k) in self.probe.iter_mut().zip(state.iter()).zip(&self.k3) {
            *p = y + k * dt;
        }
        derivative(t + dt, &self.probe, &mut self.k4);

        let sixth = dt / 6.0;
        let mut finite = true;
        for (i, y) in state.iter_mut().enumerate() {
            *y += (self.k1[i] + (self.k2[i] + self.k3[i]) * 2.0 + self.k4[i]) * sixth;
            finite &= y.re.is_finite() && y.im.is_finite();
        }
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical {
                time: t + dt,
                detail: "non-finite state after RK4 step".into(),
            })
        }
    }
}

/// Fixed-step discretization of `[0, tau]` with output sampling.
///
/// The step count is `ceil(tau/dt)` and the step is shrunk to divide `tau`
/// exactly. Samples are taken every `ceil(steps/400)` steps, starting at
/// `t = 0` and always including `t = tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub tau: f64,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
}

pub const MAX_SAMPLES: usize = 400;

impl TimeGrid {
    pub fn new(tau: f64, dt: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("tau must be positive and finite, got {tau}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive and finite, got {dt}")));
        }
        let ratio = tau / dt;
        if ratio > 1e9 {
            return Err(Error::config(format!(
                "tau/dt = {ratio:.3e} steps exceeds the 1e9 step limit"
            )));
        }
        let steps = ((ratio - 1e-9).ceil() as usize).max(1);
        let stride = steps.div_ceil(MAX_SAMPLES).max(1);
        Ok(TimeGrid {
            tau,
            dt: tau / steps as f64,
            steps,
            stride,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.tau
        } else {
            step as f64 * self.dt
        }
    }

    pub fn is_sample(&self, step: usize) -> bool {
        step % self.stride == 0 || step == self.steps
    }

    pub fn sample_steps(&self) -> Vec<usize> {
        (0..=self.steps).filter(|&s| self.is_sample(s)).collect()
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.sample_steps().into_iter().map(|s| self.time(s)).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.steps / self.stride + 1 + usize::from(self.steps % self.stride != 0)
    }

    /// Index of the sample closest to `t`.
    pub fn nearest_sample(&self, t: f64) -> usize {
        let times = self.sample_times();
        let mut best = 0;
        for (i, s) in times.iter().enumerate() {
            if (s - t).abs() < (times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sigma_minus() -> ComplexMatrix {
        ComplexMatrix::basis_op(2, 0, 1)
    }

    #[test]
    fn rk4_scalar_decay() {
        let x = rk4_step(|_, y, out| out[0] = -y[0], &[ONE], 0.0, 0.1).unwrap();
        assert!((x[0].re - (-0.1f64).exp()).abs() < 1e-7);
        assert!((x[0].re - 0.904837).abs() < 1e-6);
    }

    #[test]
    fn rk4_unitary_norm_preserved() {
        // H = σx: dψ/dt = −iHψ
        let h = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let dt = 0.01;
        let mut psi = vec![ONE, ZERO];
        let mut rk = Rk4::new(2);
        for step in 0..100 {
            rk.step(
                |_, y, out| {
                    matvec_into(&h, y, out);
                    out.iter_mut().for_each(|o| *o *= -I);
                },
                &mut psi,
                step as f64 * dt,
                dt,
            )
            .unwrap();
        }
        // per-step drift is O(dt^5)
        assert!((norm_sqr(&psi) - 1.0).abs() < 100.0 * dt.powi(5));
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        // dx/dt = −x/2 on [0, 4]; reference from the analytic solution.
        let solve = |dt: f64| {
            let grid = TimeGrid::new(4.0, dt).unwrap();
            let mut y = vec![ONE];
            let mut rk = Rk4::new(1);
            for s in 0..grid.steps {
                rk.step(|_, y, out| out[0] = -0.5 * y[0], &mut y, grid.time(s), grid.dt)
                    .unwrap();
            }
            (y[0].re - (-2.0f64).exp()).abs()
        };
        let dts = [0.2, 0.1, 0.05];
        let errs: Vec<f64> = dts.iter().map(|&dt| solve(dt)).collect();
        let ratio = errs[1] / errs[2];
        assert!((ratio - 16.0).abs() < 0.2 * 16.0, "ratio {ratio}");
        // log-log slope
        let slope = (errs[0] / errs[2]).ln() / 4f64.ln();
        assert!((slope - 4.0).abs() < 0.8, "slope {slope}");
    }

    #[test]
    fn rk4_reports_nonfinite_time() {
        let err = rk4_step(|_, _, out| out[0] = C64::new(f64::NAN, 0.0), &[ONE], 1.5, 0.5)
            .unwrap_err();
        match err {
            Error::Numerical { time, .. } => assert_eq!(time, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lowering_operator_convention() {
        let e = ComplexVector::basis(2, 1);
        let g = ComplexVector::basis(2, 0);
        assert_eq!(matvec(&sigma_minus(), &e), g);
        assert_eq!(matvec(&sigma_minus(), &g), ComplexVector::zeros(2));
        assert_eq!(matvec(&ComplexMatrix::identity(2), &e), e);
    }

    #[test]
    fn expectation_unnormalized() {
        let v = ComplexVector::from_vec(vec![C64::new(0.3, 0.0), C64::new(0.0, 0.4)]);
        assert!((expectation(&ComplexMatrix::identity(2), &v).re - 0.25).abs() < 1e-15);
        let pe = &sigma_minus().adjoint() * &sigma_minus();
        assert_eq!(expectation(&pe, &ComplexVector::basis(2, 0)), ZERO);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn matvec_dimension_mismatch_panics() {
        matvec(&ComplexMatrix::identity(3), &ComplexVector::zeros(2));
    }

    #[test]
    fn time_grid_sampling() {
        let g = TimeGrid::new(1.0, 1.0 / 800.0).unwrap();
        assert_eq!(g.steps, 800);
        assert_eq!(g.stride, 2);
        let times = g.sample_times();
        assert_eq!(times.len(), g.sample_count());
        assert_eq!(*times.last().unwrap(), 1.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(times[g.nearest_sample(0.25)], 0.25);

        let odd = TimeGrid::new(1.0, 1.0 / 801.0).unwrap();
        let t = odd.sample_times();
        assert_eq!(t.len(), odd.sample_count());
        assert_eq!(*t.last().unwrap(), 1.0);
        assert!(TimeGrid::new(0.0, 0.1).is_err());
    }

    fn arb_c64() -> impl Strategy<Value = C64> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(re, im)| C64::new(re, im))
    }

    fn arb_matrix(d: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec(arb_c64(), d * d)
            .prop_map(move |e| ComplexMatrix { dim: d, entries: e })
    }

    fn arb_vector(d: usize) -> impl Strategy<Value = ComplexVector> {
        proptest::collection::vec(arb_c64(), d).prop_map(ComplexVector)
    }

    proptest! {
        #[test]
        fn adjoint_is_involution(m in arb_matrix(3)) {
            prop_assert_eq!(m.adjoint().adjoint(), m);
        }

        #[test]
        fn matvec_is_linear(
            m in arb_matrix(3), u in arb_vector(3), v in arb_vector(3),
            a in arb_c64(), b in arb_c64(),
        ) {
            let lhs = matvec(&m, &(&u.scale(a) + &v.scale(b)));
            let rhs = &matvec(&m, &u).scale(a) + &matvec(&m, &v).scale(b);
            let diff = (&lhs - &rhs).norm();
            prop_assert!(diff < 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn hermitian_expectation_is_real(m in arb_matrix(3), v in arb_vector(3)) {
            let h = m.hermitian_part();
            let e = expectation(&h, &v);
            prop_assert!(e.im.abs() <= 1e-12 * v.norm_sqr());
        }
    }
}

//! Discrete measurement frequencies for an interval `[0, τ]` and the
//! matching rectangular-window spectral kernel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequencies `ω_p = 2πp/τ` for `|p| ≤ p_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    tau: f64,
    omega_max: f64,
    p_max: i64,
}

impl FrequencyGrid {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The requested cutoff; grid members satisfy `|ω| ≤ omega_max`.
    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn p_max(&self) -> i64 {
        self.p_max
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.tau
    }

    pub fn len(&self) -> usize {
        (2 * self.p_max + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frequency(&self, p: i64) -> f64 {
        2.0 * PI * p as f64 / self.tau
    }

    /// Grid indices `−p_max..=p_max`.
    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        -self.p_max..=self.p_max
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.indices().map(|p| self.frequency(p)).collect()
    }

    pub fn contains_index(&self, p: i64) -> bool {
        p.abs() <= self.p_max
    }

    /// Position of index `p` in `frequencies()`.
    pub fn position(&self, p: i64) -> usize {
        debug_assert!(self.contains_index(p));
        (p + self.p_max) as usize
    }

    /// Maps a frequency onto its grid index, accepting only values within
    /// `1e-9` of a spacing from a member.
    pub fn index_of(&self, omega: f64) -> Result<i64> {
        let x = omega / self.spacing();
        let p = x.round();
        if (x - p).abs() > 1e-9 || !self.contains_index(p as i64) {
            return Err(Error::contract(format!(
                "frequency {omega} is not a member of the grid (spacing {}, |ω| ≤ {})",
                self.spacing(),
                self.frequency(self.p_max)
            )));
        }
        Ok(p as i64)
    }

    /// Midpoint between the outermost member and the first excluded one.
    pub fn edge(&self) -> f64 {
        (self.p_max as f64 + 0.5) * self.spacing()
    }

    /// Nominal bias of Σ-over-ω quantities from cutting the grid, for a
    /// source of total decay rate `rate`: `rate/(π·omega_max)`.
    pub fn truncation_bound(&self, rate: f64) -> f64 {
        rate / (PI * self.omega_max)
    }
}

/// Builds the grid with `p_max = floor(omega_max·τ/2π)`.
pub fn make_grid(tau: f64, omega_max: f64) -> Result<FrequencyGrid> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("tau must be positive, got {tau}")));
    }
    if !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(Error::config(format!("omega_max must be positive, got {omega_max}")));
    }
    let ratio = omega_max * tau / (2.0 * PI);
    // tolerate round-off when omega_max sits exactly on a grid member
    let p_max = (ratio * (1.0 + 1e-12)).floor();
    if p_max < 1.0 {
        return Err(Error::config(format!(
            "grid for tau = {tau}, omega_max = {omega_max} holds only ω = 0; \
             omega_max·tau must be at least 2π (got {:.4})",
            omega_max * tau
        )));
    }
    if p_max > 1e6 {
        return Err(Error::config(format!("grid with p_max = {p_max} is too large")));
    }
    Ok(FrequencyGrid {
        tau,
        omega_max,
        p_max: p_max as i64,
    })
}

/// `sinc(x) = sin(πx)/(πx)`, `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - (PI * x).powi(2) / 6.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Finite-window kernel `(τ/2π)·sinc²(ωτ/2π)`; a unit-mass density in ω.
pub fn sinc_window(omega: f64, tau: f64) -> f64 {
    let s = sinc(omega * tau / (2.0 * PI));
    tau / (2.0 * PI) * s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn long_window_grid() {
        let g = make_grid(4.0, 12.0).unwrap();
        assert!((g.spacing() - PI / 2.0).abs() < 1e-15);
        assert_eq!(g.p_max(), 7);
        assert_eq!(g.len(), 15);
        let f = g.frequencies();
        assert_eq!(f[g.position(0)], 0.0);
        assert_eq!(f[0], -f[f.len() - 1]);
    }

    #[test]
    fn short_window_grid() {
        let g = make_grid(1.0, 32.0).unwrap();
        assert!((g.spacing() - 2.0 * PI).abs() < 1e-15);
        assert_eq!(g.p_max(), 5);
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let err = make_grid(1.0, 6.0).unwrap_err();
        assert!(err.to_string().contains("omega_max"));
        assert!(make_grid(0.0, 6.0).is_err());
        assert!(make_grid(1.0, -1.0).is_err());
    }

    #[test]
    fn exact_cutoff_on_member() {
        // omega_max = 2·(4π) with tau = 0.5 sits exactly on p = 2
        let g = make_grid(0.5, 8.0 * PI).unwrap();
        assert_eq!(g.p_max(), 2);
    }

    #[test]
    fn index_lookup() {
        let g = make_grid(20.0 * PI, 9.5).unwrap();
        assert_eq!(g.index_of(3.0).unwrap(), 30);
        assert_eq!(g.index_of(-0.3).unwrap(), -3);
        assert!(g.index_of(0.25).is_err());
        assert!(g.index_of(12.0).is_err());
    }

    #[test]
    fn window_values() {
        assert!((sinc_window(0.0, 4.0) - 4.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(sinc_window(2.0 * PI / 4.0, 4.0) < 1e-30);
    }

    #[test]
    fn window_integrates_to_one() {
        // trapezoid over ω ∈ [−40π/τ, 40π/τ]
        let tau = 4.0;
        let half = 40.0 * PI / tau;
        let n = 200_000;
        let h = 2.0 * half / n as f64;
        let mut sum = 0.5 * (sinc_window(-half, tau) + sinc_window(half, tau));
        for k in 1..n {
            sum += sinc_window(-half + k as f64 * h, tau);
        }
        let mass = sum * h;
        assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
    }

    proptest! {
        #[test]
        fn grid_members_are_exact(tau in 0.2..50.0f64, wmax in 1.0..60.0f64) {
            prop_assume!(wmax * tau >= 2.0 * PI);
            let g = make_grid(tau, wmax).unwrap();
            prop_assert_eq!(g.len() as i64, 2 * g.p_max() + 1);
            for p in g.indices() {
                let w = g.frequency(p);
                prop_assert!((w - 2.0 * PI * p as f64 / tau).abs() <= 1e-15 * w.abs().max(1.0));
                prop_assert!(w.abs() <= wmax * (1.0 + 1e-12));
                prop_assert_eq!(g.frequency(p), -g.frequency(-p));
            }
        }

        #[test]
        fn window_even_bounded(w in -100.0..100.0f64, tau in 0.1..20.0f64) {
            let v = sinc_window(w, tau);
            prop_assert!(v >= 0.0);
            prop_assert!(v <= tau / (2.0 * PI) * (1.0 + 1e-12));
            prop_assert_eq!(v, sinc_window(-w, tau));
        }
    }
}

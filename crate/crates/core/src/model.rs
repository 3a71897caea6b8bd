//! Open-system models: a system Hamiltonian plus labeled decay channels.
//!
//! Units: ħ = 1 and Γ = 1. Jump operators carry their rate, so spontaneous
//! emission at rate Γ is the operator `√Γ σ⁻`. Basis convention for the
//! two-level atom: index 0 is the ground state, index 1 the excited state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64};

pub const GROUND: usize = 0;
pub const EXCITED: usize = 1;

pub const EXCITED_POPULATION: &str = "excited_population";
pub const IDENTITY: &str = "identity";

/// A decay channel γ with its jump operator `a_γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpChannel {
    pub id: usize,
    pub operator: ComplexMatrix,
}

/// Hamiltonian, jump channels and named observables of an open system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    dim: usize,
    h_sys: ComplexMatrix,
    channels: Vec<JumpChannel>,
    observables: BTreeMap<String, ComplexMatrix>,
}

impl ModelSpec {
    /// Validates and assembles a model. The `"identity"` observable is
    /// always added.
    pub fn new(
        h_sys: ComplexMatrix,
        channels: Vec<JumpChannel>,
        observables: BTreeMap<String, ComplexMatrix>,
    ) -> Result<Self> {
        let dim = h_sys.dim();
        if dim == 0 {
            return Err(Error::config("Hilbert dimension must be positive"));
        }
        if !h_sys.is_finite() {
            return Err(Error::config("system Hamiltonian has non-finite entries"));
        }
        if !h_sys.is_hermitian(1e-12) {
            return Err(Error::config("system Hamiltonian is not Hermitian within 1e-12"));
        }
        if channels.is_empty() {
            return Err(Error::config("a model needs at least one decay channel"));
        }
        for (k, ch) in channels.iter().enumerate() {
            if ch.id != k {
                return Err(Error::config(format!(
                    "channel ids must be 0..{}, found id {} at position {k}",
                    channels.len(),
                    ch.id
                )));
            }
            if ch.operator.dim() != dim {
                return Err(Error::config(format!(
                    "channel {} operator has dimension {}, model has {dim}",
                    ch.id,
                    ch.operator.dim()
                )));
            }
            if ch.operator.max_abs() == 0.0 {
                return Err(Error::config(format!("channel {} operator is zero", ch.id)));
            }
        }
        let mut observables = observables;
        for (name, op) in &observables {
            if op.dim() != dim {
                return Err(Error::config(format!(
                    "observable {name:?} has dimension {}, model has {dim}",
                    op.dim()
                )));
            }
        }
        observables
            .entry(IDENTITY.to_string())
            .or_insert_with(|| ComplexMatrix::identity(dim));
        Ok(ModelSpec {
            dim,
            h_sys,
            channels,
            observables,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_sys(&self) -> &ComplexMatrix {
        &self.h_sys
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn channel(&self, id: usize) -> Result<&JumpChannel> {
        self.channels
            .get(id)
            .ok_or_else(|| Error::contract(format!("unknown channel id {id}")))
    }

    pub fn observable(&self, name: &str) -> Result<&ComplexMatrix> {
        self.observables.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown observable {name:?}; known: {}",
                self.observables.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn observable_names(&self) -> impl Iterator<Item = &str> {
        self.observables.keys().map(String::as_str)
    }

    /// `Σ_γ a_γ† a_γ`
    pub fn total_decay_operator(&self) -> ComplexMatrix {
        self.channels
            .iter()
            .fold(ComplexMatrix::zeros(self.dim), |acc, ch| {
                &acc + &(&ch.operator.adjoint() * &ch.operator)
            })
    }

    /// Largest eigenvalue of `Σ_γ a_γ† a_γ`: the fastest total decay rate.
    pub fn max_decay_rate(&self) -> f64 {
        let (values, _) = self.total_decay_operator().hermitian_eigen();
        values.last().copied().unwrap_or(0.0).max(0.0)
    }

    /// Returns a copy with the system Hamiltonian replaced, skipping
    /// validation. Used to inject faults in tests of failure handling.
    #[doc(hidden)]
    pub fn with_raw_hamiltonian(&self, h_sys: ComplexMatrix) -> Self {
        ModelSpec {
            h_sys,
            ..self.clone()
        }
    }
}

/// The non-Hermitian generator of no-decay evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveHamiltonian {
    pub matrix: ComplexMatrix,
}

/// `H_eff = H_sys − (i/2) Σ_γ a_γ† a_γ`
pub fn build_effective_hamiltonian(model: &ModelSpec) -> EffectiveHamiltonian {
    effective_hamiltonian_from(model.h_sys(), model.channels())
}

pub(crate) fn effective_hamiltonian_from(
    h_sys: &ComplexMatrix,
    channels: &[JumpChannel],
) -> EffectiveHamiltonian {
    let dim = h_sys.dim();
    let decay = channels.iter().fold(ComplexMatrix::zeros(dim), |acc, ch| {
        &acc + &(&ch.operator.adjoint() * &ch.operator)
    });
    EffectiveHamiltonian {
        matrix: h_sys - &decay.scale(C64::new(0.0, 0.5)),
    }
}

/// `σ⁻ = |g⟩⟨e|`
pub fn sigma_minus() -> ComplexMatrix {
    ComplexMatrix::basis_op(2, GROUND, EXCITED)
}

/// `σ⁺ = |e⟩⟨g|`
pub fn sigma_plus() -> ComplexMatrix {
    ComplexMatrix::basis_op(2, EXCITED, GROUND)
}

/// Resonantly driven two-level atom: `H_sys = (Ω/2)(σ⁺ + σ⁻)` and one
/// spontaneous-emission channel `√Γ σ⁻` with Γ = 1.
pub fn two_level_model(omega_rabi: f64) -> Result<ModelSpec> {
    if !(omega_rabi >= 0.0 && omega_rabi.is_finite()) {
        return Err(Error::config(format!(
            "omega_rabi must be a finite non-negative frequency, got {omega_rabi}"
        )));
    }
    let h_sys = (&sigma_plus() + &sigma_minus()).scale_real(omega_rabi / 2.0);
    let channel = JumpChannel {
        id: 0,
        operator: sigma_minus(),
    };
    let mut observables = BTreeMap::new();
    observables.insert(
        EXCITED_POPULATION.to_string(),
        &sigma_plus() * &sigma_minus(),
    );
    ModelSpec::new(h_sys, vec![channel], observables)
}

/// Looks up a model preset by name.
pub fn preset(name: &str, omega_rabi: f64) -> Result<ModelSpec> {
    match name {
        "two_level" => two_level_model(omega_rabi),
        other => Err(Error::config(format!(
            "unknown model {other:?}; available presets: two_level"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{expectation, ComplexVector, ZERO};
    use proptest::prelude::*;

    #[test]
    fn empty_channel_sum_leaves_h_sys() {
        let h = ComplexMatrix::from_real_rows(&[vec![1.0, 0.5], vec![0.5, -1.0]]);
        let heff = effective_hamiltonian_from(&h, &[]);
        assert_eq!(heff.matrix, h);
        assert!(ModelSpec::new(h, vec![], BTreeMap::new()).is_err());
    }

    #[test]
    fn undriven_effective_hamiltonian() {
        let heff = build_effective_hamiltonian(&two_level_model(0.0).unwrap());
        let mut expected = ComplexMatrix::zeros(2);
        expected[(EXCITED, EXCITED)] = C64::new(0.0, -0.5);
        assert!(heff.matrix.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn driven_effective_hamiltonian() {
        let heff = build_effective_hamiltonian(&two_level_model(6.0).unwrap());
        assert_eq!(heff.matrix[(0, 1)], C64::new(3.0, 0.0));
        assert_eq!(heff.matrix[(1, 0)], C64::new(3.0, 0.0));
        assert_eq!(heff.matrix[(1, 1)], C64::new(0.0, -0.5));
        assert_eq!(heff.matrix[(0, 0)], ZERO);
    }

    #[test]
    fn two_level_preset() {
        let m = two_level_model(0.0).unwrap();
        assert_eq!(m.h_sys().max_abs(), 0.0);
        assert_eq!(m.channels()[0].operator, sigma_minus());
        let m6 = two_level_model(6.0).unwrap();
        assert_eq!(m6.h_sys()[(0, 1)].re, 3.0);
        assert_eq!(m6.h_sys()[(1, 0)].re, 3.0);
        let pe = m6.observable(EXCITED_POPULATION).unwrap();
        assert_eq!(expectation(pe, &ComplexVector::basis(2, EXCITED)).re, 1.0);
        assert!(m6.observable(IDENTITY).is_ok());
        assert!(matches!(m6.observable("nope"), Err(Error::Config(_))));
        assert!(matches!(two_level_model(-1.0), Err(Error::Config(_))));
        assert!(preset("three_level", 1.0).is_err());
    }

    #[test]
    fn rejects_non_hermitian_hamiltonian() {
        let h = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let ch = JumpChannel { id: 0, operator: sigma_minus() };
        assert!(ModelSpec::new(h, vec![ch], BTreeMap::new()).is_err());
    }

    proptest! {
        #[test]
        fn effective_hamiltonian_split(
            omega in 0.0..20.0f64,
            extra in proptest::collection::vec(-2.0..2.0f64, 8),
        ) {
            // a generic second channel on top of the preset
            let base = two_level_model(omega).unwrap();
            let op = ComplexMatrix::from_rows(&[
                vec![C64::new(extra[0], extra[1]), C64::new(extra[2], extra[3])],
                vec![C64::new(extra[4], extra[5]), C64::new(extra[6], extra[7]) + 1.0],
            ]);
            let mut channels = base.channels().to_vec();
            channels.push(JumpChannel { id: 1, operator: op });
            let model = ModelSpec::new(base.h_sys().clone(), channels, BTreeMap::new()).unwrap();
            let heff = build_effective_hamiltonian(&model).matrix;
            prop_assert!(heff.hermitian_part().max_abs_diff(model.h_sys()) < 1e-12);
            let expected = model.total_decay_operator().scale(C64::new(0.0, -0.5));
            prop_assert!(heff.anti_hermitian_part().max_abs_diff(&expected) < 1e-12);
            prop_assert!(model.total_decay_operator().min_hermitian_eigenvalue() >= -1e-12);
        }
    }
}

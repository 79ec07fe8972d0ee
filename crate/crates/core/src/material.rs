//! Uniaxial reduction of the anisotropic fatigue damage model.
//!
//! Under uniaxial compression the stress, strain and damage tensors collapse to
//! the axial stress, the axial strain `eps1`, the (equal) lateral strains
//! `eps2 = eps3` and the lateral damage `omega2 = omega3`. All functions here
//! are pure; [`step`] is the explicit integrator used by the simulator.
//!
//! Sign convention: compressive stress is carried as a positive magnitude
//! `sbar1 = -sigma1`, and `eps1` is reported as a compressive magnitude. With
//! this convention the lateral strain is non-negative and the elastic limit
//! reproduces `E = mu (3 lambda + 2 mu) / (lambda + mu)` and
//! `nu = lambda / (2 (lambda + mu))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which tangent quantity vanished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tangent {
    /// `D(omega2)`, the denominator of the lateral-strain solve.
    Denominator,
    /// `kappa`, the denominator of the damage law.
    Kappa,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaterialError {
    #[error("singular tangent ({which:?}) at omega2 = {omega2}")]
    SingularTangent { which: Tangent, omega2: f64 },
    #[error("invalid material parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Sign of the damage term in the threshold `k(omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSign {
    /// `k = C0 - 2 C1 omega2`: the threshold drops as damage grows.
    #[default]
    Softening,
    /// `k = C0 + 2 C1 omega2`: the threshold rises as damage grows.
    Hardening,
}

/// Bracketing of the damage-law denominator `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaGrouping {
    /// `(l+2m)[2(l+m) + 4(a+b)w - a g/(2C1) (2 e2 + e1) - g^2/(2C1)] - 2(l+a w)^2`
    #[default]
    Factored,
    /// `(l+2m)[2(l+m) + 4(a+b)w] - a g/(2C1) (2 e2 + e1) - g^2/(2C1) - 2(l+a w)^2`
    Literal,
}

/// Calibrated constants of the anisotropic damage model plus the compressive
/// strength used to turn load ratios into stresses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParameters {
    /// Lamé constant (MPa).
    pub lambda: f64,
    /// Lamé constant (MPa).
    pub mu: f64,
    /// Damage-strain coupling (MPa).
    pub g: f64,
    /// Rate normalisation of the damage law.
    pub k: f64,
    /// Initial threshold.
    pub c0: f64,
    /// Threshold slope; divisor of the damage law.
    pub c1: f64,
    /// Anisotropic coupling (MPa).
    pub alpha: f64,
    /// Anisotropic coupling (MPa).
    pub beta: f64,
    /// Damage-law exponent.
    pub n: i32,
    /// Compressive strength (MPa).
    pub fc: f64,
    pub threshold: ThresholdSign,
    pub kappa_grouping: KappaGrouping,
}

impl Default for MaterialParameters {
    fn default() -> Self {
        Self {
            lambda: 12500.0,
            mu: 18750.0,
            g: -10.0,
            k: 0.00485,
            c0: 0.0,
            c1: 0.0019,
            alpha: 2237.5,
            beta: -2116.5,
            n: 10,
            fc: 50.0,
            threshold: ThresholdSign::Softening,
            kappa_grouping: KappaGrouping::Factored,
        }
    }
}

impl MaterialParameters {
    pub fn validate(&self) -> Result<(), MaterialError> {
        fn bad(name: &'static str, reason: &str) -> Result<(), MaterialError> {
            Err(MaterialError::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        }
        let all = [
            self.lambda, self.mu, self.g, self.k, self.c0, self.c1, self.alpha, self.beta,
            self.fc,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("*", "all parameters must be finite");
        }
        if self.mu <= 0.0 {
            return bad("mu", "must be > 0");
        }
        if self.lambda < 0.0 {
            return bad("lambda", "must be >= 0");
        }
        if self.c1 <= 0.0 {
            return bad("c1", "must be > 0");
        }
        if self.k <= 0.0 {
            return bad("k", "must be > 0");
        }
        if self.n < 1 {
            return bad("n", "must be >= 1");
        }
        if self.g == 0.0 {
            return bad("g", "must be non-zero");
        }
        if self.fc <= 0.0 {
            return bad("fc", "must be > 0");
        }
        Ok(())
    }

    /// Young's modulus implied by the Lamé constants.
    pub fn young_modulus(&self) -> f64 {
        self.mu * (3.0 * self.lambda + 2.0 * self.mu) / (self.lambda + self.mu)
    }

    /// Poisson's ratio implied by the Lamé constants.
    pub fn poisson_ratio(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    /// Stress magnitude for a load ratio.
    pub fn stress(&self, ratio: f64) -> f64 {
        ratio * self.fc
    }
}

/// State of one simulated specimen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UniaxialState {
    pub omega2: f64,
    /// Axial strain, compressive magnitude.
    pub eps1: f64,
    pub eps2: f64,
    /// Compressive stress magnitude (MPa).
    pub sbar1: f64,
    pub cycles_completed: u64,
}

impl UniaxialState {
    pub fn pristine() -> Self {
        Self::default()
    }

    /// State at stress `sbar1` and damage `omega2` with consistent strains.
    pub fn at(p: &MaterialParameters, sbar1: f64, omega2: f64) -> Result<Self, MaterialError> {
        let eps2 = lateral_strain(p, sbar1, omega2)?;
        Ok(Self {
            omega2,
            eps1: axial_strain(p, sbar1, eps2, omega2),
            eps2,
            sbar1,
            cycles_completed: 0,
        })
    }
}

/// Denominator `D(omega2)` of the lateral-strain solve.
#[inline]
pub fn denominator(p: &MaterialParameters, omega2: f64) -> f64 {
    let a = p.lambda + p.alpha * omega2;
    (p.lambda + 2.0 * p.mu) * (2.0 * (p.lambda + p.mu) + 4.0 * (p.alpha + p.beta) * omega2)
        - 2.0 * a * a
}

/// Lateral strain from the zero lateral stress condition.
#[inline]
pub fn lateral_strain(
    p: &MaterialParameters,
    sbar1: f64,
    omega2: f64,
) -> Result<f64, MaterialError> {
    let d = denominator(p, omega2);
    if d <= 0.0 {
        return Err(MaterialError::SingularTangent {
            which: Tangent::Denominator,
            omega2,
        });
    }
    Ok(((p.lambda + p.alpha * omega2) * sbar1 + p.g.abs() * omega2 * (p.lambda + 2.0 * p.mu)) / d)
}

/// Axial strain (compressive magnitude) from the axial equilibrium.
#[inline]
pub fn axial_strain(p: &MaterialParameters, sbar1: f64, eps2: f64, omega2: f64) -> f64 {
    (sbar1 + 2.0 * (p.lambda + p.alpha * omega2) * eps2) / (p.lambda + 2.0 * p.mu)
}

/// Reduced yield function `f = |g| eps2 - k(omega2)`.
#[inline]
pub fn yield_value(p: &MaterialParameters, eps2: f64, omega2: f64) -> f64 {
    let threshold = match p.threshold {
        ThresholdSign::Softening => p.c0 - 2.0 * p.c1 * omega2,
        ThresholdSign::Hardening => p.c0 + 2.0 * p.c1 * omega2,
    };
    p.g.abs() * eps2 - threshold
}

/// Damage-law denominator. `eps1` is the compressive magnitude; the closed
/// form is written for the signed axial strain `-eps1`.
#[inline]
pub fn kappa(p: &MaterialParameters, eps1: f64, eps2: f64, omega2: f64) -> f64 {
    let stiff = p.lambda + 2.0 * p.mu;
    let a = p.lambda + p.alpha * omega2;
    let lateral = 2.0 * (p.lambda + p.mu) + 4.0 * (p.alpha + p.beta) * omega2;
    let coupling = p.alpha * p.g / (2.0 * p.c1) * (2.0 * eps2 - eps1);
    let g_term = p.g * p.g / (2.0 * p.c1);
    match p.kappa_grouping {
        KappaGrouping::Factored => stiff * (lateral - coupling - g_term) - 2.0 * a * a,
        KappaGrouping::Literal => stiff * lateral - coupling - g_term - 2.0 * a * a,
    }
}

/// Damage increment for a stress increment `dsbar1` applied at `state`.
///
/// Zero when unloading or below threshold; the yield value is clamped at zero
/// before the power so an even exponent cannot turn a negative `f` into growth.
#[inline]
pub fn damage_increment(
    p: &MaterialParameters,
    state: &UniaxialState,
    dsbar1: f64,
) -> Result<f64, MaterialError> {
    if dsbar1 <= 0.0 {
        return Ok(0.0);
    }
    let f = yield_value(p, state.eps2, state.omega2);
    if f <= 0.0 {
        return Ok(0.0);
    }
    let kap = kappa(p, state.eps1, state.eps2, state.omega2);
    if kap <= 0.0 {
        return Err(MaterialError::SingularTangent {
            which: Tangent::Kappa,
            omega2: state.omega2,
        });
    }
    let drive = ((p.lambda + p.alpha * state.omega2) / kap).max(0.0);
    Ok(p.g.abs() / (2.0 * p.c1) * (f / p.k).powi(p.n) * drive * dsbar1)
}

/// Advance the state linearly in stress to `sbar1_target` in `substeps`
/// increments.
///
/// Damage is explicit in `omega2`: each increment uses the damage at its start
/// and the strains at the increment's midpoint stress, which keeps the stress
/// quadrature second order while the damage update stays forward.
pub fn step(
    p: &MaterialParameters,
    state: &UniaxialState,
    sbar1_target: f64,
    substeps: usize,
) -> Result<UniaxialState, MaterialError> {
    let substeps = substeps.max(1);
    let mut next = *state;
    let ds = (sbar1_target - state.sbar1) / substeps as f64;
    if ds > 0.0 {
        let mut omega2 = state.omega2;
        for i in 0..substeps {
            let s_mid = state.sbar1 + (i as f64 + 0.5) * ds;
            let mid = UniaxialState::at(p, s_mid, omega2)?;
            omega2 += damage_increment(p, &mid, ds)?;
            if denominator(p, omega2) <= 0.0 {
                return Err(MaterialError::SingularTangent {
                    which: Tangent::Denominator,
                    omega2,
                });
            }
        }
        next.omega2 = omega2;
    }
    next.sbar1 = sbar1_target;
    next.eps2 = lateral_strain(p, sbar1_target, next.omega2)?;
    next.eps1 = axial_strain(p, sbar1_target, next.eps2, next.omega2);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> MaterialParameters {
        MaterialParameters::default()
    }

    #[test]
    fn defaults_match_calibration_table() {
        let p = table1();
        assert_eq!(
            (p.lambda, p.mu, p.g, p.k, p.c0, p.c1, p.alpha, p.beta, p.n),
            (12500.0, 18750.0, -10.0, 0.00485, 0.0, 0.0019, 2237.5, -2116.5, 10)
        );
        p.validate().unwrap();
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = table1();
        p.c1 = 0.0;
        assert!(p.validate().is_err());
        let mut p = table1();
        p.g = 0.0;
        assert!(p.validate().is_err());
        let mut p = table1();
        p.n = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn implied_elastic_constants() {
        let p = table1();
        assert_relative_eq!(p.young_modulus(), 45000.0, max_relative = 1e-15);
        assert_relative_eq!(p.poisson_ratio(), 0.2, max_relative = 1e-15);
    }

    #[test]
    fn lateral_strain_examples() {
        let p = table1();
        // elastic oracle: nu * s / E
        let e2 = lateral_strain(&p, 50.0, 0.0).unwrap();
        assert_relative_eq!(e2, 0.2 * 50.0 / 45000.0, max_relative = 1e-12);
        assert_eq!(lateral_strain(&p, 0.0, 0.0).unwrap(), 0.0);
        // |g| w (l+2m) / D(0.1) evaluated independently: 10*0.1*50000/D(0.1)
        let d = 50000.0 * (62500.0 + 4.0 * 121.0 * 0.1) - 2.0 * (12500.0f64 + 223.75).powi(2);
        let residual = lateral_strain(&p, 0.0, 0.1).unwrap();
        assert_relative_eq!(residual, 50000.0 / d, max_relative = 1e-14);
        assert_relative_eq!(residual, 1.78340e-5, max_relative = 1e-5);
    }

    #[test]
    fn singular_denominator_is_an_error() {
        let p = table1();
        // D(w) has its positive root at w = 12.944
        assert!(denominator(&p, 12.94) > 0.0);
        assert!(denominator(&p, 12.95) < 0.0);
        assert!(matches!(
            lateral_strain(&p, 10.0, 12.95),
            Err(MaterialError::SingularTangent {
                which: Tangent::Denominator,
                ..
            })
        ));
    }

    #[test]
    fn axial_strain_examples() {
        let p = table1();
        let e2 = lateral_strain(&p, 50.0, 0.0).unwrap();
        let e1 = axial_strain(&p, 50.0, e2, 0.0);
        assert_relative_eq!(e1, 50.0 / 45000.0, max_relative = 1e-12);
        assert_relative_eq!(e2 / e1, 0.2, max_relative = 1e-12);
        assert_eq!(axial_strain(&p, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn yield_value_examples() {
        let mut p = table1();
        p.threshold = ThresholdSign::Hardening;
        assert_relative_eq!(yield_value(&p, 2.2222e-4, 0.0), 2.2222e-3, max_relative = 1e-12);
        assert_relative_eq!(yield_value(&p, 3.8e-4, 0.5), 1.9e-3, max_relative = 1e-12);
        for w in [0.0, 0.3, 2.0] {
            assert!(yield_value(&p, 0.0, w) <= 0.0);
        }
        p.threshold = ThresholdSign::Softening;
        assert_relative_eq!(yield_value(&p, 3.8e-4, 0.5), 5.7e-3, max_relative = 1e-12);
        assert_eq!(yield_value(&p, 0.0, 0.0), 0.0);
    }

    #[test]
    fn kappa_pristine_golden() {
        let p = table1();
        // 50000 * 62500 - 2 * 12500^2 - 50000 * 100 / 0.0038
        assert_relative_eq!(kappa(&p, 0.0, 0.0, 0.0), 1.496_710_526_315_789_5e9, max_relative = 1e-14);
        let mut lit = p;
        lit.kappa_grouping = KappaGrouping::Literal;
        assert_relative_eq!(kappa(&lit, 0.0, 0.0, 0.0), 2.8125e9 - 100.0 / 0.0038, max_relative = 1e-14);
        assert!(kappa(&p, 0.0, 0.0, 0.0) > 0.0);
    }

    #[test]
    fn kappa_decreases_with_damage() {
        let p = table1();
        let s = 0.9 * p.fc;
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let w = 0.5 * i as f64;
            let st = UniaxialState::at(&p, s, w).unwrap();
            let k = kappa(&p, st.eps1, st.eps2, w);
            assert!(k < last, "kappa not decreasing at w = {w}");
            last = k;
        }
    }

    #[test]
    fn damage_increment_zero_cases() {
        let p = table1();
        let st = UniaxialState::at(&p, 0.9 * p.fc, 0.2).unwrap();
        assert_eq!(damage_increment(&p, &st, 0.0).unwrap(), 0.0);
        assert_eq!(damage_increment(&p, &st, -1.0).unwrap(), 0.0);
        // below threshold with the rising threshold
        let mut h = p;
        h.threshold = ThresholdSign::Hardening;
        let st = UniaxialState::at(&h, 1.0, 1.0).unwrap();
        assert!(yield_value(&h, st.eps2, 1.0) < 0.0);
        assert_eq!(damage_increment(&h, &st, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn damage_increment_golden_top_of_first_cycle() {
        // Independent scalar evaluation at s = 0.9 fc = 45 MPa, w = 0, ds = 1:
        // e2 = 12500*45/2.8125e9, e1 = (45 + 25000 e2)/50000,
        // f = 10 e2, kappa = 50000 (62500 + 5.8882e6 (2 e2 - e1) - 26315.79) - 3.125e8
        let p = table1();
        let st = UniaxialState::at(&p, 45.0, 0.0).unwrap();
        let dw = damage_increment(&p, &st, 1.0).unwrap();
        assert!(dw > 0.0);
        assert_relative_eq!(dw, GOLDEN_DW_TOP, max_relative = 2e-6);
    }

    // frozen from tests/oracle/material_oracle.py
    const GOLDEN_DW_TOP: f64 = 3.54334e-06;

    #[test]
    fn step_to_same_stress_is_a_no_op() {
        let p = table1();
        let st = UniaxialState::at(&p, 20.0, 0.3).unwrap();
        let next = step(&p, &st, 20.0, 20).unwrap();
        assert_eq!(next, st);
    }

    #[test]
    fn unloading_produces_no_damage() {
        let p = table1();
        let st = UniaxialState::at(&p, 45.0, 0.3).unwrap();
        let next = step(&p, &st, 10.0, 20).unwrap();
        assert_eq!(next.omega2, st.omega2);
        assert_eq!(next.sbar1, 10.0);
    }

    fn cycle_increment(p: &MaterialParameters, substeps: usize) -> f64 {
        let st = step(p, &UniaxialState::pristine(), 0.2 * p.fc, substeps).unwrap();
        let up = step(p, &st, 0.9 * p.fc, substeps).unwrap();
        let down = step(p, &up, 0.2 * p.fc, substeps).unwrap();
        down.omega2 - st.omega2
    }

    #[test]
    fn full_cycle_grows_damage() {
        let p = table1();
        let dw = cycle_increment(&p, 20);
        assert!(dw > 0.0);
        assert_relative_eq!(dw, GOLDEN_CYCLE_DW, max_relative = 2e-6);
    }

    // frozen from tests/oracle/material_oracle.py (midpoint quadrature, 20 substeps)
    const GOLDEN_CYCLE_DW: f64 = 1.42381e-05;

    #[test]
    fn substep_convergence() {
        let p = table1();
        let coarse = cycle_increment(&p, 20);
        let fine = cycle_increment(&p, 40);
        assert!(((coarse - fine) / fine).abs() < 0.02);
        let half = cycle_increment(&p, 10);
        assert!((half - fine).abs() > (coarse - fine).abs());
    }
}

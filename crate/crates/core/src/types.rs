//! Shared domain types.
//!
//! All rates are measured in units of the total decay rate Γ and all delays
//! in units of 1/Γ. Conversion to nanoseconds happens only at I/O boundaries
//! through [`UnitScale`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emitter and drive description for a chain of identical two-level atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Fraction of the spontaneous emission going into the forward mode.
    pub beta: f64,
    /// Total decay rate. Internally always 1.
    pub gamma: f64,
    /// Laser minus atom detuning, in units of `gamma`.
    pub detuning: f64,
    pub n_atoms: usize,
    /// Input photon flux in units of `gamma`; 0 means the weak-drive limit.
    pub drive_photon_rate: f64,
}

impl PhysicalParams {
    /// Resonant, weakly driven chain in natural units.
    pub fn new(beta: f64, n_atoms: usize) -> Self {
        Self {
            beta,
            gamma: 1.0,
            detuning: 0.0,
            n_atoms,
            drive_photon_rate: 0.0,
        }
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_atoms(mut self, n_atoms: usize) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    pub fn validate(self) -> Result<Self> {
        validate_params(self)
    }
}

/// Returns `params` unchanged if every invariant holds.
pub fn validate_params(params: PhysicalParams) -> Result<PhysicalParams> {
    if !params.beta.is_finite() {
        return Err(Error::NonFinite("beta"));
    }
    if !params.gamma.is_finite() {
        return Err(Error::NonFinite("gamma"));
    }
    if !params.detuning.is_finite() {
        return Err(Error::NonFinite("detuning"));
    }
    if !params.drive_photon_rate.is_finite() {
        return Err(Error::NonFinite("drive_photon_rate"));
    }
    if !(params.beta > 0.0 && params.beta <= 1.0) {
        return Err(Error::BetaOutOfRange(params.beta));
    }
    if params.gamma <= 0.0 {
        return Err(Error::GammaOutOfRange(params.gamma));
    }
    if params.drive_photon_rate < 0.0 {
        return Err(Error::DriveOutOfRange(params.drive_photon_rate));
    }
    Ok(params)
}

/// Conversion between natural units (1/Γ) and nanoseconds.
///
/// `gamma_mhz` is Γ/2π in MHz. The default of 5.2 MHz (Cs D2 line) is a
/// convention, not a measured input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScale {
    pub gamma_mhz: f64,
}

impl Default for UnitScale {
    fn default() -> Self {
        Self { gamma_mhz: 5.2 }
    }
}

impl UnitScale {
    pub fn new(gamma_mhz: f64) -> Result<Self> {
        if !(gamma_mhz.is_finite() && gamma_mhz > 0.0) {
            return Err(Error::GammaOutOfRange(gamma_mhz));
        }
        Ok(Self { gamma_mhz })
    }

    /// Γ in rad/ns.
    pub fn gamma_per_ns(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.gamma_mhz * 1e-3
    }

    /// Length of 1/Γ in ns (about 30.6 ns at the default).
    pub fn ns_per_unit(&self) -> f64 {
        1.0 / self.gamma_per_ns()
    }

    pub fn to_ns(&self, tau_gamma: f64) -> f64 {
        tau_gamma * self.ns_per_unit()
    }

    pub fn to_gamma(&self, tau_ns: f64) -> f64 {
        tau_ns * self.gamma_per_ns()
    }
}

/// Delays τ ≥ 0 at which a curve is sampled.
///
/// Only the non-negative half is stored; `symmetric` marks curves that are
/// mirrored to negative delays on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    values: Vec<f64>,
    symmetric: bool,
}

impl TauGrid {
    pub fn new(values: Vec<f64>, symmetric: bool) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite delay".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidGrid("grid must start at tau = 0".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("delays must be strictly increasing".into()));
        }
        Ok(Self { values, symmetric })
    }

    /// `n` evenly spaced points on `[0, tau_max]`, mirrored on output.
    pub fn linspace(tau_max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(tau_max > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "linspace needs n >= 2 and tau_max > 0 (n = {n}, tau_max = {tau_max})"
            )));
        }
        let step = tau_max / (n - 1) as f64;
        Self::new((0..n).map(|i| i as f64 * step).collect(), true)
    }

    /// Just τ = 0 and one far point; used when only g²(0) matters.
    pub fn zero_and(tau_far: f64) -> Result<Self> {
        Self::new(vec![0.0, tau_far], true)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("grid has at least two points")
    }
}

/// Sampled g²(τ) on a [`TauGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Curve {
    pub grid: TauGrid,
    values: Vec<f64>,
    /// Power transmission of the configuration that produced the curve.
    pub transmission: f64,
    pub label: String,
}

impl G2Curve {
    pub fn new(grid: TauGrid, values: Vec<f64>, transmission: f64, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidCurve(format!(
                "g2 value {v} is not a finite nonnegative number"
            )));
        }
        Ok(Self {
            grid,
            values,
            transmission,
            label: label.into(),
        })
    }

    /// g² ≡ 1 on `grid`.
    pub fn flat(grid: TauGrid, transmission: f64, label: impl Into<String>) -> Self {
        let values = vec![1.0; grid.len()];
        Self {
            grid,
            values,
            transmission,
            label: label.into(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn g2_zero(&self) -> f64 {
        self.values[0]
    }

    /// Linear interpolation at |τ|; clamps to the last sample beyond the grid.
    pub fn value_at(&self, tau: f64) -> f64 {
        let t = tau.abs();
        let xs = self.grid.values();
        if t >= self.grid.max() {
            return *self.values.last().unwrap();
        }
        let i = xs.partition_point(|&x| x <= t) - 1;
        let f = (t - xs[i]) / (xs[i + 1] - xs[i]);
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// `(τ, g²)` pairs over negative and positive delays, τ = 0 once.
    pub fn mirrored(&self) -> Vec<(f64, f64)> {
        let xs = self.grid.values();
        let mut out = Vec::with_capacity(2 * xs.len());
        if self.grid.symmetric() {
            for (x, v) in xs.iter().zip(&self.values).skip(1).rev() {
                out.push((-x, *v));
            }
        }
        out.extend(xs.iter().copied().zip(self.values.iter().copied()));
        out
    }

    /// |g²(τ_max) − 1|, or `None` when the grid stops short of 50/Γ.
    pub fn long_delay_deviation(&self) -> Option<f64> {
        (self.grid.max() >= 50.0).then(|| (self.values.last().unwrap() - 1.0).abs())
    }

    pub fn check_long_delay(&self) -> Result<()> {
        match self.long_delay_deviation() {
            Some(d) if d > 0.02 => Err(Error::InvalidCurve(format!(
                "g2 at the largest delay deviates from 1 by {d:.3}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Sampled complex amplitude on a [`TauGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexCurve {
    pub grid: TauGrid,
    values: Vec<Complex64>,
}

impl ComplexCurve {
    pub fn new(grid: TauGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidCurve("non-finite amplitude".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_paper_like_params() {
        let p = PhysicalParams::new(0.0081, 158);
        assert_eq!(validate_params(p).unwrap(), p);
    }

    #[test]
    fn accepts_perfect_coupling() {
        assert!(validate_params(PhysicalParams::new(1.0, 1)).is_ok());
    }

    #[test]
    fn rejects_zero_beta() {
        let err = validate_params(PhysicalParams::new(0.0, 3)).unwrap_err();
        assert!(matches!(err, Error::BetaOutOfRange(_)));
        assert!(err.to_string().starts_with("beta-out-of-range"));
    }

    #[test]
    fn rejects_bad_gamma_and_drive() {
        let mut p = PhysicalParams::new(0.1, 1);
        p.gamma = 0.0;
        assert!(matches!(validate_params(p), Err(Error::GammaOutOfRange(_))));
        let mut p = PhysicalParams::new(0.1, 1);
        p.drive_photon_rate = -1.0;
        assert!(matches!(validate_params(p), Err(Error::DriveOutOfRange(_))));
        let p = PhysicalParams::new(f64::NAN, 1);
        assert!(matches!(validate_params(p), Err(Error::NonFinite("beta"))));
    }

    #[test]
    fn grid_invariants() {
        assert!(TauGrid::new(vec![0.0], true).is_err());
        assert!(TauGrid::new(vec![0.1, 0.2], true).is_err());
        assert!(TauGrid::new(vec![0.0, 0.2, 0.2], true).is_err());
        let g = TauGrid::linspace(10.0, 11).unwrap();
        assert_eq!(g.values()[3], 3.0);
        assert_eq!(g.max(), 10.0);
    }

    #[test]
    fn mirrored_curve_is_even() {
        let g = TauGrid::linspace(2.0, 3).unwrap();
        let c = G2Curve::new(g, vec![0.5, 0.8, 1.0], 1.0, "t").unwrap();
        let m = c.mirrored();
        assert_eq!(m, vec![(-2.0, 1.0), (-1.0, 0.8), (0.0, 0.5), (1.0, 0.8), (2.0, 1.0)]);
        assert_eq!(c.value_at(-0.5), c.value_at(0.5));
        assert!((c.value_at(0.5) - 0.65).abs() < 1e-12);
    }

    #[test]
    fn curve_rejects_negative_values() {
        let g = TauGrid::linspace(1.0, 2).unwrap();
        assert!(G2Curve::new(g, vec![-0.1, 1.0], 1.0, "").is_err());
    }

    #[test]
    fn unit_scale_default_is_about_thirty_ns() {
        let u = UnitScale::default();
        assert!((u.ns_per_unit() - 30.6).abs() < 0.1);
        assert!((u.to_gamma(u.to_ns(3.7)) - 3.7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn params_roundtrip_json(beta in 1e-6f64..=1.0, n in 0usize..1000, d in -5.0f64..5.0) {
            let p = PhysicalParams::new(beta, n).with_detuning(d);
            let s = serde_json::to_string(&p).unwrap();
            prop_assert_eq!(serde_json::from_str::<PhysicalParams>(&s).unwrap(), p);
        }

        #[test]
        fn curve_roundtrip_json(vals in proptest::collection::vec(0.0f64..30.0, 2..40)) {
            let g = TauGrid::linspace(5.0, vals.len()).unwrap();
            let c = G2Curve::new(g.clone(), vals.clone(), 0.3, "x").unwrap();
            let s = serde_json::to_string(&c).unwrap();
            prop_assert_eq!(serde_json::from_str::<G2Curve>(&s).unwrap(), c);
            let z = ComplexCurve::new(g, vals.iter().map(|v| Complex64::new(*v, -v)).collect()).unwrap();
            let s = serde_json::to_string(&z).unwrap();
            prop_assert_eq!(serde_json::from_str::<ComplexCurve>(&s).unwrap(), z);
        }
    }
}

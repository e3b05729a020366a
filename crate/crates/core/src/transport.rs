//! Weak-drive photon transport through a chirally cascaded chain.
//!
//! The chain is described by a perturbative wavefunction truncated at two
//! excitations,
//!
//! ```text
//! |ψ⟩ = |g⟩ + Σ_j e_j |j⟩ + Σ_{j<k} d_jk |jk⟩ ,
//! ```
//!
//! with amplitudes in powers of the coherent input amplitude α, which is set
//! to 1 because it cancels from every normalized quantity. The effective
//! non-Hermitian Hamiltonian only moves excitations downstream, so both the
//! one- and two-excitation steady-state systems are lower triangular and are
//! solved by forward substitution.
//!
//! After one photon is detected in the output mode `a = α + √β Σ_j σ_j`, the
//! remaining one-excitation amplitudes relax back to the steady state under
//! `A = (iΔ − 1/2)·1 − β·L`, where `L` is the strictly lower all-ones matrix.
//! Summing `exp(Aτ)` over the chain gives Laguerre polynomials:
//! `Σ_j [exp(−βτL)]_jl = L_m(βτ)`, with `m` the number of atoms downstream of
//! `l`. The two-photon amplitude therefore needs O(N) work per delay.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ComplexCurve, G2Curve, PhysicalParams, TauGrid};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default lower bound on the chain transmission accepted by [`chain_g2`].
pub const DEFAULT_TRANSMISSION_FLOOR: f64 = 1e-12;

/// Coherent amplitude transmission of one atom, `1 − 2β/(1 − 2iΔ)`.
pub fn transmission_coefficient(beta: f64, detuning: f64) -> Complex64 {
    1.0 - 2.0 * beta / Complex64::new(1.0, -2.0 * detuning)
}

/// Resonant optical depth contributed by a single atom, `−2 ln(1 − 2β)`.
pub fn od_per_atom(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::OpaqueAtom(beta));
    }
    Ok(-2.0 * (-2.0 * beta).ln_1p())
}

/// Closed-form transmitted g²(τ) of a single chiral atom.
///
/// The two-photon amplitude is `t² − (1 − t)² e^{(iΔ − 1/2)τ}`, normalized by
/// its long-delay value `t²`.
pub fn single_atom_g2(params: PhysicalParams, grid: &TauGrid) -> Result<G2Curve> {
    let p = params.validate()?;
    let t = transmission_coefficient(p.beta, p.detuning);
    if t.norm() < 1e-12 {
        return Err(Error::OpaqueAtom(p.beta));
    }
    let lambda = Complex64::new(-0.5, p.detuning);
    let t2 = t * t;
    let r2 = (1.0 - t) * (1.0 - t);
    let values = grid
        .values()
        .iter()
        .map(|&tau| ((t2 - r2 * (lambda * tau).exp()) / t2).norm_sqr())
        .collect();
    G2Curve::new(
        grid.clone(),
        values,
        t.norm_sqr(),
        format!("single atom, beta={}", p.beta),
    )
}

/// Doubly excited amplitudes `d_jk`, `j < k`, packed column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAmplitudes {
    n: usize,
    data: Vec<Complex64>,
}

impl PairAmplitudes {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n.saturating_sub(1) / 2],
        }
    }

    fn index(j: usize, k: usize) -> usize {
        debug_assert!(j < k);
        k * (k - 1) / 2 + j
    }

    /// `d_jk` for any two distinct atoms, in either order.
    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        assert!(j != k && j < self.n && k < self.n, "pair ({j}, {k}) out of range");
        let (a, b) = if j < k { (j, k) } else { (k, j) };
        self.data[Self::index(a, b)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.data.iter()
    }
}

/// Steady-state perturbative amplitudes of the driven chain (α = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub vacuum_amp: Complex64,
    pub single_exc: Vec<Complex64>,
    pub double_exc: PairAmplitudes,
    /// Transmitted field ⟨a_out⟩/α.
    pub output_field: Complex64,
    pub beta: f64,
    pub detuning: f64,
}

impl ChainState {
    pub fn n_atoms(&self) -> usize {
        self.single_exc.len()
    }

    /// Coherent output amplitude ⟨a_out⟩/α.
    pub fn output_amplitude(&self) -> Complex64 {
        self.output_field
    }

    /// Equal-time two-photon amplitude ⟨g|a a|ψ⟩/α².
    pub fn pair_amplitude_at_zero(&self) -> Complex64 {
        let sb = self.beta.sqrt();
        self.vacuum_amp
            + 2.0 * sb * self.single_exc.iter().sum::<Complex64>()
            + 2.0 * self.beta * self.double_exc.iter().sum::<Complex64>()
    }

    /// One-excitation amplitudes left behind by a detection in the output mode.
    fn conditional_amplitudes(&self) -> Vec<Complex64> {
        let n = self.n_atoms();
        let sb = self.beta.sqrt();
        (0..n)
            .map(|j| {
                let scattered: Complex64 = (0..n).filter(|&k| k != j).map(|k| self.double_exc.get(j, k)).sum();
                self.single_exc[j] + sb * scattered
            })
            .collect()
    }
}

/// Solves the order-α and order-α² steady-state systems by forward substitution.
pub fn chain_steady_state(params: PhysicalParams) -> Result<ChainState> {
    let p = params.validate()?;
    let n = p.n_atoms;
    let beta = p.beta;
    let sb = beta.sqrt();
    // Diagonal of the effective Hamiltonian per excitation.
    let kappa = Complex64::new(-p.detuning, -0.5);

    // The field is carried atom by atom: summing the scattered amplitudes at
    // the end cancels catastrophically once T is far below machine epsilon.
    let mut single = Vec::with_capacity(n);
    let mut field = Complex64::new(1.0, 0.0);
    for _ in 0..n {
        let e = I * sb * field / kappa;
        field += sb * e;
        single.push(e);
    }

    // For pair (j, k) the feeding terms are Σ_{l<j} d_lk (same column) and
    // Σ_{l<k, l≠j} d_jl, tracked as running row sums over finished columns.
    let mut pairs = PairAmplitudes::zeros(n);
    let mut row_sums = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n {
        let mut column = Complex64::new(0.0, 0.0);
        for j in 0..k {
            let feed = column + row_sums[j];
            let d = I * (beta * feed + sb * (single[j] + single[k])) / (2.0 * kappa);
            pairs.data[PairAmplitudes::index(j, k)] = d;
            column += d;
        }
        for j in 0..k {
            let d = pairs.data[PairAmplitudes::index(j, k)];
            row_sums[j] += d;
            row_sums[k] += d;
        }
    }

    Ok(ChainState {
        vacuum_amp: Complex64::new(1.0, 0.0),
        single_exc: single,
        double_exc: pairs,
        output_field: field,
        beta,
        detuning: p.detuning,
    })
}

/// Power transmission `T = |⟨a_out⟩/α|²` from the solved chain.
pub fn chain_transmission(params: PhysicalParams) -> Result<f64> {
    Ok(chain_steady_state(params)?.output_amplitude().norm_sqr())
}

/// `T = |t(Δ)|^{2N}` without solving the chain.
pub fn chain_transmission_closed_form(params: PhysicalParams) -> Result<f64> {
    let p = params.validate()?;
    Ok(transmission_coefficient(p.beta, p.detuning)
        .norm_sqr()
        .powi(p.n_atoms as i32))
}

/// Laguerre polynomials `L_0(x) .. L_{n-1}(x)`.
fn laguerre_table(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(1.0);
    if n > 1 {
        out.push(1.0 - x);
    }
    for m in 1..n.saturating_sub(1) {
        let mf = m as f64;
        let next = ((2.0 * mf + 1.0 - x) * out[m] - mf * out[m - 1]) / (mf + 1.0);
        out.push(next);
    }
    out
}

fn two_photon_amplitude_from_state(state: &ChainState, grid: &TauGrid) -> Vec<Complex64> {
    let n = state.n_atoms();
    let sb = state.beta.sqrt();
    let c0 = state.output_amplitude();
    let long_delay = c0 * c0;
    let cond = state.conditional_amplitudes();
    let deviation: Vec<Complex64> = cond.iter().zip(&state.single_exc).map(|(c, e)| c - c0 * e).collect();
    let lambda = Complex64::new(-0.5, state.detuning);
    grid.values()
        .iter()
        .map(|&tau| {
            let lag = laguerre_table(n, state.beta * tau);
            // Atom l has n - 1 - l atoms downstream of it.
            let transient: Complex64 = deviation.iter().enumerate().map(|(l, u)| u * lag[n - 1 - l]).sum();
            long_delay + sb * (lambda * tau).exp() * transient
        })
        .collect()
}

/// Two-photon detection amplitude ψ_N(τ) = ⟨a_out(t+τ) a_out(t)⟩/α².
pub fn chain_two_photon_amplitude(params: PhysicalParams, grid: &TauGrid) -> Result<ComplexCurve> {
    let state = chain_steady_state(params)?;
    ComplexCurve::new(grid.clone(), two_photon_amplitude_from_state(&state, grid))
}

/// g²(τ) = |ψ_N(τ)|² / |ψ_N(∞)|² with the default transmission floor.
pub fn chain_g2(params: PhysicalParams, grid: &TauGrid) -> Result<G2Curve> {
    chain_g2_with_floor(params, grid, DEFAULT_TRANSMISSION_FLOOR)
}

pub fn chain_g2_with_floor(params: PhysicalParams, grid: &TauGrid, floor: f64) -> Result<G2Curve> {
    let state = chain_steady_state(params)?;
    let c0 = state.output_amplitude();
    let transmission = c0.norm_sqr();
    if transmission < floor {
        return Err(Error::VanishingTransmission { transmission, floor });
    }
    let norm = transmission * transmission;
    let values = two_photon_amplitude_from_state(&state, grid)
        .into_iter()
        .map(|psi| psi.norm_sqr() / norm)
        .collect();
    G2Curve::new(
        grid.clone(),
        values,
        transmission,
        format!(
            "chain N={}, beta={}, detuning={}",
            params.n_atoms, params.beta, params.detuning
        ),
    )
}

/// g²(0) and T for every chain length `0..=n_max`.
///
/// Upstream amplitudes do not depend on what lies downstream, so one solve of
/// the longest chain yields all shorter ones through prefix sums.
pub fn g2_zero_profile(beta: f64, detuning: f64, n_max: usize) -> Result<Vec<(f64, f64)>> {
    let state = chain_steady_state(PhysicalParams::new(beta, n_max).with_detuning(detuning))?;
    let sb = beta.sqrt();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut sum_e = Complex64::new(0.0, 0.0);
    let mut sum_d = Complex64::new(0.0, 0.0);
    out.push((1.0, 1.0));
    for k in 0..n_max {
        for j in 0..k {
            sum_d += state.double_exc.get(j, k);
        }
        sum_e += state.single_exc[k];
        let c0 = 1.0 + sb * sum_e;
        let psi0 = 1.0 + 2.0 * sb * sum_e + 2.0 * beta * sum_d;
        let t = c0.norm_sqr();
        out.push((psi0.norm_sqr() / (t * t), t));
    }
    Ok(out)
}

/// Outcome of the search for the chain length with the deepest antibunching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub beta: f64,
    pub n_star: usize,
    pub g2_zero_at_n_star: f64,
    pub transmission_at_n_star: f64,
    /// Input photon flux in units of Γ.
    pub n_in: f64,
    /// Output photon flux `n_in · T(N*)` in units of Γ.
    pub n_out: f64,
    /// βΓ/2, the best rate of a single emitter with the same coupling.
    pub single_emitter_rate: f64,
}

/// Antibunching threshold a scan minimum must beat to count as bracketed.
pub const ANTIBUNCHING_THRESHOLD: f64 = 0.5;

/// Exhaustive scan of N ≤ `n_max` for the minimum of g²(0).
///
/// The input flux defaults to 0.1·Γ/β; use [`RateReport::with_input_rate`]
/// to rescale.
pub fn find_perfect_antibunching(beta: f64, detuning: f64, n_max: usize) -> Result<RateReport> {
    od_per_atom(beta)?;
    let profile = g2_zero_profile(beta, detuning, n_max)?;
    let (n_star, &(g2_min, t_star)) = profile
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("profile is nonempty");
    if g2_min >= ANTIBUNCHING_THRESHOLD || n_star == n_max {
        return Err(Error::NotBracketed {
            threshold: ANTIBUNCHING_THRESHOLD,
            n_max,
        });
    }
    let n_in = 0.1 / beta;
    Ok(RateReport {
        beta,
        n_star,
        g2_zero_at_n_star: g2_min,
        transmission_at_n_star: t_star,
        n_in,
        n_out: n_in * t_star,
        single_emitter_rate: beta / 2.0,
    })
}

impl RateReport {
    pub fn with_input_rate(mut self, n_in: f64) -> Self {
        self.n_in = n_in;
        self.n_out = n_in * self.transmission_at_n_star;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> TauGrid {
        TauGrid::linspace(10.0, 201).unwrap()
    }

    #[test]
    fn transmission_coefficient_examples() {
        assert_relative_eq!(transmission_coefficient(0.5, 0.0).norm(), 0.0);
        assert_relative_eq!(transmission_coefficient(0.0081, 0.0).re, 0.9838, epsilon = 1e-12);
        let t = transmission_coefficient(0.25, 0.5);
        assert_relative_eq!(t.re, 0.75, epsilon = 1e-12);
        assert_relative_eq!(t.im, -0.25, epsilon = 1e-12);
        assert!(transmission_coefficient(0.3, 1e6).norm() > 1.0 - 1e-6);
        for d in [-3.0, -0.2, 0.0, 0.7] {
            assert!(transmission_coefficient(0.9, d).norm() <= 1.0);
        }
    }

    #[test]
    fn od_per_atom_values() {
        let od = od_per_atom(0.008).unwrap();
        assert_relative_eq!(od, 0.03227, max_relative = 5e-4);
        assert!((5.13 / od - 159.0).abs() < 1.0);
        assert!((6.75 / od - 209.0).abs() < 1.0);
        assert_relative_eq!(od_per_atom(1e-7).unwrap() / 4e-7, 1.0, epsilon = 1e-6);
        assert!(matches!(od_per_atom(0.5), Err(Error::OpaqueAtom(_))));
    }

    #[test]
    fn single_atom_perfect_coupling_gives_nine() {
        let c = single_atom_g2(PhysicalParams::new(1.0, 1), &grid()).unwrap();
        assert_relative_eq!(c.g2_zero(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn single_atom_closed_form_at_weak_coupling() {
        let b: f64 = 0.0081;
        let c = single_atom_g2(PhysicalParams::new(b, 1), &grid()).unwrap();
        let expected = (1.0 - 4.0 * b).powi(2) / (1.0 - 2.0 * b).powi(4);
        assert_relative_eq!(c.g2_zero(), expected, epsilon = 1e-14);
        let tiny = single_atom_g2(PhysicalParams::new(1e-9, 1), &grid()).unwrap();
        assert!(tiny.values().iter().all(|v| (v - 1.0).abs() < 1e-7));
    }

    #[test]
    fn single_atom_critical_coupling_is_an_error() {
        let err = single_atom_g2(PhysicalParams::new(0.5, 1), &grid()).unwrap_err();
        assert!(matches!(err, Error::OpaqueAtom(_)));
    }

    #[test]
    fn transmission_keeps_relative_accuracy_when_opaque() {
        for (b, d, n) in [(0.3, 0.0, 200), (0.9, 0.0, 200), (0.05, 0.0, 200), (0.3, 0.5, 400)] {
            let t = (Complex64::new(1.0, 0.0) - 2.0 * b / Complex64::new(1.0, -2.0 * d)).norm_sqr();
            let got = chain_transmission(PhysicalParams::new(b, n).with_detuning(d)).unwrap();
            assert_relative_eq!(got, t.powi(n as i32), max_relative = 1e-11);
        }
    }

    #[test]
    fn empty_chain_is_vacuum() {
        let s = chain_steady_state(PhysicalParams::new(0.1, 0)).unwrap();
        assert!(s.single_exc.is_empty() && s.double_exc.is_empty());
        assert_eq!(s.vacuum_amp, Complex64::new(1.0, 0.0));
        assert_eq!(chain_transmission(PhysicalParams::new(0.1, 0)).unwrap(), 1.0);
        let g = chain_g2(PhysicalParams::new(0.1, 0), &grid()).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
        let psi = chain_two_photon_amplitude(PhysicalParams::new(0.1, 0), &grid()).unwrap();
        assert!(psi.values().iter().all(|&z| z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn one_atom_output_is_t() {
        for (b, d) in [(0.1, 0.0), (0.3, 0.5), (0.9, -1.2)] {
            let s = chain_steady_state(PhysicalParams::new(b, 1).with_detuning(d)).unwrap();
            let t = transmission_coefficient(b, d);
            assert_relative_eq!((s.output_amplitude() - t).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn long_chain_matches_product() {
        let p = PhysicalParams::new(0.0081, 158);
        let s = chain_steady_state(p).unwrap();
        let exact = transmission_coefficient(0.0081, 0.0).powi(158);
        assert_relative_eq!(s.output_amplitude().re, exact.re, max_relative = 1e-10);
        let od = -s.output_amplitude().norm_sqr().ln();
        assert!((od - 5.1).abs() < 0.1, "OD {od}");
        let t = chain_transmission(PhysicalParams::new(0.1, 10)).unwrap();
        assert_relative_eq!(t, 0.8f64.powi(20), max_relative = 1e-10);
        let t = chain_transmission(PhysicalParams::new(0.008, 158)).unwrap();
        assert_relative_eq!(t, 0.0061, max_relative = 0.03);
    }

    #[test]
    fn one_atom_chain_matches_closed_form_amplitude() {
        for d in [0.0, 0.5] {
            let p = PhysicalParams::new(0.2, 1).with_detuning(d);
            let psi = chain_two_photon_amplitude(p, &grid()).unwrap();
            let t = transmission_coefficient(0.2, d);
            for (tau, z) in grid().values().iter().zip(psi.values()) {
                let expected = t * t - (1.0 - t) * (1.0 - t) * (Complex64::new(-0.5, d) * *tau).exp();
                assert!((z - expected).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn profile_matches_full_solve() {
        let profile = g2_zero_profile(0.05, 0.3, 12).unwrap();
        for n in [0, 1, 5, 12] {
            let g = chain_g2(PhysicalParams::new(0.05, n).with_detuning(0.3), &grid()).unwrap();
            assert_relative_eq!(profile[n].0, g.g2_zero(), max_relative = 1e-10);
            assert_relative_eq!(profile[n].1, g.transmission, max_relative = 1e-12);
        }
    }

    #[test]
    fn vanishing_transmission_is_rejected() {
        let err = chain_g2(PhysicalParams::new(0.3, 40), &grid()).unwrap_err();
        assert!(matches!(err, Error::VanishingTransmission { .. }));
    }

    #[test]
    fn antibunching_search_at_weak_coupling() {
        let r = find_perfect_antibunching(0.1, 0.0, 200).unwrap();
        // Independent scan with the full correlation solver.
        let scan: Vec<f64> = (0..=20)
            .map(|n| chain_g2(PhysicalParams::new(0.1, n), &grid()).unwrap().g2_zero())
            .collect();
        let argmin = (0..scan.len())
            .min_by(|a, b| scan[*a].partial_cmp(&scan[*b]).unwrap())
            .unwrap();
        assert_eq!(r.n_star, argmin);
        assert_relative_eq!(r.g2_zero_at_n_star, scan[argmin], max_relative = 1e-10);
        assert_relative_eq!(
            r.transmission_at_n_star,
            transmission_coefficient(0.1, 0.0).norm_sqr().powi(argmin as i32),
            max_relative = 1e-12
        );
        assert_relative_eq!(r.n_out, r.n_in * r.transmission_at_n_star);
        assert_relative_eq!(r.single_emitter_rate, 0.05);

        let r = find_perfect_antibunching(0.0081, 0.0, 400).unwrap();
        let od = r.n_star as f64 * od_per_atom(0.0081).unwrap();
        assert!((5.5..=6.5).contains(&od), "OD at N* = {od}");
        assert!(r.g2_zero_at_n_star < 1e-3);
    }

    #[test]
    fn antibunching_search_near_critical_coupling() {
        // One atom at β = 1/4 already removes the equal-time pair amplitude.
        let r = find_perfect_antibunching(0.25, 0.0, 10).unwrap();
        assert_eq!(r.n_star, 1);
        assert!(r.g2_zero_at_n_star < 1e-20);
        assert!(matches!(
            find_perfect_antibunching(0.45, 0.0, 50),
            Err(Error::NotBracketed { .. })
        ));
        assert!(matches!(
            find_perfect_antibunching(0.01, 0.0, 20),
            Err(Error::NotBracketed { .. })
        ));
    }
}

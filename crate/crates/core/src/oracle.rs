//! Brute-force reference for small chains.
//!
//! Full cascaded master equation on the 2^N-dimensional atomic space at
//! finite coherent drive:
//!
//! ```text
//! dρ/dt = −i[H, ρ] + D[√β Σ_j σ_j]ρ + (1 − β) Σ_j D[σ_j]ρ
//! H     = −Δ Σ_j σ_j†σ_j + i√β α Σ_j (σ_j − σ_j†)
//!         + (iβ/2) Σ_{j<k} (σ_j†σ_k − σ_k†σ_j)
//! a_out = α + √β Σ_j σ_j
//! ```
//!
//! (Γ = 1.) Two-time correlators come from the quantum regression theorem;
//! the weak-drive limit is reached by Richardson extrapolation in drive power.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{G2Curve, PhysicalParams, TauGrid};

type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const DEFAULT_ATOM_CAP: usize = 4;

/// Settings for the reference solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub atom_cap: usize,
    /// First-atom saturation parameters `s = 8β|α|²` of the probe drives,
    /// strongest first. Consecutive entries are combined by Richardson
    /// extrapolation; a third entry checks the result.
    pub saturations: Vec<f64>,
    /// Upper bound on the RK4 step, in units of 1/Γ.
    pub max_step: f64,
    /// Largest allowed relative disagreement between extrapolations.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            atom_cap: DEFAULT_ATOM_CAP,
            saturations: vec![4e-6, 1e-6, 2.5e-7],
            max_step: 0.01,
            tolerance: 1e-3,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.saturations.len() < 2 {
            return Err(Error::Config("oracle needs at least two drive strengths".into()));
        }
        if self.saturations.iter().any(|s| !(*s > 0.0 && *s < 0.2)) {
            return Err(Error::Config("oracle drive saturations must lie in (0, 0.2)".into()));
        }
        if self.saturations.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "oracle drive saturations must be distinct and decreasing".into(),
            ));
        }
        if !(self.max_step > 0.0 && self.max_step <= 0.01) {
            return Err(Error::Config("oracle step must lie in (0, 0.01]".into()));
        }
        Ok(())
    }

    /// Coherent amplitude α (units √Γ) that saturates the first atom to `s`.
    pub fn drive_amplitude(saturation: f64, beta: f64) -> f64 {
        (saturation / (8.0 * beta)).sqrt()
    }
}

/// Density matrix over the product space of N two-level atoms.
///
/// Basis state index bit `j` set means atom `j` is excited.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    pub matrix: CMatrix,
    pub n_atoms: usize,
}

impl DensityOperator {
    pub fn ground(n_atoms: usize) -> Self {
        let dim = 1 << n_atoms;
        let mut matrix = CMatrix::zeros(dim, dim);
        matrix[(0, 0)] = ONE;
        Self { matrix, n_atoms }
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.min()
    }

    /// Hermitian to 1e-12, unit trace to 1e-10, no eigenvalue below −1e-10.
    pub fn check_physical(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        let tr = self.trace();
        let min_ev = self.min_eigenvalue();
        if herm > 1e-12 || (tr - ONE).norm() > 1e-10 || min_ev < -1e-10 {
            return Err(Error::NotConverged(format!(
                "unphysical density operator: hermiticity error {herm:e}, trace {tr}, min eigenvalue {min_ev:e}"
            )));
        }
        Ok(())
    }

    pub fn expect(&self, op: &CMatrix) -> Complex64 {
        (op * &self.matrix).trace()
    }
}

/// Lowering operator of atom `j` on the 2^N space.
fn lowering(n_atoms: usize, j: usize) -> CMatrix {
    let dim = 1 << n_atoms;
    let mut m = CMatrix::zeros(dim, dim);
    for s in 0..dim {
        if s & (1 << j) != 0 {
            m[(s ^ (1 << j), s)] = ONE;
        }
    }
    m
}

/// Hamiltonian, jump operators and superoperator of the driven cascade.
#[derive(Debug, Clone)]
pub struct CascadedGenerator {
    pub n_atoms: usize,
    pub beta: f64,
    pub drive: f64,
    pub hamiltonian: CMatrix,
    pub jumps: Vec<CMatrix>,
    /// Output field operator `α + √β Σ σ_j`.
    pub output: CMatrix,
    /// Superoperator acting on column-major `vec(ρ)`.
    pub superoperator: CMatrix,
}

impl CascadedGenerator {
    pub fn dim(&self) -> usize {
        1 << self.n_atoms
    }

    /// dρ/dt evaluated directly from H and the jump operators.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let h = &self.hamiltonian;
        let mut out = (h * rho - rho * h) * (-I);
        for c in &self.jumps {
            let cd = c.adjoint();
            let cdc = &cd * c;
            out += c * rho * &cd - (&cdc * rho + rho * &cdc) * Complex64::new(0.5, 0.0);
        }
        out
    }
}

/// Builds the cascaded master-equation generator for `params` at coherent
/// drive amplitude `drive` (units √Γ, real).
pub fn build_cascaded_generator(params: PhysicalParams, drive: f64, atom_cap: usize) -> Result<CascadedGenerator> {
    let p = params.validate()?;
    let n = p.n_atoms;
    if n > atom_cap {
        return Err(Error::OracleTooLarge {
            requested: n,
            cap: atom_cap,
        });
    }
    if atom_cap > DEFAULT_ATOM_CAP && n > DEFAULT_ATOM_CAP {
        log::warn!(
            "oracle running with {n} atoms (dimension {}); this is slow",
            1usize << (2 * n)
        );
    }
    let dim = 1 << n;
    let sb = p.beta.sqrt();
    let sig: Vec<CMatrix> = (0..n).map(|j| lowering(n, j)).collect();

    let mut h = CMatrix::zeros(dim, dim);
    for (j, s) in sig.iter().enumerate() {
        let sd = s.adjoint();
        h += &sd * s * Complex64::new(-p.detuning, 0.0);
        h += (s - &sd) * (I * sb * drive);
        for sk in &sig[j + 1..] {
            let skd = sk.adjoint();
            h += (&sd * sk - &skd * s) * (I * p.beta * 0.5);
        }
    }

    let mut collective = CMatrix::zeros(dim, dim);
    for s in &sig {
        collective += s;
    }
    let mut jumps = Vec::with_capacity(n + 1);
    if n > 0 {
        jumps.push(&collective * Complex64::new(sb, 0.0));
    }
    if p.beta < 1.0 {
        let loss = (1.0 - p.beta).sqrt();
        jumps.extend(sig.iter().map(|s| s * Complex64::new(loss, 0.0)));
    }
    let output = CMatrix::identity(dim, dim) * Complex64::new(drive, 0.0) + &collective * Complex64::new(sb, 0.0);

    let id = CMatrix::identity(dim, dim);
    let mut sup = (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-I);
    for c in &jumps {
        let cdc = c.adjoint() * c;
        sup += c.map(|z| z.conj()).kronecker(c);
        sup -= (id.kronecker(&cdc) + cdc.transpose().kronecker(&id)) * Complex64::new(0.5, 0.0);
    }

    Ok(CascadedGenerator {
        n_atoms: n,
        beta: p.beta,
        drive,
        hamiltonian: h,
        jumps,
        output,
        superoperator: sup,
    })
}

/// Steady state by a direct null-space solve, with the first equation
/// replaced by the trace condition.
pub fn oracle_steady_state(generator: &CascadedGenerator) -> Result<DensityOperator> {
    let dim = generator.dim();
    let mut a = generator.superoperator.clone();
    let mut b = DVector::from_element(dim * dim, ZERO);
    for col in 0..dim * dim {
        a[(0, col)] = ZERO;
    }
    for k in 0..dim {
        a[(0, k * dim + k)] = ONE;
    }
    b[0] = ONE;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotConverged("singular steady-state system".into()))?;
    let mut matrix = CMatrix::from_column_slice(dim, dim, x.as_slice());
    // Solve noise only; the exact solution is Hermitian.
    matrix = (&matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
    let rho = DensityOperator {
        matrix,
        n_atoms: generator.n_atoms,
    };
    let residual = generator.apply(&rho.matrix).camax();
    if residual > 1e-10 {
        return Err(Error::NotConverged(format!("steady-state residual {residual:e}")));
    }
    rho.check_physical()?;
    Ok(rho)
}

/// One RK4 step as a dense propagator, `Σ_{k≤4} (hL)^k / k!`.
fn rk4_propagator(sup: &CMatrix, h: f64) -> CMatrix {
    let n = sup.nrows();
    let hl = sup * Complex64::new(h, 0.0);
    let mut term = CMatrix::identity(n, n);
    let mut total = term.clone();
    for k in 1..=4 {
        term = &term * &hl * Complex64::new(1.0 / k as f64, 0.0);
        total += &term;
    }
    total
}

/// Finite-drive g²(τ) and ⟨a_out⟩/α at one drive strength.
#[derive(Debug, Clone)]
pub struct FiniteDriveCorrelation {
    pub g2: Vec<f64>,
    pub mean_field: Complex64,
    pub photon_flux: f64,
}

/// g²(τ) at finite drive from ρ_ss by the quantum regression theorem.
pub fn finite_drive_g2(generator: &CascadedGenerator, grid: &TauGrid, max_step: f64) -> Result<FiniteDriveCorrelation> {
    let rho = oracle_steady_state(generator)?;
    let dim = generator.dim();
    let a = &generator.output;
    let ad = a.adjoint();
    let number = &ad * a;
    let flux = rho.expect(&number).re;
    let mean_field = rho.expect(a) / generator.drive;

    let conditioned = a * &rho.matrix * &ad;
    let mut state = DVector::from_column_slice(conditioned.as_slice());
    // Tr(n X) = Σ_{ij} n_ji X_ij, i.e. a dot product with vec(nᵀ).
    let observable = DVector::from_column_slice(number.transpose().as_slice());
    let measure = |v: &DVector<Complex64>| {
        observable
            .iter()
            .zip(v.iter())
            .map(|(o, x)| o * x)
            .sum::<Complex64>()
            .re
    };

    let taus = grid.values();
    let mut g2 = Vec::with_capacity(taus.len());
    g2.push(measure(&state) / (flux * flux));
    let mut cached: Option<(f64, CMatrix)> = None;
    for w in taus.windows(2) {
        let span = w[1] - w[0];
        let steps = (span / max_step - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let prop = match &cached {
            // Grid spacings jitter at the ulp level; reuse the propagator.
            Some((hc, p)) if (hc - h).abs() <= 1e-9 * h => p,
            _ => {
                cached = Some((h, rk4_propagator(&generator.superoperator, h)));
                &cached.as_ref().unwrap().1
            }
        };
        for _ in 0..steps {
            state = prop * &state;
        }
        g2.push(measure(&state) / (flux * flux));
    }
    debug_assert_eq!(state.len(), dim * dim);
    Ok(FiniteDriveCorrelation {
        g2,
        mean_field,
        photon_flux: flux,
    })
}

fn richardson(coarse: f64, fine: f64, ratio: f64) -> f64 {
    (ratio * fine - coarse) / (ratio - 1.0)
}

/// Weak-drive g²(τ) from the master equation.
///
/// Computes g² at every configured drive, extrapolates consecutive pairs to
/// zero power and requires the two finest extrapolations to agree within
/// `config.tolerance` (relative, with an absolute floor of the same size).
pub fn oracle_g2(config: &OracleConfig, params: PhysicalParams, grid: &TauGrid) -> Result<G2Curve> {
    config.validate()?;
    let p = params.validate()?;
    if p.n_atoms == 0 {
        return Ok(G2Curve::flat(grid.clone(), 1.0, "oracle N=0"));
    }
    let runs = config
        .saturations
        .iter()
        .map(|&s| {
            let gen = build_cascaded_generator(p, OracleConfig::drive_amplitude(s, p.beta), config.atom_cap)?;
            finite_drive_g2(&gen, grid, config.max_step)
        })
        .collect::<Result<Vec<_>>>()?;

    let extrapolate = |i: usize| -> (Vec<f64>, f64) {
        let ratio = config.saturations[i] / config.saturations[i + 1];
        let g = runs[i]
            .g2
            .iter()
            .zip(&runs[i + 1].g2)
            .map(|(c, f)| richardson(*c, *f, ratio))
            .collect();
        let t = richardson(runs[i].mean_field.norm_sqr(), runs[i + 1].mean_field.norm_sqr(), ratio);
        (g, t)
    };
    let last = config.saturations.len() - 2;
    let (best, transmission) = extrapolate(last);
    if last > 0 {
        let (check, _) = extrapolate(last - 1);
        for (tau, (b, c)) in grid.values().iter().zip(best.iter().zip(&check)) {
            if (b - c).abs() > config.tolerance * b.abs().max(1.0) {
                return Err(Error::NotConverged(format!(
                    "drive extrapolation unstable at tau = {tau}: {b} vs {c}"
                )));
            }
        }
    }
    // Extrapolation can push an exact zero slightly negative.
    let values = best.into_iter().map(|v| v.max(0.0)).collect();
    G2Curve::new(
        grid.clone(),
        values,
        transmission,
        format!("oracle N={}, beta={}, detuning={}", p.n_atoms, p.beta, p.detuning),
    )
}

/// Weak-drive power transmission |⟨a_out⟩/α|² from the master equation.
pub fn oracle_transmission(config: &OracleConfig, params: PhysicalParams) -> Result<f64> {
    config.validate()?;
    let p = params.validate()?;
    let k = config.saturations.len();
    let t = |s: f64| -> Result<f64> {
        let gen = build_cascaded_generator(p, OracleConfig::drive_amplitude(s, p.beta), config.atom_cap)?;
        let rho = oracle_steady_state(&gen)?;
        Ok((rho.expect(&gen.output) / gen.drive).norm_sqr())
    };
    let (coarse, fine) = (config.saturations[k - 2], config.saturations[k - 1]);
    Ok(richardson(t(coarse)?, t(fine)?, coarse / fine))
}

//! Linearization about the upright equilibrium, continuous-time LQR synthesis
//! and the distributional LQR action.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{PlantState, WipParams};
use crate::error::{Error, Result};
use crate::nn::GaussianAction;

/// Gains used on SATYRR: `u = −K·(q − q_des)`.
pub const DEFAULT_GAINS: [f64; 4] = [-100.0, -315.0, -40.0, -40.0];

/// Action variance assigned to the LQR output.
pub const DEFAULT_SIGMA2_H: f64 = 0.4;

/// Alternative gain sets used to probe sensitivity to the feedback controller.
pub const GAIN_SWEEP: [[f64; 4]; 3] = [
    [-150.0, -350.0, -50.0, -50.0],
    [-50.0, -200.0, -20.0, -20.0],
    [-25.0, -100.0, -10.0, -10.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

impl LinearModel {
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        eigenvalues(&self.a)
    }

    pub fn controllability_rank(&self) -> usize {
        let mut c = DMatrix::<f64>::zeros(4, 4);
        let mut col = self.b;
        for j in 0..4 {
            c.set_column(j, &col);
            col = self.a * col;
        }
        let scale = c.amax().max(1.0);
        c.rank(1e-10 * scale)
    }

    /// Closed-loop matrix `A − B·K`.
    pub fn closed_loop(&self, k: &[f64; 4]) -> Matrix4<f64> {
        self.a - self.b * Vector4::from_column_slice(k).transpose()
    }
}

/// Eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix4<f64>) -> Vec<(f64, f64)> {
    m.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrGains {
    pub k: [f64; 4],
    pub sigma2_h: f64,
}

impl Default for LqrGains {
    fn default() -> Self {
        Self { k: DEFAULT_GAINS, sigma2_h: DEFAULT_SIGMA2_H }
    }
}

impl LqrGains {
    pub fn new(k: [f64; 4], sigma2_h: f64) -> Result<Self> {
        if !(sigma2_h > 0.0) || !sigma2_h.is_finite() {
            return Err(Error::Param(format!("sigma2_h must be positive, got {sigma2_h}")));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("gains must be finite".into()));
        }
        Ok(Self { k, sigma2_h })
    }

    /// Deterministic feedback torque `−K·(q − q_des)`.
    pub fn torque(&self, q: &PlantState, q_des: &PlantState) -> f64 {
        let e = (*q - *q_des).to_array();
        -(0..4).map(|i| self.k[i] * e[i]).sum::<f64>()
    }
}

/// Exact Jacobians of the plant vector field at `q = 0, u = 0`.
pub fn linearize(params: &WipParams) -> Result<LinearModel> {
    params.validate()?;
    let l = params.l_eff();
    let m11 = params.m_total();
    let m12 = params.m0 * l;
    let m22 = params.j_body();
    let det = m11 * m22 - m12 * m12;
    if !(det.abs() > 1e-12 * m11 * m22) {
        return Err(Error::Param("singular mass matrix at the upright equilibrium".into()));
    }
    // Rows of the inverse mass matrix.
    let inv = [[m22 / det, -m12 / det], [-m12 / det, m11 / det]];
    // Generalized-force sensitivities: dF/dθ, dF/dẋ, dF/du.
    let df_dtheta = [0.0, params.m0 * params.g * l];
    let df_dxdot = [-params.friction_coeff * crate::dynamics::C_VISC, 0.0];
    let df_du = [params.gear_ratio, 0.0];

    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    let mut b = Vector4::zeros();
    for row in 0..2 {
        let dot = |f: [f64; 2]| inv[row][0] * f[0] + inv[row][1] * f[1];
        a[(2 + row, 1)] = dot(df_dtheta);
        a[(2 + row, 2)] = dot(df_dxdot);
        b[2 + row] = dot(df_du);
    }
    Ok(LinearModel { a, b })
}

/// Default state weights for retuning; not the source of [`DEFAULT_GAINS`].
pub fn default_q() -> [f64; 4] {
    [100.0, 300.0, 10.0, 10.0]
}

/// Solution of the continuous algebraic Riccati equation.
#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Riccati residual `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = r.clone().try_inverse().expect("R invertible");
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.norm()
}

/// Solve `M·X + X·Mᵀ = C` by Kronecker vectorization. Sized for small `n`.
fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(m) + m.kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Synthesis("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Stabilizing gain via Bass's method: with β above the spectral abscissa of
/// `A`, solve `(A + βI)Z + Z(A + βI)ᵀ = 2BR⁻¹Bᵀ`; then `K = R⁻¹BᵀZ⁻¹`.
fn bass_seed(a: &DMatrix<f64>, b: &DMatrix<f64>, r_inv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::<f64>::identity(n, n) * beta;
    let rhs = b * r_inv * b.transpose() * 2.0;
    let z = solve_lyapunov(&shifted, &rhs)?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("system not controllable (Bass Gramian singular)".into()))?;
    Ok(r_inv * b.transpose() * z_inv)
}

/// Newton–Kleinman iteration for the CARE. Works on any `n`, `m`.
pub fn care_newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.nrows() != r.ncols() {
        return Err(Error::Shape("CARE operand dimensions disagree".into()));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Synthesis("R must be invertible".into()))?;
    let mut k = bass_seed(a, b, &r_inv)?;
    if max_real_eig(&(a - b * &k)) >= 0.0 {
        return Err(Error::Synthesis("no stabilizing seed found".into()));
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    for it in 1..=100 {
        let ac = a - b * &k;
        let rhs = -(q + k.transpose() * r * &k);
        let p_next = solve_lyapunov(&ac.transpose(), &rhs)?;
        let k_next = &r_inv * b.transpose() * &p_next;
        if !p_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Synthesis("Newton-Kleinman iteration diverged".into()));
        }
        let step = (&p_next - &p).norm() / p_next.norm().max(1.0);
        p = p_next;
        k = k_next;
        if step < 1e-14 {
            let residual = care_residual(a, b, q, r, &p);
            return Ok(CareSolution { p, k, residual, iterations: it });
        }
    }
    let residual = care_residual(a, b, q, r, &p);
    if residual < 1e-8 {
        return Ok(CareSolution { p, k, residual, iterations: 100 });
    }
    Err(Error::Synthesis(format!("no convergence (residual {residual:e})")))
}

/// LQR gains for the linearized plant under diagonal-or-full state weight `q`
/// and scalar input weight `r`.
pub fn solve_care(model: &LinearModel, q: &Matrix4<f64>, r: f64, sigma2_h: f64) -> Result<LqrGains> {
    if !(r > 0.0) {
        return Err(Error::Param(format!("R must be positive, got {r}")));
    }
    let sym = (q + q.transpose()) * 0.5;
    if sym.symmetric_eigenvalues().iter().any(|&e| e < -1e-12) {
        return Err(Error::Param("Q must be positive semidefinite".into()));
    }
    let a = DMatrix::from_column_slice(4, 4, model.a.as_slice());
    let b = DMatrix::from_column_slice(4, 1, model.b.as_slice());
    let qd = DMatrix::from_column_slice(4, 4, sym.as_slice());
    let rd = DMatrix::from_element(1, 1, r);
    let sol = care_newton_kleinman(&a, &b, &qd, &rd)?;
    if sol.residual >= 1e-8 {
        return Err(Error::Synthesis(format!("residual {:e} above tolerance", sol.residual)));
    }
    let k = [sol.k[(0, 0)], sol.k[(0, 1)], sol.k[(0, 2)], sol.k[(0, 3)]];
    LqrGains::new(k, sigma2_h)
}

/// The LQR as a Gaussian action source: mean is the feedback torque.
pub fn lqr_action(gains: &LqrGains, q: &PlantState, q_des: &PlantState) -> GaussianAction {
    GaussianAction { mean: gains.torque(q, q_des), variance: gains.sigma2_h }
}

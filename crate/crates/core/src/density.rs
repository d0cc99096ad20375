//! Two-qubit states, the key-basis measurement and the channel reduction
//! used by the security analysis.
//!
//! Basis order is |00>, |01>, |10>, |11> with the first factor belonging to
//! the sender (key bit holder) and the second to the receiver.
//!
//! The usable entropy of a state is the relative entropy between the state
//! and its key-basis dephased version, `S(rho || P rho) = S(P rho) - S(rho)`.
//! For the two-parameter channel family this evaluates to
//! `1 + sum_i eta_i log2 eta_i + h(2 eta_1)`.

use nalgebra::{Complex, Matrix2, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::entropy::{binary_entropy_unchecked, xlog2x};
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type Mat4 = Matrix4<C64>;

const DENSITY_TOL: f64 = 1e-12;
/// Eigenvalues below this are treated as exactly zero.
pub const EIGEN_CUTOFF: f64 = 1e-12;
const SUPPORT_TOL: f64 = 1e-9;

fn c(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

/// Pauli matrix by index: 0 = identity, 1 = x, 2 = y, 3 = z.
pub fn pauli(i: usize) -> Matrix2<C64> {
    let o = c(0.0);
    let l = c(1.0);
    let j = Complex::new(0.0, 1.0);
    match i {
        0 => Matrix2::new(l, o, o, l),
        1 => Matrix2::new(o, l, l, o),
        2 => Matrix2::new(o, -j, j, o),
        3 => Matrix2::new(l, o, o, -l),
        _ => panic!("pauli index {i} out of range"),
    }
}

pub fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// `sigma_i (x) sigma_j` with Pauli indices as in [`pauli`].
pub fn pauli2(i: usize, j: usize) -> Mat4 {
    kron(&pauli(i), &pauli(j))
}

fn max_abs(m: &Mat4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermitian_eigen(m: &Mat4) -> SymmetricEigen<C64, nalgebra::U4> {
    SymmetricEigen::new(*m)
}

/// Von Neumann entropy in bits of a Hermitian matrix's spectrum.
fn spectrum_entropy(m: &Mat4) -> f64 {
    hermitian_eigen(m)
        .eigenvalues
        .iter()
        .filter(|&&l| l > EIGEN_CUTOFF)
        .map(|&l| -xlog2x(l))
        .sum()
}

/// A validated two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitDensity(Mat4);

impl TwoQubitDensity {
    pub fn new(m: Mat4) -> Result<Self> {
        let herm = max_abs(&(m - m.adjoint()));
        if herm > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} != 1")));
        }
        let min = hermitian_eigen(&m).eigenvalues.min();
        if min < -DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(TwoQubitDensity(m))
    }

    /// Normalized projector onto a (not necessarily normalized) pure state.
    pub fn pure(amplitudes: [C64; 4]) -> Result<Self> {
        let v = nalgebra::Vector4::from(amplitudes);
        let n2 = v.norm_squared();
        if n2 == 0.0 {
            return Err(Error::InvalidDensity("zero state vector".into()));
        }
        Ok(TwoQubitDensity(v * v.adjoint() / c(n2)))
    }

    pub fn bell_phi_plus() -> Self {
        let s = c(1.0);
        Self::pure([s, c(0.0), c(0.0), s]).expect("nonzero")
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitDensity(Mat4::identity() / c(4.0))
    }

    /// `G G^dagger / tr` for an arbitrary complex matrix `g`.
    pub fn from_ginibre(g: &Mat4) -> Result<Self> {
        let m = g * g.adjoint();
        let tr = m.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidDensity("zero Ginibre matrix".into()));
        }
        let mut m = m / c(tr);
        // symmetrize away rounding so the Hermiticity check is exact
        m = (m + m.adjoint()) / c(2.0);
        Self::new(m)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let mut ev: Vec<f64> = hermitian_eigen(&self.0).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2], ev[3]]
    }

    pub fn entropy(&self) -> f64 {
        spectrum_entropy(&self.0)
    }

    /// `Tr(op rho)` for a Hermitian observable.
    pub fn expectation(&self, op: &Mat4) -> f64 {
        (op * self.0).trace().re
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &TwoQubitDensity) -> f64 {
        max_abs(&(self.0 - other.0))
    }
}

/// Dephasing in the eigenbasis of a Hermitian observable: keeps only matrix
/// elements between eigenvectors sharing the same eigenvalue.
#[derive(Debug, Clone)]
pub struct Dephasing {
    projectors: Vec<Mat4>,
}

impl Dephasing {
    pub fn from_observable(op: &Mat4) -> Self {
        let eig = hermitian_eigen(op);
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut projectors: Vec<Mat4> = Vec::new();
        let mut last: Option<f64> = None;
        for i in order {
            let lambda = eig.eigenvalues[i];
            let v = eig.eigenvectors.column(i);
            let p = v * v.adjoint();
            match last {
                Some(l) if (lambda - l).abs() < 1e-9 => {
                    *projectors.last_mut().expect("group exists") += p;
                }
                _ => projectors.push(p),
            }
            last = Some(lambda);
        }
        Dephasing { projectors }
    }

    pub fn apply_matrix(&self, m: &Mat4) -> Mat4 {
        self.projectors.iter().map(|p| p * m * p).sum()
    }

    pub fn apply(&self, rho: &TwoQubitDensity) -> TwoQubitDensity {
        TwoQubitDensity(self.apply_matrix(&rho.0))
    }
}

/// The key-basis measurement on the sender's qubit, `P rho = P0 rho P0 + P1 rho P1`.
pub fn key_basis_dephasing() -> Dephasing {
    Dephasing::from_observable(&pauli2(3, 0))
}

/// Dephasing in the eigenbasis of `sigma_z^A - sigma_z^B`.
pub fn z_difference_dephasing() -> Dephasing {
    Dephasing::from_observable(&(pauli2(3, 0) - pauli2(0, 3)))
}

/// Dephasing in the eigenbasis of `sigma_x^A sigma_x^B`.
pub fn xx_dephasing() -> Dephasing {
    Dephasing::from_observable(&pauli2(1, 1))
}

pub fn key_basis_dephase(rho: &TwoQubitDensity) -> TwoQubitDensity {
    key_basis_dephasing().apply(rho)
}

/// Applies the z-difference dephasing followed by the xx dephasing. The
/// result always has the two-parameter channel form.
pub fn reduce_to_channel_form(rho: &TwoQubitDensity) -> TwoQubitDensity {
    xx_dephasing().apply(&z_difference_dephasing().apply(rho))
}

/// Channel parameters of the reduced state. `lambda2` keeps its sign.
pub fn reduce_to_channel(rho: &TwoQubitDensity) -> ChannelState {
    let r = reduce_to_channel_form(rho);
    let m = r.matrix();
    let lambda1 = (2.0 * (m[(0, 0)].re + m[(3, 3)].re) - 1.0).clamp(-1.0, 1.0);
    let bound = (1.0 + lambda1) / 2.0;
    let lambda2 = (2.0 * m[(0, 3)].re).clamp(-bound, bound);
    ChannelState { lambda1, lambda2 }
}

/// Relative entropy `S(rho || sigma)` in bits.
pub fn relative_entropy(rho: &TwoQubitDensity, sigma: &TwoQubitDensity) -> Result<f64> {
    let neg_s_rho = -rho.entropy();
    let eig = hermitian_eigen(&sigma.0);
    let mut cross = 0.0;
    for j in 0..4 {
        let v = eig.eigenvectors.column(j);
        let weight = (v.adjoint() * rho.0 * v)[(0, 0)].re;
        let s = eig.eigenvalues[j];
        if s > EIGEN_CUTOFF {
            cross += weight * s.log2();
        } else if weight > SUPPORT_TOL {
            return Err(Error::SupportViolation);
        }
    }
    Ok((neg_s_rho - cross).max(0.0))
}

/// `S(rho || P rho)` for the key-basis measurement `P`.
pub fn key_relative_entropy(rho: &TwoQubitDensity) -> f64 {
    relative_entropy(rho, &key_basis_dephase(rho)).expect("pinching never shrinks support")
}

/// The two-parameter simplified channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ChannelState {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let ok = lambda1.is_finite()
            && lambda2.is_finite()
            && lambda1.abs() <= 1.0 + DENSITY_TOL
            && 2.0 * lambda2.abs() <= 1.0 + lambda1 + DENSITY_TOL;
        if ok {
            Ok(ChannelState { lambda1, lambda2 })
        } else {
            Err(Error::InvalidChannel { lambda1, lambda2 })
        }
    }

    /// Same state with `lambda2 >= 0`; the usable entropy is even in `lambda2`.
    pub fn canonical(self) -> Self {
        ChannelState { lambda1: self.lambda1, lambda2: self.lambda2.abs() }
    }

    /// `(eta1, eta2, eta3, eta4)`.
    pub fn eigenvalues(self) -> [f64; 4] {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let e1 = (1.0 - l1) / 4.0;
        [e1, e1, (1.0 + l1 - 2.0 * l2) / 4.0, (1.0 + l1 + 2.0 * l2) / 4.0]
    }

    pub fn density(self) -> TwoQubitDensity {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let mut m = Mat4::zeros();
        m[(0, 0)] = c((1.0 + l1) / 4.0);
        m[(1, 1)] = c((1.0 - l1) / 4.0);
        m[(2, 2)] = c((1.0 - l1) / 4.0);
        m[(3, 3)] = c((1.0 + l1) / 4.0);
        m[(0, 3)] = c(l2 / 2.0);
        m[(3, 0)] = c(l2 / 2.0);
        TwoQubitDensity(m)
    }

    /// Usable entropy of the channel, clamped to `[0, 1]`.
    pub fn usable_entropy(self) -> f64 {
        usable_entropy_raw(self.lambda1, self.lambda2).clamp(0.0, 1.0)
    }
}

/// `1 + sum eta log2 eta + h(2 eta1)` without validation or clamping.
pub(crate) fn usable_entropy_raw(lambda1: f64, lambda2: f64) -> f64 {
    let e1 = ((1.0 - lambda1) / 4.0).max(0.0);
    let e3 = ((1.0 + lambda1 - 2.0 * lambda2.abs()) / 4.0).max(0.0);
    let e4 = ((1.0 + lambda1 + 2.0 * lambda2.abs()) / 4.0).max(0.0);
    1.0 + 2.0 * xlog2x(e1) + xlog2x(e3) + xlog2x(e4) + binary_entropy_unchecked(2.0 * e1)
}

pub fn simplified_density(state: ChannelState) -> TwoQubitDensity {
    state.density()
}

pub fn simplified_eigenvalues(state: ChannelState) -> [f64; 4] {
    state.eigenvalues()
}

pub fn usable_entropy(state: ChannelState) -> f64 {
    state.usable_entropy()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(l1: f64, l2: f64) -> ChannelState {
        ChannelState::new(l1, l2).unwrap()
    }

    #[test]
    fn density_examples() {
        let bell = TwoQubitDensity::bell_phi_plus();
        assert!(ch(1.0, 1.0).density().max_abs_diff(&bell) < 1e-15);
        assert!(ch(0.0, 0.0).density().max_abs_diff(&TwoQubitDensity::maximally_mixed()) < 1e-15);
        let m = ch(1.0, 0.0).density();
        let mut want = Mat4::zeros();
        want[(0, 0)] = c(0.5);
        want[(3, 3)] = c(0.5);
        assert!(max_abs(&(m.matrix() - want)) < 1e-15);
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelState::new(1.1, 0.0).is_err());
        assert!(ChannelState::new(0.0, 0.6).is_err());
        assert!(ChannelState::new(-1.0, 0.0).is_ok());
        assert!(ChannelState::new(0.0, -0.5).is_ok());
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(ch(1.0, 1.0).eigenvalues(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ch(0.0, 0.0).eigenvalues(), [0.25; 4]);
        let e = ch(0.8, 0.8).eigenvalues();
        for (a, b) in e.iter().zip([0.05, 0.05, 0.05, 0.85]) {
            assert!((a - b).abs() < 1e-15);
        }
        // generic eigendecomposition agrees
        let mut sorted = e;
        sorted.sort_by(f64::total_cmp);
        let numeric = ch(0.8, 0.8).density().eigenvalues();
        for (a, b) in sorted.iter().zip(numeric) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn usable_entropy_examples() {
        assert!((ch(1.0, 1.0).usable_entropy() - 1.0).abs() < 1e-15);
        assert!(ch(1.0, 0.0).usable_entropy().abs() < 1e-15);
        assert!(ch(0.0, 0.0).usable_entropy().abs() < 1e-15);
        // printed variant with -h(2 eta1) would give -2 for the maximally mixed state
        let printed = 1.0 + 4.0 * xlog2x(0.25) - binary_entropy_unchecked(0.5);
        assert!((printed + 2.0).abs() < 1e-15);
    }

    #[test]
    fn usable_entropy_is_even_in_lambda2() {
        for &(l1, l2) in &[(0.5, 0.3), (0.9, 0.1), (-0.2, 0.35), (1.0, 0.999)] {
            assert_eq!(ch(l1, l2).usable_entropy(), ch(l1, -l2).usable_entropy());
        }
    }

    #[test]
    fn relative_entropy_examples() {
        let rho = ch(0.5, 0.3).density();
        assert!(relative_entropy(&rho, &rho).unwrap().abs() < 1e-12);
        let bell = TwoQubitDensity::bell_phi_plus();
        let mixed = TwoQubitDensity::maximally_mixed();
        assert!((relative_entropy(&bell, &mixed).unwrap() - 2.0).abs() < 1e-12);
        let dephased = key_basis_dephase(&rho);
        let rel = relative_entropy(&rho, &dephased).unwrap();
        assert!((rel - ch(0.5, 0.3).usable_entropy()).abs() < 1e-12);
    }

    #[test]
    fn relative_entropy_support_violation() {
        let bell = TwoQubitDensity::bell_phi_plus();
        let cc = ch(1.0, 0.0).density();
        assert!(relative_entropy(&cc, &bell).is_err());
    }

    #[test]
    fn key_basis_dephase_examples() {
        let diag = ch(0.3, 0.0).density();
        assert!(key_basis_dephase(&diag).max_abs_diff(&diag) < 1e-15);
        let bell = TwoQubitDensity::bell_phi_plus();
        assert!(key_basis_dephase(&bell).max_abs_diff(&ch(1.0, 0.0).density()) < 1e-15);
        let s = ch(0.4, -0.2);
        let d = key_basis_dephase(&s.density());
        assert!(d.max_abs_diff(&ch(0.4, 0.0).density()) < 1e-15);
        // idempotent
        assert!(key_basis_dephase(&d).max_abs_diff(&d) < 1e-15);
    }

    #[test]
    fn reduction_examples() {
        let r = reduce_to_channel(&TwoQubitDensity::bell_phi_plus());
        assert!((r.lambda1 - 1.0).abs() < 1e-14 && (r.lambda2 - 1.0).abs() < 1e-14);
        let r = reduce_to_channel(&TwoQubitDensity::maximally_mixed());
        assert!(r.lambda1.abs() < 1e-14 && r.lambda2.abs() < 1e-14);
        // channel states are fixed points
        let s = ch(0.6, 0.25);
        let back = reduce_to_channel_form(&s.density());
        assert!(back.max_abs_diff(&s.density()) < 1e-14);
    }

    #[test]
    fn dephasing_groups_degenerate_eigenvalues() {
        assert_eq!(key_basis_dephasing().projectors.len(), 2);
        assert_eq!(z_difference_dephasing().projectors.len(), 3);
        assert_eq!(xx_dephasing().projectors.len(), 2);
    }

    #[test]
    fn invalid_density_rejected() {
        let mut m = Mat4::identity() / c(4.0);
        m[(0, 1)] = c(0.1);
        assert!(TwoQubitDensity::new(m).is_err());
        assert!(TwoQubitDensity::new(Mat4::identity()).is_err());
        let neg = Mat4::from_diagonal(&nalgebra::Vector4::new(c(0.6), c(0.6), c(-0.1), c(-0.1)));
        assert!(TwoQubitDensity::new(neg).is_err());
    }
}

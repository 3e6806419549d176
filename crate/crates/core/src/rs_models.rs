//! Reconfigurable-surface models: which reflection matrices each hardware
//! class can realize, and the microwave-network map between a reflection
//! matrix and the impedance matrix of the terminating network.
//!
//! The four models form a strict nesting of constraint sets:
//!
//! | kind  | structure            | passivity                 |
//! |-------|----------------------|---------------------------|
//! | RIS   | diagonal             | `|Θ_ii| = 1` (lossless)   |
//! | ARIS  | diagonal             | `|Θ_ii|² ≤ 1`             |
//! | BDRIS | symmetric (`Θ = Θᵀ`) | `‖Θ‖₂² ≤ 1`               |
//! | FRIS  | none                 | `‖Θ‖₂² ≤ 1`               |
//!
//! so every RIS configuration is a valid ARIS one, and so on up to FRIS.
//! The passivity boundary `‖Θ‖₂² = 1` counts as feasible (closed set).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matcore::{is_finite, pinv, spectral_norm, CMat, PINV_REL_CUTOFF};

/// Default absolute (Frobenius) tolerance for structure defects: safely above
/// accumulated solver rounding, far below physical significance.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// The reconfigurable-surface hardware model a reflection matrix is checked
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RsKind {
    /// Phase-only diagonal surface, unit-modulus entries.
    Ris,
    /// Amplitude-adjustable diagonal surface.
    Aris,
    /// Beyond-diagonal surface: symmetric reflection matrix.
    BdRis,
    /// Fully reconfigurable surface: arbitrary passive reflection matrix.
    Fris,
}

impl RsKind {
    pub const ALL: [RsKind; 4] = [RsKind::Ris, RsKind::Aris, RsKind::BdRis, RsKind::Fris];

    pub fn label(self) -> &'static str {
        match self {
            RsKind::Ris => "ris",
            RsKind::Aris => "aris",
            RsKind::BdRis => "bdris",
            RsKind::Fris => "fris",
        }
    }

    /// True for the diagonal hardware classes (RIS, ARIS).
    pub fn is_diagonal(self) -> bool {
        matches!(self, RsKind::Ris | RsKind::Aris)
    }
}

impl std::fmt::Display for RsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for RsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ris" => Ok(RsKind::Ris),
            "aris" => Ok(RsKind::Aris),
            "bdris" | "bd-ris" => Ok(RsKind::BdRis),
            "fris" => Ok(RsKind::Fris),
            other => Err(Error::InvalidConfig(format!(
                "unknown RS kind '{other}' (expected ris|aris|bdris|fris)"
            ))),
        }
    }
}

/// How far a reflection matrix is from the constraint set of a given kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// All structure defects relevant to the kind are within tolerance.
    pub structure_ok: bool,
    /// `1 − ‖Θ‖₂²` (for diagonal kinds: `1 − max_i |Θ_ii|²`); negative when
    /// the passive bound is violated.
    pub passivity_margin: f64,
    /// `‖Θ − Θᵀ‖_F`.
    pub symmetry_defect: f64,
    /// Frobenius norm of the off-diagonal part.
    pub diagonality_defect: f64,
}

impl ConstraintReport {
    /// Passivity within `tol` of the (closed) feasible set.
    pub fn passive(&self, tol: f64) -> bool {
        self.passivity_margin >= -tol
    }

    /// Structure and passivity both satisfied within `tol`.
    pub fn satisfied(&self, tol: f64) -> bool {
        self.structure_ok && self.passive(tol)
    }
}

/// Evaluate the constraint set of `kind` at `theta`.
///
/// `tol` bounds the structure defects (absolute, Frobenius). For diagonal
/// kinds passivity is evaluated entry-wise (`max_i |Θ_ii|²`), which equals the
/// spectral norm on the diagonal structure itself.
///
/// # Panics
/// If `theta` is not square.
pub fn check(theta: &CMat, kind: RsKind, tol: f64) -> ConstraintReport {
    assert!(theta.is_square(), "constraint check needs a square reflection matrix");
    let n = theta.nrows();

    let symmetry_defect = (theta - theta.transpose()).norm();
    let diagonality_defect = {
        let mut off = theta.clone();
        for i in 0..n {
            off[(i, i)] = Complex64::ZERO;
        }
        off.norm()
    };
    let max_diag_mod = (0..n).map(|i| theta[(i, i)].norm()).fold(0.0_f64, f64::max);

    let passivity_margin = if kind.is_diagonal() {
        1.0 - max_diag_mod * max_diag_mod
    } else {
        let s = spectral_norm(theta);
        1.0 - s * s
    };

    let unit_modulus_defect =
        (0..n).map(|i| (theta[(i, i)].norm() - 1.0).abs()).fold(0.0_f64, f64::max);

    let structure_ok = match kind {
        RsKind::Ris => diagonality_defect <= tol && unit_modulus_defect <= tol,
        RsKind::Aris => diagonality_defect <= tol,
        RsKind::BdRis => symmetry_defect <= tol,
        RsKind::Fris => true,
    };

    ConstraintReport { structure_ok, passivity_margin, symmetry_defect, diagonality_defect }
}

/// Invert `A` after confirming it is numerically full rank (relative
/// singular-value floor `1e-12`); at full rank the SVD pseudoinverse *is* the
/// inverse.
fn checked_inverse(a: &CMat, context: &'static str) -> Result<CMat> {
    let sv = crate::matcore::singular_values(a);
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    if max == 0.0 || min <= PINV_REL_CUTOFF * max {
        return Err(Error::SingularMatrix { context });
    }
    Ok(pinv(a))
}

/// Reflection matrix of a surface terminated by impedance network `Z`
/// (normalized units): `Θ = (Z+I)⁻¹(Z−I)`.
pub fn impedance_to_reflection(z: &CMat) -> Result<CMat> {
    if !z.is_square() {
        return Err(Error::DimensionMismatch {
            context: "impedance_to_reflection",
            expected: "square Z".to_string(),
            got: format!("{}×{}", z.nrows(), z.ncols()),
        });
    }
    if !is_finite(z) {
        return Err(Error::NonFinite { context: "impedance_to_reflection" });
    }
    let n = z.nrows();
    let eye = CMat::identity(n, n);
    let inv = checked_inverse(&(z + &eye), "impedance_to_reflection: Z + I")?;
    Ok(inv * (z - &eye))
}

/// Impedance network realizing reflection matrix `Θ`: `Z = (I+Θ)(I−Θ)⁻¹`.
///
/// A symmetric `Θ` maps to a symmetric `Z` (reciprocal network). `Θ` with an
/// eigenvalue at `+1` corresponds to the open-circuit limit and has no finite
/// impedance representation.
pub fn reflection_to_impedance(theta: &CMat) -> Result<CMat> {
    if !theta.is_square() {
        return Err(Error::DimensionMismatch {
            context: "reflection_to_impedance",
            expected: "square Θ".to_string(),
            got: format!("{}×{}", theta.nrows(), theta.ncols()),
        });
    }
    if !is_finite(theta) {
        return Err(Error::NonFinite { context: "reflection_to_impedance" });
    }
    let n = theta.nrows();
    let eye = CMat::identity(n, n);
    let inv = checked_inverse(&(&eye - theta), "reflection_to_impedance: I − Θ (open-circuit limit)")?;
    Ok((&eye + theta) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{cn01, rand_cmat};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_phases(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        use rand::Rng;
        CMat::from_diagonal(&crate::matcore::CVec::from_fn(n, |_, _| {
            Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
        }))
    }

    #[test]
    fn identity_is_valid_bdris_at_the_boundary() {
        let r = check(&CMat::identity(3, 3), RsKind::BdRis, STRUCTURE_TOL);
        assert!(r.structure_ok);
        assert_relative_eq!(r.passivity_margin, 0.0, epsilon = 1e-12);
        assert!(r.satisfied(STRUCTURE_TOL));
    }

    #[test]
    fn phase_diagonal_is_valid_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let theta = diag_phases(&mut rng, 4);
        for kind in RsKind::ALL {
            let r = check(&theta, kind, STRUCTURE_TOL);
            assert!(r.structure_ok, "{kind}");
            assert!(r.passive(STRUCTURE_TOL), "{kind}");
        }
    }

    #[test]
    fn scaled_identity_violates_passivity() {
        let theta = CMat::identity(2, 2) * Complex64::new(1.1, 0.0);
        for kind in [RsKind::Aris, RsKind::BdRis, RsKind::Fris] {
            let r = check(&theta, kind, STRUCTURE_TOL);
            assert_relative_eq!(r.passivity_margin, -0.21, epsilon = 1e-12);
            assert!(!r.passive(STRUCTURE_TOL), "{kind}");
        }
    }

    #[test]
    fn constraint_sets_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            // RIS member
            let ris = diag_phases(&mut rng, 3);
            assert!(check(&ris, RsKind::Aris, STRUCTURE_TOL).satisfied(STRUCTURE_TOL));
            // ARIS member: diagonal, entries scaled inside the disc
            let aris = &ris * Complex64::new(0.7, 0.0);
            assert!(check(&aris, RsKind::BdRis, STRUCTURE_TOL).satisfied(STRUCTURE_TOL));
            // BDRIS member: random symmetric, scaled passive
            let g = rand_cmat(&mut rng, 3, 3);
            let sym = (&g + g.transpose()) * Complex64::new(0.5, 0.0);
            let bdris = &sym * Complex64::new(0.9 / spectral_norm(&sym).max(1e-9), 0.0);
            assert!(check(&bdris, RsKind::Fris, STRUCTURE_TOL).satisfied(STRUCTURE_TOL));
        }
    }

    #[test]
    fn diagonal_spectral_norm_is_max_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let d = crate::matcore::CVec::from_fn(5, |_, _| cn01(&mut rng));
        let theta = CMat::from_diagonal(&d);
        let max_mod = d.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        assert_relative_eq!(spectral_norm(&theta), max_mod, epsilon = 1e-13);
    }

    #[test]
    fn short_circuit_reflects_with_sign_flip() {
        let theta = impedance_to_reflection(&CMat::zeros(3, 3)).unwrap();
        assert_relative_eq!((theta + CMat::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reactive_impedance_gives_unit_modulus() {
        let z = CMat::identity(3, 3) * Complex64::new(0.0, 1.0);
        let theta = impedance_to_reflection(&z).unwrap();
        for i in 0..3 {
            assert_relative_eq!(theta[(i, i)].norm(), 1.0, epsilon = 1e-12);
        }
        // (j−1)/(j+1) = j
        assert_relative_eq!((theta[(0, 0)] - Complex64::new(0.0, 1.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matched_load_and_short_circuit_reverse() {
        let z = reflection_to_impedance(&CMat::zeros(2, 2)).unwrap();
        assert_relative_eq!((z - CMat::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
        let z = reflection_to_impedance(&(CMat::identity(2, 2) * Complex64::new(-1.0, 0.0))).unwrap();
        assert_relative_eq!(z.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn impedance_round_trip() {
        // Symmetric Z with eigenvalue real parts > 0: identity plus a small
        // symmetric perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let g = rand_cmat(&mut rng, 4, 4);
            let z = CMat::identity(4, 4) + (&g + g.transpose()) * Complex64::new(0.2, 0.0);
            let theta = impedance_to_reflection(&z).unwrap();
            let z_back = reflection_to_impedance(&theta).unwrap();
            assert!((&z_back - &z).norm() / z.norm() < 1e-10);
        }
    }

    #[test]
    fn symmetric_reflection_maps_to_symmetric_impedance() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let g = rand_cmat(&mut rng, 4, 4);
            let sym = &g + g.transpose();
            let theta = &sym * Complex64::new(0.4 / spectral_norm(&sym).max(1e-9), 0.0);
            let z = reflection_to_impedance(&theta).unwrap();
            assert!((&z - z.transpose()).norm() < 1e-12 * z.norm().max(1.0));
        }
    }

    #[test]
    fn open_circuit_limit_is_an_error() {
        let theta = CMat::identity(2, 2);
        assert!(matches!(
            reflection_to_impedance(&theta),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn singular_z_plus_i_is_an_error() {
        let z = CMat::identity(2, 2) * Complex64::new(-1.0, 0.0);
        assert!(matches!(impedance_to_reflection(&z), Err(Error::SingularMatrix { .. })));
    }
}

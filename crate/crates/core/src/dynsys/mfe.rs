//! Right-hand side of the nine-mode Galerkin model of sinusoidal shear flow.
//!
//! `dq_i/dt = (F δ_i0 - L_i q_i) / Re + Σ C q_j q_k`
//!
//! with geometric constants built from the wavenumbers
//! `α = 2π/Lx`, `β = π/2`, `γ = 2π/Lz`. The quadratic couplings are listed in
//! [`QUADRATIC_TERMS`] as (target mode, factor mode, factor mode, coefficient
//! expression), zero-based. They conserve `Σ q_i²`.

use super::{ControlAction, MfeParams, StateVector, N_MODES};
use crate::error::{Error, Result};

/// Closed-form coefficient expressions of the quadratic couplings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coef {
    /// `√(3/2) βγ / κ_βγ`
    BgOverKbg,
    /// `√(3/2) βγ / κ_αβγ`
    BgOverKabg,
    /// `10 γ² / (3√6 κ_αγ)`
    TenGammaSq,
    /// `γ² / (√6 κ_αγ)`
    GammaSq,
    /// `αβγ / (√6 κ_αγ κ_αβγ)`
    AbgAgAbg,
    /// `2αβγ / (√6 κ_αγ κ_βγ)`
    TwoAbgAgBg,
    /// `(β²(3α²+γ²) − 3γ²(α²+γ²)) / (√6 κ_αγ κ_βγ κ_αβγ)`
    Mode3Mode48,
    /// `α / √6`
    Alpha,
    /// `10 α² / (3√6 κ_αγ)`
    TenAlphaSq,
    /// `√(3/2) αβγ / (κ_αγ κ_βγ)`
    AbgAgBgSqrt,
    /// `√(3/2) α²β² / (κ_αγ κ_βγ κ_αβγ)`
    AlphaBetaSq,
    /// `α² / (√6 κ_αγ)`
    AlphaSq,
    /// `10 (α² − γ²) / (3√6 κ_αγ)`
    TenAlphaGammaDiff,
    /// `2√(2/3) αβγ / (κ_αγ κ_βγ)`
    TwoSqrtTwoThirdsAbg,
    /// `(γ² − α²) / (√6 κ_αγ)`
    GammaAlphaDiff,
    /// `αβγ / (√6 κ_αγ κ_βγ)`
    AbgAgBg,
    /// `2αβγ / (√6 κ_αγ κ_αβγ)`
    TwoAbgAgAbg,
    /// `γ²(3α² − β² + 3γ²) / (√6 κ_αγ κ_βγ κ_αβγ)`
    Mode8Mode34,
}

impl Coef {
    pub fn value(self, alpha: f64, beta: f64, gamma: f64) -> f64 {
        let (a, b, g) = (alpha, beta, gamma);
        let kag = (a * a + g * g).sqrt();
        let kbg = (b * b + g * g).sqrt();
        let kabg = (a * a + b * b + g * g).sqrt();
        let s6 = 6f64.sqrt();
        let s32 = 1.5f64.sqrt();
        let abg = a * b * g;
        match self {
            Coef::BgOverKbg => s32 * b * g / kbg,
            Coef::BgOverKabg => s32 * b * g / kabg,
            Coef::TenGammaSq => 10.0 * g * g / (3.0 * s6 * kag),
            Coef::GammaSq => g * g / (s6 * kag),
            Coef::AbgAgAbg => abg / (s6 * kag * kabg),
            Coef::TwoAbgAgBg => 2.0 * abg / (s6 * kag * kbg),
            Coef::Mode3Mode48 => {
                (b * b * (3.0 * a * a + g * g) - 3.0 * g * g * (a * a + g * g))
                    / (s6 * kag * kbg * kabg)
            }
            Coef::Alpha => a / s6,
            Coef::TenAlphaSq => 10.0 * a * a / (3.0 * s6 * kag),
            Coef::AbgAgBgSqrt => s32 * abg / (kag * kbg),
            Coef::AlphaBetaSq => s32 * a * a * b * b / (kag * kbg * kabg),
            Coef::AlphaSq => a * a / (s6 * kag),
            Coef::TenAlphaGammaDiff => 10.0 * (a * a - g * g) / (3.0 * s6 * kag),
            Coef::TwoSqrtTwoThirdsAbg => 2.0 * (2.0f64 / 3.0).sqrt() * abg / (kag * kbg),
            Coef::GammaAlphaDiff => (g * g - a * a) / (s6 * kag),
            Coef::AbgAgBg => abg / (s6 * kag * kbg),
            Coef::TwoAbgAgAbg => 2.0 * abg / (s6 * kag * kabg),
            Coef::Mode8Mode34 => {
                g * g * (3.0 * a * a - b * b + 3.0 * g * g) / (s6 * kag * kbg * kabg)
            }
        }
    }
}

/// `(target, j, k, sign, coefficient)` for each term `sign · C · q_j q_k`.
pub const QUADRATIC_TERMS: [(usize, usize, usize, f64, Coef); 34] = {
    use Coef::*;
    [
        // mode 1
        (0, 5, 7, -1.0, BgOverKabg),
        (0, 1, 2, 1.0, BgOverKbg),
        // mode 2
        (1, 3, 5, 1.0, TenGammaSq),
        (1, 4, 6, -1.0, GammaSq),
        (1, 4, 7, -1.0, AbgAgAbg),
        (1, 0, 2, -1.0, BgOverKbg),
        (1, 2, 8, -1.0, BgOverKbg),
        // mode 3
        (2, 3, 6, 1.0, TwoAbgAgBg),
        (2, 4, 5, 1.0, TwoAbgAgBg),
        (2, 3, 7, 1.0, Mode3Mode48),
        // mode 4
        (3, 0, 4, -1.0, Alpha),
        (3, 1, 5, -1.0, TenAlphaSq),
        (3, 2, 6, -1.0, AbgAgBgSqrt),
        (3, 2, 7, -1.0, AlphaBetaSq),
        (3, 4, 8, -1.0, Alpha),
        // mode 5
        (4, 0, 3, 1.0, Alpha),
        (4, 1, 6, 1.0, AlphaSq),
        (4, 1, 7, -1.0, AbgAgAbg),
        (4, 3, 8, 1.0, Alpha),
        (4, 2, 5, 1.0, TwoAbgAgBg),
        // mode 6
        (5, 0, 6, 1.0, Alpha),
        (5, 0, 7, 1.0, BgOverKabg),
        (5, 1, 3, 1.0, TenAlphaGammaDiff),
        (5, 2, 4, -1.0, TwoSqrtTwoThirdsAbg),
        (5, 6, 8, 1.0, Alpha),
        (5, 7, 8, 1.0, BgOverKabg),
        // mode 7
        (6, 0, 5, -1.0, Alpha),
        (6, 5, 8, -1.0, Alpha),
        (6, 1, 4, 1.0, GammaAlphaDiff),
        (6, 2, 3, 1.0, AbgAgBg),
        // mode 8
        (7, 1, 4, 1.0, TwoAbgAgAbg),
        (7, 2, 3, 1.0, Mode8Mode34),
        // mode 9
        (8, 1, 2, 1.0, BgOverKbg),
        (8, 5, 7, -1.0, BgOverKabg),
    ]
};

#[derive(Clone, Copy, Debug)]
struct Term {
    target: usize,
    j: usize,
    k: usize,
    coef: f64,
}

/// Evaluated model coefficients for one geometry.
#[derive(Clone, Debug)]
pub struct MfeModel {
    /// Viscous damping rates `L_i`, divided by Re at evaluation time.
    pub damping: [f64; N_MODES],
    /// Constant body forcing on mode 1, divided by Re at evaluation time.
    pub forcing: f64,
    terms: Vec<Term>,
}

impl MfeModel {
    pub fn new(params: &MfeParams) -> Self {
        let (a, b, g) = params.wavenumbers();
        let (a2, b2, g2) = (a * a, b * b, g * g);
        let damping = [
            b2,
            4.0 * b2 / 3.0 + g2,
            b2 + g2,
            (3.0 * a2 + 4.0 * b2) / 3.0,
            a2 + b2,
            (3.0 * a2 + 4.0 * b2 + 3.0 * g2) / 3.0,
            a2 + b2 + g2,
            a2 + b2 + g2,
            9.0 * b2,
        ];
        let terms = QUADRATIC_TERMS
            .iter()
            .map(|&(target, j, k, sign, c)| Term {
                target,
                j,
                k,
                coef: sign * c.value(a, b, g),
            })
            .collect();
        MfeModel {
            damping,
            forcing: b2,
            terms,
        }
    }

    /// Re-independent part of the right-hand side.
    pub fn quadratic(&self, q: &[f64; N_MODES]) -> [f64; N_MODES] {
        let mut d = [0.0; N_MODES];
        for t in &self.terms {
            d[t.target] += t.coef * q[t.j] * q[t.k];
        }
        d
    }

    #[inline]
    pub(crate) fn rhs_raw(&self, q: &[f64; N_MODES], re: f64) -> [f64; N_MODES] {
        let mut d = self.quadratic(q);
        let inv_re = 1.0 / re;
        for i in 0..N_MODES {
            d[i] -= self.damping[i] * q[i] * inv_re;
        }
        d[0] += self.forcing * inv_re;
        d
    }

    /// Time derivative `dq/dt` under actuation `a`.
    pub fn rhs(&self, q: &StateVector, a: ControlAction) -> Result<StateVector> {
        if !(a.re.is_finite() && a.re > 0.0) {
            return Err(Error::InvalidParameter(format!("Reynolds number {} must be > 0", a.re)));
        }
        StateVector::new(*q.as_array())?;
        Ok(StateVector::new_unchecked(self.rhs_raw(q.as_array(), a.re)))
    }
}

/// Convenience wrapper building the coefficients on every call.
pub fn mfe_rhs(q: &StateVector, a: ControlAction, params: &MfeParams) -> Result<StateVector> {
    MfeModel::new(params).rhs(q, a)
}

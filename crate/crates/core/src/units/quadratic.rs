use serde::{Deserialize, Serialize};

use super::{Sequence, S6Params};
use crate::discretization::zoh;
use crate::error::{Error, Result};
use crate::numerics::{softplus, ComplexDiag, C64};

/// The quadratic form through which a single-layer S6 with fixed `Delta` and
/// broadcast scalar input sees its whole sequence:
/// `F(u) = u_L * sum_j Qbar Abar^(L-j) Pbar u_j^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEncoder {
    /// `A^-1 (Abar - I) B M`, length `n`.
    pub p_bar: Vec<C64>,
    /// `M^T C`, length `n`.
    pub q_bar: Vec<C64>,
    pub a_bar: ComplexDiag,
}

impl QuadraticEncoder {
    /// Builds the encoder of an S6 unit whose `d`-dimensional input is the
    /// scalar input broadcast through `m` (length `d`), at sampling interval
    /// `delta`.
    pub fn new(params: &S6Params, m: &[f64], delta: f64) -> Result<Self> {
        params.validate()?;
        if m.len() != params.width() {
            return Err(Error::shape(format!("encoder of width {}", params.width()), m.len()));
        }
        let bm = params.b.mul_real(m);
        let pair = zoh(&params.a, &bm, delta)?;
        Ok(Self {
            p_bar: pair.b_bar,
            q_bar: params.c.left_mul_real(m),
            a_bar: pair.a_bar,
        })
    }

    /// The encoder seen by channel `i` when `w = 0`: `Delta = softplus(b^(i))`.
    pub fn for_channel(params: &S6Params, m: &[f64], i: usize) -> Result<Self> {
        if params.w.iter().any(|&w| w != 0.0) {
            return Err(Error::Unsupported("the quadratic encoder requires w = 0".into()));
        }
        let b = *params
            .b_delta
            .get(i)
            .ok_or_else(|| Error::Config(format!("channel {i} out of range")))?;
        Self::new(params, m, softplus(b)?)
    }
}

/// Evaluates `F(u)` for a width-1 sequence ending in `u_L = 1`.
pub fn quadratic_encoder(enc: &QuadraticEncoder, u: &Sequence) -> Result<f64> {
    if u.width() != 1 {
        return Err(Error::shape("a width-1 sequence", u.width()));
    }
    let l = u.len();
    let u_last = u.get(l - 1, 0);
    if u_last != 1.0 {
        return Err(Error::Precondition(format!("u_L must be 1, got {u_last}")));
    }
    // Horner over positions: s <- Abar s + Pbar u_j^2.
    let mut s = vec![C64::new(0.0, 0.0); enc.p_bar.len()];
    for k in 0..l {
        let u2 = u.get(k, 0) * u.get(k, 0);
        for ((sm, a), p) in s.iter_mut().zip(enc.a_bar.entries()).zip(&enc.p_bar) {
            *sm = a * *sm + p * u2;
        }
    }
    let f: C64 = enc.q_bar.iter().zip(&s).map(|(q, x)| q * x).sum();
    Ok(u_last * f.re)
}

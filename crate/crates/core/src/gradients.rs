//! Input Jacobians, relative gradients, closed-form parameter gradients for the
//! single-channel units, reverse-mode gradients of the single-layer model, and
//! a central finite-difference oracle.
//!
//! Complex quantities carry adjoints in the convention
//! `zbar = df/dRe(z) + i df/dIm(z)`, so for a holomorphic `z = g(w)` the chain
//! rule reads `wbar = zbar * conj(g'(w))`.

use serde::{Deserialize, Serialize};

use crate::discretization::{dot, s4d_delta};
use crate::error::{Error, Result};
use crate::model::{forward_parts, Encoder, LossKind, ModelParams};
use crate::numerics::{phi_prime, sigmoid, softplus, C64};
use crate::par;
use crate::units::{
    Channel, S4DParams, S6Params, Sequence, Unit, UnitKind, ZohCache,
};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Jacobians of the last output vector with respect to every input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputJacobians {
    pub unit: UnitKind,
    pub width: usize,
    /// `jacobians[k][t * width + s] = d y_L^(t) / d u_k^(s)`.
    pub jacobians: Vec<Vec<f64>>,
}

impl InputJacobians {
    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    pub fn get(&self, k: usize, t: usize, s: usize) -> f64 {
        self.jacobians[k][t * self.width + s]
    }

    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.jacobians
            .iter()
            .map(|j| j.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Adjoints of one channel's last output with respect to everything the
/// channel recurrence consumes, for a unit seed on `y_L`.
#[derive(Debug, Clone)]
pub(crate) struct ChannelAdjoint {
    pub y_last: f64,
    pub a: Vec<C64>,
    pub delta: Vec<f64>,
    /// `L x n`.
    pub inject: Vec<C64>,
    pub drive: Vec<f64>,
    /// Adjoint of the readout row at the last position.
    pub readout: Vec<C64>,
}

/// Forward sweep storing states and discretizations, then the reverse sweep.
pub(crate) fn channel_adjoint(ch: &Channel) -> ChannelAdjoint {
    let l = ch.deltas.len();
    let n = ch.a.len();
    let mut states = vec![ZERO; l * n];
    let mut disc = Vec::with_capacity(l * n);
    let mut zoh = ZohCache::new(ch.a);
    let mut x = vec![ZERO; n];
    for k in 0..l {
        let pairs = zoh.at(ch.deltas[k]);
        for m in 0..n {
            let (ab, g) = pairs[m];
            x[m] = ab * x[m] + g * ch.inject.at(k, m, n) * ch.drive[k];
        }
        states[k * n..(k + 1) * n].copy_from_slice(&x);
        disc.extend_from_slice(pairs);
    }
    let mut y_last = 0.0;
    for m in 0..n {
        y_last += (ch.readout.at(l - 1, m, n) * x[m]).re;
    }
    let mut xbar: Vec<C64> = (0..n).map(|m| ch.readout.at(l - 1, m, n).conj()).collect();
    let readout = x.iter().map(|x| x.conj()).collect();
    let mut adj = ChannelAdjoint {
        y_last,
        a: vec![ZERO; n],
        delta: vec![0.0; l],
        inject: vec![ZERO; l * n],
        drive: vec![0.0; l],
        readout,
    };
    let mut dg_da = vec![ZERO; n];
    let mut dg_delta = f64::NAN;
    for r in (0..l).rev() {
        let delta = ch.deltas[r];
        let pairs = &disc[r * n..(r + 1) * n];
        if delta != dg_delta {
            for (d, &a) in dg_da.iter_mut().zip(ch.a) {
                *d = delta * delta * phi_prime(a * delta);
            }
            dg_delta = delta;
        }
        let drive = ch.drive[r];
        let mut delta_bar = 0.0;
        let mut drive_bar = 0.0;
        for m in 0..n {
            let (ab, g) = pairs[m];
            let a = ch.a[m];
            let xb = xbar[m];
            let xprev = if r > 0 { states[(r - 1) * n + m] } else { ZERO };
            let v = ch.inject.at(r, m, n);
            let ab_bar = xb * xprev.conj();
            let g_bar = xb * (v * drive).conj();
            adj.inject[r * n + m] = xb * g.conj() * drive;
            drive_bar += (xb * (g * v).conj()).re;
            delta_bar += (ab_bar * (a * ab).conj()).re + (g_bar * ab.conj()).re;
            adj.a[m] += ab_bar * (ab * delta).conj() + g_bar * dg_da[m].conj();
            xbar[m] = xb * ab.conj();
        }
        adj.delta[r] = delta_bar;
        adj.drive[r] = drive_bar;
    }
    adj
}

/// Channel adjoints of every channel of `unit` on input `u`.
pub(crate) fn unit_adjoints(unit: &Unit, u: &Sequence) -> Result<Vec<ChannelAdjoint>> {
    let f = |_: usize, ch: &Channel| channel_adjoint(ch);
    match unit {
        Unit::S4d(p) => p.map_channels(u, f),
        Unit::S6(p) => p.map_channels(u, f),
        Unit::B2s6(p) => p.map_channels(u, f),
    }
}

/// Chains channel adjoints, each weighted by the adjoint of its last output,
/// back to the unit input (returned, `L x d`) and, if `grads` is given, adds
/// the parameter adjoints into it.
pub(crate) fn accumulate(
    unit: &Unit,
    u: &Sequence,
    adjs: &[(usize, f64, &ChannelAdjoint)],
    mut grads: Option<&mut Unit>,
) -> Vec<f64> {
    let (l, d) = (u.len(), u.width());
    let mut ubar = vec![0.0; l * d];
    match unit {
        Unit::S4d(p) => {
            let n = p.a.len();
            for &(t, scale, adj) in adjs {
                for r in 0..l {
                    ubar[r * d + t] += scale * adj.drive[r];
                }
                if let Some(Unit::S4d(g)) = grads.as_deref_mut() {
                    add_scaled(&mut g.a.0, &adj.a, scale);
                    let delta = s4d_delta(p.b_delta[t]);
                    g.b_delta[t] += scale * delta * adj.delta.iter().sum::<f64>();
                    for r in 0..l {
                        for m in 0..n {
                            *g.b.get_mut(t, m) += adj.inject[r * n + m] * scale;
                        }
                    }
                    for m in 0..n {
                        *g.c.get_mut(t, m) += adj.readout[m] * scale;
                    }
                }
            }
        }
        Unit::S6(p) => {
            let n = p.a.len();
            let pre: Vec<f64> = (0..l).map(|r| dot(&p.w, u.row(r))).collect();
            let mut zsum = vec![0.0; l];
            let mut vsum = vec![ZERO; l * n];
            let mut csum = vec![ZERO; n];
            for &(t, scale, adj) in adjs {
                let mut db = 0.0;
                for r in 0..l {
                    let z = scale * adj.delta[r] * sigmoid(pre[r] + p.b_delta[t]);
                    zsum[r] += z;
                    db += z;
                    ubar[r * d + t] += scale * adj.drive[r];
                }
                add_scaled(&mut vsum, &adj.inject, scale);
                add_scaled(&mut csum, &adj.readout, scale);
                if let Some(Unit::S6(g)) = grads.as_deref_mut() {
                    g.b_delta[t] += db;
                    add_scaled(&mut g.a.0, &adj.a, scale);
                }
            }
            let g = match grads {
                Some(Unit::S6(g)) => Some(g),
                _ => None,
            };
            chain_selective(
                u,
                0..d,
                &p.w,
                &p.b,
                &p.c,
                &zsum,
                &vsum,
                &csum,
                &mut ubar,
                g.map(|g| (&mut g.w, &mut g.b, &mut g.c)),
            );
        }
        Unit::B2s6(p) => {
            let (n, pw) = (p.a.len(), p.p);
            let mut grads = match grads {
                Some(Unit::B2s6(g)) => Some(g),
                _ => None,
            };
            for j in 0..p.h {
                let blk = &p.blocks[j];
                let cols = j * pw..(j + 1) * pw;
                let mine: Vec<_> = adjs.iter().filter(|(t, _, _)| cols.contains(t)).collect();
                if mine.is_empty() {
                    continue;
                }
                let pre: Vec<f64> = (0..l).map(|r| dot(&blk.w, &u.row(r)[cols.clone()])).collect();
                let mut zsum = vec![0.0; l];
                let mut vsum = vec![ZERO; l * n];
                let mut csum = vec![ZERO; n];
                for &&(t, scale, adj) in &mine {
                    let i = t - j * pw;
                    let mut db = 0.0;
                    for r in 0..l {
                        let z = scale * adj.delta[r] * sigmoid(pre[r] + blk.b_delta[i]);
                        zsum[r] += z;
                        db += z;
                        ubar[r * d + t] += scale * adj.drive[r];
                    }
                    add_scaled(&mut vsum, &adj.inject, scale);
                    add_scaled(&mut csum, &adj.readout, scale);
                    if let Some(g) = grads.as_deref_mut() {
                        g.blocks[j].b_delta[i] += db;
                        add_scaled(&mut g.a.0, &adj.a, scale);
                        if p.use_bias {
                            for r in 0..l {
                                for m in 0..n {
                                    *g.blocks[j].b_bias.get_mut(m, i) += adj.inject[r * n + m] * scale;
                                }
                            }
                        }
                    }
                }
                let g = grads.as_deref_mut().map(|g| {
                    let b = &mut g.blocks[j];
                    (&mut b.w, &mut b.b_weight, &mut b.c)
                });
                chain_selective(
                    u,
                    cols,
                    &blk.w,
                    &blk.b_weight,
                    &blk.c,
                    &zsum,
                    &vsum,
                    &csum,
                    &mut ubar,
                    g,
                );
            }
        }
    }
    ubar
}

/// Shared tail of the selective units: routes the summed step adjoints
/// `zsum` (pre-softplus), injection adjoints `vsum` and readout adjoint `csum`
/// through `w^T u`, `B u` and `u_L^T C` restricted to the input columns `cols`.
#[allow(clippy::too_many_arguments)]
fn chain_selective(
    u: &Sequence,
    cols: std::ops::Range<usize>,
    w: &[f64],
    b: &crate::units::CMat,
    c: &crate::units::CMat,
    zsum: &[f64],
    vsum: &[C64],
    csum: &[C64],
    ubar: &mut [f64],
    mut grads: Option<(&mut Vec<f64>, &mut crate::units::CMat, &mut crate::units::CMat)>,
) {
    let (l, d, n) = (u.len(), u.width(), b.rows);
    let off = cols.start;
    for r in 0..l {
        let row = u.row(r);
        for s in cols.clone() {
            let ls = s - off;
            let mut acc = zsum[r] * w[ls];
            for m in 0..n {
                acc += (vsum[r * n + m] * b.get(m, ls).conj()).re;
            }
            ubar[r * d + s] += acc;
            if let Some((gw, gb, _)) = grads.as_mut() {
                gw[ls] += zsum[r] * row[s];
                for m in 0..n {
                    *gb.get_mut(m, ls) += vsum[r * n + m] * row[s];
                }
            }
        }
    }
    let last = u.row(l - 1);
    for s in cols.clone() {
        let ls = s - off;
        let mut acc = 0.0;
        for m in 0..n {
            acc += (csum[m] * c.get(ls, m).conj()).re;
        }
        ubar[(l - 1) * d + s] += acc;
        if let Some((_, _, gc)) = grads.as_mut() {
            for m in 0..n {
                *gc.get_mut(ls, m) += csum[m] * last[s];
            }
        }
    }
}

fn add_scaled(dst: &mut [C64], src: &[C64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

/// Exact Jacobians `d y_L / d u_k` for every position `k`.
pub fn input_jacobians(unit: &Unit, u: &Sequence) -> Result<InputJacobians> {
    let adjs = unit_adjoints(unit, u)?;
    let (l, d) = (u.len(), u.width());
    let rows = par::map_range(d, |t| accumulate(unit, u, &[(t, 1.0, &adjs[t])], None));
    let jacobians = (0..l)
        .map(|k| {
            let mut j = vec![0.0; d * d];
            for (t, row) in rows.iter().enumerate() {
                j[t * d..(t + 1) * d].copy_from_slice(&row[k * d..(k + 1) * d]);
            }
            j
        })
        .collect();
    Ok(InputJacobians {
        unit: unit.kind(),
        width: d,
        jacobians,
    })
}

/// `S_k = |J_k|_F / sum_k' |J_k'|_F`.
pub fn relative_gradients(j: &InputJacobians) -> Result<Vec<f64>> {
    let norms = j.frobenius_norms();
    let total: f64 = norms.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateAttribution);
    }
    Ok(norms.into_iter().map(|v| v / total).collect())
}

/// Parameter gradients of `y_L` for a single-channel unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGradients {
    /// `d y_L / d w` (S6 only).
    pub d_w: Option<f64>,
    /// `d y_L / d b`.
    pub d_b: f64,
    /// Per-position contributions to `d_b` (`r_j` for S4D, `t_j` for S6).
    pub b_terms: Vec<Vec<C64>>,
    /// Per-position contributions to `d_w` (`s_j`, S6 only).
    pub w_terms: Option<Vec<Vec<C64>>>,
}

fn single_channel(u: &Sequence, d: usize) -> Result<()> {
    if d != 1 || u.width() != 1 {
        return Err(Error::Unsupported(format!(
            "closed-form parameter gradients need d = 1 (unit width {d}, input width {})",
            u.width()
        )));
    }
    Ok(())
}

/// `Abar^(L-j)` for every `j`, by a running product from the end.
fn powers_from_end(a_bar: &[C64], l: usize) -> Vec<Vec<C64>> {
    let mut out = vec![vec![C64::new(1.0, 0.0); a_bar.len()]; l];
    for j in (0..l.saturating_sub(1)).rev() {
        for m in 0..a_bar.len() {
            out[j][m] = out[j + 1][m] * a_bar[m];
        }
    }
    out
}

/// `d y_L / d b` for a one-channel S4D unit:
/// `r_j = Abar^(L-j) u_j exp(b) (Abar + (L-j)(Abar - I)) B`, `d_b = Re(C sum_j r_j)`.
pub fn s4d_grad_b(params: &S4DParams, u: &Sequence) -> Result<ParamGradients> {
    params.validate()?;
    single_channel(u, params.width())?;
    let l = u.len();
    let delta = s4d_delta(params.b_delta[0]);
    let a_bar: Vec<C64> = params.a.entries().iter().map(|a| (a * delta).exp()).collect();
    let b = params.b.row(0);
    let c = params.c.row(0);
    let pw = powers_from_end(&a_bar, l);
    let mut d_b = C64::new(0.0, 0.0);
    let b_terms: Vec<Vec<C64>> = (0..l)
        .map(|j| {
            let uj = u.get(j, 0);
            let lag = (l - 1 - j) as f64;
            let r: Vec<C64> = (0..a_bar.len())
                .map(|m| pw[j][m] * uj * delta * (a_bar[m] + (a_bar[m] - 1.0) * lag) * b[m])
                .collect();
            d_b += r.iter().zip(c).map(|(r, c)| c * r).sum::<C64>();
            r
        })
        .collect();
    Ok(ParamGradients {
        d_w: None,
        d_b: d_b.re,
        b_terms,
        w_terms: None,
    })
}

/// `d y_L / d w` and `d y_L / d b` for a one-channel S6 unit at `w = 0`:
/// `s_j = sigma(b) Abar^(L-j) [Abar B u_j^3 + (Abar - I) B u_j^2 sum_{i>j} u_i]`,
/// `t_j = sigma(b) Abar^(L-j) [Abar B u_j^2 + (L-j)(Abar - I) B u_j^2]`,
/// `d_w = u_L Re(C sum_j s_j)`, `d_b = u_L Re(C sum_j t_j)`.
pub fn s6_grads_closed_form(params: &S6Params, u: &Sequence) -> Result<ParamGradients> {
    params.validate()?;
    single_channel(u, params.width())?;
    if params.w[0] != 0.0 {
        return Err(Error::Unsupported(
            "closed-form S6 gradients are only available at w = 0".into(),
        ));
    }
    let l = u.len();
    let b = params.b_delta[0];
    let delta = softplus(b)?;
    let sig = sigmoid(b);
    let a_bar: Vec<C64> = params.a.entries().iter().map(|a| (a * delta).exp()).collect();
    let bcol = params.b.column(0);
    let c = params.c.row(0);
    let pw = powers_from_end(&a_bar, l);
    let mut suffix = 0.0;
    let mut s_terms = vec![Vec::new(); l];
    let mut t_terms = vec![Vec::new(); l];
    let (mut sw, mut sb) = (ZERO, ZERO);
    for j in (0..l).rev() {
        let uj = u.get(j, 0);
        let u2 = uj * uj;
        let lag = (l - 1 - j) as f64;
        let (mut s_j, mut t_j) = (Vec::with_capacity(a_bar.len()), Vec::with_capacity(a_bar.len()));
        for m in 0..a_bar.len() {
            let (ab, bm) = (a_bar[m], bcol[m]);
            s_j.push(pw[j][m] * sig * (ab * bm * (u2 * uj) + (ab - 1.0) * bm * (u2 * suffix)));
            t_j.push(pw[j][m] * sig * (ab * bm * u2 + (ab - 1.0) * bm * (u2 * lag)));
        }
        sw += s_j.iter().zip(c).map(|(s, c)| c * s).sum::<C64>();
        sb += t_j.iter().zip(c).map(|(t, c)| c * t).sum::<C64>();
        s_terms[j] = s_j;
        t_terms[j] = t_j;
        suffix += uj;
    }
    let u_last = u.get(l - 1, 0);
    Ok(ParamGradients {
        d_w: Some(u_last * sw.re),
        d_b: u_last * sb.re,
        b_terms: t_terms,
        w_terms: Some(s_terms),
    })
}

/// Default relative step of [`finite_difference`].
pub const FD_STEP: f64 = 1e-6;

/// Central differences `(f(x + h_i e_i) - f(x - h_i e_i)) / 2 h_i` with
/// `h_i = eps * max(1, |x_i|)`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {eps} must be positive")));
    }
    let mut probe = x.to_vec();
    Ok((0..x.len())
        .map(|i| {
            let h = eps * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect())
}

/// Mean loss of a batch and its gradient with respect to every model
/// parameter (stored in a `ModelParams` of the same shape).
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: ModelParams,
    /// False when the loss or any gradient entry is not finite.
    pub finite: bool,
}

/// Loss of one prediction.
pub fn sample_loss(loss: LossKind, out: &[f64], target: &[f64]) -> f64 {
    match loss {
        LossKind::Mse => {
            out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64
        }
    }
}

/// Reverse-mode gradient of the mean loss over `batch`.
pub fn bptt(model: &ModelParams, batch: &[(&Sequence, &[f64])], loss: LossKind) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per = par::map_slice(batch, |(u, target)| sample_gradient(model, u, target, loss));
    let mut grads = model.zeros_like();
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for r in per {
        let (l, g) = r?;
        total += l;
        grads.add_scaled(&g, scale);
    }
    let loss = total * scale;
    let finite = loss.is_finite() && grads.flatten().iter().all(|v| v.is_finite());
    Ok(BatchGradient { loss, grads, finite })
}

fn sample_gradient(
    model: &ModelParams,
    u: &Sequence,
    target: &[f64],
    loss: LossKind,
) -> Result<(f64, ModelParams)> {
    let enc = model.encoder.encode(u)?;
    if target.len() != model.out_dim {
        return Err(Error::shape(format!("target of width {}", model.out_dim), target.len()));
    }
    let adjs = unit_adjoints(&model.unit, &enc)?;
    let y_last: Vec<f64> = adjs.iter().map(|a| a.y_last).collect();
    let parts = forward_parts(model, &y_last);
    let o = model.out_dim;
    let d = model.unit.width();
    let value = sample_loss(loss, &parts.out, target);
    let gout: Vec<f64> = match loss {
        LossKind::Mse => parts.out.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / o as f64).collect(),
    };
    let mut g = model.zeros_like();
    let mut zbar = vec![0.0; d];
    for i in 0..d {
        let mut hbar = 0.0;
        for k in 0..o {
            g.n_dec[i * o + k] = parts.h[i] * gout[k];
            hbar += model.n_dec[i * o + k] * gout[k];
        }
        zbar[i] = model.activation.derivative(parts.z[i]) * hbar;
        g.theta[i] = zbar[i];
    }
    let weighted: Vec<_> = adjs
        .iter()
        .enumerate()
        .filter(|(t, _)| zbar[*t] != 0.0)
        .map(|(t, a)| (t, zbar[t], a))
        .collect();
    let ubar = accumulate(&model.unit, &enc, &weighted, Some(&mut g.unit));
    match (&model.encoder, &mut g.encoder) {
        (Encoder::Broadcast { .. }, Encoder::Broadcast { m }) => {
            for r in 0..u.len() {
                let ur = u.get(r, 0);
                for i in 0..d {
                    m[i] += ubar[r * d + i] * ur;
                }
            }
        }
        (Encoder::Affine { .. }, Encoder::Affine { weight, bias, .. }) => {
            let d_in = u.width();
            for r in 0..u.len() {
                let row = u.row(r);
                for i in 0..d {
                    let ub = ubar[r * d + i];
                    bias[i] += ub;
                    for s in 0..d_in {
                        weight[s * d + i] += row[s] * ub;
                    }
                }
            }
        }
        _ => {}
    }
    Ok((value, g))
}

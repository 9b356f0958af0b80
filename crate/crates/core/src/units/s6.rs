use serde::{Deserialize, Serialize};

use super::s4d::collect;
use super::{check_len, check_width, Channel, CMat, Field, Rows, ScanOptions, ScanOutput, Sequence};
use crate::discretization::dot;
use crate::error::Result;
use crate::numerics::{softplus_raw, ComplexDiag};
use crate::par;

/// S6 (the Mamba recurrent unit): shared `A`, `B`, `C` and selection vector
/// `w`; per-channel bias `b^(i)` on the sampling interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S6Params {
    pub a: ComplexDiag,
    /// `n x d`.
    pub b: CMat,
    /// `d x n`, read out as `u_k^T C`.
    pub c: CMat,
    pub w: Vec<f64>,
    pub b_delta: Vec<f64>,
    pub field: Field,
}

impl S6Params {
    pub fn width(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.a.len(), self.width());
        self.a.check_stable()?;
        self.b.check(n, d, "S6 B")?;
        self.c.check(d, n, "S6 C")?;
        check_len(&self.b_delta, d, "S6 b")
    }

    /// `C` is always real; `A` and `B` follow `field`.
    pub fn enforce_field(&mut self) {
        self.c.drop_imaginary();
        if self.field == Field::Real {
            super::drop_imaginary(&mut self.a.0);
            self.b.drop_imaginary();
        }
    }

    pub fn scan_with(&self, u: &Sequence, opts: ScanOptions) -> Result<ScanOutput> {
        let outs = self.map_channels(u, |_, ch| ch.run(opts.mode, opts.keep_states))?;
        Ok(collect(u.len(), outs))
    }

    /// Applies `f` to the recurrence of every channel, in channel order.
    pub(crate) fn map_channels<R, F>(&self, u: &Sequence, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize, &Channel) -> R + Sync + Send,
    {
        self.validate()?;
        check_width(u, self.width())?;
        let l = u.len();
        let n = self.a.len();
        let mut inject = Vec::with_capacity(l * n);
        let mut readout = Vec::with_capacity(l * n);
        let mut pre = Vec::with_capacity(l);
        for k in 0..l {
            let uk = u.row(k);
            inject.extend(self.b.mul_real(uk));
            readout.extend(self.c.left_mul_real(uk));
            pre.push(dot(&self.w, uk));
        }
        Ok(par::map_range(self.width(), |i| {
            let deltas: Vec<f64> = pre.iter().map(|z| softplus_raw(z + self.b_delta[i])).collect();
            let drive = u.channel(i);
            let ch = Channel {
                a: self.a.entries(),
                deltas: &deltas,
                inject: Rows::PerStep(&inject),
                drive: &drive,
                readout: Rows::PerStep(&readout),
            };
            f(i, &ch)
        }))
    }

    /// The same unit written as a single-block B2S6 with zero bias.
    pub fn to_b2s6(&self) -> super::B2S6Params {
        let d = self.width();
        super::B2S6Params {
            h: 1,
            p: d,
            a: self.a.clone(),
            blocks: vec![super::B2S6Block {
                b_weight: self.b.clone(),
                b_bias: CMat::zeros(self.a.len(), d),
                c: self.c.clone(),
                w: self.w.clone(),
                b_delta: self.b_delta.clone(),
            }],
            use_bias: true,
            field: self.field,
        }
    }
}

/// Runs an S6 unit over `u`.
pub fn s6_scan(params: &S6Params, u: &Sequence) -> Result<Sequence> {
    Ok(params.scan_with(u, ScanOptions::default())?.y)
}


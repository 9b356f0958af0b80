use serde::{Deserialize, Serialize};

use super::s4d::collect;
use super::{check_len, Channel, CMat, Field, Rows, ScanOptions, ScanOutput, Sequence};
use crate::discretization::dot;
use crate::error::{Error, Result};
use crate::numerics::{softplus_raw, ComplexDiag};
use crate::par;

/// Parameters of one block of `p` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2S6Block {
    /// `n x p`.
    pub b_weight: CMat,
    /// `n x p`; column `i` is the input-independent injection of channel `i`.
    pub b_bias: CMat,
    /// `p x n`.
    pub c: CMat,
    pub w: Vec<f64>,
    pub b_delta: Vec<f64>,
}

/// Block-biased S6: the input is split into `h` blocks of width `p`, each with
/// its own selection and readout, and every channel adds a bias column to its
/// injection. `A` is shared by all blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2S6Params {
    pub h: usize,
    pub p: usize,
    pub a: ComplexDiag,
    pub blocks: Vec<B2S6Block>,
    /// When false the bias columns are ignored (treated as zero) and are
    /// not trained.
    #[serde(default = "enabled")]
    pub use_bias: bool,
    pub field: Field,
}

fn enabled() -> bool {
    true
}

impl B2S6Params {
    pub fn width(&self) -> usize {
        self.h * self.p
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.p == 0 {
            return Err(Error::Config(format!("block layout {}x{} is empty", self.h, self.p)));
        }
        if self.blocks.len() != self.h {
            return Err(Error::Config(format!(
                "expected {} blocks, found {}",
                self.h,
                self.blocks.len()
            )));
        }
        self.a.check_stable()?;
        let (n, p) = (self.a.len(), self.p);
        for blk in &self.blocks {
            blk.b_weight.check(n, p, "B2S6 B_weight")?;
            blk.b_bias.check(n, p, "B2S6 B_bias")?;
            blk.c.check(p, n, "B2S6 C")?;
            check_len(&blk.w, p, "B2S6 w")?;
            check_len(&blk.b_delta, p, "B2S6 b")?;
        }
        Ok(())
    }

    /// `C` is always real; `A`, `B_weight` and `B_bias` follow `field`.
    pub fn enforce_field(&mut self) {
        let real = self.field == Field::Real;
        if real {
            super::drop_imaginary(&mut self.a.0);
        }
        for blk in &mut self.blocks {
            blk.c.drop_imaginary();
            if real {
                blk.b_weight.drop_imaginary();
                blk.b_bias.drop_imaginary();
            }
        }
    }

    pub fn scan_with(&self, u: &Sequence, opts: ScanOptions) -> Result<ScanOutput> {
        let outs = self.map_channels(u, |_, ch| ch.run(opts.mode, opts.keep_states))?;
        Ok(collect(u.len(), outs))
    }

    /// Applies `f` to the recurrence of every channel, in channel order
    /// (block-major).
    pub(crate) fn map_channels<R, F>(&self, u: &Sequence, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize, &Channel) -> R + Sync + Send,
    {
        self.validate()?;
        if u.width() != self.width() {
            return Err(Error::Config(format!(
                "input width {} is not h*p = {}*{}",
                u.width(),
                self.h,
                self.p
            )));
        }
        let (l, n, p) = (u.len(), self.a.len(), self.p);
        let shared = par::map_range(self.h, |j| {
            let blk = &self.blocks[j];
            let mut inject = Vec::with_capacity(l * n);
            let mut readout = Vec::with_capacity(l * n);
            let mut pre = Vec::with_capacity(l);
            for k in 0..l {
                let uj = &u.row(k)[j * p..(j + 1) * p];
                inject.extend(blk.b_weight.mul_real(uj));
                readout.extend(blk.c.left_mul_real(uj));
                pre.push(dot(&blk.w, uj));
            }
            (inject, readout, pre)
        });
        Ok(par::map_range(self.width(), |ch| {
            let (j, i) = (ch / p, ch % p);
            let blk = &self.blocks[j];
            let (base, readout, pre) = &shared[j];
            let inject: Vec<_> = if self.use_bias {
                let bias = blk.b_bias.column(i);
                base.chunks(n)
                    .flat_map(|row| row.iter().zip(&bias).map(|(x, b)| x + b))
                    .collect()
            } else {
                base.clone()
            };
            let deltas: Vec<f64> = pre.iter().map(|z| softplus_raw(z + blk.b_delta[i])).collect();
            let drive = u.channel(ch);
            let c = Channel {
                a: self.a.entries(),
                deltas: &deltas,
                inject: Rows::PerStep(&inject),
                drive: &drive,
                readout: Rows::PerStep(readout),
            };
            f(ch, &c)
        }))
    }
}

/// Runs a B2S6 unit over `u`; the blocks are evaluated independently and
/// their outputs concatenated.
pub fn b2s6_scan(params: &B2S6Params, u: &Sequence) -> Result<Sequence> {
    Ok(params.scan_with(u, ScanOptions::default())?.y)
}

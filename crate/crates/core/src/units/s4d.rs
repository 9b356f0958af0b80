use serde::{Deserialize, Serialize};

use super::{check_len, check_width, Channel, CMat, Field, Rows, ScanOptions, ScanOutput, Sequence};
use crate::discretization::s4d_delta;
use crate::error::Result;
use crate::numerics::ComplexDiag;
use crate::par;

/// S4D: a shared diagonal `A` and channel-specific `B^(i)`, `C^(i)` and
/// `Delta^(i) = exp(b^(i))`. The dynamics do not depend on the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S4DParams {
    pub a: ComplexDiag,
    /// Row `i` is `B^(i)` (length `n`).
    pub b: CMat,
    /// Row `i` is `C^(i)` (length `n`).
    pub c: CMat,
    pub b_delta: Vec<f64>,
    pub field: Field,
}

impl S4DParams {
    pub fn width(&self) -> usize {
        self.b_delta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.a.len(), self.width());
        self.a.check_stable()?;
        self.b.check(d, n, "S4D B")?;
        self.c.check(d, n, "S4D C")?;
        check_len(&self.b_delta, d, "S4D b")
    }

    pub fn enforce_field(&mut self) {
        if self.field == Field::Real {
            super::drop_imaginary(&mut self.a.0);
            self.b.drop_imaginary();
            self.c.drop_imaginary();
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
        Ok(par::map_range(self.width(), |i| {
            let deltas = vec![s4d_delta(self.b_delta[i]); l];
            let drive = u.channel(i);
            let ch = Channel {
                a: self.a.entries(),
                deltas: &deltas,
                inject: Rows::Const(self.b.row(i)),
                drive: &drive,
                readout: Rows::Const(self.c.row(i)),
            };
            f(i, &ch)
        }))
    }
}

pub(super) fn collect(
    l: usize,
    outs: Vec<(Vec<f64>, Option<Vec<crate::numerics::C64>>)>,
) -> ScanOutput {
    let keep = outs.first().is_some_and(|o| o.1.is_some());
    let (ys, states): (Vec<_>, Vec<_>) = outs.into_iter().unzip();
    ScanOutput {
        y: Sequence::from_channels(l, &ys),
        states: keep.then(|| states.into_iter().map(Option::unwrap_or_default).collect()),
    }
}

/// Runs every channel of an S4D unit over `u`.
pub fn s4d_scan(params: &S4DParams, u: &Sequence) -> Result<Sequence> {
    Ok(params.scan_with(u, ScanOptions::default())?.y)
}

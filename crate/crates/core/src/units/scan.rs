//! First-order linear recurrence `x_k = a_k x_{k-1} + b_k` and the per-channel
//! driver shared by all three units.

use serde::{Deserialize, Serialize};

use crate::discretization::zoh_scalar;
use crate::error::{Error, Result};
use crate::numerics::C64;

/// How a recurrence is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    #[default]
    Sequential,
    /// Balanced-tree scan over the operator `(a, b) o (a', b') = (a a', a' b + b')`.
    Associative,
}

const LEAF: usize = 32;
#[cfg(feature = "parallel")]
const PAR_SPLIT: usize = 4096;

/// All states of `x_k = a_k x_{k-1} + b_k` with `x_0 = 0`.
pub fn selective_recurrence(a_seq: &[C64], b_seq: &[C64], mode: ScanMode) -> Result<Vec<C64>> {
    if a_seq.len() != b_seq.len() {
        return Err(Error::shape(
            format!("{} injections", a_seq.len()),
            b_seq.len(),
        ));
    }
    Ok(match mode {
        ScanMode::Sequential => sequential(a_seq, b_seq),
        ScanMode::Associative => {
            let mut acc = vec![C64::new(0.0, 0.0); a_seq.len()];
            let mut st = vec![C64::new(0.0, 0.0); a_seq.len()];
            tree_scan(a_seq, b_seq, &mut acc, &mut st);
            st
        }
    })
}

fn sequential(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut x = C64::new(0.0, 0.0);
    a.iter()
        .zip(b)
        .map(|(&ak, &bk)| {
            x = ak * x + bk;
            x
        })
        .collect()
}

/// Inclusive scan of the composed pairs. On return `acc[k]` holds the product
/// `a_0 ... a_k` (relative to the slice start) and `st[k]` the state reached
/// from a zero initial state. The split point depends only on the length, so
/// the reduction tree is the same for every thread count.
fn tree_scan(a: &[C64], b: &[C64], acc: &mut [C64], st: &mut [C64]) {
    let n = a.len();
    if n <= LEAF {
        let mut p = C64::new(1.0, 0.0);
        let mut x = C64::new(0.0, 0.0);
        for k in 0..n {
            p *= a[k];
            x = a[k] * x + b[k];
            acc[k] = p;
            st[k] = x;
        }
        return;
    }
    let mid = n / 2;
    let (al, ar) = a.split_at(mid);
    let (bl, br) = b.split_at(mid);
    let (accl, accr) = acc.split_at_mut(mid);
    let (stl, str_) = st.split_at_mut(mid);
    join(
        || tree_scan(al, bl, accl, stl),
        || tree_scan(ar, br, accr, str_),
        n,
    );
    let (pa, px) = (accl[mid - 1], stl[mid - 1]);
    for (p, x) in accr.iter_mut().zip(str_.iter_mut()) {
        // (pa, px) o (p, x) = (pa p, p px + x)
        *x += *p * px;
        *p *= pa;
    }
}

#[cfg(feature = "parallel")]
fn join(l: impl FnOnce() + Send, r: impl FnOnce() + Send, n: usize) {
    if n >= PAR_SPLIT {
        rayon::join(l, r);
    } else {
        l();
        r();
    }
}

#[cfg(not(feature = "parallel"))]
fn join(l: impl FnOnce(), r: impl FnOnce(), _n: usize) {
    l();
    r();
}

/// Discretized `(Abar, Delta * phi(Delta a))` per state, recomputed only when
/// the step changes (S4D steps are constant).
pub(crate) struct ZohCache<'a> {
    a: &'a [C64],
    delta: f64,
    pairs: Vec<(C64, C64)>,
}

impl<'a> ZohCache<'a> {
    pub(crate) fn new(a: &'a [C64]) -> Self {
        Self {
            a,
            delta: f64::NAN,
            pairs: vec![(C64::new(1.0, 0.0), C64::new(0.0, 0.0)); a.len()],
        }
    }

    pub(crate) fn at(&mut self, delta: f64) -> &[(C64, C64)] {
        if delta != self.delta {
            for (p, &a) in self.pairs.iter_mut().zip(self.a) {
                *p = zoh_scalar(a, delta);
            }
            self.delta = delta;
        }
        &self.pairs
    }
}

/// Per-step or constant rows of `n` complex numbers.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Rows<'a> {
    Const(&'a [C64]),
    PerStep(&'a [C64]),
}

impl<'a> Rows<'a> {
    #[inline]
    pub(crate) fn at(&self, k: usize, m: usize, n: usize) -> C64 {
        match self {
            Rows::Const(r) => r[m],
            Rows::PerStep(r) => r[k * n + m],
        }
    }
}

/// One scalar channel of a diagonal unit:
/// `x_k = exp(delta_k a) x_{k-1} + phi-map(delta_k) * inject_k * drive_k`,
/// `y_k = Re(readout_k . x_k)`.
pub(crate) struct Channel<'a> {
    pub a: &'a [C64],
    pub deltas: &'a [f64],
    pub inject: Rows<'a>,
    pub drive: &'a [f64],
    pub readout: Rows<'a>,
}

impl Channel<'_> {
    fn len(&self) -> usize {
        self.deltas.len()
    }

    /// Outputs at every position, plus the `L x n` states if requested.
    pub(crate) fn run(&self, mode: ScanMode, keep_states: bool) -> (Vec<f64>, Option<Vec<C64>>) {
        let l = self.len();
        let n = self.a.len();
        let mut y = vec![0.0; l];
        let mut states = keep_states.then(|| vec![C64::new(0.0, 0.0); l * n]);
        match mode {
            ScanMode::Sequential => {
                let mut x = vec![C64::new(0.0, 0.0); n];
                let mut zoh = ZohCache::new(self.a);
                for k in 0..l {
                    let mut yk = 0.0;
                    let pairs = zoh.at(self.deltas[k]);
                    for m in 0..n {
                        let (ab, g) = pairs[m];
                        x[m] = ab * x[m] + g * self.inject.at(k, m, n) * self.drive[k];
                        yk += (self.readout.at(k, m, n) * x[m]).re;
                    }
                    y[k] = yk;
                    if let Some(s) = states.as_mut() {
                        s[k * n..(k + 1) * n].copy_from_slice(&x);
                    }
                }
            }
            ScanMode::Associative => {
                let mut a_seq = vec![C64::new(0.0, 0.0); l];
                let mut b_seq = vec![C64::new(0.0, 0.0); l];
                for m in 0..n {
                    for k in 0..l {
                        let (ab, g) = zoh_scalar(self.a[m], self.deltas[k]);
                        a_seq[k] = ab;
                        b_seq[k] = g * self.inject.at(k, m, n) * self.drive[k];
                    }
                    let xs = selective_recurrence(&a_seq, &b_seq, ScanMode::Associative)
                        .expect("equal lengths");
                    for k in 0..l {
                        y[k] += (self.readout.at(k, m, n) * xs[k]).re;
                        if let Some(s) = states.as_mut() {
                            s[k * n + m] = xs[k];
                        }
                    }
                }
            }
        }
        (y, states)
    }
}

//! Scalar kernels shared by the units: stable softplus and ZOH helpers,
//! log-log slope fitting and seeded Gaussian sampling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// `log(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("softplus of non-finite {x}")));
    }
    Ok(softplus_raw(x))
}

#[inline]
pub(crate) fn softplus_raw(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of softplus.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus on `(0, inf)`: the pre-activation that yields `delta`.
pub fn softplus_inverse(delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("softplus inverse of {delta}")));
    }
    // log(e^d - 1) = d + log(1 - e^-d)
    Ok(if delta > 20.0 {
        delta + (-(-delta).exp()).ln_1p()
    } else {
        delta.exp_m1().ln()
    })
}

/// `e^z - 1` without cancellation for small `|z|`.
pub fn expm1(z: C64) -> C64 {
    let (x, y) = (z.re, z.im);
    let (sin, cos) = y.sin_cos();
    let em1 = x.exp_m1();
    // 1 - cos y = sin^2 y / (1 + cos y) stays accurate while cos y > 0; past
    // that |re| >= 1 - e^x cos y has no cancellation.
    let re = if cos > 0.0 {
        em1 * cos - sin * sin / (1.0 + cos)
    } else {
        (em1 + 1.0) * cos - 1.0
    };
    C64::new(re, (em1 + 1.0) * sin)
}

pub(crate) const PHI_SERIES_RADIUS: f64 = 1e-4;

/// `(e^z - 1) / z` with `phi(0) = 1`.
pub fn phi(z: C64) -> C64 {
    if z.norm() > PHI_SERIES_RADIUS {
        expm1(z) / z
    } else {
        // 1 + z/2 + z^2/6 + z^3/24 + z^4/120
        let c = [1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0];
        c.iter().fold(C64::new(0.0, 0.0), |acc, &k| acc * z + k)
    }
}

/// `(e^z - phi(z)) / z`, i.e. `d phi / dz`. Appears in the derivative of the
/// ZOH input map with respect to the state eigenvalue.
pub fn phi_prime(z: C64) -> C64 {
    if z.im == 0.0 {
        return C64::new(phi_prime_real(z.re), 0.0);
    }
    if z.norm_sqr() > 0.01 {
        let em1 = expm1(z);
        (z * (em1 + 1.0) - em1) / (z * z)
    } else {
        // sum_k (k+1) z^k / (k+2)!, truncated where |z|^k / k! < 1e-17
        let mut sum = C64::new(0.0, 0.0);
        let mut pow = C64::new(1.0, 0.0);
        let mut fact = 2.0;
        for k in 0..12 {
            sum += pow * ((k + 1) as f64 / fact);
            pow *= z;
            fact *= (k + 3) as f64;
        }
        sum
    }
}

fn phi_prime_real(x: f64) -> f64 {
    if x.abs() > 0.1 {
        (x * x.exp() - x.exp_m1()) / (x * x)
    } else {
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0;
        for k in 0..16 {
            sum += pow * ((k + 1) as f64 / fact);
            pow *= x;
            fact *= (k + 3) as f64;
        }
        sum
    }
}

/// A diagonal operator stored by its entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexDiag(pub Vec<C64>);

impl ComplexDiag {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("diagonal must have at least one entry".into()));
        }
        Ok(Self(entries))
    }

    /// A continuous-time state matrix: every entry must have negative real part.
    pub fn state_matrix(entries: Vec<C64>) -> Result<Self> {
        let d = Self::new(entries)?;
        d.check_stable()?;
        Ok(d)
    }

    pub fn check_stable(&self) -> Result<()> {
        match self.0.iter().find(|a| !(a.re < 0.0)) {
            Some(a) => Err(Error::Domain(format!(
                "state matrix entry {a} does not have negative real part"
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[C64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateAbscissa);
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive coordinates, got {p:?}")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * lx.iter().map(|x| x * x).sum::<f64>().max(1.0) {
        return Err(Error::DegenerateAbscissa);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        n_points: points.len(),
    })
}

/// Identifies a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub const fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub const fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A ChaCha20 generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A sub-stream keyed by `index`; distinct indices give distinct streams
    /// and the mapping does not depend on the order children are requested.
    pub fn child(&self, index: u64) -> RngSpec {
        RngSpec {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x9e37_79b9))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` independent normal draws from the stream `spec`.
pub fn gaussian(spec: RngSpec, mean: f64, stddev: f64, count: usize) -> Result<Vec<f64>> {
    if !(stddev >= 0.0) {
        return Err(Error::Domain(format!("gaussian stddev {stddev} is negative")));
    }
    let normal = Normal::new(mean, stddev)
        .map_err(|e| Error::Domain(format!("gaussian stddev {stddev}: {e}")))?;
    let mut rng = spec.rng();
    Ok((0..count).map(|_| normal.sample(&mut rng)).collect())
}

/// Draws a standard normal from an existing generator.
#[inline]
pub(crate) fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

//! Scalar kernels: the error function and the Gaussian PDF/CDF together with
//! the CDF's partial derivatives.
//!
//! `erf`/`erfc` use the classic piecewise rational approximations (FreeBSD
//! msun `s_erf.c`), which are accurate to about one ulp. The Gaussian CDF
//! saturates to exactly 0 or 1 once the standardized distance
//! `|x - mu| / sigma` exceeds [`CDF_SATURATION`].

// msun coefficients are kept digit for digit.
#![allow(clippy::excessive_precision)]

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standardized distance beyond which the Gaussian CDF returns exactly 0 or 1.
/// `Phi(-8) ~ 6.2e-16`, below the resolution of `1.0 - Phi` in f64.
pub const CDF_SATURATION: f64 = 8.0;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

const ERX: f64 = 8.450_629_115_104_675_292_97e-01;
const EFX8: f64 = 1.027_033_336_764_100_690_53e+00;

// erf on [0, 0.84375]
const PP: [f64; 5] = [
    1.283_791_670_955_125_585_61e-01,
    -3.250_421_072_470_014_993_70e-01,
    -2.848_174_957_559_851_047_66e-02,
    -5.770_270_296_489_441_591_57e-03,
    -2.376_301_665_665_016_260_84e-05,
];
const QQ: [f64; 6] = [
    1.0,
    3.979_172_239_591_553_528_19e-01,
    6.502_224_998_876_729_444_85e-02,
    5.081_306_281_875_765_627_76e-03,
    1.324_947_380_043_216_445_26e-04,
    -3.960_228_278_775_368_123_20e-06,
];

// erf on [0.84375, 1.25]
const PA: [f64; 7] = [
    -2.362_118_560_752_659_440_77e-03,
    4.148_561_186_837_483_316_66e-01,
    -3.722_078_760_357_013_238_47e-01,
    3.183_466_199_011_617_536_74e-01,
    -1.108_946_942_823_966_774_76e-01,
    3.547_830_432_561_823_593_71e-02,
    -2.166_375_594_868_790_843_00e-03,
];
const QA: [f64; 7] = [
    1.0,
    1.064_208_804_008_442_282_86e-01,
    5.403_979_177_021_710_489_37e-01,
    7.182_865_441_419_626_628_68e-02,
    1.261_712_198_087_616_421_12e-01,
    1.363_708_391_202_905_073_62e-02,
    1.198_449_984_679_910_741_70e-02,
];

// erfc on [1.25, 1/0.35]
const RA: [f64; 8] = [
    -9.864_944_034_847_148_227_05e-03,
    -6.938_585_727_071_817_643_72e-01,
    -1.055_862_622_532_329_098_14e+01,
    -6.237_533_245_032_600_603_96e+01,
    -1.623_966_694_625_734_703_55e+02,
    -1.846_050_929_067_110_359_94e+02,
    -8.128_743_550_630_659_342_46e+01,
    -9.814_329_344_169_145_485_92e+00,
];
const SA: [f64; 9] = [
    1.0,
    1.965_127_166_743_925_712_92e+01,
    1.376_577_541_435_190_426_00e+02,
    4.345_658_774_752_292_288_21e+02,
    6.453_872_717_332_678_803_36e+02,
    4.290_081_400_275_678_333_86e+02,
    1.086_350_055_417_794_351_34e+02,
    6.570_249_770_319_281_701_35e+00,
    -6.042_441_521_485_809_874_38e-02,
];

// erfc on [1/0.35, 28]
const RB: [f64; 7] = [
    -9.864_942_924_700_099_285_97e-03,
    -7.992_832_376_805_230_065_74e-01,
    -1.775_795_491_775_475_198_89e+01,
    -1.606_363_848_558_219_160_62e+02,
    -6.375_664_433_683_896_277_22e+02,
    -1.025_095_131_611_077_249_54e+03,
    -4.835_191_916_086_513_970_19e+02,
];
const SB: [f64; 8] = [
    1.0,
    3.033_806_074_348_245_829_24e+01,
    3.257_925_129_965_739_188_26e+02,
    1.536_729_586_084_436_959_94e+03,
    3.199_858_219_508_595_539_08e+03,
    2.553_050_406_433_164_425_83e+03,
    4.745_285_412_069_553_672_15e+02,
    -2.244_095_244_658_581_833_62e+01,
];

#[inline]
fn poly(z: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

/// `erfc(a)` for `a >= 0.84375`, via the asymptotic rational forms.
fn erfc_tail(a: f64) -> f64 {
    if a < 1.25 {
        let s = a - 1.0;
        return 1.0 - ERX - poly(s, &PA) / poly(s, &QA);
    }
    if a >= 28.0 {
        return 0.0;
    }
    let s = 1.0 / (a * a);
    let (r, q) = if a < 1.0 / 0.35 {
        (poly(s, &RA), poly(s, &SA))
    } else {
        (poly(s, &RB), poly(s, &SB))
    };
    // Split a*a = z*z + (a - z)(a + z) with z holding the high 32 bits of a,
    // so exp(-a^2) is formed without cancellation.
    let z = f64::from_bits(a.to_bits() & 0xffff_ffff_0000_0000);
    (-z * z - 0.5625).exp() * ((z - a) * (z + a) + r / q).exp() / a
}

/// Error function without input validation. NaN propagates, `±inf` maps to
/// `±1`.
pub fn erf_unchecked(z: f64) -> f64 {
    if z.is_nan() {
        return z;
    }
    let a = z.abs();
    let magnitude = if a < 0.84375 {
        if a < 3.725_290_298_461_914e-9 {
            // 2^-28: erf(a) = a * 2/sqrt(pi) to working precision
            0.125 * (8.0 * a + EFX8 * a)
        } else {
            let s = a * a;
            a + a * (poly(s, &PP) / poly(s, &QQ))
        }
    } else if a < 6.0 {
        1.0 - erfc_tail(a)
    } else {
        1.0 - f64::EPSILON * f64::EPSILON
    };
    magnitude.copysign(z)
}

/// Complementary error function `1 - erf(z)` without input validation,
/// accurate in the upper tail where `1 - erf(z)` would cancel.
pub fn erfc_unchecked(z: f64) -> f64 {
    if z.is_nan() {
        return z;
    }
    let a = z.abs();
    if a < 0.84375 {
        if a < 1.387_778_780_781_445_7e-17 {
            return 1.0 - z;
        }
        let s = a * a;
        let y = poly(s, &PP) / poly(s, &QQ);
        if z < 0.25 {
            return 1.0 - (z + z * y);
        }
        return 0.5 - (z - 0.5 + z * y);
    }
    let tail = erfc_tail(a);
    if z > 0.0 {
        tail
    } else {
        2.0 - tail
    }
}

/// Error function `erf(z) = 2/sqrt(pi) * integral_0^z exp(-t^2) dt`.
///
/// Odd symmetry holds exactly: the magnitude is computed from `|z|` and the
/// sign reapplied.
pub fn erf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!("erf: non-finite argument {z}")));
    }
    Ok(erf_unchecked(z))
}

/// Mean and standard deviation of a univariate Gaussian. `sigma > 0` is
/// enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianParams {
    mu: f64,
    sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::domain(format!("gaussian: mu = {mu} is not finite")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!(
                "gaussian: sigma = {sigma} must be finite and > 0"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl<'de> Deserialize<'de> for GaussianParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            mu: f64,
            sigma: f64,
        }
        let raw = Raw::deserialize(d)?;
        GaussianParams::new(raw.mu, raw.sigma).map_err(serde::de::Error::custom)
    }
}

/// Gaussian probability density at `x`.
#[inline]
pub fn gaussian_pdf(x: f64, g: &GaussianParams) -> f64 {
    let t = (x - g.mu) / g.sigma;
    FRAC_1_SQRT_2PI / g.sigma * (-0.5 * t * t).exp()
}

/// Gaussian cumulative distribution function `Phi(x; mu, sigma)`.
#[inline]
pub fn gaussian_cdf(x: f64, g: &GaussianParams) -> f64 {
    let t = (x - g.mu) / g.sigma;
    if t > CDF_SATURATION {
        1.0
    } else if t < -CDF_SATURATION {
        0.0
    } else {
        0.5 * erfc_unchecked(-t * std::f64::consts::FRAC_1_SQRT_2)
    }
}

/// Partial derivatives of `Phi(x; mu, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfGrads {
    pub d_dx: f64,
    pub d_dmu: f64,
    pub d_dsigma: f64,
}

/// `dPhi/dx` is the density; `dPhi/dmu = -dPhi/dx` and
/// `dPhi/dsigma = (mu - x)/sigma * dPhi/dx`.
#[inline]
pub fn gaussian_cdf_grads(x: f64, g: &GaussianParams) -> CdfGrads {
    let d_dx = gaussian_pdf(x, g);
    CdfGrads {
        d_dx,
        d_dmu: -d_dx,
        d_dsigma: (g.mu - x) / g.sigma * d_dx,
    }
}

//! Scalar kernels shared by the filter, measurement and calibration code.

/// Exponent magnitude beyond which the logistic saturates to exactly 0 or 1.
pub const SATURATION: f64 = 700.0;

/// Logistic sigmoid `1 / (1 + e^{-x})`, branch-split so neither side overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x > SATURATION {
        1.0
    } else if x < -SATURATION {
        0.0
    } else if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SATURATION {
        x
    } else if x < -SATURATION {
        0.0
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Binary (Fermi-Dirac) entropy `-x ln x - (1-x) ln(1-x)` with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.ln() - (1.0 - x) * (-x).ln_1p()
}

/// Logistic density of scale `t1` centered at zero, evaluated through `sech^2`.
#[inline]
pub fn logistic_density(t1: f64, q: f64) -> f64 {
    let s = 1.0 / (q / (2.0 * t1)).cosh();
    s * s / (4.0 * t1)
}

/// Logistic cumulative distribution of scale `t1`.
#[inline]
pub fn logistic_cdf(t1: f64, x: f64) -> f64 {
    sigmoid(x / t1)
}

/// Mass of a logistic of scale `t1` centered at `center` inside `(lo, hi]`.
///
/// Picks the CDF or survival form depending on which side of the center the
/// window sits, so that far-tail windows keep their relative precision.
pub fn logistic_interval_mass(t1: f64, center: f64, lo: f64, hi: f64) -> f64 {
    let a = lo - center;
    let b = hi - center;
    if a >= 0.0 {
        // both ends in the right tail: S(a) - S(b)
        logistic_cdf(t1, -a) - logistic_cdf(t1, -b)
    } else {
        logistic_cdf(t1, b) - logistic_cdf(t1, a)
    }
}

/// Count of successes in independent Bernoulli trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BernoulliEstimate {
    pub successes: u64,
    pub trials: u64,
}

impl BernoulliEstimate {
    pub fn value(&self) -> f64 {
        if self.trials == 0 {
            return f64::NAN;
        }
        self.successes as f64 / self.trials as f64
    }

    /// Binomial standard deviation of the frequency if the true rate were `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Plug-in standard error.
    pub fn standard_error(&self) -> f64 {
        self.sigma_at(self.value())
    }
}

// 15-point Kronrod nodes/weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let k = kronrod * half;
    let g = gauss * half;
    (k, (k - g).abs())
}

/// Adaptive Gauss-Kronrod (G7/K15) integration on a finite interval with an
/// absolute error target. Intervals are bisected until each piece meets its
/// share of the tolerance or the recursion depth runs out.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod_15(f, a, b);
        if err <= tol || depth == 0 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth - 1) + recurse(f, mid, b, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    recurse(&f, a, b, abs_tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_saturates_and_is_symmetric() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        for &x in &[0.0, 0.3, 5.0, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-30.0, -1.0, 0.0, 2.5, 30.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn entropy_limits() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_density_at_zero_is_quarter() {
        assert!((logistic_density(1.0, 0.0) - 0.25).abs() < 1e-15);
        assert_eq!(logistic_cdf(0.7, 0.0), 0.5);
    }

    #[test]
    fn density_matches_exponential_form() {
        let t1 = 0.4;
        for &q in &[-3.0, -0.2, 0.0, 1.1, 5.0] {
            let e = f64::exp(-q / t1);
            let direct = e / (t1 * (1.0 + e) * (1.0 + e));
            assert!((logistic_density(t1, q) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_integrates_logistic_to_one() {
        for &t1 in &[0.05, 1.0, 3.0] {
            let total = integrate_adaptive(|q| logistic_density(t1, q), -50.0 * t1, 50.0 * t1, 1e-13);
            assert!((total - 1.0).abs() < 1e-10, "t1={t1}: {total}");
        }
    }

    #[test]
    fn interval_mass_in_far_tail_keeps_precision() {
        let t1 = 1.0;
        let m = logistic_interval_mass(t1, 0.0, 40.0, 41.0);
        let exact = f64::exp(-40.0) - f64::exp(-41.0);
        assert!(((m - exact) / exact).abs() < 1e-6);
    }
}

//! Log-domain modified Bessel function of the first kind, `log I_ν(κ)`.
//!
//! The von Mises–Fisher normalizer needs `log I_ν(κ)` for orders up to
//! `ν = d/2 − 1` (a thousand and more for wide embeddings) and arguments up
//! to the concentration ceiling. `I_ν(κ)` itself overflows f64 near `κ ≈ 700`,
//! so everything here stays in log space.
//!
//! The ascending series `I_ν(κ) = Σ_m (κ/2)^{2m+ν} / (m! Γ(ν+m+1))` has only
//! positive terms, so a log-sum-exp accumulation loses no precision to
//! cancellation and converges for every `(ν, κ)` in our domain; the term
//! count grows like `κ/2`, which is cheap at the concentration ceiling used
//! here. Terms are generated by the recurrence
//! `t_{m+1}/t_m = (κ/2)² / ((m+1)(ν+m+1))` and summation stops once the term
//! ratio has passed its peak and the next term is below 1e-16 of the running
//! sum.

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0, "ln_gamma domain: x > 0, got {x}");
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Relative term cutoff for series summation.
const TERM_CUTOFF_LN: f64 = -36.841_361_487_904_73; // ln(1e-16)
const MAX_TERMS: usize = 200_000;

/// `log I_ν(κ)` for `ν ≥ 0`, `κ ≥ 0`.
pub fn log_bessel_i(nu: f64, kappa: f64) -> f64 {
    debug_assert!(nu >= 0.0 && kappa >= 0.0);
    if kappa == 0.0 {
        return if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let log_half_kappa = (kappa / 2.0).ln();
    let mut log_term = nu * log_half_kappa - ln_gamma(nu + 1.0);
    let mut log_sum = log_term;
    for m in 0..MAX_TERMS {
        let mf = m as f64;
        log_term += 2.0 * log_half_kappa - (mf + 1.0).ln() - (nu + mf + 1.0).ln();
        log_sum = log_add_exp(log_sum, log_term);
        // Past the ratio peak the terms decay monotonically; stop once the
        // next one cannot move the sum.
        let ratio_ln = 2.0 * log_half_kappa - (mf + 2.0).ln() - (nu + mf + 2.0).ln();
        if ratio_ln < 0.0 && log_term + ratio_ln - log_sum < TERM_CUTOFF_LN {
            break;
        }
    }
    log_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Half-integer order has the elementary form
    // I_{1/2}(κ) = sqrt(2/(πκ)) * sinh(κ), with
    // ln sinh κ = κ + ln(1 − e^{−2κ}) − ln 2 stable for all κ > 0.
    fn log_i_half(kappa: f64) -> f64 {
        let log_sinh = kappa + (-(-2.0 * kappa).exp_m1()).ln() - std::f64::consts::LN_2;
        0.5 * (2.0 / (std::f64::consts::PI * kappa)).ln() + log_sinh
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(2.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(5.0), 24.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(1.5), (std::f64::consts::PI.sqrt() / 2.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn matches_reference_values() {
        // I_0(1), I_0(10), I_1(10), I_20(10), I_60(40): standard table values.
        assert_abs_diff_eq!(log_bessel_i(0.0, 1.0), 1.266_065_877_752_008_4_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_bessel_i(0.0, 10.0), 2_815.716_628_466_254_4_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_bessel_i(1.0, 10.0), 2_670.988_303_701_254_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            log_bessel_i(20.0, 10.0),
            1.250_799_735_644_947_8e-4_f64.ln(),
            epsilon = 1e-11
        );
        assert_abs_diff_eq!(
            log_bessel_i(60.0, 40.0),
            7.185_641_968_452_632e-2_f64.ln(),
            epsilon = 1e-11
        );
    }

    #[test]
    fn matches_half_order_closed_form() {
        let mut kappa = 1e-3;
        while kappa <= 50.0 {
            assert_abs_diff_eq!(log_bessel_i(0.5, kappa), log_i_half(kappa), epsilon = 1e-10);
            kappa *= 1.37;
        }
    }

    #[test]
    fn survives_overflowing_arguments() {
        // I_0(1e4) itself is ~e^9995; the log must stay finite.
        let v = log_bessel_i(0.0, 1e4);
        assert!(v.is_finite());
        // Leading asymptotic: log I_0(κ) ≈ κ − 0.5 ln(2πκ)
        let approx = 1e4 - 0.5 * (2.0 * std::f64::consts::PI * 1e4).ln();
        assert_abs_diff_eq!(v, approx, epsilon = 1e-3);
    }

    #[test]
    fn three_term_recurrence_holds_at_large_order() {
        // I_{ν−1}(κ) = (2ν/κ) I_ν(κ) + I_{ν+1}(κ), rearranged without
        // subtraction so it can be checked in log space.
        for &(nu, kappa) in &[(100.0, 80.0), (511.0, 2000.0), (1023.0, 1e4), (7.5, 3.0)] {
            let lhs = log_bessel_i(nu - 1.0, kappa);
            let a = (2.0 * nu / kappa).ln() + log_bessel_i(nu, kappa);
            let rhs = log_add_exp(a, log_bessel_i(nu + 1.0, kappa));
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_argument_limits() {
        assert_eq!(log_bessel_i(0.0, 0.0), 0.0);
        assert_eq!(log_bessel_i(2.5, 0.0), f64::NEG_INFINITY);
    }
}

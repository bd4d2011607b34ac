//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three use the same scheme: shift the argument upward with the
//! recurrence Γ(x+1) = xΓ(x) until x ≥ 8, then evaluate the Stirling
//! asymptotic series. With terms through x⁻¹⁵ the truncation error at x = 8
//! is below 1e-15, which leaves roundoff as the dominant error source.

use crate::error::{Error, Result};

const SHIFT_THRESHOLD: f64 = 8.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Returns `(ln Γ(x), ψ(x))`.
pub fn special_functions(x: f64) -> Result<(f64, f64)> {
    check_domain("special_functions", x)?;
    Ok((ln_gamma_pos(x), digamma_pos(x)))
}

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_domain("ln_gamma", x)?;
    Ok(ln_gamma_pos(x))
}

/// Digamma ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_pos(x))
}

/// Trigamma ψ′(x).
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_pos(x))
}

fn check_domain(function: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { function, x })
    }
}

/// Unchecked ln Γ(x); callers guarantee `x > 0` and finite.
pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut z = x;
    let mut product = 1.0;
    while z < SHIFT_THRESHOLD {
        product *= z;
        z += 1.0;
    }
    let shift = if product == 1.0 { 0.0 } else { product.ln() };
    ln_gamma_asymptotic(z) - shift
}

fn ln_gamma_asymptotic(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Stirling series coefficients B_{2k} / (2k (2k-1)).
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2
                                                * (-691.0 / 360_360.0
                                                    + inv2
                                                        * (1.0 / 156.0
                                                            + inv2 * (-3617.0 / 122_400.0))))))));
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// Unchecked ψ(x); callers guarantee `x > 0` and finite.
pub(crate) fn digamma_pos(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let mut z = x;
    let mut shift = 0.0;
    while z < SHIFT_THRESHOLD {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    z.ln() - 0.5 * inv - series - shift
}

/// Unchecked ψ′(x); callers guarantee `x > 0` and finite.
pub(crate) fn trigamma_pos(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let mut z = x;
    let mut shift = 0.0;
    while z < SHIFT_THRESHOLD {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Σ B_{2k} / z^{2k+1} for k = 1..7.
    let bernoulli_tail = inv
        * inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2
                        * (1.0 / 42.0
                            + inv2
                                * (-1.0 / 30.0
                                    + inv2
                                        * (5.0 / 66.0
                                            + inv2 * (-691.0 / 2730.0 + inv2 * 7.0 / 6.0))))));
    inv + 0.5 * inv2 + bernoulli_tail + shift
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // (x, ln Γ(x), ψ(x), ψ′(x)) evaluated with 40-digit arithmetic.
    const REFERENCE: &[(f64, f64, f64, f64)] = &[
        (
            0.001,
            6.9071788853838536825,
            -1000.5755719318103005,
            1000001.642533195869,
        ),
        (
            0.01,
            4.5994798780420217225,
            -100.5608854578686745,
            10001.62121352831322,
        ),
        (
            0.1,
            2.2527126517342059599,
            -10.423754940411076795,
            101.43329915079275882,
        ),
        (
            0.5,
            0.57236494292470008707,
            -1.9635100260214234794,
            4.9348022005446793094,
        ),
        (1.0, 0.0, -0.57721566490153286061, 1.6449340668482264365),
        (
            1.5,
            -0.12078223763524522235,
            0.036489973978576520559,
            0.93480220054467930942,
        ),
        (2.0, 0.0, 0.42278433509846713939, 0.64493406684822643647),
        (
            2.5,
            0.28468287047291915963,
            0.70315664064524318723,
            0.49035775610023486497,
        ),
        (
            3.7,
            1.4280723266653879219,
            1.1671535393615113859,
            0.3100378576700383191,
        ),
        (
            7.9,
            8.3242658680088089235,
            2.0022384875635709878,
            0.13493078345663442193,
        ),
        (
            8.0,
            8.5251613610654143002,
            2.0156414779556099965,
            0.13313701469403142513,
        ),
        (
            10.0,
            12.801827480081469611,
            2.2517525890667211076,
            0.10516633568168574612,
        ),
        (
            25.5,
            56.389167643719946744,
            3.2189424728839197665,
            0.039994669649562924037,
        ),
        (
            123.4,
            469.33609744219055844,
            4.8113737751162773729,
            0.0081366516108652636859,
        ),
        (
            1000.0,
            5905.2204232091812118,
            6.9072551956488120521,
            0.0010005001666666333334,
        ),
        (
            12345.678,
            103959.91990554606092,
            9.4210208207417608869,
            0.000081003287231112068383,
        ),
        (
            1.0e6,
            12815504.56914761166,
            13.815510057964190771,
            1.0000005000001666667e-6,
        ),
    ];

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want.abs().max(1.0)
    }

    #[test]
    fn matches_high_precision_reference() {
        for &(x, lg, psi, psi1) in REFERENCE {
            let (got_lg, got_psi) = special_functions(x).unwrap();
            assert!(
                rel_err(got_lg, lg) <= 1e-10,
                "ln_gamma({x}) = {got_lg}, want {lg}"
            );
            assert!(
                rel_err(got_psi, psi) <= 1e-10,
                "digamma({x}) = {got_psi}, want {psi}"
            );
            let got_psi1 = trigamma(x).unwrap();
            assert!(
                (got_psi1 - psi1).abs() / psi1 <= 1e-10,
                "trigamma({x}) = {got_psi1}, want {psi1}"
            );
        }
    }

    #[test]
    fn digamma_one_is_negative_euler_gamma() {
        assert!((digamma(1.0).unwrap() + 0.577_215_664_901_532_9).abs() < 1e-14);
        assert_eq!(ln_gamma(1.0).unwrap(), 0.0);
        assert!((digamma(2.0).unwrap() - digamma(1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn digamma_recurrence() {
        for x in [0.1, 1.0, 10.0, 1000.0] {
            let step = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!(
                (step - 1.0 / x).abs() <= 1e-10 * (1.0 / x).max(1.0),
                "x = {x}"
            );
        }
    }

    #[test]
    fn rejects_non_positive_and_non_finite() {
        for x in [0.0, -1.0, -0.5, f64::NAN, f64::INFINITY] {
            assert!(matches!(special_functions(x), Err(Error::Domain { .. })));
            assert!(trigamma(x).is_err());
        }
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut factorial: f64 = 1.0;
        for n in 1..30u32 {
            let x = f64::from(n);
            let got = ln_gamma(x + 1.0).unwrap();
            factorial *= x;
            assert!(rel_err(got, factorial.ln()) < 1e-13, "n = {n}");
        }
    }
}

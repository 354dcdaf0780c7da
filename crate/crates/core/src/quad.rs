//! Adaptive Gauss-Kronrod quadrature over the real line.
//!
//! The infinite axis is mapped to (-pi/2, pi/2) through y = tan(theta), so the
//! transformed integrand is g(tan(theta)) * (1 + tan^2(theta)). Polynomially
//! decaying tails become endpoint behavior |pi/2 - theta|^a with a > -1, which
//! the adaptive subdivision resolves; an exponential compression (tanh-style
//! map) would instead leave a near-nonintegrable spike at the endpoints for
//! heavy-tailed integrands.

use crate::error::{Error, Result};

// 15-point Kronrod abscissae on [-1, 1] (positive half) and weights, with the
// embedded 7-point Gauss weights on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_27,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod pass over [a, b]: returns (K15 estimate, |K15 - G7|).
fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);

    let fc = f(mid);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let fsum = f(mid - dx) + f(mid + dx);
        kronrod += fsum * WGK[i];
        if i % 2 == 1 {
            gauss += fsum * WG[i / 2];
        }
    }
    kronrod *= half;
    gauss *= half;
    ((kronrod), (kronrod - gauss).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Adaptive integration of `f` over the finite interval [a, b] to absolute
/// tolerance `abs_tol`. Subdivides the worst panel until the summed error
/// estimate clears the tolerance.
fn integrate_finite<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<f64> {
    // Seed with a few panels so a sharply peaked integrand is not missed by a
    // single coarse pass.
    let seeds = 8;
    let mut panels: Vec<Panel> = Vec::with_capacity(64);
    for s in 0..seeds {
        let pa = a + (b - a) * s as f64 / seeds as f64;
        let pb = a + (b - a) * (s + 1) as f64 / seeds as f64;
        let (v, e) = kronrod(f, pa, pb);
        panels.push(Panel {
            a: pa,
            b: pb,
            value: v,
            error: e,
        });
    }

    loop {
        let total_err: f64 = panels.iter().map(|p| p.error).sum();
        if total_err <= abs_tol {
            return Ok(panels.iter().map(|p| p.value).sum());
        }
        if panels.len() >= max_panels {
            return Err(Error::Numerical(format!(
                "quadrature did not converge: {} panels, error estimate {:.3e} > tolerance {:.3e}",
                panels.len(),
                total_err,
                abs_tol
            )));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let Panel { a: pa, b: pb, .. } = panels[worst];
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // Interval exhausted at f64 resolution; freeze its contribution.
            // If the frozen panels alone exceed the tolerance we cannot win.
            let frozen: f64 = panels
                .iter()
                .filter(|p| {
                    let m = 0.5 * (p.a + p.b);
                    m <= p.a || m >= p.b
                })
                .map(|p| p.error)
                .sum();
            if frozen > abs_tol {
                return Err(Error::Numerical(format!(
                    "quadrature stalled at f64 resolution: residual error {:.3e} > tolerance {:.3e}",
                    frozen, abs_tol
                )));
            }
            // Re-check convergence counting only refinable panels.
            let refinable: f64 = panels
                .iter()
                .filter(|p| {
                    let m = 0.5 * (p.a + p.b);
                    m > p.a && m < p.b
                })
                .map(|p| p.error)
                .sum();
            if refinable + frozen <= abs_tol {
                return Ok(panels.iter().map(|p| p.value).sum());
            }
            return Err(Error::Numerical(
                "quadrature stalled: smallest panel not subdividable".into(),
            ));
        }
        let (v1, e1) = kronrod(f, pa, mid);
        let (v2, e2) = kronrod(f, mid, pb);
        panels[worst] = Panel {
            a: pa,
            b: mid,
            value: v1,
            error: e1,
        };
        panels.push(Panel {
            a: mid,
            b: pb,
            value: v2,
            error: e2,
        });
    }
}

/// Integrate `g` over (-inf, inf) to absolute tolerance `abs_tol` via the
/// tangent substitution. `g` must vanish fast enough at infinity for the
/// transformed integrand to be integrable.
pub(crate) fn integrate_real_line<G: Fn(f64) -> f64>(g: G, abs_tol: f64) -> Result<f64> {
    let transformed = |theta: f64| -> f64 {
        let y = theta.tan();
        let jac = 1.0 + y * y;
        let v = g(y) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate_finite(
        &transformed,
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_2,
        abs_tol,
        8000,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_integrates_to_one() {
        let v = integrate_real_line(
            |y| (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            1e-12,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-11, "got {v}");
    }

    #[test]
    fn cauchy_integrates_to_one() {
        // Heaviest tail the library meets in practice decays like |y|^-3.05;
        // the Cauchy density (|y|^-2) is a stricter stress test.
        let v =
            integrate_real_line(|y| 1.0 / (std::f64::consts::PI * (1.0 + y * y)), 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn second_moment_of_gaussian() {
        let v = integrate_real_line(
            |y| y * y * (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            1e-11,
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-10, "got {v}");
    }
}

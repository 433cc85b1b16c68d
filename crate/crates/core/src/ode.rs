//! Adaptive Dormand–Prince 5(4) integrator for complex-valued state vectors.

use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, h_init: None, h_max: f64::INFINITY, h_min: 1e-12, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dopri5Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` in place.
///
/// `observer` is called after every accepted step with the new time and
/// state; returning an error aborts the integration.
pub fn integrate<F, O>(
    mut f: F,
    t0: f64,
    t1: f64,
    y: &mut [C64],
    opts: &Dopri5Options,
    mut observer: O,
) -> Result<Dopri5Stats>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    O: FnMut(f64, &[C64]) -> Result<()>,
{
    let n = y.len();
    let mut stats = Dopri5Stats::default();
    if t1 <= t0 {
        return Ok(stats);
    }
    let mut k = vec![vec![C64::new(0.0, 0.0); n]; 7];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut y_new = vec![C64::new(0.0, 0.0); n];

    let mut t = t0;
    f(t, y, &mut k[0]);
    stats.evaluations += 1;

    let mut h = match opts.h_init {
        Some(h) => h,
        None => initial_step(y, &k[0], opts),
    }
    .min(opts.h_max)
    .min(t1 - t0);

    let mut last_rejected = false;
    while t < t1 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps { max_steps: opts.max_steps, t });
        }
        if h < opts.h_min {
            return Err(Error::StepSizeUnderflow { t });
        }
        let finishing = t + h >= t1 || t1 - (t + h) < 1e-12 * t1.abs().max(1.0);
        if finishing {
            h = t1 - t;
        }

        let (k1, rest) = k.split_first_mut().expect("seven stages");
        let (k2, rest) = rest.split_first_mut().expect("seven stages");
        let (k3, rest) = rest.split_first_mut().expect("seven stages");
        let (k4, rest) = rest.split_first_mut().expect("seven stages");
        let (k5, rest) = rest.split_first_mut().expect("seven stages");
        let (k6, rest) = rest.split_first_mut().expect("seven stages");
        let k7 = &mut rest[0];

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (h * A21);
        }
        f(t + C2 * h, &tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
        }
        f(t + C3 * h, &tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
        }
        f(t + C4 * h, &tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
        }
        f(t + C5 * h, &tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
        }
        f(t + h, &tmp, k6);
        for i in 0..n {
            y_new[i] = y[i] + (k1[i] * B1 + k3[i] * B3 + k4[i] * B4 + k5[i] * B5 + k6[i] * B6) * h;
        }
        f(t + h, &y_new, k7);
        stats.evaluations += 6;

        let mut err2 = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let scale = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
            err2 += e.norm_sqr() / (scale * scale);
        }
        let err = (err2 / n as f64).sqrt();

        if err <= 1.0 {
            t = if finishing { t1 } else { t + h };
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            stats.accepted += 1;
            observer(t, y)?;
            let mut factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            factor = factor.clamp(0.2, 5.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            h = (h * factor).min(opts.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    Ok(stats)
}

fn initial_step(y: &[C64], dy: &[C64], opts: &Dopri5Options) -> f64 {
    let n = y.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(dy) {
        let sc = opts.atol + opts.rtol * yi.norm();
        d0 += yi.norm_sqr() / (sc * sc);
        d1 += fi.norm_sqr() / (sc * sc);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).min(0.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let opts = Dopri5Options::default();
        integrate(|_, y, dy| dy[0] = -y[0] * 2.0, 0.0, 3.0, &mut y, &opts, |_, _| Ok(())).unwrap();
        assert!((y[0].re - (-6.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rotation_preserves_modulus() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let opts = Dopri5Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        integrate(|_, y, dy| dy[0] = y[0] * C64::new(0.0, 3.0), 0.0, 10.0, &mut y, &opts, |_, _| Ok(())).unwrap();
        let exact = C64::from_polar(1.0, 30.0);
        assert!((y[0] - exact).norm() < 1e-8);
    }

    #[test]
    fn quadrature_of_explicit_time_dependence() {
        // ∫₀^T 2 e^{−2t} dt = 1 − e^{−2T}
        let mut y = vec![C64::new(0.0, 0.0)];
        let opts = Dopri5Options::default();
        integrate(|t, _, dy| dy[0] = C64::new(2.0 * (-2.0 * t).exp(), 0.0), 0.0, 40.0, &mut y, &opts, |_, _| Ok(()))
            .unwrap();
        assert!((y[0].re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn observer_can_abort() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let opts = Dopri5Options::default();
        let r = integrate(
            |_, y, dy| dy[0] = y[0],
            0.0,
            10.0,
            &mut y,
            &opts,
            |t, _| if t > 1.0 { Err(Error::InvariantBreach { t, what: "stop".into() }) } else { Ok(()) },
        );
        assert!(matches!(r, Err(Error::InvariantBreach { .. })));
    }

    #[test]
    fn step_cap_is_reported() {
        let mut y = vec![C64::new(1.0, 0.0)];
        let opts = Dopri5Options { max_steps: 3, ..Default::default() };
        let r = integrate(|_, y, dy| dy[0] = -y[0], 0.0, 100.0, &mut y, &opts, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::TooManySteps { .. })));
    }
}

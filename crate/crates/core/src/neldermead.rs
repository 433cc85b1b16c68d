//! Box-constrained Nelder–Mead minimization. Points outside the box score
//! `+∞`, which the simplex treats like any other rejected vertex.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once the spread of simplex values falls below this.
    pub ftol: f64,
    /// ... and the simplex fits in a box of this size.
    pub xtol: f64,
    pub max_iterations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { ftol: 1e-8, xtol: 1e-6, max_iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// `false` when the iteration cap was hit; `x` is then the best vertex seen.
    pub converged: bool,
}

/// Minimizes `f` over `lower ≤ x ≤ upper`, starting from `x0` with initial
/// edge lengths `step`.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(step.len() == n && lower.len() == n && upper.len() == n, "dimension mismatch");
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        if x.iter().zip(lower).zip(upper).all(|((v, lo), hi)| v >= lo && v <= hi) {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        // Step inwards when the vertex would leave the box.
        v[i] = if v[i] + step[i] <= upper[i] { v[i] + step[i] } else { v[i] - step[i] };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = (1..=n)
            .flat_map(|i| (0..n).map(move |k| (i, k)))
            .map(|(i, k)| (simplex[i][k] - simplex[0][k]).abs())
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.ftol && size <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(-gamma);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = (0..n).map(|k| simplex[0][k] + sigma * (simplex[i][k] - simplex[0][k])).collect();
            values[i] = eval(&v);
            simplex[i] = v;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("nonempty simplex");
    Minimum { x: simplex[best].clone(), value: values[best], iterations, evaluations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = minimize(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.3, 0.3],
            &[-3.0, -3.0],
            &[3.0, 3.0],
            &NelderMeadOptions { ftol: 1e-14, xtol: 1e-8, max_iterations: 5000 },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_the_box() {
        // Unconstrained minimum at (2, 2) lies outside.
        let m = minimize(
            |x| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
            &[0.0, 0.0],
            &[0.2, 0.2],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.x.iter().all(|&v| v <= 1.0));
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn starting_on_the_upper_edge() {
        let m = minimize(|x| (x[0] - 0.5).powi(2), &[1.0], &[0.3], &[0.0], &[1.0], &NelderMeadOptions::default());
        assert!((m.x[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn iteration_cap_returns_best_seen() {
        let m = minimize(
            |x| x[0] * x[0] + x[1] * x[1],
            &[3.0, 3.0],
            &[0.1, 0.1],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &NelderMeadOptions { max_iterations: 5, ..Default::default() },
        );
        assert!(!m.converged);
        assert!(m.value < 18.0);
    }

    #[test]
    fn nan_is_treated_as_infeasible() {
        let m = minimize(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.2).powi(2) },
            &[1.0],
            &[0.5],
            &[-2.0],
            &[2.0],
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 0.2).abs() < 1e-5);
    }
}

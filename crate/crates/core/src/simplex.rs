//! Nelder-Mead direct search over ℝᵈ.
//!
//! Shared by GP hyperparameter MAP estimation and GARCH likelihood fitting.
//! Both callers optimize in an unconstrained transformed space (logs,
//! logistic maps), so the search itself is bound-free. An objective value of
//! `f64::INFINITY` marks a rejected point — e.g. a failed covariance
//! factorization — and the total ordering used here pushes such vertices out
//! of the simplex naturally.

/// Standard Nelder-Mead coefficients.
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    pub max_iter: usize,
    /// Stop when the spread of vertex values falls below this.
    pub f_tol: f64,
    /// Stop when every coordinate's spread across vertices falls below this.
    pub x_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// True when a tolerance triggered the stop (rather than max_iter).
    pub converged: bool,
}

/// Minimize `f` from `start`, building the initial simplex by stepping
/// `init_step` along each coordinate axis.
pub(crate) fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    start: &[f64],
    init_step: f64,
    opts: &SimplexOptions,
) -> SimplexOutcome {
    let d = start.len();
    assert!(d > 0, "cannot optimize over zero dimensions");
    let mut eval = |x: &[f64]| -> f64 {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    vertices.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += init_step;
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| eval(v)).collect();

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < opts.max_iter {
        // Keep vertices sorted best-first; d is tiny so a full sort is cheap.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted_vertices: Vec<Vec<f64>> = order.iter().map(|&i| vertices[i].clone()).collect();
        let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        vertices = sorted_vertices;
        values = sorted_values;

        let spread = values[d] - values[0];
        if spread.is_finite() && spread.abs() < opts.f_tol {
            converged = true;
            break;
        }
        let x_spread = (0..d)
            .map(|k| {
                let lo = vertices.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
                let hi = vertices.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if x_spread < opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; d];
        for v in &vertices[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in centroid.iter_mut() {
            *c /= d as f64;
        }

        let worst = vertices[d].clone();
        let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect()
        };

        // Reflection.
        let xr = lerp(&centroid, &worst, -REFLECT);
        let fr = eval(&xr);
        if fr < values[0] {
            // Expansion.
            let xe = lerp(&centroid, &worst, -EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                vertices[d] = xe;
                values[d] = fe;
            } else {
                vertices[d] = xr;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            vertices[d] = xr;
            values[d] = fr;
            continue;
        }
        // Contraction: outside if the reflected point improved on the worst,
        // inside otherwise.
        let (xc, f_limit) = if fr < values[d] {
            (lerp(&centroid, &xr, CONTRACT), fr)
        } else {
            (lerp(&centroid, &worst, CONTRACT), values[d])
        };
        let fc = eval(&xc);
        if fc <= f_limit {
            vertices[d] = xc;
            values[d] = fc;
            continue;
        }
        // Shrink everything toward the best vertex.
        let best = vertices[0].clone();
        for i in 1..=d {
            vertices[i] = lerp(&best, &vertices[i], SHRINK);
            values[i] = eval(&vertices[i]);
        }
    }

    let mut best = 0;
    for i in 1..=d {
        if values[i].total_cmp(&values[best]).is_lt() {
            best = i;
        }
    }
    SimplexOutcome {
        x: vertices.swap_remove(best),
        value: values[best],
        iterations,
        converged,
    }
}

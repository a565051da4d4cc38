//! Derivative-free minimization by the Nelder-Mead simplex method.
//!
//! Deterministic given its inputs: the only tie-breaking is stable sorting of
//! vertices by value. Used for moment matching and Monte Carlo likelihood
//! surfaces where gradients are unavailable or too noisy to trust.

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`, building the initial simplex by stepping
/// `step[i]` along each coordinate. Stops when the spread of vertex values
/// drops below `tol` or after `max_iter` reflections.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    tol: f64,
    max_iter: usize,
) -> NelderMeadResult {
    assert_eq!(x0.len(), step.len());
    let dim = x0.len();
    assert!(dim > 0);
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        // Value spread alone can tie across a wide simplex (a symmetric
        // objective, or plateaus created by infinite penalties), so require
        // the simplex itself to have collapsed as well.
        let diameter = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (values[worst] - values[best]).abs() <= tol
            && diameter <= tol.sqrt().max(1e-9)
            && values[best].is_finite()
            && values[worst].is_finite()
        {
            converged = true;
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i != worst {
                for (c, &x) in centroid.iter_mut().zip(v) {
                    *c += x;
                }
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let blend = |from: &[f64], coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };

        let reflected = blend(&simplex[worst], alpha);
        let f_reflected = f(&reflected);
        if f_reflected < values[best] {
            let expanded = blend(&simplex[worst], gamma);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            let contracted = blend(&simplex[worst], -rho);
            let f_contracted = f(&contracted);
            if f_contracted < values[worst] {
                simplex[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // Shrink toward the best vertex.
                let anchor = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i != best {
                        for (x, &a) in v.iter_mut().zip(&anchor) {
                            *x = a + sigma * (*x - a);
                        }
                        values[i] = f(v);
                    }
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..values.len() {
        if values[i] < values[best] {
            best = i;
        }
    }
    NelderMeadResult {
        x: simplex.swap_remove(best),
        value: values[best],
        iterations,
        converged,
    }
}

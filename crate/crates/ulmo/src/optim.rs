//! Derivative-free simplex minimization (Nelder-Mead).
//!
//! Used by [`crate::fit`] on the unconstrained parameter vector; restarts
//! and starting values live there. Non-finite objective values are treated
//! as infinitely bad, so the simplex backs away from overflow regions.

/// Nelder-Mead settings. Convergence requires both a small simplex diameter
/// and a small spread of function values across the vertices.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NelderMead {
    pub max_iters: usize,
    pub diameter_tol: f64,
    pub spread_tol: f64,
    /// Absolute offset used to build the initial simplex around the start.
    pub init_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_iters: 5000, diameter_tol: 1e-6, spread_tol: 1e-8, init_step: 0.25 }
    }
}

/// Best point found by one Nelder-Mead run.
#[derive(Debug, Clone)]
pub struct NmOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    pub fn minimize(&self, f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64]) -> NmOutcome {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += self.init_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

        let mut iterations = 0usize;
        let mut converged = false;
        while iterations < self.max_iters {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let best = order[0];
            let worst = order[n];
            let second_worst = order[n - 1];

            let diameter = simplex
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[best])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0f64, f64::max);
            let spread = values[worst] - values[best];
            if diameter < self.diameter_tol && spread.abs() < self.spread_tol {
                converged = true;
                break;
            }

            // Centroid of all but the worst vertex.
            let mut centroid = vec![0.0; n];
            for (i, v) in simplex.iter().enumerate() {
                if i != worst {
                    for (c, x) in centroid.iter_mut().zip(v) {
                        *c += x / n as f64;
                    }
                }
            }
            let blend = |a: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[worst])
                    .map(|(c, w)| c + a * (c - w))
                    .collect()
            };

            let reflected = blend(1.0);
            let f_r = eval(&reflected, &mut evals);
            if f_r < values[best] {
                let expanded = blend(2.0);
                let f_e = eval(&expanded, &mut evals);
                if f_e < f_r {
                    simplex[worst] = expanded;
                    values[worst] = f_e;
                } else {
                    simplex[worst] = reflected;
                    values[worst] = f_r;
                }
            } else if f_r < values[second_worst] {
                simplex[worst] = reflected;
                values[worst] = f_r;
            } else {
                let contracted = if f_r < values[worst] { blend(0.5) } else { blend(-0.5) };
                let f_c = eval(&contracted, &mut evals);
                if f_c < values[worst].min(f_r) {
                    simplex[worst] = contracted;
                    values[worst] = f_c;
                } else {
                    // Shrink toward the best vertex.
                    let best_v = simplex[best].clone();
                    for (i, v) in simplex.iter_mut().enumerate() {
                        if i != best {
                            for (x, b) in v.iter_mut().zip(&best_v) {
                                *x = b + 0.5 * (*x - b);
                            }
                        }
                    }
                    for i in 0..=n {
                        if i != best {
                            values[i] = eval(&simplex[i].clone(), &mut evals);
                        }
                    }
                }
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("nonempty");
        NmOutcome {
            x: simplex[best].clone(),
            value: values[best],
            iterations,
            evals,
            converged,
        }
    }
}

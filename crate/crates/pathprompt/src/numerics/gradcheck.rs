//! Central-finite-difference gradient checking.
//!
//! The checker rebuilds the forward pass from scratch for every probe, so it
//! exercises only forward code and is independent of the adjoint
//! implementations it verifies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::graph::{Graph, Reduction, Var};
use super::tensor::Tensor;
use super::NumericsError;

/// Finite-difference step. Central differences at this step keep the
/// truncation error around 1e-8 for well-scaled inputs.
pub const FD_STEP: f64 = 1e-4;

/// Worst relative error observed for one checked function.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative for meaningful gradients,
/// absolute-at-1e-3-scale near zero so exact-zero gradients compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare autodiff gradients against central finite differences.
///
/// `build` must construct the loss from the given leaves alone; it runs once
/// per probe with perturbed copies of `inputs`.
pub fn check_grads<F>(inputs: &[Tensor], build: F) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |probe: &[Tensor], with_grad: bool| -> Result<(f64, Option<Vec<Tensor>>), NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.leaf(t.clone(), with_grad)).collect();
        let loss = build(&mut g, &vars)?;
        let value = g.value(loss).item();
        if with_grad {
            g.backward(loss)?;
            let grads = vars
                .iter()
                .zip(probe)
                .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
                .collect();
            Ok((value, Some(grads)))
        } else {
            Ok((value, None))
        }
    };

    let (_, grads) = eval(inputs, true)?;
    let grads = grads.expect("gradients requested");

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for elem in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= FD_STEP;
            let (lp, _) = eval(&plus, false)?;
            let (lm, _) = eval(&minus, false)?;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let analytic = grads[which].data()[elem];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::new(shape, data).expect("finite random data")
}

/// Like [`random_tensor`] but keeps every value away from zero, for ops with
/// a kink at the origin (relu) where finite differences straddle the corner.
fn random_tensor_off_origin(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("finite random data")
}

/// Weighted-sum loss so each output element gets a distinct adjoint.
fn weighted_loss(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var, NumericsError> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

macro_rules! run_cases {
    ($results:ident, $name:expr, $cases:expr, $body:expr) => {{
        let mut worst = 0.0f64;
        for case in 0..$cases {
            #[allow(clippy::redundant_closure_call)]
            let err: f64 = $body(case)?;
            worst = worst.max(err);
        }
        $results.push(CheckResult { name: $name.into(), cases: $cases, max_rel_err: worst });
    }};
}

/// Gradient-check every primitive on seeded random inputs.
pub fn primitive_suite(seed: u64, cases: usize) -> Result<Vec<CheckResult>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();

    run_cases!(results, "add", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..5usize);
        let (a, b) = (random_tensor(&mut rng, vec![n, d]), random_tensor(&mut rng, vec![n, d]));
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[a, b], |g, vars| {
            let y = g.add(vars[0], vars[1])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "add_row", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..5usize);
        let (m, v) = (random_tensor(&mut rng, vec![n, d]), random_tensor(&mut rng, vec![d]));
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[m, v], |g, vars| {
            let y = g.add_row(vars[0], vars[1])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "mul", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..5usize);
        let (a, b) = (random_tensor(&mut rng, vec![n, d]), random_tensor(&mut rng, vec![n, d]));
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[a, b], |g, vars| {
            let y = g.mul(vars[0], vars[1])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "mul_row", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..5usize);
        let (m, v) = (random_tensor(&mut rng, vec![n, d]), random_tensor(&mut rng, vec![d]));
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[m, v], |g, vars| {
            let y = g.mul_row(vars[0], vars[1])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "scale", cases, |_| {
        let d = rng.random_range(1..8usize);
        let a = random_tensor(&mut rng, vec![d]);
        let w = random_tensor(&mut rng, vec![d]);
        let factor = rng.random_range(-2.0..2.0);
        check_grads(&[a], |g, vars| {
            let y = g.scale(vars[0], factor)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "matmul", cases, |_| {
        let n = rng.random_range(1..4usize);
        let k = rng.random_range(1..4usize);
        let m = rng.random_range(1..4usize);
        let (a, b) = (random_tensor(&mut rng, vec![n, k]), random_tensor(&mut rng, vec![k, m]));
        let w = random_tensor(&mut rng, vec![n, m]);
        check_grads(&[a, b], |g, vars| {
            let y = g.matmul(vars[0], vars[1])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "transpose", cases, |_| {
        let n = rng.random_range(1..4usize);
        let m = rng.random_range(1..4usize);
        let a = random_tensor(&mut rng, vec![n, m]);
        let w = random_tensor(&mut rng, vec![m, n]);
        check_grads(&[a], |g, vars| {
            let y = g.transpose(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "concat", cases, |_| {
        let d1 = rng.random_range(1..4usize);
        let d2 = rng.random_range(1..4usize);
        let (a, b) = (random_tensor(&mut rng, vec![d1]), random_tensor(&mut rng, vec![d2]));
        let w = random_tensor(&mut rng, vec![d1 + d2]);
        check_grads(&[a, b], |g, vars| {
            let y = g.concat(0, vars)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "concat_cols", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d1 = rng.random_range(1..3usize);
        let d2 = rng.random_range(1..3usize);
        let (a, b) = (random_tensor(&mut rng, vec![n, d1]), random_tensor(&mut rng, vec![n, d2]));
        let w = random_tensor(&mut rng, vec![n, d1 + d2]);
        check_grads(&[a, b], |g, vars| {
            let y = g.concat(1, vars)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "mean_rows", cases, |_| {
        let n = rng.random_range(1..5usize);
        let d = rng.random_range(1..5usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let w = random_tensor(&mut rng, vec![d]);
        check_grads(&[a], |g, vars| {
            let y = g.mean_rows(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "tanh", cases, |_| {
        let d = rng.random_range(1..8usize);
        let a = random_tensor(&mut rng, vec![d]);
        let w = random_tensor(&mut rng, vec![d]);
        check_grads(&[a], |g, vars| {
            let y = g.tanh(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "relu", cases, |_| {
        let d = rng.random_range(1..8usize);
        let a = random_tensor_off_origin(&mut rng, vec![d]);
        let w = random_tensor(&mut rng, vec![d]);
        check_grads(&[a], |g, vars| {
            let y = g.relu(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "layer_norm", cases, |_| {
        let n = rng.random_range(1..3usize);
        let d = rng.random_range(2..6usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[a], |g, vars| {
            let y = g.layer_norm(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "softmax", cases, |_| {
        let n = rng.random_range(1..3usize);
        let d = rng.random_range(2..6usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[a], |g, vars| {
            let y = g.softmax(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "causal_softmax", cases, |_| {
        let n = rng.random_range(2..5usize);
        let a = random_tensor(&mut rng, vec![n, n]);
        let w = random_tensor(&mut rng, vec![n, n]);
        check_grads(&[a], |g, vars| {
            let y = g.causal_softmax(vars[0])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "cross_entropy_logits", cases, |case: usize| {
        let n = rng.random_range(1..4usize);
        let v = rng.random_range(2..6usize);
        let a = random_tensor(&mut rng, vec![n, v]);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let reduction = if case % 2 == 0 { Reduction::Mean } else { Reduction::Sum };
        check_grads(&[a], |g, vars| g.cross_entropy_logits(vars[0], &targets, reduction))
    });

    run_cases!(results, "gather_rows", cases, |_| {
        let v = rng.random_range(2..5usize);
        let d = rng.random_range(1..4usize);
        let n = rng.random_range(1..5usize);
        let table = random_tensor(&mut rng, vec![v, d]);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        let w = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[table], |g, vars| {
            let y = g.gather_rows(vars[0], &ids)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "slice_rows", cases, |_| {
        let n = rng.random_range(2..5usize);
        let d = rng.random_range(1..4usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let start = rng.random_range(0..n - 1);
        let end = rng.random_range(start + 1..n + 1);
        let w = random_tensor(&mut rng, vec![end - start, d]);
        check_grads(&[a], |g, vars| {
            let y = g.slice_rows(vars[0], start, end)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "slice_cols", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(2..5usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let start = rng.random_range(0..d - 1);
        let end = rng.random_range(start + 1..d + 1);
        let w = random_tensor(&mut rng, vec![n, end - start]);
        check_grads(&[a], |g, vars| {
            let y = g.slice_cols(vars[0], start, end)?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "reshape", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..4usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        let w = random_tensor(&mut rng, vec![n * d]);
        check_grads(&[a], |g, vars| {
            let y = g.reshape(vars[0], vec![n * d])?;
            weighted_loss(g, y, &w)
        })
    });

    run_cases!(results, "sum_all", cases, |_| {
        let n = rng.random_range(1..4usize);
        let d = rng.random_range(1..4usize);
        let a = random_tensor(&mut rng, vec![n, d]);
        check_grads(&[a], |g, vars| g.sum_all(vars[0]))
    });

    run_cases!(results, "composed_mlp", cases, |_| {
        // Three-layer composition: affine, tanh, affine, softmax, CE.
        let d = rng.random_range(2..5usize);
        let h = rng.random_range(2..5usize);
        let x = random_tensor(&mut rng, vec![1, d]);
        let w1 = random_tensor(&mut rng, vec![d, h]);
        let b1 = random_tensor(&mut rng, vec![h]);
        let w2 = random_tensor(&mut rng, vec![h, 3]);
        let target = rng.random_range(0..3usize);
        check_grads(&[x, w1, b1, w2], |g, vars| {
            let a = g.matmul(vars[0], vars[1])?;
            let a = g.add_row(a, vars[2])?;
            let a = g.tanh(a)?;
            let logits = g.matmul(a, vars[3])?;
            g.cross_entropy_logits(logits, &[target], Reduction::Mean)
        })
    });

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_at_1e_minus_4() {
        let results = primitive_suite(42, 5).unwrap();
        for r in &results {
            assert!(r.passed(1e-4), "{} failed with max rel err {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let results = primitive_suite(7, 3).unwrap();
        let mlp = results.iter().find(|r| r.name == "composed_mlp").unwrap();
        assert!(mlp.max_rel_err < 1e-4, "max rel err {:.3e}", mlp.max_rel_err);
    }

    #[test]
    fn rel_err_handles_zero_gradients() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!(rel_err(1e-9, 0.0) < 1e-4);
    }
}

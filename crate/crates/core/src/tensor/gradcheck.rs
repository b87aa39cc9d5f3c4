//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::seeds;
use rand::seq::index::sample;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative error an implementation is allowed before it counts as
/// wrong.
pub const FD_TOLERANCE: f64 = 1e-4;

/// How many coordinates of each input to probe. Zero means every coordinate.
#[derive(Copy, Clone, Debug)]
pub struct CoordSample {
    pub per_tensor: usize,
    pub seed: u64,
}

impl CoordSample {
    pub fn all() -> Self {
        CoordSample { per_tensor: 0, seed: 0 }
    }

    pub fn up_to(per_tensor: usize, seed: u64) -> Self {
        CoordSample { per_tensor, seed }
    }
}

/// Outcome of a finite-difference sweep. `max_rel_err` is the headline
/// number; the rest identifies the worst coordinate for diagnostics.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE
    }
}

/// Checks the gradient of a scalar-valued graph with respect to one input.
pub fn grad_check<F>(input: &Tensor<f64>, build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_multi(std::slice::from_ref(input), CoordSample::all(), build)
}

/// Checks gradients with respect to several inputs at once. The builder is
/// re-invoked for every probe, so it must construct the same graph each time
/// (seed any internal randomness).
pub fn grad_check_multi<F>(
    inputs: &[Tensor<f64>],
    coords: CoordSample,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        tape.backward(root)?;
        vars.iter().map(|&v| tape.grad(v)).collect()
    };

    let eval = |inputs: &[Tensor<f64>], build: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item()?)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst_input: 0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };

    let mut probe = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        let n = tensor.numel();
        let picks: Vec<usize> = if coords.per_tensor == 0 || coords.per_tensor >= n {
            (0..n).collect()
        } else {
            let mut rng = seeds::rng_from(seeds::derive_seed_n(coords.seed, "gradcheck", ti as u64));
            sample(&mut rng, n, coords.per_tensor).into_vec()
        };

        for ci in picks {
            let orig = probe[ti].data()[ci];
            probe[ti].data_mut()[ci] = orig + FD_STEP;
            let up = eval(&probe, &mut build)?;
            probe[ti].data_mut()[ci] = orig - FD_STEP;
            let down = eval(&probe, &mut build)?;
            probe[ti].data_mut()[ci] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let exact = analytic[ti].data()[ci];
            let denom = numeric.abs().max(exact.abs()).max(1e-8);
            let rel = (numeric - exact).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = ti;
                report.worst_coord = ci;
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from;

    #[test]
    fn per_op_gradients_match_finite_differences() {
        // Every differentiable op, random inputs, many seeds.
        for seed in 0..100u64 {
            let mut rng = rng_from(seed);
            let a = Tensor::randn(vec![3, 4], 1.0, &mut rng);
            let b = Tensor::randn(vec![4, 2], 1.0, &mut rng);
            let report = grad_check_multi(&[a, b], CoordSample::all(), |tape, vars| {
                let y = tape.matmul(vars[0], vars[1])?;
                tape.sum_all(y)
            })
            .unwrap();
            assert!(report.passes(), "matmul seed {seed}: {report:?}");

            let a = Tensor::randn(vec![3, 4], 1.0, &mut rng);
            let b = Tensor::randn(vec![2, 4], 1.0, &mut rng);
            let report = grad_check_multi(&[a, b], CoordSample::all(), |tape, vars| {
                let y = tape.matmul_nt(vars[0], vars[1])?;
                tape.sum_all(y)
            })
            .unwrap();
            assert!(report.passes(), "matmul_nt seed {seed}: {report:?}");

            let x = Tensor::randn(vec![2, 5], 1.0, &mut rng);
            let w = Tensor::randn(vec![2, 5], 1.0, &mut rng);
            let report = grad_check_multi(&[x, w], CoordSample::all(), |tape, vars| {
                let m = tape.mul(vars[0], vars[1])?;
                let s = tape.add(m, vars[0])?;
                let sc = tape.scale(s, 1.7)?;
                tape.sum_all(sc)
            })
            .unwrap();
            assert!(report.passes(), "mul/add/scale seed {seed}: {report:?}");

            let x = Tensor::randn(vec![3, 4], 1.0, &mut rng);
            let bias = Tensor::randn(vec![4], 1.0, &mut rng);
            let report = grad_check_multi(&[x, bias], CoordSample::all(), |tape, vars| {
                let y = tape.add_bias(vars[0], vars[1])?;
                let g = tape.gelu(y)?;
                tape.sum_all(g)
            })
            .unwrap();
            assert!(report.passes(), "add_bias/gelu seed {seed}: {report:?}");

            let x = Tensor::randn(vec![2, 6], 1.0, &mut rng);
            let mix = Tensor::randn(vec![2, 6], 0.5, &mut rng);
            let report = grad_check_multi(&[x, mix], CoordSample::all(), |tape, vars| {
                let y = tape.softmax(vars[0], 1)?;
                let weighted = tape.mul(y, vars[1])?;
                tape.sum_all(weighted)
            })
            .unwrap();
            assert!(report.passes(), "softmax seed {seed}: {report:?}");

            let x = Tensor::randn(vec![4, 4], 1.0, &mut rng);
            let mix = Tensor::randn(vec![4, 4], 0.5, &mut rng);
            let report = grad_check_multi(&[x, mix], CoordSample::all(), |tape, vars| {
                let y = tape.causal_softmax(vars[0])?;
                let weighted = tape.mul(y, vars[1])?;
                tape.sum_all(weighted)
            })
            .unwrap();
            assert!(report.passes(), "causal_softmax seed {seed}: {report:?}");

            let x = Tensor::randn(vec![3, 5], 1.0, &mut rng);
            let g = Tensor::randn(vec![5], 0.3, &mut rng).map(|v| v + 1.0);
            let b = Tensor::randn(vec![5], 0.3, &mut rng);
            let report = grad_check_multi(&[x, g, b], CoordSample::all(), |tape, vars| {
                let y = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                let sq = tape.mul(y, y)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "layer_norm seed {seed}: {report:?}");

            let table = Tensor::randn(vec![7, 3], 1.0, &mut rng);
            let report = grad_check_multi(&[table], CoordSample::all(), |tape, vars| {
                // Repeated id exercises scatter accumulation.
                let rows = tape.embedding(vars[0], &[1, 4, 1, 6])?;
                let sq = tape.mul(rows, rows)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "embedding seed {seed}: {report:?}");

            let x = Tensor::randn(vec![5, 3], 1.0, &mut rng);
            let report = grad_check_multi(&[x], CoordSample::all(), |tape, vars| {
                let picked = tape.gather_rows(vars[0], &[0, 2, 2, 4])?;
                let sq = tape.mul(picked, picked)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "gather_rows seed {seed}: {report:?}");

            let a = Tensor::randn(vec![2, 3], 1.0, &mut rng);
            let b = Tensor::randn(vec![4, 3], 1.0, &mut rng);
            let report = grad_check_multi(&[a, b], CoordSample::all(), |tape, vars| {
                let y = tape.concat_rows(&[vars[0], vars[1]])?;
                let sq = tape.mul(y, y)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "concat_rows seed {seed}: {report:?}");

            let x = Tensor::randn(vec![3, 6], 1.0, &mut rng);
            let report = grad_check_multi(&[x], CoordSample::all(), |tape, vars| {
                let left = tape.slice_cols(vars[0], 0, 2)?;
                let right = tape.slice_cols(vars[0], 2, 4)?;
                let joined = tape.concat_cols(&[right, left])?;
                let sq = tape.mul(joined, joined)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "slice/concat_cols seed {seed}: {report:?}");

            let logits = Tensor::randn(vec![4, 5], 1.0, &mut rng);
            let report = grad_check_multi(&[logits], CoordSample::all(), |tape, vars| {
                tape.cross_entropy(vars[0], &[0, 3, 4, 1])
            })
            .unwrap();
            assert!(report.passes(), "cross_entropy seed {seed}: {report:?}");
        }
    }

    #[test]
    fn dropout_gradient_matches_its_mask() {
        // Same rng seed inside the builder makes the mask identical across
        // probes, so the check is exact.
        for seed in 0..20u64 {
            let mut rng = rng_from(seed);
            let x = Tensor::randn(vec![4, 4], 1.0, &mut rng);
            let report = grad_check_multi(&[x], CoordSample::all(), |tape, vars| {
                let mut drop_rng = rng_from(1234);
                let y = tape.dropout(vars[0], 0.5, &mut drop_rng)?;
                let sq = tape.mul(y, y)?;
                tape.sum_all(sq)
            })
            .unwrap();
            assert!(report.passes(), "dropout seed {seed}: {report:?}");
        }
    }

    #[test]
    fn composite_mlp_gradient() {
        // Two-layer net with layer norm, gelu, softmax head and
        // cross-entropy: the integration case.
        for seed in 0..10u64 {
            let mut rng = rng_from(1000 + seed);
            let x = Tensor::randn(vec![4, 6], 1.0, &mut rng);
            let w1 = Tensor::randn(vec![6, 8], 0.5, &mut rng);
            let b1 = Tensor::randn(vec![8], 0.5, &mut rng);
            let g = Tensor::randn(vec![8], 0.2, &mut rng).map(|v| v + 1.0);
            let be = Tensor::randn(vec![8], 0.2, &mut rng);
            let w2 = Tensor::randn(vec![8, 3], 0.5, &mut rng);
            let inputs = [x, w1, b1, g, be, w2];
            let report = grad_check_multi(&inputs, CoordSample::all(), |tape, v| {
                let h = tape.matmul(v[0], v[1])?;
                let h = tape.add_bias(h, v[2])?;
                let h = tape.gelu(h)?;
                let h = tape.layer_norm(h, v[3], v[4], 1e-5)?;
                let logits = tape.matmul(h, v[5])?;
                tape.cross_entropy(logits, &[2, 0, 1, 1])
            })
            .unwrap();
            assert!(report.passes(), "mlp seed {seed}: {report:?}");
        }
    }
}

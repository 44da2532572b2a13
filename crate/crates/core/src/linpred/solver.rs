use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::solve_hermitian;

/// Solves the weighted least-squares problem
/// `min_g  sum_t |d(t) - g^H x(t)|^2 / w(t)`
/// over complex filter vectors `g`.
///
/// `regressors` holds one row `x(t)` per time step. The normal equations are
/// regularized with diagonal loading `loading * trace(R) / M` before the
/// Hermitian solve. If every regressor row is zero the result is a zero
/// filter when loading is positive, and an error otherwise.
pub fn solve_weighted_ls(
    targets: ArrayView1<'_, Complex64>,
    regressors: ArrayView2<'_, Complex64>,
    weights: ArrayView1<'_, f64>,
    loading: f64,
) -> Result<Array1<Complex64>> {
    let steps = targets.len();
    let taps = regressors.ncols();
    if steps == 0 || taps == 0 {
        return Err(Error::EmptyInput);
    }
    if regressors.nrows() != steps || weights.len() != steps {
        return Err(Error::ShapeMismatch(format!(
            "targets {}, regressors {:?}, weights {}",
            steps,
            regressors.dim(),
            weights.len()
        )));
    }
    if !(loading >= 0.0) {
        return Err(Error::BadConfig(format!(
            "diagonal loading must be non-negative, got {loading}"
        )));
    }
    if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(Error::BadConfig(
            "weights must be strictly positive and finite".to_string(),
        ));
    }

    // Accumulate the lower triangle of R = sum_t x x^H / w and the right-hand
    // side p = sum_t x * conj(d) / w.
    let mut corr = vec![Complex64::default(); taps * taps];
    let mut rhs: Array1<Complex64> = Array1::zeros(taps);
    let mut scaled = vec![Complex64::default(); taps];
    let mut row_buf = vec![Complex64::default(); taps];
    for t in 0..steps {
        let row = regressors.row(t);
        let inv_w = 1.0 / weights[t];
        let x: &[Complex64] = match row.as_slice() {
            Some(slice) => slice,
            None => {
                for (dst, src) in row_buf.iter_mut().zip(row.iter()) {
                    *dst = *src;
                }
                &row_buf
            }
        };
        for (dst, src) in scaled.iter_mut().zip(x.iter()) {
            *dst = src * inv_w;
        }
        for i in 0..taps {
            let xi = scaled[i];
            if xi.re == 0.0 && xi.im == 0.0 {
                continue;
            }
            let dst = &mut corr[i * taps..i * taps + i + 1];
            for (acc, xj) in dst.iter_mut().zip(x.iter()) {
                *acc += xi * xj.conj();
            }
        }
        let target_conj = targets[t].conj();
        if target_conj.re != 0.0 || target_conj.im != 0.0 {
            for (acc, xi) in rhs.iter_mut().zip(scaled.iter()) {
                *acc += xi * target_conj;
            }
        }
    }

    let trace: f64 = (0..taps).map(|i| corr[i * taps + i].re).sum();
    if !trace.is_finite() || !rhs.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::NonFiniteSpectrogram);
    }
    if trace == 0.0 {
        if loading > 0.0 {
            return Ok(Array1::zeros(taps));
        }
        return Err(Error::RankDeficient);
    }

    let delta = loading * trace / taps as f64;
    let mut matrix = Array2::zeros((taps, taps));
    for i in 0..taps {
        for j in 0..=i {
            let value = corr[i * taps + j];
            matrix[[i, j]] = value;
            if i != j {
                matrix[[j, i]] = value.conj();
            }
        }
        matrix[[i, i]] += Complex64::new(delta, 0.0);
    }

    solve_hermitian(matrix.view(), rhs.view()).ok_or(Error::RankDeficient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    /// Independent check: builds the weighted normal equations directly and
    /// solves them by Gaussian elimination with partial pivoting.
    fn oracle_solution(
        targets: &Array1<Complex64>,
        regressors: &Array2<Complex64>,
        weights: &Array1<f64>,
        loading: f64,
    ) -> Array1<Complex64> {
        let steps = targets.len();
        let taps = regressors.ncols();
        let mut a = vec![vec![c(0.0, 0.0); taps + 1]; taps];
        let mut trace = 0.0;
        for i in 0..taps {
            for j in 0..taps {
                let mut sum = c(0.0, 0.0);
                for t in 0..steps {
                    sum += regressors[[t, i]] * regressors[[t, j]].conj() / weights[t];
                }
                a[i][j] = sum;
                if i == j {
                    trace += sum.re;
                }
            }
            let mut sum = c(0.0, 0.0);
            for t in 0..steps {
                sum += regressors[[t, i]] * targets[t].conj() / weights[t];
            }
            a[i][taps] = sum;
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += c(loading * trace / taps as f64, 0.0);
        }
        // Gaussian elimination on the augmented system.
        for col in 0..taps {
            let pivot = (col..taps)
                .max_by(|&x, &y| a[x][col].norm().partial_cmp(&a[y][col].norm()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let lead = a[col][col];
            for k in col..=taps {
                a[col][k] /= lead;
            }
            for row in 0..taps {
                if row != col {
                    let factor = a[row][col];
                    for k in col..=taps {
                        let sub = factor * a[col][k];
                        a[row][k] -= sub;
                    }
                }
            }
        }
        Array1::from_iter((0..taps).map(|i| a[i][taps]))
    }

    #[test]
    fn recovers_filter_from_consistent_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let taps = 5;
        let steps = 120;
        let truth = Array1::from_shape_fn(taps, |_| random_complex(&mut rng));
        let regressors = Array2::from_shape_fn((steps, taps), |_| random_complex(&mut rng));
        let targets = Array1::from_shape_fn(steps, |t| {
            (0..taps)
                .map(|m| truth[m].conj() * regressors[[t, m]])
                .sum()
        });
        let weights = Array1::ones(steps);
        let solved =
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 0.0).unwrap();
        for m in 0..taps {
            assert!((solved[m] - truth[m]).norm() < 1e-10);
        }
    }

    #[test]
    fn scalar_target_multiple_yields_conjugate_tap() {
        // With d(t) = alpha * x(t), the fit satisfies g^H x = alpha x, so the
        // single tap must be conj(alpha).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = c(0.3, -1.1);
        let steps = 40;
        let regressors = Array2::from_shape_fn((steps, 1), |_| random_complex(&mut rng));
        let targets = Array1::from_shape_fn(steps, |t| alpha * regressors[[t, 0]]);
        let weights = Array1::from_shape_fn(steps, |t| 0.5 + (t % 3) as f64);
        let solved =
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 0.0).unwrap();
        assert!((solved[0] - alpha.conj()).norm() < 1e-12);
    }

    #[test]
    fn matches_independent_elimination_on_inconsistent_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let taps = 4;
            let steps = 30;
            let regressors = Array2::from_shape_fn((steps, taps), |_| random_complex(&mut rng));
            let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
            let weights = Array1::from_shape_fn(steps, |_| rng.random_range(0.1..4.0));
            let loading = if trial % 2 == 0 { 0.0 } else { 1e-3 };
            let solved =
                solve_weighted_ls(targets.view(), regressors.view(), weights.view(), loading)
                    .unwrap();
            let expected = oracle_solution(&targets, &regressors, &weights, loading);
            for m in 0..taps {
                assert!(
                    (solved[m] - expected[m]).norm() < 1e-9,
                    "trial {trial} tap {m}: {} vs {}",
                    solved[m],
                    expected[m]
                );
            }
        }
    }

    #[test]
    fn scalar_closed_form_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let steps = 25;
        let regressors = Array2::from_shape_fn((steps, 1), |_| random_complex(&mut rng));
        let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
        let weights = Array1::from_shape_fn(steps, |_| rng.random_range(0.2..2.0));
        let loading = 0.01;
        let mut num = c(0.0, 0.0);
        let mut den = 0.0;
        for t in 0..steps {
            num += regressors[[t, 0]] * targets[t].conj() / weights[t];
            den += regressors[[t, 0]].norm_sqr() / weights[t];
        }
        let expected = num / (den + loading * den);
        let solved =
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), loading).unwrap();
        assert!((solved[0] - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_regressors_give_zero_filter_with_loading() {
        let regressors = Array2::<Complex64>::zeros((10, 3));
        let targets = Array1::from_elem(10, c(1.0, 0.0));
        let weights = Array1::ones(10);
        let solved =
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 1e-5).unwrap();
        assert!(solved.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn zero_regressors_error_without_loading() {
        let regressors = Array2::<Complex64>::zeros((10, 3));
        let targets = Array1::from_elem(10, c(1.0, 0.0));
        let weights = Array1::ones(10);
        assert!(matches!(
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 0.0),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn rank_deficient_regressors_error_without_loading() {
        // Two identical columns make R singular.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let steps = 20;
        let mut regressors = Array2::<Complex64>::zeros((steps, 2));
        for t in 0..steps {
            let v = random_complex(&mut rng);
            regressors[[t, 0]] = v;
            regressors[[t, 1]] = v;
        }
        let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
        let weights = Array1::ones(steps);
        assert!(matches!(
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 0.0),
            Err(Error::RankDeficient)
        ));
        // The same system solves once loading is applied.
        assert!(
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 1e-4).is_ok()
        );
    }

    #[test]
    fn rejects_non_positive_weights() {
        let regressors = Array2::from_elem((4, 1), c(1.0, 0.0));
        let targets = Array1::from_elem(4, c(1.0, 0.0));
        let weights = Array1::from_vec(vec![1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 0.0),
            Err(Error::BadConfig(_))
        ));
    }

    proptest! {
        // At the optimum the weighted residual is orthogonal to every
        // regressor column.
        #[test]
        fn residual_is_weight_orthogonal_to_regressors(seed in 0u64..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let taps = rng.random_range(1..5);
            let steps = rng.random_range(3 * taps..40);
            let regressors = Array2::from_shape_fn((steps, taps), |_| random_complex(&mut rng));
            let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
            let weights = Array1::from_shape_fn(steps, |_| rng.random_range(0.1..5.0));
            let solved = solve_weighted_ls(
                targets.view(), regressors.view(), weights.view(), 0.0);
            prop_assume!(solved.is_ok());
            let solved = solved.unwrap();
            for m in 0..taps {
                let mut inner = c(0.0, 0.0);
                for t in 0..steps {
                    let pred: Complex64 = (0..taps)
                        .map(|j| solved[j].conj() * regressors[[t, j]])
                        .sum();
                    let residual = targets[t] - pred;
                    inner += residual * regressors[[t, m]].conj() / weights[t];
                }
                prop_assert!(inner.norm() < 1e-7, "tap {} residual correlation {}", m, inner.norm());
            }
        }

        // Perturbing any single tap along either axis never decreases the
        // loaded weighted objective: the solution is a local minimum.
        #[test]
        fn solution_is_a_local_minimum(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let taps = rng.random_range(1..5usize);
            let steps = rng.random_range(3 * taps..40);
            let regressors = Array2::from_shape_fn((steps, taps), |_| random_complex(&mut rng));
            let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
            let weights = Array1::from_shape_fn(steps, |_| rng.random_range(0.5..2.0));
            let loading = 1e-5;
            let solved = solve_weighted_ls(
                targets.view(), regressors.view(), weights.view(), loading).unwrap();
            let mut trace = 0.0;
            for i in 0..taps {
                for t in 0..steps {
                    trace += regressors[[t, i]].norm_sqr() / weights[t];
                }
            }
            let delta = loading * trace / taps as f64;
            let objective = |g: &Array1<Complex64>| -> f64 {
                let mut value = 0.0;
                for t in 0..steps {
                    let pred: Complex64 = (0..taps)
                        .map(|j| g[j].conj() * regressors[[t, j]])
                        .sum();
                    value += (targets[t] - pred).norm_sqr() / weights[t];
                }
                value + delta * g.iter().map(|v| v.norm_sqr()).sum::<f64>()
            };
            let base = objective(&solved);
            let steps_4 = [c(1e-4, 0.0), c(-1e-4, 0.0), c(0.0, 1e-4), c(0.0, -1e-4)];
            for m in 0..taps {
                for step in steps_4 {
                    let mut perturbed = solved.clone();
                    perturbed[m] += step;
                    let value = objective(&perturbed);
                    prop_assert!(
                        value >= base - 1e-12 * base.abs().max(1.0),
                        "tap {} perturbation lowered {} to {}", m, base, value
                    );
                }
            }
        }

        // Scaling all weights by a constant leaves the minimizer unchanged.
        #[test]
        fn weight_scale_invariance(seed in 0u64..200, factor in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let taps = 3;
            let steps = 25;
            let regressors = Array2::from_shape_fn((steps, taps), |_| random_complex(&mut rng));
            let targets = Array1::from_shape_fn(steps, |_| random_complex(&mut rng));
            let weights = Array1::from_shape_fn(steps, |_| rng.random_range(0.1..5.0));
            let scaled = weights.mapv(|w| w * factor);
            let a = solve_weighted_ls(targets.view(), regressors.view(), weights.view(), 1e-6);
            let b = solve_weighted_ls(targets.view(), regressors.view(), scaled.view(), 1e-6);
            prop_assume!(a.is_ok() && b.is_ok());
            let (a, b) = (a.unwrap(), b.unwrap());
            for m in 0..taps {
                prop_assert!((a[m] - b[m]).norm() < 1e-8);
            }
        }
    }
}

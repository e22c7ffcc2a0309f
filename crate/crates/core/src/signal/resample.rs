use ndarray::{Array2, ArrayView2};
use num_traits::Float;

use super::SignalError;

/// Fractional source position of output index `i` when stretching `src_len`
/// samples onto `dst_len` samples with both endpoints pinned.
#[inline]
pub(crate) fn source_position(i: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len <= 1 || src_len <= 1 {
        return 0.0;
    }
    i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
}

/// Resamples `x` to exactly `target_len` points by linear interpolation.
///
/// Endpoints are preserved: `out[0] == x[0]` and `out[last] == x[last]`.
pub fn linear_resample<T: Float>(x: &[T], target_len: usize) -> Result<Vec<T>, SignalError> {
    if x.is_empty() {
        return Err(SignalError::EmptyInput);
    }
    if target_len == 0 {
        return Err(SignalError::InvalidArgument("target length must be positive".into()));
    }
    if target_len == x.len() {
        return Ok(x.to_vec());
    }
    let n = x.len();
    Ok((0..target_len)
        .map(|i| {
            let pos = source_position(i, n, target_len);
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = T::from(pos - lo as f64).unwrap();
            if frac == T::zero() {
                x[lo]
            } else {
                x[lo] + (x[hi] - x[lo]) * frac
            }
        })
        .collect())
}

/// Row-wise version of [`linear_resample`]: interpolates whole frames along
/// the time axis.
pub fn linear_resample_frames(
    frames: ArrayView2<'_, f32>,
    target_len: usize,
) -> Result<Array2<f32>, SignalError> {
    let n = frames.nrows();
    if n == 0 {
        return Err(SignalError::EmptyInput);
    }
    if target_len == 0 {
        return Err(SignalError::InvalidArgument("target length must be positive".into()));
    }
    let mut out = Array2::<f32>::zeros((target_len, frames.ncols()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let pos = if target_len == n { i as f64 } else { source_position(i, n, target_len) };
        let lo = (pos.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let frac = (pos - lo as f64) as f32;
        let a = frames.row(lo);
        if frac == 0.0 {
            row.assign(&a);
        } else {
            let b = frames.row(hi);
            for ((o, &p), &q) in row.iter_mut().zip(a.iter()).zip(b.iter()) {
                *o = p + (q - p) * frac;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_midpoint() {
        assert_eq!(linear_resample(&[1.0, 2.0, 3.0, 4.0], 4).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(linear_resample(&[0.0, 2.0], 3).unwrap(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn empty_input_is_an_error() {
        let empty: [f64; 0] = [];
        assert!(matches!(linear_resample(&empty, 3), Err(SignalError::EmptyInput)));
    }

    #[test]
    fn single_sample_is_repeated() {
        assert_eq!(linear_resample(&[5.0f64], 3).unwrap(), vec![5.0, 5.0, 5.0]);
        assert_eq!(linear_resample(&[5.0f64, 7.0], 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        // Oracle: evaluate the piecewise-linear interpolant at i * 99 / 56.
        let x: Vec<f64> = (0..100).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let out = linear_resample(&x, 57).unwrap();
        for (i, &o) in out.iter().enumerate() {
            let p = i as f64 * 99.0 / 56.0;
            let k = p.floor() as usize;
            let expected = if k >= 99 { x[99] } else { x[k] * (1.0 - (p - k as f64)) + x[k + 1] * (p - k as f64) };
            assert!((o - expected).abs() < 1e-12, "index {i}: {o} vs {expected}");
        }
    }

    #[test]
    fn frames_follow_scalar_interpolation() {
        let frames = Array2::from_shape_fn((5, 3), |(t, d)| (t * 3 + d) as f32);
        let out = linear_resample_frames(frames.view(), 9).unwrap();
        for d in 0..3 {
            let col: Vec<f32> = frames.column(d).to_vec();
            let expected = linear_resample(&col, 9).unwrap();
            for t in 0..9 {
                assert!((out[[t, d]] - expected[t]).abs() < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn exact_on_affine_sequences(a in -10.0f64..10.0, b in -10.0f64..10.0,
                                     n in 2usize..200, m in 1usize..300) {
            let x: Vec<f64> = (0..n).map(|i| a * i as f64 + b).collect();
            let out = linear_resample(&x, m).unwrap();
            prop_assert_eq!(out.len(), m);
            for (i, &o) in out.iter().enumerate() {
                let pos = if m == n { i as f64 } else { source_position(i, n, m) };
                prop_assert!((o - (a * pos + b)).abs() < 1e-9);
            }
            prop_assert_eq!(out[0], x[0]);
            if m > 1 {
                prop_assert!((out[m - 1] - x[n - 1]).abs() < 1e-9);
            }
        }
    }
}

use crate::error::{Error, Result};
use crate::mocap::rotation::expmap_frame_to_euler;
use crate::mocap::{FrameMatrix, FRAME_PERIOD_MS};

/// Reporting horizons in milliseconds, ascending.
pub const HORIZONS_MS: [u32; 5] = [80, 160, 320, 400, 1000];

/// Number of predicted frames elapsed at `ms`: `floor(ms / period)`.
pub fn horizon_frame(ms: u32) -> usize {
    (f64::from(ms) / FRAME_PERIOD_MS).floor() as usize
}

/// Horizons reachable with `target_len` predicted frames.
pub fn horizons_within(target_len: usize) -> Vec<u32> {
    HORIZONS_MS.iter().copied().filter(|&ms| horizon_frame(ms) >= 1 && horizon_frame(ms) <= target_len).collect()
}

/// Euclidean distance between the Euler angles of two raw-width
/// exponential-map frames. Both frames are converted joint by joint, then
/// only dimensions with `include[i]` set contribute to the norm.
pub fn euler_error(pred: &[f64], truth: &[f64], include: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != include.len() {
        return Err(Error::shape(format!(
            "frame widths differ: prediction {}, truth {}, mask {}",
            pred.len(),
            truth.len(),
            include.len()
        )));
    }
    let a = expmap_frame_to_euler(pred)?;
    let b = expmap_frame_to_euler(truth)?;
    let sum: f64 = a.iter().zip(&b).zip(include).filter(|(_, &keep)| keep).map(|((x, y), _)| (x - y).powi(2)).sum();
    Ok(sum.sqrt())
}

/// Per-frame [`euler_error`] of two equally long sequences.
pub fn sequence_errors(pred: &FrameMatrix, truth: &FrameMatrix, include: &[bool]) -> Result<Vec<f64>> {
    if pred.rows() != truth.rows() {
        return Err(Error::shape(format!("{} predicted frames vs {} true frames", pred.rows(), truth.rows())));
    }
    (0..pred.rows()).map(|r| euler_error(pred.row(r), truth.row(r), include)).collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::mocap::rotation::{euler_to_rotmat, expmap_to_rotmat};

    #[test]
    fn horizons_map_to_frames() {
        let frames: Vec<usize> = HORIZONS_MS.iter().map(|&ms| horizon_frame(ms)).collect();
        assert_eq!(frames, [2, 4, 8, 10, 25]);
        assert_eq!(horizons_within(25), HORIZONS_MS);
        assert_eq!(horizons_within(10), [80, 160, 320, 400]);
        assert_eq!(horizons_within(3), [80]);
    }

    #[test]
    fn half_turn_about_x_costs_pi() {
        // The truth joint is built from Euler angles (pi, 0, 0).
        let r = euler_to_rotmat([PI, 0.0, 0.0]);
        let e = expmap_to_rotmat([PI, 0.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - e[i][j]).abs() < 1e-12);
            }
        }
        let err = euler_error(&[0.0; 3], &[PI, 0.0, 0.0], &[true; 3]).unwrap();
        assert!((err - PI).abs() < 1e-12, "{err}");
    }

    #[test]
    fn excluded_dims_never_contribute() {
        let a = [0.3, -0.2, 0.1, 0.5, 0.4, -0.3];
        let mut b = a;
        b[0] = 1.2;
        b[1] = -0.9;
        b[2] = 0.8;
        let mask = [false, false, false, true, true, true];
        assert_eq!(euler_error(&a, &b, &mask).unwrap(), 0.0);
        assert!(euler_error(&a, &b, &[true; 6]).unwrap() > 0.1);
    }

    #[test]
    fn width_mismatch_rejected() {
        assert!(euler_error(&[0.0; 3], &[0.0; 6], &[true; 3]).is_err());
        assert!(euler_error(&[0.0; 4], &[0.0; 4], &[true; 4]).is_err());
    }

    fn frame() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.2..1.2f64, 9)
    }

    proptest! {
        #[test]
        fn metric_is_symmetric(a in frame(), b in frame(), mask in prop::collection::vec(any::<bool>(), 9)) {
            prop_assert_eq!(euler_error(&a, &b, &mask).unwrap(), euler_error(&b, &a, &mask).unwrap());
        }

        #[test]
        fn metric_vanishes_on_identical_frames(a in frame()) {
            prop_assert_eq!(euler_error(&a, &a, &[true; 9]).unwrap(), 0.0);
        }

        #[test]
        fn distinct_rotations_have_positive_error(a in frame(), d in prop::collection::vec(0.05..0.3f64, 9)) {
            // Angles below pi/2 stay clear of gimbal lock and branch cuts.
            let a: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
            let b: Vec<f64> = a.iter().zip(&d).map(|(x, y)| x + y).collect();
            prop_assert!(euler_error(&a, &b, &[true; 9]).unwrap() > 0.0);
        }
    }
}

//! Exponential map, rotation matrix and Euler angle conversions.
//!
//! Euler angles `(e1, e2, e3)` follow the convention of the standard motion
//! benchmark tooling: the matrix is recovered as
//! `R = (Rz(e3) * Ry(e2) * Rx(e1))^T`, with `e2 = -asin(R[0][2])` in
//! `[-pi/2, pi/2]`.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Documented axis order of [`rotmat_to_euler`].
pub const EULER_CONVENTION: &str = "R = (Rz(e3) Ry(e2) Rx(e1))^T";

/// Deviation from orthonormality tolerated by [`rotmat_to_euler`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn skew(r: [f64; 3]) -> Mat3 {
    [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]
}

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Largest entry of `|R^T R - I|`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let g = matmul(&transpose(r), r);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((g[i][j] - IDENTITY[i][j]).abs());
        }
    }
    worst
}

/// Rodrigues' formula; below `1e-8` rad the second-order series is used.
pub fn expmap_to_rotmat(r: [f64; 3]) -> Mat3 {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let k = skew(r);
    let k2 = matmul(&k, &k);
    let (a, b) = if theta < 1e-8 { (1.0, 0.5) } else { (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta)) };
    let mut out = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    out
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Compose Euler angles back into a matrix; inverse of [`rotmat_to_euler`].
pub fn euler_to_rotmat(e: [f64; 3]) -> Mat3 {
    transpose(&matmul(&matmul(&rot_z(e[2]), &rot_y(e[1])), &rot_x(e[0])))
}

/// Decompose an orthonormal matrix into Euler angles. At gimbal lock
/// (`|R[0][2]| = 1`) the third angle is set to zero.
pub fn rotmat_to_euler(r: &Mat3) -> Result<[f64; 3]> {
    let err = orthonormality_error(r);
    if !(err <= ORTHONORMAL_TOL) || !(det(r) > 0.0) {
        return Err(Error::NotOrthonormal(err));
    }
    let s = r[0][2];
    if s >= 1.0 - 1e-12 {
        // e2 = -pi/2: R[1][0] = -sin(e1), R[1][1] = cos(e1)
        Ok([(-r[1][0]).atan2(r[1][1]), -std::f64::consts::FRAC_PI_2, 0.0])
    } else if s <= -1.0 + 1e-12 {
        Ok([r[1][0].atan2(r[1][1]), std::f64::consts::FRAC_PI_2, 0.0])
    } else {
        Ok([r[1][2].atan2(r[2][2]), -s.asin(), r[0][1].atan2(r[0][0])])
    }
}

/// Euler angles of every 3-vector group of an exponential-map frame.
pub fn expmap_frame_to_euler(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.len() % 3 != 0 {
        return Err(Error::shape(format!("frame width {} is not a multiple of 3", frame.len())));
    }
    let mut out = Vec::with_capacity(frame.len());
    for joint in frame.chunks_exact(3) {
        out.extend(rotmat_to_euler(&expmap_to_rotmat([joint[0], joint[1], joint[2]]))?);
    }
    Ok(out)
}

//! Planar rigid-body changes of frame for pose channels.

use rand::Rng;

use crate::util::wrap_angle;

/// `(x, y, psi)`.
pub type Pose = [f64; 3];

/// Expresses a global pose in the frame whose origin is `origin`.
pub fn se2_transform(pose: &Pose, origin: &Pose) -> Pose {
    let (s, c) = origin[2].sin_cos();
    let dx = pose[0] - origin[0];
    let dy = pose[1] - origin[1];
    [c * dx + s * dy, -s * dx + c * dy, wrap_angle(pose[2] - origin[2])]
}

/// Inverse of [`se2_transform`].
pub fn se2_inverse(local: &Pose, origin: &Pose) -> Pose {
    let (s, c) = origin[2].sin_cos();
    [
        origin[0] + c * local[0] - s * local[1],
        origin[1] + s * local[0] + c * local[1],
        wrap_angle(local[2] + origin[2]),
    ]
}

fn uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// A random frame near `first_pose`: offsets drawn uniformly from
/// `[-d_x, d_x] x [-d_y, d_y]` in the first pose's own axes and
/// `[-d_psi, d_psi]` in heading.
pub fn sample_origin<R: Rng>(first_pose: &Pose, d_x: f64, d_y: f64, d_psi: f64, rng: &mut R) -> Pose {
    let ox = uniform(rng, d_x);
    let oy = uniform(rng, d_y);
    let opsi = uniform(rng, d_psi);
    se2_inverse(&[ox, oy, opsi], first_pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn hand_cases() {
        let p = [3.0, -1.0, 0.4];
        assert_eq!(se2_transform(&p, &[0.0, 0.0, 0.0]), p);
        let z = se2_transform(&p, &p);
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        let r = se2_transform(&[1.0, 0.0, 0.0], &[0.0, 0.0, FRAC_PI_2]);
        assert!(r[0].abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15 && (r[2] + FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn zero_ranges_give_first_pose() {
        let p = [2.0, 5.0, -1.0];
        let o = sample_origin(&p, 0.0, 0.0, 0.0, &mut rng_from_seed(1));
        assert_eq!(o, p);
    }

    #[test]
    fn offsets_bounded_and_centred() {
        let mut rng = rng_from_seed(3);
        let first = [10.0, -4.0, 0.7];
        let n = 10_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let o = sample_origin(&first, 2.0, 2.0, 0.35, &mut rng);
            let off = se2_transform(&o, &first);
            assert!(off[0].abs() <= 2.0 + 1e-12 && off[1].abs() <= 2.0 + 1e-12 && off[2].abs() <= 0.35 + 1e-12);
            for i in 0..3 {
                sum[i] += off[i];
            }
        }
        // Uniform on [-d, d] has sigma d / sqrt(3); the mean has sigma / sqrt(n).
        for (i, d) in [2.0, 2.0, 0.35].iter().enumerate() {
            let sigma = d / 3f64.sqrt() / (n as f64).sqrt();
            assert!((sum[i] / n as f64).abs() < 3.0 * sigma, "channel {i}");
        }
    }
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Exhaustive active-set enumeration for `min zᵀHz + gᵀz` over a box:
/// every variable is free, at its lower bound or at its upper bound. Faces
/// whose free block of `H` is singular are skipped; for a convex problem an
/// optimum always exists on a face with a nonsingular free block.
pub fn box_qp_oracle(h: &DMatrix<f64>, g: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = g.len();
    let mut best = (f64::INFINITY, DVector::zeros(d));
    let mut code = vec![0u8; d];
    loop {
        let free: Vec<usize> = (0..d).filter(|&i| code[i] == 0).collect();
        let mut z = DVector::zeros(d);
        let mut bounded_ok = true;
        for i in 0..d {
            match code[i] {
                1 => z[i] = lb[i],
                2 => z[i] = ub[i],
                _ => {}
            }
            if code[i] != 0 && !z[i].is_finite() {
                bounded_ok = false;
            }
        }
        if bounded_ok {
            let nf = free.len();
            let mut ok = true;
            if nf > 0 {
                let hff = DMatrix::from_fn(nf, nf, |a, b| 2.0 * h[(free[a], free[b])]);
                let rhs = DVector::from_fn(nf, |a, _| {
                    let i = free[a];
                    let mut v = -g[i];
                    for j in 0..d {
                        if code[j] != 0 {
                            v -= 2.0 * h[(i, j)] * z[j];
                        }
                    }
                    v
                });
                let scale = hff.diagonal().amax().max(1e-300);
                match hff.cholesky() {
                    Some(ch) if (0..nf).all(|a| ch.l_dirty()[(a, a)].powi(2) > 1e-10 * scale) => {
                        let x = ch.solve(&rhs);
                        for (a, &i) in free.iter().enumerate() {
                            z[i] = x[a];
                        }
                    }
                    _ => ok = false,
                }
            }
            if ok && (0..d).all(|i| z[i] >= lb[i] - 1e-9 && z[i] <= ub[i] + 1e-9) {
                let obj = (z.transpose() * h * &z)[(0, 0)] + g.dot(&z);
                if obj < best.0 {
                    best = (obj, z);
                }
            }
        }
        // Next base-3 code.
        let mut i = 0;
        while i < d {
            code[i] += 1;
            if code[i] < 3 {
                break;
            }
            code[i] = 0;
            i += 1;
        }
        if i == d {
            break;
        }
    }
    best
}

/// Random PSD `H = L Lᵀ` of random rank, random `g`, and a random box with
/// occasional infinite sides.
pub fn random_box_qp<R: Rng>(rng: &mut R, d: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let rank = rng.gen_range(1..=d);
    let l = DMatrix::from_fn(d, rank, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose();
    let g = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
    let mut lb = DVector::zeros(d);
    let mut ub = DVector::zeros(d);
    for i in 0..d {
        let a: f64 = rng.gen_range(-2.0..1.0);
        let w: f64 = rng.gen_range(0.1..2.0);
        lb[i] = a;
        ub[i] = a + w;
    }
    (h, g, lb, ub)
}

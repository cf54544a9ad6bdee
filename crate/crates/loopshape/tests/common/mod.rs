#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use loopshape::plant::TwoMassParams;
use num_complex::Complex64;

type C = Complex64;

/// Solves a dense complex system by Gaussian elimination with partial pivoting.
pub fn solve<const N: usize>(mut a: [[C; N]; N], mut b: [C; N]) -> [C; N] {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let m = a[row][col] / a[col][col];
            for k in col..N {
                let v = a[col][k];
                a[row][k] -= m * v;
            }
            let v = b[col];
            b[row] -= m * v;
        }
    }
    let mut x = [C::new(0.0, 0.0); N];
    for row in (0..N).rev() {
        let mut s = b[row];
        for k in row + 1..N {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Torque-to-motor-velocity response from the state equations
/// x = [w_motor, w_load, twist], solved as (sI - A) x = B at each frequency.
pub fn state_space_frf(p: &TwoMassParams, f: f64) -> C {
    let s = C::new(0.0, 2.0 * PI * f);
    let (jm, jl, k, b) = (p.motor_inertia, p.load_inertia, p.stiffness, p.coupling_damping);
    let (bm, bl) = (p.motor_viscous_friction, p.load_viscous_friction);
    let z = C::new(0.0, 0.0);
    let a = [
        [s + (bm + b) / jm, C::new(-b / jm, 0.0), C::new(k / jm, 0.0)],
        [C::new(-b / jl, 0.0), s + (bl + b) / jl, C::new(-k / jl, 0.0)],
        [C::new(-1.0, 0.0), C::new(1.0, 0.0), s],
    ];
    let x = solve(a, [C::new(1.0 / jm, 0.0), z, z]);
    let tau = p.torque_lag_time_constant;
    let act = match (tau > 0.0, p.torque_lag_damping) {
        (false, _) => C::new(1.0, 0.0),
        (true, None) => (s * tau + 1.0).inv(),
        (true, Some(zeta)) => (s * s * tau * tau + s * 2.0 * zeta * tau + 1.0).inv(),
    };
    x[0] * act * (-s * p.dead_time).exp()
}

/// Unit step response of wn²/(s² + 2ζwn s + wn²) for ζ < 1.
pub fn second_order_step(zeta: f64, wn: f64, t: f64) -> f64 {
    let wd = wn * (1.0 - zeta * zeta).sqrt();
    let phi = (1.0 - zeta * zeta).sqrt().atan2(zeta);
    1.0 - (-zeta * wn * t).exp() / (1.0 - zeta * zeta).sqrt() * (wd * t + phi).sin()
}

pub fn overshoot_pct(zeta: f64) -> f64 {
    100.0 * (-PI * zeta / (1.0 - zeta * zeta).sqrt()).exp()
}

/// Angle difference folded into (-180, 180].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

pub fn db(h: C) -> f64 {
    20.0 * h.norm().log10()
}

/// Index of the local maximum of `v` closest to `near`.
pub fn local_max_near(f: &[f64], v: &[f64], near: f64) -> usize {
    (1..v.len() - 1)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
        .min_by(|&i, &j| (f[i] - near).abs().total_cmp(&(f[j] - near).abs()))
        .expect("no local maximum")
}

pub fn local_min_near(f: &[f64], v: &[f64], near: f64) -> usize {
    (1..v.len() - 1)
        .filter(|&i| v[i] < v[i - 1] && v[i] <= v[i + 1])
        .min_by(|&i, &j| (f[i] - near).abs().total_cmp(&(f[j] - near).abs()))
        .expect("no local minimum")
}

/// Two-mass plant stiff enough to behave as one inertia below a few kHz.
pub fn stiff_proxy(stiffness: f64) -> TwoMassParams {
    let mut p = TwoMassParams::rigid_twin().ideal_actuator();
    p.stiffness = stiffness;
    p
}

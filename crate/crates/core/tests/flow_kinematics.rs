mod common;

use covmotion::features::{
    divergence_vorticity, kinematic_vector, strain_rotation, tensor_invariants, GradientTensor, SecondInvariant,
};
use covmotion::flow::{estimate_flow, flow_derivatives, FlowField, FlowParams};
use covmotion::frame::Plane;
use proptest::prelude::*;

fn blob(w: usize, h: usize, cx: f64, cy: f64, sigma: f64) -> Plane {
    Plane::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        0.1 + 0.8 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })
}

#[test]
fn translated_blob_recovers_shift() {
    let a = blob(64, 48, 30.0, 24.0, 5.0);
    let b = blob(64, 48, 31.0, 24.0, 5.0);
    let est = estimate_flow(&a, &b, &FlowParams::default()).unwrap();
    let mut su = 0.0;
    let mut sv = 0.0;
    let mut n = 0.0;
    for y in 0..48 {
        for x in 0..64 {
            // blob support: within 1.5σ of the midpoint between both centres
            let (dx, dy) = (x as f64 - 30.5, y as f64 - 24.0);
            if dx * dx + dy * dy <= 7.5 * 7.5 {
                su += est.field.u.get(x, y);
                sv += est.field.v.get(x, y);
                n += 1.0;
            }
        }
    }
    let (mu, mv) = (su / n, sv / n);
    assert!((mu - 1.0).abs() <= 0.25, "mean u = {mu}");
    assert!(mv.abs() <= 0.25, "mean v = {mv}");
}

fn textured(w: usize, h: usize, angle: f64) -> Plane {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (s, c) = angle.sin_cos();
    Plane::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // sample the reference pattern at the inversely rotated position
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let window = (-(dx * dx + dy * dy) / (2.0 * 10.0 * 10.0)).exp();
        0.2 + 0.6 * window * (0.5 + 0.25 * (0.5 * lx).sin() + 0.25 * (0.4 * ly + 0.3 * lx).cos())
    })
}

fn mean_vorticity(omega: f64) -> f64 {
    let a = textured(48, 48, 0.0);
    let b = textured(48, 48, omega);
    let est = estimate_flow(&a, &b, &FlowParams::default()).unwrap();
    let d = flow_derivatives(&[est.field.clone(), est.field], 0).unwrap();
    let mut s = 0.0;
    let mut n = 0.0;
    for y in 14..34 {
        for x in 14..34 {
            s += d.dv_dx.get(x, y) - d.du_dy.get(x, y);
            n += 1.0;
        }
    }
    s / n
}

#[test]
fn rotation_vorticity_sign() {
    let ccw = mean_vorticity(0.05);
    let cw = mean_vorticity(-0.05);
    assert!(ccw > 0.0, "{ccw}");
    assert!(cw < 0.0, "{cw}");
}

fn linear_flow(w: usize, h: usize, g: [f64; 4]) -> FlowField {
    let u = Plane::from_fn(w, h, |x, y| g[0] * x as f64 + g[1] * y as f64);
    let v = Plane::from_fn(w, h, |x, y| g[2] * x as f64 + g[3] * y as f64);
    FlowField::new(u, v).unwrap()
}

#[test]
fn analytic_fields_through_stencils() {
    let cases = [
        // rigid rotation, unit angular speed
        [0.0, -1.0, 1.0, 0.0],
        // isotropic expansion
        [1.0, 0.0, 0.0, 1.0],
        // simple shear
        [0.0, 1.0, 0.0, 0.0],
    ];
    for g in cases {
        let f = linear_flow(16, 12, g);
        let d = flow_derivatives(&[f.clone(), f], 0).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                assert!((d.du_dx.get(x, y) - g[0]).abs() < 1e-12);
                assert!((d.du_dy.get(x, y) - g[1]).abs() < 1e-12);
                assert!((d.dv_dx.get(x, y) - g[2]).abs() < 1e-12);
                assert!((d.dv_dy.get(x, y) - g[3]).abs() < 1e-12);
                assert_eq!(d.du_dt.get(x, y), 0.0);
            }
        }
    }
}

#[test]
fn rigid_rotation_closed_form() {
    let g = GradientTensor::new(0.0, -1.0, 1.0, 0.0);
    let (div, vort) = divergence_vorticity(&g);
    assert_eq!((div, vort), (0.0, 2.0));
    let (s, r) = strain_rotation(&g);
    assert_eq!(s.norm(), 0.0);
    assert_eq!(r, g.0);
    let k = kinematic_vector(&g, SecondInvariant::Printed);
    // τ₂ printed = ½[0 + tr(G²)] = −1, τ₃ = −det = −1
    assert_eq!(k, [0.0, 2.0, -1.0, -1.0, 0.0, 0.0, -1.0]);
    let k = kinematic_vector(&g, SecondInvariant::Standard);
    assert_eq!(k[2], 1.0);
}

#[test]
fn expansion_and_shear_closed_form() {
    let k = kinematic_vector(&GradientTensor::new(1.0, 0.0, 0.0, 1.0), SecondInvariant::Printed);
    // τ₂ printed = ½[4 + 2] = 3
    assert_eq!(k, [2.0, 0.0, 3.0, -1.0, 3.0, -1.0, 0.0]);
    let g = GradientTensor::new(0.0, 1.0, 0.0, 0.0);
    let (s, r) = strain_rotation(&g);
    assert_eq!(s[(0, 1)], 0.5);
    assert_eq!(r[(0, 1)], 0.5);
    assert_eq!(r[(1, 0)], -0.5);
    assert_eq!(divergence_vorticity(&g), (0.0, -1.0));
}

#[test]
fn quadratic_surface_stencils() {
    let (a, b, c) = (0.3, -1.7, 0.45);
    let f = |x: f64, y: f64| a * x * x + b * x * y + c * y * y;
    let p = Plane::from_fn(9, 7, |x, y| f(x as f64, y as f64));
    let dx = p.diff_x();
    let dy = p.diff_y();
    let dxx = p.diff2_x();
    let dyy = p.diff2_y();
    for y in 0..7 {
        for x in 0..9 {
            let (xf, yf) = (x as f64, y as f64);
            // one-sided borders are exact at the half-pixel midpoint
            let ex = match x {
                0 => 2.0 * a * 0.5 + b * yf,
                8 => 2.0 * a * 7.5 + b * yf,
                _ => 2.0 * a * xf + b * yf,
            };
            let ey = match y {
                0 => b * xf + 2.0 * c * 0.5,
                6 => b * xf + 2.0 * c * 5.5,
                _ => b * xf + 2.0 * c * yf,
            };
            assert!((dx.get(x, y) - ex).abs() < 1e-10);
            assert!((dy.get(x, y) - ey).abs() < 1e-10);
            assert!((dxx.get(x, y) - 2.0 * a).abs() < 1e-10);
            assert!((dyy.get(x, y) - 2.0 * c).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn invariants_are_basis_free(
        g in proptest::array::uniform4(-3.0f64..3.0),
        theta in 0.0f64..std::f64::consts::TAU,
    ) {
        let m = GradientTensor::new(g[0], g[1], g[2], g[3]).0;
        let (s, c) = theta.sin_cos();
        let q = nalgebra::Matrix2::new(c, -s, s, c);
        let rotated = q * m * q.transpose();
        for form in [SecondInvariant::Printed, SecondInvariant::Standard] {
            let (a2, a3) = tensor_invariants(&m, form);
            let (b2, b3) = tensor_invariants(&rotated, form);
            prop_assert!((a2 - b2).abs() < 1e-9);
            prop_assert!((a3 - b3).abs() < 1e-9);
        }
        let (div, vort) = divergence_vorticity(&GradientTensor(m));
        let (div2, vort2) = divergence_vorticity(&GradientTensor(rotated));
        prop_assert!((div - div2).abs() < 1e-9);
        prop_assert!((vort - vort2).abs() < 1e-9);
    }

    #[test]
    fn strain_plus_rotation_is_gradient(g in proptest::array::uniform4(-5.0f64..5.0)) {
        let t = GradientTensor::new(g[0], g[1], g[2], g[3]);
        let (s, r) = strain_rotation(&t);
        prop_assert!((s + r - t.0).norm() < 1e-12);
        prop_assert!((s - s.transpose()).norm() == 0.0);
        prop_assert!((r + r.transpose()).norm() == 0.0);
        let (_, vort) = divergence_vorticity(&t);
        prop_assert!((r[(1, 0)] * 2.0 - vort).abs() < 1e-12);
    }

    #[test]
    fn standard_second_invariant_is_determinant(g in proptest::array::uniform4(-5.0f64..5.0)) {
        let m = GradientTensor::new(g[0], g[1], g[2], g[3]).0;
        let (t2, t3) = tensor_invariants(&m, SecondInvariant::Standard);
        prop_assert!((t2 - m.determinant()).abs() < 1e-9);
        prop_assert!((t3 + m.determinant()).abs() < 1e-12);
    }
}

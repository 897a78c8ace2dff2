use kbco_core::geometry::{box_from_moments, mahalanobis_norm, ConvexBody, OrientedBox};
use kbco_core::grid::GridDensity;
use kbco_core::kernel1d::Kernel1DParams;
use kbco_core::linalg::Matrix;
use proptest::prelude::*;

fn covariance(a: f64, b: f64, c: f64) -> Matrix<f64> {
    // A Aᵀ with A lower triangular, strictly positive diagonal
    let l = Matrix::from_rows(&[vec![a, 0.0], vec![b, c]]);
    l.matmul(&l.transpose())
}

proptest! {
    #[test]
    fn grid_weights_stay_a_distribution(
        losses in prop::collection::vec(0.0f64..50.0, 64),
        eta in 0.0f64..10.0,
        rounds in 1usize..5,
    ) {
        let mut g = GridDensity::uniform_box(8, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        for _ in 0..rounds {
            g.exp_update(&losses, eta);
        }
        let total: f64 = g.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.weights().iter().all(|&w| w >= 0.0 && w.is_finite()));
        let mean = g.mean();
        prop_assert!(mean.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn moment_box_is_sandwiched(
        a in 0.05f64..2.0, b in -1.0f64..1.0, c in 0.05f64..2.0,
        mx in -1.0f64..1.0, my in -1.0f64..1.0,
        r in 0.1f64..3.0,
        angle in 0.0f64..std::f64::consts::TAU,
        s in 0.0f64..1.0,
        sx in -1.0f64..1.0, sy in -1.0f64..1.0,
    ) {
        let cov = covariance(a, b, c);
        let mean = [mx, my];
        let mbox = box_from_moments(&mean, &cov, r).unwrap();
        // a point of E_p(r): mean + L (ρ u) with ρ <= r
        let l = Matrix::from_rows(&[vec![a, 0.0], vec![b, c]]);
        let u = [angle.cos() * s * r, angle.sin() * s * r];
        let lu = l.mul_vec(&u);
        let inside = [mx + lu[0], my + lu[1]];
        prop_assert!(mbox.contains(&inside));
        // a point of the box lies in E_p(√2 r)
        let ob = mbox.as_oriented_box();
        let local = [sx * ob.half_widths[0], sy * ob.half_widths[1]];
        let back = ob.rotation.transpose().mul_vec(&local);
        let y = [mx + back[0], my + back[1]];
        let d = mahalanobis_norm(&y, &mean, &cov).unwrap();
        prop_assert!(d <= 2f64.sqrt() * r * (1.0 + 1e-6));
    }

    #[test]
    fn chords_end_on_the_boundary(
        px in 0.01f64..0.99, py in 0.01f64..0.99,
        angle in 0.0f64..std::f64::consts::TAU,
        ball in any::<bool>(),
    ) {
        let body = if ball {
            ConvexBody::Ball { center: vec![0.5, 0.5], radius: 0.5 }
        } else {
            ConvexBody::Box(OrientedBox::axis_aligned(vec![0.5, 0.5], vec![0.5, 0.5]))
        };
        let x = [px, py];
        prop_assume!(body.contains(&x));
        let d = [angle.cos(), angle.sin()];
        let (lo, hi) = body.chord(&x, &d).unwrap();
        prop_assert!(lo <= 0.0 && hi >= 0.0);
        for t in [lo, hi] {
            let p = [x[0] + t * d[0], x[1] + t * d[1]];
            prop_assert!(body.contains(&p));
            let beyond = [p[0] + 1e-6 * t.signum() * d[0], p[1] + 1e-6 * t.signum() * d[1]];
            prop_assert!(t == 0.0 || !body.contains(&beyond));
        }
    }

    #[test]
    fn projection_lands_in_the_body_and_is_idempotent(
        px in -2.0f64..3.0, py in -2.0f64..3.0,
    ) {
        let body = ConvexBody::<f64>::unit_cube(2);
        let p = body.project(&[px, py]);
        prop_assert!(body.contains(&p));
        let q = body.project(&p);
        prop_assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        if body.contains(&[px, py]) {
            prop_assert!((p[0] - px).abs() < 1e-12 && (p[1] - py).abs() < 1e-12);
        }
    }

    #[test]
    fn one_d_segments_stay_in_the_unit_interval(
        mu in 0.0f64..=1.0,
        eps in 1e-6f64..0.5,
        y in 0.0f64..=1.0,
    ) {
        prop_assume!(mu <= 1.0 - eps || mu >= eps);
        let k = Kernel1DParams::new(mu, eps).unwrap();
        let (lo, hi) = k.segment(y);
        prop_assert!(lo >= 0.0 && hi <= 1.0);
        prop_assert!(hi - lo >= eps * (1.0 - 1e-12));
        prop_assert!(lo <= mu && mu <= hi);
    }
}

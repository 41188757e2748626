use arbor_core::pointcloud::PointCloud;
use arbor_rater::{class_weights, rotate_z};
use proptest::prelude::*;

fn check_balance(counts: &[usize]) -> Vec<f64> {
    let w = class_weights(counts).unwrap();
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let share = total / counts.len() as f64;
    let worst = w.iter().zip(counts).map(|(w, &c)| (w * c as f64 - share).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9 * total, "{counts:?}: deviation {worst}");
    w
}

#[test]
fn initial_hand_rated_counts() {
    let w = check_balance(&[3790, 1448, 7985]);
    for (got, want) in w.iter().zip([1.163, 3.044, 0.552]) {
        assert!((got - want).abs() < 5e-4, "{w:?}");
    }
}

#[test]
fn rotation_by_pi_mirrors_about_the_centroid() {
    let mut c = PointCloud::from_xyz(&[[3.0, 5.0, 1.0], [1.0, 5.0, 2.0]]);
    c.hag = vec![1.0, 2.0];
    let r = rotate_z(&c, std::f64::consts::PI);
    // centroid (2, 5); point at centroid + (1, 0, 0) goes to centroid - (1, 0, 0)
    assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.y[0] - 5.0).abs() < 1e-9);
    assert_eq!(r.z, c.z);
    assert_eq!(r.hag, c.hag);
}

fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
    let mut c = PointCloud::from_xyz(&pts.iter().map(|p| [p.0, p.1, p.2]).collect::<Vec<_>>());
    c.hag = pts.iter().map(|p| p.2 as f32).collect();
    c
}

proptest! {
    #[test]
    fn weights_balance_class_counts(counts in prop::collection::vec(1usize..100_000, 1..6)) {
        check_balance(&counts);
    }

    #[test]
    fn rotation_preserves_distances(
        pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0.0f64..30.0), 1..40),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let c = cloud(&pts);
        let r = rotate_z(&c, angle);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let d = |p: &PointCloud| {
                    let a = p.position(i);
                    let b = p.position(j);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                };
                prop_assert!((d(&c) - d(&r)).abs() < 1e-9);
            }
        }
        let id = rotate_z(&c, 0.0);
        for i in 0..c.len() {
            prop_assert!((id.x[i] - c.x[i]).abs() < 1e-9 && (id.y[i] - c.y[i]).abs() < 1e-9);
        }
        prop_assert_eq!(&r.hag, &c.hag);
    }
}

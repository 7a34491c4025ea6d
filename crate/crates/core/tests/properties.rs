use mindgrasp::config::CaptureConfig;
use mindgrasp::riemann::{certainty, MiClass};
use mindgrasp::scene::{captured, Color, Shape};
use mindgrasp::vision::{rank_objects, BBox, Blob};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn offset() -> impl Strategy<Value = Vector3<f64>> {
    (-0.1f64..0.1, -0.06f64..0.06, -0.06f64..0.06).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn blob() -> impl Strategy<Value = Blob> {
    (0usize..3, 1usize..400, 0.0f64..128.0, 0.0f64..128.0).prop_map(|(c, n, x, y)| Blob {
        color: Color::ALL[c],
        pixel_count: n,
        center: Vector2::new(x, y),
        bbox: BBox { min_x: 0, min_y: 0, max_x: 0, max_y: 0 },
    })
}

fn intent() -> impl Strategy<Value = Option<MiClass>> {
    prop_oneof![Just(None), (0usize..4).prop_map(MiClass::from_index)]
}

proptest! {
    #[test]
    fn capture_survives_moving_closer(o in offset(), shrink in 0.0f64..=1.0) {
        let cap = CaptureConfig::default();
        for shape in Shape::ALL {
            if captured(&cap, shape, &o) {
                prop_assert!(captured(&cap, shape, &(o * shrink)));
            }
        }
    }

    #[test]
    fn looser_shapes_capture_whatever_tighter_ones_do(o in offset()) {
        let cap = CaptureConfig::default();
        if captured(&cap, Shape::Sphere, &o) {
            prop_assert!(captured(&cap, Shape::Cylinder, &o));
        }
        if captured(&cap, Shape::Cylinder, &o) {
            prop_assert!(captured(&cap, Shape::Cube, &o));
        }
    }

    #[test]
    fn certainty_is_non_negative_and_shift_invariant(
        d in prop::collection::vec(0.0f64..20.0, 1..8),
        shift in -5.0f64..5.0,
    ) {
        let c = certainty(&d);
        prop_assert!(c >= 0.0);
        let moved: Vec<f64> = d.iter().map(|x| x + shift).collect();
        prop_assert!((certainty(&moved) - c).abs() < 1e-9);
    }

    #[test]
    fn certainty_vanishes_for_equal_distances(v in 0.0f64..20.0, n in 1usize..8) {
        prop_assert_eq!(certainty(&vec![v; n]), 0.0);
    }

    #[test]
    fn ranking_ignores_image_scale(
        blobs in prop::collection::vec(blob(), 1..6),
        intent in intent(),
        k in 2usize..4,
    ) {
        let scaled: Vec<Blob> = blobs
            .iter()
            .map(|b| Blob { pixel_count: b.pixel_count * k * k, center: b.center * k as f64, ..*b })
            .collect();
        let a = rank_objects(&blobs, intent, 128, 128).unwrap();
        let b = rank_objects(&scaled, intent, 128 * k, 128 * k).unwrap();
        prop_assert!((a.score - b.score).abs() < 1e-9);
        prop_assert_eq!(a.blob.color, b.blob.color);
    }

    #[test]
    fn ranked_blob_comes_from_the_input(blobs in prop::collection::vec(blob(), 0..6), intent in intent()) {
        match rank_objects(&blobs, intent, 128, 128) {
            None => prop_assert!(blobs.is_empty()),
            Some(r) => prop_assert!(blobs.contains(&r.blob)),
        }
    }
}

use dcan_core::fusion::{postprocess, segment, segment_objects_only, FusionParams};
use dcan_core::morphology::connected_components;
use dcan_core::BinaryMask;

fn in_disk(y: usize, x: usize, cy: f64, cx: f64, r: f64) -> bool {
    (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r
}

#[test]
fn one_pixel_gap_keeps_two_instances() {
    // disks of radius 8 whose nearest pixels are one column apart
    let (w, h) = (40, 24);
    let left = |y, x| in_disk(y, x, 12.0, 11.0, 8.0);
    let right = |y, x| in_disk(y, x, 12.0, 29.0, 8.0);
    let mask = BinaryMask::from_fn(w, h, |y, x| left(y, x) || right(y, x));
    assert_eq!(connected_components(&mask).num_objects(), 2);

    let out = postprocess(&mask, &FusionParams::default());
    assert_eq!(out.num_objects(), 2);
    for id in out.ids() {
        let px = out.pixels_of(id);
        let all_left = px.iter().all(|&(y, x)| left(y, x));
        let all_right = px.iter().all(|&(y, x)| right(y, x));
        assert!(all_left ^ all_right, "instance {id} spans both disks");
    }
}

#[test]
fn interior_hole_is_filled() {
    let mask = BinaryMask::from_fn(30, 30, |y, x| {
        let inside = (5..25).contains(&y) && (5..25).contains(&x);
        inside && !(y == 14 && (14..16).contains(&x))
    });
    let out = postprocess(&mask, &FusionParams::default());
    assert_eq!(out.num_objects(), 1);
    assert_ne!(out.get(14, 14), 0);
    assert_ne!(out.get(14, 15), 0);
}

/// Two overlapping disks with a contour band across their neck.
fn touching_blobs() -> (usize, usize, Vec<f64>, Vec<f64>) {
    let (w, h) = (40, 24);
    let mut p_o = vec![0.0; w * h];
    let mut p_c = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let blob = in_disk(y, x, 12.0, 14.0, 8.0) || in_disk(y, x, 12.0, 26.0, 8.0);
            if blob {
                p_o[y * w + x] = 0.9;
                if (19..=21).contains(&x) {
                    p_c[y * w + x] = 0.8;
                }
            }
        }
    }
    (w, h, p_o, p_c)
}

#[test]
fn contour_band_splits_touching_blobs() {
    let (w, h, p_o, p_c) = touching_blobs();
    let params = FusionParams::default();
    assert_eq!(segment(&p_o, &p_c, w, h, &params).unwrap().num_objects(), 2);
    assert_eq!(segment_objects_only(&p_o, w, h, &params).unwrap().num_objects(), 1);
}

#[test]
fn objects_only_equals_zero_contour_plane() {
    let (w, h, p_o, _) = touching_blobs();
    let params = FusionParams::default();
    assert_eq!(
        segment_objects_only(&p_o, w, h, &params).unwrap(),
        segment(&p_o, &vec![0.0; w * h], w, h, &params).unwrap()
    );
}

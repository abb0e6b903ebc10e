//! Cross-module invariants as property tests.

use proptest::prelude::*;

use rpci::metrics::{asd, dice, evaluate_pair, hd95, surface_distances};
use rpci::phantom::{generate_phantom, perturb_labels, PhantomSpec};
use rpci::preprocess::{crop_box, crop_with_margin, dilate_labels, CropSpec, DilationSpec};
use rpci::volume::{
    extract_region_mask, BinaryMask, Geometry, LabelVolume, RegionId, ScalarVolume, Spacing, WorldTransform,
};

fn geometry(dims: [usize; 3], s: [f64; 3]) -> Geometry {
    Geometry::simple(dims, Spacing::from_array(s).unwrap()).unwrap()
}

fn mask_strategy() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (
        [2usize..12, 2usize..12, 2usize..12],
        [0.4f64..3.0, 0.4f64..3.0, 0.4f64..3.0],
        prop::collection::vec(any::<(bool, bool)>(), 1728),
        0.0f64..0.6,
    )
        .prop_map(|(dims, s, bits, thin)| {
            let g = geometry(dims, s);
            let n = g.len();
            // thin out to vary density
            let keep = |i: usize| ((i * 7919) % 1000) as f64 / 1000.0 >= thin;
            let a = (0..n).map(|i| bits[i].0 && keep(i)).collect();
            let b = (0..n).map(|i| bits[i].1 && keep(i + 1)).collect();
            (BinaryMask::new(g, a).unwrap(), BinaryMask::new(g, b).unwrap())
        })
}

fn label_strategy() -> impl Strategy<Value = LabelVolume> {
    (
        [3usize..12, 3usize..12, 3usize..12],
        [0.5f64..2.5, 0.5f64..2.5, 0.5f64..2.5],
        prop::collection::vec((0u8..14, 0.0f64..1.0), 1728),
    )
        .prop_map(|(dims, s, raw)| {
            let g = geometry(dims, s);
            let data = (0..g.len())
                .map(|i| if raw[i].1 < 0.06 { raw[i].0 } else { 0 })
                .collect();
            LabelVolume::new(g, data).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_symmetry_and_bounds((a, b) in mask_strategy()) {
        let d = dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        if a.count() > 0 && b.count() > 0 {
            let ab = surface_distances(&a, &b).unwrap();
            let ba = surface_distances(&b, &a).unwrap();
            prop_assert_eq!(&ab.a_to_b, &ba.b_to_a);
            prop_assert_eq!(&ab.b_to_a, &ba.a_to_b);
            let h100 = ab.hd100().unwrap();
            let h95 = hd95(&ab).unwrap();
            let mean = asd(&ab).unwrap();
            prop_assert!(0.0 <= h95 && h95 <= h100);
            prop_assert!(0.0 <= mean && mean <= h100);
            prop_assert_eq!(h95, hd95(&ba).unwrap());
            if a == b {
                prop_assert_eq!((d, h100), (1.0, 0.0));
            }
        }
    }

    #[test]
    fn dilation_is_monotone_sound_and_complete(lv in label_strategy(), r in 0.0f64..3.5) {
        let out = dilate_labels(&lv, DilationSpec::new(r).unwrap()).unwrap();
        let g = lv.geometry();
        let s = g.spacing.as_array();
        let fg: Vec<[usize; 3]> = (0..g.len()).filter(|&i| lv.data()[i] > 0).map(|i| g.coords(i)).collect();
        for i in 0..g.len() {
            let (before, after) = (lv.data()[i], out.data()[i]);
            if before > 0 {
                prop_assert_eq!(before, after);
                continue;
            }
            let p = g.coords(i);
            let near = fg.iter().map(|q| {
                let d: f64 = (0..3).map(|a| ((p[a] as f64 - q[a] as f64) * s[a]).powi(2)).sum();
                d.sqrt()
            }).fold(f64::INFINITY, f64::min);
            if near <= r - 1e-9 {
                prop_assert!(after > 0, "voxel {:?} within {} of foreground left empty", p, near);
            }
            if after > 0 {
                prop_assert!(near <= r + 1e-9);
            }
        }
    }

    #[test]
    fn crop_keeps_foreground_and_world_positions(lv in label_strategy(), margin in 0.0f64..6.0, ox in -50.0f64..50.0) {
        prop_assume!(lv.data().iter().any(|&v| v > 0));
        let g = Geometry::new(lv.dims(), lv.spacing(), WorldTransform::with_origin([ox, 2.0 * ox, -ox])).unwrap();
        let lv = LabelVolume::new(g, lv.data().to_vec()).unwrap();
        let ct = ScalarVolume::new(g, vec![1.0; g.len()]).unwrap();
        let spec = CropSpec::new(margin).unwrap();
        let (_, cropped) = crop_with_margin(&ct, &lv, spec).unwrap();
        let b = crop_box(&lv, spec).unwrap();
        let kept = cropped.data().iter().filter(|&&v| v > 0).count();
        prop_assert_eq!(kept, lv.data().iter().filter(|&&v| v > 0).count());
        let gc = cropped.geometry();
        for i in (0..gc.len()).step_by(5) {
            let p = gc.coords(i);
            let w0 = g.voxel_to_world([p[0] + b.lo[0], p[1] + b.lo[1], p[2] + b.lo[2]]).unwrap();
            let w1 = gc.voxel_to_world(p).unwrap();
            for a in 0..3 {
                prop_assert!((w0[a] - w1[a]).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn perturbation_is_deterministic_and_bounded() {
    let ph = generate_phantom(&PhantomSpec::new([56, 48, 40], [1.0, 1.0, 1.5], 4)).unwrap();
    let magnitude = 2.0;
    let a = perturb_labels(&ph.labels, magnitude, 17).unwrap();
    assert_eq!(a, perturb_labels(&ph.labels, magnitude, 17).unwrap());
    assert_ne!(a, perturb_labels(&ph.labels, magnitude, 18).unwrap());

    let diag = ph.labels.spacing().diagonal();
    let m = evaluate_pair("p", &ph.labels, &a).unwrap();
    for r in RegionId::all() {
        let x = extract_region_mask(&ph.labels, r);
        let y = extract_region_mask(&a, r);
        assert!(y.count() > 0, "{r} vanished");
        let hd100 = surface_distances(&x, &y).unwrap().hd100().unwrap();
        assert!(hd100 <= magnitude + diag, "{r}: HD100 {hd100} > {}", magnitude + diag);
        let asd = m.region(r).asd_mm.unwrap();
        assert!(asd <= magnitude + diag, "{r}: ASD {asd}");
    }
    // alphabet preserved
    let h0 = ph.labels.histogram();
    let h1 = a.histogram();
    for l in 0..14 {
        assert_eq!(h0[l] > 0, h1[l] > 0, "label {l}");
    }
}

#[test]
fn phantom_self_comparison_is_perfect() {
    let ph = generate_phantom(&PhantomSpec::new([40, 40, 40], [1.0; 3], 2)).unwrap();
    let m = evaluate_pair("p", &ph.labels, &ph.labels).unwrap();
    for r in &m.regions {
        assert_eq!((r.dice, r.hd95_mm, r.asd_mm), (Some(1.0), Some(0.0), Some(0.0)));
    }
}

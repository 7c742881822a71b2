use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vae_unet::data::{load_cases, make_toy_dataset, patch_side, random_patch, write_case, Layout, SegmentationCase, ToySpec};
use vae_unet::metrics::{iou_distance, LabelMap};

#[test]
fn patches_stay_inside_the_image() {
    let mut shapes = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..10_000u64 {
        let (h, w) = (shapes.gen_range(4..48), shapes.gen_range(4..48));
        let ratio = shapes.gen_range(0.01..0.9);
        let image = Array3::from_shape_fn((1, h, w), |(_, r, c)| ((r * w + c) % 7) as f32 / 7.0);
        let (patched, mask) = random_patch(&image, ratio, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(mask.dim(), (h, w));

        let side = patch_side(ratio, h, w).clamp(1, h.min(w));
        let rows: Vec<usize> = (0..h).filter(|&r| mask.row(r).iter().any(|&m| m)).collect();
        let cols: Vec<usize> = (0..w).filter(|&c| mask.column(c).iter().any(|&m| m)).collect();
        assert_eq!((rows.len(), cols.len()), (side, side), "seed {seed}");
        let (top, left) = (rows[0], cols[0]);
        assert!(top + side <= h && left + side <= w);
        assert_eq!(mask.iter().filter(|&&m| m).count(), side * side);
        assert!(mask.slice(s![top..top + side, left..left + side]).iter().all(|&m| m));

        // only the patch changes, and it is filled with one value
        let fill = patched[[0, top, left]];
        for ((_, r, c), &a) in image.indexed_iter() {
            let want = if mask[[r, c]] { fill } else { a };
            assert_eq!(patched[[0, r, c]], want, "seed {seed} at ({r}, {c})");
        }
    }
}

#[test]
fn toy_set_survives_a_disk_round_trip() {
    let cases = make_toy_dataset(&ToySpec::new(3, 6, 24, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for c in &cases {
        write_case(dir.path(), c, Layout::MultiAnnotator).unwrap();
    }
    let load = || -> Vec<SegmentationCase> {
        load_cases(dir.path(), Layout::MultiAnnotator)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap()
    };
    let back = load();
    assert_eq!(back.len(), cases.len());
    for (a, b) in cases.iter().zip(&back) {
        assert_eq!(a.case_id, b.case_id);
        assert_eq!(a.image, b.image, "{} image", a.case_id);
        assert_eq!(a.annotations, b.annotations, "{} annotations", a.case_id);
    }
    assert_eq!(load(), back);
}

fn contains(outer: &LabelMap, inner: &LabelMap) -> bool {
    outer.iter().zip(inner).all(|(&o, &i)| o >= i)
}

#[test]
fn annotators_draw_nested_disks_around_the_reference() {
    let spec = ToySpec::new(9, 40, 32, 0.5);
    let cases = make_toy_dataset(&spec).unwrap();
    let mut ambiguous = 0;
    for c in &cases {
        let reference = c.reference.as_ref().unwrap();
        let a = &c.annotations;
        assert_eq!(a.len(), spec.annotator_offsets.len());
        if a.iter().all(|x| x == reference) {
            continue;
        }
        ambiguous += 1;
        // offsets are sorted, so each annotation contains the previous one
        for pair in a.windows(2) {
            assert!(contains(&pair[1], &pair[0]), "{}", c.case_id);
        }
        // the reference sits between the innermost negative and positive offsets
        assert!(contains(reference, &a[1]) && contains(&a[2], reference), "{}", c.case_id);
        let d = iou_distance(&a[0], &a[3], 1).unwrap();
        assert!(d > 0.0 && d < 1.0, "{}: outer annotators at distance {d}", c.case_id);
    }
    assert_eq!(ambiguous, 20);
}

use proptest::prelude::*;
use tubekit::geometry::union_box;
use tubekit::synth_harness::oracle_iou_grid;
use tubekit::{box_iou, segment_iou, tube_st_iou, BBox, BBoxExact, BBoxF32, Rational, Segment, Tube};

fn int_box() -> impl Strategy<Value = (i64, i64, i64, i64)> {
    (0i64..50, 0i64..50, 1i64..30, 1i64..30).prop_map(|(x, y, w, h)| (x, y, x + w, y + h))
}

fn f64_box((x1, y1, x2, y2): (i64, i64, i64, i64)) -> BBox {
    BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap()
}

fn exact_box((x1, y1, x2, y2): (i64, i64, i64, i64)) -> BBoxExact {
    let q = Rational::from_integer;
    BBox::new(q(x1), q(y1), q(x2), q(y2)).unwrap()
}

fn segment() -> impl Strategy<Value = Segment> {
    (0usize..40, 1usize..20).prop_map(|(s, l)| Segment::new(s, s + l).unwrap())
}

fn tube() -> impl Strategy<Value = Tube<Rational>> {
    segment().prop_flat_map(|seg| {
        prop::collection::vec(int_box(), seg.len()).prop_map(move |bs| {
            Tube::new(
                0,
                Rational::from_integer(1),
                seg,
                bs.into_iter().map(exact_box).collect(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn box_iou_is_symmetric_bounded_and_reflexive(a in int_box(), b in int_box()) {
        let (fa, fb) = (f64_box(a), f64_box(b));
        let v = box_iou(&fa, &fb);
        prop_assert_eq!(v, box_iou(&fb, &fa));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(box_iou(&fa, &fa), 1.0);
        let (ea, eb) = (exact_box(a), exact_box(b));
        prop_assert_eq!(box_iou(&ea, &eb), box_iou(&eb, &ea));
        prop_assert_eq!(box_iou(&ea, &ea), Rational::from_integer(1));
    }

    #[test]
    fn scalar_types_agree(a in int_box(), b in int_box()) {
        let exact = num_traits::ToPrimitive::to_f64(&box_iou(&exact_box(a), &exact_box(b))).unwrap();
        prop_assert!((box_iou(&f64_box(a), &f64_box(b)) - exact).abs() <= 1e-15);
        let sa: BBoxF32 = f64_box(a).cast().unwrap();
        let sb: BBoxF32 = f64_box(b).cast().unwrap();
        prop_assert!((f64::from(box_iou(&sa, &sb)) - exact).abs() <= 1e-6);
    }

    #[test]
    fn box_iou_matches_grid_counting(a in int_box(), b in int_box()) {
        let half = |(x1, y1, x2, y2): (i64, i64, i64, i64)| {
            BBox::new(x1 as f64 * 0.5, y1 as f64 * 0.5, x2 as f64 * 0.5, y2 as f64 * 0.5).unwrap()
        };
        let (ha, hb) = (half(a), half(b));
        prop_assert!((box_iou(&ha, &hb) - oracle_iou_grid(&ha, &hb, 0.5)).abs() <= 1e-6);
    }

    #[test]
    fn segment_iou_is_symmetric_bounded_and_reflexive(a in segment(), b in segment()) {
        let v: f64 = segment_iou(&a, &b);
        prop_assert_eq!(v, segment_iou::<f64>(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(segment_iou::<f64>(&a, &a), 1.0);
    }

    #[test]
    fn tube_iou_is_bounded_by_temporal_iou(a in tube(), b in tube()) {
        let st = tube_st_iou(&a, &b);
        prop_assert_eq!(st, tube_st_iou(&b, &a));
        prop_assert!(st >= Rational::from_integer(0));
        prop_assert!(st <= segment_iou::<Rational>(&a.segment(), &b.segment()));
        prop_assert_eq!(tube_st_iou(&a, &a), Rational::from_integer(1));
    }

    #[test]
    fn union_box_contains_inputs(boxes in prop::collection::vec(int_box(), 1..8)) {
        let bs: Vec<BBox> = boxes.into_iter().map(f64_box).collect();
        let u = union_box(&bs).unwrap();
        for b in &bs {
            prop_assert!(u.contains(b));
        }
    }
}

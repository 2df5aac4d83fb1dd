//! Evaluation against brute-force matching and AP invariants.

use proptest::prelude::*;
use rfalign::detmetrics::{
    detections_to_csv, evaluate, evaluate_with, ground_truth_to_csv, iou, load_detections, load_ground_truth, BBox,
    DetectionRecord, EvalConfig, GroundTruthRecord,
};
use rfalign::Exec;

/// Boxes on a coarse lattice so that IoU ≥ 0.5 and IoU ties both occur.
fn lattice_box() -> impl Strategy<Value = BBox> {
    (0u32..4, 0u32..4, 2u32..5, 2u32..5).prop_map(|(x, y, w, h)| {
        let (x, y) = (f64::from(x), f64::from(y));
        BBox::new(x, y, x + f64::from(w), y + f64::from(h)).unwrap()
    })
}

/// Enumerates every injective partial matching with IoU ≥ threshold and keeps
/// the one that is lexicographically best when detections are taken in score
/// order and each prefers higher IoU, then earlier ground truth, then nothing.
fn brute_force_tp(gts: &[BBox], dets: &[(f64, BBox)], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.total_cmp(&dets[a].0).then(a.cmp(&b)));
    // preference rank of assigning detection d to gt g (lower is better)
    let rank = |d: usize, g: Option<usize>| -> (u8, i64, usize) {
        match g {
            Some(g) => (0, -((iou(&dets[d].1, &gts[g]) * 1e12) as i64), g),
            None => (1, 0, 0),
        }
    };
    type Key = Vec<(u8, i64, usize)>;
    let mut best: Option<(Key, Vec<Option<usize>>)> = None;
    let mut assignment = vec![None; dets.len()];
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        pos: usize,
        order: &[usize],
        gts: &[BBox],
        dets: &[(f64, BBox)],
        threshold: f64,
        used: &mut Vec<bool>,
        assignment: &mut Vec<Option<usize>>,
        visit: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if pos == order.len() {
            visit(assignment);
            return;
        }
        let d = order[pos];
        assignment[d] = None;
        recurse(pos + 1, order, gts, dets, threshold, used, assignment, visit);
        for g in 0..gts.len() {
            if !used[g] && iou(&dets[d].1, &gts[g]) >= threshold {
                used[g] = true;
                assignment[d] = Some(g);
                recurse(pos + 1, order, gts, dets, threshold, used, assignment, visit);
                used[g] = false;
                assignment[d] = None;
            }
        }
    }
    let mut used = vec![false; gts.len()];
    recurse(0, &order, gts, dets, threshold, &mut used, &mut assignment, &mut |a| {
        let key: Vec<_> = order.iter().map(|&d| rank(d, a[d])).collect();
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, a.to_vec()));
        }
    });
    best.unwrap().1.iter().map(Option::is_some).collect()
}

fn records(gts: &[BBox], dets: &[(f64, BBox)]) -> (Vec<GroundTruthRecord>, Vec<DetectionRecord>) {
    (
        gts.iter()
            .map(|&b| GroundTruthRecord {
                image_id: "img".into(),
                class_label: "sign".into(),
                bbox: b,
            })
            .collect(),
        dets.iter()
            .map(|&(s, b)| DetectionRecord::new("img", "sign", s, b).unwrap())
            .collect(),
    )
}

fn score() -> impl Strategy<Value = f64> {
    (0u32..=10).prop_map(|s| f64::from(s) / 10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matching_equals_brute_force(
        gts in prop::collection::vec(lattice_box(), 0..=4),
        dets in prop::collection::vec((score(), lattice_box()), 0..=6),
        conf in score(),
    ) {
        let (g, d) = records(&gts, &dets);
        let cfg = EvalConfig { conf_threshold: conf, ..EvalConfig::default() };
        let report = evaluate(&g, &d, &cfg).unwrap();
        let oracle = brute_force_tp(&gts, &dets, 0.5);
        prop_assert_eq!(&report.matched, &oracle);

        let above: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].0 >= conf).collect();
        let tp = above.iter().filter(|&&i| oracle[i]).count();
        prop_assert_eq!(report.tp(), tp);
        prop_assert_eq!(report.tp() + report.fp(), above.len());
        prop_assert_eq!(report.tp() + report.fn_(), gts.len());
    }

    #[test]
    fn low_score_duplicate_never_lowers_ap(
        gts in prop::collection::vec(lattice_box(), 1..=4),
        dets in prop::collection::vec((0.2f64..1.0, lattice_box()), 1..=6),
        pick in any::<prop::sample::Index>(),
    ) {
        let (g, d) = records(&gts, &dets);
        let before = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let tps: Vec<usize> = (0..d.len()).filter(|&i| before.matched[i]).collect();
        prop_assume!(!tps.is_empty());
        let mut extended = d.clone();
        let mut dup = d[tps[pick.index(tps.len())]].clone();
        dup.score = 0.1;
        extended.push(dup);
        let after = evaluate(&g, &extended, &EvalConfig::default()).unwrap();
        prop_assert!(after.map50 >= before.map50);
    }

    #[test]
    fn false_positive_never_raises_ap(
        gts in prop::collection::vec(lattice_box(), 1..=4),
        dets in prop::collection::vec((score(), lattice_box()), 0..=6),
        fp_score in score(),
    ) {
        let (g, d) = records(&gts, &dets);
        let before = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let mut extended = d.clone();
        extended.push(DetectionRecord::new("img", "sign", fp_score, BBox::new(100.0, 100.0, 105.0, 105.0).unwrap()).unwrap());
        let after = evaluate(&g, &extended, &EvalConfig::default()).unwrap();
        prop_assert!(after.map50 <= before.map50);
    }
}

fn scattered_box() -> impl Strategy<Value = BBox> {
    (0.0f64..50.0, 0.0f64..50.0, 1.0f64..20.0, 1.0f64..20.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn multi_class_set() -> impl Strategy<Value = (Vec<GroundTruthRecord>, Vec<DetectionRecord>)> {
    let gt = (0u8..3, 0u8..3, scattered_box()).prop_map(|(i, c, b)| GroundTruthRecord {
        image_id: format!("i{i}"),
        class_label: format!("c{c}"),
        bbox: b,
    });
    let det = (0u8..3, 0u8..4, scattered_box()).prop_map(|(i, c, b)| (format!("i{i}"), format!("c{c}"), b));
    (prop::collection::vec(gt, 0..12), prop::collection::vec(det, 0..16)).prop_map(|(g, d)| {
        // distinct scores
        let n = d.len();
        let dets = d
            .into_iter()
            .enumerate()
            .map(|(k, (i, c, b))| DetectionRecord::new(&i, &c, (k as f64 + 0.5) / n as f64, b).unwrap())
            .collect();
        (g, dets)
    })
}

proptest! {
    #[test]
    fn row_order_does_not_matter(
        (gts, dets) in multi_class_set(),
        seed in any::<u64>(),
    ) {
        let base = evaluate(&gts, &dets, &EvalConfig::default()).unwrap();
        // deterministic shuffle from the seed
        let perm = |n: usize, salt: u64| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| (i as u64 ^ seed.rotate_left(salt as u32)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            idx
        };
        let dp = perm(dets.len(), 7);
        let gp = perm(gts.len(), 13);
        let d2: Vec<_> = dp.iter().map(|&i| dets[i].clone()).collect();
        let g2: Vec<_> = gp.iter().map(|&i| gts[i].clone()).collect();
        let shuffled = evaluate(&g2, &d2, &EvalConfig::default()).unwrap();
        prop_assert_eq!(shuffled.at_threshold, base.at_threshold);
        prop_assert_eq!(shuffled.best_f1, base.best_f1);
        prop_assert_eq!(&shuffled.per_class_ap, &base.per_class_ap);
        prop_assert_eq!(shuffled.map50, base.map50);
        prop_assert_eq!(&shuffled.unknown_classes, &base.unknown_classes);
        for (k, &i) in dp.iter().enumerate() {
            prop_assert_eq!(shuffled.matched[k], base.matched[i]);
        }
        prop_assert_eq!(evaluate_with(&gts, &dets, &EvalConfig::default(), Exec::Sequential).unwrap(), base);
    }

    #[test]
    fn aggregate_counts_hold((gts, dets) in multi_class_set(), conf in 0.0f64..1.0) {
        let cfg = EvalConfig { conf_threshold: conf, ..EvalConfig::default() };
        let r = evaluate(&gts, &dets, &cfg).unwrap();
        prop_assert_eq!(r.tp() + r.fp(), dets.iter().filter(|d| d.score >= conf).count());
        prop_assert_eq!(r.tp() + r.fn_(), gts.len());
        prop_assert!((0.0..=1.0).contains(&r.map50));
    }
}

#[test]
fn five_row_fixture_round_trips() {
    let gt_text = "image_id,class,x_min,y_min,x_max,y_max\n\
                   a,pl40,10,10,30,30\n\
                   a,i5,100.5,40,120.25,61\n\
                   b,pl40,0,0,8,8\n\
                   b,w57,\"3,4\",5,9,11\n\
                   c,p11,500,500,540,545\n";
    // the quoted comma above is a malformed coordinate, so fix it and retry
    assert!(load_ground_truth(gt_text).is_err());
    let gt_text = gt_text.replace("\"3,4\"", "3.4");
    let gts = load_ground_truth(&gt_text).unwrap();
    assert_eq!(gts.len(), 5);
    assert_eq!(gts[3].bbox.x_min, 3.4);
    assert_eq!(load_ground_truth(&ground_truth_to_csv(&gts)).unwrap(), gts);
    assert_eq!(ground_truth_to_csv(&gts), gt_text);

    let det_text = "image_id,class,score,x_min,y_min,x_max,y_max\n\
                    a,pl40,0.95,10,10,30,30\n\
                    a,i5,0.5,100,40,120,60\n\
                    b,\"pl,40\",0.125,0,0,8,8\n\
                    b,w57,1,3,5,9,11\n\
                    c,p11,0,500,500,540,545\n";
    let dets = load_detections(det_text).unwrap();
    assert_eq!(dets.len(), 5);
    assert_eq!(dets[2].class_label, "pl,40");
    assert_eq!(load_detections(&detections_to_csv(&dets)).unwrap(), dets);
}

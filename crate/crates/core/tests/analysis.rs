use gbk_core::analysis::{
    consistency_complexity, emit_report, gate_accuracy, nhr_bucket_accuracy, DatasetSummary,
    GateSection, ReportInputs,
};
use gbk_core::splits::{edge_targets_within, GateTarget};
use gbk_core::synth::{generate_synthetic, SynthSpec};
use gbk_core::train::{train_with_splits, TrainConfig};
use gbk_core::{Graph, Tensor};
use proptest::prelude::*;

/// 200 points in 4 dimensions, three interleaved classes, built from a
/// closed form so an external implementation can reproduce them.
fn closed_form_points() -> (Tensor, Vec<usize>) {
    let (n, h, k) = (200, 4, 3);
    let mut rows = Vec::new();
    for i in 0..n {
        let y = i % k;
        let row: Vec<f64> = (0..h)
            .map(|c| {
                let (fi, fc) = (i as f64, c as f64);
                let shift = if c == 0 { 0.8 * y as f64 } else { 0.0 };
                (0.37 * fi + 1.3 * fc).sin() + 0.5 * (y as f64 - fc) * (0.11 * fi).cos() + shift
            })
            .collect();
        rows.push(row);
    }
    (Tensor::from_rows(&rows).unwrap(), (0..n).map(|i| i % k).collect())
}

#[test]
fn complexity_matches_reference_values() {
    let (x, y) = closed_form_points();
    for (p, expected) in [
        (2.0, 4.415468544775106),
        (1.0, 7.1168213640316225),
        (3.0, 3.9748060482971805),
    ] {
        let got = consistency_complexity(&x, &y, p).unwrap().complexity;
        assert!((got - expected).abs() < 1e-10, "p={p}: {got} vs {expected}");
    }
}

fn labelled_cloud() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<usize>)> {
    proptest::collection::vec((prop::array::uniform3(-5.0f64..5.0), 0usize..3), 6..40).prop_map(
        |pts| {
            let mut labels: Vec<usize> = pts.iter().map(|p| p.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            labels[2] = 2;
            (pts.into_iter().map(|p| p.0).collect(), labels)
        },
    )
}

proptest! {
    #[test]
    fn complexity_ignores_translation_and_scale(
        (pts, labels) in labelled_cloud(),
        shift in prop::array::uniform3(-100.0f64..100.0),
        scale in 0.01f64..100.0,
        p in prop_oneof![Just(1.0), Just(2.0), Just(3.0)],
    ) {
        let base = Tensor::from_rows(&pts).unwrap();
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|r| [scale * r[0] + shift[0], scale * r[1] + shift[1], scale * r[2] + shift[2]])
            .collect();
        let moved = Tensor::from_rows(&moved).unwrap();
        let a = consistency_complexity(&base, &labels, p).unwrap().complexity;
        let b = consistency_complexity(&moved, &labels, p).unwrap().complexity;
        prop_assume!(a.is_finite() && a < 1e6);
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn complexity_ignores_point_order((pts, labels) in labelled_cloud(), rot in 0usize..40) {
        let n = pts.len();
        let r = rot % n;
        let rotated: Vec<[f64; 3]> = (0..n).map(|i| pts[(i + r) % n]).collect();
        let rotated_labels: Vec<usize> = (0..n).map(|i| labels[(i + r) % n]).collect();
        let a = consistency_complexity(&Tensor::from_rows(&pts).unwrap(), &labels, 2.0).unwrap();
        let b = consistency_complexity(&Tensor::from_rows(&rotated).unwrap(), &rotated_labels, 2.0)
            .unwrap();
        prop_assume!(a.complexity.is_finite());
        prop_assert!((a.complexity - b.complexity).abs() <= 1e-9 * a.complexity.max(1.0));
    }
}

/// Star-ish graph whose test nodes land in known buckets.
fn bucket_graph() -> Graph {
    // node: label; 0..=4 are centers with 5 neighbors among 5..15
    let labels = vec![0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0];
    let mut edges = Vec::new();
    // center 0: 5 same -> bucket 4
    edges.extend((5..10).map(|j| (0, j)));
    // center 1: 0 same -> bucket 0
    edges.extend((10..15).map(|j| (1, j)));
    // center 2: 2 same of 5 -> 0.4 -> bucket 2
    edges.extend([(2, 5), (2, 6), (2, 10), (2, 11), (2, 12)]);
    // center 3 (label 1): 4 same of 5 -> 0.8 -> bucket 4
    edges.extend([(3, 10), (3, 11), (3, 12), (3, 13), (3, 5)]);
    // center 4 (label 1): 1 same of 5 -> bucket 1
    edges.extend([(4, 10), (4, 5), (4, 6), (4, 7), (4, 8)]);
    let features = Tensor::zeros(16, 1);
    Graph::new(edges, features, labels, 2).unwrap()
}

#[test]
fn buckets_group_by_neighbor_agreement() {
    let g = bucket_graph();
    // node 15 is isolated
    let test = vec![0, 1, 2, 3, 4, 15];
    let predictions = vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0];
    let r = nhr_bucket_accuracy(&g, &predictions, &test).unwrap();
    assert_eq!(r.isolated_skipped, 1);
    let counts: Vec<usize> = r.buckets.iter().map(|b| b.count).collect();
    assert_eq!(counts, vec![1, 1, 1, 0, 2]);
    let acc: Vec<Option<f64>> = r.buckets.iter().map(|b| b.accuracy).collect();
    assert_eq!(acc, vec![Some(0.0), Some(1.0), Some(1.0), None, Some(0.5)]);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains(r#""accuracy":"N/A""#));
}

#[test]
fn gate_accuracy_averages_layers() {
    let edges = [
        GateTarget { edge: 0, src: 0, dst: 1, same: true },
        GateTarget { edge: 1, src: 1, dst: 0, same: false },
        GateTarget { edge: 3, src: 2, dst: 0, same: true },
        GateTarget { edge: 4, src: 2, dst: 1, same: false },
    ];
    let first = Tensor::column(vec![0.9, 0.2, 0.0, 0.7, 0.4]);
    let second = Tensor::column(vec![0.5, 0.6, 1.0, 0.1, 0.5]);
    // first: hit, hit, hit, hit; second: miss (0.5), miss, miss, hit
    let acc = gate_accuracy(&[first, second], &edges).unwrap();
    assert!((acc - (1.0 + 0.25) / 2.0).abs() < 1e-15);
    assert!(gate_accuracy(&[Tensor::column(vec![0.1])], &[]).is_err());
}

#[test]
fn report_is_deterministic_and_complete() {
    let g = generate_synthetic(&SynthSpec::new(120, 4, 0.8, 0.6, 3)).unwrap();
    let config = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let (trained, masks) = train_with_splits(&g, &config).unwrap();
    let out = gbk_core::train::predict(
        &trained.specs,
        &trained.best,
        &g,
        gbk_core::models::Gates::Learned,
    )
    .unwrap();
    let predictions: Vec<usize> = (0..g.num_nodes())
        .map(|i| {
            let row = out.logits.row(i);
            usize::from(row[1] > row[0])
        })
        .collect();
    let buckets = nhr_bucket_accuracy(&g, &predictions, &masks.test).unwrap();
    let gate = GateSection::new(Some(
        gate_accuracy(&out.alphas, &edge_targets_within(&g, &masks.test)).unwrap(),
    ));
    let dataset = DatasetSummary::of(&g);
    let inputs = ReportInputs {
        dataset: Some(&dataset),
        history: Some(&trained.history),
        buckets: Some(&buckets),
        gate: Some(&gate),
    };
    let a = emit_report(&inputs).unwrap();
    let b = emit_report(&inputs).unwrap();
    assert_eq!(a, b);

    let doc: serde_json::Value = serde_json::from_str(&a.document).unwrap();
    let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["buckets", "complexity", "dataset", "gate", "training"]);
    assert_eq!(a.series["train_loss"].lines().count(), 16);
    assert!(a.series.contains_key("gate_acc_val"));

    let missing = ReportInputs {
        gate: None,
        ..inputs
    };
    assert!(emit_report(&missing).is_err());
}

#[test]
fn ungated_report_marks_gate_not_applicable() {
    let s = serde_json::to_string(&GateSection::new(None)).unwrap();
    assert!(s.contains(r#""accuracy":"N/A""#));
}

#[test]
fn history_round_trips_with_infinite_complexity() {
    use gbk_core::train::{EpochRecord, RunHistory};
    let record = |epoch, complexity| EpochRecord {
        epoch,
        train_loss: 0.5,
        task_loss: 0.4,
        gate_loss: Some(0.1),
        val_loss: 0.6,
        train_acc: 0.75,
        val_acc: 0.7,
        gate_acc: None,
        complexity,
    };
    let h = RunHistory {
        records: vec![record(1, Some(f64::INFINITY)), record(2, Some(1.25)), record(3, None)],
        best_epoch: 2,
        best_val_acc: 0.7,
        test_acc: 0.65,
        gate_acc: Some(0.8),
        final_val_acc: 0.7,
        final_test_acc: 0.6,
        final_gate_acc: None,
    };
    let text = serde_json::to_string(&h).unwrap();
    assert!(text.contains(r#""complexity":"inf""#));
    let back: RunHistory = serde_json::from_str(&text).unwrap();
    assert_eq!(back, h);
}

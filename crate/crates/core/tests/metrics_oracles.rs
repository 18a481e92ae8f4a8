use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavetex::metrics::{roc_auc, write_predictions_csv, write_roc_csv, EvalReport};

fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn trapezoid_auc_equals_pairwise_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..200 {
        let scores: Vec<f64> = (0..20)
            .map(|_| if case % 2 == 0 { rng.random_range(0..6) as f64 / 5.0 } else { rng.random() })
            .collect();
        let mut pos: Vec<bool> = (0..20).map(|_| rng.random()).collect();
        pos[3] = true;
        pos[7] = false;
        let (_, auc) = roc_auc(&scores, &pos).unwrap();
        assert!((auc - mann_whitney(&scores, &pos)).abs() < 1e-10, "case {case}");
    }
}

#[test]
fn degenerate_curves() {
    let (_, auc) = roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap();
    assert_eq!(auc, 0.5);
    let (_, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
    assert_eq!(auc, 1.0);
    assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn report_matches_dumped_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let classes = 3;
    let n = 50;
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let mut proba = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..n {
        let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / s).collect();
        pred.push((0..classes).fold(0, |b, j| if row[j] > row[b] { j } else { b }));
        proba.extend(row);
    }
    let (report, roc) = EvalReport::compute("test", &pred, &truth, &proba, classes, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_csv(&dir.path().join("metrics.csv")).unwrap();
    write_roc_csv(&dir.path().join("roc.csv"), roc.as_deref().unwrap()).unwrap();
    let sources: Vec<String> = (0..n).map(|i| format!("img{i}.pgm")).collect();
    write_predictions_csv(&dir.path().join("predictions.csv"), &sources, &truth, &pred, &proba, classes).unwrap();

    let dumped = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let mut lines = dumped.lines();
    assert_eq!(lines.next().unwrap(), "path,label,pred,p0,p1,p2");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    let correct = rows.iter().filter(|r| r[1] == r[2]).count();
    let binary = rows.iter().filter(|r| (r[1] == "1") == (r[2] == "1")).count();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let get = |k: &str| -> f64 {
        metrics.lines().find_map(|l| l.strip_prefix(&format!("{k},"))).unwrap().parse().unwrap()
    };
    assert_eq!(get("top1_accuracy"), correct as f64 / n as f64);
    assert_eq!(get("accuracy"), binary as f64 / n as f64);
    assert_eq!(get("tp") + get("fp") + get("fn") + get("tn"), n as f64);
    let pct = metrics.lines().find_map(|l| l.strip_prefix("accuracy_pct,")).unwrap();
    assert_eq!(pct.split('.').nth(1).unwrap().len(), 3);

    let roc_text = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(roc_text.starts_with("threshold,fpr,tpr\ninf,0,0\n"));
    assert!(roc_text.trim_end().ends_with(",1,1"));
}

//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavetex::checkpoint::Checkpoint;
use wavetex::metrics::{confusion, roc_auc};
use wavetex::train::{read_log, EpochLog};
use wavetex::wavelet::{
    awtm_forward, haar_inverse, haar_split, high_avg, loss_wt, max_levels, AwtmParams, WaveletBranch,
    WaveletBranchOutput,
};
use wavetex::{BackboneConfig, ModelConfig, ParamStore, Tape, TapPoint, Tensor, Variant};

type Outcome = Result<String, String>;

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["wavetex"];
    full.extend_from_slice(args);
    wavetex_cli::run(full)
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn perfect_reconstruction() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..3);
        let c = rng.random_range(1..4);
        let h = 2 * rng.random_range(1..17);
        let w = 2 * rng.random_range(1..17);
        let x = random_tensor(&mut rng, &[n, c, h, w], 10.0);
        let y = haar_inverse(&haar_split(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(y.shape() == x.shape(), "shape changed")?;
        worst = worst.max(x.max_abs_diff(&y));
    }
    check(worst < 1e-12, format!("max abs error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 images, max abs error {worst:.1e}, {:.2}s", t.elapsed().as_secs_f64()))
}

/// Mean of each `block x block` tile, computed directly from the input.
fn block_means(x: &Tensor<f64>, block: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (ho, wo) = (h / block, w / block);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let mut s = 0.0;
                for di in 0..block {
                    for dj in 0..block {
                        s += x.data()[p * h * w + (i * block + di) * w + j * block + dj];
                    }
                }
                out.push(s / (block * block) as f64);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out).unwrap()
}

fn identity_lifting() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let c = 1 + trial % 3;
        let x = random_tensor(&mut rng, &[2, c, 32, 32], 1.0);
        let mut store = ParamStore::<f64>::new();
        let level = AwtmParams::new(&mut store, "l", c, &mut rng).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = awtm_forward(&mut tape, &store, xv, &level).map_err(|e| e.to_string())?;
        let q = haar_split(&x).map_err(|e| e.to_string())?;
        let highs = high_avg(&q).map_err(|e| e.to_string())?;
        worst = worst
            .max(tape.value(out.approx).max_abs_diff(&q.ll))
            .max(tape.value(out.detail).max_abs_diff(&highs));

        let levels = max_levels(32).unwrap();
        for l in 1..=levels {
            let mut store = ParamStore::<f64>::new();
            let branch = WaveletBranch::awtm(&mut store, "w", c, l, &mut rng).map_err(|e| e.to_string())?;
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = branch.forward(&mut tape, &store, xv).map_err(|e| e.to_string())?;
            worst = worst.max(tape.value(out.final_approx()).max_abs_diff(&block_means(&x, 1 << l)));
        }
    }
    check(worst < 1e-12, format!("max abs error {worst:e}"))?;
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("single level and 1..3-level cascades, max abs error {worst:.1e}"))
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    for variant in ["awtm", "dawn", "backbone_only"] {
        let code = cli(&["gradcheck", "--variant", variant, "--tap", "pos3"]);
        check(code == 0, format!("{variant}: gradcheck exited with {code}"))?;
    }
    within(t.elapsed(), Duration::from_secs(120))?;
    Ok(format!("awtm, dawn, backbone_only all below 1e-3 in {:.1}s", t.elapsed().as_secs_f64()))
}

fn huber_oracle(v: f64) -> f64 {
    if v.abs() <= 1.0 {
        0.5 * v * v
    } else {
        v.abs() - 0.5
    }
}

fn loss_oracle(details: &[Vec<Tensor<f64>>], means: &[(Tensor<f64>, Tensor<f64>)], alpha: f64, beta: f64) -> f64 {
    let mut detail_term = 0.0;
    for d in details.iter().flatten() {
        let total: f64 = d.data().iter().map(|v| huber_oracle(*v)).sum();
        detail_term += total / d.numel() as f64;
    }
    let mut mean_term = 0.0;
    for (mi, ma) in means {
        let n = mi.shape()[0];
        let sq: f64 = mi.data().iter().zip(ma.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        mean_term += sq / n as f64;
    }
    alpha * detail_term + beta * mean_term
}

fn loss_oracle_check(run: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let levels = rng.random_range(1..5);
        let per_level = if rng.random::<bool>() { 1 } else { 3 };
        let (n, c) = (rng.random_range(1..4), rng.random_range(1..5));
        let alpha = rng.random::<f64>();
        let beta = rng.random::<f64>();
        let mut tape = Tape::<f64>::new();
        let mut details = Vec::new();
        let mut means = Vec::new();
        let mut out = WaveletBranchOutput {
            details: Vec::new(),
            approxes: Vec::new(),
            level_means: Vec::new(),
        };
        let mut side = 32;
        for _ in 0..levels {
            side /= 2;
            let ds: Vec<Tensor<f64>> = (0..per_level)
                .map(|_| random_tensor(&mut rng, &[n, c, side, side], 3.0))
                .collect();
            out.details.push(ds.iter().map(|d| tape.constant(d.clone())).collect());
            out.approxes.push(tape.constant(random_tensor(&mut rng, &[n, c, side, side], 1.0)));
            let mi = random_tensor(&mut rng, &[n, c], 2.0);
            let ma = random_tensor(&mut rng, &[n, c], 2.0);
            out.level_means.push((tape.constant(mi.clone()), tape.constant(ma.clone())));
            details.push(ds);
            means.push((mi, ma));
        }
        let got = loss_wt(&mut tape, &out, alpha, beta).map_err(|e| e.to_string())?;
        let got = tape.value(got).item();
        let want = loss_oracle(&details, &means, alpha, beta);
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-10, format!("max deviation from oracle {worst:e}"))?;

    let text = std::fs::read_to_string(run.join("batches.csv")).map_err(|e| e.to_string())?;
    let mut rows = 0;
    let mut drift = 0.0f64;
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect();
        drift = drift.max((f[2] - (f[3] + f[4])).abs());
        rows += 1;
    }
    check(rows > 0, "no batch rows logged")?;
    check(drift <= 1e-6, format!("logged total differs from CE + Loss_WT by {drift:e}"))?;
    Ok(format!("100 random branches within {worst:.1e}; {rows} logged batches within {drift:.1e}"))
}

fn max_level_rule() -> Outcome {
    check(max_levels(224).ok() == Some(5), "max_levels(224) != 5")?;
    let full = BackboneConfig::full(1);
    check(full.input_side == 256, "full preset is not 256-sided")?;
    let mut table = Vec::new();
    for (tap, want) in TapPoint::ALL.into_iter().zip([5usize, 4, 3, 2, 1]) {
        let mut cfg = ModelConfig::new(full.clone(), Variant::Awtm, tap, 2);
        let auto = cfg.resolved_levels().map_err(|e| e.to_string())?;
        check(auto == want, format!("{tap}: auto levels {auto}, expected {want}"))?;
        for l in 1..=want {
            cfg.levels = Some(l);
            check(cfg.validate().is_ok(), format!("({tap}, {l}) rejected"))?;
        }
        cfg.levels = Some(want + 1);
        check(cfg.validate().is_err(), format!("({tap}, {}) accepted", want + 1))?;
        table.push(format!("{tap}->{want}"));
    }
    Ok(format!("side 224 -> 5; {}", table.join(" ")))
}

fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, si) in scores.iter().enumerate() {
        for (j, sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn metric_correctness() -> Outcome {
    // tp=55, fn=3, fp=2, tn=40 with class 1 positive.
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, p, k) in [(1, 1, 55), (1, 0, 3), (0, 1, 2), (0, 0, 40)] {
        truth.extend(std::iter::repeat_n(t, k));
        pred.extend(std::iter::repeat_n(p, k));
    }
    let cm = confusion(&pred, &truth, 1).map_err(|e| e.to_string())?;
    check((cm.tp, cm.fn_, cm.fp, cm.tn) == (55, 3, 2, 40), format!("counts {cm:?}"))?;
    let acc = cm.accuracy().map_err(|e| e.to_string())?;
    let rec = cm.recall().map_err(|e| e.to_string())?;
    check((acc - 0.95).abs() < 1e-12, format!("accuracy {acc}"))?;
    check((rec - 55.0 / 58.0).abs() < 1e-12 && format!("{rec:.4}") == "0.9483", format!("recall {rec}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = rng.random_range(10..60);
        // Coarse scores on half of the cases to exercise ties.
        let levels = if k % 2 == 0 { 5.0 } else { 1e9 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        pos[0] = true;
        pos[1] = false;
        let (_, auc) = roc_auc(&scores, &pos).map_err(|e| e.to_string())?;
        worst = worst.max((auc - mann_whitney(&scores, &pos)).abs());
    }
    check(worst < 1e-10, format!("AUC deviates from Mann-Whitney by {worst:e}"))?;
    Ok(format!("accuracy {acc:.4}, recall {rec:.4}; 50 AUCs within {worst:.1e}"))
}

struct LearningRun {
    awtm: PathBuf,
    accuracy: f64,
    baseline: f64,
    elapsed: Duration,
}

fn metric_value(path: &Path, key: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter_map(|l| l.split_once(','))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| format!("{key} missing from {}", path.display()))
}

fn learning_run(root: &Path) -> Result<LearningRun, String> {
    let t = Instant::now();
    let data = root.join("synth");
    let d = data.to_str().unwrap();
    check(
        cli(&["synth", "--classes", "4", "--per-class", "100", "--side", "32", "--seed", "7", "--out", d]) == 0,
        "synth failed",
    )?;
    let mut acc = Vec::new();
    for variant in ["awtm", "backbone_only"] {
        let out = root.join(variant);
        let o = out.to_str().unwrap();
        let code = cli(&[
            "train", "--data", d, "--variant", variant, "--tap", "pos3", "--levels", "auto", "--out", o, "--set",
            "epochs=30", "--set", "seed=7",
        ]);
        check(code == 0, format!("{variant}: train exited with {code}"))?;
        let ev = root.join(format!("{variant}_eval"));
        let ckpt = out.join("last.ckpt");
        let code = cli(&[
            "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", d, "--split", "test", "--out",
            ev.to_str().unwrap(),
        ]);
        check(code == 0, format!("{variant}: eval exited with {code}"))?;
        acc.push(metric_value(&ev.join("metrics.csv"), "top1_accuracy")?);
    }
    Ok(LearningRun {
        awtm: root.join("awtm"),
        accuracy: acc[0],
        baseline: acc[1],
        elapsed: t.elapsed(),
    })
}

fn desk_scale_learning(run: &Result<LearningRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let summary = format!(
        "awtm test accuracy {:.3}%, backbone_only {:.3}%, {:.0}s",
        100.0 * run.accuracy,
        100.0 * run.baseline,
        run.elapsed.as_secs_f64()
    );
    check(run.accuracy >= 0.9, summary.clone())?;
    within(run.elapsed, Duration::from_secs(600))?;
    Ok(summary)
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism_and_resume(root: &Path) -> Outcome {
    let data = root.join("small");
    let d = data.to_str().unwrap();
    check(
        cli(&["synth", "--classes", "4", "--per-class", "10", "--side", "32", "--seed", "3", "--out", d]) == 0,
        "synth failed",
    )?;
    let train = |name: &str, epochs: usize, resume: Option<&Path>| -> Result<PathBuf, String> {
        let out = root.join(name);
        let o = out.to_str().unwrap().to_owned();
        let e = format!("epochs={epochs}");
        let mut args = vec!["train", "--data", d, "--out", &o, "--set", &e, "--set", "seed=11"];
        let r;
        if let Some(p) = resume {
            r = p.to_str().unwrap().to_owned();
            args.extend(["--resume", &r]);
        }
        let code = cli(&args);
        check(code == 0, format!("{name}: train exited with {code}"))?;
        Ok(out)
    };
    let a = train("straight_a", 10, None)?;
    let b = train("straight_b", 10, None)?;
    let la = read_log(&a.join("log.csv")).map_err(|e| e.to_string())?;
    let lb = read_log(&b.join("log.csv")).map_err(|e| e.to_string())?;
    check(
        la[0].train_loss.to_bits() == lb[0].train_loss.to_bits(),
        format!("epoch-0 losses differ: {} vs {}", la[0].train_loss, lb[0].train_loss),
    )?;
    check(read(&a.join("last.ckpt"))? == read(&b.join("last.ckpt"))?, "final checkpoints differ")?;

    let r = train("resumed", 5, None)?;
    train("resumed", 10, Some(&r.join("last.ckpt")))?;
    check(read(&a.join("last.ckpt"))? == read(&r.join("last.ckpt"))?, "resumed final checkpoint differs")?;
    let lr = read_log(&r.join("log.csv")).map_err(|e| e.to_string())?;
    check(lr == la, "resumed log differs from the straight run")?;
    Ok(format!("epoch-0 loss {:.6} bit-identical; resume 5->10 matches straight 10", la[0].train_loss))
}

fn lr_schedule_check(run: &Result<LearningRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let log: Vec<EpochLog> = read_log(&run.awtm.join("log.csv")).map_err(|e| e.to_string())?;
    let lr0 = 1e-3;
    for (epoch, want) in [(0, lr0), (10, lr0 / 2.0), (25, lr0 / 4.0)] {
        let row = log.iter().find(|r| r.epoch == epoch).ok_or(format!("epoch {epoch} not logged"))?;
        check(row.lr == want, format!("epoch {epoch}: lr {} expected {want}", row.lr))?;
    }
    Ok("epochs 0/10/25 logged 1e-3, 5e-4, 2.5e-4".into())
}

fn checkpoint_round_trip(run: &Result<LearningRun, String>, root: &Path) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let src = run.awtm.join("last.ckpt");
    let original = read(&src)?;
    let ck = Checkpoint::load(&src).map_err(|e| e.to_string())?;
    let copy = root.join("copy.ckpt");
    ck.save(&copy).map_err(|e| e.to_string())?;
    check(read(&copy)? == original, "save(load(x)) differs from x")?;
    let (model, state) = ck.load_model::<f32>().map_err(|e| e.to_string())?;
    let rebuilt = root.join("rebuilt.ckpt");
    Checkpoint::capture(&model, state).save(&rebuilt).map_err(|e| e.to_string())?;
    check(read(&rebuilt)? == original, "checkpoint of the reloaded model differs")?;
    Ok(format!("{} bytes identical after file and model round-trips", original.len()))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 perfect reconstruction", perfect_reconstruction()));
    results.push(("2 identity lifting", identity_lifting()));
    results.push(("3 gradient fidelity", gradient_fidelity()));
    let run = learning_run(&root.join("learning"));
    results.push(("4 loss oracle", match &run {
        Ok(r) => loss_oracle_check(&r.awtm),
        Err(e) => Err(e.clone()),
    }));
    results.push(("5 max-level rule", max_level_rule()));
    results.push(("6 metric correctness", metric_correctness()));
    results.push(("7 desk-scale learning", desk_scale_learning(&run)));
    results.push(("8 determinism and resume", determinism_and_resume(&root.join("determinism"))));
    results.push(("9 lr schedule", lr_schedule_check(&run)));
    results.push(("10 checkpoint round-trip", checkpoint_round_trip(&run, root)));

    println!();
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

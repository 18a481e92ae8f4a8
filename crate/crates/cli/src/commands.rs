use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wavetex::checkpoint::{Checkpoint, TrainState};
use wavetex::data::image::load_image;
use wavetex::data::netpbm::{self, Raster};
use wavetex::data::{hist_equalize, synth_textures, Dataset, Manifest, Split, SynthConfig};
use wavetex::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig};
use wavetex::metrics::{write_predictions_csv, write_roc_csv, EvalReport};
use wavetex::train::{fresh_state, predict, train as run_training, EpochLog};
use wavetex::wavelet::{max_levels, WaveletBranch, WaveletBranchOutput};
use wavetex::{Float, Model, ParamStore, Tape, Tensor, Variant};

use crate::config::{Precision, Resolved, RunConfig};
use crate::{CliError, DecomposeArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn parse_levels(v: &str) -> Result<Option<usize>, CliError> {
    match v {
        "auto" => Ok(None),
        n => n
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("levels must be an integer or `auto`, got `{n}`"))),
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        side: a.side,
        seed: a.seed,
    };
    if cfg.classes < 2 {
        return Err(CliError::Config("--classes must be at least 2".into()));
    }
    let m = synth_textures(&a.out, &cfg)?;
    println!("wrote {} images and {}", m.rows.len(), a.out.join("manifest.csv").display());
    Ok(())
}

/// Defaults, then `--config`, then `--set`, then the dedicated flags.
pub fn build_run_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut rc = RunConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rc.apply_text(&text)?;
    }
    for pair in &a.overrides {
        rc.apply_pair(pair)?;
    }
    for (key, value) in [("variant", &a.variant), ("tap", &a.tap), ("levels", &a.levels)] {
        if let Some(v) = value {
            rc.set(key, v)?;
        }
    }
    Ok(rc)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let rc = build_run_config(a)?;
    // Catch configuration mistakes before touching the data.
    rc.resolve(2, a.out.clone())?;
    let manifest = Manifest::load(&manifest_path(&a.data))?;
    let resolved = rc.resolve(manifest.num_classes(), a.out.clone())?;
    if resolved.model.num_classes < manifest.num_classes() {
        return Err(CliError::Config(format!(
            "num_classes {} is smaller than the {} classes in the data",
            resolved.model.num_classes,
            manifest.num_classes()
        )));
    }
    let train_set = Dataset::load(&manifest, Split::Train, &resolved.pipeline)?;
    let val_split = if manifest.has_split(Split::Val) { Split::Val } else { Split::Test };
    let val_set = Dataset::load(&manifest, val_split, &resolved.pipeline)?;

    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let echo_path = a.out.join("config.txt");
    let echo = format!(
        "# resolved configuration; threads={}\n{}",
        crate::thread_count()?,
        resolved.echo.to_text()
    );
    std::fs::write(&echo_path, echo).map_err(|e| io_error(&echo_path, e))?;
    let branch = if resolved.model.has_branch() {
        format!(" at {} with {} level(s)", resolved.model.tap, resolved.model.resolved_levels()?)
    } else {
        String::new()
    };
    println!(
        "training {}{branch}, {} classes, evaluating on `{val_split}`",
        resolved.model.variant, resolved.model.num_classes
    );
    let (state, logs) = match resolved.precision {
        Precision::F32 => train_as::<f32>(&resolved, &train_set, &val_set, a.resume.as_deref())?,
        Precision::F64 => train_as::<f64>(&resolved, &train_set, &val_set, a.resume.as_deref())?,
    };
    if logs.is_empty() {
        println!("checkpoint already at epoch {}; nothing to do", state.epoch);
    }
    if let Some(last) = logs.last() {
        println!(
            "epoch {} done: loss {:.4}, {val_split} accuracy {:.3}%, best {:.3}%",
            last.epoch,
            last.train_loss,
            100.0 * last.val_acc,
            100.0 * state.best_val_acc
        );
    }
    Ok(())
}

fn train_as<T: Float>(
    r: &Resolved,
    train_set: &Dataset,
    val_set: &Dataset,
    resume: Option<&Path>,
) -> Result<(TrainState, Vec<EpochLog>), CliError> {
    let mut model = Model::<T>::new(r.model.clone(), r.train.seed)?;
    let start = match resume {
        Some(path) => Checkpoint::load(path)?.restore_into(&mut model)?,
        None => fresh_state(),
    };
    Ok(run_training(&mut model, train_set, val_set, &r.train, start)?)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let split: Split = a.split.parse().map_err(|e: wavetex::data::DataError| CliError::Config(e.to_string()))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (mut model, _) = ckpt.load_model::<f32>()?;
    let cfg = model.config().clone();
    let manifest = Manifest::load(&manifest_path(&a.data))?;
    if manifest.num_classes() > cfg.num_classes {
        return Err(CliError::Data(format!(
            "data has {} classes but the checkpoint predicts {}",
            manifest.num_classes(),
            cfg.num_classes
        )));
    }
    if a.positive_class >= cfg.num_classes {
        return Err(CliError::Config(format!("positive class {} does not exist", a.positive_class)));
    }
    let pipeline = wavetex::data::PipelineConfig {
        side: cfg.backbone.input_side,
        channels: cfg.backbone.input_channels,
        equalize: a.equalize,
    };
    let data = Dataset::load(&manifest, split, &pipeline)?;
    let preds = predict(&mut model, &data, a.batch_size.max(1))?;
    let (report, roc) = EvalReport::compute(
        &a.split,
        &preds.pred,
        &preds.labels,
        &preds.proba,
        preds.classes,
        a.positive_class,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    let other = |e: wavetex::metrics::MetricsError| CliError::Other(e.to_string());
    report.write_csv(&a.out.join("metrics.csv")).map_err(other)?;
    write_roc_csv(&a.out.join("roc.csv"), roc.as_deref().unwrap_or(&[])).map_err(other)?;
    let sources: Vec<String> = data
        .samples()
        .iter()
        .map(|s| s.path.display().to_string())
        .collect();
    write_predictions_csv(
        &a.out.join("predictions.csv"),
        &sources,
        &preds.labels,
        &preds.pred,
        &preds.proba,
        preds.classes,
    )
    .map_err(other)?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.3}%", 100.0 * x));
    println!(
        "{} samples: top-1 accuracy {}, accuracy (class {} vs rest) {}, recall {}, auc {}",
        report.samples,
        pct(Some(report.top1_accuracy)),
        a.positive_class,
        pct(Some(report.accuracy)),
        pct(report.recall),
        report.auc.map_or("n/a".to_string(), |v| format!("{v:.4}")),
    );
    println!(
        "confusion: tp={} fp={} fn={} tn={}",
        report.cm.tp, report.cm.fp, report.cm.fn_, report.cm.tn
    );
    Ok(())
}

/// Min-max normalized 8-bit PGM of one `[H, W]` plane; a constant plane is
/// mid-gray.
pub fn plane_to_pgm(plane: &[f64], h: usize, w: usize) -> Raster {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        plane
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![128; plane.len()]
    };
    Raster {
        width: w,
        height: h,
        channels: 1,
        data,
    }
}

fn dump<T: Float>(out: &Path, stem: &str, tag: &str, t: &Tensor<T>) -> Result<usize, CliError> {
    let (_, c, h, w) = t.dims4().map_err(|e| CliError::Other(e.to_string()))?;
    for ch in 0..c {
        let plane: Vec<f64> = t.data()[ch * h * w..(ch + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let path = out.join(format!("{stem}_{tag}_c{ch}.pgm"));
        let bytes = netpbm::encode(&plane_to_pgm(&plane, h, w)).map_err(CliError::Other)?;
        std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
    }
    Ok(c)
}

fn dump_branch<T: Float>(
    tape: &Tape<T>,
    branch: &WaveletBranchOutput,
    levels: usize,
    out: &Path,
    stem: &str,
) -> Result<usize, CliError> {
    let mut files = 0;
    for i in 0..levels {
        files += dump(out, stem, &format!("L{}_A", i + 1), tape.value(branch.approxes[i]))?;
        let details = &branch.details[i];
        for (k, d) in details.iter().enumerate() {
            let tag = if details.len() == 1 {
                format!("L{}_D", i + 1)
            } else {
                format!("L{}_D{}", i + 1, k + 1)
            };
            files += dump(out, stem, &tag, tape.value(*d))?;
        }
    }
    Ok(files)
}

pub fn decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let requested = parse_levels(&a.levels)?;
    let stem = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let files = if a.identity {
        let variant: Variant = a.variant.parse()?;
        let img = load_image(&a.image, None)?;
        let &[c, h, w] = img.shape() else {
            return Err(CliError::Data("unexpected image rank".into()));
        };
        let max = max_levels(h.min(w)).map_err(|e| CliError::Data(e.to_string()))?;
        let levels = match requested {
            None if max == 0 => return Err(CliError::Config(format!("a {h}x{w} image allows no levels"))),
            None => max,
            Some(l) if l == 0 || l > max => {
                return Err(CliError::Config(format!(
                    "{l} levels requested but a {h}x{w} image allows 1 to {max}"
                )))
            }
            Some(l) => l,
        };
        let x = img.cast::<f64>().reshape(&[1, c, h, w]).map_err(|e| CliError::Data(e.to_string()))?;
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let branch = match variant {
            Variant::Awtm => WaveletBranch::awtm(&mut store, "wavelet", c, levels, &mut rng),
            Variant::Dawn => WaveletBranch::dawn(&mut store, "wavelet", c, levels, &mut rng),
            Variant::BackboneOnly => return Err(CliError::Config("backbone_only has no wavelet branch".into())),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let mut tape = Tape::new();
        let input = tape.constant(x);
        let out = branch
            .forward(&mut tape, &store, input)
            .map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
        dump_branch(&tape, &out, levels, &a.out, &stem)?
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires one of the sources");
        let (mut model, _) = Checkpoint::load(path)?.load_model::<f32>()?;
        let cfg = model.config().clone();
        let have = cfg.resolved_levels()?;
        if have == 0 {
            return Err(CliError::Config("checkpoint has no wavelet branch".into()));
        }
        let levels = match requested {
            None => have,
            Some(l) if l == 0 || l > have => {
                return Err(CliError::Config(format!("{l} levels requested but the checkpoint has {have}")))
            }
            Some(l) => l,
        };
        let mut img = load_image(&a.image, Some(cfg.backbone.input_side))?;
        if a.equalize {
            img = hist_equalize(&img)?;
        }
        let &[c, h, w] = img.shape() else {
            return Err(CliError::Data("unexpected image rank".into()));
        };
        let x = img.reshape(&[1, c, h, w]).map_err(|e| CliError::Data(e.to_string()))?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &x, wavetex::Mode::Eval)?;
        let branch = out.branch.expect("model has a branch");
        std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
        dump_branch(&tape, &branch, levels, &a.out, &stem)?
    };
    println!("wrote {files} subband images to {}", a.out.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let mut cfg = GradcheckConfig::tiny(a.variant.parse()?, a.tap.parse()?, parse_levels(&a.levels)?);
    cfg.samples_per_tensor = a.samples.max(1);
    cfg.seed = a.seed;
    let report = run_gradcheck(&cfg, a.corrupt_backward)?;
    println!("{:<52} {:>7} {:>12}", "group", "checked", "max rel err");
    for g in &report.groups {
        println!("{:<52} {:>7} {:>12.3e}", g.group, g.checked, g.max_rel_err);
    }
    println!(
        "{} groups, {} entries replaced near non-differentiable points, threshold {:e}",
        report.groups.len(),
        report.skipped,
        report.threshold
    );
    if report.passed() {
        println!("gradcheck passed");
        return Ok(());
    }
    let mut bad: Vec<_> = report
        .groups
        .iter()
        .filter(|g| g.max_rel_err >= report.threshold)
        .collect();
    bad.sort_by(|x, y| y.max_rel_err.total_cmp(&x.max_rel_err));
    let worst: Vec<String> = bad
        .iter()
        .take(5)
        .map(|g| format!("{} ({:.3e}: {})", g.group, g.max_rel_err, g.worst_entry))
        .collect();
    Err(CliError::Gradcheck(format!(
        "{} group(s) above threshold; worst: {}",
        bad.len(),
        worst.join("; ")
    )))
}

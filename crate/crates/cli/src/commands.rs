use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mfam_core::data::{
    assemble_dataset, load_dataset_dir, load_recording_as, parse_file_name, prepare_bags,
    preprocess, synth_generate, write_dataset, write_recording, Bag, PreparedBag,
};
use mfam_core::model::forward_features;
use mfam_core::signal::{decompose_channel, energy, frequency_decompose};
use mfam_core::train::{cross_validate_jobs, subject_folds, train_fold, write_history, FoldFit};
use mfam_core::{BandSet, Checkpoint, Recording, SynthSpec};

use crate::config::RunConfig;
use crate::output::{staged, write_file_atomic};

pub fn synth(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading spec {}", p.display()))?;
            serde_json::from_str::<SynthSpec>(&text)
                .with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    spec.validate()?;
    let bags: Vec<Bag> = synth_generate(&spec, seed)?.into_iter().map(Bag::from).collect();
    staged(out, "synth", |dir| Ok(write_dataset(dir, &bags)?))?;

    let subjects: BTreeSet<&str> = bags.iter().map(|b| b.recording.subject_id.as_str()).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for b in &bags {
        *counts.entry(b.recording.label).or_default() += 1;
    }
    println!("subjects: {}", subjects.len());
    println!("bags: {}", bags.len());
    for (label, n) in counts {
        println!("class {label}: {n}");
    }
    Ok(())
}

/// One activity's bags, ready for training.
struct Prepared {
    activity: String,
    bags: Vec<PreparedBag>,
    num_classes: usize,
    fs: f64,
}

fn load_prepared(cfg: &RunConfig) -> Result<Vec<Prepared>> {
    let all = load_dataset_dir(cfg.data_dir())?;
    let activities = match &cfg.activity {
        Some(a) => vec![a.clone()],
        None => assemble_dataset(all.clone(), None)?.activities(),
    };
    activities
        .into_iter()
        .map(|activity| {
            let ds = assemble_dataset(all.clone(), Some(&activity))?;
            let fs = ds.bags[0].recording.fs;
            if let Some(b) = ds.bags.iter().find(|b| b.recording.fs != fs) {
                bail!(
                    "recordings of {activity:?} mix sampling rates {fs} and {}",
                    b.recording.fs
                );
            }
            cfg.bands.validate(fs)?;
            let num_classes = ds.num_classes().max(2);
            let bags = prepare_bags(&ds, &cfg.bands)?;
            Ok(Prepared {
                activity,
                bags,
                num_classes,
                fs,
            })
        })
        .collect()
}

fn activity_dir(base: &Path, sets: &[Prepared], p: &Prepared) -> std::path::PathBuf {
    if sets.len() == 1 {
        base.to_path_buf()
    } else {
        base.join(&p.activity)
    }
}

fn save_fit(dir: &Path, fit: &FoldFit, cfg: &RunConfig, fs: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let ckpt = Checkpoint {
        config: fit.config.clone(),
        bands: cfg.bands.clone(),
        fs,
        params: fit.params.clone(),
    };
    ckpt.save(&dir.join("checkpoint.json"))?;
    write_history(&dir.join("history.csv"), &fit.history, fit.config.aggregator)?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

/// Fixed subject split: the first fold group whose removal keeps every class
/// in training becomes the validation set.
fn fixed_split(p: &Prepared, cfg: &RunConfig) -> Result<(Vec<PreparedBag>, Vec<PreparedBag>)> {
    let subjects: Vec<String> = p.bags.iter().map(|b| b.subject_id.clone()).collect();
    let plan = subject_folds(&subjects, cfg.folds, cfg.train.seed)?;
    let split = |g: usize| -> (Vec<PreparedBag>, Vec<PreparedBag>) {
        p.bags
            .iter()
            .cloned()
            .partition(|b| plan.assignments[&b.subject_id] != g)
    };
    for g in 0..plan.k {
        let (train, val) = split(g);
        let classes: BTreeSet<usize> = train.iter().map(|b| b.label).collect();
        if classes.len() == p.num_classes {
            return Ok((train, val));
        }
    }
    bail!(
        "{:?}: no validation group leaves all {} classes in training",
        p.activity,
        p.num_classes
    )
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let sets = load_prepared(cfg)?;
    let out = cfg.out_dir();
    staged(out, "train", |dir| {
        write_config(dir, cfg)?;
        for p in &sets {
            let (train, val) = fixed_split(p, cfg)?;
            let domains: BTreeSet<&str> = train.iter().map(|b| b.subject_id.as_str()).collect();
            let model = cfg.model.to_config(
                p.bags[0].features.rows(),
                p.num_classes,
                domains.len(),
                cfg.train.aggregator,
            );
            let fit = train_fold(&train, &val, &model, &cfg.train)
                .with_context(|| format!("training {:?}", p.activity))?;
            save_fit(&activity_dir(dir, &sets, p), &fit, cfg, p.fs)?;
            let best = &fit.history[fit.best_epoch - 1];
            println!(
                "{}: best epoch {} of {}, validation macro-F1 {:.4}",
                p.activity,
                fit.best_epoch,
                fit.history.len(),
                best.val_macro_f1
            );
        }
        Ok(())
    })
}

pub fn cv(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let sets = load_prepared(cfg)?;
    let out = cfg.out_dir();
    staged(out, "cv", |dir| {
        write_config(dir, cfg)?;
        for p in &sets {
            let subjects: BTreeSet<&str> = p.bags.iter().map(|b| b.subject_id.as_str()).collect();
            let model = cfg.model.to_config(
                p.bags[0].features.rows(),
                p.num_classes,
                subjects.len(),
                cfg.train.aggregator,
            );
            let report = cross_validate_jobs(&p.bags, &model, &cfg.train, cfg.folds, jobs)
                .with_context(|| format!("cross-validating {:?}", p.activity))?;
            let adir = activity_dir(dir, &sets, p);
            for f in &report.folds {
                save_fit(&adir.join(format!("fold{}", f.split.fold)), &f.fit, cfg, p.fs)?;
            }
            let mut json = report.to_json_value();
            json["activity"] = p.activity.clone().into();
            fs::write(adir.join("metrics.json"), serde_json::to_string_pretty(&json)?)?;
            println!(
                "{} ({}): accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}",
                p.activity,
                report.aggregator,
                report.mean.accuracy,
                report.std.accuracy,
                report.mean.macro_f1,
                report.std.macro_f1
            );
        }
        Ok(())
    })
}

pub fn eval(
    checkpoint: &Path,
    data: &Path,
    bands: Option<&str>,
    activity: Option<&str>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let bands = match bands {
        Some(s) => BandSet::parse(s)?,
        None => ckpt.bands.clone(),
    };
    let ds = assemble_dataset(load_dataset_dir(data)?, activity)?;
    for b in &ds.bags {
        let channels = b.recording.num_channels() * bands.len();
        if channels != ckpt.config.in_channels {
            bail!(
                "expected {} channels, got {channels}",
                ckpt.config.in_channels
            );
        }
        if b.recording.fs != ckpt.fs {
            bail!(
                "expected sampling rate {} Hz, got {} Hz",
                ckpt.fs,
                b.recording.fs
            );
        }
    }
    bands.validate(ckpt.fs)?;
    let prepared = prepare_bags(&ds, &bands)?;
    let metrics = mfam_core::train::evaluate(&ckpt.params, &prepared, &ckpt.config)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

/// Loads a recording, falling back to placeholder metadata when the file
/// name does not follow the naming scheme.
fn load_any(path: &Path) -> Result<Recording> {
    let (subject, activity, label) = parse_file_name(path)
        .unwrap_or_else(|_| ("unknown".into(), "unknown".into(), 0));
    Ok(load_recording_as(path, &subject, &activity, label)?)
}

fn band_file_name(low: f64, high: f64) -> String {
    format!("band_{low}-{high}Hz.csv")
}

pub fn decompose(input: &Path, bands: &str, out: &Path) -> Result<()> {
    let bands = BandSet::parse(bands)?;
    let rec = load_any(input)?;
    bands.validate(rec.fs)?;

    let per_channel: Vec<Vec<Vec<f64>>> = rec
        .channels
        .iter()
        .map(|c| decompose_channel(c, &bands, rec.fs))
        .collect::<mfam_core::Result<_>>()?;
    let totals: Vec<f64> = rec.channels.iter().map(|c| energy(c)).collect();
    let fraction = |e: f64, total: f64| if total > 0.0 { e / total } else { 0.0 };

    let mut summary = String::from("band,channel,energy,fraction\n");
    let mut covered = vec![0.0; rec.num_channels()];
    staged(out, "decompose", |dir| {
        for (bi, band) in bands.bands().iter().enumerate() {
            let channels: Vec<Vec<f64>> = per_channel.iter().map(|c| c[bi].clone()).collect();
            let filtered = Recording::with_names(
                rec.subject_id.clone(),
                rec.activity.clone(),
                rec.label,
                rec.fs,
                rec.channel_names.clone(),
                channels,
            )?;
            write_recording(&dir.join(band_file_name(band.low, band.high)), &filtered)?;
            for (ci, name) in rec.channel_names.iter().enumerate() {
                let e = energy(&filtered.channels[ci]);
                let f = fraction(e, totals[ci]);
                covered[ci] += f;
                writeln!(summary, "{}-{},{name},{e},{f}", band.low, band.high)?;
            }
        }
        for (ci, name) in rec.channel_names.iter().enumerate() {
            let e = covered[ci] * totals[ci];
            writeln!(summary, "covered,{name},{e},{}", covered[ci])?;
        }
        fs::write(dir.join("energy_summary.csv"), &summary)?;
        Ok(())
    })?;
    for (ci, name) in rec.channel_names.iter().enumerate() {
        println!("{name}: covered energy fraction {:.6}", covered[ci]);
    }
    Ok(())
}

pub fn explain(checkpoint: &Path, recording: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let rec = load_any(recording)?;
    let channels = rec.num_channels() * ckpt.bands.len();
    if channels != ckpt.config.in_channels {
        bail!("expected {} channels, got {channels}", ckpt.config.in_channels);
    }
    if rec.fs != ckpt.fs {
        bail!("expected sampling rate {} Hz, got {} Hz", ckpt.fs, rec.fs);
    }
    let clean = preprocess(&rec)?;
    let x = frequency_decompose(&clean.to_tensor()?, &ckpt.bands, clean.fs)?;
    let (res, _) = forward_features(&x, &ckpt.params, &ckpt.config, None)?;

    let n = res.attention.len();
    let keep = match ckpt.config.aggregator {
        mfam_core::Aggregator::AttentionMil => {
            ((ckpt.config.topk_ratio * n as f64).ceil() as usize).clamp(1, n)
        }
        mfam_core::Aggregator::Gap => n,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| res.attention[b].total_cmp(&res.attention[a]).then(a.cmp(&b)));
    let mut retained = vec![false; n];
    for &i in &order[..keep] {
        retained[i] = true;
    }

    let probs: Vec<String> = res.probs.data().iter().map(|p| p.to_string()).collect();
    let mut csv = format!(
        "# predicted_class: {}\n# probabilities: {}\n",
        res.predicted_class(),
        probs.join(",")
    );
    csv.push_str("instance_index,start_sample,end_sample,attention_weight,retained\n");
    for (i, (&(s, e), &w)) in res.instance_spans.iter().zip(&res.attention).enumerate() {
        writeln!(csv, "{i},{s},{e},{w},{}", retained[i])?;
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_file_atomic(out, "explain", csv.as_bytes())
}

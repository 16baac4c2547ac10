//! Dataset assembly and the on-disk dataset layout.
//!
//! A dataset directory holds `manifest.csv` (`subject_id,activity,label,path`,
//! paths relative to the directory), the recording CSVs, and optionally
//! `bursts.csv` (`subject,activity,index,start_sample,end_sample`). A burst
//! row's `index` is the ordinal of the recording among manifest rows with
//! the same subject and activity.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::preprocess;
use super::recording::{load_recording_as, write_recording, Recording};
use super::synth::SynthRecording;
use crate::error::{MfamError, Result};
use crate::signal::{frequency_decompose, BandSet};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const BURSTS_FILE: &str = "bursts.csv";

/// One labelled recording, optionally with annotated burst spans.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub recording: Recording,
    pub bursts: Vec<(usize, usize)>,
    /// Ordinal among bags of the same subject and activity.
    pub index: usize,
}

impl From<SynthRecording> for Bag {
    fn from(s: SynthRecording) -> Self {
        Self {
            recording: s.recording,
            bursts: s.bursts.spans,
            index: s.index,
        }
    }
}

/// Bags of one activity subset, indexed by subject.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    subjects: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<String> {
        self.subjects.keys().cloned().collect()
    }

    /// Bag indices belonging to `subject`.
    pub fn subject_bags(&self, subject: &str) -> &[usize] {
        self.subjects.get(subject).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.bags.iter().map(|b| b.recording.label).max().map_or(0, |m| m + 1)
    }

    pub fn activities(&self) -> Vec<String> {
        let mut a: Vec<String> = self.bags.iter().map(|b| b.recording.activity.clone()).collect();
        a.sort();
        a.dedup();
        a
    }
}

/// Keeps bags of `activity` (all bags when `None`), sorted by subject,
/// activity and index.
pub fn assemble_dataset(bags: Vec<Bag>, activity: Option<&str>) -> Result<Dataset> {
    let mut bags: Vec<Bag> = bags
        .into_iter()
        .filter(|b| activity.is_none_or(|a| b.recording.activity == a))
        .collect();
    if bags.is_empty() {
        return Err(MfamError::config(match activity {
            Some(a) => format!("no recordings for activity {a:?}"),
            None => "dataset is empty".into(),
        }));
    }
    bags.sort_by(|a, b| {
        (&a.recording.subject_id, &a.recording.activity, a.index).cmp(&(
            &b.recording.subject_id,
            &b.recording.activity,
            b.index,
        ))
    });
    let mut subjects: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, b) in bags.iter().enumerate() {
        subjects
            .entry(b.recording.subject_id.clone())
            .or_default()
            .push(i);
    }
    Ok(Dataset { bags, subjects })
}

/// A bag after preprocessing and band decomposition, ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBag {
    pub subject_id: String,
    pub activity: String,
    pub label: usize,
    pub index: usize,
    /// `[C * |B|, T]`.
    pub features: Tensor,
    pub bursts: Vec<(usize, usize)>,
}

/// Preprocesses and band-decomposes one recording.
pub fn prepare_recording(rec: &Recording, bands: &BandSet) -> Result<Tensor> {
    let clean = preprocess(rec)?;
    frequency_decompose(&clean.to_tensor()?, bands, clean.fs)
}

pub fn prepare_bags(dataset: &Dataset, bands: &BandSet) -> Result<Vec<PreparedBag>> {
    dataset
        .bags
        .iter()
        .map(|b| {
            let features = prepare_recording(&b.recording, bands)?;
            let t = features.cols();
            let bursts = b
                .bursts
                .iter()
                .filter(|&&(s, _)| s < t)
                .map(|&(s, e)| (s, e.min(t)))
                .collect();
            Ok(PreparedBag {
                subject_id: b.recording.subject_id.clone(),
                activity: b.recording.activity.clone(),
                label: b.recording.label,
                index: b.index,
                features,
                bursts,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    subject_id: String,
    activity: String,
    label: usize,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BurstRow {
    subject: String,
    activity: String,
    index: usize,
    start_sample: usize,
    end_sample: usize,
}

/// File name used for a bag inside a dataset directory.
pub fn recording_file_name(bag: &Bag) -> String {
    let r = &bag.recording;
    format!("{}_{}_{}_{:03}.csv", r.subject_id, r.activity, r.label, bag.index)
}

/// Writes recordings, `manifest.csv` and `bursts.csv` under `dir`.
pub fn write_dataset(dir: &Path, bags: &[Bag]) -> Result<()> {
    let rec_dir = dir.join("recordings");
    fs::create_dir_all(&rec_dir).map_err(|e| MfamError::io(&rec_dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = csv::Writer::from_path(&manifest_path)?;
    let bursts_path = dir.join(BURSTS_FILE);
    let mut bursts = csv::Writer::from_path(&bursts_path)?;
    // keeps the header even when no bursts exist
    bursts.write_record(["subject", "activity", "index", "start_sample", "end_sample"])?;
    for bag in bags {
        let name = recording_file_name(bag);
        write_recording(&rec_dir.join(&name), &bag.recording)?;
        let r = &bag.recording;
        manifest.serialize(ManifestRow {
            subject_id: r.subject_id.clone(),
            activity: r.activity.clone(),
            label: r.label,
            path: format!("recordings/{name}"),
        })?;
        for &(s, e) in &bag.bursts {
            bursts.write_record([
                r.subject_id.clone(),
                r.activity.clone(),
                bag.index.to_string(),
                s.to_string(),
                e.to_string(),
            ])?;
        }
    }
    manifest.flush().map_err(|e| MfamError::io(&manifest_path, e))?;
    bursts.flush().map_err(|e| MfamError::io(&bursts_path, e))?;
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`] (or by hand).
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<Bag>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(MfamError::config(format!(
            "{} not found",
            manifest_path.display()
        )));
    }
    let mut reader = csv::Reader::from_path(&manifest_path)?;
    let mut ordinals: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut bags = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let path: PathBuf = dir.join(&row.path);
        let recording = load_recording_as(&path, &row.subject_id, &row.activity, row.label)?;
        let ord = ordinals
            .entry((row.subject_id.clone(), row.activity.clone()))
            .or_insert(0);
        bags.push(Bag {
            recording,
            bursts: Vec::new(),
            index: *ord,
        });
        *ord += 1;
    }
    let bursts_path = dir.join(BURSTS_FILE);
    if bursts_path.exists() {
        let mut reader = csv::Reader::from_path(&bursts_path)?;
        for row in reader.deserialize::<BurstRow>() {
            let row = row?;
            let bag = bags
                .iter_mut()
                .find(|b| {
                    b.recording.subject_id == row.subject
                        && b.recording.activity == row.activity
                        && b.index == row.index
                })
                .ok_or_else(|| {
                    MfamError::format(
                        &bursts_path,
                        format!(
                            "burst for unknown recording {}/{}/{}",
                            row.subject, row.activity, row.index
                        ),
                    )
                })?;
            bag.bursts.push((row.start_sample, row.end_sample));
        }
    }
    Ok(bags)
}

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{EpochTensor, EPOCH_SECONDS};
use crate::recording::{epoch_labels, AnnotationTrack, SleepLabel};

/// Preprocessed epochs of one subject together with every expert's track.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    /// `[channel][epoch]`, as produced by `preprocess_recording`.
    pub channels: Vec<Vec<EpochTensor>>,
    pub tracks: Vec<AnnotationTrack>,
}

impl SubjectData {
    pub fn n_epochs(&self) -> usize {
        self.channels.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Per-expert labels, in track order.
    pub fn labels(&self) -> Vec<Vec<SleepLabel>> {
        self.tracks
            .iter()
            .map(|t| {
                epoch_labels(t, self.n_epochs(), EPOCH_SECONDS)
                    .into_iter()
                    .map(|l| l.label)
                    .collect()
            })
            .collect()
    }
}

/// One labelled training example. The waveform is `dataset.epochs[epoch]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub epoch: usize,
    pub label: SleepLabel,
    pub subject: usize,
    pub expert: usize,
}

impl Sample {
    pub fn class(&self) -> usize {
        usize::from(self.label == SleepLabel::Qs)
    }
}

/// Labelled epochs. Each waveform is stored once; every expert that gives it
/// a QS or AS label adds a sample pointing at it, so disagreements appear
/// as two samples with opposite labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub epochs: Vec<EpochTensor>,
    /// Subject of each stored epoch.
    pub epoch_subject: Vec<usize>,
    pub subjects: Vec<String>,
    pub experts: Vec<String>,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    /// `(AS, QS)` sample counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let qs = self.samples.iter().filter(|s| s.label == SleepLabel::Qs).count();
        (self.samples.len() - qs, qs)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// `(subject id, epoch index)` of a sample; copies of the same minute
    /// across channels and experts share a key.
    pub fn group_key(&self, sample: &Sample) -> (usize, usize) {
        (sample.subject, self.epochs[sample.epoch].epoch_index)
    }
}

/// Which channels of a minute enter the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSampling {
    /// Every channel of every minute.
    #[default]
    All,
    /// One channel per minute, cycling through the channels with the epoch
    /// index. Cuts training cost by the channel count.
    RoundRobin,
}

pub fn build_dataset(subjects: &[SubjectData]) -> LabeledDataset {
    build_dataset_with(subjects, ChannelSampling::All)
}

pub fn build_dataset_with(subjects: &[SubjectData], sampling: ChannelSampling) -> LabeledDataset {
    let mut ds = LabeledDataset::default();
    let mut expert_ids: BTreeMap<String, usize> = BTreeMap::new();
    for s in subjects {
        for t in &s.tracks {
            let next = expert_ids.len();
            expert_ids.entry(t.expert_id.clone()).or_insert(next);
        }
    }
    ds.experts = vec![String::new(); expert_ids.len()];
    for (name, &i) in &expert_ids {
        ds.experts[i] = name.clone();
    }

    for (si, s) in subjects.iter().enumerate() {
        ds.subjects.push(s.subject_id.clone());
        let labels = s.labels();
        let n_ch = s.channels.len();
        for (c, channel) in s.channels.iter().enumerate() {
            for (k, e) in channel.iter().enumerate().take(s.n_epochs()) {
                if sampling == ChannelSampling::RoundRobin && k % n_ch != c {
                    continue;
                }
                if !e.valid {
                    continue;
                }
                let mut stored = None;
                for (t, track_labels) in s.tracks.iter().zip(&labels) {
                    let label = track_labels[k];
                    if label == SleepLabel::Excluded {
                        continue;
                    }
                    let idx = *stored.get_or_insert_with(|| {
                        ds.epochs.push(e.clone());
                        ds.epoch_subject.push(si);
                        ds.epochs.len() - 1
                    });
                    ds.samples.push(Sample {
                        epoch: idx,
                        label,
                        subject: si,
                        expert: expert_ids[&t.expert_id],
                    });
                }
            }
        }
    }
    ds
}

/// Split sample indices into training and validation sets. Whole
/// `(subject, epoch)` groups go to one side; groups are stratified by
/// whether any of their samples is QS. Deterministic for a given seed.
pub fn inner_split(ds: &LabeledDataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        groups.entry(ds.group_key(s)).or_default().push(i);
    }
    let (mut qs, mut as_): (Vec<_>, Vec<_>) = groups
        .keys()
        .copied()
        .partition(|k| groups[k].iter().any(|&i| ds.samples[i].label == SleepLabel::Qs));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_groups = BTreeSet::new();
    for stratum in [&mut as_, &mut qs] {
        stratum.shuffle(&mut rng);
        let n = (stratum.len() as f64 * fraction).round() as usize;
        // Keep at least one group on each side when the stratum allows it.
        let n = if stratum.len() >= 2 { n.clamp(1, stratum.len() - 1) } else { 0 };
        val_groups.extend(stratum.iter().take(n).copied());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (key, members) in &groups {
        if val_groups.contains(key) {
            val.extend(members);
        } else {
            train.extend(members);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

//! Balanced co-training batches over human and robot episodes.
//!
//! Every batch holds exactly `floor(ρ·B)` human samples and the rest robot
//! samples, shuffled. Human samples walk successive seeded permutations of
//! the human index, so each epoch sees every human chunk once; robot
//! samples are drawn with replacement. A batch depends only on the seed,
//! the plan, the index and the batch counter.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{route_name, write_atomic, DatasetError, DatasetManifest};
use crate::retarget::Embodiment;
use crate::rng;

pub const SCHEDULE_FORMAT: &str = "training-schedule";
pub const SCHEDULE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("no {0} samples to draw from")]
    EmptyEmbodiment(&'static str),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub batch_size: usize,
    /// Fraction of each batch taken from human data, in `(0, 1)`.
    pub human_fraction: f64,
    pub seed: u64,
    /// Batches per epoch; informational for consumers.
    pub epoch_batches: Option<usize>,
    pub human_with_replacement: bool,
    pub robot_with_replacement: bool,
}

impl MixPlan {
    pub fn new(batch_size: usize, human_fraction: f64, seed: u64) -> Result<Self, MixError> {
        let plan = Self {
            batch_size,
            human_fraction,
            seed,
            epoch_batches: None,
            human_with_replacement: false,
            robot_with_replacement: true,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `floor(ρ·B)`, tolerant to ρ·B landing a hair below an integer.
    pub fn human_count(&self) -> usize {
        (self.human_fraction * self.batch_size as f64 + 1e-9).floor() as usize
    }

    pub fn robot_count(&self) -> usize {
        self.batch_size - self.human_count().min(self.batch_size)
    }

    pub fn validate(&self) -> Result<(), MixError> {
        if !(self.human_fraction > 0.0 && self.human_fraction < 1.0) {
            return Err(MixError::InvalidPlan(format!(
                "human fraction {} must lie in (0, 1)",
                self.human_fraction
            )));
        }
        let h = self.human_count();
        if h < 1 || h >= self.batch_size {
            return Err(MixError::InvalidPlan(format!(
                "batch size {} with human fraction {} leaves one source empty",
                self.batch_size, self.human_fraction
            )));
        }
        Ok(())
    }
}

/// `clamp(Nh / (Nh + Nr), 0.5, 0.9)` over sample counts.
pub fn default_human_fraction(human_samples: usize, robot_samples: usize) -> f64 {
    let total = human_samples + robot_samples;
    if total == 0 {
        return 0.5;
    }
    (human_samples as f64 / total as f64).clamp(0.5, 0.9)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePointer {
    pub episode_id: String,
    pub t: usize,
    pub embodiment: Embodiment,
    pub route: String,
}

/// `(episode position in the manifest, chunk index)`.
pub type Slot = (u32, u32);

/// All chunk positions, grouped by embodiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleIndex {
    episodes: Vec<(String, Embodiment)>,
    human: Vec<Slot>,
    robot: Vec<Slot>,
}

impl SampleIndex {
    pub fn human_len(&self) -> usize {
        self.human.len()
    }

    pub fn robot_len(&self) -> usize {
        self.robot.len()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            (Embodiment::HumanHand.as_str().to_string(), self.human.len()),
            (Embodiment::Robot.as_str().to_string(), self.robot.len()),
        ])
    }

    pub fn episodes(&self) -> &[(String, Embodiment)] {
        &self.episodes
    }

    pub fn pointer(&self, slot: Slot) -> SamplePointer {
        let (id, e) = &self.episodes[slot.0 as usize];
        SamplePointer {
            episode_id: id.clone(),
            t: slot.1 as usize,
            embodiment: *e,
            route: route_name(*e).into(),
        }
    }
}

/// Enumerates every `(episode, t)` chunk position. Both embodiments must
/// have at least one sample.
pub fn build_index(manifest: &DatasetManifest) -> Result<SampleIndex, MixError> {
    let mut idx = SampleIndex {
        episodes: Vec::with_capacity(manifest.episodes.len()),
        human: Vec::new(),
        robot: Vec::new(),
    };
    for (i, e) in manifest.episodes.iter().enumerate() {
        idx.episodes.push((e.episode_id.clone(), e.embodiment));
        let bucket = match e.embodiment {
            Embodiment::HumanHand => &mut idx.human,
            Embodiment::Robot => &mut idx.robot,
        };
        bucket.extend((0..e.chunk_count).map(|t| (i as u32, t as u32)));
    }
    if idx.human.is_empty() {
        return Err(MixError::EmptyEmbodiment(Embodiment::HumanHand.as_str()));
    }
    if idx.robot.is_empty() {
        return Err(MixError::EmptyEmbodiment(Embodiment::Robot.as_str()));
    }
    Ok(idx)
}

/// Draws for one source. Without replacement, draw number `p` reads
/// position `p mod n` of permutation `p / n`; permutations are cached.
struct SourceStream {
    name: &'static str,
    seed: u64,
    n: usize,
    with_replacement: bool,
    cached: Option<(u64, Vec<u32>)>,
}

impl SourceStream {
    fn new(name: &'static str, seed: u64, n: usize, with_replacement: bool) -> Self {
        Self {
            name,
            seed,
            n,
            with_replacement,
            cached: None,
        }
    }

    fn draws(&mut self, batch: u64, k: usize) -> Vec<usize> {
        if self.with_replacement {
            let mut r = rng::stream(self.seed, self.name, batch);
            return (0..k).map(|_| r.random_range(0..self.n)).collect();
        }
        (0..k as u64)
            .map(|j| {
                let p = batch * k as u64 + j;
                let epoch = p / self.n as u64;
                let pos = (p % self.n as u64) as usize;
                if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<u32> = (0..self.n as u32).collect();
                    perm.shuffle(&mut rng::stream(self.seed, &format!("{}-perm", self.name), epoch));
                    self.cached = Some((epoch, perm));
                }
                self.cached.as_ref().unwrap().1[pos] as usize
            })
            .collect()
    }
}

/// Sequential batch generator; `next` yields batch 0, 1, 2, ...
pub struct BatchStream<'a> {
    plan: &'a MixPlan,
    index: &'a SampleIndex,
    human: SourceStream,
    robot: SourceStream,
    counter: u64,
}

impl<'a> BatchStream<'a> {
    pub fn new(plan: &'a MixPlan, index: &'a SampleIndex) -> Result<Self, MixError> {
        plan.validate()?;
        Ok(Self {
            plan,
            index,
            human: SourceStream::new("human", plan.seed, index.human.len(), plan.human_with_replacement),
            robot: SourceStream::new("robot", plan.seed, index.robot.len(), plan.robot_with_replacement),
            counter: 0,
        })
    }

    /// Starts at an arbitrary batch counter.
    pub fn starting_at(mut self, counter: u64) -> Self {
        self.counter = counter;
        self
    }

    pub fn next_slots(&mut self) -> Vec<Slot> {
        let b = self.counter;
        self.counter += 1;
        let mut slots: Vec<Slot> = self
            .human
            .draws(b, self.plan.human_count())
            .into_iter()
            .map(|i| self.index.human[i])
            .chain(self.robot.draws(b, self.plan.robot_count()).into_iter().map(|i| self.index.robot[i]))
            .collect();
        slots.shuffle(&mut rng::stream(self.plan.seed, "shuffle", b));
        slots
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Vec<SamplePointer>;

    fn next(&mut self) -> Option<Self::Item> {
        let slots = self.next_slots();
        Some(slots.into_iter().map(|s| self.index.pointer(s)).collect())
    }
}

/// Batch number `batch` of the schedule.
pub fn next_batch(plan: &MixPlan, index: &SampleIndex, batch: u64) -> Result<Vec<SamplePointer>, MixError> {
    let mut s = BatchStream::new(plan, index)?.starting_at(batch);
    Ok(s.next().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEpisode {
    pub episode_id: String,
    pub embodiment: Embodiment,
    pub route: String,
}

/// Fully materialized schedule. Each sample is `[episode, t]`, where
/// `episode` indexes `episodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub format: String,
    pub version: u32,
    pub dataset_manifest: String,
    pub normalization: String,
    pub plan: MixPlan,
    pub routes: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub episodes: Vec<ScheduleEpisode>,
    pub batches: Vec<Vec<[u32; 2]>>,
}

impl TrainingSchedule {
    pub fn pointers(&self, batch: usize) -> Vec<SamplePointer> {
        self.batches[batch]
            .iter()
            .map(|&[e, t]| {
                let ep = &self.episodes[e as usize];
                SamplePointer {
                    episode_id: ep.episode_id.clone(),
                    t: t as usize,
                    embodiment: ep.embodiment,
                    route: ep.route.clone(),
                }
            })
            .collect()
    }
}

pub fn build_schedule(
    plan: &MixPlan,
    index: &SampleIndex,
    n_batches: usize,
    dataset_manifest: &str,
    normalization: &str,
) -> Result<TrainingSchedule, MixError> {
    let mut stream = BatchStream::new(plan, index)?;
    let batches = (0..n_batches)
        .map(|_| stream.next_slots().into_iter().map(|(e, t)| [e, t]).collect())
        .collect();
    Ok(TrainingSchedule {
        format: SCHEDULE_FORMAT.into(),
        version: SCHEDULE_VERSION,
        dataset_manifest: dataset_manifest.into(),
        normalization: normalization.into(),
        plan: plan.clone(),
        routes: [Embodiment::HumanHand, Embodiment::Robot]
            .iter()
            .map(|e| (e.as_str().to_string(), route_name(*e).to_string()))
            .collect(),
        counts: index.counts(),
        episodes: index
            .episodes
            .iter()
            .map(|(id, e)| ScheduleEpisode {
                episode_id: id.clone(),
                embodiment: *e,
                route: route_name(*e).into(),
            })
            .collect(),
        batches,
    })
}

pub fn schedule_to_string(s: &TrainingSchedule) -> String {
    let mut out = serde_json::to_string(s).expect("serializable");
    out.push('\n');
    out
}

pub fn parse_schedule(text: &str) -> Result<TrainingSchedule, MixError> {
    let s: TrainingSchedule =
        serde_json::from_str(text).map_err(|e| MixError::InvalidPlan(format!("schedule: {e}")))?;
    if s.format != SCHEDULE_FORMAT || s.version != SCHEDULE_VERSION {
        return Err(MixError::InvalidPlan(format!("unsupported schedule {} v{}", s.format, s.version)));
    }
    Ok(s)
}

/// Materializes `n_batches` batches and writes them atomically to `path`.
pub fn emit_training_manifest(
    plan: &MixPlan,
    index: &SampleIndex,
    n_batches: usize,
    dataset_manifest: &str,
    normalization: &str,
    path: &Path,
) -> Result<TrainingSchedule, MixError> {
    let s = build_schedule(plan, index, n_batches, dataset_manifest, normalization)?;
    write_atomic(path, schedule_to_string(&s).as_bytes())?;
    Ok(s)
}

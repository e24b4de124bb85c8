//! Dataset construction and persistence, experiment orchestration, FLOPs
//! tables and LOS-fraction calibration.

use crate::channel::{optimal_pair, GainMatrix, Link, LinkConfig};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::features::{
    build_vdf, ms_location_vector, simulate_lidar, situational_vector, situational_width, voxelize_pcf, GridSpec,
    LidarConfig, PcfSpec, VDF_ROW,
};
use crate::format::{self, expect_magic, RawTensor};
use crate::metrics::{self, split_report, EvalReport, ScenePredictor, SweepPoint};
use crate::nn::{self, checkpoint, Hyperparams, Network, Sample, TrainingHistory, VdbanSpec};
use crate::scene::{generate_scene, label_beam_coherence, trajectory, PerturbTarget, Scene, SceneConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const DATASET_MAGIC: &[u8; 4] = b"BGDS";
pub const DATASET_VERSION: u16 = 1;
/// Generation attempts per sample before the build aborts.
pub const RETRY_BUDGET: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Vdf,
    Pcf,
    SaVector,
}

impl FeatureKind {
    fn tag(self) -> u8 {
        match self {
            FeatureKind::Vdf => 0,
            FeatureKind::Pcf => 1,
            FeatureKind::SaVector => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(FeatureKind::Vdf),
            1 => Ok(FeatureKind::Pcf),
            2 => Ok(FeatureKind::SaVector),
            _ => Err(Error::Format { what: "BGDS dataset", detail: format!("unknown feature kind {t}") }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Vdf => "vdf",
            FeatureKind::Pcf => "pcf",
            FeatureKind::SaVector => "sa-vector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NetworkChoice {
    #[default]
    Vdban,
    Saba,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSize {
    Full,
    #[default]
    Mini,
}

/// What the classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Beam,
    Coherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceConfig {
    /// Frames per trajectory; 0 disables coherence labels.
    pub frames: usize,
    /// Displacement of every vehicle per frame, meters.
    pub step: f64,
    pub clip: usize,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self { frames: 0, step: 0.5, clip: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub samples: usize,
    pub feature: FeatureKind,
    pub network: NetworkChoice,
    pub network_size: NetworkSize,
    pub target: Target,
    pub b_max: usize,
    pub sigma_list: Vec<f64>,
    pub perturb: PerturbTarget,
    /// Vehicles encoded in the situational-awareness vector.
    pub sa_max_vehicles: usize,
    /// LOS share the blocker density is calibrated to.
    pub los_target: f64,
    pub scene: SceneConfig,
    pub link: LinkConfig,
    pub hyper: Hyperparams,
    pub coherence: CoherenceConfig,
    pub lidar: LidarConfig,
    pub pcf: Option<PcfSpec>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 8 x 4 x 4 grid, 8 x 2 = 16 beam pairs, narrow VDF network.
    pub fn desk() -> Self {
        let scene = SceneConfig {
            // Same 28 m x 36 m street as the full preset, one X cell per lane.
            grid: GridSpec { dims: [8, 4, 4], pitch: [3.5, 9.0, 1.0], origin: crate::geometry::Vec3::ZERO },
            ..Self::street()
        };
        Self {
            name: "desk".into(),
            seed: 1,
            samples: 1000,
            feature: FeatureKind::Vdf,
            network: NetworkChoice::Vdban,
            network_size: NetworkSize::Mini,
            target: Target::Beam,
            b_max: 5,
            sigma_list: vec![0.0, 0.2, 0.4, 0.6],
            perturb: PerturbTarget::AllVehicles,
            sa_max_vehicles: 16,
            los_target: 0.58,
            scene,
            link: LinkConfig { n_tx: 8, n_rx: 2, ..LinkConfig::default() },
            hyper: Hyperparams { learning_rate: 2e-3, batch_size: 16, ..Hyperparams::default() },
            coherence: CoherenceConfig::default(),
            lidar: LidarConfig::default(),
            pcf: None,
            output_dir: None,
        }
    }

    /// 14 x 6 x 6 grid, 73 x 5 = 365 beam pairs, full-width VDF network.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            network_size: NetworkSize::Full,
            scene: Self::street(),
            link: LinkConfig::default(),
            hyper: Hyperparams::default(),
            ..Self::desk()
        }
    }

    /// Shared traffic model of both presets. The blocker density was
    /// calibrated to the LOS target with `calibrate_blocker_density`.
    fn street() -> SceneConfig {
        SceneConfig {
            vehicle_count_range: [14, 22],
            blocker_density: 0.78,
            rsu_placement: crate::scene::RsuPlacement::End,
            rsu_height: 5.0,
            ..SceneConfig::default()
        }
    }

    /// Missing keys, including keys of partially given tables, take their
    /// desk-preset values.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::desk()).expect("config serializes");
        merge_tables(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn classes(&self) -> usize {
        match self.target {
            Target::Beam => self.link.pair_count(),
            Target::Coherence => self.coherence.clip + 1,
        }
    }

    pub fn pcf_spec(&self) -> PcfSpec {
        self.pcf.unwrap_or_else(|| PcfSpec::centered_on(&self.scene.grid))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.link.n_tx == 0 || self.link.n_rx == 0 {
            return Err(Error::Config("codebooks need at least one beam".into()));
        }
        if self.b_max == 0 || self.b_max > self.link.pair_count() {
            return Err(Error::Config(format!("b_max {} outside 1..={}", self.b_max, self.link.pair_count())));
        }
        if self.sigma_list.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::Config("sigma_list entries must be >= 0".into()));
        }
        if self.target == Target::Coherence && self.coherence.frames < 2 {
            return Err(Error::Config("coherence target needs coherence.frames >= 2".into()));
        }
        Ok(())
    }

    /// Checks that the configured network can consume the configured feature.
    pub fn validate_training(&self) -> Result<()> {
        match (self.network, self.feature) {
            (NetworkChoice::Vdban, FeatureKind::Vdf) | (NetworkChoice::Saba, FeatureKind::SaVector) => Ok(()),
            (n, f) => Err(Error::Config(format!("network {n:?} cannot be trained on {} features", f.name()))),
        }
    }

    pub fn build_network(&self, seed: u64) -> Result<Network> {
        self.validate_training()?;
        let classes = self.classes();
        match self.network {
            NetworkChoice::Vdban => {
                let spec = match self.network_size {
                    NetworkSize::Full => VdbanSpec::full(classes),
                    NetworkSize::Mini => VdbanSpec::mini(classes),
                };
                nn::build_vdban_with(self.scene.grid.dims, &spec, seed)
            }
            NetworkChoice::Saba => {
                let width = situational_width(self.sa_max_vehicles);
                let mut widths = match self.network_size {
                    NetworkSize::Full => nn::SABA_HIDDEN.to_vec(),
                    NetworkSize::Mini => nn::SABA_HIDDEN.iter().map(|w| (w / 8).max(16)).collect(),
                };
                widths.push(classes);
                nn::build_saba_with(width, &widths, seed)
            }
        }
    }
}

/// Feature tensor (stored layout and values) plus the MS side input.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    pub aux: Vec<f64>,
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// Computes the configured feature, rounded to the on-disk `f32` precision.
pub fn compute_feature(scene: &Scene, cfg: &ExperimentConfig) -> Result<Feature> {
    let grid = &cfg.scene.grid;
    let f = match cfg.feature {
        FeatureKind::Vdf => {
            let vdf = build_vdf(scene, grid, &cfg.scene.bounds)?;
            let d = vdf.shape();
            Feature { dims: d.to_vec(), data: vdf.data, aux: ms_location_vector(scene, grid)? }
        }
        FeatureKind::Pcf => {
            let spec = cfg.pcf_spec();
            let grid = voxelize_pcf(&simulate_lidar(scene, &cfg.lidar)?, &spec);
            Feature {
                dims: spec.dims.to_vec(),
                data: grid.data.iter().map(|&v| v as f64).collect(),
                aux: ms_location_vector(scene, &cfg.scene.grid)?,
            }
        }
        FeatureKind::SaVector => {
            let v = situational_vector(scene, grid, &cfg.scene.bounds, cfg.sa_max_vehicles)?;
            Feature { dims: vec![v.len()], data: v, aux: Vec::new() }
        }
    };
    Ok(Feature { dims: f.dims, data: round_f32(f.data), aux: round_f32(f.aux) })
}

/// Network input for a stored feature: VDF rows become channels-first.
pub fn network_input(kind: FeatureKind, feature: &Feature) -> Vec<f64> {
    match kind {
        FeatureKind::Vdf => {
            let cells = feature.data.len() / VDF_ROW;
            let mut out = vec![0.0; feature.data.len()];
            for cell in 0..cells {
                for ch in 0..VDF_ROW {
                    out[ch * cells + cell] = feature.data[cell * VDF_ROW + ch];
                }
            }
            out
        }
        _ => feature.data.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    fn tag(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Val => 1,
            SplitTag::Test => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(SplitTag::Train),
            1 => Ok(SplitTag::Val),
            2 => Ok(SplitTag::Test),
            _ => Err(Error::Format { what: "BGDS dataset", detail: format!("unknown split tag {t}") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub feature: Feature,
    pub gains: GainMatrix,
    /// Optimal flat beam pair of `gains`.
    pub label: usize,
    pub split: SplitTag,
    pub coherence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetContainer {
    pub kind: FeatureKind,
    pub n_tx: usize,
    pub n_rx: usize,
    pub records: Vec<DatasetRecord>,
}

impl DatasetContainer {
    pub fn has_coherence(&self) -> bool {
        self.records.first().is_some_and(|r| r.coherence.is_some())
    }

    pub fn los_fraction(&self) -> f64 {
        self.records.iter().filter(|r| r.gains.los).count() as f64 / self.records.len().max(1) as f64
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = (usize, &DatasetRecord)> {
        self.records.iter().enumerate().filter(move |(_, r)| r.split == tag)
    }

    pub fn split_count(&self, tag: SplitTag) -> usize {
        self.split(tag).count()
    }

    /// Training samples of one split for the given prediction target.
    pub fn samples(&self, tag: SplitTag, target: Target) -> Result<Vec<Sample>> {
        self.split(tag)
            .map(|(_, r)| {
                let label = match target {
                    Target::Beam => r.label,
                    Target::Coherence => r
                        .coherence
                        .ok_or_else(|| Error::Config("dataset carries no coherence labels".into()))?,
                };
                Ok(Sample { input: network_input(self.kind, &r.feature), aux: r.feature.aux.clone(), label })
            })
            .collect()
    }

    /// Every stored label must be the argmax of its stored gain table.
    pub fn check_consistency(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.gains.n_tx != self.n_tx || r.gains.n_rx != self.n_rx {
                return Err(Error::Inconsistent(format!("sample {i} gain table is {}x{}", r.gains.n_tx, r.gains.n_rx)));
            }
            let best = optimal_pair(&r.gains);
            if best != r.label {
                return Err(Error::Inconsistent(format!("sample {i} label {} but argmax {best}", r.label)));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        format::write_u16(w, DATASET_VERSION)?;
        format::write_u32(w, self.records.len() as u32)?;
        format::write_u8(w, self.kind.tag())?;
        format::write_u32(w, self.n_tx as u32)?;
        format::write_u32(w, self.n_rx as u32)?;
        let coherent = self.has_coherence();
        format::write_u8(w, coherent as u8)?;
        for r in &self.records {
            RawTensor::from_f64(r.feature.dims.clone(), &r.feature.data).write_to(w)?;
            RawTensor::from_f64(vec![r.feature.aux.len()], &r.feature.aux).write_to(w)?;
            RawTensor::from_f64(vec![r.gains.n_tx, r.gains.n_rx], &r.gains.gains).write_to(w)?;
            format::write_u8(w, r.gains.los as u8)?;
            format::write_f32(w, r.gains.noise_power as f32)?;
            format::write_u32(w, r.label as u32)?;
            format::write_u8(w, r.split.tag())?;
            if coherent {
                let c = r.coherence.ok_or_else(|| Error::Inconsistent("coherence label missing on some samples".into()))?;
                format::write_u32(w, c as u32)?;
            }
        }
        Ok(())
    }

    /// Reads a container and runs the label self-consistency check.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let header = read_dataset_header(r)?;
        let mut records = Vec::with_capacity(header.count.min(1 << 16));
        for _ in 0..header.count {
            let f = RawTensor::read_from(r)?;
            let aux = RawTensor::read_from(r)?;
            let g = RawTensor::read_from(r)?;
            if g.dims != [header.n_tx, header.n_rx] {
                return Err(Error::Format { what: "BGDS dataset", detail: format!("gain tensor dims {:?}", g.dims) });
            }
            let los = format::read_u8(r)? != 0;
            let noise_power = format::read_f32(r)? as f64;
            let label = format::read_u32(r)? as usize;
            let split = SplitTag::from_tag(format::read_u8(r)?)?;
            let coherence = if header.coherent { Some(format::read_u32(r)? as usize) } else { None };
            records.push(DatasetRecord {
                feature: Feature { dims: f.dims.clone(), data: f.to_f64(), aux: aux.to_f64() },
                gains: GainMatrix { n_tx: header.n_tx, n_rx: header.n_rx, gains: g.to_f64(), los, noise_power },
                label,
                split,
                coherence,
            });
        }
        let c = Self { kind: header.kind, n_tx: header.n_tx, n_rx: header.n_rx, records };
        c.check_consistency()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub count: usize,
    pub kind: FeatureKind,
    pub n_tx: usize,
    pub n_rx: usize,
    pub coherent: bool,
}

pub fn read_dataset_header<R: Read>(r: &mut R) -> Result<DatasetHeader> {
    expect_magic(r, DATASET_MAGIC, "BGDS dataset")?;
    let version = format::read_u16(r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format { what: "BGDS dataset", detail: format!("unsupported version {version}") });
    }
    Ok(DatasetHeader {
        version,
        count: format::read_u32(r)? as usize,
        kind: FeatureKind::from_tag(format::read_u8(r)?)?,
        n_tx: format::read_u32(r)? as usize,
        n_rx: format::read_u32(r)? as usize,
        coherent: format::read_u8(r)? != 0,
    })
}

/// Scene and clean gain table for sample `index`, retrying placement
/// failures and outage scenes with fresh derived seeds.
pub fn sample_scene(scene_cfg: &SceneConfig, link: &Link, seed: u64, index: usize) -> Result<(Scene, GainMatrix)> {
    let mut last = None;
    for attempt in 0..RETRY_BUDGET {
        let s = derive_seed(seed, &[index as u64, attempt as u64]);
        match generate_scene(scene_cfg, s).and_then(|scene| Ok((link.evaluate(&scene)?, scene))) {
            Ok((gains, mut scene)) => {
                scene.frame_id = index as u64;
                return Ok((scene, gains.quantized()));
            }
            Err(e @ (Error::PlacementFailure { .. } | Error::NoPath)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "sample {index}: retry budget of {RETRY_BUDGET} exhausted (last error: {})",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn coherence_label(scene: &Scene, link: &Link, cfg: &CoherenceConfig) -> Result<usize> {
    let frames = trajectory(scene, cfg.frames, cfg.step);
    let labels = label_beam_coherence(&frames, |s| Ok(optimal_pair(&link.evaluate(s)?.quantized())), cfg.clip)?;
    Ok(labels[0])
}

/// 70/15/15 train/val/test assignment from a seeded permutation.
pub fn assign_splits(n: usize, seed: u64) -> Vec<SplitTag> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5717])));
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let mut tags = vec![SplitTag::Test; n];
    for (rank, &i) in perm.iter().enumerate() {
        tags[i] = if rank < n_train {
            SplitTag::Train
        } else if rank < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    tags
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub container: DatasetContainer,
    pub scenes: Vec<Scene>,
}

/// Generates `n` samples. Deterministic in `(config, n, seed)` regardless of
/// worker count.
pub fn build_dataset(config: &ExperimentConfig, n: usize, seed: u64) -> Result<BuiltDataset> {
    config.validate()?;
    let link = Link::new(config.link);
    let splits = assign_splits(n, seed);
    let built: Vec<(Scene, DatasetRecord)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut attempt_seed = seed;
            // Coherence trajectories can hit outages in later frames; redraw the sample then.
            for round in 0..RETRY_BUDGET {
                let (scene, gains) = sample_scene(&config.scene, &link, attempt_seed, i)?;
                let coherence = if config.coherence.frames >= 2 {
                    match coherence_label(&scene, &link, &config.coherence) {
                        Ok(c) => Some(c),
                        Err(Error::NoPath) => {
                            attempt_seed = derive_seed(seed, &[0xc0e3, round as u64]);
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                let feature = compute_feature(&scene, config)?;
                let label = optimal_pair(&gains);
                return Ok((scene, DatasetRecord { feature, gains, label, split: splits[i], coherence }));
            }
            Err(Error::Config(format!("sample {i}: coherence trajectory retry budget exhausted")))
        })
        .collect::<Result<_>>()?;
    let (scenes, records) = built.into_iter().unzip();
    Ok(BuiltDataset {
        container: DatasetContainer { kind: config.feature, n_tx: config.link.n_tx, n_rx: config.link.n_rx, records },
        scenes,
    })
}

/// Bisects the tall-vehicle probability until the LOS share of `n` accepted
/// samples is as close as possible to `target`.
pub fn calibrate_blocker_density(config: &ExperimentConfig, target: f64, n: usize, seed: u64) -> Result<f64> {
    let link = Link::new(config.link);
    let los_share = |density: f64| -> Result<f64> {
        let scene_cfg = SceneConfig { blocker_density: density, ..config.scene.clone() };
        let los: Vec<bool> = (0..n)
            .into_par_iter()
            .map(|i| Ok(sample_scene(&scene_cfg, &link, seed, i)?.1.los))
            .collect::<Result<_>>()?;
        Ok(los.iter().filter(|&&l| l).count() as f64 / n as f64)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut best, mut best_err) = (config.scene.blocker_density, f64::INFINITY);
    for _ in 0..12 {
        let mid = (lo + hi) / 2.0;
        let share = los_share(mid)?;
        if (share - target).abs() < best_err {
            best = mid;
            best_err = (share - target).abs();
        }
        if share > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Mean ATRR of uniformly drawn `b`-subsets of beam pairs, `draws` per sample.
pub fn random_selection_baseline(gains: &[GainMatrix], b: usize, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut n = 0usize;
    for g in gains {
        let pairs: Vec<usize> = (0..g.pair_count()).collect();
        for _ in 0..draws {
            let pick: Vec<usize> = pairs.choose_multiple(&mut rng, b).copied().collect();
            match metrics::atrr(&pick, g) {
                Ok(v) => {
                    sum += v;
                    n += 1;
                }
                Err(Error::AllZeroGains) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(sum / n as f64)
}

/// A trained network that rebuilds its input feature from a scene.
pub struct ModelPredictor<'a> {
    pub net: &'a Network,
    pub config: &'a ExperimentConfig,
}

impl ScenePredictor for ModelPredictor<'_> {
    fn logits(&self, scene: &Scene) -> Result<Vec<f64>> {
        let f = compute_feature(scene, self.config)?;
        self.net.forward(&network_input(self.config.feature, &f), &f.aux)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub history: TrainingHistory,
    /// Validation Top-1 ATRR after every epoch (beam target only).
    pub val_atrr: Vec<f64>,
    pub report: EvalReport,
    pub test_logits: Vec<Vec<f64>>,
    pub network: Network,
    /// SHA-256 over the training history and the final report.
    pub digest: String,
}

fn logits_for(net: &Network, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples.par_iter().map(|s| net.forward(&s.input, &s.aux)).collect()
}

fn argmax(v: &[f64]) -> usize {
    metrics::top_b_select(v, 1).map(|t| t[0]).unwrap_or(0)
}

/// Trains the configured network with per-epoch shuffling, tracks
/// validation Top-1 ATRR, and scores the test split.
pub fn run_experiment(config: &ExperimentConfig, dataset: &DatasetContainer) -> Result<ExperimentOutcome> {
    run_experiment_with(config, dataset, |_, _| {})
}

/// Like [`run_experiment`]; `on_epoch` receives the epoch index and the
/// validation Top-1 ATRR after each epoch.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    dataset: &DatasetContainer,
    mut on_epoch: impl FnMut(usize, Option<f64>),
) -> Result<ExperimentOutcome> {
    config.validate()?;
    config.validate_training()?;
    if dataset.kind != config.feature {
        return Err(Error::Config(format!(
            "dataset holds {} features but config expects {}",
            dataset.kind.name(),
            config.feature.name()
        )));
    }
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_set = dataset.samples(SplitTag::Train, config.target)?;
    let val_set = dataset.samples(SplitTag::Val, config.target)?;
    let test_set = dataset.samples(SplitTag::Test, config.target)?;
    let val_gains: Vec<GainMatrix> = dataset.split(SplitTag::Val).map(|(_, r)| r.gains.clone()).collect();
    let test_gains: Vec<GainMatrix> = dataset.split(SplitTag::Test).map(|(_, r)| r.gains.clone()).collect();

    let mut net = config.build_network(derive_seed(config.hyper.seed, &[0x1417]))?;
    let mut val_atrr = Vec::new();
    let history = nn::train_with_observer(&mut net, &train_set, &val_set, &config.hyper, |epoch, net| {
        let mut current = None;
        if config.target == Target::Beam && !val_set.is_empty() {
            let r = split_report(&logits_for(net, &val_set)?, &val_gains, 1)?;
            val_atrr.push(r.all[0]);
            current = Some(r.all[0]);
        }
        on_epoch(epoch, current);
        Ok(())
    })?;
    net.round_params_to_f32();

    let test_logits = logits_for(&net, &test_set)?;
    let report = match config.target {
        Target::Beam => split_report(&test_logits, &test_gains, config.b_max)?,
        Target::Coherence => {
            let pred: Vec<usize> = test_logits.iter().map(|l| argmax(l)).collect();
            let truth: Vec<usize> = test_set.iter().map(|s| s.label).collect();
            // Beam-pair ATRR is not defined for coherence classes; report counts only.
            let los = dataset.split(SplitTag::Test).filter(|(_, r)| r.gains.los).count();
            EvalReport {
                b_max: 0,
                all: Vec::new(),
                los: None,
                nlos: None,
                n_total: test_set.len(),
                n_los: los,
                n_nlos: test_set.len() - los,
                excluded: 0,
                top1_accuracy: metrics::bctpa(&pred, &truth)?,
                bctpa: Some(metrics::bctpa(&pred, &truth)?),
            }
        }
    };
    let digest = experiment_digest(&history, &report);
    let outcome = ExperimentOutcome { history, val_atrr, report, test_logits, network: net, digest };
    if let Some(dir) = &config.output_dir {
        write_artifacts(dir, &outcome)?;
    }
    Ok(outcome)
}

pub fn experiment_digest(history: &TrainingHistory, report: &EvalReport) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for e in &history.epochs {
        h.update(e.train_loss.to_le_bytes());
        h.update(e.train_accuracy.to_le_bytes());
        h.update(e.val_accuracy.unwrap_or(-1.0).to_le_bytes());
        for &p in &e.permutation {
            h.update((p as u64).to_le_bytes());
        }
    }
    for v in report.all.iter().chain(report.los.iter().flatten()).chain(report.nlos.iter().flatten()) {
        h.update(v.to_le_bytes());
    }
    h.update(report.top1_accuracy.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `model.bgnn`, `history.csv` and `report.csv` into `dir`.
pub fn write_artifacts(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("model.bgnn"))?);
    checkpoint::write_checkpoint(&mut w, &outcome.network)?;
    w.flush()?;
    let mut h = BufWriter::new(File::create(dir.join("history.csv"))?);
    write_history_csv(&mut h, &outcome.history, &outcome.val_atrr)?;
    h.flush()?;
    let mut r = BufWriter::new(File::create(dir.join("report.csv"))?);
    let rows = outcome.report.csv_rows(outcome.history.epochs.len() as f64, &[metrics::Split::All, metrics::Split::Los, metrics::Split::Nlos]);
    metrics::write_csv(&mut r, &rows)?;
    r.flush()?;
    Ok(())
}

pub fn write_history_csv<W: Write>(w: &mut W, history: &TrainingHistory, val_atrr: &[f64]) -> Result<()> {
    writeln!(w, "epoch,train_loss,train_accuracy,val_accuracy,val_atrr")?;
    for (i, e) in history.epochs.iter().enumerate() {
        let va = e.val_accuracy.map(|v| format!("{v:.9}")).unwrap_or_default();
        let vr = val_atrr.get(i).map(|v| format!("{v:.9}")).unwrap_or_default();
        writeln!(w, "{},{:.9},{:.9},{va},{vr}", e.epoch + 1, e.train_loss, e.train_accuracy)?;
    }
    Ok(())
}

/// Top-B ATRR of `net` on location-perturbed test scenes for every σ in the config.
pub fn run_sigma_sweep(
    config: &ExperimentConfig,
    net: &Network,
    scenes: &[Scene],
    clean_gains: &[GainMatrix],
    b: usize,
) -> Result<Vec<SweepPoint>> {
    let predictor = ModelPredictor { net, config };
    metrics::sigma_sweep(&predictor, scenes, clean_gains, &config.sigma_list, b, derive_seed(config.seed, &[0x5eee]), config.perturb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsRow {
    pub network: String,
    pub input_shape: String,
    pub flops: u64,
}

/// Forward FLOPs of the full-width networks at their reference input shapes,
/// plus the configured network when it differs.
pub fn flops_report(config: &ExperimentConfig) -> Result<Vec<FlopsRow>> {
    let classes = config.link.pair_count();
    let full_grid = GridSpec::default().dims;
    let vdban = nn::build_vdban(full_grid, 365)?;
    let sa_width = situational_width(config.sa_max_vehicles);
    let saba = nn::build_saba(sa_width, 365)?;
    let shape = |d: [usize; 3]| format!("{}x{}x{}x{}", VDF_ROW, d[0], d[1], d[2]);
    let mut rows = vec![
        FlopsRow { network: "vdban".into(), input_shape: shape(full_grid), flops: vdban.count_flops() },
        FlopsRow { network: "saba".into(), input_shape: format!("{sa_width}"), flops: saba.count_flops() },
    ];
    let is_full = config.network_size == NetworkSize::Full && config.scene.grid.dims == full_grid && classes == 365;
    if !is_full && config.validate_training().is_ok() {
        let net = config.build_network(0)?;
        let input = match config.network {
            NetworkChoice::Vdban => shape(config.scene.grid.dims),
            NetworkChoice::Saba => format!("{sa_width}"),
        };
        let name = format!("{}-{}", match config.network { NetworkChoice::Vdban => "vdban", NetworkChoice::Saba => "saba" }, config.name);
        rows.push(FlopsRow { network: name, input_shape: input, flops: net.count_flops() });
    }
    Ok(rows)
}

/// Draws `n` fresh scenes outside the dataset seed space, for sweeps.
pub fn sweep_scenes(config: &ExperimentConfig, n: usize, seed: u64) -> Result<(Vec<Scene>, Vec<GainMatrix>)> {
    let link = Link::new(config.link);
    let out: Vec<(Scene, GainMatrix)> = (0..n)
        .into_par_iter()
        .map(|i| sample_scene(&config.scene, &link, derive_seed(seed, &[0x5c3e]), i))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

//! Phased training: semantic branch, geometry teacher and student, then fusion
//! on frozen geometry. Each phase writes a checkpoint that the next one needs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semocc_tensor::{checkpoint, AdamW, Graph, ParamId, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationPolicy, Ladder, Strength};
use crate::dataset::{Dataset, Frame};
use crate::error::{Error, Result};
use crate::formats::{load_keep_mask, load_label_grid, save_keep_mask, save_label_grid};
use crate::fusion::{FusionConfig, FusionNet, FusionOutput, ScatterProjector, SemanticInputs};
use crate::geometric::{occupancy_confidence, FrameRef, GeometryConfig, GeometryNet};
use crate::geometry::{lift_label_map, voxelize, CameraCalibration, GridSpec, SparseVoxelSet, MAX_POINTS_PER_VOXEL};
use crate::image::Image;
use crate::labels::{LabelGrid, LabelMap, IGNORE};
use crate::losses::{class_weights, fusion_loss, geometry_loss, label_counts, FusionTargets, OccTerm};
use crate::metrics::{interval_sample, ConfusionMatrix, Scores};
use crate::semantic::{align_pseudo_labels, semantic_loss, Semantic2d, Semantic3d, SemanticConfig, SemanticNets, SemanticTargets};
use crate::semi::{confidence_filter, merge_supervision, LabelSource};
use crate::synth::frame_seed;

const SEM: &str = "sem";
const GEO_TEACHER: &str = "geo_t";
const GEO_STUDENT: &str = "geo_s";
const FUS: &str = "fus";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Semantic,
    GeoTeacher,
    GeoStudent,
    Fusion,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Semantic, Phase::GeoTeacher, Phase::GeoStudent, Phase::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Semantic => "semantic",
            Phase::GeoTeacher => "geo-teacher",
            Phase::GeoStudent => "geo-student",
            Phase::Fusion => "fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Phase whose checkpoint this one starts from.
    pub fn prerequisite(self) -> Option<Phase> {
        match self {
            Phase::Semantic => None,
            Phase::GeoTeacher => Some(Phase::Semantic),
            Phase::GeoStudent => Some(Phase::GeoTeacher),
            Phase::Fusion => Some(Phase::GeoStudent),
        }
    }

    pub fn checkpoint_name(self) -> String {
        format!("{}.ckpt", self.name())
    }
}

/// Which geometry network feeds fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometrySource {
    #[default]
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseEpochs {
    pub semantic: usize,
    pub teacher: usize,
    pub student: usize,
    pub fusion: usize,
}

impl Default for PhaseEpochs {
    fn default() -> Self {
        Self {
            semantic: 6,
            teacher: 15,
            student: 15,
            fusion: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Joint gradient norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    pub epochs: PhaseEpochs,
    /// Frames whose gradients are accumulated per optimizer step.
    pub batch_size: usize,
    pub label_fraction: f64,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    /// Train the semantic branch on unannotated frames too.
    pub use_unlabeled: bool,
    pub student_ladder: Ladder,
    /// Point dropout, region dropout and voxel sampling level for the student.
    pub student_lidar: Strength,
    pub fusion_geometry: GeometrySource,
    pub use_semantic_branch: bool,
    /// Supervise the projected segmentation during fusion.
    pub use_projection: bool,
    /// Supervise fused voxels on annotated frames.
    pub use_voxel_labels: bool,
    pub occ_terms: Vec<OccTerm>,
    pub max_points_per_voxel: usize,
    pub semantic: SemanticConfig,
    pub geometry: GeometryConfig,
    pub fusion: FusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 3e-3,
            weight_decay: 1e-4,
            max_grad_norm: 5.0,
            epochs: PhaseEpochs::default(),
            batch_size: 1,
            label_fraction: 0.1,
            tau: 0.85,
            use_unlabeled: true,
            student_ladder: Ladder::Strong,
            student_lidar: Strength::Weak,
            fusion_geometry: GeometrySource::Student,
            use_semantic_branch: true,
            use_projection: true,
            use_voxel_labels: true,
            occ_terms: crate::losses::DEFAULT_OCC_TERMS.to_vec(),
            max_points_per_voxel: MAX_POINTS_PER_VOXEL,
            semantic: SemanticConfig::default(),
            geometry: GeometryConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction {} is outside (0, 1]", self.label_fraction));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} is outside (0, 1)", self.tau));
        }
        if self.batch_size == 0 || self.max_points_per_voxel == 0 {
            return bad("batch_size and max_points_per_voxel must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || self.max_grad_norm < 0.0 {
            return bad("learning_rate must be positive, weight_decay and max_grad_norm non-negative".into());
        }
        if self.geometry.frames != 1 {
            return bad("synthetic frames are independent scenes; geometry.frames must be 1".into());
        }
        if !(0.0..=1.0).contains(&self.fusion.rho) || self.fusion.projector_stride == 0 {
            return bad("fusion.rho must lie in [0, 1] and projector_stride be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Seed for `tags` under `seed`; stable across runs and platforms.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |s, &t| frame_seed(s, t as usize))
}

/// All networks over one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub grid: GridSpec,
    pub store: ParamStore,
    pub semantic: SemanticNets,
    pub teacher: GeometryNet,
    pub student: GeometryNet,
    pub fusion: FusionNet,
}

impl Model {
    pub fn new(config: &TrainConfig, grid: &GridSpec) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let semantic = SemanticNets::new(&mut store, SEM, config.semantic.clone(), &mut rng);
        let teacher = GeometryNet::new(&mut store, GEO_TEACHER, config.geometry.clone(), &mut rng);
        let student = GeometryNet::new(&mut store, GEO_STUDENT, config.geometry.clone(), &mut rng);
        let sem_channels = config.semantic.widths_2d[3] + config.semantic.width_3d;
        let fusion = FusionNet::new(
            &mut store,
            FUS,
            config.fusion.clone(),
            grid,
            sem_channels,
            config.geometry.width,
            config.semantic.classes,
            &mut rng,
        )?;
        Ok(Self {
            config: config.clone(),
            grid: *grid,
            store,
            semantic,
            teacher,
            student,
            fusion,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.semantic.classes
    }

    pub fn geometry(&self, source: GeometrySource) -> &GeometryNet {
        match source {
            GeometrySource::Student => &self.student,
            GeometrySource::Teacher => &self.teacher,
        }
    }

    /// Replaces every parameter with the checkpoint's; names and shapes must match.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let loaded = checkpoint::load(path)?;
        let copied = self.store.copy_matching(&loaded)?;
        if copied != self.store.len() || loaded.len() != self.store.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("checkpoint holds {} tensors, the configured model {} ({copied} shared)", loaded.len(), self.store.len()),
            });
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)?;
        Ok(())
    }

    /// Student starts as a copy of the teacher.
    pub fn copy_teacher_to_student(&mut self) {
        let pairs: Vec<(ParamId, ParamId)> = self
            .store
            .ids_with_prefix(GEO_TEACHER)
            .map(|t| {
                let name = self.store.name(t).replacen(GEO_TEACHER, GEO_STUDENT, 1);
                (t, self.store.find(&name).expect("student mirrors teacher"))
            })
            .collect();
        for (t, s) in pairs {
            let data = self.store.get(t).data().to_vec();
            self.store.get_mut(s).data_mut().copy_from_slice(&data);
        }
    }

    /// Geometry logits `[2, H, W, Z]` and features for one frame.
    pub fn geometry_forward(&self, source: GeometrySource, image: &Image, voxels: &SparseVoxelSet, calib: &CameraCalibration) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let out = self.geometry(source).forward(&mut g, &self.store, &self.grid, &[FrameRef { image, voxels, calib }])?;
        Ok((g.tensor(out.logits), g.tensor(out.features)))
    }

    fn semantic_forward(&self, g: &mut Graph, store: &ParamStore, image: &Image, voxels: &SparseVoxelSet) -> Result<(Semantic2d, Semantic3d)> {
        let img = g.constant(&image.to_tensor());
        Ok((self.semantic.forward_2d(g, store, img)?, self.semantic.forward_3d(g, store, voxels)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn fusion_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &Image,
        voxels: &SparseVoxelSet,
        geometry: &Tensor,
        calib: &CameraCalibration,
        projector: &ScatterProjector,
    ) -> Result<(FusionOutput, Option<(Semantic2d, Semantic3d)>)> {
        let sem = if self.config.use_semantic_branch {
            Some(self.semantic_forward(g, store, image, voxels)?)
        } else {
            None
        };
        let inputs = sem.map(|(s2, s3)| SemanticInputs {
            image: s2.features,
            image_channels: self.config.semantic.widths_2d[3],
            voxels: s3.features,
        });
        let geo = g.constant(geometry);
        let out = self.fusion.forward(g, store, inputs, geo, &self.grid, calib, projector)?;
        Ok((out, sem))
    }

    /// Fused semantic occupancy prediction.
    pub fn predict(&self, frame: &Frame, calib: &CameraCalibration) -> Result<LabelGrid> {
        let voxels = clean_voxels(&self.config, &self.grid, frame);
        let (_, features) = self.geometry_forward(self.config.fusion_geometry, &frame.image, &voxels, calib)?;
        let projector = self.fusion.projector(&self.grid, calib);
        let mut g = Graph::new();
        let (out, _) = self.fusion_forward(&mut g, &self.store, &frame.image, &voxels, &features, calib, &projector)?;
        Ok(argmax_grid(&g.tensor(out.voxel_logits), self.grid.dims))
    }
}

fn clean_voxels(config: &TrainConfig, grid: &GridSpec, frame: &Frame) -> SparseVoxelSet {
    voxelize(&frame.cloud, grid, config.max_points_per_voxel, mix_seed(config.seed, &[frame.id as u64]))
}

/// Per-cell argmax over the leading class axis.
pub fn argmax_grid(logits: &Tensor, dims: [usize; 3]) -> LabelGrid {
    let classes = logits.shape()[0];
    let n = logits.numel() / classes;
    let d = logits.data();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..classes {
                if d[c * n + i] > d[best * n + i] {
                    best = c;
                }
            }
            best as u16
        })
        .collect();
    LabelGrid::from_vec(dims, labels).expect("logits sized from grid")
}

/// One line of the metric log: `phase epoch split IoU mIoU per_class…`, scores
/// in percent, `-` for classes absent from both truth and prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub phase: String,
    pub epoch: usize,
    pub split: String,
    pub scores: Scores,
}

impl MetricRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {} {} {:.4} {:.4}", self.phase, self.epoch, self.split, 100.0 * self.scores.iou, 100.0 * self.scores.miou);
        for c in &self.scores.per_class {
            match c {
                Some(v) => write!(s, " {:.4}", 100.0 * v).unwrap(),
                None => s.push_str(" -"),
            }
        }
        s
    }

    pub fn parse(line: &str) -> Option<Self> {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 5 {
            return None;
        }
        let pct = |t: &str| t.parse::<f64>().ok().map(|v| v / 100.0);
        let per_class = tok[5..]
            .iter()
            .map(|t| if *t == "-" { Some(None) } else { pct(t).map(Some) })
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            phase: tok[0].to_string(),
            epoch: tok[1].parse().ok()?,
            split: tok[2].to_string(),
            scores: Scores {
                iou: pct(tok[3])?,
                miou: pct(tok[4])?,
                per_class,
            },
        })
    }
}

/// Rewrites the log with this phase's records replaced, phases in training order.
pub fn update_metric_log(path: &Path, phase: Phase, records: &[MetricRecord]) -> Result<()> {
    let existing = fs::read_to_string(path).unwrap_or_default();
    let mut by_phase: BTreeMap<Phase, Vec<String>> = BTreeMap::new();
    for line in existing.lines() {
        if let Some(p) = line.split_whitespace().next().and_then(Phase::parse) {
            if p != phase {
                by_phase.entry(p).or_default().push(line.to_string());
            }
        }
    }
    by_phase.insert(phase, records.iter().map(MetricRecord::to_line).collect());
    let text: String = by_phase.values().flatten().map(|l| format!("{l}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

/// Fused prediction scores over `frames`.
pub fn evaluate_fused(model: &Model, frames: &[Frame], calib: &CameraCalibration) -> Result<Scores> {
    let mut cm = ConfusionMatrix::new(model.classes());
    for f in frames {
        let pred = model.predict(f, calib)?;
        cm.add(pred.data(), f.gt.data())?;
    }
    Ok(cm.scores())
}

/// Binary occupancy scores of one geometry network.
pub fn evaluate_geometry(model: &Model, source: GeometrySource, frames: &[Frame], calib: &CameraCalibration) -> Result<Scores> {
    let mut cm = ConfusionMatrix::new(2);
    for f in frames {
        let voxels = clean_voxels(&model.config, &model.grid, f);
        let (logits, _) = model.geometry_forward(source, &f.image, &voxels, calib)?;
        cm.add(argmax_grid(&logits, model.grid.dims).data(), f.geo.data())?;
    }
    Ok(cm.scores())
}

/// Scores of the semantic branch's own voxel head.
pub fn evaluate_semantic(model: &Model, frames: &[Frame]) -> Result<Scores> {
    let mut cm = ConfusionMatrix::new(model.classes());
    for f in frames {
        let voxels = clean_voxels(&model.config, &model.grid, f);
        let mut g = Graph::new();
        let (_, s3) = model.semantic_forward(&mut g, &model.store, &f.image, &voxels)?;
        cm.add(argmax_grid(&g.tensor(s3.logits), model.grid.dims).data(), f.gt.data())?;
    }
    Ok(cm.scores())
}

/// Per-frame targets derived once from the stored pseudo labels.
struct Prepared {
    voxels: SparseVoxelSet,
    point_counts: Vec<usize>,
    /// Aligned image pseudo labels.
    pixels: LabelMap,
    /// Image pseudo labels lifted onto the grid.
    lifted: LabelGrid,
    /// Pseudo labels at projector resolution, ignored where no voxel lands.
    projected: Vec<u16>,
}

fn prepare(model: &Model, data: &Dataset, frames: &[Frame]) -> Result<Vec<Prepared>> {
    let stride = model.config.fusion.projector_stride;
    let projector = model.fusion.projector(&model.grid, &data.calib);
    let hits = projector.hit_counts();
    frames
        .iter()
        .map(|f| {
            let pixels = align_pseudo_labels(&f.primary, &f.aux, &data.taxonomy)?;
            let lifted = lift_label_map(&pixels, &model.grid, &data.calib)?;
            let down = pixels.downsample_majority(stride);
            let projected = down.data().iter().zip(&hits).map(|(&l, &n)| if n == 0 { IGNORE } else { l }).collect();
            let voxels = clean_voxels(&model.config, &model.grid, f);
            Ok(Prepared {
                point_counts: voxels.point_counts(),
                voxels,
                pixels,
                lifted,
                projected,
            })
        })
        .collect()
}

struct ClassWeights {
    pixel: Vec<f64>,
    voxel: Vec<f64>,
    projected: Vec<f64>,
}

fn semantic_weights(prepared: &[&Prepared], classes: usize) -> ClassWeights {
    let pixel = label_counts(prepared.iter().flat_map(|p| p.pixels.data().iter().copied()), classes);
    let voxel = label_counts(
        prepared
            .iter()
            .flat_map(|p| p.lifted.data().iter().zip(&p.point_counts).filter(|(_, &n)| n > 1).map(|(&l, _)| l)),
        classes,
    );
    let projected = label_counts(prepared.iter().flat_map(|p| p.projected.iter().copied()), classes);
    ClassWeights {
        pixel: class_weights(&pixel),
        voxel: class_weights(&voxel),
        projected: class_weights(&projected),
    }
}

/// Runs `epochs` passes of AdamW over `items`, each visited once per epoch in
/// a seeded shuffled order. Returns the mean loss per epoch.
fn optimize(
    store: &mut ParamStore,
    params: Vec<ParamId>,
    config: &TrainConfig,
    phase: Phase,
    epochs: usize,
    items: usize,
    mut loss_of: impl FnMut(&mut Graph, &ParamStore, usize, u64) -> Result<Var>,
) -> Result<Vec<f64>> {
    let mut opt = AdamW::new(store, params.clone(), config.learning_rate, config.weight_decay);
    if config.max_grad_norm > 0.0 {
        opt.max_grad_norm = Some(config.max_grad_norm);
    }
    let mut losses = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..items).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[phase as u64, epoch as u64])));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            for &item in batch {
                let mut g = Graph::new();
                let seed = mix_seed(config.seed, &[phase as u64, epoch as u64, item as u64]);
                let loss = loss_of(&mut g, store, item, seed)?;
                let loss = g.scale(loss, 1.0 / batch.len() as f64);
                total += g.scalar_value(loss) * batch.len() as f64;
                if g.requires_grad(loss) {
                    g.backward(loss)?.apply_to(&g, store)?;
                }
            }
            for &p in &params {
                if store.get(p).grad().is_none() {
                    let zeros = vec![0.0; store.get(p).numel()];
                    store.get_mut(p).accumulate_grad(&zeros)?;
                }
            }
            opt.step(store)?;
        }
        losses.push(if items == 0 { 0.0 } else { total / items as f64 });
    }
    Ok(losses)
}

fn trainable(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    store.ids().filter(|&id| prefixes.iter().any(|p| store.name(id).starts_with(&format!("{p}.")))).collect()
}

/// Annotated training frames per the configured label fraction.
pub fn annotated_frames(config: &TrainConfig, frames: usize) -> BTreeSet<usize> {
    interval_sample(frames, config.label_fraction).into_iter().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub phase: Phase,
    pub losses: Vec<f64>,
    pub records: Vec<MetricRecord>,
}

pub fn pseudo_dir(out: &Path) -> PathBuf {
    out.join("pseudo")
}

fn pseudo_paths(out: &Path, frame: usize) -> (PathBuf, PathBuf) {
    let d = pseudo_dir(out);
    (d.join(format!("{frame:04}.occg")), d.join(format!("{frame:04}.occk")))
}

/// Trains `phase`, reading its prerequisite checkpoint from `out` and writing
/// its own checkpoint, the config and the metric log there.
pub fn run_phase(config: &TrainConfig, data: &Dataset, out: &Path, phase: Phase) -> Result<PhaseReport> {
    config.validate()?;
    if config.semantic.classes != data.taxonomy.num_classes() {
        return Err(Error::Config(format!(
            "semantic.classes is {} but the dataset taxonomy has {}",
            config.semantic.classes,
            data.taxonomy.num_classes()
        )));
    }
    let mut model = Model::new(config, &data.grid)?;
    if let Some(pre) = phase.prerequisite() {
        let path = out.join(pre.checkpoint_name());
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!(
                "phase `{}` needs the `{}` checkpoint at {}",
                phase.name(),
                pre.name(),
                path.display()
            )));
        }
        model.load_checkpoint(&path)?;
    }
    fs::create_dir_all(out)?;
    let (losses, records) = match phase {
        Phase::Semantic => train_semantic(&mut model, data)?,
        Phase::GeoTeacher => train_teacher(&mut model, data, out)?,
        Phase::GeoStudent => train_student(&mut model, data, out)?,
        Phase::Fusion => train_fusion(&mut model, data)?,
    };
    model.save_checkpoint(&out.join(phase.checkpoint_name()))?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    update_metric_log(&out.join("metrics.log"), phase, &records)?;
    Ok(PhaseReport { phase, losses, records })
}

/// All four phases in order.
pub fn run_training(config: &TrainConfig, data: &Dataset, out: &Path) -> Result<Vec<PhaseReport>> {
    Phase::ALL.iter().map(|&p| run_phase(config, data, out, p)).collect()
}

fn record(phase: Phase, epoch: usize, scores: Scores) -> MetricRecord {
    MetricRecord {
        phase: phase.name().into(),
        epoch,
        split: "val".into(),
        scores,
    }
}

type PhaseOutcome = (Vec<f64>, Vec<MetricRecord>);

fn train_semantic(model: &mut Model, data: &Dataset) -> Result<PhaseOutcome> {
    let annotated = annotated_frames(&model.config, data.train.len());
    let frames: Vec<Frame> = data
        .train
        .iter()
        .enumerate()
        .filter(|(i, _)| model.config.use_unlabeled || annotated.contains(i))
        .map(|(_, f)| f.clone())
        .collect();
    let prepared = prepare(model, data, &frames)?;
    let weights = semantic_weights(&prepared.iter().collect::<Vec<_>>(), model.classes());
    let params = trainable(&model.store, &[SEM]);
    let config = model.config.clone();
    let mut store = std::mem::take(&mut model.store);
    let net = &*model;
    let losses = optimize(&mut store, params, &config, Phase::Semantic, config.epochs.semantic, frames.len(), |g, store, i, _| {
        let p = &prepared[i];
        let (s2, s3) = net.semantic_forward(g, store, &frames[i].image, &p.voxels)?;
        semantic_loss(g, s2.logits, s3.logits, &sem_targets(p, &weights), &config.occ_terms)
    })?;
    model.store = store;
    let scores = evaluate_semantic(model, &data.val)?;
    Ok((losses, vec![record(Phase::Semantic, config.epochs.semantic, scores)]))
}

fn sem_targets<'a>(p: &'a Prepared, w: &'a ClassWeights) -> SemanticTargets<'a> {
    SemanticTargets {
        pixel_labels: &p.pixels,
        voxel_labels: &p.lifted,
        point_counts: &p.point_counts,
        pixel_weights: &w.pixel,
        voxel_weights: &w.voxel,
    }
}

/// Trains one geometry network on `(frame, labels)` pairs with `policy` augmentation.
fn train_geometry(
    model: &mut Model,
    source: GeometrySource,
    data: &Dataset,
    targets: &[(usize, LabelGrid)],
    policy: &AugmentationPolicy,
    phase: Phase,
    epochs: usize,
) -> Result<Vec<f64>> {
    let weights = class_weights(&label_counts(targets.iter().flat_map(|(_, l)| l.data().iter().copied()), 2));
    let prefix = match source {
        GeometrySource::Student => GEO_STUDENT,
        GeometrySource::Teacher => GEO_TEACHER,
    };
    let params = trainable(&model.store, &[prefix]);
    let config = model.config.clone();
    let mut store = std::mem::take(&mut model.store);
    let net = &*model;
    let losses = optimize(&mut store, params, &config, phase, epochs, targets.len(), |g, store, i, seed| {
        let (frame, labels) = &targets[i];
        let f = &data.train[*frame];
        let aug = augment(&f.image, &f.cloud, policy, seed);
        let samples = aug.voxel_samples.min(config.max_points_per_voxel);
        let voxels = voxelize(&aug.cloud, &net.grid, samples, seed);
        let frame_ref = FrameRef {
            image: &aug.image,
            voxels: &voxels,
            calib: &data.calib,
        };
        let out = net.geometry(source).forward(g, store, &net.grid, &[frame_ref])?;
        geometry_loss(g, out.logits, labels.data(), &weights)
    });
    model.store = store;
    losses
}

fn train_teacher(model: &mut Model, data: &Dataset, out: &Path) -> Result<PhaseOutcome> {
    let annotated = annotated_frames(&model.config, data.train.len());
    let targets: Vec<(usize, LabelGrid)> = annotated.iter().map(|&i| (i, data.train[i].geo.clone())).collect();
    let epochs = model.config.epochs.teacher;
    let losses = train_geometry(model, GeometrySource::Teacher, data, &targets, &AugmentationPolicy::teacher(), Phase::GeoTeacher, epochs)?;

    let dir = pseudo_dir(out);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    for (i, f) in data.train.iter().enumerate().filter(|(i, _)| !annotated.contains(i)) {
        let voxels = clean_voxels(&model.config, &model.grid, f);
        let (logits, _) = model.geometry_forward(GeometrySource::Teacher, &f.image, &voxels, &data.calib)?;
        let filtered = confidence_filter(&logits, model.config.tau)?;
        let (labels, keep) = pseudo_paths(out, i);
        save_label_grid(&labels, &filtered.labels)?;
        save_keep_mask(&keep, model.grid.dims, &filtered.keep)?;
    }
    let scores = evaluate_geometry(model, GeometrySource::Teacher, &data.val, &data.calib)?;
    Ok((losses, vec![record(Phase::GeoTeacher, epochs, scores)]))
}

/// Cached teacher labels for every unannotated frame, rejected ones set to `IGNORE`.
pub fn load_pseudo_labels(out: &Path, frames: usize, annotated: &BTreeSet<usize>) -> Result<Vec<(usize, LabelGrid)>> {
    let mut pseudo = Vec::new();
    for i in (0..frames).filter(|i| !annotated.contains(i)) {
        let (labels_path, keep_path) = pseudo_paths(out, i);
        if !labels_path.exists() || !keep_path.exists() {
            return Err(Error::MissingPrerequisite(format!(
                "pseudo-label cache entry {} from phase `{}`",
                labels_path.display(),
                Phase::GeoTeacher.name()
            )));
        }
        let mut labels = load_label_grid(&labels_path)?;
        let (dims, keep) = load_keep_mask(&keep_path)?;
        if dims != labels.dims() {
            return Err(Error::Format {
                path: keep_path,
                msg: format!("keep mask {dims:?} does not match labels {:?}", labels.dims()),
            });
        }
        for (l, k) in labels.data_mut().iter_mut().zip(keep) {
            if !k {
                *l = IGNORE;
            }
        }
        pseudo.push((i, labels));
    }
    Ok(pseudo)
}

fn train_student(model: &mut Model, data: &Dataset, out: &Path) -> Result<PhaseOutcome> {
    let annotated = annotated_frames(&model.config, data.train.len());
    let pseudo = load_pseudo_labels(out, data.train.len(), &annotated)?;
    let labelled: Vec<(usize, LabelGrid)> = annotated.iter().map(|&i| (i, data.train[i].geo.clone())).collect();
    let stream = merge_supervision(labelled, pseudo)?;
    debug_assert!(stream.iter().all(|s| (s.source == LabelSource::Annotated) == annotated.contains(&s.frame)));
    let targets: Vec<(usize, LabelGrid)> = stream.into_iter().map(|s| (s.frame, s.labels)).collect();
    model.copy_teacher_to_student();
    let epochs = model.config.epochs.student;
    let policy = AugmentationPolicy::student(model.config.student_ladder, model.config.student_lidar);
    let losses = train_geometry(model, GeometrySource::Student, data, &targets, &policy, Phase::GeoStudent, epochs)?;
    let scores = evaluate_geometry(model, GeometrySource::Student, &data.val, &data.calib)?;
    Ok((losses, vec![record(Phase::GeoStudent, epochs, scores)]))
}

fn train_fusion(model: &mut Model, data: &Dataset) -> Result<PhaseOutcome> {
    let config = model.config.clone();
    let annotated = annotated_frames(&config, data.train.len());
    let prepared = prepare(model, data, &data.train)?;
    let weights = semantic_weights(&prepared.iter().collect::<Vec<_>>(), model.classes());
    let voxel_weights = class_weights(&label_counts(
        annotated.iter().flat_map(|&i| data.train[i].gt.data().iter().copied()),
        model.classes(),
    ));
    let projector = model.fusion.projector(&model.grid, &data.calib);
    let mut geometry = Vec::with_capacity(prepared.len());
    let mut projectors = Vec::with_capacity(prepared.len());
    for (f, p) in data.train.iter().zip(&prepared) {
        let (logits, features) = model.geometry_forward(config.fusion_geometry, &f.image, &p.voxels, &data.calib)?;
        geometry.push(features);
        projectors.push(if config.fusion.occupancy_gate {
            let occupied: Vec<bool> = occupancy_confidence(&logits).iter().map(|&(c, _)| c == 1).collect();
            projector.first_hits(&occupied)
        } else {
            projector.clone()
        });
    }
    let mut prefixes = vec![FUS];
    if config.use_semantic_branch {
        prefixes.push(SEM);
    }
    let params = trainable(&model.store, &prefixes);
    let mut store = std::mem::take(&mut model.store);
    store.set_trainable(&format!("{GEO_TEACHER}."), false);
    store.set_trainable(&format!("{GEO_STUDENT}."), false);
    let net = &*model;
    let epochs = config.epochs.fusion;
    // Each step pairs an unannotated frame with a seed-picked annotated one.
    let labelled: Vec<usize> = annotated.iter().copied().collect();
    let unlabelled: Vec<usize> = (0..data.train.len()).filter(|i| !annotated.contains(i)).collect();
    let paired = !labelled.is_empty() && !unlabelled.is_empty();
    let items = if paired { &unlabelled } else { &labelled };
    let frame_loss = |g: &mut Graph, store: &ParamStore, i: usize| -> Result<Var> {
        let p = &prepared[i];
        let f = &data.train[i];
        let (out, sem) = net.fusion_forward(g, store, &f.image, &p.voxels, &geometry[i], &data.calib, &projectors[i])?;
        let targets = FusionTargets {
            voxel_labels: (config.use_voxel_labels && annotated.contains(&i)).then(|| f.gt.data()),
            voxel_weights: &voxel_weights,
            pixel_labels: config.use_projection.then_some(&p.projected[..]),
            pixel_weights: &weights.projected,
            terms: &config.occ_terms,
        };
        let fus = fusion_loss(g, out.voxel_logits, out.pixel_logits, &targets)?;
        match sem {
            Some((s2, s3)) => {
                let l = semantic_loss(g, s2.logits, s3.logits, &sem_targets(p, &weights), &config.occ_terms)?;
                Ok(g.add(fus, l)?)
            }
            None => Ok(fus),
        }
    };
    let losses = optimize(&mut store, params, &config, Phase::Fusion, epochs, items.len(), |g, store, k, seed| {
        let loss = frame_loss(g, store, items[k])?;
        if !paired {
            return Ok(loss);
        }
        let partner = frame_loss(g, store, labelled[(seed % labelled.len() as u64) as usize])?;
        Ok(g.add(loss, partner)?)
    })?;
    store.set_trainable(&format!("{GEO_TEACHER}."), true);
    store.set_trainable(&format!("{GEO_STUDENT}."), true);
    model.store = store;
    let scores = evaluate_fused(model, &data.val, &data.calib)?;
    Ok((losses, vec![record(Phase::Fusion, epochs, scores)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_line_round_trip() {
        let r = MetricRecord {
            phase: "fusion".into(),
            epoch: 3,
            split: "val".into(),
            scores: Scores {
                iou: 0.5,
                miou: 0.25,
                per_class: vec![Some(1.0), None, Some(0.125)],
            },
        };
        let line = r.to_line();
        assert_eq!(line, "fusion 3 val 50.0000 25.0000 100.0000 - 12.5000");
        assert_eq!(MetricRecord::parse(&line).unwrap(), r);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(TrainConfig::from_toml("label_fraction = 0.0").is_err());
        assert!(TrainConfig::from_toml("no_such_key = 1").is_err());
    }

    #[test]
    fn phase_chain() {
        assert_eq!(Phase::Fusion.prerequisite(), Some(Phase::GeoStudent));
        assert_eq!(Phase::parse("geo-teacher"), Some(Phase::GeoTeacher));
        assert_eq!(Phase::Semantic.prerequisite(), None);
    }
}

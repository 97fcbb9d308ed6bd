//! On-disk synthetic datasets: per-frame files, a manifest per split, the
//! shared calibration and the class taxonomy.
//!
//! ```text
//! DIR/calib.txt  DIR/taxonomy.txt  DIR/manifest_{train,val}.txt  DIR/frames/...
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{load_cloud, load_label_grid, load_label_map, load_ppm, save_cloud, save_label_grid, save_label_map, save_ppm};
use crate::geometry::{CameraCalibration, GridSpec, PointCloud};
use crate::image::Image;
use crate::labels::{LabelGrid, LabelMap};
use crate::metrics::interval_sample;
use crate::semantic::AuxMask;
use crate::synth::{frame_seed, generate_scene, FrameBundle, SceneSpec};
use crate::taxonomy::ClassTaxonomy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub frame: usize,
    pub image: PathBuf,
    pub cloud: PathBuf,
    pub gt: PathBuf,
    pub geo: PathBuf,
    pub seg: PathBuf,
    /// `(class name, path)` per auxiliary mask.
    pub aux: Vec<(String, PathBuf)>,
    pub annotated: bool,
}

/// One line per frame: `id image cloud gt geo seg [NAME:aux…] annotated={0|1}`.
/// Paths are relative to the dataset directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn annotated(&self) -> BTreeSet<usize> {
        self.entries.iter().filter(|e| e.annotated).map(|e| e.frame).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let p = |p: &Path| p.display().to_string();
            write!(s, "{} {} {} {} {} {}", e.frame, p(&e.image), p(&e.cloud), p(&e.gt), p(&e.geo), p(&e.seg)).unwrap();
            for (name, path) in &e.aux {
                write!(s, " {name}:{}", p(path)).unwrap();
            }
            writeln!(s, " annotated={}", e.annotated as u8).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| format!("line {}: {m}", n + 1);
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() < 7 {
                return Err(err("expected at least 7 fields"));
            }
            let annotated = match tok[tok.len() - 1] {
                "annotated=0" => false,
                "annotated=1" => true,
                _ => return Err(err("last field must be annotated=0 or annotated=1")),
            };
            let aux = tok[6..tok.len() - 1]
                .iter()
                .map(|t| {
                    t.split_once(':')
                        .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
                        .ok_or_else(|| err("auxiliary mask must be NAME:PATH"))
                })
                .collect::<std::result::Result<_, _>>()?;
            entries.push(ManifestEntry {
                frame: tok[0].parse().map_err(|_| err("bad frame id"))?,
                image: tok[1].into(),
                cloud: tok[2].into(),
                gt: tok[3].into(),
                geo: tok[4].into(),
                seg: tok[5].into(),
                aux,
                annotated,
            });
        }
        Ok(Self { entries })
    }
}

/// Calibration file: `K` and `T` row-major, image size and grid.
pub fn calib_to_text(calib: &CameraCalibration, grid: &GridSpec) -> String {
    let join = |v: Vec<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let k: Vec<f64> = calib.k().iter().flatten().copied().collect();
    let t: Vec<f64> = calib.t().iter().flatten().copied().collect();
    format!(
        "K {}\nT {}\nsize {} {}\ngrid {} {} {}\n",
        join(k),
        join(t),
        calib.height(),
        calib.width(),
        grid.dims.map(|d| d.to_string()).join(" "),
        join(grid.origin.to_vec()),
        grid.voxel_size
    )
}

pub fn parse_calib(text: &str) -> Result<(CameraCalibration, GridSpec)> {
    let bad = |m: &str| Error::Calibration(m.to_string());
    let mut k = None;
    let mut t = None;
    let mut size = None;
    let mut grid = None;
    for line in text.lines() {
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else { continue };
        let nums: Vec<f64> = tok.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("non-numeric value"))?;
        match (key, nums.len()) {
            ("K", 9) => k = Some(std::array::from_fn(|r| std::array::from_fn(|c| nums[r * 3 + c]))),
            ("T", 16) => t = Some(std::array::from_fn(|r| std::array::from_fn(|c| nums[r * 4 + c]))),
            ("size", 2) => size = Some((nums[0] as usize, nums[1] as usize)),
            ("grid", 7) => {
                grid = Some(GridSpec::new(
                    [nums[0] as usize, nums[1] as usize, nums[2] as usize],
                    [nums[3], nums[4], nums[5]],
                    nums[6],
                )?)
            }
            _ => return Err(bad(&format!("unexpected line `{line}`"))),
        }
    }
    let (h, w) = size.ok_or_else(|| bad("missing size"))?;
    let calib = CameraCalibration::new(k.ok_or_else(|| bad("missing K"))?, t.ok_or_else(|| bad("missing T"))?, h, w)?;
    Ok((calib, grid.ok_or_else(|| bad("missing grid"))?))
}

/// A frame held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub image: Image,
    pub cloud: PointCloud,
    pub gt: LabelGrid,
    pub geo: LabelGrid,
    pub primary: LabelMap,
    pub aux: Vec<AuxMask>,
    pub annotated: bool,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub grid: GridSpec,
    pub calib: CameraCalibration,
    pub taxonomy: ClassTaxonomy,
    pub train: Vec<Frame>,
    pub val: Vec<Frame>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Frame] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (calib, grid) = parse_calib(&read(&dir.join("calib.txt"))?)?;
        let taxonomy = ClassTaxonomy::load(&dir.join("taxonomy.txt"), crate::taxonomy::DESK_CLASSES.len())?;
        let train = load_split(dir, Split::Train, &grid, &calib)?;
        let val = load_split(dir, Split::Val, &grid, &calib)?;
        Ok(Self {
            grid,
            calib,
            taxonomy,
            train,
            val,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_manifest(dir: &Path, split: Split) -> Result<DatasetManifest> {
    let path = dir.join(format!("manifest_{}.txt", split.name()));
    DatasetManifest::parse(&read(&path)?).map_err(|msg| Error::Format { path, msg })
}

fn load_split(dir: &Path, split: Split, grid: &GridSpec, calib: &CameraCalibration) -> Result<Vec<Frame>> {
    let manifest = load_manifest(dir, split)?;
    let mut frames = Vec::new();
    for e in &manifest.entries {
        let image = load_ppm(&dir.join(&e.image))?;
        let gt = load_label_grid(&dir.join(&e.gt))?;
        let geo = load_label_grid(&dir.join(&e.geo))?;
        let primary = load_label_map(&dir.join(&e.seg))?;
        let mismatch = |what: &str| Error::Format {
            path: dir.join(format!("manifest_{}.txt", split.name())),
            msg: format!("frame {}: {what} does not match calib.txt", e.frame),
        };
        if (image.height(), image.width()) != (calib.height(), calib.width())
            || (primary.height(), primary.width()) != (calib.height(), calib.width())
        {
            return Err(mismatch("image size"));
        }
        if gt.dims() != grid.dims || geo.dims() != grid.dims {
            return Err(mismatch("grid size"));
        }
        let mut aux = Vec::new();
        for (name, path) in &e.aux {
            let m = load_label_map(&dir.join(path))?;
            aux.push(AuxMask {
                name: name.clone(),
                height: m.height(),
                width: m.width(),
                mask: m.data().iter().map(|&v| v != 0).collect(),
            });
        }
        frames.push(Frame {
            id: e.frame,
            image,
            cloud: load_cloud(&dir.join(&e.cloud))?,
            gt,
            geo,
            primary,
            aux,
            annotated: e.annotated,
        });
    }
    Ok(frames)
}

/// Writes one frame's files under `dir/frames` and returns its manifest entry.
pub fn save_frame(dir: &Path, split: Split, id: usize, bundle: &FrameBundle, annotated: bool) -> Result<ManifestEntry> {
    let stem = format!("frames/{}_{id:04}", split.name());
    let rel = |ext: &str| PathBuf::from(format!("{stem}.{ext}"));
    let entry = ManifestEntry {
        frame: id,
        image: rel("ppm"),
        cloud: rel("bin"),
        gt: rel("gt.occg"),
        geo: rel("geo.occg"),
        seg: rel("seg.occm"),
        aux: bundle.aux.iter().map(|a| (a.name.clone(), rel(&format!("{}.occm", a.name)))).collect(),
        annotated,
    };
    fs::create_dir_all(dir.join("frames"))?;
    save_ppm(&dir.join(&entry.image), &bundle.image)?;
    save_cloud(&dir.join(&entry.cloud), &bundle.cloud)?;
    save_label_grid(&dir.join(&entry.gt), &bundle.gt)?;
    save_label_grid(&dir.join(&entry.geo), &bundle.geo)?;
    save_label_map(&dir.join(&entry.seg), &bundle.primary)?;
    for (a, (_, path)) in bundle.aux.iter().zip(&entry.aux) {
        let m = LabelMap::from_vec(a.height, a.width, a.mask.iter().map(|&b| b as u16).collect()).expect("mask sized from its dims");
        save_label_map(&dir.join(path), &m)?;
    }
    Ok(entry)
}

/// Parameters of [`generate_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub train_frames: usize,
    pub val_frames: usize,
    pub label_fraction: f64,
    /// Per-frame seeds are derived from `scene.seed` and the frame index.
    pub scene: SceneSpec,
}

impl GenerateOptions {
    pub fn new(train_frames: usize, seed: u64) -> Self {
        Self {
            train_frames,
            val_frames: train_frames.div_ceil(5),
            label_fraction: 0.1,
            scene: SceneSpec::desk(seed),
        }
    }
}

/// Renders and stores train and val frames. Val frames are all annotated;
/// train frames follow interval sampling.
pub fn generate_dataset(dir: &Path, opts: &GenerateOptions) -> Result<()> {
    if !(opts.label_fraction > 0.0 && opts.label_fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {} is outside (0, 1]", opts.label_fraction)));
    }
    fs::create_dir_all(dir)?;
    let annotated: BTreeSet<usize> = interval_sample(opts.train_frames, opts.label_fraction).into_iter().collect();
    let mut calib = None;
    for (split, count, offset) in [(Split::Train, opts.train_frames, 0), (Split::Val, opts.val_frames, opts.train_frames)] {
        let mut manifest = DatasetManifest::default();
        for id in 0..count {
            let mut spec = opts.scene.clone();
            spec.seed = frame_seed(opts.scene.seed, offset + id);
            let bundle = generate_scene(&spec)?;
            let keep = split == Split::Val || annotated.contains(&id);
            manifest.entries.push(save_frame(dir, split, id, &bundle, keep)?);
            calib.get_or_insert(bundle.calib);
        }
        fs::write(dir.join(format!("manifest_{}.txt", split.name())), manifest.to_text())?;
    }
    let cam = &opts.scene.camera;
    let calib = match calib {
        Some(c) => c,
        None => CameraCalibration::looking_forward(cam.position, cam.pitch, cam.focal, cam.height, cam.width)?,
    };
    fs::write(dir.join("calib.txt"), calib_to_text(&calib, &opts.scene.grid))?;
    fs::write(dir.join("taxonomy.txt"), ClassTaxonomy::desk().to_text())?;
    Ok(())
}

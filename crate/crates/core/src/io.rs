//! On-disk formats: depth images, annotation files, the dataset manifest,
//! pose and detection records, metric reports, pipeline configuration and
//! overlay images.
//!
//! Dataset layout under a root directory:
//!
//! ```text
//! manifest.json
//! depth/<video>/<index>.pgm          16-bit depth in millimetres
//! annotations/<video>/<index>.json   joints in sensor pixels
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{DecodeConfig, PoseEstimate};
use crate::depth::{preprocess, resize_factor, DepthFrame, PreprocessConfig, RawDepth};
use crate::grid::{Mask, Point};
use crate::maskgen::{Annotation, JointAnnotation, MapStack, Visibility};
use crate::metrics::{Summary, DEFAULT_THRESHOLD};
use crate::nets::{DetectionArch, RegressionArch};
use crate::skeleton::{JointId, Limb, NUM_CHANNELS, NUM_JOINTS};
use crate::synthdata::{Provenance, SceneParams};
use crate::training::{DatasetSplit, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Schema { path: PathBuf, found: u32 },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl ToString) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

fn check_schema(path: &Path, found: u32) -> Result<(), IoError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(IoError::Schema {
            path: path.to_path_buf(),
            found,
        })
    }
}

fn create_parent(path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| IoError::format(path, e))
}

/// Writes a 16-bit grayscale PGM.
pub fn write_depth_pgm(path: &Path, raw: &RawDepth) -> Result<(), IoError> {
    create_parent(path)?;
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(raw.width as u32, raw.height as u32, raw.millimetres.clone())
            .ok_or_else(|| IoError::format(path, "buffer size does not match dimensions"))?;
    img.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| IoError::format(path, e))
}

/// Reads a grayscale image as millimetre depth.
pub fn read_depth_image(path: &Path) -> Result<RawDepth, IoError> {
    let img = image::open(path).map_err(|e| IoError::format(path, e))?;
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    RawDepth::new(w as usize, h as usize, gray.into_raw()).map_err(|e| IoError::format(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

/// Annotation of one frame in sensor pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    /// Factor mapping these coordinates to the working resolution.
    pub resize_factor: f64,
    pub joints: Vec<JointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl AnnotationFile {
    pub fn from_annotation(ann: &Annotation, resize_factor: f64, provenance: Option<Provenance>) -> Self {
        AnnotationFile {
            schema_version: SCHEMA_VERSION,
            frame_id: ann.frame_id.clone(),
            width: ann.width,
            height: ann.height,
            resize_factor,
            joints: JointId::ALL
                .iter()
                .map(|&j| {
                    let a = ann.joint(j);
                    JointRecord {
                        name: j.short_name().to_string(),
                        x: a.position.x,
                        y: a.position.y,
                        visibility: a.visibility,
                    }
                })
                .collect(),
            provenance,
        }
    }

    /// Annotation at `width × height`, scaling coordinates by `factor`.
    pub fn to_annotation(&self, width: usize, height: usize, factor: f64) -> Result<Annotation, String> {
        if self.joints.len() != NUM_JOINTS {
            return Err(format!("expected {NUM_JOINTS} joints, found {}", self.joints.len()));
        }
        let mut joints = [JointAnnotation::visible(0.0, 0.0); NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        for r in &self.joints {
            let id = JointId::from_short_name(&r.name).ok_or_else(|| format!("unknown joint {:?}", r.name))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(format!("joint {} listed twice", r.name));
            }
            joints[id.index()] = JointAnnotation {
                position: Point::new(r.x, r.y).scale(factor),
                visibility: r.visibility,
            };
        }
        Ok(Annotation {
            frame_id: self.frame_id.clone(),
            width,
            height,
            joints,
        })
    }

    pub fn working_annotation(&self) -> Result<Annotation, String> {
        let w = (self.width as f64 * self.resize_factor).round() as usize;
        let h = (self.height as f64 * self.resize_factor).round() as usize;
        self.to_annotation(w, h, self.resize_factor)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let file: AnnotationFile = read_json(path)?;
        check_schema(path, file.schema_version)?;
        Ok(file)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub id: String,
    pub video: String,
    pub index: usize,
    pub split: SplitName,
    pub depth: String,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub id: String,
    pub seed: u64,
    pub params: SceneParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub params: SceneParams,
    pub preprocess: PreprocessConfig,
    pub validation_fraction: f64,
    pub videos: Vec<ManifestVideo>,
    pub frames: Vec<ManifestFrame>,
}

impl Manifest {
    pub fn split(&self) -> DatasetSplit {
        let mut s = DatasetSplit::default();
        for (i, f) in self.frames.iter().enumerate() {
            match f.split {
                SplitName::Train => s.train.push(i),
                SplitName::Validation => s.validation.push(i),
                SplitName::Test => s.test.push(i),
            }
        }
        s
    }
}

/// A dataset directory with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, IoError> {
        let path = root.join("manifest.json");
        let manifest: Manifest = read_json(&path)?;
        check_schema(&path, manifest.schema_version)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn frames_in(&self, split: SplitName) -> Vec<&ManifestFrame> {
        self.manifest.frames.iter().filter(|f| f.split == split).collect()
    }

    pub fn frame(&self, id: &str) -> Option<&ManifestFrame> {
        self.manifest.frames.iter().find(|f| f.id == id)
    }

    pub fn annotation_file(&self, frame: &ManifestFrame) -> Result<AnnotationFile, IoError> {
        AnnotationFile::read(&self.root.join(&frame.annotation))
    }

    /// Working-resolution annotation of a frame.
    pub fn annotation(&self, frame: &ManifestFrame) -> Result<Annotation, IoError> {
        let path = self.root.join(&frame.annotation);
        let file = AnnotationFile::read(&path)?;
        let pre = &self.manifest.preprocess;
        let factor = resize_factor(file.width, file.height, pre.width, pre.height).map_err(|e| IoError::format(&path, e))?;
        file.to_annotation(pre.width, pre.height, 1.0 / factor)
            .map_err(|m| IoError::format(&path, m))
    }

    pub fn depth(&self, frame: &ManifestFrame) -> Result<DepthFrame, IoError> {
        let path = self.root.join(&frame.depth);
        let raw = read_depth_image(&path)?;
        preprocess(&raw, &self.manifest.preprocess).map_err(|e| IoError::format(&path, e))
    }

    pub fn load(&self, frame: &ManifestFrame) -> Result<(DepthFrame, Annotation), IoError> {
        Ok((self.depth(frame)?, self.annotation(frame)?))
    }
}

/// Paths of one frame relative to the dataset root.
pub fn frame_paths(video: &str, index: usize) -> (String, String) {
    (
        format!("depth/{video}/{index:06}.pgm"),
        format!("annotations/{video}/{index:06}.json"),
    )
}

/// Decoded pose of one frame, or the reason it could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub schema_version: u32,
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run-length encoding of a mask in raster order; runs alternate starting
/// with background.
pub fn rle_encode(mask: &Mask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &v in mask.as_slice() {
        if v != current {
            runs.push(len);
            current = v;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], height: usize, width: usize) -> Result<Mask, String> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (height * width) as u64 {
        return Err(format!("runs cover {total} pixels, expected {}", height * width));
    }
    let mut data = Vec::with_capacity(height * width);
    for (i, &r) in runs.iter().enumerate() {
        data.extend(std::iter::repeat(i % 2 == 1).take(r as usize));
    }
    Ok(Mask::from_vec(height, width, data))
}

/// Thresholded detection maps of one frame, one RLE mask per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub schema_version: u32,
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    pub threshold: f32,
    pub channels: Vec<Vec<u32>>,
}

impl DetectionRecord {
    pub fn from_maps(frame_id: &str, maps: &MapStack, threshold: f32) -> Self {
        let (h, w) = (maps.height(), maps.width());
        DetectionRecord {
            schema_version: SCHEMA_VERSION,
            frame_id: frame_id.to_string(),
            width: w,
            height: h,
            threshold,
            channels: (0..NUM_CHANNELS)
                .map(|c| rle_encode(&crate::metrics::binarize_slice(maps.channel(c), h, w, threshold)))
                .collect(),
        }
    }

    pub fn masks(&self) -> Result<Vec<Mask>, String> {
        if self.channels.len() != NUM_CHANNELS {
            return Err(format!("expected {NUM_CHANNELS} channels, found {}", self.channels.len()));
        }
        self.channels
            .iter()
            .map(|runs| rle_decode(runs, self.height, self.width))
            .collect()
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| IoError::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_pose_records(path: &Path) -> Result<Vec<PoseRecord>, IoError> {
    let records: Vec<PoseRecord> = read_jsonl(path)?;
    for r in &records {
        check_schema(path, r.schema_version)?;
    }
    Ok(records)
}

pub fn read_detection_records(path: &Path) -> Result<Vec<DetectionRecord>, IoError> {
    let records: Vec<DetectionRecord> = read_jsonl(path)?;
    for r in &records {
        check_schema(path, r.schema_version)?;
    }
    Ok(records)
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub item: String,
    pub metric: String,
    pub median: f64,
    pub iqr: f64,
    pub n: usize,
}

impl ReportRow {
    pub fn new(section: &str, item: &str, metric: &str, s: &Summary) -> Self {
        ReportRow {
            section: section.to_string(),
            item: item.to_string(),
            metric: metric.to_string(),
            median: s.median,
            iqr: s.iqr,
            n: s.n,
        }
    }
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| IoError::format(path, e))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::format(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data/synth".into(),
            checkpoints: "runs/checkpoints".into(),
            outputs: "runs/outputs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames_per_video: usize,
    pub scene: SceneParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 4,
            frames_per_video: 540,
            scene: SceneParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f32,
    /// RMSD charged for a visible joint with no estimate; defaults to the
    /// image diagonal.
    pub missing_penalty: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: DEFAULT_THRESHOLD,
            missing_penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub preprocess: PreprocessConfig,
    pub synth: SynthConfig,
    pub detection: DetectionArch,
    pub regression: RegressionArch,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_toml(&read_text(path)?).map_err(|m| IoError::format(path, m))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.synth.scene.validate().map_err(|e| e.to_string())?;
        self.detection.validate().map_err(|e| e.to_string())?;
        self.regression.validate().map_err(|e| e.to_string())?;
        if (self.preprocess.width, self.preprocess.height) != (self.train.width, self.train.height) {
            return Err(format!(
                "preprocess resolution {}x{} differs from training resolution {}x{}",
                self.preprocess.width, self.preprocess.height, self.train.width, self.train.height
            ));
        }
        if !(self.preprocess.max_range_mm > 0.0) {
            return Err("preprocess.max_range_mm must be positive".into());
        }
        if self.synth.videos == 0 || self.synth.frames_per_video == 0 {
            return Err("synth.videos and synth.frames_per_video must be positive".into());
        }
        let d = &self.decode;
        if !(0.0..=1.0).contains(&d.nms_threshold) || !(0.0..=1.0).contains(&d.pair_threshold) {
            return Err("decode thresholds must lie in [0, 1]".into());
        }
        if d.nms_window < 3 || d.nms_window % 2 == 0 || d.min_distance < 0.0 {
            return Err("decode.nms_window must be odd and at least 3, decode.min_distance non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err("eval.threshold must lie in [0, 1]".into());
        }
        Ok(())
    }
}

pub fn limb_color(limb: Limb) -> Rgb<u8> {
    match limb {
        Limb::RightArm => Rgb([0, 200, 0]),
        Limb::LeftArm => Rgb([220, 0, 0]),
        Limb::RightLeg => Rgb([0, 80, 255]),
        Limb::LeftLeg => Rgb([255, 220, 0]),
    }
}

/// Depth frame as grayscale (near is bright), upscaled by `zoom`, with the
/// pose drawn in limb colors.
pub fn render_overlay(frame: &DepthFrame, pose: &PoseEstimate, zoom: u32) -> RgbImage {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let vals = frame.depth.as_slice();
    let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::from_fn(w * zoom, h * zoom, |x, y| {
        let v = frame.depth.at((x / zoom) as usize, (y / zoom) as usize);
        let g = (255.0 * (1.0 - (v - lo) / span)).round() as u8;
        Rgb([g, g, g])
    });
    let z = zoom as f32;
    for limb in &pose.limbs {
        let color = limb_color(limb.limb);
        let pts: Vec<Option<(f32, f32)>> = limb
            .joints
            .iter()
            .map(|j| j.map(|j| (j.position.x as f32 * z, j.position.y as f32 * z)))
            .collect();
        for k in 0..2 {
            if let (Some(a), Some(b), Some(_)) = (pts[k], pts[k + 1], limb.connections[k]) {
                for off in [-1.0f32, 0.0, 1.0] {
                    draw_line_segment_mut(&mut img, (a.0 + off, a.1), (b.0 + off, b.1), color);
                    draw_line_segment_mut(&mut img, (a.0, a.1 + off), (b.0, b.1 + off), color);
                }
            }
        }
        for p in pts.into_iter().flatten() {
            draw_filled_circle_mut(&mut img, (p.0.round() as i32, p.1.round() as i32), (zoom as i32).max(2), color);
        }
    }
    img
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    create_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::format(path, e))
}

/// Appends lines to a file, creating it and its directory first.
pub fn append_line(path: &Path, line: &str) -> Result<(), IoError> {
    create_parent(path)?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| IoError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| IoError::io(path, e))
}

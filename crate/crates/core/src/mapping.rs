//! Scene-map construction: image frames to geolocated words, and the model's
//! MAP labeling flattened to a 2D [`SceneMap`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SceneMap;
use crate::inference::{insert_observation, mode_of_cell};
use crate::model::{SceneModel, TopicId, WordId, WordObservation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be > 0"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Pinhole projection of a camera-frame point with positive depth.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl FramePose {
    pub const IDENTITY: FramePose = FramePose {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = FramePose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        FramePose {
            translation: t,
            ..Self::IDENTITY
        }
    }

    /// Rotation about the depth axis by `theta` radians.
    pub fn yaw(theta: f64, translation: [f64; 3]) -> Self {
        let (s, c) = theta.sin_cos();
        FramePose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][a] * r[k][b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(Error::invalid("pose rotation is not orthonormal"));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("pose rotation has determinant != +1"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose translation must be finite"));
        }
        Ok(())
    }

    pub fn inverse(&self) -> FramePose {
        let r = &self.rotation;
        let mut rt = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                rt[a][b] = r[b][a];
            }
        }
        let t = self.translation;
        let mut ti = [0.0; 3];
        for a in 0..3 {
            ti[a] = -(0..3).map(|k| rt[a][k] * t[k]).sum::<f64>();
        }
        FramePose {
            rotation: rt,
            translation: ti,
        }
    }
}

/// An RGB-D frame. Depth entries that are non-finite or `<= 0` are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
    /// Meters.
    pub depth: Vec<f32>,
}

impl Frame {
    pub fn new(t: f64, width: usize, height: usize, rgb: Vec<[u8; 3]>, depth: Vec<f32>) -> Result<Self> {
        if rgb.len() != width * height || depth.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} frame with {} color and {} depth samples",
                rgb.len(),
                depth.len()
            )));
        }
        Ok(Frame {
            t,
            width,
            height,
            rgb,
            depth,
        })
    }

    pub fn uniform(t: f64, width: usize, height: usize, color: [u8; 3], depth: f32) -> Self {
        Frame {
            t,
            width,
            height,
            rgb: vec![color; width * height],
            depth: vec![depth; width * height],
        }
    }

    pub fn depth_at(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.depth[v * self.width + u];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

pub const HUE_BINS: usize = 8;
pub const ORIENTATION_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = HUE_BINS + ORIENTATION_BINS;
pub const DEFAULT_STRIDE: usize = 8;

/// Word vocabulary: one descriptor centroid per word.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("codebook is empty"));
        }
        if centroids.iter().any(|c| c.len() != DESCRIPTOR_LEN) {
            return Err(Error::invalid(format!(
                "codebook descriptors must have {DESCRIPTOR_LEN} values"
            )));
        }
        Ok(Codebook { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Nearest centroid under Euclidean distance; ties go to the lower id.
    pub fn nearest(&self, descriptor: &[f64]) -> WordId {
        let mut best = (0usize, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(descriptor).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0 as WordId
    }
}

fn hue_bin(rgb: [u8; 3]) -> usize {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return 0;
    }
    let hue = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    ((hue / 6.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1)
}

fn intensity(rgb: [u8; 3]) -> f64 {
    (rgb[0] as f64 + rgb[1] as f64 + rgb[2] as f64) / (3.0 * 255.0)
}

/// Descriptor of the `size`×`size` patch with top-left corner `(x0, y0)`:
/// a normalized hue histogram followed by a gradient-orientation histogram
/// weighted by gradient magnitude and divided by the pixel count.
pub fn patch_descriptor(frame: &Frame, x0: usize, y0: usize, size: usize) -> Vec<f64> {
    let mut d = vec![0.0; DESCRIPTOR_LEN];
    let n = (size * size) as f64;
    let px = |x: usize, y: usize| frame.rgb[y * frame.width + x];
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            d[hue_bin(px(x, y))] += 1.0 / n;
            // Central differences, clamped at the frame border.
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(frame.width - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(frame.height - 1);
            let gx = intensity(px(xr, y)) - intensity(px(xl, y));
            let gy = intensity(px(x, yd)) - intensity(px(x, yu));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((angle / std::f64::consts::TAU * ORIENTATION_BINS as f64) as usize)
                    .min(ORIENTATION_BINS - 1);
                d[HUE_BINS + bin] += mag / n;
            }
        }
    }
    d
}

/// A feature sampled at a patch center.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feature {
    pub u: usize,
    pub v: usize,
    pub word: WordId,
}

/// Dense-grid features: full `stride`×`stride` patches, each quantized to
/// its nearest codebook word and reported at the patch center.
pub fn extract_features(frame: &Frame, codebook: &Codebook, stride: usize) -> Vec<Feature> {
    let stride = stride.max(1);
    if frame.width < stride || frame.height < stride {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y0 in (0..=frame.height - stride).step_by(stride) {
        for x0 in (0..=frame.width - stride).step_by(stride) {
            let desc = patch_descriptor(frame, x0, y0, stride);
            out.push(Feature {
                u: x0 + stride / 2,
                v: y0 + stride / 2,
                word: codebook.nearest(&desc),
            });
        }
    }
    out
}

/// Camera-frame point seen at pixel `(u, v)` with the given depth.
pub fn back_project(u: f64, v: f64, depth: f64, intr: &CameraIntrinsics) -> [f64; 3] {
    [(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth]
}

pub fn transform_frame(p: [f64; 3], pose: &FramePose) -> [f64; 3] {
    let r = &pose.rotation;
    let mut out = [0.0; 3];
    for (a, o) in out.iter_mut().enumerate() {
        *o = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + pose.translation[a];
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub inserted: usize,
    pub invalid_depth: usize,
}

/// Geolocates the frame's features without touching the model.
pub fn frame_observations(
    frame: &Frame,
    pose: &FramePose,
    intr: &CameraIntrinsics,
    codebook: &Codebook,
    stride: usize,
) -> (Vec<WordObservation>, usize) {
    let mut obs = Vec::new();
    let mut invalid = 0;
    for f in extract_features(frame, codebook, stride) {
        match frame.depth_at(f.u, f.v) {
            Some(depth) => {
                let p = back_project(f.u as f64, f.v as f64, depth, intr);
                obs.push(WordObservation::new(frame.t, f.word, transform_frame(p, pose)));
            }
            None => invalid += 1,
        }
    }
    (obs, invalid)
}

/// Inserts every feature with valid depth into the model.
pub fn process_frame<R: Rng + ?Sized>(
    m: &mut SceneModel,
    frame: &Frame,
    pose: &FramePose,
    intr: &CameraIntrinsics,
    codebook: &Codebook,
    stride: usize,
    rng: &mut R,
) -> Result<FrameStats> {
    pose.validate()?;
    if codebook.len() != m.vocab_size() {
        return Err(Error::invalid(format!(
            "codebook has {} words, model vocabulary is {}",
            codebook.len(),
            m.vocab_size()
        )));
    }
    let (obs, invalid_depth) = frame_observations(frame, pose, intr, codebook, stride);
    for o in &obs {
        insert_observation(m, o, rng)?;
    }
    Ok(FrameStats {
        inserted: obs.len(),
        invalid_depth,
    })
}

/// Flattens the MAP labeling to 2D.
///
/// When several depth cells share `(i, j)`, the one with the most
/// observations wins, then the smallest `k`. Topics are compacted to
/// `1..=P` in order of first appearance in raster scan over a bounding box
/// tight around the occupied cells.
pub fn snapshot_scene_map(m: &SceneModel) -> SceneMap {
    let cs = m.params().cell_size;
    // (i, j) -> (observations, k, topic)
    let mut columns: HashMap<(i64, i64), (usize, i64, TopicId)> = HashMap::new();
    for cell in m.cells() {
        let Some(topic) = mode_of_cell(cell) else {
            continue;
        };
        let key = (cell.coord.i, cell.coord.j);
        let candidate = (cell.len(), cell.coord.k, topic);
        columns
            .entry(key)
            .and_modify(|cur| {
                if candidate.0 > cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    if columns.is_empty() {
        return SceneMap::empty([cs[0], cs[1]]);
    }
    let i0 = columns.keys().map(|k| k.0).min().unwrap();
    let i1 = columns.keys().map(|k| k.0).max().unwrap();
    let j0 = columns.keys().map(|k| k.1).min().unwrap();
    let j1 = columns.keys().map(|k| k.1).max().unwrap();
    let width = (i1 - i0 + 1) as usize;
    let height = (j1 - j0 + 1) as usize;
    let mut raw = vec![0 as TopicId; width * height];
    for (&(i, j), &(_, _, topic)) in &columns {
        raw[(j - j0) as usize * width + (i - i0) as usize] = topic;
    }
    let mut compact: HashMap<TopicId, u32> = HashMap::new();
    let mut palette = Vec::new();
    let labels = raw
        .iter()
        .map(|&t| {
            if t == 0 {
                return 0;
            }
            *compact.entry(t).or_insert_with(|| {
                palette.push(t);
                palette.len() as u32
            })
        })
        .collect();
    SceneMap {
        origin: [i0, j0],
        width,
        height,
        cell_size: [cs[0], cs[1]],
        labels,
        palette,
    }
}

/// One entry of a frame manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub t: f64,
    pub image: PathBuf,
    pub depth: PathBuf,
    pub pose: FramePose,
}

/// Reads a pose manifest: one frame per line,
/// `t image depth r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz`, with
/// image paths relative to the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::parse(n + 1, msg).in_file(path);
        if f.len() != 15 {
            return Err(err(format!("expected 15 fields, found {}", f.len())));
        }
        let nums = f[3..]
            .iter()
            .chain(std::iter::once(&f[0]))
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| err(format!("invalid number: {e}")))?;
        let rotation = [
            [nums[0], nums[1], nums[2]],
            [nums[3], nums[4], nums[5]],
            [nums[6], nums[7], nums[8]],
        ];
        let pose = FramePose::new(rotation, [nums[9], nums[10], nums[11]]).map_err(|e| err(e.to_string()))?;
        out.push(ManifestEntry {
            t: nums[12],
            image: dir.join(f[1]),
            depth: dir.join(f[2]),
            pose,
        });
    }
    Ok(out)
}

/// Loads a color image and a 16-bit depth image in millimeters (0 =
/// invalid) as one frame.
pub fn load_frame(t: f64, image: &Path, depth: &Path) -> Result<Frame> {
    let rgb = image::open(image)
        .map_err(|e| Error::from(e).in_file(image))?
        .to_rgb8();
    let d = image::open(depth)
        .map_err(|e| Error::from(e).in_file(depth))?
        .to_luma16();
    if rgb.dimensions() != d.dimensions() {
        return Err(Error::ShapeMismatch(format!(
            "color {:?} and depth {:?} differ",
            rgb.dimensions(),
            d.dimensions()
        )));
    }
    let (w, h) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    let depth = d
        .pixels()
        .map(|p| if p.0[0] == 0 { f32::NAN } else { p.0[0] as f32 / 1000.0 })
        .collect();
    Frame::new(t, w as usize, h as usize, pixels, depth)
}

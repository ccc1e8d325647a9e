//! Procedural infant depth scenes with exact joint annotations.
//!
//! A scene is an infant lying on a mattress seen from above: an elliptical
//! torso and four limbs drawn as capsules (thick segments), nearer to the
//! camera than the mattress plane. Scenes are rasterized at sensor
//! resolution in millimetres, with optional Gaussian depth noise and
//! occluder patches over limb ends, then preprocessed like real sensor
//! frames. Each frame draws from its own RNG stream derived from
//! `(seed, index)`, so frames can be generated in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{preprocess, DepthError, DepthFrame, PreprocessConfig, RawDepth, NATIVE_HEIGHT, NATIVE_WIDTH};
use crate::grid::{Mask, Point};
use crate::maskgen::{Annotation, JointAnnotation, Visibility};
use crate::skeleton::{ConnectionId, JointId, Limb, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Depth(#[from] DepthError),
}

/// Inclusive `[lo, hi]` sampling range.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    /// Torso center, native pixels.
    pub torso_center_x: Range,
    pub torso_center_y: Range,
    pub torso_half_width: Range,
    pub torso_half_height: Range,
    pub torso_rotation_deg: Range,
    pub upper_arm_length: Range,
    pub forearm_length: Range,
    pub thigh_length: Range,
    pub shin_length: Range,
    /// Arm angle away from the torso's long axis, towards the outside.
    pub shoulder_angle_deg: Range,
    /// Forearm bend relative to the upper arm.
    pub elbow_angle_deg: Range,
    pub hip_angle_deg: Range,
    pub knee_angle_deg: Range,
    /// Apparent size factor emulating camera distance; within `[0.5, 1.5]`.
    pub scale: Range,
    /// Capsule radii in native pixels at scale 1.
    pub arm_radius: f64,
    pub leg_radius: f64,
    pub occluder_radius: f64,
    /// Camera-to-mattress distance at scale 1, millimetres.
    pub background_mm: f64,
    /// Heights above the mattress, millimetres.
    pub torso_height_mm: f64,
    pub limb_height_mm: f64,
    pub occluder_height_mm: f64,
    pub depth_noise_mm: f64,
    /// Probability that a limb's distal joint is covered by an occluder.
    pub occluder_prob: f64,
    pub native_width: usize,
    pub native_height: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            torso_center_x: [290.0, 350.0],
            torso_center_y: [210.0, 270.0],
            torso_half_width: [40.0, 48.0],
            torso_half_height: [62.0, 74.0],
            torso_rotation_deg: [-15.0, 15.0],
            upper_arm_length: [48.0, 58.0],
            forearm_length: [44.0, 54.0],
            thigh_length: [55.0, 66.0],
            shin_length: [50.0, 60.0],
            shoulder_angle_deg: [25.0, 150.0],
            elbow_angle_deg: [-60.0, 60.0],
            hip_angle_deg: [0.0, 40.0],
            knee_angle_deg: [-45.0, 45.0],
            scale: [0.8, 1.2],
            arm_radius: 14.0,
            leg_radius: 17.0,
            occluder_radius: 22.0,
            background_mm: 1000.0,
            torso_height_mm: 70.0,
            limb_height_mm: 100.0,
            occluder_height_mm: 160.0,
            depth_noise_mm: 4.0,
            occluder_prob: 0.1,
            native_width: NATIVE_WIDTH,
            native_height: NATIVE_HEIGHT,
        }
    }
}

fn sample(rng: &mut impl Rng, r: Range) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ranges = [
            ("torso_center_x", self.torso_center_x),
            ("torso_center_y", self.torso_center_y),
            ("torso_half_width", self.torso_half_width),
            ("torso_half_height", self.torso_half_height),
            ("torso_rotation_deg", self.torso_rotation_deg),
            ("upper_arm_length", self.upper_arm_length),
            ("forearm_length", self.forearm_length),
            ("thigh_length", self.thigh_length),
            ("shin_length", self.shin_length),
            ("shoulder_angle_deg", self.shoulder_angle_deg),
            ("elbow_angle_deg", self.elbow_angle_deg),
            ("hip_angle_deg", self.hip_angle_deg),
            ("knee_angle_deg", self.knee_angle_deg),
            ("scale", self.scale),
        ];
        for (name, r) in ranges {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(SynthError::Params(format!("{name}: [{}, {}] is not a valid range", r[0], r[1])));
            }
        }
        let positive = [
            ("torso_half_width", self.torso_half_width[0]),
            ("torso_half_height", self.torso_half_height[0]),
            ("upper_arm_length", self.upper_arm_length[0]),
            ("forearm_length", self.forearm_length[0]),
            ("thigh_length", self.thigh_length[0]),
            ("shin_length", self.shin_length[0]),
            ("arm_radius", self.arm_radius),
            ("leg_radius", self.leg_radius),
            ("occluder_radius", self.occluder_radius),
            ("background_mm", self.background_mm),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(SynthError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        if self.scale[0] < 0.5 || self.scale[1] > 1.5 {
            return Err(SynthError::Params(format!("scale range {:?} leaves [0.5, 1.5]", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return Err(SynthError::Params(format!("occluder_prob {} not in [0, 1]", self.occluder_prob)));
        }
        if self.depth_noise_mm < 0.0 {
            return Err(SynthError::Params("depth_noise_mm must be non-negative".into()));
        }
        if self.occluder_height_mm <= self.limb_height_mm || self.limb_height_mm <= self.torso_height_mm {
            return Err(SynthError::Params(
                "heights must increase from torso to limbs to occluders".into(),
            ));
        }
        if self.background_mm / self.scale[0] - self.occluder_height_mm <= 0.0 {
            return Err(SynthError::Params("occluders would lie behind the camera".into()));
        }
        Ok(())
    }

    /// Parameters of one synthetic "patient": a narrower draw around a
    /// patient-specific body size, torso placement and camera distance.
    pub fn patient(&self, seed: u64, patient: u64) -> SceneParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_1A_u64.wrapping_mul(patient + 1));
        let mut p = self.clone();
        let s = sample(&mut rng, self.scale);
        p.scale = [(s - 0.05).max(self.scale[0]), (s + 0.05).min(self.scale[1])];
        let body = rng.gen_range(0.92..=1.08);
        for r in [
            &mut p.torso_half_width,
            &mut p.torso_half_height,
            &mut p.upper_arm_length,
            &mut p.forearm_length,
            &mut p.thigh_length,
            &mut p.shin_length,
        ] {
            *r = [r[0] * body, r[1] * body];
        }
        let cx = sample(&mut rng, self.torso_center_x);
        let cy = sample(&mut rng, self.torso_center_y);
        let half_x = (self.torso_center_x[1] - self.torso_center_x[0]) / 4.0;
        let half_y = (self.torso_center_y[1] - self.torso_center_y[0]) / 4.0;
        p.torso_center_x = [cx - half_x, cx + half_x];
        p.torso_center_y = [cy - half_y, cy + half_y];
        p
    }
}

/// Joint layout of one scene in native pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSample {
    pub joints: [Point; NUM_JOINTS],
    pub visibility: [Visibility; NUM_JOINTS],
    pub torso_center: Point,
    pub torso_rotation: f64,
    pub torso_half_width: f64,
    pub torso_half_height: f64,
    pub scale: f64,
    /// Limbs whose distal joint is covered by an occluder.
    pub occluded: [bool; 4],
}

fn rotate_dir(down: Point, out: Point, angle: f64) -> Point {
    Point::new(
        angle.cos() * down.x + angle.sin() * out.x,
        angle.cos() * down.y + angle.sin() * out.y,
    )
}

/// Draws torso placement, limb lengths and articulation angles.
pub fn sample_skeleton(params: &SceneParams, rng: &mut impl Rng) -> SkeletonSample {
    let s = sample(rng, params.scale);
    let c = Point::new(sample(rng, params.torso_center_x), sample(rng, params.torso_center_y));
    let phi = sample(rng, params.torso_rotation_deg).to_radians();
    let hw = sample(rng, params.torso_half_width);
    let hh = sample(rng, params.torso_half_height);
    // torso axes: `down` points to the feet, `right` to the image right
    let down = Point::new(-phi.sin(), phi.cos());
    let right = Point::new(phi.cos(), phi.sin());
    let at = |u: f64, v: f64| Point::new(c.x + s * (u * right.x + v * down.x), c.y + s * (u * right.y + v * down.y));

    let mut joints = [Point::default(); NUM_JOINTS];
    for limb in Limb::ALL {
        // the infant faces the camera: its right side is on the image left
        let side = match limb {
            Limb::RightArm | Limb::RightLeg => -1.0,
            Limb::LeftArm | Limb::LeftLeg => 1.0,
        };
        let outward = right.scale(side);
        let (anchor, l1, l2, a1, a2) = match limb {
            Limb::RightArm | Limb::LeftArm => (
                at(side * 0.85 * hw, -0.8 * hh),
                params.upper_arm_length,
                params.forearm_length,
                params.shoulder_angle_deg,
                params.elbow_angle_deg,
            ),
            Limb::RightLeg | Limb::LeftLeg => (
                at(side * 0.55 * hw, 0.9 * hh),
                params.thigh_length,
                params.shin_length,
                params.hip_angle_deg,
                params.knee_angle_deg,
            ),
        };
        let len1 = sample(rng, l1) * s;
        let len2 = sample(rng, l2) * s;
        let ang1 = sample(rng, a1).to_radians();
        let ang2 = ang1 + sample(rng, a2).to_radians();
        let d1 = rotate_dir(down, outward, ang1);
        let d2 = rotate_dir(down, outward, ang2);
        let mid = Point::new(anchor.x + len1 * d1.x, anchor.y + len1 * d1.y);
        let end = Point::new(mid.x + len2 * d2.x, mid.y + len2 * d2.y);
        let [j0, j1, j2] = limb.joints();
        joints[j0.index()] = anchor;
        joints[j1.index()] = mid;
        joints[j2.index()] = end;
    }
    let mut occluded = [false; 4];
    for flag in occluded.iter_mut() {
        *flag = rng.gen_bool(params.occluder_prob);
    }
    let mut visibility = [Visibility::Visible; NUM_JOINTS];
    for j in JointId::ALL {
        if !joints[j.index()].in_bounds(params.native_width, params.native_height) {
            visibility[j.index()] = Visibility::OutOfFrame;
        }
    }
    for limb in Limb::ALL {
        let distal = limb.joints()[2];
        if occluded[limb.index()] && visibility[distal.index()] == Visibility::Visible {
            visibility[distal.index()] = Visibility::Occluded;
        }
    }
    SkeletonSample {
        joints,
        visibility,
        torso_center: c,
        torso_rotation: phi,
        torso_half_width: hw,
        torso_half_height: hh,
        scale: s,
        occluded,
    }
}

fn limb_radius(params: &SceneParams, limb: Limb) -> f64 {
    match limb {
        Limb::RightArm | Limb::LeftArm => params.arm_radius,
        Limb::RightLeg | Limb::LeftLeg => params.leg_radius,
    }
}

fn segment_dist_sq(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0)
    };
    p.dist_sq(Point::new(a.x + t * dx, a.y + t * dy))
}

/// Writes `value` wherever it is nearer than the current depth, over the
/// pixels whose centers satisfy `inside`, within a bounding box.
fn splat(
    depth: &mut [f64],
    width: usize,
    height: usize,
    bbox: (f64, f64, f64, f64),
    value: f64,
    inside: impl Fn(Point) -> bool,
) {
    let x0 = bbox.0.floor().max(0.0) as usize;
    let y0 = bbox.1.floor().max(0.0) as usize;
    let x1 = (bbox.2.ceil().max(0.0) as usize).min(width);
    let y1 = (bbox.3.ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(Point::pixel_center(x, y)) {
                let d = &mut depth[y * width + x];
                if value < *d {
                    *d = value;
                }
            }
        }
    }
}

/// Noise-free scene depth in millimetres at native resolution.
pub fn render_clean(skel: &SkeletonSample, params: &SceneParams) -> Vec<f64> {
    let (w, h) = (params.native_width, params.native_height);
    let mattress = params.background_mm / skel.scale;
    let mut depth = vec![mattress; w * h];
    let s = skel.scale;

    let (c, phi) = (skel.torso_center, skel.torso_rotation);
    let (a, b) = (skel.torso_half_width * s, skel.torso_half_height * s);
    let r = a.max(b);
    splat(&mut depth, w, h, (c.x - r, c.y - r, c.x + r, c.y + r), mattress - params.torso_height_mm, |p| {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let u = dx * phi.cos() + dy * phi.sin();
        let v = -dx * phi.sin() + dy * phi.cos();
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    });

    for conn in ConnectionId::ALL {
        let (ja, jb) = conn.endpoints();
        let (p, q) = (skel.joints[ja.index()], skel.joints[jb.index()]);
        let rad = limb_radius(params, conn.limb()) * s;
        let bbox = (p.x.min(q.x) - rad, p.y.min(q.y) - rad, p.x.max(q.x) + rad, p.y.max(q.y) + rad);
        splat(&mut depth, w, h, bbox, mattress - params.limb_height_mm, |pt| {
            segment_dist_sq(pt, p, q) <= rad * rad
        });
    }

    for limb in Limb::ALL {
        if !skel.occluded[limb.index()] {
            continue;
        }
        let o = skel.joints[limb.joints()[2].index()];
        let rad = params.occluder_radius * s;
        splat(&mut depth, w, h, (o.x - rad, o.y - rad, o.x + rad, o.y + rad), mattress - params.occluder_height_mm, |pt| {
            pt.dist_sq(o) <= rad * rad
        });
    }
    depth
}

/// Sensor frame with additive Gaussian noise, quantized to millimetres.
pub fn render_raw(skel: &SkeletonSample, params: &SceneParams, rng: &mut impl Rng) -> RawDepth {
    let clean = render_clean(skel, params);
    let noise = (params.depth_noise_mm > 0.0).then(|| Normal::new(0.0, params.depth_noise_mm).expect("sigma > 0"));
    let mm = clean
        .into_iter()
        .map(|d| {
            let v = match &noise {
                Some(n) => d + n.sample(rng),
                None => d,
            };
            v.round().clamp(1.0, u16::MAX as f64) as u16
        })
        .collect();
    RawDepth {
        width: params.native_width,
        height: params.native_height,
        millimetres: mm,
    }
}

/// Rendered and preprocessed depth frame.
pub fn render_depth(
    skel: &SkeletonSample,
    params: &SceneParams,
    pre: &PreprocessConfig,
    rng: &mut impl Rng,
) -> Result<DepthFrame, SynthError> {
    Ok(preprocess(&render_raw(skel, params, rng), pre)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub index: u64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub depth: DepthFrame,
    pub annotation: Annotation,
    pub skeleton: SkeletonSample,
    pub provenance: Provenance,
}

pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Native-resolution annotation of a skeleton.
pub fn native_annotation(frame_id: &str, skel: &SkeletonSample, params: &SceneParams) -> Annotation {
    annotation_at(frame_id, skel, params.native_width, params.native_height, 1.0)
}

fn annotation_at(frame_id: &str, skel: &SkeletonSample, width: usize, height: usize, factor: f64) -> Annotation {
    let mut joints = [JointAnnotation::visible(0.0, 0.0); NUM_JOINTS];
    for (i, j) in joints.iter_mut().enumerate() {
        *j = JointAnnotation {
            position: skel.joints[i].scale(factor),
            visibility: skel.visibility[i],
        };
    }
    Annotation {
        frame_id: frame_id.to_string(),
        width,
        height,
        joints,
    }
}

/// One frame: skeleton, raw sensor depth and native annotation.
pub fn generate_raw_frame(params: &SceneParams, seed: u64, index: u64) -> (SkeletonSample, RawDepth) {
    let mut rng = frame_rng(seed, index);
    let skel = sample_skeleton(params, &mut rng);
    let raw = render_raw(&skel, params, &mut rng);
    (skel, raw)
}

pub fn generate_frame(
    params: &SceneParams,
    pre: &PreprocessConfig,
    seed: u64,
    index: u64,
    frame_id: &str,
) -> Result<SyntheticFrame, SynthError> {
    let (skel, raw) = generate_raw_frame(params, seed, index);
    let depth = preprocess(&raw, pre)?;
    let annotation = annotation_at(frame_id, &skel, depth.width(), depth.height(), depth.scale);
    Ok(SyntheticFrame {
        depth,
        annotation,
        provenance: Provenance {
            seed,
            index,
            scale: skel.scale,
        },
        skeleton: skel,
    })
}

/// `n` frames with ids `"{prefix}{index:06}"`.
pub fn generate_dataset(
    n: usize,
    params: &SceneParams,
    pre: &PreprocessConfig,
    seed: u64,
    prefix: &str,
) -> Result<Vec<SyntheticFrame>, SynthError> {
    params.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_frame(params, pre, seed, i, &format!("{prefix}{i:06}")))
        .collect()
}

impl SyntheticFrame {
    /// Working-resolution pixels covered by the capsule of one connection
    /// and rendered nearer than the mattress.
    pub fn limb_pixels(&self, conn: ConnectionId, params: &SceneParams) -> Mask {
        let f = self.depth.scale;
        let (ja, jb) = conn.endpoints();
        let p = self.skeleton.joints[ja.index()].scale(f);
        let q = self.skeleton.joints[jb.index()].scale(f);
        let rad = limb_radius(params, conn.limb()) * self.skeleton.scale * f;
        let mattress = params.background_mm / self.skeleton.scale / self.depth.max_range_mm;
        let threshold = (mattress - 0.5 * params.torso_height_mm / self.depth.max_range_mm) as f32;
        Mask::from_fn(self.depth.height(), self.depth.width(), |x, y| {
            let c = Point::pixel_center(x, y);
            segment_dist_sq(c, p, q) <= rad * rad && self.depth.depth.at(x, y) < threshold
        })
    }
}

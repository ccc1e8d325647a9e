//! Ground-truth target maps.
//!
//! Detection targets are binary: a disc of radius `r` around each joint and a
//! rectangle of total thickness `r` centered on each joint connection.
//! Regression targets replace the disc with a 2D Gaussian of standard
//! deviation `sigma` around the joint, and fill the connection rectangle with
//! a 1D Gaussian along the connection direction, peaking at its midpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask, Point};
use crate::skeleton::{ConnectionId, JointId, NUM_CHANNELS, NUM_JOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("degenerate connection: both endpoints at ({x}, {y})")]
    DegenerateConnection { x: f64, y: f64 },
    #[error("annotation is {ann_w}x{ann_h} but targets were requested at {width}x{height}")]
    ResolutionMismatch {
        ann_w: usize,
        ann_h: usize,
        width: usize,
        height: usize,
    },
    #[error("visible joint {joint} at ({x}, {y}) lies outside the {width}x{height} frame")]
    JointOutOfBounds {
        joint: JointId,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("map stack has {0} values, expected {1}")]
    StackSize(usize, usize),
}

/// Geometry of the ground-truth maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// Joint disc radius and connection thickness, in working-resolution pixels.
    pub radius: f64,
    /// Gaussian standard deviation as a multiple of `radius`.
    pub sigma_factor: f64,
    /// Absolute standard deviation; overrides `sigma_factor` when set.
    pub sigma: Option<f64>,
    /// Zero the joint Gaussian beyond this distance from the joint center.
    pub joint_truncation: Option<f64>,
    /// Connection rectangle total width as a multiple of `radius`.
    pub thickness_factor: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            radius: 6.0,
            sigma_factor: 3.0,
            sigma: None,
            joint_truncation: None,
            thickness_factor: 1.0,
        }
    }
}

impl TargetConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.sigma_factor * self.radius)
    }

    pub fn thickness(&self) -> f64 {
        self.thickness_factor * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Visible,
    Occluded,
    OutOfFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAnnotation {
    pub position: Point,
    pub visibility: Visibility,
}

impl JointAnnotation {
    pub fn visible(x: f64, y: f64) -> Self {
        JointAnnotation {
            position: Point::new(x, y),
            visibility: Visibility::Visible,
        }
    }

    pub fn is_visible(&self) -> bool {
        self.visibility == Visibility::Visible
    }
}

/// Ground-truth joints of one frame at working resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    pub joints: [JointAnnotation; NUM_JOINTS],
}

impl Annotation {
    pub fn joint(&self, id: JointId) -> &JointAnnotation {
        &self.joints[id.index()]
    }

    /// Position of a joint if it is visible.
    pub fn visible_position(&self, id: JointId) -> Option<Point> {
        let j = self.joint(id);
        j.is_visible().then_some(j.position)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        for id in JointId::ALL {
            let j = self.joint(id);
            if j.is_visible() && !j.position.in_bounds(self.width, self.height) {
                return Err(MaskError::JointOutOfBounds {
                    joint: id,
                    x: j.position.x,
                    y: j.position.y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Binary detection targets, values in {0, 1}.
    Binary,
    /// Gaussian regression targets, values in [0, 1].
    Gaussian,
    /// Network output.
    Prediction,
}

/// 20 maps (12 joints, then 8 connections) of one frame, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub kind: MapKind,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl MapStack {
    pub fn zeros(kind: MapKind, height: usize, width: usize) -> Self {
        MapStack {
            kind,
            height,
            width,
            data: vec![0.0; NUM_CHANNELS * height * width],
        }
    }

    pub fn from_vec(kind: MapKind, height: usize, width: usize, data: Vec<f32>) -> Result<Self, MaskError> {
        let expected = NUM_CHANNELS * height * width;
        if data.len() != expected {
            return Err(MaskError::StackSize(data.len(), expected));
        }
        Ok(MapStack { kind, height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, index: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn channel_mut(&mut self, index: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn channel_grid(&self, index: usize) -> Grid<f32> {
        Grid::from_vec(self.height, self.width, self.channel(index).to_vec())
    }

    pub fn is_channel_empty(&self, index: usize) -> bool {
        self.channel(index).iter().all(|&v| v == 0.0)
    }
}

fn check_radius(r: f64) -> Result<(), MaskError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(MaskError::InvalidRadius(r))
    }
}

/// Inclusive pixel index range whose centers may lie within `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).floor().max(0.0);
    let last = (hi - 0.5).ceil().min(len as f64 - 1.0);
    (first <= last).then(|| (first as usize, last as usize))
}

/// Binary disc: pixels whose center lies within `r` of `center`.
pub fn joint_detection_mask(center: Point, r: f64, height: usize, width: usize) -> Result<Mask, MaskError> {
    check_radius(r)?;
    let mut mask = Mask::new(height, width);
    let (Some((x0, x1)), Some((y0, y1))) = (
        pixel_span(center.x - r, center.x + r, width),
        pixel_span(center.y - r, center.y + r, height),
    ) else {
        return Ok(mask);
    };
    let r2 = r * r;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if Point::pixel_center(x, y).dist_sq(center) <= r2 {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// Local frame of a joint connection used for rectangle membership tests.
struct SegmentFrame {
    p1: Point,
    dx: f64,
    dy: f64,
    len_sq: f64,
    half_width: f64,
}

impl SegmentFrame {
    fn new(p1: Point, p2: Point, thickness: f64) -> Result<Self, MaskError> {
        let dx = p2.x - p1.x;
        let dy = p2.y - p1.y;
        let len_sq = dx * dx + dy * dy;
        if len_sq == 0.0 {
            return Err(MaskError::DegenerateConnection { x: p1.x, y: p1.y });
        }
        Ok(SegmentFrame {
            p1,
            dx,
            dy,
            len_sq,
            half_width: thickness / 2.0,
        })
    }

    /// Fractional position of the projection along the segment, when the
    /// point falls inside the rectangle.
    #[inline]
    fn project(&self, p: Point) -> Option<f64> {
        let px = p.x - self.p1.x;
        let py = p.y - self.p1.y;
        let t = (px * self.dx + py * self.dy) / self.len_sq;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let cross = px * self.dy - py * self.dx;
        (cross * cross <= self.half_width * self.half_width * self.len_sq).then_some(t)
    }

    fn for_each_inside(&self, p2: Point, height: usize, width: usize, mut f: impl FnMut(usize, usize, f64)) {
        let m = self.half_width;
        let spans = (
            pixel_span(self.p1.x.min(p2.x) - m, self.p1.x.max(p2.x) + m, width),
            pixel_span(self.p1.y.min(p2.y) - m, self.p1.y.max(p2.y) + m, height),
        );
        let (Some((x0, x1)), Some((y0, y1))) = spans else {
            return;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if let Some(t) = self.project(Point::pixel_center(x, y)) {
                    f(x, y, t);
                }
            }
        }
    }
}

/// Binary rectangle of total width `r` centered on segment `p1 p2`.
pub fn connection_detection_mask(
    p1: Point,
    p2: Point,
    r: f64,
    height: usize,
    width: usize,
) -> Result<Mask, MaskError> {
    check_radius(r)?;
    let seg = SegmentFrame::new(p1, p2, r)?;
    let mut mask = Mask::new(height, width);
    seg.for_each_inside(p2, height, width, |x, y, _| mask.set(x, y, true));
    Ok(mask)
}

/// Isotropic Gaussian `exp(-d^2 / (2 sigma^2))` centered on the joint.
pub fn joint_regression_map(
    center: Point,
    sigma: f64,
    truncation: Option<f64>,
    height: usize,
    width: usize,
) -> Result<Grid<f32>, MaskError> {
    check_radius(sigma)?;
    let denom = 2.0 * sigma * sigma;
    let cutoff = truncation.map(|t| t * t).unwrap_or(f64::INFINITY);
    Ok(Grid::from_fn(height, width, |x, y| {
        let d2 = Point::pixel_center(x, y).dist_sq(center);
        if d2 > cutoff {
            0.0
        } else {
            (-d2 / denom).exp() as f32
        }
    }))
}

/// Connection rectangle filled with a 1D Gaussian along the segment, peaking
/// at its midpoint.
pub fn connection_regression_map(
    p1: Point,
    p2: Point,
    thickness: f64,
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<Grid<f32>, MaskError> {
    check_radius(thickness)?;
    check_radius(sigma)?;
    let seg = SegmentFrame::new(p1, p2, thickness)?;
    let len = seg.len_sq.sqrt();
    let denom = 2.0 * sigma * sigma;
    let mut map = Grid::new(height, width);
    seg.for_each_inside(p2, height, width, |x, y, t| {
        let along = (t - 0.5) * len;
        map.set(x, y, (-along * along / denom).exp() as f32);
    });
    Ok(map)
}

/// Builds the 20-channel target stack for one annotated frame.
///
/// Channels of non-visible joints, and of connections with a non-visible
/// endpoint, are left all-zero.
pub fn build_targets(
    ann: &Annotation,
    cfg: &TargetConfig,
    kind: MapKind,
    height: usize,
    width: usize,
) -> Result<MapStack, MaskError> {
    if ann.width != width || ann.height != height {
        return Err(MaskError::ResolutionMismatch {
            ann_w: ann.width,
            ann_h: ann.height,
            width,
            height,
        });
    }
    ann.validate()?;
    let mut stack = MapStack::zeros(kind, height, width);
    for joint in JointId::ALL {
        let Some(center) = ann.visible_position(joint) else {
            continue;
        };
        let out = stack.channel_mut(joint.index());
        match kind {
            MapKind::Gaussian => {
                let map = joint_regression_map(center, cfg.sigma(), cfg.joint_truncation, height, width)?;
                out.copy_from_slice(map.as_slice());
            }
            _ => {
                let mask = joint_detection_mask(center, cfg.radius, height, width)?;
                fill_binary(out, &mask);
            }
        }
    }
    for conn in ConnectionId::ALL {
        let (a, b) = conn.endpoints();
        let (Some(p1), Some(p2)) = (ann.visible_position(a), ann.visible_position(b)) else {
            continue;
        };
        if p1 == p2 {
            continue;
        }
        let out = stack.channel_mut(conn.index());
        match kind {
            MapKind::Gaussian => {
                let map = connection_regression_map(p1, p2, cfg.thickness(), cfg.sigma(), height, width)?;
                out.copy_from_slice(map.as_slice());
            }
            _ => {
                let mask = connection_detection_mask(p1, p2, cfg.thickness(), height, width)?;
                fill_binary(out, &mask);
            }
        }
    }
    Ok(stack)
}

fn fill_binary(out: &mut [f32], mask: &Mask) {
    for (o, &m) in out.iter_mut().zip(mask.as_slice()) {
        *o = if m { 1.0 } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_disc(center: Point, r: f64, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - center.x;
                let dy = y as f64 + 0.5 - center.y;
                if (dx * dx + dy * dy).sqrt() <= r {
                    out.push((x, y));
                }
            }
        }
        out
    }

    fn set_pixels(m: &Mask) -> Vec<(usize, usize)> {
        m.indexed().filter(|(_, _, &v)| v).map(|(x, y, _)| (x, y)).collect()
    }

    #[test]
    fn unit_disc_is_a_plus_sign() {
        let m = joint_detection_mask(Point::pixel_center(10, 10), 1.0, 32, 32).unwrap();
        let mut got = set_pixels(&m);
        got.sort();
        let mut want = vec![(10, 10), (9, 10), (11, 10), (10, 9), (10, 11)];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn corner_disc_is_clipped() {
        let c = Point::new(0.0, 0.0);
        let m = joint_detection_mask(c, 6.0, 32, 32).unwrap();
        assert_eq!(set_pixels(&m), scan_disc(c, 6.0, 32, 32));
        assert!(m.count() > 0 && m.count() < 113);
    }

    #[test]
    fn interior_disc_matches_scan() {
        let c = Point::pixel_center(16, 16);
        let m = joint_detection_mask(c, 6.0, 32, 32).unwrap();
        assert_eq!(m.count(), scan_disc(c, 6.0, 32, 32).len());
        assert_eq!(m.count(), 113);
    }

    #[test]
    fn disc_entirely_off_grid_is_empty() {
        let m = joint_detection_mask(Point::new(-50.0, 10.0), 6.0, 32, 32).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn rejects_bad_radius_and_degenerate_segments() {
        assert_eq!(
            joint_detection_mask(Point::new(1.0, 1.0), 0.0, 8, 8).unwrap_err(),
            MaskError::InvalidRadius(0.0)
        );
        let p = Point::new(3.0, 3.0);
        assert!(matches!(
            connection_detection_mask(p, p, 2.0, 8, 8),
            Err(MaskError::DegenerateConnection { .. })
        ));
        assert!(matches!(
            connection_regression_map(p, p, 2.0, 6.0, 8, 8),
            Err(MaskError::DegenerateConnection { .. })
        ));
    }

    #[test]
    fn horizontal_connection_covers_three_rows() {
        let m = connection_detection_mask(Point::new(5.0, 10.5), Point::new(15.0, 10.5), 2.0, 32, 32).unwrap();
        for (x, y, &v) in m.indexed() {
            let inside = (9..=11).contains(&y) && (5..=14).contains(&x);
            assert_eq!(v, inside, "pixel ({x}, {y})");
        }
    }

    #[test]
    fn thin_connection_approaches_the_rasterized_line() {
        let m = connection_detection_mask(Point::new(2.5, 4.5), Point::new(12.5, 4.5), 1e-6, 16, 16).unwrap();
        let got = set_pixels(&m);
        let want: Vec<_> = (2..=12).map(|x| (x, 4)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn diagonal_connection_is_mirror_symmetric() {
        // segment along y = x; reflection across it swaps x and y
        let m = connection_detection_mask(Point::new(4.0, 4.0), Point::new(20.0, 20.0), 4.0, 24, 24).unwrap();
        for (x, y, &v) in m.indexed() {
            assert_eq!(v, m.at(y, x));
        }
    }

    #[test]
    fn joint_gaussian_values() {
        let r = 6.0;
        let sigma = 3.0 * r;
        let c = Point::pixel_center(40, 30);
        let map = joint_regression_map(c, sigma, None, 96, 128).unwrap();
        assert_eq!(map.at(40, 30), 1.0);
        let at_sigma = map.at(58, 30) as f64;
        assert!((at_sigma - (-0.5f64).exp()).abs() < 1e-6, "{at_sigma}");
        assert!((at_sigma - 0.6065).abs() < 1e-4);
        // radial monotonicity along a ray
        for x in 40..127 {
            assert!(map.at(x + 1, 30) <= map.at(x, 30));
        }
    }

    #[test]
    fn truncated_joint_gaussian() {
        let c = Point::pixel_center(10, 10);
        let map = joint_regression_map(c, 18.0, Some(6.0), 32, 32).unwrap();
        assert_eq!(map.at(17, 10), 0.0);
        assert!(map.at(16, 10) > 0.9);
    }

    #[test]
    fn connection_gaussian_values() {
        let r = 6.0;
        let sigma = 3.0 * r;
        let p1 = Point::new(10.5, 40.5);
        let p2 = Point::new(110.5, 40.5);
        let map = connection_regression_map(p1, p2, r, sigma, 96, 128).unwrap();
        assert_eq!(map.at(60, 40), 1.0);
        assert_eq!(map.at(10, 40), map.at(110, 40));
        let v = map.at(60 + 18, 40) as f64;
        assert!((v - (-0.5f64).exp()).abs() < 1e-6);
        // zero outside the rectangle
        assert_eq!(map.at(60, 44), 0.0);
        assert_eq!(map.at(5, 40), 0.0);
    }

    fn full_annotation() -> Annotation {
        let mut joints = [JointAnnotation::visible(0.0, 0.0); NUM_JOINTS];
        for (i, j) in joints.iter_mut().enumerate() {
            let limb = i / 3;
            let k = i % 3;
            *j = JointAnnotation::visible(20.0 + 25.0 * limb as f64, 20.0 + 20.0 * k as f64);
        }
        Annotation {
            frame_id: "f0".into(),
            width: 128,
            height: 96,
            joints,
        }
    }

    #[test]
    fn full_visibility_fills_every_channel() {
        let ann = full_annotation();
        let cfg = TargetConfig::default();
        for kind in [MapKind::Binary, MapKind::Gaussian] {
            let stack = build_targets(&ann, &cfg, kind, 96, 128).unwrap();
            for c in 0..NUM_CHANNELS {
                assert!(!stack.is_channel_empty(c), "channel {c} empty for {kind:?}");
            }
        }
    }

    #[test]
    fn out_of_frame_ankle_empties_two_channels() {
        let cfg = TargetConfig::default();
        let full = build_targets(&full_annotation(), &cfg, MapKind::Binary, 96, 128).unwrap();
        let mut ann = full_annotation();
        ann.joints[JointId::LeftAnkle.index()].visibility = Visibility::OutOfFrame;
        let stack = build_targets(&ann, &cfg, MapKind::Binary, 96, 128).unwrap();
        let emptied = [JointId::LeftAnkle.index(), ConnectionId::LeftKneeAnkle.index()];
        for c in 0..NUM_CHANNELS {
            if emptied.contains(&c) {
                assert!(stack.is_channel_empty(c));
            } else {
                assert_eq!(stack.channel(c), full.channel(c));
            }
        }
    }

    #[test]
    fn stacking_follows_channel_index() {
        let ann = full_annotation();
        let cfg = TargetConfig::default();
        let stack = build_targets(&ann, &cfg, MapKind::Binary, 96, 128).unwrap();
        let j = JointId::LeftElbow;
        let single = joint_detection_mask(ann.joint(j).position, cfg.radius, 96, 128).unwrap();
        let ch: Vec<bool> = stack.channel(j.index()).iter().map(|&v| v == 1.0).collect();
        assert_eq!(ch, single.as_slice());
        let c = ConnectionId::RightKneeAnkle;
        let (a, b) = c.endpoints();
        let single =
            connection_detection_mask(ann.joint(a).position, ann.joint(b).position, cfg.radius, 96, 128).unwrap();
        let ch: Vec<bool> = stack.channel(c.index()).iter().map(|&v| v == 1.0).collect();
        assert_eq!(ch, single.as_slice());
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let ann = full_annotation();
        let err = build_targets(&ann, &TargetConfig::default(), MapKind::Binary, 48, 64).unwrap_err();
        assert!(matches!(err, MaskError::ResolutionMismatch { .. }));
    }

    #[test]
    fn visible_joint_outside_frame_is_rejected() {
        let mut ann = full_annotation();
        ann.joints[0].position = Point::new(200.0, 10.0);
        assert!(matches!(ann.validate(), Err(MaskError::JointOutOfBounds { .. })));
    }
}

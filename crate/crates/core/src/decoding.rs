//! From regression maps to per-limb joint chains.
//!
//! Joint candidates are the thresholded local maxima of each joint map.
//! Every pair of candidates for the two endpoints of a connection is scored
//! by sampling the connection map along the segment between them, and each
//! connection keeps an optimal one-to-one assignment of candidates. Limbs are
//! then chained through their middle joint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Point};
use crate::maskgen::MapStack;
use crate::skeleton::{ConnectionId, JointId, Limb, NUM_CONNECTIONS, NUM_JOINTS, NUM_LIMBS};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("NMS window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("line integral needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate segment at ({x}, {y})")]
    DegenerateSegment { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralMode {
    /// Mean of the samples; independent of segment length.
    Mean,
    /// Mean times segment length.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub nms_threshold: f64,
    pub nms_window: usize,
    pub min_distance: f64,
    pub pair_threshold: f64,
    pub integral: IntegralMode,
    /// Fixed sample count per segment; `None` uses `max(2, ceil(length))`.
    pub samples: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            nms_threshold: 0.3,
            nms_window: 5,
            min_distance: 6.0,
            pair_threshold: 0.2,
            integral: IntegralMode::Mean,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCandidate {
    pub joint: JointId,
    pub position: Point,
    pub score: f64,
}

/// Local maxima of `map` scoring at least `threshold`, strongest first.
///
/// A pixel is a maximum when it exceeds every neighbour in the
/// `window × window` neighbourhood; equal neighbours later in raster order
/// do not disqualify it, so a plateau yields one candidate. Candidates
/// closer than `min_dist` to a stronger kept candidate are dropped.
/// Positions are pixel centers.
pub fn nms(map: &Grid<f32>, threshold: f64, window: usize, min_dist: f64) -> Result<Vec<(Point, f64)>, DecodeError> {
    if window < 3 || window % 2 == 0 {
        return Err(DecodeError::InvalidWindow(window));
    }
    let half = (window / 2) as isize;
    let (h, w) = (map.height() as isize, map.width() as isize);
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = map.at(x as usize, y as usize);
            if (v as f64) < threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for ny in (y - half).max(0)..=(y + half).min(h - 1) {
                for nx in (x - half).max(0)..=(x + half).min(w - 1) {
                    if nx == x && ny == y {
                        continue;
                    }
                    let n = map.at(nx as usize, ny as usize);
                    let earlier = (ny, nx) < (y, x);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                peaks.push((Point::pixel_center(x as usize, y as usize), v as f64));
            }
        }
    }
    // stable sort keeps raster order among equal scores
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<(Point, f64)> = Vec::new();
    for (p, s) in peaks {
        if kept.iter().all(|(q, _)| q.dist(p) >= min_dist) {
            kept.push((p, s));
        }
    }
    Ok(kept)
}

/// Candidates for one joint from its regression map.
pub fn joint_candidates(map: &Grid<f32>, joint: JointId, cfg: &DecodeConfig) -> Result<Vec<JointCandidate>, DecodeError> {
    Ok(nms(map, cfg.nms_threshold, cfg.nms_window, cfg.min_distance)?
        .into_iter()
        .map(|(position, score)| JointCandidate { joint, position, score })
        .collect())
}

/// Default sample count for a segment.
pub fn default_samples(p1: Point, p2: Point) -> usize {
    (p1.dist(p2).ceil() as usize).max(2)
}

/// Samples `map` bilinearly at `samples` equally spaced points on the closed
/// segment `[p1, p2]` and returns their mean (or mean × length in `Sum` mode).
pub fn line_integral(
    map: &Grid<f32>,
    p1: Point,
    p2: Point,
    samples: usize,
    mode: IntegralMode,
) -> Result<f64, DecodeError> {
    if samples < 2 {
        return Err(DecodeError::TooFewSamples(samples));
    }
    if p1 == p2 {
        return Err(DecodeError::DegenerateSegment { x: p1.x, y: p1.y });
    }
    let last = (samples - 1) as f64;
    let mut sum = 0.0;
    // pair samples from both ends so the result is symmetric in p1, p2
    for k in 0..samples / 2 {
        let t = k as f64 / last;
        sum += map.bilinear(p1.lerp(p2, t)) + map.bilinear(p2.lerp(p1, t));
    }
    if samples % 2 == 1 {
        sum += map.bilinear(Point::new(0.5 * (p1.x + p2.x), 0.5 * (p1.y + p2.y)));
    }
    let mean = sum / samples as f64;
    Ok(match mode {
        IntegralMode::Mean => mean,
        IntegralMode::Sum => mean * p1.dist(p2),
    })
}

/// Maximum-weight assignment on a rectangular weight matrix.
///
/// Returns, for each row, the column it is assigned to. Every row is
/// assigned when `rows <= cols` and vice versa. Weights may be any finite
/// values; the total of the assigned weights is maximal.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transposed = rows > cols;
    // Hungarian algorithm with potentials; requires n <= m, minimizes cost
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        if transposed {
            -weights[j][i]
        } else {
            -weights[i][j]
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut way = vec![0usize; m + 1];
    // p[j]: row (1-based) matched to column j; 0 = free
    let mut p = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=m {
        if p[j] != 0 {
            let (r, c) = if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            out[r] = Some(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    /// Index into the proximal endpoint's candidates.
    pub a: usize,
    /// Index into the distal endpoint's candidates.
    pub b: usize,
    pub score: f64,
}

/// Scores and optimal pairing for one connection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConnectionMatch {
    /// `scores[a][b]`: line integral between candidate `a` and candidate `b`.
    pub scores: Vec<Vec<f64>>,
    /// Pairs sorted by descending score.
    pub pairs: Vec<CandidatePair>,
}

/// Line-integral score matrix between two candidate sets.
pub fn score_matrix(
    a: &[JointCandidate],
    b: &[JointCandidate],
    conn_map: &Grid<f32>,
    cfg: &DecodeConfig,
) -> Vec<Vec<f64>> {
    a.iter()
        .map(|ca| {
            b.iter()
                .map(|cb| {
                    if ca.position == cb.position {
                        return f64::NEG_INFINITY;
                    }
                    let k = cfg.samples.unwrap_or_else(|| default_samples(ca.position, cb.position)).max(2);
                    line_integral(conn_map, ca.position, cb.position, k, cfg.integral).unwrap_or(f64::NEG_INFINITY)
                })
                .collect()
        })
        .collect()
}

/// Maximum-weight matching over the pairs scoring at least `pair_threshold`.
pub fn match_scores(scores: &[Vec<f64>], pair_threshold: f64) -> Vec<CandidatePair> {
    // Disallowed pairs get weight 0; allowed pairs keep their (positive
    // part of the) score. Zero-weight assignments are dropped afterwards.
    let weights: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| {
            row.iter()
                .map(|&s| if s >= pair_threshold && s > 0.0 { s } else { 0.0 })
                .collect()
        })
        .collect();
    let assignment = max_weight_assignment(&weights);
    let mut pairs: Vec<CandidatePair> = assignment
        .into_iter()
        .enumerate()
        .filter_map(|(a, b)| b.map(|b| (a, b)))
        .filter(|&(a, b)| weights[a][b] > 0.0)
        .map(|(a, b)| CandidatePair { a, b, score: scores[a][b] })
        .collect();
    pairs.sort_by(|x, y| y.score.total_cmp(&x.score));
    pairs
}

pub fn match_connection(
    a: &[JointCandidate],
    b: &[JointCandidate],
    conn_map: &Grid<f32>,
    cfg: &DecodeConfig,
) -> ConnectionMatch {
    let scores = score_matrix(a, b, conn_map, cfg);
    let pairs = match_scores(&scores, cfg.pair_threshold);
    ConnectionMatch { scores, pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedJoint {
    pub position: Point,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbPose {
    pub limb: Limb,
    /// Proximal, middle, distal.
    pub joints: [Option<LocatedJoint>; 3],
    /// Proximal and distal connection scores.
    pub connections: [Option<f64>; 2],
    pub confidence: f64,
}

impl LimbPose {
    fn empty(limb: Limb) -> Self {
        LimbPose {
            limb,
            joints: [None; 3],
            connections: [None; 2],
            confidence: 0.0,
        }
    }

    pub fn joint(&self, id: JointId) -> Option<&LocatedJoint> {
        let slot = self.limb.joints().iter().position(|&j| j == id)?;
        self.joints[slot].as_ref()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    pub fn num_connections(&self) -> usize {
        self.connections.iter().flatten().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub limbs: [LimbPose; NUM_LIMBS],
}

impl PoseEstimate {
    /// Estimate with no joints located.
    pub fn empty() -> Self {
        PoseEstimate {
            limbs: Limb::ALL.map(LimbPose::empty),
        }
    }

    pub fn limb(&self, limb: Limb) -> &LimbPose {
        &self.limbs[limb.index()]
    }

    pub fn joint(&self, id: JointId) -> Option<&LocatedJoint> {
        self.limb(id.limb()).joint(id)
    }
}

fn located(c: &JointCandidate) -> LocatedJoint {
    LocatedJoint {
        position: c.position,
        score: c.score,
    }
}

/// Best partner in `scores` for a fixed candidate, excluding below-threshold pairs.
fn best_partner(scores: impl Iterator<Item = f64>, threshold: f64) -> Option<(usize, f64)> {
    scores
        .enumerate()
        .filter(|&(_, s)| s >= threshold)
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
}

fn assemble_limb(
    limb: Limb,
    candidates: &[Vec<JointCandidate>; NUM_JOINTS],
    matches: &[ConnectionMatch; NUM_CONNECTIONS],
    pair_threshold: f64,
) -> LimbPose {
    let [jp, jm, jd] = limb.joints();
    let [cp, cd] = limb.connections();
    let (prox, mid, dist) = (&candidates[jp.index()], &candidates[jm.index()], &candidates[jd.index()]);
    let upper = &matches[cp.ordinal()];
    let lower = &matches[cd.ordinal()];
    let mut pose = LimbPose::empty(limb);
    // chosen candidate index per slot
    let mut pick: [Option<usize>; 3] = [None; 3];
    match (upper.pairs.first(), lower.pairs.first()) {
        (Some(u), Some(l)) if u.b == l.a => {
            pick = [Some(u.a), Some(u.b), Some(l.b)];
            pose.connections = [Some(u.score), Some(l.score)];
        }
        (Some(u), Some(l)) => {
            if u.score >= l.score {
                pick[0] = Some(u.a);
                pick[1] = Some(u.b);
                pose.connections[0] = Some(u.score);
                let row = lower.scores.get(u.b).into_iter().flatten().copied();
                if let Some((d, s)) = best_partner(row, pair_threshold) {
                    pick[2] = Some(d);
                    pose.connections[1] = Some(s);
                }
            } else {
                pick[1] = Some(l.a);
                pick[2] = Some(l.b);
                pose.connections[1] = Some(l.score);
                let col = upper.scores.iter().map(|row| row[l.a]);
                if let Some((p, s)) = best_partner(col, pair_threshold) {
                    pick[0] = Some(p);
                    pose.connections[0] = Some(s);
                }
            }
        }
        (Some(u), None) => {
            pick[0] = Some(u.a);
            pick[1] = Some(u.b);
            pose.connections[0] = Some(u.score);
        }
        (None, Some(l)) => {
            pick[1] = Some(l.a);
            pick[2] = Some(l.b);
            pose.connections[1] = Some(l.score);
        }
        (None, None) => {}
    }
    for (slot, cands) in [prox, mid, dist].into_iter().enumerate() {
        // unlinked joints fall back to their strongest candidate
        let idx = pick[slot].or((!cands.is_empty()).then_some(0));
        pose.joints[slot] = idx.map(|i| located(&cands[i]));
    }
    pose.confidence = pose.connections.iter().flatten().sum::<f64>() / 2.0;
    pose
}

/// Chains each limb's two connections through its middle joint.
///
/// When the two connections pick different middle candidates, the
/// higher-scoring connection keeps its pair and the other connection is
/// re-matched to the best partner of that middle candidate.
pub fn assemble_pose(
    candidates: &[Vec<JointCandidate>; NUM_JOINTS],
    matches: &[ConnectionMatch; NUM_CONNECTIONS],
    pair_threshold: f64,
) -> PoseEstimate {
    PoseEstimate {
        limbs: Limb::ALL.map(|limb| assemble_limb(limb, candidates, matches, pair_threshold)),
    }
}

/// Full decoding of one frame's 20 regression maps.
pub fn decode(maps: &MapStack, cfg: &DecodeConfig) -> Result<PoseEstimate, DecodeError> {
    let mut candidates: [Vec<JointCandidate>; NUM_JOINTS] = Default::default();
    for j in JointId::ALL {
        candidates[j.index()] = joint_candidates(&maps.channel_grid(j.index()), j, cfg)?;
    }
    let mut matches: [ConnectionMatch; NUM_CONNECTIONS] = Default::default();
    for c in ConnectionId::ALL {
        let (a, b) = c.endpoints();
        matches[c.ordinal()] = match_connection(
            &candidates[a.index()],
            &candidates[b.index()],
            &maps.channel_grid(c.index()),
            cfg,
        );
    }
    Ok(assemble_pose(&candidates, &matches, cfg.pair_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::joint_regression_map;

    fn cand(joint: JointId, x: f64, y: f64, score: f64) -> JointCandidate {
        JointCandidate {
            joint,
            position: Point::new(x, y),
            score,
        }
    }

    #[test]
    fn single_peak() {
        let map = joint_regression_map(Point::pixel_center(20, 30), 18.0, None, 64, 64).unwrap();
        let peaks = nms(&map, 0.3, 5, 6.0).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].0, Point::pixel_center(20, 30));
        assert_eq!(peaks[0].1, 1.0);
    }

    #[test]
    fn two_separated_peaks() {
        let a = joint_regression_map(Point::pixel_center(10, 20), 2.0, None, 40, 40).unwrap();
        let b = joint_regression_map(Point::pixel_center(25, 20), 2.0, None, 40, 40).unwrap();
        let map = Grid::from_fn(40, 40, |x, y| a.at(x, y).max(b.at(x, y) * 0.9));
        let peaks = nms(&map, 0.3, 5, 6.0).unwrap();
        assert_eq!(peaks.len(), 2);
        assert_eq!(peaks[0].0, Point::pixel_center(10, 20));
        assert_eq!(peaks[1].0, Point::pixel_center(25, 20));
        // exhaustive scan: exactly two strict window maxima above threshold
        let strict: Vec<_> = map
            .indexed()
            .filter(|&(x, y, &v)| {
                v >= 0.3
                    && (-2i32..=2).all(|dy| {
                        (-2i32..=2).all(|dx| {
                            let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                            (dx == 0 && dy == 0)
                                || nx < 0
                                || ny < 0
                                || nx >= 40
                                || ny >= 40
                                || map.at(nx as usize, ny as usize) < v
                        })
                    })
            })
            .collect();
        assert_eq!(strict.len(), 2);
    }

    #[test]
    fn nearby_peaks_are_suppressed() {
        let mut map = Grid::<f32>::new(20, 20);
        map.set(5, 5, 0.9);
        map.set(9, 5, 0.8);
        assert_eq!(nms(&map, 0.3, 3, 6.0).unwrap().len(), 1);
        assert_eq!(nms(&map, 0.3, 3, 3.0).unwrap().len(), 2);
    }

    #[test]
    fn plateau_gives_one_candidate() {
        let mut map = Grid::<f32>::new(10, 10);
        map.set(4, 4, 0.5);
        map.set(5, 4, 0.5);
        let peaks = nms(&map, 0.3, 3, 0.0).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].0, Point::pixel_center(4, 4));
    }

    #[test]
    fn below_threshold_and_bad_window() {
        let map = Grid::from_fn(10, 10, |x, _| x as f32 * 0.01);
        assert!(nms(&map, 0.3, 5, 6.0).unwrap().is_empty());
        assert_eq!(nms(&map, 0.3, 4, 6.0), Err(DecodeError::InvalidWindow(4)));
        assert_eq!(nms(&map, 0.3, 1, 6.0), Err(DecodeError::InvalidWindow(1)));
    }

    #[test]
    fn line_integral_cases() {
        let c = Grid::from_fn(20, 20, |_, _| 0.7f32);
        let v = line_integral(&c, Point::new(2.0, 3.0), Point::new(15.0, 11.0), 9, IntegralMode::Mean).unwrap();
        assert!((v - 0.7).abs() < 1e-6);
        // linear ramp: mean equals mean of endpoint values
        let ramp = Grid::from_fn(32, 32, |x, y| (0.5 * (x as f64 + 0.5) + 0.25 * (y as f64 + 0.5)) as f32);
        let (p1, p2) = (Point::new(3.2, 4.1), Point::new(25.7, 27.3));
        let f = |p: Point| 0.5 * p.x + 0.25 * p.y;
        let v = line_integral(&ramp, p1, p2, 17, IntegralMode::Mean).unwrap();
        assert!((v - 0.5 * (f(p1) + f(p2))).abs() < 1e-6);
        let s = line_integral(&c, Point::new(0.0, 0.5), Point::new(10.0, 0.5), 5, IntegralMode::Sum).unwrap();
        assert!((s - 7.0).abs() < 1e-6);
        assert_eq!(
            line_integral(&c, p1, p1, 5, IntegralMode::Mean),
            Err(DecodeError::DegenerateSegment { x: p1.x, y: p1.y })
        );
        assert_eq!(
            line_integral(&c, p1, p2, 1, IntegralMode::Mean),
            Err(DecodeError::TooFewSamples(1))
        );
    }

    #[test]
    fn assignment_beats_greedy() {
        let pairs = match_scores(&[vec![0.9, 0.8], vec![0.8, 0.1]], 0.2);
        let mut got: Vec<_> = pairs.iter().map(|p| (p.a, p.b)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 1), (1, 0)]);
        let total: f64 = pairs.iter().map(|p| p.score).sum();
        assert!((total - 1.6).abs() < 1e-12);
    }

    #[test]
    fn forced_and_empty_matches() {
        assert_eq!(match_scores(&[vec![0.5]], 0.2), vec![CandidatePair { a: 0, b: 0, score: 0.5 }]);
        assert!(match_scores(&[vec![0.1]], 0.2).is_empty());
        assert!(match_scores(&[], 0.2).is_empty());
        let map = Grid::<f32>::new(8, 8);
        let m = match_connection(&[], &[cand(JointId::RightElbow, 1.0, 1.0, 1.0)], &map, &DecodeConfig::default());
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn rectangular_assignment() {
        let w = vec![vec![1.0, 5.0, 2.0]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1)]);
        let w = vec![vec![1.0], vec![5.0], vec![2.0]];
        assert_eq!(max_weight_assignment(&w), vec![None, Some(0), None]);
    }

    fn single_match(a: usize, b: usize, score: f64, rows: usize, cols: usize) -> ConnectionMatch {
        let mut scores = vec![vec![0.0; cols]; rows];
        scores[a][b] = score;
        ConnectionMatch {
            scores,
            pairs: vec![CandidatePair { a, b, score }],
        }
    }

    #[test]
    fn middle_joint_conflict_keeps_stronger_connection() {
        let limb = Limb::RightArm;
        let [s, e, w] = limb.joints();
        let mut candidates: [Vec<JointCandidate>; NUM_JOINTS] = Default::default();
        candidates[s.index()] = vec![cand(s, 10.0, 10.0, 1.0)];
        candidates[e.index()] = vec![cand(e, 20.0, 10.0, 0.9), cand(e, 20.0, 30.0, 0.8)];
        candidates[w.index()] = vec![cand(w, 30.0, 10.0, 1.0)];
        let mut matches: [ConnectionMatch; NUM_CONNECTIONS] = Default::default();
        // shoulder-elbow prefers elbow 1 (score 0.9); elbow-wrist prefers elbow 0 (0.6)
        matches[ConnectionId::RightShoulderElbow.ordinal()] = ConnectionMatch {
            scores: vec![vec![0.3, 0.9]],
            pairs: vec![CandidatePair { a: 0, b: 1, score: 0.9 }],
        };
        matches[ConnectionId::RightElbowWrist.ordinal()] = ConnectionMatch {
            scores: vec![vec![0.6], vec![0.4]],
            pairs: vec![CandidatePair { a: 0, b: 0, score: 0.6 }],
        };
        let pose = assemble_pose(&candidates, &matches, 0.2);
        let arm = pose.limb(limb);
        assert_eq!(arm.joints[1].unwrap().position, Point::new(20.0, 30.0));
        assert_eq!(arm.connections, [Some(0.9), Some(0.4)]);
        assert_eq!(arm.num_joints(), 3);
    }

    #[test]
    fn consistent_chains_and_partial_limbs() {
        let mut candidates: [Vec<JointCandidate>; NUM_JOINTS] = Default::default();
        for j in JointId::ALL {
            candidates[j.index()] = vec![cand(j, j.index() as f64 * 5.0, 10.0, 1.0)];
        }
        candidates[JointId::LeftAnkle.index()].clear();
        let mut matches: [ConnectionMatch; NUM_CONNECTIONS] = Default::default();
        for c in ConnectionId::ALL {
            if c != ConnectionId::LeftKneeAnkle {
                matches[c.ordinal()] = single_match(0, 0, 0.8, 1, 1);
            }
        }
        let pose = assemble_pose(&candidates, &matches, 0.2);
        for limb in [Limb::RightArm, Limb::LeftArm, Limb::RightLeg] {
            assert_eq!(pose.limb(limb).num_joints(), 3);
            assert_eq!(pose.limb(limb).num_connections(), 2);
        }
        let leg = pose.limb(Limb::LeftLeg);
        assert_eq!(leg.num_joints(), 2);
        assert_eq!(leg.num_connections(), 1);
        assert!(leg.joints[2].is_none());
    }
}

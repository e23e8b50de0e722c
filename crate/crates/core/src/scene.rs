//! Scene and agent data model, grid discretization, instance extraction,
//! and padded batch packing.
//!
//! A prediction instance is one (anchor frame, target agent) pair: the
//! target's last `t_h` positions, every other agent currently inside the
//! m×m region centered on the target (with whatever history each has), and
//! the target's next `t_f` positions as ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::{s, Scalar};
use crate::tensor::Tensor;

pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Pedestrian,
    Vehicle,
    Rider,
}

impl AgentClass {
    pub const ALL: [AgentClass; CLASS_COUNT] =
        [AgentClass::Pedestrian, AgentClass::Vehicle, AgentClass::Rider];

    /// Index into the 3-dim one-hot slice appended to every encoding.
    #[inline]
    pub fn one_hot_index(self) -> usize {
        match self {
            AgentClass::Pedestrian => 0,
            AgentClass::Vehicle => 1,
            AgentClass::Rider => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Vehicle => "vehicle",
            AgentClass::Rider => "rider",
        }
    }
}

/// One agent's state in one frame, as stored in scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u64,
    pub class: AgentClass,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AgentState {
    #[inline]
    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: i64,
    pub agents: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub frame_period_s: f64,
    pub frames: Vec<Frame>,
}

impl Scene {
    /// Structural validation: ordered frames, unique ids per frame, finite
    /// coordinates, positive frame period.
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_period_s.is_finite() && self.frame_period_s > 0.0) {
            return Err(CoreError::Invalid(format!(
                "scene `{}`: frame_period_s must be finite and positive",
                self.scene_id
            )));
        }
        let mut prev_t: Option<i64> = None;
        for frame in &self.frames {
            if let Some(p) = prev_t {
                if frame.t <= p {
                    return Err(CoreError::Invalid(format!(
                        "scene `{}`: frame indices must be strictly increasing ({} after {})",
                        self.scene_id, frame.t, p
                    )));
                }
            }
            prev_t = Some(frame.t);
            let mut seen = BTreeMap::new();
            for agent in &frame.agents {
                if seen.insert(agent.id, ()).is_some() {
                    return Err(CoreError::Invalid(format!(
                        "scene `{}` frame {}: duplicate agent id {}",
                        self.scene_id, frame.t, agent.id
                    )));
                }
                if !(agent.x.is_finite() && agent.y.is_finite() && agent.z.is_finite()) {
                    return Err(CoreError::NonFinite(format!(
                        "scene `{}` frame {} agent {}",
                        self.scene_id, frame.t, agent.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One agent's observed samples, ordered by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSample {
    pub t: i64,
    pub pos: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub class: AgentClass,
    pub samples: Vec<TrackSample>,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(CoreError::Invalid(format!(
                "track for agent {} has no samples",
                self.agent_id
            )));
        }
        for pair in self.samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(CoreError::Invalid(format!(
                    "track for agent {}: frame indices must strictly increase",
                    self.agent_id
                )));
            }
        }
        if self
            .samples
            .iter()
            .any(|s| s.pos.iter().any(|v| !v.is_finite()))
        {
            return Err(CoreError::NonFinite(format!("track for agent {}", self.agent_id)));
        }
        Ok(())
    }
}

/// Outcome of mapping a target-relative position onto the k×k grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellAssignment {
    Cell { row: usize, col: usize },
    OutOfRegion,
}

impl CellAssignment {
    pub fn cell(self) -> Option<(usize, usize)> {
        match self {
            CellAssignment::Cell { row, col } => Some((row, col)),
            CellAssignment::OutOfRegion => None,
        }
    }
}

/// Maps a position relative to the target (dx east, dy north, meters) onto
/// the m×m grid: row = floor((dy + m/2) / (m/k)), col likewise from dx.
/// The region is half-open: [−m/2, +m/2) on both axes.
pub fn assign_grid_cell(dx: f64, dy: f64, m: f64, k: usize) -> Result<CellAssignment> {
    if !(m > 0.0) || k == 0 {
        return Err(CoreError::Config(format!("grid requires m > 0 and k >= 1, got m={m}, k={k}")));
    }
    if !dx.is_finite() || !dy.is_finite() {
        return Err(CoreError::NonFinite("assign_grid_cell input".to_string()));
    }
    let half = m / 2.0;
    if dx < -half || dx >= half || dy < -half || dy >= half {
        return Ok(CellAssignment::OutOfRegion);
    }
    let width = m / k as f64;
    // In-region inputs can still round to k after division (e.g. dy just
    // below +m/2 with a non-representable cell width), so clamp.
    let row = (((dy + half) / width).floor() as usize).min(k - 1);
    let col = (((dx + half) / width).floor() as usize).min(k - 1);
    Ok(CellAssignment::Cell { row, col })
}

/// One neighbor observed at the anchor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTrack {
    pub agent_id: u64,
    pub class: AgentClass,
    /// Chronological positions over the contiguous in-region run ending at
    /// the anchor frame; length in [1, t_h]. Target anchor frame.
    pub history: Vec<[f64; 3]>,
    pub cell: (usize, usize),
    /// Distance to the target at the anchor frame (ground plane).
    pub distance: f64,
}

/// One prediction problem, expressed in the target's anchor frame: the
/// target's anchor position is the origin, so `target_history` always ends
/// at (0, 0, 0) and every other coordinate is an offset from there.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInstance {
    pub scene_id: String,
    pub anchor_t: i64,
    pub target_id: u64,
    pub target_class: AgentClass,
    /// Exactly t_h positions ending at the anchor frame.
    pub target_history: Vec<[f64; 3]>,
    pub neighbors: Vec<NeighborTrack>,
    /// Exactly t_f positions following the anchor frame.
    pub ground_truth: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub t_h: usize,
    pub t_f: usize,
    /// Observable region side length, meters.
    pub m: f64,
    /// Grid resolution per side.
    pub k: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            t_h: 5,
            t_f: 5,
            m: 30.0,
            k: 11,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_h == 0 || self.t_f == 0 {
            return Err(CoreError::Config("t_h and t_f must be >= 1".to_string()));
        }
        if !(self.m > 0.0) || self.k == 0 {
            return Err(CoreError::Config(format!(
                "grid requires m > 0 and k >= 1, got m={}, k={}",
                self.m, self.k
            )));
        }
        Ok(())
    }
}

/// Bookkeeping from instance extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractReport {
    pub instances: usize,
    /// Agents present at an anchor frame but lacking full history or future.
    pub skipped_targets: usize,
    /// Co-present agents outside the m×m region at the anchor frame.
    pub out_of_region_neighbors: usize,
    /// Neighbors dropped because a nearer agent occupied their grid cell.
    pub cell_evictions: usize,
}

/// Slides an anchor over every frame with `t_h` history and `t_f` future,
/// emitting one instance per fully-observed agent at that anchor.
pub fn extract_instances(
    scene: &Scene,
    cfg: &ExtractConfig,
) -> Result<(Vec<PredictionInstance>, ExtractReport)> {
    cfg.validate()?;
    let mut report = ExtractReport::default();
    let frames = &scene.frames;
    let mut instances = Vec::new();
    if frames.len() < cfg.t_h + cfg.t_f {
        return Ok((instances, report));
    }

    // Per-frame id -> (class, position) lookups.
    let maps: Vec<BTreeMap<u64, (AgentClass, [f64; 3])>> = frames
        .iter()
        .map(|f| {
            f.agents
                .iter()
                .map(|a| (a.id, (a.class, a.pos())))
                .collect()
        })
        .collect();

    for anchor in (cfg.t_h - 1)..(frames.len() - cfg.t_f) {
        for agent in &frames[anchor].agents {
            let full_history = (anchor + 1 - cfg.t_h..=anchor)
                .all(|f| maps[f].contains_key(&agent.id));
            let full_future = (anchor + 1..=anchor + cfg.t_f)
                .all(|f| maps[f].contains_key(&agent.id));
            if !full_history || !full_future {
                report.skipped_targets += 1;
                continue;
            }
            // Everything below is expressed in the target's anchor frame:
            // the target's position at the anchor becomes the origin, so the
            // last history point is always (0, 0, 0) and the network sees
            // local geometry, never absolute scene coordinates.
            let target_pos = agent.pos();
            let rel = |p: [f64; 3]| {
                [p[0] - target_pos[0], p[1] - target_pos[1], p[2] - target_pos[2]]
            };
            let target_history: Vec<[f64; 3]> = (anchor + 1 - cfg.t_h..=anchor)
                .map(|f| rel(maps[f][&agent.id].1))
                .collect();
            let ground_truth: Vec<[f64; 3]> = (anchor + 1..=anchor + cfg.t_f)
                .map(|f| rel(maps[f][&agent.id].1))
                .collect();

            // Gather in-region neighbors at the anchor frame.
            let mut neighbors: Vec<NeighborTrack> = Vec::new();
            for other in &frames[anchor].agents {
                if other.id == agent.id {
                    continue;
                }
                let dx = other.x - target_pos[0];
                let dy = other.y - target_pos[1];
                let cell = match assign_grid_cell(dx, dy, cfg.m, cfg.k)? {
                    CellAssignment::Cell { row, col } => (row, col),
                    CellAssignment::OutOfRegion => {
                        report.out_of_region_neighbors += 1;
                        continue;
                    }
                };
                // Walk back from the anchor while the neighbor exists and
                // stays inside the (anchor-centered) observable region.
                let mut history = Vec::with_capacity(cfg.t_h);
                for back in 0..cfg.t_h.min(anchor + 1) {
                    let f = anchor - back;
                    match maps[f].get(&other.id) {
                        Some(&(_, pos)) => {
                            let in_region = matches!(
                                assign_grid_cell(
                                    pos[0] - target_pos[0],
                                    pos[1] - target_pos[1],
                                    cfg.m,
                                    cfg.k
                                )?,
                                CellAssignment::Cell { .. }
                            );
                            if !in_region {
                                break;
                            }
                            history.push(rel(pos));
                        }
                        None => break,
                    }
                }
                history.reverse();
                neighbors.push(NeighborTrack {
                    agent_id: other.id,
                    class: other.class,
                    history,
                    cell,
                    distance: (dx * dx + dy * dy).sqrt(),
                });
            }

            // One agent per cell: nearest wins, ties to the smaller id.
            neighbors.sort_by(|a, b| {
                a.distance
                    .partial_cmp(&b.distance)
                    .expect("finite distances")
                    .then(a.agent_id.cmp(&b.agent_id))
            });
            let mut occupied: BTreeMap<(usize, usize), ()> = BTreeMap::new();
            let mut kept = Vec::with_capacity(neighbors.len());
            for n in neighbors {
                if occupied.insert(n.cell, ()).is_none() {
                    kept.push(n);
                } else {
                    report.cell_evictions += 1;
                }
            }

            instances.push(PredictionInstance {
                scene_id: scene.scene_id.clone(),
                anchor_t: frames[anchor].t,
                target_id: agent.id,
                target_class: agent.class,
                target_history,
                neighbors: kept,
                ground_truth,
            });
        }
    }
    report.instances = instances.len();
    Ok((instances, report))
}

/// Zero-padded batch of prediction instances.
///
/// Neighbor slot (i, j) is flat index i * n_b + j; each neighbor's history
/// occupies positions 0..len (chronological, ending at the anchor frame)
/// with zeros after. Padded slots have `valid = false` and never reach any
/// computation.
#[derive(Debug, Clone)]
pub struct SceneBatch<S> {
    pub t_h: usize,
    pub t_f: usize,
    pub n_b: usize,
    pub t_b: usize,
    pub k: usize,
    /// (b, t_h, 3)
    pub target_history: Tensor<S>,
    pub target_class: Vec<AgentClass>,
    /// (b, t_f, 3)
    pub ground_truth: Tensor<S>,
    /// (b, n_b, t_b, 3)
    pub neighbors: Tensor<S>,
    pub neighbor_len: Vec<usize>,
    pub neighbor_class: Vec<AgentClass>,
    pub neighbor_cell: Vec<(usize, usize)>,
    pub neighbor_valid: Vec<bool>,
    pub neighbor_dist: Vec<f64>,
}

impl<S: Scalar> SceneBatch<S> {
    pub fn len(&self) -> usize {
        self.target_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_class.is_empty()
    }

    #[inline]
    pub fn slot(&self, instance: usize, neighbor: usize) -> usize {
        instance * self.n_b + neighbor
    }

    /// Target position at the anchor frame (the decoder's first input).
    pub fn last_observed(&self, instance: usize) -> [S; 3] {
        let t = self.t_h - 1;
        [
            self.target_history.at3(instance, t, 0),
            self.target_history.at3(instance, t, 1),
            self.target_history.at3(instance, t, 2),
        ]
    }

    /// Ground-truth positions for one instance.
    pub fn truth_of(&self, instance: usize) -> Vec<[S; 3]> {
        (0..self.t_f)
            .map(|t| {
                [
                    self.ground_truth.at3(instance, t, 0),
                    self.ground_truth.at3(instance, t, 1),
                    self.ground_truth.at3(instance, t, 2),
                ]
            })
            .collect()
    }
}

/// Packs instances into padded tensors. All instances must share t_h and
/// t_f; the list must be non-empty.
pub fn build_batch<S: Scalar>(instances: &[PredictionInstance], k: usize) -> Result<SceneBatch<S>> {
    let first = instances
        .first()
        .ok_or_else(|| CoreError::Invalid("build_batch requires a non-empty instance list".to_string()))?;
    let t_h = first.target_history.len();
    let t_f = first.ground_truth.len();
    for inst in instances {
        if inst.target_history.len() != t_h || inst.ground_truth.len() != t_f {
            return Err(CoreError::Shape {
                op: "build_batch",
                detail: format!(
                    "instance for agent {} has history/future lengths {}/{}, expected {}/{}",
                    inst.target_id,
                    inst.target_history.len(),
                    inst.ground_truth.len(),
                    t_h,
                    t_f
                ),
            });
        }
        for n in &inst.neighbors {
            if n.cell.0 >= k || n.cell.1 >= k {
                return Err(CoreError::Shape {
                    op: "build_batch",
                    detail: format!("neighbor cell {:?} outside {k}x{k} grid", n.cell),
                });
            }
        }
    }
    let b = instances.len();
    let n_b = instances.iter().map(|i| i.neighbors.len()).max().unwrap().max(1);
    let t_b = instances
        .iter()
        .flat_map(|i| i.neighbors.iter().map(|n| n.history.len()))
        .max()
        .unwrap_or(1)
        .max(1);

    let mut target_history = Tensor::zeros(&[b, t_h, 3]);
    let mut ground_truth = Tensor::zeros(&[b, t_f, 3]);
    let mut neighbors = Tensor::zeros(&[b, n_b, t_b, 3]);
    let mut neighbor_len = vec![0usize; b * n_b];
    let mut neighbor_class = vec![AgentClass::Pedestrian; b * n_b];
    let mut neighbor_cell = vec![(0usize, 0usize); b * n_b];
    let mut neighbor_valid = vec![false; b * n_b];
    let mut neighbor_dist = vec![0.0f64; b * n_b];

    for (i, inst) in instances.iter().enumerate() {
        for (t, pos) in inst.target_history.iter().enumerate() {
            for (c, &v) in pos.iter().enumerate() {
                target_history.set3(i, t, c, s(v));
            }
        }
        for (t, pos) in inst.ground_truth.iter().enumerate() {
            for (c, &v) in pos.iter().enumerate() {
                ground_truth.set3(i, t, c, s(v));
            }
        }
        for (j, n) in inst.neighbors.iter().enumerate() {
            let slot = i * n_b + j;
            neighbor_len[slot] = n.history.len();
            neighbor_class[slot] = n.class;
            neighbor_cell[slot] = n.cell;
            neighbor_valid[slot] = true;
            neighbor_dist[slot] = n.distance;
            for (t, pos) in n.history.iter().enumerate() {
                for (c, &v) in pos.iter().enumerate() {
                    neighbors.set4(i, j, t, c, s(v));
                }
            }
        }
    }

    Ok(SceneBatch {
        t_h,
        t_f,
        n_b,
        t_b,
        k,
        target_history,
        target_class: instances.iter().map(|i| i.target_class).collect(),
        ground_truth,
        neighbors,
        neighbor_len,
        neighbor_class,
        neighbor_cell,
        neighbor_valid,
        neighbor_dist,
    })
}

//! Synthetic traffic scene generator.
//!
//! Desk-scale stand-in for a real driving dataset: pedestrians and riders
//! walk along gently curving arcs (heading persistence + small turn-rate
//! drift), vehicles follow straight lanes at near-constant speed with
//! occasional lane changes, and — when interactions are enabled — agents
//! repel each other: vehicles brake behind slower agents in their corridor
//! and walkers steer away from whoever is closest. The repulsion feeds into
//! integrated positions, so an agent's future depends measurably on its
//! neighbors; that dependence is the signal the social fusion must learn.
//!
//! Determinism: every agent owns a ChaCha8 stream keyed by (seed, scene,
//! agent). Draws are consumed at a fixed per-frame rate, so toggling
//! interactions or raising the density never shifts any other agent's
//! randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scene::{AgentClass, AgentState, Frame, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Low,
    Medium,
    High,
}

impl Density {
    pub fn agent_count(self) -> usize {
        match self {
            Density::Low => 6,
            Density::Medium => 12,
            Density::High => 22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub density: Density,
    /// Sampling weights for [pedestrian, vehicle, rider].
    pub class_mix: [f64; 3],
    /// Pairwise repulsion on/off (braking + steer-away).
    pub interactions: bool,
    pub n_frames: usize,
    pub frame_period_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            density: Density::Medium,
            class_mix: [0.40, 0.35, 0.25],
            interactions: true,
            n_frames: 26,
            frame_period_s: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(CoreError::Config("n_frames must be >= 1".to_string()));
        }
        if !(self.frame_period_s > 0.0 && self.frame_period_s.is_finite()) {
            return Err(CoreError::Config("frame_period_s must be positive".to_string()));
        }
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || sum <= 0.0 {
            return Err(CoreError::Config(
                "class_mix weights must be non-negative with positive sum".to_string(),
            ));
        }
        Ok(())
    }
}

/// Ground elevation: a gentle constant slope along x.
const GROUND_SLOPE: f64 = 0.02;
/// Lanes run along x; negative-y lanes carry +x traffic, positive-y carry −x.
const LANES_POS_DIR: [f64; 2] = [-6.0, -2.0];
const LANES_NEG_DIR: [f64; 2] = [2.0, 6.0];
const LANE_CHANGE_PROB: f64 = 0.02;
const LANE_CHANGE_FRAMES: u32 = 6;
/// Vehicles leave the scene beyond this |x|.
const DESPAWN_X: f64 = 70.0;
/// Braking corridor: react to agents ahead within this gap and lateral band.
const BRAKE_GAP: f64 = 14.0;
const BRAKE_BAND: f64 = 1.8;
/// Walker repulsion radius.
const REPULSE_RADIUS: f64 = 3.5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn agent_stream_seed(seed: u64, scene_index: u64, agent_index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(scene_index.wrapping_add(1)) ^ splitmix64(agent_index.wrapping_mul(0x9E37_79B9)))
}

/// Standard normal via Box-Muller; consumes exactly two uniform draws.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

enum Kinematics {
    /// Pedestrians and riders: heading-persistent arc walker.
    Walker {
        x: f64,
        y: f64,
        heading: f64,
        speed: f64,
        omega: f64,
        omega_limit: f64,
    },
    /// Lane follower along x.
    Vehicle {
        x: f64,
        y: f64,
        dir: f64,
        speed: f64,
        lane_from: f64,
        lane_to: f64,
        /// 0 when settled; counts up to LANE_CHANGE_FRAMES during a change.
        blend: u32,
    },
}

struct AgentSim {
    id: u64,
    class: AgentClass,
    spawn_frame: usize,
    alive: bool,
    rng: ChaCha8Rng,
    kin: Kinematics,
}

impl AgentSim {
    fn new(cfg: &SynthConfig, scene_index: u64, agent_index: usize) -> AgentSim {
        let mut rng = ChaCha8Rng::seed_from_u64(agent_stream_seed(
            cfg.seed,
            scene_index,
            agent_index as u64,
        ));
        let mix_sum: f64 = cfg.class_mix.iter().sum();
        let draw: f64 = rng.gen_range(0.0..mix_sum);
        let class = if draw < cfg.class_mix[0] {
            AgentClass::Pedestrian
        } else if draw < cfg.class_mix[0] + cfg.class_mix[1] {
            AgentClass::Vehicle
        } else {
            AgentClass::Rider
        };
        let kin = match class {
            AgentClass::Vehicle => {
                let toward_pos_x = rng.gen_bool(0.5);
                let lanes = if toward_pos_x { LANES_POS_DIR } else { LANES_NEG_DIR };
                let lane = lanes[rng.gen_range(0..2)];
                let dir = if toward_pos_x { 1.0 } else { -1.0 };
                let x = if toward_pos_x {
                    rng.gen_range(-62.0..25.0)
                } else {
                    rng.gen_range(-25.0..62.0)
                };
                let speed = rng.gen_range(5.0..9.5);
                Kinematics::Vehicle {
                    x,
                    y: lane,
                    dir,
                    speed,
                    lane_from: lane,
                    lane_to: lane,
                    blend: 0,
                }
            }
            AgentClass::Pedestrian => Kinematics::Walker {
                x: rng.gen_range(-45.0..45.0),
                y: rng.gen_range(-15.0..15.0),
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
                speed: (1.2 + 0.2 * normal(&mut rng)).clamp(0.6, 1.9),
                omega: (0.16 * normal(&mut rng)).clamp(-0.35, 0.35),
                omega_limit: 0.35,
            },
            AgentClass::Rider => Kinematics::Walker {
                x: rng.gen_range(-50.0..50.0),
                y: rng.gen_range(-14.0..14.0),
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
                speed: (3.5 + 0.5 * normal(&mut rng)).clamp(2.2, 4.8),
                omega: (0.08 * normal(&mut rng)).clamp(-0.2, 0.2),
                omega_limit: 0.2,
            },
        };
        AgentSim {
            id: agent_index as u64 + 1,
            class,
            spawn_frame: (agent_index % 4) * 3,
            alive: true,
            rng,
            kin,
        }
    }

    fn present(&self, frame: usize) -> bool {
        self.alive && frame >= self.spawn_frame
    }

    fn position(&self) -> [f64; 3] {
        let (x, y) = match &self.kin {
            Kinematics::Walker { x, y, .. } => (*x, *y),
            Kinematics::Vehicle { x, y, .. } => (*x, *y),
        };
        [x, y, GROUND_SLOPE * x]
    }

    /// Advances one frame. `others` holds every other present agent's
    /// (class, x, y) snapshot from the current frame. Per-frame randomness
    /// is drawn unconditionally so interaction settings never shift the
    /// stream.
    fn step(&mut self, dt: f64, others: &[(AgentClass, f64, f64)], interactions: bool) {
        match &mut self.kin {
            Kinematics::Walker {
                x,
                y,
                heading,
                speed,
                omega,
                omega_limit,
            } => {
                let drift = 0.01 * normal(&mut self.rng);
                *omega = (*omega + drift).clamp(-*omega_limit, *omega_limit);

                let out_of_bounds = x.abs() > 48.0 || y.abs() > 16.0;
                if out_of_bounds {
                    // Steer back toward the origin instead of turning freely.
                    let bearing = (-*y).atan2(-*x);
                    *heading += wrap_angle(bearing - *heading).clamp(-0.25, 0.25);
                } else {
                    *heading += *omega;
                }

                let mut factor = 1.0;
                if interactions {
                    // Repel from the nearest agent inside the radius.
                    let mut nearest: Option<(f64, f64, f64)> = None;
                    for &(_, ox, oy) in others {
                        let d2 = (ox - *x).powi(2) + (oy - *y).powi(2);
                        if nearest.map_or(true, |(nd2, _, _)| d2 < nd2) {
                            nearest = Some((d2, ox, oy));
                        }
                    }
                    if let Some((d2, ox, oy)) = nearest {
                        let d = d2.sqrt();
                        if d < REPULSE_RADIUS && d > 1e-9 {
                            let closeness = 1.0 - d / REPULSE_RADIUS;
                            factor = 0.35 + 0.65 * (d / REPULSE_RADIUS);
                            let bearing = (oy - *y).atan2(ox - *x);
                            let rel = wrap_angle(bearing - *heading);
                            if rel.abs() < std::f64::consts::FRAC_PI_2 {
                                // Turn away from an agent ahead.
                                *heading -= rel.signum() * 0.3 * closeness;
                            }
                        }
                    }
                }
                *x += *speed * factor * dt * heading.cos();
                *y += *speed * factor * dt * heading.sin();
            }
            Kinematics::Vehicle {
                x,
                y,
                dir,
                speed,
                lane_from,
                lane_to,
                blend,
            } => {
                let trigger: f64 = self.rng.gen_range(0.0..1.0);
                if *blend == 0 && trigger < LANE_CHANGE_PROB {
                    // Exactly one adjacent lane exists per direction.
                    let lanes = if *dir > 0.0 { LANES_POS_DIR } else { LANES_NEG_DIR };
                    let other = if (*lane_to - lanes[0]).abs() < 1e-9 {
                        lanes[1]
                    } else {
                        lanes[0]
                    };
                    *lane_from = *lane_to;
                    *lane_to = other;
                    *blend = 1;
                } else if *blend > 0 {
                    *blend += 1;
                    if *blend > LANE_CHANGE_FRAMES {
                        *lane_from = *lane_to;
                        *blend = 0;
                    }
                }

                let mut factor = 1.0;
                if interactions {
                    // Brake behind the closest agent ahead in the corridor.
                    let mut min_gap = f64::INFINITY;
                    for &(_, ox, oy) in others {
                        let ahead = (ox - *x) * *dir;
                        if ahead > 0.1 && ahead < BRAKE_GAP && (oy - *y).abs() < BRAKE_BAND {
                            min_gap = min_gap.min(ahead);
                        }
                    }
                    if min_gap.is_finite() {
                        let brake = (BRAKE_GAP - min_gap) / BRAKE_GAP;
                        factor = (1.0 - 0.8 * brake).max(0.2);
                    }
                }
                *x += *dir * *speed * factor * dt;
                if *blend > 0 {
                    let p = f64::from(*blend) / f64::from(LANE_CHANGE_FRAMES);
                    *y = *lane_from
                        + (*lane_to - *lane_from) * 0.5 * (1.0 - (std::f64::consts::PI * p).cos());
                } else {
                    *y = *lane_to;
                }
                if x.abs() > DESPAWN_X {
                    self.alive = false;
                }
            }
        }
    }
}

/// Generates one scene; `scene_index` distinguishes scenes of a corpus that
/// share a config.
pub fn generate_scene(cfg: &SynthConfig, scene_index: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut agents: Vec<AgentSim> = (0..cfg.density.agent_count())
        .map(|i| AgentSim::new(cfg, scene_index, i))
        .collect();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        // Record the current frame.
        let mut states: Vec<AgentState> = Vec::new();
        for a in agents.iter() {
            if a.present(f) {
                let pos = a.position();
                states.push(AgentState {
                    id: a.id,
                    class: a.class,
                    x: pos[0],
                    y: pos[1],
                    z: pos[2],
                });
            }
        }
        frames.push(Frame {
            t: f as i64 + 1,
            agents: states,
        });

        // Synchronous update from this frame's snapshot.
        let snapshot: Vec<(u64, AgentClass, f64, f64)> = agents
            .iter()
            .filter(|a| a.present(f))
            .map(|a| {
                let p = a.position();
                (a.id, a.class, p[0], p[1])
            })
            .collect();
        for a in agents.iter_mut() {
            if !a.present(f) {
                continue;
            }
            let others: Vec<(AgentClass, f64, f64)> = snapshot
                .iter()
                .filter(|(id, _, _, _)| *id != a.id)
                .map(|&(_, c, x, y)| (c, x, y))
                .collect();
            a.step(cfg.frame_period_s, &others, cfg.interactions);
        }
    }

    let scene = Scene {
        scene_id: format!("synth-{}-{:04}", cfg.seed, scene_index),
        frame_period_s: cfg.frame_period_s,
        frames,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn generate_corpus(cfg: &SynthConfig, n_scenes: usize) -> Result<Vec<Scene>> {
    (0..n_scenes as u64).map(|i| generate_scene(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scene-level minimum pairwise distance across all frames.
    fn min_pair_distance(scene: &Scene) -> f64 {
        let mut best = f64::INFINITY;
        for frame in &scene.frames {
            for (i, a) in frame.agents.iter().enumerate() {
                for b in frame.agents.iter().skip(i + 1) {
                    let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
        }
        best
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_scene(&cfg, 3).unwrap();
        let b = generate_scene(&cfg, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn higher_density_means_more_agents_per_frame() {
        let mut low_cfg = SynthConfig::default();
        low_cfg.density = Density::Low;
        let mut high_cfg = SynthConfig::default();
        high_cfg.density = Density::High;
        let mean = |scene: &Scene| -> f64 {
            scene.frames.iter().map(|f| f.agents.len() as f64).sum::<f64>()
                / scene.frames.len() as f64
        };
        let low = generate_scene(&low_cfg, 0).unwrap();
        let high = generate_scene(&high_cfg, 0).unwrap();
        assert!(mean(&high) > mean(&low), "{} vs {}", mean(&high), mean(&low));
    }

    #[test]
    fn vehicles_without_interactions_follow_their_lane_exactly() {
        let mut cfg = SynthConfig::default();
        cfg.interactions = false;
        cfg.density = Density::High;
        cfg.n_frames = 30;
        let scene = generate_scene(&cfg, 1).unwrap();

        // Collect per-vehicle position sequences.
        use std::collections::BTreeMap;
        let mut tracks: BTreeMap<u64, Vec<[f64; 3]>> = BTreeMap::new();
        for frame in &scene.frames {
            for a in &frame.agents {
                if a.class == AgentClass::Vehicle {
                    tracks.entry(a.id).or_default().push([a.x, a.y, a.z]);
                }
            }
        }
        assert!(!tracks.is_empty());
        let lanes = [-6.0, -2.0, 2.0, 6.0];
        for (_, track) in tracks {
            if track.len() < 3 {
                continue;
            }
            // Constant per-frame advance along x: the lane polyline sampling.
            let dx0 = track[1][0] - track[0][0];
            for pair in track.windows(2) {
                let dx = pair[1][0] - pair[0][0];
                assert!((dx - dx0).abs() < 1e-9, "x advance must be constant");
            }
            // y stays within the lane band, and z is the ground slope.
            for p in &track {
                assert!(
                    p[1] >= lanes[0] - 1e-9 && p[1] <= lanes[3] + 1e-9,
                    "y = {} outside lane band",
                    p[1]
                );
                assert!((p[2] - GROUND_SLOPE * p[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repulsion_increases_minimum_separation() {
        let mut on = SynthConfig::default();
        on.density = Density::High;
        on.n_frames = 30;
        let mut off = on;
        off.interactions = false;

        let n = 12;
        let mean_min = |cfg: &SynthConfig| -> f64 {
            (0..n)
                .map(|i| min_pair_distance(&generate_scene(cfg, i).unwrap()))
                .sum::<f64>()
                / n as f64
        };
        let with = mean_min(&on);
        let without = mean_min(&off);
        assert!(
            with > without,
            "interaction on: {with:.3} m, off: {without:.3} m"
        );
    }

    #[test]
    fn agents_enter_and_leave() {
        let mut cfg = SynthConfig::default();
        cfg.density = Density::High;
        cfg.n_frames = 40;
        let scene = generate_scene(&cfg, 0).unwrap();
        let counts: Vec<usize> = scene.frames.iter().map(|f| f.agents.len()).collect();
        // Staggered spawns: the first frame has fewer agents than the peak.
        let peak = *counts.iter().max().unwrap();
        assert!(counts[0] < peak);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.class_mix = [0.0, 0.0, 0.0];
        assert!(generate_scene(&cfg, 0).is_err());
        let mut cfg2 = SynthConfig::default();
        cfg2.n_frames = 0;
        assert!(generate_scene(&cfg2, 0).is_err());
        let mut cfg3 = SynthConfig::default();
        cfg3.class_mix = [0.4, -0.1, 0.2];
        assert!(generate_scene(&cfg3, 0).is_err());
    }

    #[test]
    fn walkers_curve_rather_than_travel_straight() {
        // The social models must have something linear regression cannot
        // capture: verify pedestrians/riders actually turn.
        let cfg = SynthConfig::default();
        let scene = generate_scene(&cfg, 5).unwrap();
        use std::collections::BTreeMap;
        let mut tracks: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
        for frame in &scene.frames {
            for a in &frame.agents {
                if a.class != AgentClass::Vehicle {
                    tracks.entry(a.id).or_default().push([a.x, a.y]);
                }
            }
        }
        let mut curved = 0usize;
        let mut total = 0usize;
        for (_, tr) in tracks {
            if tr.len() < 8 {
                continue;
            }
            total += 1;
            // Heading change between first and last displacement vectors.
            let h0 = (tr[1][1] - tr[0][1]).atan2(tr[1][0] - tr[0][0]);
            let n = tr.len() - 1;
            let h1 = (tr[n][1] - tr[n - 1][1]).atan2(tr[n][0] - tr[n - 1][0]);
            if wrap_angle(h1 - h0).abs() > 0.15 {
                curved += 1;
            }
        }
        assert!(total > 0);
        assert!(curved * 2 >= total, "{curved}/{total} walkers curved");
    }
}

//! Landmark populations: static scenery, rigidly moving dynamic objects and
//! temporarily static clusters that jump while nobody is looking.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::ScenarioError;
use crate::sim::camera::CameraModel;
use crate::sim::scenario::{Region, Scenario, TemporaryStaticSpec};
use crate::sim::trajectory::{visibility_windows, TimedPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkKind {
    Static,
    Dynamic,
    TemporarilyStatic,
}

impl LandmarkKind {
    pub fn name(self) -> &'static str {
        match self {
            LandmarkKind::Static => "static",
            LandmarkKind::Dynamic => "dynamic",
            LandmarkKind::TemporarilyStatic => "temporarily_static",
        }
    }

    pub fn parse(s: &str) -> Option<LandmarkKind> {
        [
            LandmarkKind::Static,
            LandmarkKind::Dynamic,
            LandmarkKind::TemporarilyStatic,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    /// Whether the landmark is a valid static reference while it is observed.
    pub fn is_static_while_observed(self) -> bool {
        !matches!(self, LandmarkKind::Dynamic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PositionSchedule {
    Constant(Vector3<f64>),
    /// `base + velocity t + amplitude sin(omega t + phase)`.
    Oscillating {
        base: Vector3<f64>,
        velocity: Vector3<f64>,
        amplitude: Vector3<f64>,
        omega: f64,
        phase: f64,
    },
    /// Holds `initial` until the first jump time, then each jump's position.
    Piecewise {
        initial: Vector3<f64>,
        jumps: Vec<(f64, Vector3<f64>)>,
    },
}

impl PositionSchedule {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        match self {
            PositionSchedule::Constant(p) => *p,
            PositionSchedule::Oscillating {
                base,
                velocity,
                amplitude,
                omega,
                phase,
            } => base + velocity * t + amplitude * (omega * t + phase).sin(),
            PositionSchedule::Piecewise { initial, jumps } => jumps
                .iter()
                .take_while(|(tj, _)| *tj <= t)
                .last()
                .map(|(_, p)| *p)
                .unwrap_or(*initial),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub kind: LandmarkKind,
    /// Rigid object or cluster this landmark belongs to.
    pub object: Option<usize>,
    pub schedule: PositionSchedule,
}

impl Landmark {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        self.schedule.at(t)
    }
}

fn sample_region<R: Rng + ?Sized>(region: &Region, rng: &mut R) -> Vector3<f64> {
    match region {
        Region::Box { min, max } => Vector3::from_fn(|i, _| {
            if max[i] > min[i] {
                rng.random_range(min[i]..max[i])
            } else {
                min[i]
            }
        }),
        Region::Cylinder {
            center,
            radius_min,
            radius_max,
            z_min,
            z_max,
        } => {
            let a = rng.random_range(0.0..TAU);
            let r = if radius_max > radius_min {
                rng.random_range(*radius_min..*radius_max)
            } else {
                *radius_min
            };
            let z = if z_max > z_min {
                rng.random_range(*z_min..*z_max)
            } else {
                *z_min
            };
            Vector3::new(center[0] + r * a.cos(), center[1] + r * a.sin(), center[2] + z)
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Build the landmark set of a scenario. Ids are assigned static first, then
/// dynamic, then temporarily static. The trajectory samples are used to
/// schedule and validate relocations of temporarily static clusters.
pub fn generate_landmarks<R: Rng + ?Sized>(
    scenario: &Scenario,
    samples: &[TimedPose],
    rng: &mut R,
) -> Result<Vec<Landmark>, ScenarioError> {
    let counts = scenario.counts()?;
    let spec = &scenario.landmarks;
    let mut out = Vec::with_capacity(spec.total);

    let regions = &spec.static_regions;
    for i in 0..counts.static_count {
        let region = &regions[i % regions.len()];
        out.push(Landmark {
            id: out.len(),
            kind: LandmarkKind::Static,
            object: None,
            schedule: PositionSchedule::Constant(sample_region(region, rng)),
        });
    }

    if counts.dynamic > 0 {
        let d = &spec.dynamic;
        let objects = d.objects.min(counts.dynamic);
        let motions: Vec<_> = (0..objects)
            .map(|_| {
                let center = sample_region(&d.region, rng);
                let dir = unit_vector(rng);
                let phase = rng.random_range(0.0..TAU);
                (center, dir * d.amplitude, phase)
            })
            .collect();
        let omega = if d.amplitude > 0.0 { d.speed / d.amplitude } else { 0.0 };
        for i in 0..counts.dynamic {
            let o = i % objects;
            let (center, amplitude, phase) = motions[o];
            let offset = unit_vector(rng) * (d.object_radius * rng.random::<f64>().cbrt());
            out.push(Landmark {
                id: out.len(),
                kind: LandmarkKind::Dynamic,
                object: Some(o),
                schedule: PositionSchedule::Oscillating {
                    base: center + offset,
                    velocity: Vector3::from(d.follow_velocity),
                    amplitude,
                    omega,
                    phase,
                },
            });
        }
    }

    if let Some(ts) = &spec.temporarily_static {
        let jumps = relocation_times(ts, samples, &scenario.camera)?;
        let u = Vector3::new(-ts.facing_yaw.sin(), ts.facing_yaw.cos(), 0.0);
        let normal = Vector3::new(ts.facing_yaw.cos(), ts.facing_yaw.sin(), 0.0);
        let v = Vector3::z();
        let center = Vector3::from(ts.center);
        let step = Vector3::from(ts.relocation);
        for _ in 0..ts.count {
            let a = rng.random_range(-0.5..0.5) * ts.size[0];
            let b = rng.random_range(-0.5..0.5) * ts.size[1];
            let c = rng.random_range(-0.05..0.05);
            let initial = center + u * a + v * b + normal * c;
            let schedule = PositionSchedule::Piecewise {
                initial,
                jumps: jumps
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| (t, initial + step * (j + 1) as f64))
                    .collect(),
            };
            out.push(Landmark {
                id: out.len(),
                kind: LandmarkKind::TemporarilyStatic,
                object: Some(0),
                schedule,
            });
        }
    }

    validate_relocations(&out, samples, &scenario.camera)?;
    Ok(out)
}

/// Jump instants for a temporarily static cluster: explicit times, or one
/// jump in the middle of each gap between the keyframes that see the
/// cluster center (at its current or next position) and the keyframes that
/// next see the moved center.
fn relocation_times(
    ts: &TemporaryStaticSpec,
    samples: &[TimedPose],
    camera: &CameraModel,
) -> Result<Vec<f64>, ScenarioError> {
    if let Some(times) = &ts.relocation_times {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScenarioError::Invalid(
                "relocation_times must be strictly increasing".into(),
            ));
        }
        return Ok(times.clone());
    }
    let mut times = Vec::new();
    let mut center = Vector3::from(ts.center);
    let step = Vector3::from(ts.relocation);
    let mut from = 0;
    while times.len() < ts.max_relocations && from < samples.len() {
        let moved = center + step;
        let watching =
            |s: &TimedPose| camera.sees_world_point(&s.pose, &center) || camera.sees_world_point(&s.pose, &moved);
        let Some(first) = samples[from..].iter().position(watching) else {
            break;
        };
        let end = from + first + samples[from + first..].iter().take_while(|s| watching(s)).count() - 1;
        let next = visibility_windows(&samples[end + 1..], camera, &moved);
        let Some(&(start, _)) = next.first() else { break };
        let start = end + 1 + start;
        // frames end+1 ..= start-1 see neither position; jump between two of them
        if start < end + 3 {
            break;
        }
        let a = (end + start - 1) / 2;
        times.push(0.5 * (samples[a].t + samples[a + 1].t));
        center = moved;
        from = start;
    }
    Ok(times)
}

/// Reject any temporarily static landmark that is visible from a keyframe
/// adjacent to one of its jumps, either before or after the move.
pub fn validate_relocations(
    landmarks: &[Landmark],
    samples: &[TimedPose],
    camera: &CameraModel,
) -> Result<(), ScenarioError> {
    for lm in landmarks {
        let PositionSchedule::Piecewise { jumps, .. } = &lm.schedule else {
            continue;
        };
        for &(tj, _) in jumps {
            let before = samples.iter().rev().find(|s| s.t < tj);
            let after = samples.iter().find(|s| s.t > tj);
            for s in before.into_iter().chain(after) {
                if camera.sees_world_point(&s.pose, &lm.position_at(s.t)) {
                    return Err(ScenarioError::Validation(format!(
                        "landmark {} relocates at t={tj} while visible from the keyframe at t={}",
                        lm.id, s.t
                    )));
                }
            }
            if samples.iter().any(|s| s.t == tj) {
                return Err(ScenarioError::Validation(format!(
                    "landmark {} relocates exactly at a keyframe instant t={tj}",
                    lm.id
                )));
            }
        }
    }
    Ok(())
}

//! Task identities, object geometry and the per-level randomization ranges.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickPlace,
    Rotate,
    Pour,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::PickPlace, TaskKind::Rotate, TaskKind::Pour];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::PickPlace => "pick_place",
            TaskKind::Rotate => "rotate",
            TaskKind::Pour => "pour",
        }
    }

    /// Whether the task has a second, static object the manipulated one is
    /// brought to (plate or bowl).
    pub fn has_target(&self) -> bool {
        !matches!(self, TaskKind::Rotate)
    }

    pub fn default_object(&self) -> Geometry {
        match self {
            TaskKind::PickPlace => Geometry::Box { half_extents: [0.025, 0.025, 0.025] },
            TaskKind::Rotate => Geometry::Valve { blades: 3 },
            TaskKind::Pour => Geometry::Cylinder { radius: 0.03, half_height: 0.06 },
        }
    }

    pub fn target_geometry(&self) -> Option<Geometry> {
        match self {
            TaskKind::PickPlace => Some(Geometry::Plate),
            TaskKind::Rotate => None,
            TaskKind::Pour => Some(Geometry::Bowl),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pick_place" | "pick-place" => Ok(TaskKind::PickPlace),
            "rotate" => Ok(TaskKind::Rotate),
            "pour" => Ok(TaskKind::Pour),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Valve { blades: u32 },
    Bowl,
    Plate,
    Particle,
}

impl Geometry {
    /// Height of the object's reference point above the surface it rests on.
    pub fn rest_height(&self) -> f64 {
        match self {
            Geometry::Box { half_extents } => half_extents[2],
            Geometry::Cylinder { half_height, .. } => *half_height,
            Geometry::Particle => 0.005,
            Geometry::Valve { .. } | Geometry::Bowl | Geometry::Plate => 0.0,
        }
    }

    /// Half-height along the object's own z axis (distance to its top face).
    pub fn half_height(&self) -> f64 {
        self.rest_height()
    }

    /// Smallest yaw period under which the shape looks the same; `None` for
    /// shapes symmetric under any rotation about z.
    pub fn yaw_period(&self) -> Option<f64> {
        match self {
            Geometry::Box { half_extents } if half_extents[0] == half_extents[1] => Some(PI / 2.0),
            Geometry::Box { .. } => Some(PI),
            Geometry::Valve { blades } => Some(TAU / f64::from((*blades).max(1))),
            Geometry::Cylinder { .. } | Geometry::Bowl | Geometry::Plate | Geometry::Particle => None,
        }
    }

    pub fn is_graspable(&self) -> bool {
        matches!(self, Geometry::Box { .. } | Geometry::Cylinder { .. } | Geometry::Valve { .. })
    }

    pub fn parse(s: &str) -> Result<Geometry, String> {
        match s {
            "box" => Ok(TaskKind::PickPlace.default_object()),
            "cylinder" => Ok(Geometry::Cylinder { radius: 0.025, half_height: 0.03 }),
            "bottle" => Ok(TaskKind::Pour.default_object()),
            "tri-valve" => Ok(Geometry::Valve { blades: 3 }),
            "tetra-valve" => Ok(Geometry::Valve { blades: 4 }),
            "penta-valve" => Ok(Geometry::Valve { blades: 5 }),
            other => {
                if let Some(n) = other.strip_prefix("valve").and_then(|n| n.parse().ok()) {
                    Ok(Geometry::Valve { blades: n })
                } else {
                    Err(format!("unknown geometry '{other}'"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Shrinks the interval towards `anchor` (clamped into the interval):
    /// scale 10 keeps it whole, scale 0 collapses it onto the anchor.
    pub fn scaled(&self, scale: f64, anchor: f64) -> Interval {
        let f = (scale / 10.0).clamp(0.0, 1.0);
        let a = anchor.clamp(self.lo, self.hi);
        if f == 1.0 {
            return *self;
        }
        if f == 0.0 {
            return Interval::point(a);
        }
        Interval { lo: a - f * (a - self.lo), hi: a + f * (self.hi - a) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        let u: f64 = rng.random();
        self.lo + u * (self.hi - self.lo)
    }
}

/// Randomization ranges of one task at one level. Positions in meters,
/// yaw in degrees, (0, 0) is the table center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRanges {
    pub manipulated_x: Interval,
    pub manipulated_y: Interval,
    pub manipulated_yaw: Interval,
    /// `None` keeps the target at its nominal position.
    pub target_x: Option<Interval>,
    pub target_y: Option<Interval>,
    /// Light/texture randomness scale (0 disables).
    pub light_scale: f64,
}

pub const NOMINAL_PLATE: [f64; 2] = [0.0, -0.2];
pub const NOMINAL_BOWL: [f64; 2] = [0.0, 0.25];

impl LevelRanges {
    /// Default ranges for levels 1..=4.
    pub fn defaults(task: TaskKind, level: u8) -> LevelRanges {
        let i = Interval::new;
        let light = if level >= 2 { 2.0 } else { 0.0 };
        match task {
            TaskKind::PickPlace => {
                let (mx, my, yaw) = if level >= 4 {
                    (i(-0.2, 0.2), i(0.1, 0.3), i(70.0, 90.0))
                } else {
                    (i(-0.1, 0.1), i(0.2, 0.3), i(80.0, 90.0))
                };
                let (tx, ty) = match level {
                    3 => (Some(i(-0.1, 0.1)), Some(i(-0.3, -0.1))),
                    4.. => (Some(i(-0.2, 0.2)), Some(i(-0.3, 0.0))),
                    _ => (None, None),
                };
                LevelRanges {
                    manipulated_x: mx,
                    manipulated_y: my,
                    manipulated_yaw: yaw,
                    target_x: tx,
                    target_y: ty,
                    light_scale: light,
                }
            }
            TaskKind::Pour => {
                let (mx, my, yaw) = if level >= 4 {
                    (i(-0.1, 0.15), i(-0.3, 0.0), i(0.0, 359.0))
                } else {
                    (i(-0.1, 0.1), i(-0.2, -0.1), i(0.0, 179.0))
                };
                let (tx, ty) = match level {
                    3 => (Some(i(-0.1, 0.1)), Some(i(0.2, 0.3))),
                    4.. => (Some(i(-0.2, 0.2)), Some(i(0.2, 0.4))),
                    _ => (None, None),
                };
                LevelRanges {
                    manipulated_x: mx,
                    manipulated_y: my,
                    manipulated_yaw: yaw,
                    target_x: tx,
                    target_y: ty,
                    light_scale: light,
                }
            }
            TaskKind::Rotate => {
                let (mx, my, yaw) = match level {
                    3 => (i(-0.1, 0.1), i(-0.15, 0.15), i(0.0, 30.0)),
                    4.. => (i(-0.2, 0.2), i(-0.3, 0.3), i(0.0, 60.0)),
                    _ => (Interval::point(0.0), Interval::point(0.0), i(0.0, 30.0)),
                };
                LevelRanges {
                    manipulated_x: mx,
                    manipulated_y: my,
                    manipulated_yaw: yaw,
                    target_x: None,
                    target_y: None,
                    light_scale: light,
                }
            }
        }
    }

    /// Ranges shrunk towards an anchor placement (see [`Interval::scaled`]).
    /// Without an anchor the interval midpoints (and nominal target) are used.
    pub fn scaled(&self, task: TaskKind, scale: f64, anchor: Option<&Placement>) -> LevelRanges {
        let nominal = Placement::nominal(task, self);
        let a = anchor.unwrap_or(&nominal);
        let ta = a.target.unwrap_or(nominal.target.unwrap_or([0.0, 0.0]));
        LevelRanges {
            manipulated_x: self.manipulated_x.scaled(scale, a.object[0]),
            manipulated_y: self.manipulated_y.scaled(scale, a.object[1]),
            manipulated_yaw: self.manipulated_yaw.scaled(scale, a.object_yaw_deg),
            target_x: self.target_x.map(|r| r.scaled(scale, ta[0])),
            target_y: self.target_y.map(|r| r.scaled(scale, ta[1])),
            light_scale: self.light_scale * (scale / 10.0).clamp(0.0, 1.0),
        }
    }

    /// Samples a placement. Targets without a range are copied from `base`
    /// (or the nominal target when `base` is `None`).
    pub fn sample<R: Rng + ?Sized>(&self, task: TaskKind, base: Option<&Placement>, rng: &mut R) -> Placement {
        let x = self.manipulated_x.sample(rng);
        let y = self.manipulated_y.sample(rng);
        let yaw = self.manipulated_yaw.sample(rng);
        let fallback = base.and_then(|b| b.target).or_else(|| nominal_target(task));
        let target = if task.has_target() {
            let f = fallback.unwrap_or([0.0, 0.0]);
            let tx = self.target_x.map_or(f[0], |r| r.sample(rng));
            let ty = self.target_y.map_or(f[1], |r| r.sample(rng));
            Some([tx, ty])
        } else {
            None
        };
        Placement { object: [x, y], object_yaw_deg: yaw, target }
    }

    pub fn contains(&self, p: &Placement) -> bool {
        let obj = self.manipulated_x.contains(p.object[0])
            && self.manipulated_y.contains(p.object[1])
            && self.manipulated_yaw.contains(p.object_yaw_deg);
        let tgt = match (p.target, self.target_x, self.target_y) {
            (Some(t), Some(rx), Some(ry)) => rx.contains(t[0]) && ry.contains(t[1]),
            _ => true,
        };
        obj && tgt
    }
}

pub fn nominal_target(task: TaskKind) -> Option<[f64; 2]> {
    match task {
        TaskKind::PickPlace => Some(NOMINAL_PLATE),
        TaskKind::Pour => Some(NOMINAL_BOWL),
        TaskKind::Rotate => None,
    }
}

/// Where the task objects start: manipulated object xy and yaw, target xy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object: [f64; 2],
    pub object_yaw_deg: f64,
    pub target: Option<[f64; 2]>,
}

impl Placement {
    pub fn nominal(task: TaskKind, ranges: &LevelRanges) -> Placement {
        Placement {
            object: [ranges.manipulated_x.mid(), ranges.manipulated_y.mid()],
            object_yaw_deg: ranges.manipulated_yaw.mid(),
            target: nominal_target(task),
        }
    }
}

/// The full level table for all tasks, loadable from JSON to override defaults.
///
/// Schema: `{"pick_place": {"1": LevelRanges, ..., "4": LevelRanges}, "rotate": {...}, "pour": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable(pub BTreeMap<TaskKind, BTreeMap<String, LevelRanges>>);

impl Default for LevelTable {
    fn default() -> Self {
        let mut table = BTreeMap::new();
        for task in TaskKind::ALL {
            let levels = (1..=4u8).map(|l| (l.to_string(), LevelRanges::defaults(task, l))).collect();
            table.insert(task, levels);
        }
        LevelTable(table)
    }
}

impl LevelTable {
    pub fn load(path: &Path) -> Result<LevelTable, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(e.to_string()))?;
        let overrides: LevelTable = serde_json::from_str(&text).map_err(|e| SimError::Config(e.to_string()))?;
        let mut table = LevelTable::default();
        for (task, levels) in overrides.0 {
            let entry = table.0.entry(task).or_default();
            for (level, ranges) in levels {
                entry.insert(level, ranges);
            }
        }
        Ok(table)
    }

    pub fn ranges(&self, task: TaskKind, level: u8) -> LevelRanges {
        self.0
            .get(&task)
            .and_then(|m| m.get(&level.clamp(1, 4).to_string()))
            .copied()
            .unwrap_or_else(|| LevelRanges::defaults(task, level.clamp(1, 4)))
    }
}

/// Task identity plus the level whose ranges drive `reset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub level: u8,
    pub ranges: LevelRanges,
    /// Geometry of the manipulated object.
    pub object: Geometry,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, level: u8) -> TaskSpec {
        let level = level.clamp(1, 4);
        TaskSpec { kind, level, ranges: LevelRanges::defaults(kind, level), object: kind.default_object() }
    }

    pub fn with_object(mut self, object: Geometry) -> TaskSpec {
        self.object = object;
        self
    }

    pub fn with_ranges(mut self, ranges: LevelRanges) -> TaskSpec {
        self.ranges = ranges;
        self
    }
}

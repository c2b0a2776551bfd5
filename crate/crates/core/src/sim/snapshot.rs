//! Versioned little-endian binary encoding of [`WorldState`].

use thiserror::Error;

use super::{Geometry, Grasp, SceneObject, WorldState};
use crate::se3::Pose;

pub const MAGIC: [u8; 3] = *b"DAS";
pub const VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("snapshot version {found}, expected {expected}")]
    Version { found: u8, expected: u8 },
    #[error("snapshot truncated")]
    Truncated,
    #[error("snapshot malformed: {0}")]
    Malformed(String),
}

pub fn encode(s: &WorldState) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(256));
    w.0.extend_from_slice(&MAGIC);
    w.u8(VERSION);
    w.u64(s.tick);
    w.pose(&s.ee_pose);
    w.u32(s.finger_values.len() as u32);
    for v in &s.finger_values {
        w.f64(*v);
    }
    w.u32(s.objects.len() as u32);
    for o in &s.objects {
        w.u32(o.id);
        w.geometry(&o.geometry);
        w.pose(&o.pose);
        w.u8(u8::from(o.attached));
    }
    match s.grasp {
        None => w.u8(0),
        Some(Grasp::Rigid { object, offset }) => {
            w.u8(1);
            w.u32(object as u32);
            w.pose(&offset);
        }
        Some(Grasp::Valve { object, blade }) => {
            w.u8(2);
            w.u32(object as u32);
            w.u32(blade);
        }
    }
    w.f64(s.valve_angle);
    w.u32(s.particles_in_bowl);
    w.u32(s.particles_spilled);
    w.u64(s.rng_state);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<WorldState, SnapshotError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(3)? != MAGIC {
        return Err(SnapshotError::Malformed("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(SnapshotError::Version { found: version, expected: VERSION });
    }
    let tick = r.u64()?;
    let ee_pose = r.pose()?;
    let nf = r.len(8)?;
    let finger_values = (0..nf).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let no = r.len(4)?;
    let mut objects = Vec::with_capacity(no);
    for _ in 0..no {
        let id = r.u32()?;
        let geometry = r.geometry()?;
        let pose = r.pose()?;
        let attached = r.u8()? != 0;
        objects.push(SceneObject { id, geometry, pose, attached });
    }
    let grasp = match r.u8()? {
        0 => None,
        1 => Some(Grasp::Rigid { object: r.u32()? as usize, offset: r.pose()? }),
        2 => Some(Grasp::Valve { object: r.u32()? as usize, blade: r.u32()? }),
        t => return Err(SnapshotError::Malformed(format!("grasp tag {t}"))),
    };
    if let Some(g) = grasp {
        if g.object() >= objects.len() {
            return Err(SnapshotError::Malformed("grasp refers to missing object".into()));
        }
    }
    let state = WorldState {
        tick,
        ee_pose,
        finger_values,
        objects,
        grasp,
        valve_angle: r.f64()?,
        particles_in_bowl: r.u32()?,
        particles_spilled: r.u32()?,
        rng_state: r.u64()?,
    };
    if r.pos != bytes.len() {
        return Err(SnapshotError::Malformed("trailing bytes".into()));
    }
    Ok(state)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn pose(&mut self, p: &Pose) {
        for v in p.to_array() {
            self.f64(v);
        }
    }
    fn geometry(&mut self, g: &Geometry) {
        match *g {
            Geometry::Box { half_extents } => {
                self.u8(0);
                half_extents.iter().for_each(|v| self.f64(*v));
            }
            Geometry::Cylinder { radius, half_height } => {
                self.u8(1);
                self.f64(radius);
                self.f64(half_height);
            }
            Geometry::Valve { blades } => {
                self.u8(2);
                self.u32(blades);
            }
            Geometry::Bowl => self.u8(3),
            Geometry::Plate => self.u8(4),
            Geometry::Particle => self.u8(5),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).ok_or(SnapshotError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(SnapshotError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// A count whose items need at least `item` bytes each.
    fn len(&mut self, item: usize) -> Result<usize, SnapshotError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(item) > self.buf.len() - self.pos {
            return Err(SnapshotError::Truncated);
        }
        Ok(n)
    }
    fn pose(&mut self) -> Result<Pose, SnapshotError> {
        let mut a = [0.0; 7];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(Pose::from_array_raw(a))
    }
    fn geometry(&mut self) -> Result<Geometry, SnapshotError> {
        Ok(match self.u8()? {
            0 => Geometry::Box { half_extents: [self.f64()?, self.f64()?, self.f64()?] },
            1 => Geometry::Cylinder { radius: self.f64()?, half_height: self.f64()? },
            2 => Geometry::Valve { blades: self.u32()? },
            3 => Geometry::Bowl,
            4 => Geometry::Plate,
            5 => Geometry::Particle,
            t => return Err(SnapshotError::Malformed(format!("geometry tag {t}"))),
        })
    }
}

//! A small deterministic software rasterizer.
//!
//! Scene primitives are turned into flat-shaded triangle meshes, projected
//! with a pinhole camera and resolved with a per-pixel depth buffer. Shading
//! is Lambertian only: `albedo · (ambient + color · max(0, n·l))`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::se3::{self, add, cross, dot, norm, scale, sub, Pose, Quat, Vec3};
use crate::sim::{Geometry, SimConfig, WorldState};

pub type Rgb = [f64; 3];

/// Material key used for the end effector.
pub const HAND_ID: u32 = 1000;
/// Material key used for particles poured into the bowl.
pub const PARTICLE_ID: u32 = 1001;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Image {
        Image { width, height, data: vec![0; (width * height * 3) as usize] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Mean luminance over `cells × cells` equal blocks, in `[0, 1]`.
    pub fn pooled_gray(&self, cells: u32) -> Vec<f64> {
        let mut out = vec![0.0; (cells * cells) as usize];
        let mut counts = vec![0u32; out.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b] = self.pixel(x, y);
                let lum = (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0;
                let cell = ((y * cells / self.height) * cells + x * cells / self.width) as usize;
                out[cell] += lum;
                counts[cell] += 1;
            }
        }
        for (v, c) in out.iter_mut().zip(counts) {
            *v /= f64::from(c.max(1));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Camera-to-world pose; the camera looks along its +z with +y down.
    pub pose: Pose,
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraConfig {
    pub fn look_at(eye: Vec3, target: Vec3, vertical_fov: f64, width: u32, height: u32) -> CameraConfig {
        let f = scale(sub(target, eye), 1.0 / norm(sub(target, eye)));
        let mut r = cross(f, [0.0, 0.0, 1.0]);
        if norm(r) < 1e-12 {
            r = [1.0, 0.0, 0.0];
        }
        let r = scale(r, 1.0 / norm(r));
        let d = cross(f, r);
        let m = [[r[0], d[0], f[0]], [r[1], d[1], f[1]], [r[2], d[2], f[2]]];
        CameraConfig { pose: Pose::new(Quat::from_matrix(m), eye), vertical_fov, width, height }
    }

    pub fn focal(&self) -> f64 {
        0.5 * f64::from(self.height) / (0.5 * self.vertical_fov).tan()
    }

    /// Pixel coordinates and depth of a world point, `None` behind the near plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.inverse().transform_point(p);
        if c[2] <= NEAR {
            return None;
        }
        let f = self.focal();
        Some((f * c[0] / c[2] + 0.5 * f64::from(self.width), f * c[1] / c[2] + 0.5 * f64::from(self.height), c[2]))
    }

    pub fn is_valid(&self) -> bool {
        self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI && self.width >= 8 && self.height >= 8
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig::look_at([0.0, -0.75, 0.65], [0.0, 0.05, 0.0], 60f64.to_radians(), 64, 64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightConfig {
    /// Unit vector pointing from surfaces towards the light.
    pub direction: Vec3,
    pub color: Rgb,
    pub ambient: Rgb,
}

impl Default for LightConfig {
    fn default() -> Self {
        let d = [0.3, -0.4, 1.0];
        LightConfig { direction: scale(d, 1.0 / norm(d)), color: [0.75, 0.75, 0.75], ambient: [0.3, 0.3, 0.3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Solid,
    /// Alternating full/half albedo on a world-aligned grid of this cell size (m).
    Checker {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialConfig {
    pub albedo: Rgb,
    pub pattern: Pattern,
}

impl MaterialConfig {
    pub const fn solid(albedo: Rgb) -> Self {
        MaterialConfig { albedo, pattern: Pattern::Solid }
    }
}

/// Everything the renderer needs besides the world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: CameraConfig,
    pub light: LightConfig,
    pub materials: BTreeMap<u32, MaterialConfig>,
    pub ground: MaterialConfig,
    pub sky: Rgb,
}

impl Default for Scene {
    fn default() -> Self {
        Scene {
            camera: CameraConfig::default(),
            light: LightConfig::default(),
            materials: default_materials(),
            ground: MaterialConfig::solid([0.55, 0.45, 0.35]),
            sky: [0.7, 0.8, 0.95],
        }
    }
}

pub fn default_materials() -> BTreeMap<u32, MaterialConfig> {
    let mut m = BTreeMap::new();
    m.insert(0, MaterialConfig::solid([0.2, 0.4, 0.9]));
    m.insert(1, MaterialConfig::solid([0.85, 0.15, 0.15]));
    m.insert(HAND_ID, MaterialConfig::solid([0.6, 0.6, 0.6]));
    m.insert(PARTICLE_ID, MaterialConfig::solid([0.95, 0.85, 0.2]));
    m
}

/// Pre-clamp Lambertian color for a surface with normal `n`.
pub fn shade_linear(albedo: Rgb, light: &LightConfig, n: Vec3) -> Rgb {
    let lambert = dot(n, light.direction).max(0.0);
    [
        albedo[0] * (light.ambient[0] + light.color[0] * lambert),
        albedo[1] * (light.ambient[1] + light.color[1] * lambert),
        albedo[2] * (light.ambient[2] + light.color[2] * lambert),
    ]
}

fn to_u8(c: Rgb) -> [u8; 3] {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(c[0]), q(c[1]), q(c[2])]
}

const NEAR: f64 = 0.01;

struct Tri {
    v: [Vec3; 3],
    normal: Vec3,
    material: MaterialConfig,
}

struct MeshBuilder {
    tris: Vec<Tri>,
}

impl MeshBuilder {
    /// Adds a triangle with counter-clockwise winding seen from outside.
    fn tri(&mut self, pose: &Pose, a: Vec3, b: Vec3, c: Vec3, material: MaterialConfig) {
        let v = [pose.transform_point(a), pose.transform_point(b), pose.transform_point(c)];
        let n = cross(sub(v[1], v[0]), sub(v[2], v[0]));
        let len = norm(n);
        if len == 0.0 {
            return;
        }
        self.tris.push(Tri { v, normal: scale(n, 1.0 / len), material });
    }

    fn quad(&mut self, pose: &Pose, a: Vec3, b: Vec3, c: Vec3, d: Vec3, material: MaterialConfig) {
        self.tri(pose, a, b, c, material);
        self.tri(pose, a, c, d, material);
    }

    /// Axis-aligned box in `pose`'s frame, centered at `center`.
    fn cuboid(&mut self, pose: &Pose, center: Vec3, half: Vec3, m: MaterialConfig) {
        let p =
            |sx: f64, sy: f64, sz: f64| [center[0] + sx * half[0], center[1] + sy * half[1], center[2] + sz * half[2]];
        self.quad(pose, p(-1., -1., 1.), p(1., -1., 1.), p(1., 1., 1.), p(-1., 1., 1.), m);
        self.quad(pose, p(-1., -1., -1.), p(-1., 1., -1.), p(1., 1., -1.), p(1., -1., -1.), m);
        self.quad(pose, p(1., -1., -1.), p(1., 1., -1.), p(1., 1., 1.), p(1., -1., 1.), m);
        self.quad(pose, p(-1., -1., -1.), p(-1., -1., 1.), p(-1., 1., 1.), p(-1., 1., -1.), m);
        self.quad(pose, p(-1., 1., -1.), p(-1., 1., 1.), p(1., 1., 1.), p(1., 1., -1.), m);
        self.quad(pose, p(-1., -1., -1.), p(1., -1., -1.), p(1., -1., 1.), p(-1., -1., 1.), m);
    }

    /// Closed cylinder along the local z axis between `z0` and `z1`.
    fn cylinder(&mut self, pose: &Pose, radius: f64, z0: f64, z1: f64, m: MaterialConfig) {
        const SEGMENTS: usize = 16;
        for i in 0..SEGMENTS {
            let a0 = TAU * i as f64 / SEGMENTS as f64;
            let a1 = TAU * (i + 1) as f64 / SEGMENTS as f64;
            let (p0, p1) = ([radius * a0.cos(), radius * a0.sin()], [radius * a1.cos(), radius * a1.sin()]);
            self.quad(pose, [p0[0], p0[1], z0], [p1[0], p1[1], z0], [p1[0], p1[1], z1], [p0[0], p0[1], z1], m);
            self.tri(pose, [0.0, 0.0, z1], [p0[0], p0[1], z1], [p1[0], p1[1], z1], m);
            self.tri(pose, [0.0, 0.0, z0], [p1[0], p1[1], z0], [p0[0], p0[1], z0], m);
        }
    }
}

fn build_mesh(state: &WorldState, scene: &Scene, dims: &SimConfig) -> Vec<Tri> {
    let mut mb = MeshBuilder { tris: Vec::new() };

    // Table as a grid so that no single triangle spans the whole view.
    let (x0, x1, y0, y1, cells) = (-0.6, 0.6, -0.6, 0.7, 6);
    for i in 0..cells {
        for j in 0..cells {
            let xa = x0 + (x1 - x0) * i as f64 / cells as f64;
            let xb = x0 + (x1 - x0) * (i + 1) as f64 / cells as f64;
            let ya = y0 + (y1 - y0) * j as f64 / cells as f64;
            let yb = y0 + (y1 - y0) * (j + 1) as f64 / cells as f64;
            mb.quad(&Pose::IDENTITY, [xa, ya, 0.0], [xb, ya, 0.0], [xb, yb, 0.0], [xa, yb, 0.0], scene.ground);
        }
    }

    let fallback = MaterialConfig::solid([0.5, 0.5, 0.5]);
    for obj in &state.objects {
        let m = scene.materials.get(&obj.id).copied().unwrap_or(fallback);
        let pose = &obj.pose;
        match obj.geometry {
            Geometry::Box { half_extents } => mb.cuboid(pose, [0.0; 3], half_extents, m),
            Geometry::Cylinder { radius, half_height } => mb.cylinder(pose, radius, -half_height, half_height, m),
            Geometry::Plate => mb.cylinder(pose, dims.plate_radius, 0.0, dims.plate_top, m),
            Geometry::Bowl => mb.cylinder(pose, dims.bowl_radius, 0.0, dims.bowl_rim, m),
            Geometry::Particle => mb.cuboid(pose, [0.0; 3], [0.005; 3], m),
            Geometry::Valve { blades } => {
                let h = dims.valve_handle_height;
                mb.cylinder(pose, 0.015, 0.0, h, m);
                let len = dims.valve_site_radius + 0.015;
                for k in 0..blades.max(1) {
                    let a = TAU * f64::from(k) / f64::from(blades.max(1));
                    let blade = pose.compose(&Pose::from_yaw(a, [0.0; 3]));
                    mb.cuboid(&blade, [0.5 * len, 0.0, h], [0.5 * len, 0.008, 0.005], m);
                }
            }
        }
    }

    if let Some(bowl) = state.objects.iter().find(|o| o.geometry == Geometry::Bowl) {
        let m = scene.materials.get(&PARTICLE_ID).copied().unwrap_or(fallback);
        for k in 0..state.particles_in_bowl {
            let a = TAU * f64::from(k) / 4.0;
            let c = add(bowl.pose.translation, [0.025 * a.cos(), 0.025 * a.sin(), dims.bowl_rim + 0.006]);
            mb.cuboid(&Pose::from_translation(c), [0.0; 3], [0.006; 3], m);
        }
    }

    let hand = scene.materials.get(&HAND_ID).copied().unwrap_or(fallback);
    let ee = &state.ee_pose;
    mb.cuboid(ee, [0.0, 0.0, 0.04], [0.02, 0.015, 0.012], hand);
    let spread = 0.008 + 0.015 * state.aperture().clamp(0.0, 1.0);
    mb.cuboid(ee, [spread, 0.0, 0.01], [0.004, 0.008, 0.02], hand);
    mb.cuboid(ee, [-spread, 0.0, 0.01], [0.004, 0.008, 0.02], hand);
    mb.tris
}

fn checker_factor(pattern: Pattern, p: Vec3) -> f64 {
    match pattern {
        Pattern::Solid => 1.0,
        Pattern::Checker { scale } if scale > 0.0 => {
            let s = (p[0] / scale).floor() + (p[1] / scale).floor() + (p[2] / scale).floor();
            if (s as i64).rem_euclid(2) == 0 {
                1.0
            } else {
                0.5
            }
        }
        Pattern::Checker { .. } => 1.0,
    }
}

/// Renders a world state with explicit camera, light and object materials,
/// on the default ground and sky.
pub fn render(
    state: &WorldState,
    camera: &CameraConfig,
    light: &LightConfig,
    materials: &BTreeMap<u32, MaterialConfig>,
) -> Image {
    let scene = Scene { camera: *camera, light: *light, materials: materials.clone(), ..Scene::default() };
    render_scene(state, &scene)
}

pub fn render_scene(state: &WorldState, scene: &Scene) -> Image {
    render_scene_with(state, scene, &SimConfig::default())
}

pub fn render_scene_with(state: &WorldState, scene: &Scene, dims: &SimConfig) -> Image {
    let cam = &scene.camera;
    let (w, h) = (cam.width.max(1), cam.height.max(1));
    let mut img = Image::new(w, h);
    let sky = to_u8(scene.sky);
    for y in 0..h {
        for x in 0..w {
            img.set(x, y, sky);
        }
    }
    let mut inv_depth = vec![0.0f64; (w * h) as usize];
    let cam_pos = cam.pose.translation;
    let to_cam = cam.pose.inverse();
    let f = cam.focal();
    let (cx, cy) = (0.5 * f64::from(w), 0.5 * f64::from(h));

    for tri in build_mesh(state, scene, dims) {
        let centroid = scale(add(add(tri.v[0], tri.v[1]), tri.v[2]), 1.0 / 3.0);
        if dot(tri.normal, sub(cam_pos, centroid)) <= 0.0 {
            continue;
        }
        let c: Vec<Vec3> = tri.v.iter().map(|p| to_cam.transform_point(*p)).collect();
        if c.iter().any(|p| p[2] <= NEAR) {
            continue;
        }
        let s: Vec<(f64, f64)> = c.iter().map(|p| (f * p[0] / p[2] + cx, f * p[1] / p[2] + cy)).collect();
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[1].1 - s[0].1) * (s[2].0 - s[0].0);
        if area.abs() < 1e-12 {
            continue;
        }
        let minx = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let maxx = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(f64::from(w)) as u32;
        let miny = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
        let maxy = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(f64::from(h)) as u32;

        let base = shade_linear(tri.material.albedo, &scene.light, tri.normal);
        let inv_z = [1.0 / c[0][2], 1.0 / c[1][2], 1.0 / c[2][2]];
        for py in miny..maxy {
            for px in minx..maxx {
                let (qx, qy) = (f64::from(px) + 0.5, f64::from(py) + 0.5);
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (qy - a.1) - (b.1 - a.1) * (qx - a.0);
                let w0 = edge(s[1], s[2]) / area;
                let w1 = edge(s[2], s[0]) / area;
                let w2 = edge(s[0], s[1]) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let iz = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2];
                let idx = (py * w + px) as usize;
                // Strictly closer wins; the first triangle written keeps ties.
                if iz <= inv_depth[idx] {
                    continue;
                }
                inv_depth[idx] = iz;
                let factor = match tri.material.pattern {
                    Pattern::Solid => 1.0,
                    pattern => {
                        let wp = |k: usize| scale(tri.v[k], [w0, w1, w2][k] * inv_z[k] / iz);
                        checker_factor(pattern, add(add(wp(0), wp(1)), wp(2)))
                    }
                };
                img.set(px, py, to_u8(scale(base, factor)));
            }
        }
    }
    img
}

/// Unit-length check for light directions.
pub fn is_unit(v: Vec3) -> bool {
    (se3::norm(v) - 1.0).abs() <= 1e-9
}

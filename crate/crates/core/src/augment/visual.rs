//! Camera and light/texture randomization by re-rendering stored states.

use rand::Rng as _;
use std::f64::consts::TAU;

use super::{child_id, child_provenance, AugmentConfig, AugmentError};
use crate::demo::{AugmentOp, Demonstration};
use crate::render::{CameraConfig, MaterialConfig, Pattern, Rgb, Scene};
use crate::se3::{cross, norm, scale, Pose, Quat, Vec3};
use crate::seed::{self, Rng};

fn uniform(rng: &mut Rng, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0) * half_width
}

fn jitter_color(rng: &mut Rng, c: Rgb, half_width: f64) -> Rgb {
    c.map(|v| (v + uniform(rng, half_width)).clamp(0.0, 1.0))
}

/// A copy of `demo` under a new scene, with every image to be re-rendered.
fn rerendered(demo: &Demonstration, scene: Scene, op: AugmentOp, seed: u64) -> Result<Demonstration, AugmentError> {
    for (i, f) in demo.frames.iter().enumerate() {
        f.state().map_err(|e| AugmentError::ReplayFailed(format!("frame {i}: {e}")))?;
    }
    let mut out = demo.clone();
    out.id = child_id(&demo.id, op, seed);
    out.provenance = child_provenance(demo, op, seed);
    out.scene = scene;
    out.drop_images();
    Ok(out)
}

/// Samples one camera pose about the default camera: each Euler angle and
/// each translation component uniform within the configured half-widths.
pub fn randomize_camera(demo: &Demonstration, cfg: &AugmentConfig, seed: u64) -> Result<Demonstration, AugmentError> {
    let mut rng = seed::rng_for(seed, "camera");
    let half = cfg.camera_euler_deg.to_radians();
    let (yaw, pitch, roll) = (uniform(&mut rng, half), uniform(&mut rng, half), uniform(&mut rng, half));
    let t = [
        uniform(&mut rng, cfg.camera_translation),
        uniform(&mut rng, cfg.camera_translation),
        uniform(&mut rng, cfg.camera_translation),
    ];
    let base = CameraConfig {
        width: demo.scene.camera.width,
        height: demo.scene.camera.height,
        vertical_fov: demo.scene.camera.vertical_fov,
        ..CameraConfig::default()
    };
    let rotation = base.pose.rotation.mul(&Quat::from_euler_zyx(yaw, pitch, roll));
    let translation =
        [base.pose.translation[0] + t[0], base.pose.translation[1] + t[1], base.pose.translation[2] + t[2]];
    let scene = Scene { camera: CameraConfig { pose: Pose::new(rotation, translation), ..base }, ..demo.scene.clone() };
    rerendered(demo, scene, AugmentOp::Camera, seed)
}

/// Uniform direction on the spherical cap of half-angle `half_angle` about `axis`.
pub fn sample_light_direction(rng: &mut Rng, axis: Vec3, half_angle: f64) -> Vec3 {
    let axis = scale(axis, 1.0 / norm(axis));
    let cos_max = half_angle.min(std::f64::consts::PI).cos();
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let cos_t = 1.0 - u * (1.0 - cos_max);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = TAU * v;
    let helper = if axis[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let e1 = cross(axis, helper);
    let e1 = scale(e1, 1.0 / norm(e1));
    let e2 = cross(axis, e1);
    let d = [
        axis[0] * cos_t + sin_t * (phi.cos() * e1[0] + phi.sin() * e2[0]),
        axis[1] * cos_t + sin_t * (phi.cos() * e1[1] + phi.sin() * e2[1]),
        axis[2] * cos_t + sin_t * (phi.cos() * e1[2] + phi.sin() * e2[2]),
    ];
    scale(d, 1.0 / norm(d))
}

/// Light direction within a cone of half-angle `0.5 · light_scale · 0.1`
/// rad about the default; light, sky, ground and object colors each within
/// `± scale · 0.1` per channel of their defaults. The camera is kept.
pub fn randomized_scene(base: &Scene, light_scale: f64, texture_scale: f64, seed: u64) -> Scene {
    let mut rng = seed::rng_for(seed, "light");
    let defaults = Scene::default();
    let light_w = light_scale * 0.1;
    let tex_w = texture_scale * 0.1;

    let mut scene = base.clone();
    scene.light.direction = sample_light_direction(&mut rng, defaults.light.direction, 0.5 * light_scale * 0.1);
    scene.light.color = jitter_color(&mut rng, defaults.light.color, light_w);
    scene.light.ambient = jitter_color(&mut rng, defaults.light.ambient, light_w);
    scene.sky = jitter_color(&mut rng, defaults.sky, light_w);
    let ground_pattern = if texture_scale > 0.0 {
        Pattern::Checker { scale: 0.05 + 0.1 * rng.random::<f64>() }
    } else {
        defaults.ground.pattern
    };
    scene.ground =
        MaterialConfig { albedo: jitter_color(&mut rng, defaults.ground.albedo, tex_w), pattern: ground_pattern };
    for (id, base) in &defaults.materials {
        let albedo = jitter_color(&mut rng, base.albedo, tex_w);
        scene.materials.insert(*id, MaterialConfig { albedo, pattern: base.pattern });
    }
    scene
}

/// Re-renders a demo under [`randomized_scene`] with the configured scales.
pub fn randomize_light_texture(
    demo: &Demonstration,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Demonstration, AugmentError> {
    let scene = randomized_scene(&demo.scene, cfg.light_scale, cfg.texture_scale, seed);
    rerendered(demo, scene, AugmentOp::Light, seed)
}

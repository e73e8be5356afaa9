//! Synthetic two-view multi-plane scenes with ground truth.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Correspondence, GroundTruth, Homography, Intrinsics, RelativeMotion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("plane {plane} yielded only {got} of {wanted} points visible in both views")]
    PlaneNotVisible { plane: usize, got: usize, wanted: usize },
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// Names accepted by [`SceneSpec::preset`].
pub const PRESETS: [&str; 4] = ["corridor", "corner", "box", "lab"];

/// A rectangular planar region in the camera-1 frame.
///
/// The plane is `normal · X = distance` with the normal pointing away from
/// camera 1. The region spans `±half_extent` along `u_axis` and
/// `normal × u_axis` around `center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub normal: [f64; 3],
    pub distance: f64,
    pub center: [f64; 3],
    pub u_axis: [f64; 3],
    pub half_extent: [f64; 2],
    /// Mean texture color in `[0, 1]³`.
    pub color: [f64; 3],
}

impl PlaneSpec {
    /// Region through `center` with the given normal; `distance` is derived.
    pub fn through(
        center: Vector3<f64>,
        normal: Vector3<f64>,
        u_axis: Vector3<f64>,
        half: [f64; 2],
        color: [f64; 3],
    ) -> Self {
        let n = normal.normalize();
        let u = (u_axis - n * n.dot(&u_axis)).normalize();
        Self {
            normal: n.into(),
            distance: n.dot(&center),
            center: center.into(),
            u_axis: u.into(),
            half_extent: half,
            color,
        }
    }

    fn frame(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = Vector3::from(self.normal).normalize();
        let u0 = Vector3::from(self.u_axis);
        let u = (u0 - n * n.dot(&u0)).normalize();
        (Vector3::from(self.center), n, u, n.cross(&u))
    }

    fn rotated(&self, r: &Matrix3<f64>) -> Self {
        let (c, n, u, _) = self.frame();
        Self::through(r * c, r * n, r * u, self.half_extent, self.color)
    }

    /// Ray parameter where `origin + s·dir` meets the region, if it does.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (c, n, u, v) = self.frame();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = (n.dot(&c) - n.dot(origin)) / denom;
        let p = origin + dir * s - c;
        (s > 0.0 && p.dot(&u).abs() <= self.half_extent[0] && p.dot(&v).abs() <= self.half_extent[1]).then_some(s)
    }
}

/// Camera 2 relative to camera 1: rotation as an axis-angle vector (radians)
/// and the camera-2 centre in camera-1 coordinates (metres).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub rotation: [f64; 3],
    pub center: [f64; 3],
}

impl CameraPose {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *Rotation3::new(Vector3::from(self.rotation)).matrix()
    }

    /// Metric translation in `X2 = R X1 + T`.
    pub fn translation(&self) -> Vector3<f64> {
        -self.rotation_matrix() * Vector3::from(self.center)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub planes: Vec<PlaneSpec>,
    pub camera2: CameraPose,
    /// `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
    pub image_size: [u32; 2],
    pub matches_per_plane: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Standard deviation of per-match color jitter.
    pub color_jitter: f64,
    pub seed: u64,
}

/// A generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub matches: Vec<Correspondence>,
    /// Ground-truth homography of each plane.
    pub homographies: Vec<Homography>,
    /// Unit normals in the camera-1 frame.
    pub normals: Vec<Vector3<f64>>,
    pub intrinsics: Intrinsics,
    pub image_size: [u32; 2],
    pub motion: RelativeMotion,
}

impl Scene {
    pub fn plane_count(&self) -> usize {
        self.homographies.len()
    }

    /// Ground-truth plane index per match, `None` for outliers.
    pub fn gt_labels(&self) -> Vec<Option<usize>> {
        self.matches
            .iter()
            .map(|c| match c.gt_plane {
                Some(GroundTruth::Plane(p)) => Some(p),
                _ => None,
            })
            .collect()
    }
}

fn pitch(degrees: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), degrees.to_radians()).matrix()
}

/// Faces of an upright cuboid (yawed about the vertical axis) that face the
/// origin, in world coordinates.
fn visible_cuboid_faces(center: Vector3<f64>, size: Vector3<f64>, yaw_deg: f64, colors: &[[f64; 3]]) -> Vec<PlaneSpec> {
    let r = *Rotation3::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians()).matrix();
    let half = size / 2.0;
    let faces = [
        (Vector3::x(), Vector3::z(), [half.z, half.y], half.x),
        (-Vector3::x(), Vector3::z(), [half.z, half.y], half.x),
        (Vector3::y(), Vector3::x(), [half.x, half.z], half.y),
        (-Vector3::y(), Vector3::x(), [half.x, half.z], half.y),
        (Vector3::z(), Vector3::x(), [half.x, half.y], half.z),
        (-Vector3::z(), Vector3::x(), [half.x, half.y], half.z),
    ];
    let mut out = Vec::new();
    for (outward, u, extent, offset) in faces {
        let o = r * outward;
        let c = center + o * offset;
        if o.dot(&c) < 0.0 {
            let color = colors[out.len() % colors.len()];
            out.push(PlaneSpec::through(c, -o, r * u, extent, color));
        }
    }
    out
}

impl SceneSpec {
    /// Built-in scene families, with 300 matches per plane, σ = 0.5 px and
    /// 10 % outliers.
    pub fn preset(name: &str, seed: u64) -> Result<Self, SceneError> {
        let world: Vec<PlaneSpec>;
        let view: Matrix3<f64>;
        let camera2: CameraPose;
        match name {
            "corner" => {
                // Inside a room looking into the corner formed by the floor and two walls.
                view = pitch(12.0) * *Rotation3::from_axis_angle(&Vector3::y_axis(), 20.0f64.to_radians()).matrix();
                world = vec![
                    PlaneSpec::through(
                        Vector3::new(1.0, 1.4, 3.8),
                        Vector3::y(),
                        Vector3::x(),
                        [2.4, 2.0],
                        [0.55, 0.45, 0.35],
                    ),
                    PlaneSpec::through(
                        Vector3::new(-1.4, 0.0, 3.8),
                        -Vector3::x(),
                        Vector3::z(),
                        [2.0, 1.4],
                        [0.85, 0.85, 0.75],
                    ),
                    PlaneSpec::through(
                        Vector3::new(1.0, 0.0, 5.8),
                        Vector3::z(),
                        Vector3::x(),
                        [2.4, 1.4],
                        [0.35, 0.55, 0.75],
                    ),
                ];
                camera2 = CameraPose {
                    rotation: [0.02, -0.05, 0.015],
                    center: [0.17, -0.02, 0.05],
                };
            }
            "box" => {
                // A cuboid seen from outside, one vertical edge towards the camera.
                view = pitch(28.0);
                world = visible_cuboid_faces(
                    Vector3::new(0.1, 1.6, 3.1),
                    Vector3::new(1.4, 1.4, 1.4),
                    35.0,
                    &[[0.8, 0.3, 0.25], [0.3, 0.7, 0.35], [0.3, 0.35, 0.8]],
                );
                camera2 = CameraPose {
                    rotation: [-0.015, 0.05, 0.02],
                    center: [0.2, 0.03, 0.03],
                };
            }
            "corridor" => {
                view = pitch(3.0);
                world = vec![
                    PlaneSpec::through(
                        Vector3::new(0.0, 1.3, 5.5),
                        Vector3::y(),
                        Vector3::z(),
                        [3.5, 1.2],
                        [0.5, 0.45, 0.4],
                    ),
                    PlaneSpec::through(
                        Vector3::new(0.0, -1.1, 5.5),
                        -Vector3::y(),
                        Vector3::z(),
                        [3.5, 1.2],
                        [0.9, 0.9, 0.9],
                    ),
                    PlaneSpec::through(
                        Vector3::new(-1.2, 0.1, 5.5),
                        -Vector3::x(),
                        Vector3::z(),
                        [3.5, 1.2],
                        [0.7, 0.6, 0.4],
                    ),
                    PlaneSpec::through(
                        Vector3::new(1.2, 0.1, 5.5),
                        Vector3::x(),
                        Vector3::z(),
                        [3.5, 1.2],
                        [0.4, 0.6, 0.7],
                    ),
                ];
                camera2 = CameraPose {
                    rotation: [0.01, 0.04, -0.02],
                    center: [0.15, 0.02, 0.08],
                };
            }
            "lab" => {
                // Floor, back wall, a side wall and a cabinet front parallel to the back wall.
                view = pitch(10.0);
                world = vec![
                    PlaneSpec::through(
                        Vector3::new(0.0, 1.4, 4.5),
                        Vector3::y(),
                        Vector3::x(),
                        [2.0, 2.0],
                        [0.45, 0.4, 0.35],
                    ),
                    PlaneSpec::through(
                        Vector3::new(0.0, 0.2, 6.5),
                        Vector3::z(),
                        Vector3::x(),
                        [2.0, 1.2],
                        [0.8, 0.8, 0.7],
                    ),
                    PlaneSpec::through(
                        Vector3::new(2.0, 0.2, 4.5),
                        Vector3::x(),
                        Vector3::z(),
                        [2.0, 1.2],
                        [0.5, 0.7, 0.55],
                    ),
                    PlaneSpec::through(
                        Vector3::new(-0.6, 0.85, 3.8),
                        Vector3::z(),
                        Vector3::x(),
                        [0.8, 0.55],
                        [0.7, 0.35, 0.3],
                    ),
                ];
                camera2 = CameraPose {
                    rotation: [0.015, -0.04, 0.01],
                    center: [0.16, -0.02, 0.04],
                };
            }
            other => return Err(SceneError::UnknownPreset(other.to_string())),
        }
        Ok(Self {
            planes: world.iter().map(|p| p.rotated(&view)).collect(),
            camera2,
            intrinsics: [600.0, 600.0, 320.0, 240.0],
            image_size: [640, 480],
            matches_per_plane: 300,
            noise_sigma: 0.5,
            outlier_fraction: 0.1,
            color_jitter: 0.03,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidSpec(m.to_string()));
        if self.planes.is_empty() {
            return bad("at least one plane is required");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !(self.color_jitter >= 0.0) {
            return bad("color_jitter must be non-negative");
        }
        if self.matches_per_plane == 0 {
            return bad("matches_per_plane must be positive");
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image size must be positive");
        }
        for (i, p) in self.planes.iter().enumerate() {
            let n = Vector3::from(p.normal);
            if !(n.norm() > 0.0) || !(p.distance > 0.0) {
                return Err(SceneError::InvalidSpec(format!(
                    "plane {i}: need a nonzero normal and distance > 0"
                )));
            }
            if (n.normalize().dot(&Vector3::from(p.center)) - p.distance).abs() > 1e-6 * p.distance.max(1.0) {
                return Err(SceneError::InvalidSpec(format!(
                    "plane {i}: center does not lie on the plane"
                )));
            }
            if p.half_extent.iter().any(|&h| !(h > 0.0)) {
                return Err(SceneError::InvalidSpec(format!("plane {i}: extents must be positive")));
            }
            if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SceneError::InvalidSpec(format!("plane {i}: color outside [0, 1]")));
            }
        }
        let k = self.intrinsics;
        Intrinsics::new(k[0], k[1], k[2], k[3]).map_err(|e| SceneError::InvalidSpec(e.to_string()))?;
        Ok(())
    }
}

fn in_image(p: &Vector2<f64>, size: [u32; 2]) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < size[0] as f64 && p.y < size[1] as f64
}

/// Samples a scene: points on each plane region visible and unoccluded in
/// both views, Gaussian noise on view-2 positions, then a random subset of
/// matches whose view-2 positions are replaced by uniform random points.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let k = Intrinsics::new(
        spec.intrinsics[0],
        spec.intrinsics[1],
        spec.intrinsics[2],
        spec.intrinsics[3],
    )
    .map_err(|e| SceneError::InvalidSpec(e.to_string()))?;
    let r = spec.camera2.rotation_matrix();
    let t = spec.camera2.translation();
    let c2 = Vector3::from(spec.camera2.center);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let jitter = Normal::new(0.0, spec.color_jitter.max(f64::MIN_POSITIVE)).expect("finite jitter");

    let occluded = |p: &Vector3<f64>, own: usize, origin: &Vector3<f64>| {
        let dir = p - origin;
        spec.planes
            .iter()
            .enumerate()
            .any(|(j, other)| j != own && other.hit(origin, &dir).is_some_and(|s| s < 1.0 - 1e-9))
    };

    let mut matches = Vec::new();
    let mut homographies = Vec::new();
    let mut normals = Vec::new();
    for (pi, plane) in spec.planes.iter().enumerate() {
        let (centre, n, u, v) = plane.frame();
        let h_e = r + t * n.transpose() / n.dot(&centre);
        homographies
            .push(Homography::new(k.matrix() * h_e * k.inverse()).map_err(|e| SceneError::InvalidSpec(e.to_string()))?);
        normals.push(n);

        let mut got = 0;
        let budget = 200 * spec.matches_per_plane;
        for _ in 0..budget {
            if got == spec.matches_per_plane {
                break;
            }
            let p = centre
                + u * rng.random_range(-plane.half_extent[0]..plane.half_extent[0])
                + v * rng.random_range(-plane.half_extent[1]..plane.half_extent[1]);
            let p2 = r * p + t;
            if p.z <= 0.0 || p2.z <= 0.0 {
                continue;
            }
            let (Some(x1), Some(x2)) = (k.project(&p), k.project(&p2)) else {
                continue;
            };
            if !in_image(&x1, spec.image_size) || !in_image(&x2, spec.image_size) {
                continue;
            }
            if occluded(&p, pi, &Vector3::zeros()) || occluded(&p, pi, &c2) {
                continue;
            }
            let x2 = if spec.noise_sigma > 0.0 {
                x2 + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                x2
            };
            let color = Vector3::from(plane.color).map(|c| {
                if spec.color_jitter > 0.0 {
                    (c + jitter.sample(&mut rng)).clamp(0.0, 1.0)
                } else {
                    c
                }
            });
            matches.push(
                Correspondence::new(0, x1, x2)
                    .with_color(color)
                    .with_gt(GroundTruth::Plane(pi)),
            );
            got += 1;
        }
        if got < spec.matches_per_plane {
            return Err(SceneError::PlaneNotVisible {
                plane: pi,
                got,
                wanted: spec.matches_per_plane,
            });
        }
    }

    let outliers = (spec.outlier_fraction * matches.len() as f64).round() as usize;
    let picked = rand::seq::index::sample(&mut rng, matches.len(), outliers);
    for i in picked.iter() {
        let c = &mut matches[i];
        c.x_prime = Vector2::new(
            rng.random_range(0.0..spec.image_size[0] as f64),
            rng.random_range(0.0..spec.image_size[1] as f64),
        );
        c.gt_plane = Some(GroundTruth::Outlier);
    }
    matches.shuffle(&mut rng);
    for (i, c) in matches.iter_mut().enumerate() {
        c.id = i as u64;
    }

    Ok(Scene {
        matches,
        homographies,
        normals,
        intrinsics: k,
        image_size: spec.image_size,
        motion: RelativeMotion { r, t: t.normalize() },
    })
}

/// Axis-angle vector of a unit axis scaled by an angle, for spec authoring.
pub fn axis_angle(axis: Vector3<f64>, radians: f64) -> [f64; 3] {
    (Unit::new_normalize(axis).into_inner() * radians).into()
}

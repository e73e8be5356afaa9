use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use planemerge_core::geometry::{Correspondence, Intrinsics, RelativeMotion};
use planemerge_core::multistructure::PatchLabeling;
use planemerge_core::refinement::{
    cut_mesh_by_distance, delaunay_triangles, delaunay_triangulate, estimate_motion, local_normal, local_patch,
    patch_plane_model, retained_edges, LocalNormal, PlanarPatch,
};
use planemerge_core::scene::{generate_scene, Scene, SceneSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn at(points: &[Vector2<f64>]) -> Vec<Correspondence> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Correspondence::new(i as u64, *p, *p))
        .collect()
}

fn random_points(n: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
        .collect()
}

fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

fn gt_patches(scene: &Scene) -> PatchLabeling {
    PatchLabeling::from_raw(&scene.gt_labels())
}

fn plane_models(scene: &Scene, labels: &PatchLabeling) -> Vec<PlanarPatch> {
    labels
        .patches()
        .iter()
        .enumerate()
        .map(|(id, m)| patch_plane_model(id, m, &scene.matches, &scene.intrinsics, None).unwrap())
        .collect()
}

#[test]
fn delaunay_has_empty_circumcircles() {
    let pts = random_points(200, 17);
    let tris = delaunay_triangles(&pts);
    assert!(!tris.is_empty());
    for t in &tris {
        let [a, b, c] = t.map(|i| pts[i]);
        // Orientation-corrected in-circle determinant, evaluated for every point.
        let orient = (b - a).perp(&(c - a));
        for (i, d) in pts.iter().enumerate() {
            if t.contains(&i) {
                continue;
            }
            let rows = [a - d, b - d, c - d];
            let m = Matrix3::from_fn(|r, col| match col {
                0 => rows[r].x,
                1 => rows[r].y,
                _ => rows[r].norm_squared(),
            });
            let det = m.determinant() * orient.signum();
            assert!(
                det <= 1e-6 * rows.iter().map(|r| r.norm_squared()).sum::<f64>().powi(2).sqrt(),
                "point {i} inside {t:?}"
            );
        }
    }
    // Euler count for a triangulation of points in general position.
    let g = delaunay_triangulate(&at(&pts)).unwrap();
    assert_eq!(g.edges().len() + 1, pts.len() + tris.len());
}

#[test]
fn two_blobs_become_two_patches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Vector2<f64>> = (0..100)
        .map(|i| {
            let base = if i < 50 { 50.0 } else { 550.0 };
            Vector2::new(base + rng.random_range(0.0..40.0), 200.0 + rng.random_range(0.0..40.0))
        })
        .collect();
    let matches = at(&pts);
    let g = delaunay_triangulate(&matches).unwrap();
    let cut = cut_mesh_by_distance(&g, &PatchLabeling::single_patch(100), 100.0).unwrap();
    assert_eq!(cut.patch_count(), 2);

    // Flood fill over edges no longer than the threshold as the oracle.
    let mut comp = vec![usize::MAX; 100];
    let mut count = 0;
    for s in 0..100 {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = count;
        while let Some(u) = stack.pop() {
            for (v, p) in pts.iter().enumerate() {
                if comp[v] == usize::MAX && g.edges().contains(&(u.min(v), u.max(v))) && (p - pts[u]).norm() <= 100.0 {
                    comp[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    assert_eq!(count, 2);
    for i in 0..100 {
        for j in 0..100 {
            assert_eq!(comp[i] == comp[j], cut.label(i) == cut.label(j));
        }
    }

    let unchanged = cut_mesh_by_distance(&g, &cut, 1e9).unwrap();
    assert_eq!(unchanged, cut);
}

#[test]
fn nine_point_patch_becomes_outliers() {
    let pts = random_points(9, 3);
    let g = delaunay_triangulate(&at(&pts)).unwrap();
    let cut = cut_mesh_by_distance(&g, &PatchLabeling::single_patch(9), 1e9).unwrap();
    assert_eq!(cut.outlier_count(), 9);
}

#[test]
fn noiseless_plane_normal_round_trips() {
    let mut spec = SceneSpec::preset("corner", 0).unwrap();
    spec.noise_sigma = 0.0;
    spec.outlier_fraction = 0.0;
    let scene = generate_scene(&spec).unwrap();
    let labels = gt_patches(&scene);
    let patches = plane_models(&scene, &labels);
    let motion = estimate_motion(&patches, &scene.matches, &scene.intrinsics, 1.0).unwrap();
    for (p, truth) in patches.iter().zip(&scene.normals) {
        let mut p = p.clone();
        p.select_with(Some(&motion));
        assert!(p.valid);
        assert!(
            angle_deg(&p.normal, truth) < 1e-4,
            "{} deg",
            angle_deg(&p.normal, truth)
        );
    }
}

#[test]
fn nine_members_are_rejected() {
    let scene = generate_scene(&SceneSpec::preset("corner", 0).unwrap()).unwrap();
    let p = patch_plane_model(0, &[0, 1, 2, 3, 4, 5, 6, 7, 8], &scene.matches, &scene.intrinsics, None).unwrap();
    assert!(!p.valid);
}

#[test]
fn noisy_corner_patch_normals_within_ten_degrees() {
    for seed in 0..5 {
        let mut spec = SceneSpec::preset("corner", seed).unwrap();
        spec.noise_sigma = 0.5;
        spec.outlier_fraction = 0.0;
        let scene = generate_scene(&spec).unwrap();
        let labels = gt_patches(&scene);
        let mut patches = plane_models(&scene, &labels);
        let motion = estimate_motion(&patches, &scene.matches, &scene.intrinsics, 1.0).unwrap();
        for (p, truth) in patches.iter_mut().zip(&scene.normals) {
            p.select_with(Some(&motion));
            assert!(
                angle_deg(&p.normal, truth) < 10.0,
                "seed {seed}: {} deg",
                angle_deg(&p.normal, truth)
            );
        }
    }
}

/// Matches whose local patch stays on their own plane, away from the image border of the plane.
fn interior(scene: &Scene, labels: &PatchLabeling) -> Vec<usize> {
    let g = delaunay_triangulate(&scene.matches).unwrap();
    let gt = scene.gt_labels();
    let mut boundary = vec![false; gt.len()];
    for &(a, b) in g.edges() {
        if gt[a] != gt[b] {
            boundary[a] = true;
            boundary[b] = true;
        }
    }
    (0..gt.len())
        .filter(|&i| labels.label(i).is_some() && !boundary[i])
        .collect()
}

#[test]
fn local_normals_mostly_within_ten_degrees() {
    for seed in 0..5 {
        let mut spec = SceneSpec::preset("corner", seed).unwrap();
        spec.noise_sigma = 0.5;
        spec.outlier_fraction = 0.0;
        let scene = generate_scene(&spec).unwrap();
        let labels = gt_patches(&scene);
        let patches = plane_models(&scene, &labels);
        let motion = estimate_motion(&patches, &scene.matches, &scene.intrinsics, 1.0).unwrap();
        let gt = scene.gt_labels();
        let inner = interior(&scene, &labels);
        let good = inner
            .iter()
            .filter(|&&i| {
                let members = local_patch(i, &labels, &scene.matches, 10);
                match local_normal(&members, &scene.matches, &scene.intrinsics, Some(&motion)) {
                    LocalNormal::Reliable(n) => angle_deg(&n, &scene.normals[gt[i].unwrap()]) < 10.0,
                    LocalNormal::Unreliable => false,
                }
            })
            .count();
        let frac = good as f64 / inner.len() as f64;
        assert!(frac >= 0.8, "seed {seed}: {frac}");
    }
}

#[test]
fn interior_local_normal_of_clean_plane_within_five_degrees() {
    let mut spec = SceneSpec::preset("corner", 1).unwrap();
    spec.noise_sigma = 0.0;
    spec.outlier_fraction = 0.0;
    let scene = generate_scene(&spec).unwrap();
    let labels = gt_patches(&scene);
    let patches = plane_models(&scene, &labels);
    let motion = estimate_motion(&patches, &scene.matches, &scene.intrinsics, 1.0).unwrap();
    let inner = interior(&scene, &labels);
    for &i in inner.iter().take(50) {
        let members = local_patch(i, &labels, &scene.matches, 10);
        let n = local_normal(&members, &scene.matches, &scene.intrinsics, Some(&motion))
            .normal()
            .unwrap();
        let mut p = patches[labels.label(i).unwrap()].clone();
        p.select_with(Some(&motion));
        assert!(angle_deg(&n, &p.normal) < 5.0, "{} deg", angle_deg(&n, &p.normal));
    }
}

#[test]
fn too_few_neighbours_is_unreliable() {
    let scene = generate_scene(&SceneSpec::preset("corner", 2).unwrap()).unwrap();
    let n = local_normal(&[0, 1, 2], &scene.matches, &scene.intrinsics, None);
    assert_eq!(n, LocalNormal::Unreliable);
}

#[test]
fn pure_rotation_is_unreliable() {
    let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
    let r = Rotation3::from_euler_angles(0.02, -0.05, 0.01).into_inner();
    let h = k.matrix() * r * k.inverse();
    let pts = random_points(11, 5);
    let matches: Vec<Correspondence> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = h * p.push(1.0);
            Correspondence::new(i as u64, *p, q.xy() / q.z)
        })
        .collect();
    let members: Vec<usize> = (0..11).collect();
    assert_eq!(local_normal(&members, &matches, &k, None), LocalNormal::Unreliable);
    let motion = RelativeMotion {
        r,
        t: Vector3::new(1.0, 0.0, 0.0),
    };
    // Under a known motion the plane vector is zero: no parallax, no normal.
    assert_eq!(
        local_normal(&members, &matches, &k, Some(&motion)),
        LocalNormal::Unreliable
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn cut_edges_respect_threshold_and_partition(seed in 0u64..1000, threshold in 5.0f64..200.0, parts in 1usize..4) {
        let pts = random_points(80, seed);
        let g = delaunay_triangulate(&at(&pts)).unwrap();
        let raw: Vec<Option<usize>> = (0..80).map(|i| if i % 11 == 0 { None } else { Some(i % parts) }).collect();
        let labels = PatchLabeling::from_raw(&raw);
        let cut = cut_mesh_by_distance(&g, &labels, threshold).unwrap();
        for (a, b, len) in retained_edges(&g, &cut, threshold) {
            prop_assert!(len <= threshold);
            prop_assert_eq!(labels.label(a), labels.label(b));
        }
        for i in 0..80 {
            // Cutting never creates inliers and never joins patches.
            if labels.label(i).is_none() {
                prop_assert!(cut.label(i).is_none());
            }
            for j in 0..80 {
                if cut.label(i).is_some() && cut.label(i) == cut.label(j) {
                    prop_assert_eq!(labels.label(i), labels.label(j));
                }
            }
        }
        prop_assert!(cut.patches().iter().all(|p| p.len() >= 10));
    }
}

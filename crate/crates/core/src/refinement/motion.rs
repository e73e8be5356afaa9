//! Joint refinement of the relative motion over several planar patches.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use crate::geometry::{Correspondence, Intrinsics, RelativeMotion};

/// Least-squares plane vector `w = N / D` of the points `members` under a
/// fixed motion, from `x2 ~ R x1 + T (wᵀ x1)` in normalized coordinates.
pub(crate) fn plane_vector(
    members: &[usize],
    matches: &[Correspondence],
    k: &Intrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let kinv = k.inverse();
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &i in members {
        let m1 = kinv * matches[i].x.push(1.0);
        let m2 = kinv * matches[i].x_prime.push(1.0);
        let p2 = m2.xy() / m2.z;
        let a = r * m1;
        for (coord, pc) in [(0usize, p2.x), (1usize, p2.y)] {
            let row = m1 * (pc * t.z - t[coord]);
            let rhs = a[coord] - pc * a.z;
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    let w = ata.try_inverse()? * atb;
    w.iter().all(|v| v.is_finite()).then_some(w)
}

/// Pixel residual vector of every member of every group, with each group's
/// plane vector solved for the given motion. `None` when a plane is degenerate.
fn residuals(
    groups: &[&[usize]],
    matches: &[Correspondence],
    k: &Intrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Option<Vec<f64>> {
    let km = k.matrix();
    let kinv = k.inverse();
    let mut out = Vec::new();
    for g in groups {
        let w = plane_vector(g, matches, k, r, t)?;
        let h = km * (r + t * w.transpose()) * kinv;
        for &i in *g {
            let q = h * matches[i].x.push(1.0);
            if q.z.abs() < 1e-12 {
                return None;
            }
            let d = q.xy() / q.z - matches[i].x_prime;
            out.extend([d.x, d.y]);
        }
    }
    Some(out)
}

fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    let b2 = t.cross(&b1);
    (b1, b2)
}

fn apply(r: &Matrix3<f64>, t: &Vector3<f64>, step: &DVector<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let (b1, b2) = tangent_basis(t);
    let rot = Rotation3::new(Vector3::new(step[0], step[1], step[2]));
    (rot.matrix() * r, (t + b1 * step[3] + b2 * step[4]).normalize())
}

/// Huber-weighted sum of squared point errors.
fn robust_cost(res: &[f64], delta: f64) -> f64 {
    res.chunks(2)
        .map(|c| {
            let e = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if e <= delta {
                e * e
            } else {
                2.0 * delta * e - delta * delta
            }
        })
        .sum()
}

/// Refines `initial` by Levenberg–Marquardt on the transfer error of all
/// `groups`, each group being one plane whose normal is re-solved for every
/// motion. Returns the refined motion and its robust cost.
pub fn refine_motion(
    groups: &[&[usize]],
    matches: &[Correspondence],
    k: &Intrinsics,
    initial: &RelativeMotion,
    huber_delta: f64,
) -> Option<(RelativeMotion, f64)> {
    let (mut r, mut t) = (initial.r, initial.t.normalize());
    let mut res = residuals(groups, matches, k, &r, &t)?;
    let mut cost = robust_cost(&res, huber_delta);
    let mut lambda = 1e-3;
    for _ in 0..50 {
        // Huber weights as per-point scale factors.
        let weights: Vec<f64> = res
            .chunks(2)
            .map(|c| {
                let e = (c[0] * c[0] + c[1] * c[1]).sqrt();
                if e <= huber_delta {
                    1.0
                } else {
                    (huber_delta / e).sqrt()
                }
            })
            .collect();
        let m = res.len();
        let f = DVector::from_fn(m, |i, _| res[i] * weights[i / 2]);
        let mut jac = DMatrix::zeros(m, 5);
        let h = 1e-6;
        for p in 0..5 {
            let mut step = DVector::zeros(5);
            step[p] = h;
            let (rp, tp) = apply(&r, &t, &step);
            step[p] = -h;
            let (rm, tm) = apply(&r, &t, &step);
            let (Some(fp), Some(fm)) = (
                residuals(groups, matches, k, &rp, &tp),
                residuals(groups, matches, k, &rm, &tm),
            ) else {
                return Some((RelativeMotion { r, t }, cost));
            };
            for i in 0..m {
                jac[(i, p)] = (fp[i] - fm[i]) / (2.0 * h) * weights[i / 2];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtf = jac.transpose() * &f;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for d in 0..5 {
                a[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(step) = a.lu().solve(&(-&jtf)) else {
                lambda *= 10.0;
                continue;
            };
            let (rn, tn) = apply(&r, &t, &step);
            if let Some(rn_res) = residuals(groups, matches, k, &rn, &tn) {
                let c = robust_cost(&rn_res, huber_delta);
                if c < cost {
                    let gain = cost - c;
                    (r, t, res, cost) = (rn, tn, rn_res, c);
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = gain > 1e-10 * cost.max(1.0);
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some((RelativeMotion { r, t }, cost))
}

//! Homography estimation, transfer residuals and plane-induced homography
//! decomposition.
//!
//! Pixel homographies map image-1 points to image-2 points, `x' ~ H x`.
//! A plane with unit normal `N` (camera-1 frame) at distance `D` induces the
//! Euclidean homography `R + T Nᵀ / D`, where the second camera sees
//! `X2 = R X1 + T`. The pixel homography is `K (R + T Nᵀ / D) K⁻¹`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Third homogeneous coordinates below this magnitude are treated as points at infinity.
pub const INFINITY_EPS: f64 = 1e-12;

/// Relative singular value threshold below which the DLT design matrix is rank deficient.
pub const DEGENERACY_RATIO: f64 = 1e-8;

/// Singular value spread below which a Euclidean homography is a pure rotation.
pub const PURE_ROTATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate point configuration (collinear or coincident points)")]
    DegenerateConfiguration,
    #[error("at least {required} correspondences are required, got {got}")]
    InsufficientPoints { required: usize, got: usize },
    #[error("transferred point lies at infinity")]
    PointAtInfinity,
    #[error("homography matrix is singular or not finite")]
    Singular,
    #[error("homography is a pure rotation; plane normal and distance are unobservable")]
    PureRotation,
    #[error("no decomposition candidate satisfies cheirality")]
    DecompositionFailed,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Ground-truth annotation carried by synthetic or labelled data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundTruth {
    Plane(usize),
    Outlier,
}

/// A matched point pair between image 1 (`x`) and image 2 (`x_prime`).
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub id: u64,
    pub x: Vector2<f64>,
    pub x_prime: Vector2<f64>,
    /// Mean RGB of a small window around the feature, channels in `[0, 1]`.
    pub color_mean: Option<Vector3<f64>>,
    pub gt_plane: Option<GroundTruth>,
}

impl Correspondence {
    pub fn new(id: u64, x: Vector2<f64>, x_prime: Vector2<f64>) -> Self {
        Self {
            id,
            x,
            x_prime,
            color_mean: None,
            gt_plane: None,
        }
    }

    pub fn with_color(mut self, color: Vector3<f64>) -> Self {
        self.color_mean = Some(color);
        self
    }

    pub fn with_gt(mut self, gt: GroundTruth) -> Self {
        self.gt_plane = Some(gt);
        self
    }

    /// Checks the finiteness and color range invariants.
    pub fn is_valid(&self) -> bool {
        let finite = self.x.iter().chain(self.x_prime.iter()).all(|v| v.is_finite());
        let color_ok = self
            .color_mean
            .is_none_or(|c| c.iter().all(|v| (0.0..=1.0).contains(v)));
        finite && color_ok
    }
}

/// A canonically normalized 3×3 projective transform.
///
/// The stored matrix has unit Frobenius norm and its largest-magnitude
/// element is positive, so two homographies that differ only by a nonzero
/// scale compare equal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::Singular);
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(GeometryError::Singular);
        }
        let scaled = m / norm;
        if scaled.determinant().abs() < 1e-15 {
            return Err(GeometryError::Singular);
        }
        let pivot = scaled
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        Ok(Self(if pivot < 0.0 { -scaled } else { scaled }))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.0.try_inverse().ok_or(GeometryError::Singular)?;
        Self::new(inv)
    }

    /// Maps an image-1 point into image 2.
    pub fn transfer(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        if q.z.abs() < INFINITY_EPS {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Vector2::new(q.x / q.z, q.y / q.z))
    }
}

/// One-way transfer error `‖x' − H x‖₂` in pixels.
pub fn transfer_residual(h: &Homography, c: &Correspondence) -> Result<f64> {
    Ok((c.x_prime - h.transfer(&c.x)?).norm())
}

/// Mean of the forward and backward transfer errors.
pub fn symmetric_transfer_residual(h: &Homography, c: &Correspondence) -> Result<f64> {
    let forward = transfer_residual(h, c)?;
    let back = (c.x - h.inverse()?.transfer(&c.x_prime)?).norm();
    Ok(0.5 * (forward + back))
}

/// Which transfer error the residual-driven stages use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    #[default]
    OneWay,
    Symmetric,
}

impl ResidualKind {
    pub fn eval(self, h: &Homography, c: &Correspondence) -> Result<f64> {
        match self {
            ResidualKind::OneWay => transfer_residual(h, c),
            ResidualKind::Symmetric => symmetric_transfer_residual(h, c),
        }
    }

    /// Like [`ResidualKind::eval`], mapping points at infinity to `+∞`.
    pub fn eval_or_inf(self, h: &Homography, c: &Correspondence) -> f64 {
        self.eval(h, c).unwrap_or(f64::INFINITY)
    }
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn hartley_normalization<'a>(pts: impl Iterator<Item = &'a Vector2<f64>> + Clone) -> Result<Matrix3<f64>> {
    let n = pts.clone().count() as f64;
    let centroid = pts.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized DLT fit from point pairs `(x, x')`.
pub fn fit_homography<'a, I>(pairs: I) -> Result<Homography>
where
    I: IntoIterator<Item = (&'a Vector2<f64>, &'a Vector2<f64>)>,
{
    let pairs: Vec<_> = pairs.into_iter().collect();
    if pairs.len() < 4 {
        return Err(GeometryError::InsufficientPoints {
            required: 4,
            got: pairs.len(),
        });
    }
    let t1 = hartley_normalization(pairs.iter().map(|p| p.0))?;
    let t2 = hartley_normalization(pairs.iter().map(|p| p.1))?;

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (x, xp)) in pairs.iter().enumerate() {
        let p = t1 * Vector3::new(x.x, x.y, 1.0);
        let q = t2 * Vector3::new(xp.x, xp.y, 1.0);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r0 = 2 * i;
        a[(r0, 3)] = -p.x;
        a[(r0, 4)] = -p.y;
        a[(r0, 5)] = -1.0;
        a[(r0, 6)] = v * p.x;
        a[(r0, 7)] = v * p.y;
        a[(r0, 8)] = v;
        a[(r0 + 1, 0)] = p.x;
        a[(r0 + 1, 1)] = p.y;
        a[(r0 + 1, 2)] = 1.0;
        a[(r0 + 1, 6)] = -u * p.x;
        a[(r0 + 1, 7)] = -u * p.y;
        a[(r0 + 1, 8)] = -u;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    // The null vector is the smallest singular direction; a well-posed fit
    // needs rank 8, so the second-smallest value must stay clear of zero.
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest < DEGENERACY_RATIO * largest {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t2_inv = t2.try_inverse().ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::new(t2_inv * hn * t1).map_err(|_| GeometryError::DegenerateConfiguration)
}

/// Normalized DLT least-squares homography over all given matches.
pub fn estimate_homography(matches: &[Correspondence]) -> Result<Homography> {
    fit_homography(matches.iter().map(|c| (&c.x, &c.x_prime)))
}

/// Normalized DLT over the matches selected by `indices`.
pub fn estimate_homography_subset(matches: &[Correspondence], indices: &[usize]) -> Result<Homography> {
    fit_homography(indices.iter().map(|&i| (&matches[i].x, &matches[i].x_prime)))
}

/// Upper-triangular pinhole camera matrix with `k[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    k: Matrix3<f64>,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::from_matrix(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn identity() -> Self {
        Self { k: Matrix3::identity() }
    }

    pub fn from_matrix(k: Matrix3<f64>) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite entry"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidIntrinsics("matrix is not upper triangular"));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(GeometryError::InvalidIntrinsics("k[2][2] must be 1"));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        self.k.try_inverse().expect("upper triangular with positive diagonal")
    }

    /// Pixel to normalized camera ray with unit third coordinate.
    pub fn unproject(&self, p: &Vector2<f64>) -> Vector3<f64> {
        let r = self.inverse() * Vector3::new(p.x, p.y, 1.0);
        r / r.z
    }

    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        let q = self.k * p;
        (q.z.abs() >= INFINITY_EPS).then(|| Vector2::new(q.x / q.z, q.y / q.z))
    }
}

/// Relative camera motion `X2 = R X1 + T`, with `T` of unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeMotion {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl RelativeMotion {
    /// Rotation angle between the two motions plus the angle between their translation directions (radians).
    pub fn distance(&self, other: &RelativeMotion) -> f64 {
        rotation_angle(&(self.r * other.r.transpose())) + angle_between(&self.t, &other.t)
    }
}

/// One solution of the plane-induced homography decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneDecomposition {
    pub r: Matrix3<f64>,
    /// Unit translation direction.
    pub t: Vector3<f64>,
    /// Unit plane normal in the camera-1 frame.
    pub n: Vector3<f64>,
    /// Camera-1 to plane distance in units of the baseline length.
    pub d: f64,
}

impl PlaneDecomposition {
    pub fn motion(&self) -> RelativeMotion {
        RelativeMotion { r: self.r, t: self.t }
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.r)
    }

    /// `R + T Nᵀ / D`.
    pub fn euclidean(&self) -> Matrix3<f64> {
        self.r + self.t * self.n.transpose() / self.d
    }

    pub fn satisfies_invariants(&self, tol: f64) -> bool {
        let orth = (self.r.transpose() * self.r - Matrix3::identity()).amax() <= tol;
        let det = (self.r.determinant() - 1.0).abs() <= tol;
        let unit_n = (self.n.norm() - 1.0).abs() <= tol;
        orth && det && unit_n && self.d > 0.0
    }
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Angle between two nonzero vectors in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 keeps precision for nearly parallel vectors where acos does not.
    a.cross(b).norm().atan2(a.dot(b))
}

/// Canonical normalization of `K (R + T Nᵀ / D) K⁻¹`.
pub fn compose_homography(d: &PlaneDecomposition, k: &Intrinsics) -> Result<Homography> {
    Homography::new(k.matrix() * d.euclidean() * k.inverse())
}

/// Analytic SVD decomposition of a pixel homography into plane and motion.
///
/// Returns up to four candidates. When `support` is non-empty, candidates
/// are kept only if every support point lies in front of both cameras.
/// Candidates are ordered by summed transfer residual of their recomposed
/// homography over the support (equal up to rounding for exact
/// decompositions), then by smaller rotation angle.
pub fn decompose_homography(
    h: &Homography,
    k: &Intrinsics,
    support: &[Correspondence],
) -> Result<Vec<PlaneDecomposition>> {
    let k_inv = k.inverse();
    let mut he = k_inv * h.matrix() * k.matrix();

    let sv = he.svd(false, false).singular_values;
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 0.0) {
        return Err(GeometryError::Singular);
    }
    he /= s[1];
    // Both cameras see the same side of the plane exactly when det > 0.
    if he.determinant() < 0.0 {
        he = -he;
    }

    let svd = he.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Singular)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma1 = svd.singular_values[order[0]];
    let sigma3 = svd.singular_values[order[2]];
    if sigma1 - sigma3 < PURE_ROTATION_EPS {
        return Err(GeometryError::PureRotation);
    }
    let v1: Vector3<f64> = v_t.row(order[0]).transpose();
    let v2: Vector3<f64> = v_t.row(order[1]).transpose();
    let v3: Vector3<f64> = v_t.row(order[2]).transpose();

    let (s1, s3) = (sigma1 * sigma1, sigma3 * sigma3);
    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let c = (s1 - s3).sqrt();
    let u1 = (a * v1 + b * v3) / c;
    let u2 = (a * v1 - b * v3) / c;

    let mut raw = Vec::with_capacity(4);
    for u in [u1, u2] {
        let basis = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let (hv, hu) = (he * v2, he * u);
        let image = Matrix3::from_columns(&[hv, hu, hv.cross(&hu)]);
        let r = image * basis.transpose();
        let n = v2.cross(&u).normalize();
        let t_scaled = (he - r) * n;
        for sign in [1.0, -1.0] {
            raw.push((r, sign * t_scaled, sign * n));
        }
    }

    let rays: Vec<Vector3<f64>> = support.iter().map(|c| k.unproject(&c.x)).collect();
    if rays.iter().any(|m| (he * m).z <= 0.0) {
        return Err(GeometryError::DecompositionFailed);
    }

    let mut candidates: Vec<PlaneDecomposition> = raw
        .into_iter()
        .filter_map(|(r, t_scaled, n)| {
            let tn = t_scaled.norm();
            if !(tn > 0.0) {
                return None;
            }
            Some(PlaneDecomposition {
                r,
                t: t_scaled / tn,
                n,
                d: 1.0 / tn,
            })
        })
        .filter(|cand| rays.iter().all(|m| cand.n.dot(m) > 0.0))
        .collect();
    if candidates.is_empty() {
        return Err(GeometryError::DecompositionFailed);
    }

    let score = |cand: &PlaneDecomposition| -> f64 {
        if support.is_empty() {
            (cand.euclidean() - he).norm() / he.norm()
        } else {
            match Homography::new(k.matrix() * cand.euclidean() * k_inv) {
                Ok(hc) => support
                    .iter()
                    .map(|c| transfer_residual(&hc, c).unwrap_or(f64::INFINITY))
                    .sum(),
                Err(_) => f64::INFINITY,
            }
        }
    };
    let mut scored: Vec<(f64, PlaneDecomposition)> = candidates.drain(..).map(|c| (score(&c), c)).collect();
    scored.sort_by(|(sa, ca), (sb, cb)| {
        let tol = 1e-9 * sa.abs().max(sb.abs()).max(1.0);
        if (sa - sb).abs() <= tol {
            ca.rotation_angle().total_cmp(&cb.rotation_angle())
        } else {
            sa.total_cmp(sb)
        }
    });
    Ok(scored.into_iter().map(|(_, c)| c).collect())
}

/// Picks the candidate whose motion is closest to `reference`, or the first
/// (best-ordered) candidate when no reference is known.
pub fn select_candidate<'a>(
    candidates: &'a [PlaneDecomposition],
    reference: Option<&RelativeMotion>,
) -> Option<&'a PlaneDecomposition> {
    match reference {
        None => candidates.first(),
        Some(motion) => candidates
            .iter()
            .min_by(|a, b| a.motion().distance(motion).total_cmp(&b.motion().distance(motion))),
    }
}

//! Twist parameterization of rigid motion: conversions between se(3)
//! 6-vectors, rotation matrices, and rigid transforms.
//!
//! Rotations use the Rodrigues exponential; rigid transforms couple the
//! translational part through the left Jacobian (`t = J rho`). Log maps
//! canonicalize the rotation angle into `[0, pi]`; the regressed twist
//! itself is unconstrained.

use nalgebra::{Matrix3, Point3, Vector3, Vector6};

use crate::cloud::PointCloud;

/// Below this angle the trigonometric coefficients of the exponential and
/// the left Jacobian switch to second-order Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

/// Above `pi - NEAR_PI` the rotation log extracts the axis from the
/// symmetric part of the rotation instead of the vanishing skew part.
const NEAR_PI: f64 = 1e-5;

/// Element of se(3): translational part `rho`, rotational part `phi`.
///
/// The rotational part is an axis-angle vector; the translational part is
/// not the transform translation itself (`t = J(phi) * rho`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist { rho, phi }
    }

    pub fn zero() -> Self {
        Twist {
            rho: Vector3::zeros(),
            phi: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            rho: Vector3::new(a[0], a[1], a[2]),
            phi: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.rho + rhs.rho, self.phi + rhs.phi)
    }
}

impl std::ops::Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.rho - rhs.rho, self.phi - rhs.phi)
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rho, -self.phi)
    }
}

/// Axis-angle decomposition of a rotation vector.
///
/// `angle >= 0`; the axis is unit length when the angle is positive and
/// defaults to +z for the zero rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub angle: f64,
    pub axis: Vector3<f64>,
}

impl AxisAngle {
    /// Build from an angle and an axis (normalized here).
    pub fn new(angle: f64, axis: Vector3<f64>) -> Self {
        let n = axis.norm();
        let axis = if n > 0.0 {
            axis / n
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        AxisAngle { angle, axis }
    }

    pub fn from_rotation_vector(phi: &Vector3<f64>) -> Self {
        let angle = phi.norm();
        if angle > 0.0 {
            AxisAngle {
                angle,
                axis: phi / angle,
            }
        } else {
            AxisAngle {
                angle: 0.0,
                axis: Vector3::new(0.0, 0.0, 1.0),
            }
        }
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

/// Rigid transform `p -> R p + t` with `R` in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Transform every point of a cloud; count and ordering are preserved.
    /// Normals, if present, are rotated.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud.points().iter().map(|p| self.apply_point(p)).collect();
        match cloud.normals() {
            Some(normals) => {
                let rotated = normals.iter().map(|n| self.rotation * n).collect();
                PointCloud::with_normals_unchecked(points, rotated)
            }
            None => PointCloud::from_points_unchecked(points),
        }
    }

    /// `compose(A, B)` applies B first, then A.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major `[r00..r22, t0, t1, t2]`, the on-disk layout of gt.json.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        RigidTransform {
            rotation: Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]),
            translation: Vector3::new(v[9], v[10], v[11]),
        }
    }
}

/// Skew-symmetric matrix of a 3-vector, so that `hat(a) * b = a x b`.
#[rustfmt::skip]
pub fn hat(phi: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0,    -phi.z,  phi.y,
        phi.z,   0.0,   -phi.x,
       -phi.y,   phi.x,  0.0,
    )
}

/// Inverse of [`hat`]. Does not check skew-symmetry.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues exponential: rotation vector to rotation matrix.
///
/// Written as `I + a*K + b*K^2` with `K = hat(phi)`, `a = sin(t)/t`,
/// `b = (1-cos(t))/t^2`; both coefficients switch to Taylor expansions
/// below [`SMALL_ANGLE`] to avoid cancellation.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation log map; the returned angle is always in `[0, pi]`.
///
/// At the straight-angle singularity the axis comes from the dominant
/// diagonal of the symmetrized rotation; its sign follows the residual
/// skew part when that is resolvable and otherwise the first nonzero
/// component is made positive.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = vee(&(r - r.transpose()));

    if theta < SMALL_ANGLE {
        // w = 2 sin(t) n; t/(2 sin t) ~ 1/2 + t^2/12
        return w * (0.5 + theta * theta / 12.0);
    }
    if theta < std::f64::consts::PI - NEAR_PI {
        return w * (theta / (2.0 * theta.sin()));
    }

    // Near pi: arccos of a trace near -1 is ill-conditioned, but the skew
    // norm |w| = 2 sin(theta) is not, so recover the angle through asin.
    let theta = std::f64::consts::PI - (w.norm() / 2.0).clamp(0.0, 1.0).asin();
    // A = (R - cI)/(1-c) has symmetric part n n^T exactly.
    let a = (r - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let sym = (a + a.transpose()) / 2.0;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let i = diag
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap();
    let ni = diag[i].max(0.0).sqrt();
    let mut n = Vector3::zeros();
    n[i] = ni;
    for j in 0..3 {
        if j != i {
            n[j] = sym[(i, j)] / ni;
        }
    }
    let n = n.normalize();

    // Sign: prefer the skew residual when it is numerically meaningful,
    // else make the first nonzero component positive.
    let flip = if w.amax() > 1e-12 {
        n.dot(&w) < 0.0
    } else {
        first_nonzero_is_negative(&n)
    };
    let n = if flip { -n } else { n };
    n * theta
}

fn first_nonzero_is_negative(v: &Vector3<f64>) -> bool {
    for c in v.iter() {
        if *c != 0.0 {
            return *c < 0.0;
        }
    }
    false
}

/// Left Jacobian of SO(3), coupling rho to the transform translation.
///
/// `J = I + b*K + c*K^2` with `b = (1-cos t)/t^2`, `c = (t - sin t)/t^3`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = hat(phi);
    Matrix3::identity() + k * b + k * k * c
}

/// se(3) exponential: `R = exp(phi)`, `t = J(phi) rho`.
pub fn exp_se3(xi: &Twist) -> RigidTransform {
    RigidTransform {
        rotation: exp_so3(&xi.phi),
        translation: left_jacobian(&xi.phi) * xi.rho,
    }
}

/// se(3) log map: `phi = log(R)`, `rho = J(phi)^-1 t`.
///
/// The Jacobian is inverted by LU solve; it is well conditioned for the
/// canonical angle range `[0, pi]`.
pub fn log_se3(t: &RigidTransform) -> Twist {
    let phi = log_so3(&t.rotation);
    let j = left_jacobian(&phi);
    let rho = j
        .lu()
        .solve(&t.translation)
        .expect("left Jacobian is invertible for angles below 2*pi");
    Twist { rho, phi }
}

/// True when `r` is orthonormal with unit determinant within `tol`.
pub fn is_rotation_matrix(r: &Matrix3<f64>, tol: f64) -> bool {
    let defect = (r * r.transpose() - Matrix3::identity()).norm();
    defect <= tol && (r.determinant() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Truncated matrix power series for exp(hat(phi)), independent of the
    /// Rodrigues closed form.
    pub(crate) fn exp_so3_series(phi: &Vector3<f64>, terms: usize) -> Matrix3<f64> {
        let k = hat(phi);
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for n in 1..=terms {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    /// Midpoint-rule quadrature of J = integral_0^1 exp(s * hat(phi)) ds.
    pub(crate) fn left_jacobian_quadrature(phi: &Vector3<f64>, steps: usize) -> Matrix3<f64> {
        let mut sum = Matrix3::zeros();
        let h = 1.0 / steps as f64;
        for i in 0..steps {
            let s = (i as f64 + 0.5) * h;
            sum += exp_so3(&(phi * s));
        }
        sum * h
    }

    pub(crate) fn random_twist(rng: &mut impl Rng, max_angle: f64, max_rho: f64) -> Twist {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = if dir.norm() > 1e-9 {
            dir.normalize()
        } else {
            Vector3::x()
        };
        let phi = dir * rng.random_range(0.0..max_angle);
        let rho = if max_rho > 0.0 {
            Vector3::new(
                rng.random_range(-max_rho..max_rho),
                rng.random_range(-max_rho..max_rho),
                rng.random_range(-max_rho..max_rho),
            )
        } else {
            Vector3::zeros()
        };
        Twist::new(rho, phi)
    }

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn hat_pattern() {
        let m = hat(&Vector3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(m + m.transpose(), Matrix3::zeros());
        assert_eq!(vee(&m), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn hat_is_cross_product() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        assert_eq!(hat(&a) * b, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn exp_so3_zero_is_identity() {
        assert_eq!(exp_so3(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn exp_so3_quarter_turn_matches_series() {
        let phi = Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = exp_so3(&phi);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        assert!((r - exp_so3_series(&phi, 30)).norm() < 1e-10);
    }

    #[test]
    fn exp_so3_half_turn_matches_series() {
        let phi = Vector3::new(std::f64::consts::PI, 0.0, 0.0);
        let r = exp_so3(&phi);
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        assert!((r - exp_so3_series(&phi, 40)).norm() < 1e-10);
    }

    #[test]
    fn exp_so3_output_stays_in_group_at_edges() {
        for theta in [0.0, 1e-9, std::f64::consts::PI - 1e-8, std::f64::consts::PI] {
            let phi = Vector3::new(0.48, -0.6, 0.64).normalize() * theta;
            assert!(is_rotation_matrix(&exp_so3(&phi), 1e-9), "theta={theta}");
        }
    }

    #[test]
    fn log_so3_identity_is_zero() {
        assert_eq!(log_so3(&Matrix3::identity()), Vector3::zeros());
    }

    #[test]
    fn log_so3_roundtrip() {
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_abs_diff_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-12);
    }

    #[test]
    fn log_so3_half_turn_sign_rule() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let phi = log_so3(&r);
        assert_abs_diff_eq!(phi, Vector3::new(std::f64::consts::PI, 0.0, 0.0), epsilon = 1e-12);
        // exp of the output reproduces the input
        assert!((exp_so3(&phi) - r).norm() < 1e-9);
    }

    #[test]
    fn log_so3_near_pi_keeps_axis_sign() {
        let n = Vector3::new(-0.6, 0.64, 0.48).normalize();
        for delta in [1e-6, 1e-7, 1e-9] {
            let phi = n * (std::f64::consts::PI - delta);
            let r = exp_so3(&phi);
            let back = log_so3(&r);
            assert!((exp_so3(&back) - r).norm() < 1e-9, "delta={delta}");
            assert!(back.dot(&phi) > 0.0, "sign flipped at delta={delta}");
        }
    }

    #[test]
    fn left_jacobian_zero_is_identity() {
        assert_eq!(left_jacobian(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn left_jacobian_matches_quadrature() {
        let phi = Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let j = left_jacobian(&phi);
        let oracle = left_jacobian_quadrature(&phi, 10_000);
        assert!((j - oracle).norm() < 1e-6);
    }

    #[test]
    fn exp_se3_zero_is_identity() {
        let t = exp_se3(&Twist::zero());
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::zeros());
    }

    #[test]
    fn exp_se3_pure_translation() {
        let xi = Twist::from_array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let t = exp_se3(&xi);
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::new(1.0, 2.0, 3.0));
        let back = log_se3(&t);
        assert_abs_diff_eq!(back.as_vector(), xi.as_vector(), epsilon = 1e-12);
    }

    #[test]
    fn log_se3_roundtrip() {
        let xi = Twist::from_array([0.1, -0.2, 0.3, 0.4, 0.5, -0.6]);
        let back = log_se3(&exp_se3(&xi));
        assert_abs_diff_eq!(back.as_vector(), xi.as_vector(), epsilon = 1e-9);
    }

    #[test]
    fn apply_examples() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]).unwrap();
        let shift = RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(shift.apply(&cloud).points()[0], Point3::new(1.0, 0.0, 0.0));

        let single = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let quarter = RigidTransform::new(
            exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)),
            Vector3::zeros(),
        );
        let moved = quarter.apply(&single);
        assert_abs_diff_eq!(
            moved.points()[0].coords,
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );

        let identity = RigidTransform::identity();
        assert_eq!(identity.apply(&single).points(), single.points());
    }

    #[test]
    fn compose_examples() {
        let t = exp_se3(&Twist::from_array([0.1, 0.2, -0.3, 0.2, -0.1, 0.4]));
        let id = RigidTransform::identity();
        assert_eq!(t.compose(&id).rotation, t.rotation);
        assert_eq!(t.compose(&id).translation, t.translation);

        let round = t.compose(&t.inverse());
        assert!((round.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(round.translation.norm() < 1e-12);

        let eighth = RigidTransform::new(
            exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_4)),
            Vector3::zeros(),
        );
        let quarter = eighth.compose(&eighth);
        assert!((quarter.rotation - exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2))).norm() < 1e-12);
    }

    #[test]
    fn compose_is_sequential_application() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = exp_se3(&random_twist(&mut rng, 3.0, 1.0));
            let b = exp_se3(&random_twist(&mut rng, 3.0, 1.0));
            let p = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let lhs = a.compose(&b).apply_point(&p);
            let rhs = a.apply_point(&b.apply_point(&p));
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn rodrigues_matches_series_on_random_inputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xi = random_twist(&mut rng, std::f64::consts::PI, 0.0);
            let r = exp_so3(&xi.phi);
            let oracle = exp_so3_series(&xi.phi, 30);
            assert!((r - oracle).norm() < 1e-10);
        }
    }

    #[test]
    fn row_major_roundtrip() {
        let t = exp_se3(&Twist::from_array([0.3, -0.1, 0.2, 0.5, -0.4, 0.1]));
        let rm = t.to_row_major();
        let back = RigidTransform::from_row_major(&rm);
        assert_eq!(back.rotation, t.rotation);
        assert_eq!(back.translation, t.translation);
    }

    proptest! {
        #[test]
        fn twist_roundtrip(
            rx in -1.0f64..1.0, ry in -1.0f64..1.0, rz in -1.0f64..1.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            scale in 0.0f64..1.0,
        ) {
            let dir = Vector3::new(ax, ay, az);
            let phi = if dir.norm() > 1e-6 {
                dir.normalize() * scale * (std::f64::consts::PI - 0.01)
            } else {
                Vector3::zeros()
            };
            let xi = Twist::new(Vector3::new(rx, ry, rz), phi);
            let back = log_se3(&exp_se3(&xi));
            prop_assert!((back.as_vector() - xi.as_vector()).amax() < 1e-9);
        }

        #[test]
        fn exp_stays_in_group(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
        ) {
            let r = exp_so3(&(Vector3::new(ax, ay, az) * std::f64::consts::PI));
            prop_assert!(is_rotation_matrix(&r, 1e-9));
        }
    }
}

#pragma once

// Rigid transforms, axis-angle rotations and the pinhole camera model.
// Everything here is a pure value type; all operations are thread-safe.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace egofit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct BehindCameraError : std::runtime_error {
    BehindCameraError() : std::runtime_error("point is behind the camera (z <= 1e-6)") {}
};

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return m;
}

// Rotation matrix from an axis-angle vector (Rodrigues). Small angles use a
// series so the result stays consistent with rodrigues_jacobian below.
inline Mat3 rodrigues(const Vec3& aa) {
    const double phi2 = aa.squaredNorm();
    const double phi = std::sqrt(phi2);
    double s, c; // sin(phi)/phi and (1-cos(phi))/phi^2
    if (phi < 1e-8) {
        s = 1.0 - phi2 / 6.0;
        c = 0.5 - phi2 / 24.0;
    } else {
        s = std::sin(phi) / phi;
        const double half_sin = std::sin(0.5 * phi);
        c = 2.0 * half_sin * half_sin / phi2;
    }
    const Mat3 k = skew(aa);
    return Mat3::Identity() + s * k + c * (k * k);
}

// Partial derivatives of rodrigues(aa) with respect to the three axis-angle
// components. Differentiates R = I + s(phi) K + c(phi) K^2 termwise; the
// coefficient functions are evaluated by series near phi = 0.
inline std::array<Mat3, 3> rodrigues_jacobian(const Vec3& aa) {
    const double phi2 = aa.squaredNorm();
    const double phi = std::sqrt(phi2);
    double s, c;   // as in rodrigues()
    double g1, g2; // s'(phi)/phi and c'(phi)/phi
    if (phi < 1e-2) {
        const double phi4 = phi2 * phi2;
        s = 1.0 - phi2 / 6.0 + phi4 / 120.0;
        c = 0.5 - phi2 / 24.0 + phi4 / 720.0;
        g1 = -1.0 / 3.0 + phi2 / 30.0 - phi4 / 840.0;
        g2 = -1.0 / 12.0 + phi2 / 180.0 - phi4 / 6720.0;
    } else {
        const double sphi = std::sin(phi);
        const double cphi = std::cos(phi);
        s = sphi / phi;
        c = (1.0 - cphi) / phi2;
        g1 = (phi * cphi - sphi) / (phi2 * phi);
        g2 = (phi * sphi - 2.0 * (1.0 - cphi)) / (phi2 * phi2);
    }
    const Mat3 k = skew(aa);
    const Mat3 k2 = k * k;
    std::array<Mat3, 3> out;
    for (int a = 0; a < 3; ++a) {
        const Mat3 ea = skew(Vec3::Unit(a));
        out[a] = (g1 * aa[a]) * k + s * ea + (g2 * aa[a]) * k2 + c * (ea * k + k * ea);
    }
    return out;
}

// Axis-angle vector of a rotation, with angle in [0, pi].
inline Vec3 axis_angle_of(const Eigen::Quaterniond& q) {
    Eigen::AngleAxisd aa(q.normalized());
    return aa.angle() * aa.axis();
}

// Re-parameterize an axis-angle vector so its angle lies in [0, pi].
inline Vec3 wrap_axis_angle(const Vec3& aa) {
    double phi = aa.norm();
    if (phi < 1e-12) return aa;
    double wrapped = std::fmod(phi, 2.0 * M_PI);
    if (wrapped > M_PI) wrapped -= 2.0 * M_PI;
    return aa * (wrapped / phi);
}

// Rigid transform stored as a unit quaternion plus translation.
struct Pose3 {
    Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 translation{0.0, 0.0, 0.0};

    Pose3() = default;
    Pose3(const Eigen::Quaterniond& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}

    static Pose3 identity() { return Pose3{}; }

    static Pose3 from_axis_angle(const Vec3& aa, const Vec3& t) {
        return Pose3(Eigen::Quaterniond(rodrigues(aa)), t);
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    Pose3 inverse() const {
        const Eigen::Quaterniond qi = rotation.conjugate();
        return Pose3(qi, -(qi * translation));
    }

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = rotation_matrix();
        m.topRightCorner<3, 1>() = translation;
        return m;
    }
};

// compose(a, b): applying the result equals applying b, then a.
inline Pose3 compose(const Pose3& a, const Pose3& b) {
    return Pose3(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

inline Pose3 operator*(const Pose3& a, const Pose3& b) { return compose(a, b); }

// Camera->world pose for a pinhole camera at `eye` looking at `target`:
// z forward, x right, y down (image convention).
inline Pose3 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 0, 1)) {
    const Vec3 forward = target - eye;
    if (forward.norm() < 1e-12) throw std::invalid_argument("look_at: eye equals target");
    const Vec3 z = forward.normalized();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-9) x = z.cross(Vec3(0, 1, 0)); // looking along up: pick another reference
    x.normalize();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    return Pose3(Eigen::Quaterniond(r), eye);
}

struct CameraIntrinsics {
    Vec2 focal{500.0, 500.0};
    Vec2 principal_point{320.0, 240.0};

    CameraIntrinsics() = default;
    CameraIntrinsics(const Vec2& f, const Vec2& pp) : focal(f), principal_point(pp) {
        if (!(focal.x() > 0.0) || !(focal.y() > 0.0))
            throw std::invalid_argument("CameraIntrinsics: focal components must be > 0");
    }
};

constexpr double kMinProjectionDepth = 1e-6;

inline std::optional<Vec2> try_project(const CameraIntrinsics& k, const Vec3& p_cam) {
    if (p_cam.z() <= kMinProjectionDepth) return std::nullopt;
    const double inv_z = 1.0 / p_cam.z();
    return Vec2(k.focal.x() * p_cam.x() * inv_z + k.principal_point.x(),
                k.focal.y() * p_cam.y() * inv_z + k.principal_point.y());
}

inline Vec2 project(const CameraIntrinsics& k, const Vec3& p_cam) {
    auto px = try_project(k, p_cam);
    if (!px) throw BehindCameraError{};
    return *px;
}

// d project / d p_cam, valid for z > 0.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& k, const Vec3& p_cam) {
    const double inv_z = 1.0 / p_cam.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.focal.x() * inv_z, 0.0, -k.focal.x() * p_cam.x() * inv_z * inv_z,
         0.0, k.focal.y() * inv_z, -k.focal.y() * p_cam.y() * inv_z * inv_z;
    return j;
}

} // namespace egofit

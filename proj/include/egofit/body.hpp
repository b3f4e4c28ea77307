#pragma once

// Simplified parametric articulated body: a 17-joint skeleton with
// shape-modulated bone lengths, axis-angle joint rotations, forward
// kinematics and a designated set of contact candidate points.

#include "egofit/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::body {

struct DimensionMismatchError : std::runtime_error {
    explicit DimensionMismatchError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyInputError : std::runtime_error {
    explicit EmptyInputError(const std::string& what) : std::runtime_error(what) {}
};

// A body point expected to touch the environment, attached to a joint.
struct ContactCandidate {
    int joint = 0;
    Vec3 offset = Vec3::Zero(); // in the joint's local frame
};

struct SkeletonDef {
    struct Joint {
        std::string name;
        int parent = -1;               // -1 for the root
        Vec3 rest_offset = Vec3::Zero(); // bone from parent to this joint, rest pose
        int shape_group = -1;          // index into beta, -1 for the root
        bool limb = false;             // annealed (k-weighted) during early fitting
        bool twist_weighted = false;   // pose prior weights the twist axis 4x
    };

    std::string version;
    int shape_group_count = 8;
    std::vector<Joint> joints;
    std::vector<ContactCandidate> contact_candidates;

    int joint_count() const { return static_cast<int>(joints.size()); }

    void validate() const {
        if (joints.empty()) throw std::invalid_argument("skeleton has no joints");
        if (joints[0].parent != -1) throw std::invalid_argument("joint 0 must be the root");
        for (int i = 1; i < joint_count(); ++i) {
            const auto& j = joints[i];
            if (j.parent < 0 || j.parent >= i)
                throw std::invalid_argument("skeleton parents must form a tree in topological order");
            if (!(j.rest_offset.norm() > 0.0))
                throw std::invalid_argument("rest bone lengths must be > 0: " + j.name);
            if (j.shape_group < 0 || j.shape_group >= shape_group_count)
                throw std::invalid_argument("joint shape group out of range: " + j.name);
        }
        if (contact_candidates.empty())
            throw std::invalid_argument("skeleton needs at least one contact candidate");
        for (const auto& c : contact_candidates)
            if (c.joint < 0 || c.joint >= joint_count())
                throw std::invalid_argument("contact candidate joint out of range");
    }

    int find_joint(const std::string& name) const {
        for (int i = 0; i < joint_count(); ++i)
            if (joints[i].name == name) return i;
        return -1;
    }
};

// Log bone-length multipliers over limb groups; bone length scales by
// exp(beta[group]) so positivity holds by construction.
struct ShapeParams {
    Eigen::VectorXd beta;

    ShapeParams() : beta(Eigen::VectorXd::Zero(8)) {}
    explicit ShapeParams(Eigen::VectorXd b) : beta(std::move(b)) {}
    static ShapeParams zero(int groups) { return ShapeParams(Eigen::VectorXd::Zero(groups)); }
};

// Per-joint axis-angle rotations, 3 per joint.
struct PoseParams {
    Eigen::VectorXd theta;

    PoseParams() = default;
    explicit PoseParams(Eigen::VectorXd t) : theta(std::move(t)) {}
    static PoseParams rest(int joint_count) { return PoseParams(Eigen::VectorXd::Zero(3 * joint_count)); }

    Vec3 joint_rotation(int j) const { return theta.segment<3>(3 * j); }

    // Re-parameterize every joint so rotation angles lie in [0, pi].
    PoseParams normalized() const {
        PoseParams out(theta);
        const int j_count = static_cast<int>(theta.size()) / 3;
        for (int j = 0; j < j_count; ++j)
            out.theta.segment<3>(3 * j) = wrap_axis_angle(joint_rotation(j));
        return out;
    }
};

// Camera-frame placement of the body root: translation plus orientation.
struct RootTransform {
    Vec3 orientation = Vec3::Zero(); // axis-angle
    Vec3 translation = Vec3::Zero();

    Pose3 pose() const { return Pose3::from_axis_angle(orientation, translation); }
};

// One frame's full body configuration.
struct BodyState {
    ShapeParams shape;
    PoseParams pose;
    RootTransform root;
};

inline void check_dimensions(const SkeletonDef& skel, const ShapeParams& shape, const PoseParams& pose) {
    if (shape.beta.size() != skel.shape_group_count)
        throw DimensionMismatchError("shape has " + std::to_string(shape.beta.size()) +
                                     " groups, skeleton expects " + std::to_string(skel.shape_group_count));
    if (pose.theta.size() != 3 * skel.joint_count())
        throw DimensionMismatchError("pose has " + std::to_string(pose.theta.size()) +
                                     " entries, skeleton expects " + std::to_string(3 * skel.joint_count()));
}

// Forward kinematics output, camera frame. The root cumulative rotation is
// R(root.orientation) * R(theta_root); each child i contributes
//   p_i = p_parent + Q_parent * R(theta_i) * b_i,   Q_i = Q_parent * R(theta_i)
// with b_i the rest offset scaled by exp(beta[group]).
struct FkResult {
    std::vector<Vec3> joint_pos;
    std::vector<Mat3> cumulative;        // Q_i
    std::vector<Mat3> parent_cumulative; // Q_parent(i); for the root this is R(root.orientation)
    std::vector<Mat3> local_rot;         // R(theta_i)
    std::vector<Vec3> scaled_offset;     // b_i (zero for the root)
    Mat3 root_orient_rot = Mat3::Identity();
    Vec3 root_translation = Vec3::Zero();

    Vec3 attached_point(int joint, const Vec3& offset) const {
        return joint_pos[joint] + cumulative[joint] * offset;
    }
};

inline FkResult forward_kinematics(const SkeletonDef& skel, const ShapeParams& shape,
                                   const PoseParams& pose, const RootTransform& root) {
    check_dimensions(skel, shape, pose);
    const int n = skel.joint_count();
    FkResult out;
    out.joint_pos.resize(n);
    out.cumulative.resize(n);
    out.parent_cumulative.resize(n);
    out.local_rot.resize(n);
    out.scaled_offset.assign(n, Vec3::Zero());
    out.root_orient_rot = rodrigues(root.orientation);
    out.root_translation = root.translation;

    out.local_rot[0] = rodrigues(pose.joint_rotation(0));
    out.parent_cumulative[0] = out.root_orient_rot;
    out.cumulative[0] = out.root_orient_rot * out.local_rot[0];
    out.joint_pos[0] = root.translation;

    for (int i = 1; i < n; ++i) {
        const auto& j = skel.joints[i];
        out.local_rot[i] = rodrigues(pose.joint_rotation(i));
        out.parent_cumulative[i] = out.cumulative[j.parent];
        out.cumulative[i] = out.parent_cumulative[i] * out.local_rot[i];
        out.scaled_offset[i] = j.rest_offset * std::exp(shape.beta[j.shape_group]);
        out.joint_pos[i] = out.joint_pos[j.parent] + out.parent_cumulative[i] * (out.local_rot[i] * out.scaled_offset[i]);
    }
    return out;
}

inline std::vector<Vec3> joint_positions(const SkeletonDef& skel, const ShapeParams& shape,
                                         const PoseParams& pose, const RootTransform& root) {
    return forward_kinematics(skel, shape, pose, root).joint_pos;
}

inline std::vector<Vec3> contact_points(const SkeletonDef& skel, const ShapeParams& shape,
                                        const PoseParams& pose, const RootTransform& root) {
    const FkResult fk = forward_kinematics(skel, shape, pose, root);
    std::vector<Vec3> out;
    out.reserve(skel.contact_candidates.size());
    for (const auto& c : skel.contact_candidates)
        out.push_back(fk.attached_point(c.joint, c.offset));
    return out;
}

// Gradient accumulator for one frame's body parameters.
struct FkGradient {
    Eigen::VectorXd theta;  // 3J
    Vec3 root_orientation = Vec3::Zero();
    Vec3 root_translation = Vec3::Zero();
    Eigen::VectorXd beta;   // B

    FkGradient(int joint_count, int groups)
        : theta(Eigen::VectorXd::Zero(3 * joint_count)), beta(Eigen::VectorXd::Zero(groups)) {}
};

// Per-frame chain-rule cache. accumulate() back-propagates dE/d(point) for a
// point attached to `joint` at `offset` into theta / root / beta gradients.
class FkDerivatives {
public:
    FkDerivatives(const SkeletonDef& skel, const ShapeParams& shape, const PoseParams& pose,
                  const RootTransform& root)
        : skel_(&skel), fk_(forward_kinematics(skel, shape, pose, root)) {
        const int n = skel.joint_count();
        local_jac_.resize(n);
        for (int j = 0; j < n; ++j)
            local_jac_[j] = rodrigues_jacobian(pose.joint_rotation(j));
        orient_jac_ = rodrigues_jacobian(root.orientation);
    }

    const FkResult& fk() const { return fk_; }

    void accumulate(int joint, const Vec3& offset, const Vec3& de_dpoint, FkGradient& grad) const {
        const Vec3 point = fk_.attached_point(joint, offset);
        // Walk the ancestor chain; each joint l on it owns the rotation
        //   P = p_parent(l) + Q_parent(l) * R_l * d_l  with d_l fixed under theta_l.
        for (int l = joint; l != -1; l = skel_->joints[l].parent) {
            const Vec3 parent_pos = (l == 0) ? fk_.root_translation : fk_.joint_pos[skel_->joints[l].parent];
            const Mat3& qp = fk_.parent_cumulative[l];
            const Vec3 d = fk_.local_rot[l].transpose() * (qp.transpose() * (point - parent_pos));
            for (int a = 0; a < 3; ++a)
                grad.theta[3 * l + a] += de_dpoint.dot(qp * (local_jac_[l][a] * d));
            if (l != 0)
                grad.beta[skel_->joints[l].shape_group] += de_dpoint.dot(fk_.cumulative[l] * fk_.scaled_offset[l]);
        }
        const Vec3 v = fk_.root_orient_rot.transpose() * (point - fk_.root_translation);
        for (int a = 0; a < 3; ++a)
            grad.root_orientation[a] += de_dpoint.dot(orient_jac_[a] * v);
        grad.root_translation += de_dpoint;
    }

private:
    const SkeletonDef* skel_;
    FkResult fk_;
    std::vector<std::array<Mat3, 3>> local_jac_;
    std::array<Mat3, 3> orient_jac_;
};

// Component-wise median over frames; even counts take the midpoint of the
// two middle values.
inline ShapeParams consolidate_shape(const std::vector<ShapeParams>& shapes) {
    if (shapes.empty()) throw EmptyInputError("consolidate_shape: empty input");
    const Eigen::Index dim = shapes.front().beta.size();
    for (const auto& s : shapes)
        if (s.beta.size() != dim) throw DimensionMismatchError("consolidate_shape: mixed dimensions");
    Eigen::VectorXd out(dim);
    std::vector<double> column(shapes.size());
    for (Eigen::Index c = 0; c < dim; ++c) {
        for (size_t f = 0; f < shapes.size(); ++f) column[f] = shapes[f].beta[c];
        std::sort(column.begin(), column.end());
        const size_t n = column.size();
        out[c] = (n % 2 == 1) ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
    }
    return ShapeParams(out);
}

// The built-in body: a 17-joint tree in the common keypoint layout, body
// frame x forward, y left, z up. Bone lengths give a 1.60 m head-to-ankle
// rest height. Shipped as a versioned constant so runs can pin it.
inline SkeletonDef default_skeleton() {
    SkeletonDef s;
    s.version = "egofit-skel-1";
    s.shape_group_count = 8;
    auto add = [&s](const std::string& name, int parent, const Vec3& offset, int group,
                    bool limb = false, bool twist = false) {
        s.joints.push_back({name, parent, offset, group, limb, twist});
    };
    add("pelvis", -1, Vec3::Zero(), -1);
    add("spine", 0, {0.0, 0.0, 0.25}, 0);
    add("neck", 1, {0.0, 0.0, 0.25}, 0);
    add("nose", 2, {0.08, 0.0, 0.12}, 1);
    add("head", 2, {0.0, 0.0, 0.18}, 1);
    add("left_shoulder", 2, {0.0, 0.18, 0.0}, 2);
    add("right_shoulder", 2, {0.0, -0.18, 0.0}, 2);
    add("left_elbow", 5, {0.0, 0.0, -0.28}, 3, true, true);
    add("right_elbow", 6, {0.0, 0.0, -0.28}, 3, true, true);
    add("left_wrist", 7, {0.0, 0.0, -0.26}, 4, true);
    add("right_wrist", 8, {0.0, 0.0, -0.26}, 4, true);
    add("left_hip", 0, {0.0, 0.09, -0.06}, 5);
    add("right_hip", 0, {0.0, -0.09, -0.06}, 5);
    add("left_knee", 11, {0.0, 0.0, -0.42}, 6, true, true);
    add("right_knee", 12, {0.0, 0.0, -0.42}, 6, true, true);
    add("left_ankle", 13, {0.0, 0.0, -0.44}, 7, true);
    add("right_ankle", 14, {0.0, 0.0, -0.44}, 7, true);

    const int la = s.find_joint("left_ankle");
    const int ra = s.find_joint("right_ankle");
    const int pelvis = 0;
    s.contact_candidates = {
        {la, {-0.05, 0.0, -0.07}}, {la, {0.12, 0.0, -0.07}},   // left heel, toe
        {ra, {-0.05, 0.0, -0.07}}, {ra, {0.12, 0.0, -0.07}},   // right heel, toe
        {pelvis, {-0.08, 0.07, -0.10}}, {pelvis, {-0.08, -0.07, -0.10}}, // seat
    };
    s.validate();
    return s;
}

// Rest-pose head-to-ankle distance; the normalization length for metrics.
inline double rest_body_height(const SkeletonDef& skel, const ShapeParams& shape) {
    const auto pos = joint_positions(skel, shape, PoseParams::rest(skel.joint_count()), RootTransform{});
    const int head = skel.find_joint("head");
    const int ankle = skel.find_joint("left_ankle");
    if (head < 0 || ankle < 0) {
        double lo = 0.0, hi = 0.0;
        for (const auto& p : pos) { lo = std::min(lo, p.z()); hi = std::max(hi, p.z()); }
        return hi - lo;
    }
    return (pos[head] - pos[ankle]).norm();
}

} // namespace egofit::body

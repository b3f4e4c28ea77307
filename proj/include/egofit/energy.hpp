#pragma once

// The full energy stack: robustified 2D joint reprojection, shape and pose
// priors, human-scene contact with a shared scale, the zero-acceleration
// motion prior, their weighted total and its exact gradient with respect to
// every free parameter block.

#include "egofit/body.hpp"
#include "egofit/geometry.hpp"
#include "egofit/parallel.hpp"
#include "egofit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::energy {

struct SequenceTooShortError : std::runtime_error {
    SequenceTooShortError() : std::runtime_error("temporal term needs at least 3 frames") {}
};

struct NonPositiveScaleError : std::runtime_error {
    NonPositiveScaleError() : std::runtime_error("scale must be > 0") {}
};

struct NonFiniteEnergyError : std::runtime_error {
    std::string term;
    int frame;
    NonFiniteEnergyError(std::string term_, int frame_)
        : std::runtime_error("non-finite energy in term '" + term_ + "'" +
                             (frame_ >= 0 ? " at frame " + std::to_string(frame_) : "")),
          term(std::move(term_)), frame(frame_) {}
};

// One detected 2D joint. confidence 0 marks undetected / out-of-frame; the
// stored position of such joints is ignored by every term.
struct Observation2D {
    Vec2 position = Vec2::Zero();
    double confidence = 0.0;
};

using FrameObservations = std::vector<Observation2D>;

// Geman-McClure robustifier rho(e) = e^2 / (sigma^2 + e^2).
struct RobustKernel {
    double sigma = 1.0;

    RobustKernel() = default;
    explicit RobustKernel(double s) : sigma(s) {
        if (!(s > 0.0)) throw std::invalid_argument("RobustKernel: sigma must be > 0");
    }

    double operator()(double e) const {
        const double s2 = sigma * sigma;
        return e * e / (s2 + e * e);
    }

    // For a vector residual r with e2 = |r|^2, d rho(|r|)/dr = scale(e2) * r.
    // (Smooth everywhere since rho depends on r only through |r|^2.)
    double vector_gradient_scale(double e2) const {
        const double s2 = sigma * sigma;
        const double d = s2 + e2;
        return 2.0 * s2 / (d * d);
    }
};

inline double rho(double e, const RobustKernel& kernel) { return kernel(e); }

struct Kernels {
    RobustKernel joint{100.0};   // pixels
    RobustKernel contact{0.2};   // scene units
    RobustKernel temporal{0.1};  // scene units
};

struct Weights {
    double lambda_beta = 0.01;
    double lambda_theta = 0.1;
    double lambda_contact = 0.1;
    double lambda_temporal = 0.1;
    Eigen::VectorXd joint_anneal; // k_i per joint; empty means all ones

    double anneal(int joint) const {
        return joint_anneal.size() == 0 ? 1.0 : joint_anneal[joint];
    }
};

// Mask over the optimizable parameter blocks.
struct FreeSet {
    bool beta = true;
    bool theta = true;
    bool root = true;
    bool cam_pose = false;
    bool scale = false;

    bool any() const { return beta || theta || root || cam_pose || scale; }
};

// Where the contact/temporal world scale multiplies: the camera-frame point
// (default; also rescales camera-to-body depth, which is what resolves the
// monocular ambiguity) or the body-frame point about the body root.
enum class ScalePlacement { CameraFrame, BodyFrame };

inline Vec3 to_world(const Pose3& t_wc, double scale, const Vec3& p_cam,
                     ScalePlacement placement, const Vec3& root_translation) {
    if (placement == ScalePlacement::CameraFrame)
        return t_wc.apply(scale * p_cam);
    return t_wc.apply(scale * p_cam + (1.0 - scale) * root_translation);
}

// ---------------------------------------------------------------------------
// Individual terms (reference implementations; the fused model below must
// agree with their sums exactly)

inline double e_joint_positions(const std::vector<Vec3>& joints_cam, const CameraIntrinsics& intr,
                                const FrameObservations& obs, const RobustKernel& kernel,
                                const Weights& weights) {
    double total = 0.0;
    const int n = static_cast<int>(joints_cam.size());
    for (int i = 0; i < n; ++i) {
        const double w = obs[i].confidence;
        const double k = weights.anneal(i);
        if (w <= 0.0 || k <= 0.0) continue;
        const auto px = try_project(intr, joints_cam[i]);
        if (!px) continue; // behind the camera: masked out
        total += k * w * kernel((*px - obs[i].position).norm());
    }
    return total;
}

inline double e_joint(const body::SkeletonDef& skel, const body::ShapeParams& shape,
                      const body::PoseParams& pose, const body::RootTransform& root,
                      const CameraIntrinsics& intr, const FrameObservations& obs,
                      const RobustKernel& kernel, const Weights& weights) {
    return e_joint_positions(body::joint_positions(skel, shape, pose, root), intr, obs, kernel, weights);
}

inline double e_shape_prior(const body::ShapeParams& shape) { return shape.beta.squaredNorm(); }

inline double e_pose_prior(const body::PoseParams& pose, const Eigen::VectorXd& rest_theta,
                           const Eigen::VectorXd& component_weights) {
    const Eigen::VectorXd d = pose.theta - rest_theta;
    return d.cwiseProduct(d).dot(component_weights);
}

// Per-component pose prior weights: ones, with 4x on the twist axis (the
// dominant rest-bone direction) of twist-weighted joints.
inline Eigen::VectorXd pose_prior_weights(const body::SkeletonDef& skel) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(3 * skel.joint_count());
    for (int j = 0; j < skel.joint_count(); ++j) {
        if (!skel.joints[j].twist_weighted) continue;
        int axis = 0;
        skel.joints[j].rest_offset.cwiseAbs().maxCoeff(&axis);
        w[3 * j + axis] = 4.0;
    }
    return w;
}

inline double e_temporal(const std::vector<std::vector<Vec3>>& world_joints,
                         const std::vector<std::vector<double>>& confidences,
                         const RobustKernel& kernel) {
    const int frames = static_cast<int>(world_joints.size());
    if (frames < 3) throw SequenceTooShortError{};
    const int joints = static_cast<int>(world_joints.front().size());
    double total = 0.0;
    for (int t = 1; t + 1 < frames; ++t) {
        for (int i = 0; i < joints; ++i) {
            const double w = std::min({confidences[t - 1][i], confidences[t][i], confidences[t + 1][i]});
            if (1.0 - w <= 0.0) continue;
            const Vec3 accel = world_joints[t + 1][i] - 2.0 * world_joints[t][i] + world_joints[t - 1][i];
            total += (1.0 - w) * kernel(accel.norm());
        }
    }
    return total;
}

// Nearest-vertex correspondences for every contact candidate of every frame.
using Correspondences = std::vector<std::vector<int>>;

inline Correspondences contact_correspondences(const body::SkeletonDef& skel,
                                               const std::vector<body::BodyState>& states,
                                               const std::vector<Pose3>& cam_to_world,
                                               const scene::SpatialIndex& index, double scale,
                                               ScalePlacement placement) {
    if (!(scale > 0.0)) throw NonPositiveScaleError{};
    Correspondences corr(states.size());
    for (size_t t = 0; t < states.size(); ++t) {
        const auto points = body::contact_points(skel, states[t].shape, states[t].pose, states[t].root);
        corr[t].reserve(points.size());
        for (const auto& p : points) {
            const Vec3 w = to_world(cam_to_world[t], scale, p, placement, states[t].root.translation);
            corr[t].push_back(index.nearest(w).index);
        }
    }
    return corr;
}

inline double e_contact_fixed(const body::SkeletonDef& skel, const std::vector<body::BodyState>& states,
                              const std::vector<Pose3>& cam_to_world, const scene::SpatialIndex& index,
                              const Correspondences& corr, double scale, const RobustKernel& kernel,
                              ScalePlacement placement) {
    if (!(scale > 0.0)) throw NonPositiveScaleError{};
    double total = 0.0;
    for (size_t t = 0; t < states.size(); ++t) {
        const auto points = body::contact_points(skel, states[t].shape, states[t].pose, states[t].root);
        for (size_t c = 0; c < points.size(); ++c) {
            const Vec3 w = to_world(cam_to_world[t], scale, points[c], placement, states[t].root.translation);
            // nearest() here would re-derive corr; the frozen set keeps the
            // term differentiable between refreshes
            total += kernel((w - index.stored_point(corr[t][c])).norm());
        }
    }
    return total;
}

inline double e_contact(const body::SkeletonDef& skel, const std::vector<body::BodyState>& states,
                        const std::vector<Pose3>& cam_to_world, const scene::SpatialIndex& index,
                        double scale, const RobustKernel& kernel, ScalePlacement placement) {
    const auto corr = contact_correspondences(skel, states, cam_to_world, index, scale, placement);
    return e_contact_fixed(skel, states, cam_to_world, index, corr, scale, kernel, placement);
}

// ---------------------------------------------------------------------------
// Sequence state and flat parameter layout

// All free parameters of a fitting problem. Camera poses are held as a base
// pose plus an optimizable increment (axis-angle, left-multiplied) so the
// flat vector stays unconstrained.
struct SequenceState {
    bool shared_beta = true;
    std::vector<body::ShapeParams> betas;    // size 1 when shared, else frame count
    std::vector<body::PoseParams> poses;
    std::vector<body::RootTransform> roots;
    std::vector<Pose3> cam_base;
    std::vector<Vec3> cam_rot_delta;
    std::vector<Vec3> cam_trans_delta;
    double scale = 1.0;

    int frame_count() const { return static_cast<int>(poses.size()); }

    const body::ShapeParams& beta(int t) const { return shared_beta ? betas[0] : betas[t]; }
    body::ShapeParams& beta(int t) { return shared_beta ? betas[0] : betas[t]; }

    Pose3 camera_pose(int t) const {
        const Eigen::Quaterniond dq(rodrigues(cam_rot_delta[t]));
        return Pose3(dq * cam_base[t].rotation, cam_base[t].translation + cam_trans_delta[t]);
    }

    body::BodyState body_state(int t) const { return {beta(t), poses[t], roots[t]}; }

    std::vector<body::BodyState> body_states() const {
        std::vector<body::BodyState> out;
        out.reserve(poses.size());
        for (int t = 0; t < frame_count(); ++t) out.push_back(body_state(t));
        return out;
    }

    std::vector<Pose3> camera_poses() const {
        std::vector<Pose3> out;
        out.reserve(poses.size());
        for (int t = 0; t < frame_count(); ++t) out.push_back(camera_pose(t));
        return out;
    }

    // Fold camera increments into the base poses and reset them to zero.
    void rebase_cameras() {
        for (int t = 0; t < frame_count(); ++t) {
            cam_base[t] = camera_pose(t);
            cam_rot_delta[t].setZero();
            cam_trans_delta[t].setZero();
        }
    }

    static SequenceState make(const body::SkeletonDef& skel, int frames, bool shared_beta_) {
        SequenceState s;
        s.shared_beta = shared_beta_;
        s.betas.assign(shared_beta_ ? 1 : frames, body::ShapeParams::zero(skel.shape_group_count));
        s.poses.assign(frames, body::PoseParams::rest(skel.joint_count()));
        s.roots.assign(frames, body::RootTransform{});
        s.cam_base.assign(frames, Pose3::identity());
        s.cam_rot_delta.assign(frames, Vec3::Zero());
        s.cam_trans_delta.assign(frames, Vec3::Zero());
        return s;
    }
};

// Maps the free blocks of a SequenceState onto one flat vector. Frozen
// blocks are not part of the vector at all.
struct ParamLayout {
    FreeSet free;
    bool shared_beta = true;
    int frames = 0, joints = 0, groups = 0;
    int shared_beta_offset = -1;
    int frame_offset = 0;   // start of the per-frame region
    int per_frame = 0;      // stride of one frame block
    int beta_in_frame = -1, theta_in_frame = -1, root_in_frame = -1, cam_in_frame = -1;
    int scale_offset = -1;
    int total = 0;

    static ParamLayout create(const FreeSet& free, bool shared_beta, int frames, int joints, int groups) {
        if (!free.any()) throw std::invalid_argument("ParamLayout: at least one block must be free");
        ParamLayout l;
        l.free = free;
        l.shared_beta = shared_beta;
        l.frames = frames;
        l.joints = joints;
        l.groups = groups;
        int cursor = 0;
        if (free.beta && shared_beta) {
            l.shared_beta_offset = cursor;
            cursor += groups;
        }
        l.frame_offset = cursor;
        int fp = 0;
        if (free.beta && !shared_beta) { l.beta_in_frame = fp; fp += groups; }
        if (free.theta) { l.theta_in_frame = fp; fp += 3 * joints; }
        if (free.root) { l.root_in_frame = fp; fp += 6; }
        if (free.cam_pose) { l.cam_in_frame = fp; fp += 6; }
        l.per_frame = fp;
        cursor += frames * fp;
        if (free.scale) { l.scale_offset = cursor; cursor += 1; }
        l.total = cursor;
        return l;
    }

    int frame_base(int t) const { return frame_offset + t * per_frame; }
};

inline Eigen::VectorXd pack_state(const SequenceState& s, const ParamLayout& l) {
    if (l.free.beta && s.shared_beta != l.shared_beta)
        throw std::invalid_argument("pack_state: layout and state disagree on beta sharing");
    Eigen::VectorXd x(l.total);
    if (l.shared_beta_offset >= 0) x.segment(l.shared_beta_offset, l.groups) = s.betas[0].beta;
    for (int t = 0; t < l.frames; ++t) {
        const int base = l.frame_base(t);
        if (l.beta_in_frame >= 0) x.segment(base + l.beta_in_frame, l.groups) = s.betas[t].beta;
        if (l.theta_in_frame >= 0) x.segment(base + l.theta_in_frame, 3 * l.joints) = s.poses[t].theta;
        if (l.root_in_frame >= 0) {
            x.segment<3>(base + l.root_in_frame) = s.roots[t].orientation;
            x.segment<3>(base + l.root_in_frame + 3) = s.roots[t].translation;
        }
        if (l.cam_in_frame >= 0) {
            x.segment<3>(base + l.cam_in_frame) = s.cam_rot_delta[t];
            x.segment<3>(base + l.cam_in_frame + 3) = s.cam_trans_delta[t];
        }
    }
    if (l.scale_offset >= 0) x[l.scale_offset] = s.scale;
    return x;
}

inline void unpack_state(const Eigen::VectorXd& x, const ParamLayout& l, SequenceState& s) {
    if (x.size() != l.total) throw std::invalid_argument("unpack_state: vector size mismatch");
    if (l.free.beta && s.shared_beta != l.shared_beta)
        throw std::invalid_argument("unpack_state: layout and state disagree on beta sharing");
    if (l.shared_beta_offset >= 0) s.betas[0].beta = x.segment(l.shared_beta_offset, l.groups);
    for (int t = 0; t < l.frames; ++t) {
        const int base = l.frame_base(t);
        if (l.beta_in_frame >= 0) s.betas[t].beta = x.segment(base + l.beta_in_frame, l.groups);
        if (l.theta_in_frame >= 0) s.poses[t].theta = x.segment(base + l.theta_in_frame, 3 * l.joints);
        if (l.root_in_frame >= 0) {
            s.roots[t].orientation = x.segment<3>(base + l.root_in_frame);
            s.roots[t].translation = x.segment<3>(base + l.root_in_frame + 3);
        }
        if (l.cam_in_frame >= 0) {
            s.cam_rot_delta[t] = x.segment<3>(base + l.cam_in_frame);
            s.cam_trans_delta[t] = x.segment<3>(base + l.cam_in_frame + 3);
        }
    }
    if (l.scale_offset >= 0) s.scale = x[l.scale_offset];
}

// ---------------------------------------------------------------------------
// The fused model: one evaluation of the total energy plus its gradient.

struct EnergyBreakdown {
    double joint = 0.0;        // sum over frames of E_J
    double shape_prior = 0.0;  // unweighted sum of E_beta
    double pose_prior = 0.0;   // unweighted sum of E_theta
    double contact = 0.0;      // unweighted E_C
    double temporal = 0.0;     // unweighted E_T
    double total = 0.0;        // weighted sum
};

class EnergyModel {
public:
    struct Inputs {
        const body::SkeletonDef* skeleton = nullptr;
        CameraIntrinsics intrinsics;
        std::vector<FrameObservations> observations;
        const scene::SpatialIndex* scene_index = nullptr;
        Weights weights;
        Kernels kernels;
        ScalePlacement scale_placement = ScalePlacement::CameraFrame;
        int threads = 1;
    };

    explicit EnergyModel(Inputs in) : in_(std::move(in)) {
        if (!in_.skeleton) throw std::invalid_argument("EnergyModel: skeleton required");
        if (in_.weights.lambda_contact > 0.0 && !in_.scene_index)
            throw std::invalid_argument("EnergyModel: contact term enabled without a scene index");
        rest_theta_ = Eigen::VectorXd::Zero(3 * in_.skeleton->joint_count());
        prior_weights_ = pose_prior_weights(*in_.skeleton);
        if (in_.weights.joint_anneal.size() == 0)
            in_.weights.joint_anneal = Eigen::VectorXd::Ones(in_.skeleton->joint_count());
    }

    const Inputs& inputs() const { return in_; }
    Weights& weights() { return in_.weights; }
    const Eigen::VectorXd& rest_theta() const { return rest_theta_; }
    const Correspondences& correspondences() const { return corr_; }

    bool contact_active() const { return in_.weights.lambda_contact > 0.0 && in_.scene_index; }
    bool temporal_active() const { return in_.weights.lambda_temporal > 0.0; }

    // Fix the nearest-vertex correspondences at the current state; gradients
    // then flow through the point-to-fixed-vertex distances.
    void refresh_correspondences(const SequenceState& s) {
        if (!contact_active()) { corr_.clear(); return; }
        corr_ = contact_correspondences(*in_.skeleton, s.body_states(), s.camera_poses(),
                                        *in_.scene_index, s.scale, in_.scale_placement);
    }

    EnergyBreakdown evaluate(const SequenceState& s) const {
        const int frames = s.frame_count();
        const auto& skel = *in_.skeleton;
        check_frames(s);
        if (contact_active() || temporal_active())
            if (!(s.scale > 0.0)) throw NonPositiveScaleError{};

        struct FramePart {
            double joint = 0.0, shape = 0.0, pose = 0.0, contact = 0.0;
            std::vector<Vec3> world_joints;
        };
        std::vector<FramePart> parts(frames);
        const bool need_world = temporal_active();
        const bool contact = contact_active();
        if (contact && static_cast<int>(corr_.size()) != frames)
            throw std::logic_error("EnergyModel: correspondences not refreshed");

        parallel_for(frames, in_.threads, [&](int t) {
            FramePart& part = parts[t];
            const auto fk = body::forward_kinematics(skel, s.beta(t), s.poses[t], s.roots[t]);
            part.joint = e_joint_positions(fk.joint_pos, in_.intrinsics, in_.observations[t],
                                           in_.kernels.joint, in_.weights);
            part.shape = s.beta(t).beta.squaredNorm();
            const Eigen::VectorXd d = s.poses[t].theta - rest_theta_;
            part.pose = d.cwiseProduct(d).dot(prior_weights_);
            const Pose3 cam = s.camera_pose(t);
            if (contact) {
                const auto& cands = skel.contact_candidates;
                for (size_t c = 0; c < cands.size(); ++c) {
                    const Vec3 p = fk.attached_point(cands[c].joint, cands[c].offset);
                    const Vec3 w = to_world(cam, s.scale, p, in_.scale_placement, s.roots[t].translation);
                    part.contact += in_.kernels.contact((w - in_.scene_index->stored_point(corr_[t][c])).norm());
                }
            }
            if (need_world) {
                part.world_joints.reserve(fk.joint_pos.size());
                for (const auto& p : fk.joint_pos)
                    part.world_joints.push_back(to_world(cam, s.scale, p, in_.scale_placement, s.roots[t].translation));
            }
        });

        EnergyBreakdown out;
        for (int t = 0; t < frames; ++t) {
            if (!std::isfinite(parts[t].joint)) throw NonFiniteEnergyError("joint", t);
            if (!std::isfinite(parts[t].shape)) throw NonFiniteEnergyError("shape_prior", t);
            if (!std::isfinite(parts[t].pose)) throw NonFiniteEnergyError("pose_prior", t);
            if (!std::isfinite(parts[t].contact)) throw NonFiniteEnergyError("contact", t);
            out.joint += parts[t].joint;
            out.shape_prior += parts[t].shape;
            out.pose_prior += parts[t].pose;
            out.contact += parts[t].contact;
        }
        if (temporal_active()) {
            if (frames < 3) throw SequenceTooShortError{};
            for (int t = 1; t + 1 < frames; ++t) {
                double stencil = 0.0;
                for (int i = 0; i < skel.joint_count(); ++i) {
                    const double w = std::min({in_.observations[t - 1][i].confidence,
                                               in_.observations[t][i].confidence,
                                               in_.observations[t + 1][i].confidence});
                    if (1.0 - w <= 0.0) continue;
                    const Vec3 accel = parts[t + 1].world_joints[i] - 2.0 * parts[t].world_joints[i] +
                                       parts[t - 1].world_joints[i];
                    stencil += (1.0 - w) * in_.kernels.temporal(accel.norm());
                }
                if (!std::isfinite(stencil)) throw NonFiniteEnergyError("temporal", t);
                out.temporal += stencil;
            }
        }
        out.total = out.joint + in_.weights.lambda_beta * out.shape_prior +
                    in_.weights.lambda_theta * out.pose_prior +
                    in_.weights.lambda_contact * out.contact +
                    in_.weights.lambda_temporal * out.temporal;
        if (!std::isfinite(out.total)) throw NonFiniteEnergyError("total", -1);
        return out;
    }

    double total(const SequenceState& s) const { return evaluate(s).total; }

    // Gradient of the total energy over the free blocks of `layout`.
    Eigen::VectorXd gradient(const SequenceState& s, const ParamLayout& layout) const {
        const int frames = s.frame_count();
        const auto& skel = *in_.skeleton;
        const int joints = skel.joint_count();
        check_frames(s);
        const bool contact = contact_active();
        const bool temporal = temporal_active();
        if ((contact || temporal) && !(s.scale > 0.0)) throw NonPositiveScaleError{};
        if (contact && static_cast<int>(corr_.size()) != frames)
            throw std::logic_error("EnergyModel: correspondences not refreshed");

        // Phase A: per-frame forward caches.
        std::vector<std::unique_ptr<body::FkDerivatives>> ctx(frames);
        parallel_for(frames, in_.threads, [&](int t) {
            ctx[t] = std::make_unique<body::FkDerivatives>(skel, s.beta(t), s.poses[t], s.roots[t]);
        });

        // Phase B (serial): temporal stencils produce per-frame dE/dW pulls.
        std::vector<std::vector<Vec3>> temporal_pull;
        if (temporal) {
            if (frames < 3) throw SequenceTooShortError{};
            std::vector<std::vector<Vec3>> world(frames);
            for (int t = 0; t < frames; ++t) {
                const Pose3 cam = s.camera_pose(t);
                world[t].reserve(joints);
                for (const auto& p : ctx[t]->fk().joint_pos)
                    world[t].push_back(to_world(cam, s.scale, p, in_.scale_placement, s.roots[t].translation));
            }
            temporal_pull.assign(frames, std::vector<Vec3>(joints, Vec3::Zero()));
            for (int t = 1; t + 1 < frames; ++t) {
                for (int i = 0; i < joints; ++i) {
                    const double w = std::min({in_.observations[t - 1][i].confidence,
                                               in_.observations[t][i].confidence,
                                               in_.observations[t + 1][i].confidence});
                    const double gate = 1.0 - w;
                    if (gate <= 0.0) continue;
                    const Vec3 accel = world[t + 1][i] - 2.0 * world[t][i] + world[t - 1][i];
                    const Vec3 pull = (in_.weights.lambda_temporal * gate *
                                       in_.kernels.temporal.vector_gradient_scale(accel.squaredNorm())) * accel;
                    temporal_pull[t + 1][i] += pull;
                    temporal_pull[t][i] -= 2.0 * pull;
                    temporal_pull[t - 1][i] += pull;
                }
            }
        }

        // Phase C: per-frame backward chains into per-frame slots.
        struct FrameGrad {
            body::FkGradient fk;
            Vec3 cam_rot = Vec3::Zero();
            Vec3 cam_trans = Vec3::Zero();
            double scale = 0.0;
            FrameGrad(int joints_, int groups_) : fk(joints_, groups_) {}
        };
        std::vector<FrameGrad> fg(frames, FrameGrad(joints, skel.shape_group_count));

        parallel_for(frames, in_.threads, [&](int t) {
            FrameGrad& g = fg[t];
            const auto& fk = ctx[t]->fk();
            // E_J
            for (int i = 0; i < joints; ++i) {
                const double w = in_.observations[t][i].confidence;
                const double k = in_.weights.anneal(i);
                if (w <= 0.0 || k <= 0.0) continue;
                const Vec3& p = fk.joint_pos[i];
                if (p.z() <= kMinProjectionDepth) continue;
                const Vec2 r = project(in_.intrinsics, p) - in_.observations[t][i].position;
                const double gscale = k * w * in_.kernels.joint.vector_gradient_scale(r.squaredNorm());
                const Vec3 de_dp = projection_jacobian(in_.intrinsics, p).transpose() * (gscale * r);
                ctx[t]->accumulate(i, Vec3::Zero(), de_dp, g.fk);
            }
            // priors
            g.fk.beta += 2.0 * in_.weights.lambda_beta * s.beta(t).beta;
            g.fk.theta += 2.0 * in_.weights.lambda_theta *
                          prior_weights_.cwiseProduct(s.poses[t].theta - rest_theta_);

            // world-point pulls (contact candidates and temporal joints)
            const Pose3 cam = s.camera_pose(t);
            const Mat3 r_wc = cam.rotation_matrix();
            const Mat3 r_base = s.cam_base[t].rotation_matrix();
            const auto delta_jac = rodrigues_jacobian(s.cam_rot_delta[t]);
            const bool body_frame = in_.scale_placement == ScalePlacement::BodyFrame;

            auto backprop_world = [&](int joint, const Vec3& offset, const Vec3& p_cam, const Vec3& de_dw) {
                const Vec3 u = body_frame
                                   ? Vec3(s.scale * p_cam + (1.0 - s.scale) * s.roots[t].translation)
                                   : Vec3(s.scale * p_cam);
                if (layout.scale_offset >= 0) {
                    const Vec3 ds = body_frame ? Vec3(p_cam - s.roots[t].translation) : p_cam;
                    g.scale += de_dw.dot(r_wc * ds);
                }
                if (layout.cam_in_frame >= 0) {
                    const Vec3 rb_u = r_base * u;
                    for (int a = 0; a < 3; ++a) g.cam_rot[a] += de_dw.dot(delta_jac[a] * rb_u);
                    g.cam_trans += de_dw;
                }
                const Vec3 de_dp = s.scale * (r_wc.transpose() * de_dw);
                ctx[t]->accumulate(joint, offset, de_dp, g.fk);
                if (body_frame)
                    g.fk.root_translation += (1.0 - s.scale) * (r_wc.transpose() * de_dw);
            };

            if (contact) {
                const auto& cands = skel.contact_candidates;
                for (size_t c = 0; c < cands.size(); ++c) {
                    const Vec3 p = fk.attached_point(cands[c].joint, cands[c].offset);
                    const Vec3 w = to_world(cam, s.scale, p, in_.scale_placement, s.roots[t].translation);
                    const Vec3 r = w - in_.scene_index->stored_point(corr_[t][c]);
                    const Vec3 de_dw = (in_.weights.lambda_contact *
                                        in_.kernels.contact.vector_gradient_scale(r.squaredNorm())) * r;
                    backprop_world(cands[c].joint, cands[c].offset, p, de_dw);
                }
            }
            if (temporal) {
                for (int i = 0; i < joints; ++i) {
                    const Vec3& pull = temporal_pull[t][i];
                    if (pull.isZero(0.0)) continue;
                    backprop_world(i, Vec3::Zero(), fk.joint_pos[i], pull);
                }
            }
        });

        // Phase D (serial): scatter into the flat vector in frame order.
        Eigen::VectorXd out = Eigen::VectorXd::Zero(layout.total);
        for (int t = 0; t < frames; ++t) {
            const int base = layout.frame_base(t);
            if (layout.shared_beta_offset >= 0)
                out.segment(layout.shared_beta_offset, layout.groups) += fg[t].fk.beta;
            if (layout.beta_in_frame >= 0)
                out.segment(base + layout.beta_in_frame, layout.groups) = fg[t].fk.beta;
            if (layout.theta_in_frame >= 0)
                out.segment(base + layout.theta_in_frame, 3 * joints) = fg[t].fk.theta;
            if (layout.root_in_frame >= 0) {
                out.segment<3>(base + layout.root_in_frame) = fg[t].fk.root_orientation;
                out.segment<3>(base + layout.root_in_frame + 3) = fg[t].fk.root_translation;
            }
            if (layout.cam_in_frame >= 0) {
                out.segment<3>(base + layout.cam_in_frame) = fg[t].cam_rot;
                out.segment<3>(base + layout.cam_in_frame + 3) = fg[t].cam_trans;
            }
            if (layout.scale_offset >= 0) out[layout.scale_offset] += fg[t].scale;
        }
        for (int i = 0; i < out.size(); ++i)
            if (!std::isfinite(out[i])) throw NonFiniteEnergyError("gradient", -1);
        return out;
    }

private:
    void check_frames(const SequenceState& s) const {
        if (static_cast<int>(in_.observations.size()) != s.frame_count())
            throw std::invalid_argument("EnergyModel: observation frame count mismatch");
        for (const auto& frame : in_.observations)
            if (static_cast<int>(frame.size()) != in_.skeleton->joint_count())
                throw std::invalid_argument("EnergyModel: observation joint count mismatch");
    }

    Inputs in_;
    Eigen::VectorXd rest_theta_;
    Eigen::VectorXd prior_weights_;
    Correspondences corr_;
};

// Total energy at a state, with correspondences taken fresh (the line every
// optimizer outer iteration starts from).
inline EnergyBreakdown e_total(const body::SkeletonDef& skel, const SequenceState& s,
                               const CameraIntrinsics& intrinsics,
                               const std::vector<FrameObservations>& observations,
                               const scene::SpatialIndex* index, const Weights& weights,
                               const Kernels& kernels,
                               ScalePlacement placement = ScalePlacement::CameraFrame) {
    EnergyModel::Inputs in;
    in.skeleton = &skel;
    in.intrinsics = intrinsics;
    in.observations = observations;
    in.scene_index = index;
    in.weights = weights;
    in.kernels = kernels;
    in.scale_placement = placement;
    EnergyModel model(std::move(in));
    model.refresh_correspondences(s);
    return model.evaluate(s);
}

} // namespace egofit::energy

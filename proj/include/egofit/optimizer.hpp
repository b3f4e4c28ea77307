#pragma once

// Adam over the flat free-parameter vector, the staged fitting schedule
// (per-frame 2D fit with limb annealing -> contact/scale recovery with frozen
// cameras -> joint temporal refinement), and the full fitting pipeline with
// shape consolidation between stages.

#include "egofit/body.hpp"
#include "egofit/energy.hpp"
#include "egofit/geometry.hpp"
#include "egofit/scene.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::opt {

struct LengthMismatchError : std::runtime_error {
    LengthMismatchError() : std::runtime_error("parameter/gradient/state lengths differ") {}
};

struct AdamState {
    Eigen::VectorXd m, v;
    int step = 0;

    explicit AdamState(Eigen::Index n)
        : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

struct AdamConfig {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Standard bias-corrected Adam update, in place.
inline void adam_step(Eigen::VectorXd& x, const Eigen::VectorXd& g, AdamState& state,
                      const AdamConfig& cfg) {
    if (x.size() != g.size() || x.size() != state.m.size() || x.size() != state.v.size())
        throw LengthMismatchError{};
    state.step += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double m_corr = 1.0 - std::pow(cfg.beta1, state.step);
    const double v_corr = 1.0 - std::pow(cfg.beta2, state.step);
    x.array() -=
        cfg.learning_rate * (state.m.array() / m_corr) / ((state.v.array() / v_corr).sqrt() + cfg.epsilon);
}

// One stage of the schedule. anneal_phases lists the limb weight k for each
// consecutive annealing pass; non-limb joints always keep k = 1.
struct StageConfig {
    std::string name = "stage";
    energy::FreeSet free;
    double lambda_contact = 0.0;
    double lambda_temporal = 0.0;
    std::vector<double> anneal_phases = {1.0};
    int outer_iterations = 1; // correspondence refreshes per phase
    int inner_steps = 100;    // Adam steps per outer iteration
    double learning_rate = 0.01;
    double lr_decay = 1.0;    // lr multiplier applied after each outer iteration
};

// The three-stage default: per-frame 2D fitting with annealing, then scale +
// contact with cameras frozen, then everything with the temporal prior.
inline std::vector<StageConfig> default_schedule() {
    StageConfig s1;
    s1.name = "stage1";
    s1.free.beta = s1.free.theta = s1.free.root = true;
    s1.free.cam_pose = s1.free.scale = false;
    s1.anneal_phases = {0.0, 0.5, 1.0};
    s1.outer_iterations = 1;
    s1.inner_steps = 100;
    s1.learning_rate = 0.01;

    // Stage 2 carries the scale recovery and needs the travel budget; stage 3
    // is a short, refresh-heavy refinement because its temporal term, left to
    // run, trades scale away for smoothness (shrinking S shrinks world
    // accelerations) and frequent correspondence refreshes re-anchor the
    // contact force that resists that slide.
    StageConfig s2;
    s2.name = "stage2";
    s2.free.beta = false;
    s2.free.theta = s2.free.root = s2.free.scale = true;
    s2.free.cam_pose = false;
    s2.lambda_contact = 0.1;
    s2.outer_iterations = 30;
    s2.inner_steps = 50;
    s2.learning_rate = 0.01;
    s2.lr_decay = 0.95;

    StageConfig s3 = s2;
    s3.name = "stage3";
    s3.lambda_temporal = 0.1;
    s3.free.cam_pose = true;
    s3.outer_iterations = 8;
    s3.inner_steps = 10;
    s3.learning_rate = 0.001;
    s3.lr_decay = 0.9;
    return {s1, s2, s3};
}

struct TraceRow {
    std::string stage;
    int iter = 0;
    energy::EnergyBreakdown energy;
};

struct StageRunResult {
    std::string name;
    std::vector<TraceRow> trace; // iter 0 = energy before the first step
    bool energy_decreased = true;
    int steps = 0;
};

// Per-joint annealing weights: limb joints get k, the rest 1.
inline Eigen::VectorXd limb_anneal_vector(const body::SkeletonDef& skel, double k) {
    Eigen::VectorXd a = Eigen::VectorXd::Ones(skel.joint_count());
    for (int i = 0; i < skel.joint_count(); ++i)
        if (skel.joints[i].limb) a[i] = k;
    return a;
}

// Runs one stage in place. Frozen blocks are never written. Correspondences
// refresh at every outer iteration; Adam moments persist across phases.
inline StageRunResult run_stage(energy::EnergyModel& model, energy::SequenceState& state,
                                const StageConfig& stage) {
    const auto& skel = *model.inputs().skeleton;
    if (stage.lambda_contact > 0.0 && !model.inputs().scene_index)
        throw std::invalid_argument("run_stage: contact stage without a scene index");
    if (stage.anneal_phases.empty())
        throw std::invalid_argument("run_stage: stage needs at least one annealing phase");

    model.weights().lambda_contact = stage.lambda_contact;
    model.weights().lambda_temporal = stage.lambda_temporal;

    const auto layout = energy::ParamLayout::create(stage.free, state.shared_beta,
                                                    state.frame_count(), skel.joint_count(),
                                                    skel.shape_group_count);
    Eigen::VectorXd x = energy::pack_state(state, layout);
    AdamState adam(layout.total);
    AdamConfig acfg;
    acfg.learning_rate = stage.learning_rate;

    StageRunResult out;
    out.name = stage.name;
    int iter = 0;
    for (const double k : stage.anneal_phases) {
        model.weights().joint_anneal = limb_anneal_vector(skel, k);
        for (int outer = 0; outer < stage.outer_iterations; ++outer) {
            model.refresh_correspondences(state);
            if (out.trace.empty())
                out.trace.push_back({stage.name, 0, model.evaluate(state)});
            for (int inner = 0; inner < stage.inner_steps; ++inner) {
                const Eigen::VectorXd g = model.gradient(state, layout);
                adam_step(x, g, adam, acfg);
                energy::unpack_state(x, layout, state);
                ++iter;
                out.trace.push_back({stage.name, iter, model.evaluate(state)});
            }
            acfg.learning_rate *= stage.lr_decay;
        }
    }
    if (out.trace.empty()) { // zero-iteration stage: record the energy anyway
        model.refresh_correspondences(state);
        out.trace.push_back({stage.name, 0, model.evaluate(state)});
    }
    out.steps = iter;
    out.energy_decreased = out.trace.back().energy.total <= out.trace.front().energy.total + 1e-12;
    return out;
}

// The data term projects camera-frame points and so carries no scale signal:
// S is driven by contact alone, and plain descent inches because every
// correspondence refresh moves the frozen-target optimum only slightly.
// Seeding S with a coarse sweep of the stage energy (poses held fixed, fresh
// correspondences per candidate) puts the descent in the right basin; without
// it, long sequences settle for bending per-frame poses onto the scene at a
// wrong shared scale.
inline void seek_scale(energy::EnergyModel& model, energy::SequenceState& state,
                       const StageConfig& stage) {
    if (!model.inputs().scene_index) return; // run_stage reports the error
    model.weights().lambda_contact = stage.lambda_contact;
    model.weights().lambda_temporal = stage.lambda_temporal;
    energy::SequenceState probe = state;
    double best_scale = state.scale;
    double best_energy = std::numeric_limits<double>::infinity();
    for (int k = -24; k <= 24; ++k) { // 0.125x .. 8x in eighth-octave steps
        probe.scale = state.scale * std::exp2(k / 8.0);
        model.refresh_correspondences(probe);
        const double e = model.evaluate(probe).total;
        if (e < best_energy) {
            best_energy = e;
            best_scale = probe.scale;
        }
    }
    state.scale = best_scale;
}

// What the fitter is given: observations, intrinsics, the (possibly
// mis-scaled) scene, and the (possibly noisy) camera trajectory.
struct FitInputs {
    const body::SkeletonDef* skeleton = nullptr;
    CameraIntrinsics intrinsics;
    std::vector<energy::FrameObservations> observations;
    const scene::SpatialIndex* scene_index = nullptr;
    std::vector<Pose3> cameras;
};

struct PipelineConfig {
    std::vector<StageConfig> schedule = default_schedule();
    double lambda_beta = 0.01;
    double lambda_theta = 0.1;
    energy::Kernels kernels;
    energy::ScalePlacement scale_placement = energy::ScalePlacement::CameraFrame;
    int threads = 1;
    int consolidate_after = 0;   // consolidate + freeze beta after this stage; -1 disables
    double default_depth = 3.0;  // fallback when the pixel-span depth guess is unusable
    bool scale_seek = true;      // seed S by a coarse sweep before the first contact+scale stage
};

struct PipelineResult {
    energy::SequenceState state;
    std::vector<StageRunResult> stages;

    std::vector<TraceRow> full_trace() const {
        std::vector<TraceRow> rows;
        for (const auto& s : stages) rows.insert(rows.end(), s.trace.begin(), s.trace.end());
        return rows;
    }
};

// Coarse initialization: rest pose, S = 1, root depth from the ratio of the
// rest-pose extent of the visible joints to their pixel span, and the body
// oriented upright (world z) facing the camera.
inline energy::SequenceState initialize_state(const body::SkeletonDef& skel,
                                              const CameraIntrinsics& intr,
                                              const std::vector<energy::FrameObservations>& obs,
                                              const std::vector<Pose3>& cameras,
                                              bool shared_beta, double default_depth) {
    const int frames = static_cast<int>(obs.size());
    auto state = energy::SequenceState::make(skel, frames, shared_beta);
    state.cam_base = cameras;

    const auto rest_pos = body::joint_positions(skel, body::ShapeParams::zero(skel.shape_group_count),
                                                body::PoseParams::rest(skel.joint_count()),
                                                body::RootTransform{});
    Vec3 prev_gamma(0, 0, default_depth);
    for (int t = 0; t < frames; ++t) {
        // upright: body z maps to world up; facing: body x toward the camera
        const Mat3 r_wc = cameras[t].rotation_matrix();
        const Vec3 up_cam = r_wc.transpose() * Vec3(0, 0, 1);

        double v_lo = 1e300, v_hi = -1e300, z_lo = 1e300, z_hi = -1e300;
        Vec2 px_mean = Vec2::Zero();
        Vec3 rest_mean = Vec3::Zero();
        int visible = 0;
        for (int i = 0; i < skel.joint_count(); ++i) {
            if (obs[t][i].confidence <= 0.0) continue;
            ++visible;
            const Vec2& p = obs[t][i].position;
            px_mean += p;
            rest_mean += rest_pos[i];
            v_lo = std::min(v_lo, p.y());
            v_hi = std::max(v_hi, p.y());
            z_lo = std::min(z_lo, rest_pos[i].z());
            z_hi = std::max(z_hi, rest_pos[i].z());
        }
        double depth = default_depth;
        Vec3 gamma = prev_gamma;
        if (visible >= 2 && v_hi - v_lo > 4.0 && z_hi - z_lo > 1e-6) {
            depth = intr.focal.y() * (z_hi - z_lo) / (v_hi - v_lo);
            px_mean /= visible;
            rest_mean /= visible;
            gamma = depth * Vec3((px_mean.x() - intr.principal_point.x()) / intr.focal.x(),
                                 (px_mean.y() - intr.principal_point.y()) / intr.focal.y(), 1.0);
        } else if (visible >= 1) {
            px_mean /= visible;
            rest_mean /= visible;
            gamma = depth * Vec3((px_mean.x() - intr.principal_point.x()) / intr.focal.x(),
                                 (px_mean.y() - intr.principal_point.y()) / intr.focal.y(), 1.0);
        }

        const Vec3 z_b = up_cam.norm() > 1e-9 ? up_cam.normalized() : Vec3(0, -1, 0);
        Vec3 face = -gamma; // from the body toward the camera center
        face -= face.dot(z_b) * z_b;
        for (const Vec3& alt : {Vec3(0, 0, -1), Vec3(1, 0, 0)}) {
            if (face.norm() >= 1e-9) break;
            face = alt - alt.dot(z_b) * z_b;
        }
        const Vec3 x_b = face.normalized();
        const Vec3 y_b = z_b.cross(x_b);
        Mat3 r_o;
        r_o.col(0) = x_b;
        r_o.col(1) = y_b;
        r_o.col(2) = z_b;
        state.roots[t].orientation = axis_angle_of(Eigen::Quaterniond(r_o));
        // shift so the mean of the visible joints (not the pelvis) lands on the ray
        state.roots[t].translation = gamma - (visible >= 1 ? Vec3(r_o * rest_mean) : Vec3::Zero());
        prev_gamma = state.roots[t].translation;
    }
    return state;
}

// The full fit: stage schedule + median shape consolidation.
inline PipelineResult run_pipeline(const FitInputs& in, const PipelineConfig& cfg) {
    if (!in.skeleton) throw std::invalid_argument("run_pipeline: skeleton required");
    if (cfg.schedule.empty()) throw std::invalid_argument("run_pipeline: empty schedule");
    const int frames = static_cast<int>(in.observations.size());
    if (frames < 3) throw std::invalid_argument("run_pipeline: need at least 3 frames");
    if (static_cast<int>(in.cameras.size()) != frames)
        throw std::invalid_argument("run_pipeline: camera/observation frame counts differ");

    // per-frame shape while the first stage fits it; consolidated afterwards
    const bool start_per_frame = cfg.consolidate_after >= 0 && cfg.schedule.front().free.beta;
    PipelineResult result;
    result.state = initialize_state(*in.skeleton, in.intrinsics, in.observations, in.cameras,
                                    !start_per_frame, cfg.default_depth);

    energy::EnergyModel::Inputs model_in;
    model_in.skeleton = in.skeleton;
    model_in.intrinsics = in.intrinsics;
    model_in.observations = in.observations;
    model_in.scene_index = in.scene_index;
    model_in.weights.lambda_beta = cfg.lambda_beta;
    model_in.weights.lambda_theta = cfg.lambda_theta;
    model_in.weights.lambda_contact = 0.0;  // each stage installs its own
    model_in.weights.lambda_temporal = 0.0;
    model_in.kernels = cfg.kernels;
    model_in.scale_placement = cfg.scale_placement;
    model_in.threads = cfg.threads;
    energy::EnergyModel model(model_in);

    bool scale_seeded = false;
    for (size_t s = 0; s < cfg.schedule.size(); ++s) {
        const StageConfig& stage = cfg.schedule[s];
        if (cfg.scale_seek && !scale_seeded && stage.free.scale && stage.lambda_contact > 0.0) {
            seek_scale(model, result.state, stage);
            scale_seeded = true;
        }
        result.stages.push_back(run_stage(model, result.state, stage));
        if (static_cast<int>(s) == cfg.consolidate_after && s + 1 < cfg.schedule.size() &&
            !result.state.shared_beta) {
            const auto median = body::consolidate_shape(result.state.betas);
            result.state.shared_beta = true;
            result.state.betas = {median};
        }
    }
    return result;
}

} // namespace egofit::opt

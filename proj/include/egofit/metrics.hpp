#pragma once

#include "egofit/body.hpp"
#include "egofit/energy.hpp"
#include "egofit/geometry.hpp"
#include "egofit/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::metrics {

struct EmptySubsetError : std::invalid_argument {
    EmptySubsetError() : std::invalid_argument("metric subset selects no samples") {}
};

// One row of an evaluation. Optional fields stay empty when their inputs
// (scene, ground truth, partial frames) are absent.
struct MetricsReport {
    int frames = 0;
    int partial_frames = 0;              // >= 25% of joints unobserved
    double pje_u = 0.0;                  // pixels, all frames
    std::optional<double> pje_p;         // pixels, partially observable frames
    double smoothness = 0.0;             // body heights / frame^2
    std::optional<double> contact_distance; // scene units, mean over candidates
    std::optional<double> stance_contact;   // scene units, grounded candidate only
    std::optional<double> scale_rel_error;
    std::optional<double> joint3d_occluded; // scene units, joints with w = 0
    std::optional<double> joint3d_visible;
};

inline std::vector<int> all_frames(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

// A frame counts as partially observable when at least a quarter of its
// joints carry zero confidence.
inline bool partially_observable(const energy::FrameObservations& obs) {
    int masked = 0;
    for (const auto& o : obs)
        if (o.confidence <= 0.0) ++masked;
    return 4 * masked >= static_cast<int>(obs.size());
}

// Mean reprojection error in pixels over the visible joints of the selected
// frames. Joints the estimate puts behind the camera throw BehindCameraError.
inline double pje(const body::SkeletonDef& skel, const CameraIntrinsics& intr,
                  const energy::SequenceState& state,
                  const std::vector<energy::FrameObservations>& obs,
                  const std::vector<int>& frame_subset) {
    double total = 0.0;
    long count = 0;
    for (const int t : frame_subset) {
        const auto joints = body::joint_positions(skel, state.beta(t), state.poses[t], state.roots[t]);
        for (int i = 0; i < skel.joint_count(); ++i) {
            if (obs[t][i].confidence <= 0.0) continue;
            total += (project(intr, joints[i]) - obs[t][i].position).norm();
            ++count;
        }
    }
    if (count == 0) throw EmptySubsetError{};
    return total / count;
}

// World-space joint tracks of an estimate.
inline std::vector<std::vector<Vec3>> world_tracks(
    const body::SkeletonDef& skel, const energy::SequenceState& state,
    energy::ScalePlacement placement = energy::ScalePlacement::CameraFrame) {
    std::vector<std::vector<Vec3>> tracks(state.frame_count());
    for (int t = 0; t < state.frame_count(); ++t) {
        const auto joints = body::joint_positions(skel, state.beta(t), state.poses[t], state.roots[t]);
        const Pose3 cam = state.camera_pose(t);
        tracks[t].reserve(joints.size());
        for (const auto& p : joints)
            tracks[t].push_back(
                energy::to_world(cam, state.scale, p, placement, state.roots[t].translation));
    }
    return tracks;
}

// Mean joint acceleration magnitude after normalizing positions by
// scale * body height; zero for constant-velocity motion.
inline double smoothness(const std::vector<std::vector<Vec3>>& tracks, double scale,
                         double body_height) {
    const int frames = static_cast<int>(tracks.size());
    if (frames < 3) throw energy::SequenceTooShortError{};
    if (!(scale > 0.0) || !(body_height > 0.0))
        throw std::invalid_argument("smoothness: scale and body height must be positive");
    const double norm = scale * body_height;
    double total = 0.0;
    long count = 0;
    for (int t = 1; t + 1 < frames; ++t) {
        for (size_t i = 0; i < tracks[t].size(); ++i) {
            total += (tracks[t + 1][i] / norm - 2.0 * (tracks[t][i] / norm) + tracks[t - 1][i] / norm).norm();
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / count;
}

// Recovered rest-pose body height; per-frame shapes are consolidated first.
inline double recovered_body_height(const body::SkeletonDef& skel,
                                    const energy::SequenceState& state) {
    const body::ShapeParams shape =
        state.shared_beta ? state.betas[0] : body::consolidate_shape(state.betas);
    return body::rest_body_height(skel, shape);
}

namespace detail {

inline std::vector<Vec3> world_contacts(const body::SkeletonDef& skel,
                                        const energy::SequenceState& state, int t,
                                        energy::ScalePlacement placement) {
    const auto points =
        body::contact_points(skel, state.beta(t), state.poses[t], state.roots[t]);
    const Pose3 cam = state.camera_pose(t);
    std::vector<Vec3> world;
    world.reserve(points.size());
    for (const auto& p : points)
        world.push_back(energy::to_world(cam, state.scale, p, placement, state.roots[t].translation));
    return world;
}

} // namespace detail

// Mean over frames of the mean contact-candidate distance to the scene.
inline double contact_distance(const body::SkeletonDef& skel, const energy::SequenceState& state,
                               const scene::SpatialIndex& index,
                               const std::vector<int>& frame_subset,
                               energy::ScalePlacement placement = energy::ScalePlacement::CameraFrame) {
    if (frame_subset.empty() || skel.contact_candidates.empty()) throw EmptySubsetError{};
    double total = 0.0;
    for (const int t : frame_subset) {
        double frame_sum = 0.0;
        const auto world = detail::world_contacts(skel, state, t, placement);
        for (const auto& w : world) frame_sum += index.nearest(w).distance;
        total += frame_sum / static_cast<double>(world.size());
    }
    return total / static_cast<double>(frame_subset.size());
}

// Mean over frames of the distance of the single grounded candidate (the one
// closest to the scene); the stance-phase contact measure.
inline double stance_contact_distance(const body::SkeletonDef& skel,
                                      const energy::SequenceState& state,
                                      const scene::SpatialIndex& index,
                                      const std::vector<int>& frame_subset,
                                      energy::ScalePlacement placement = energy::ScalePlacement::CameraFrame) {
    if (frame_subset.empty() || skel.contact_candidates.empty()) throw EmptySubsetError{};
    double total = 0.0;
    for (const int t : frame_subset) {
        double best = std::numeric_limits<double>::infinity();
        const auto world = detail::world_contacts(skel, state, t, placement);
        for (const auto& w : world) best = std::min(best, index.nearest(w).distance);
        total += best;
    }
    return total / static_cast<double>(frame_subset.size());
}

struct Joint3dErrors {
    std::optional<double> occluded; // joints observed with w = 0
    std::optional<double> visible;
};

// Mean 3D distance between estimated and ground-truth world joints, split by
// whether the joint was observed in that frame.
inline Joint3dErrors joint3d_errors(const std::vector<std::vector<Vec3>>& estimate,
                                    const std::vector<std::vector<Vec3>>& truth,
                                    const std::vector<energy::FrameObservations>& obs) {
    if (estimate.size() != truth.size() || estimate.size() != obs.size())
        throw std::invalid_argument("joint3d_errors: frame counts disagree");
    double occ = 0.0, vis = 0.0;
    long n_occ = 0, n_vis = 0;
    for (size_t t = 0; t < estimate.size(); ++t) {
        for (size_t i = 0; i < estimate[t].size(); ++i) {
            const double d = (estimate[t][i] - truth[t][i]).norm();
            if (obs[t][i].confidence <= 0.0) {
                occ += d;
                ++n_occ;
            } else {
                vis += d;
                ++n_vis;
            }
        }
    }
    Joint3dErrors out;
    if (n_occ > 0) out.occluded = occ / n_occ;
    if (n_vis > 0) out.visible = vis / n_vis;
    return out;
}

inline double scale_rel_error(double estimated, double truth) {
    if (!(truth > 0.0)) throw std::invalid_argument("scale_rel_error: truth scale must be > 0");
    return std::abs(estimated - truth) / truth;
}

// Optional ground truth for the synthetic-only metrics: per-frame world joint
// positions in the fitter's (scaled) frame, plus the true scale.
struct TruthRef {
    const std::vector<std::vector<Vec3>>* world_joints = nullptr;
    double true_scale = 1.0;
};

// Assembles the full report. `scene_index` and `truth` may be null.
inline MetricsReport evaluate_run(const body::SkeletonDef& skel, const CameraIntrinsics& intr,
                                  const energy::SequenceState& state,
                                  const std::vector<energy::FrameObservations>& obs,
                                  const scene::SpatialIndex* scene_index = nullptr,
                                  const TruthRef* truth = nullptr,
                                  energy::ScalePlacement placement = energy::ScalePlacement::CameraFrame) {
    MetricsReport report;
    report.frames = state.frame_count();

    std::vector<int> partial;
    for (int t = 0; t < report.frames; ++t)
        if (partially_observable(obs[t])) partial.push_back(t);
    report.partial_frames = static_cast<int>(partial.size());

    report.pje_u = pje(skel, intr, state, obs, all_frames(report.frames));
    if (!partial.empty()) report.pje_p = pje(skel, intr, state, obs, partial);

    const auto tracks = world_tracks(skel, state, placement);
    report.smoothness = smoothness(tracks, state.scale, recovered_body_height(skel, state));

    if (scene_index) {
        const auto subset = all_frames(report.frames);
        report.contact_distance = contact_distance(skel, state, *scene_index, subset, placement);
        report.stance_contact = stance_contact_distance(skel, state, *scene_index, subset, placement);
    }
    if (truth && truth->world_joints) {
        report.scale_rel_error = scale_rel_error(state.scale, truth->true_scale);
        const auto split = joint3d_errors(tracks, *truth->world_joints, obs);
        report.joint3d_occluded = split.occluded;
        report.joint3d_visible = split.visible;
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV / JSON emission: one row per run, fixed column order.

inline std::string csv_header() {
    return "label,frames,partial_frames,pje_u,pje_p,smoothness,contact_distance,"
           "stance_contact,scale_rel_error,joint3d_occluded,joint3d_visible";
}

namespace detail {

inline std::string cell(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

inline std::string cell(const std::optional<double>& v) { return v ? cell(*v) : std::string(); }

} // namespace detail

inline std::string csv_row(const std::string& label, const MetricsReport& r) {
    std::ostringstream out;
    out << label << ',' << r.frames << ',' << r.partial_frames << ',' << detail::cell(r.pje_u)
        << ',' << detail::cell(r.pje_p) << ',' << detail::cell(r.smoothness) << ','
        << detail::cell(r.contact_distance) << ',' << detail::cell(r.stance_contact) << ','
        << detail::cell(r.scale_rel_error) << ',' << detail::cell(r.joint3d_occluded) << ','
        << detail::cell(r.joint3d_visible);
    return out.str();
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j = {{"frames", r.frames},
                        {"partial_frames", r.partial_frames},
                        {"pje_u", r.pje_u},
                        {"smoothness", r.smoothness}};
    const auto put = [&j](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("pje_p", r.pje_p);
    put("contact_distance", r.contact_distance);
    put("stance_contact", r.stance_contact);
    put("scale_rel_error", r.scale_rel_error);
    put("joint3d_occluded", r.joint3d_occluded);
    put("joint3d_visible", r.joint3d_visible);
    return j;
}

} // namespace egofit::metrics

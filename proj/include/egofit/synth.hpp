#pragma once

#include "egofit/body.hpp"
#include "egofit/energy.hpp"
#include "egofit/geometry.hpp"
#include "egofit/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::synth {

struct InvalidConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct BundleIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Pixel rectangle a detection must fall into (plus positive depth).
struct Frustum {
    int width = 640;
    int height = 480;

    bool contains(const Vec2& px) const {
        return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
    }
};

enum class Motion { Walk, Jog, ArmSwing };

inline std::string motion_name(Motion m) {
    switch (m) {
        case Motion::Walk: return "walk";
        case Motion::Jog: return "jog";
        case Motion::ArmSwing: return "arm-swing";
    }
    throw std::logic_error("motion_name: bad enum");
}

inline Motion motion_from_name(const std::string& name) {
    if (name == "walk") return Motion::Walk;
    if (name == "jog") return Motion::Jog;
    if (name == "arm-swing") return Motion::ArmSwing;
    throw InvalidConfigError("unknown motion '" + name + "' (walk | jog | arm-swing)");
}

struct ScenarioConfig {
    int frames = 60;
    Motion motion = Motion::Walk;
    double pixel_noise = 2.0;        // keypoint Gaussian std, pixels
    double dropout = 0.02;           // per joint-frame probability of a missed detection
    double truncated_fraction = 0.2; // fraction of frames with the lower body out of view
    double scene_scale = 1.0;        // s* baked into the fitter's scene + camera copies
    std::uint64_t seed = 1;
    double camera_distance = 2.9;    // wearer stays this far ahead of the subject
    double camera_height = 1.55;
    double camera_jitter = 0.015;    // per-frame angular wobble of the true camera, radians
    double camera_rot_noise = 0.0;   // error of the fitter-visible poses, radians
    double camera_trans_noise = 0.0; // error of the fitter-visible translations, scene units
    CameraIntrinsics intrinsics{{500.0, 500.0}, {320.0, 240.0}};
    Frustum frustum;

    void validate() const {
        if (frames < 3) throw InvalidConfigError("scenario needs at least 3 frames");
        if (pixel_noise < 0.0) throw InvalidConfigError("pixel noise must be >= 0");
        if (dropout < 0.0 || dropout > 1.0) throw InvalidConfigError("dropout must be in [0, 1]");
        if (truncated_fraction < 0.0 || truncated_fraction > 1.0)
            throw InvalidConfigError("truncated fraction must be in [0, 1]");
        if (!(scene_scale > 0.0)) throw InvalidConfigError("scene scale must be > 0");
        if (!(camera_distance > 0.0)) throw InvalidConfigError("camera distance must be > 0");
        if (camera_jitter < 0.0 || camera_rot_noise < 0.0 || camera_trans_noise < 0.0)
            throw InvalidConfigError("camera noise parameters must be >= 0");
        if (frustum.width <= 0 || frustum.height <= 0)
            throw InvalidConfigError("frustum must be non-empty");
    }
};

// Everything the fitter receives, plus the ground truth it is judged against.
// The fitter-side scene vertices and camera translations carry the s* factor;
// body states are expressed in their frame's camera coordinates, where the
// monocular scale ambiguity leaves them untouched.
struct ScenarioBundle {
    ScenarioConfig config;

    scene::SceneMesh scene;                              // mis-scaled fitter copy
    std::vector<Pose3> cameras;                          // fitter-visible camera-to-world
    std::vector<energy::FrameObservations> observations;
    CameraIntrinsics intrinsics{{500.0, 500.0}, {320.0, 240.0}};

    std::vector<body::BodyState> truth_states;           // camera-frame ground truth
    std::vector<Pose3> truth_cameras;                    // scaled but noise-free
    double true_scale = 1.0;

    int frame_count() const { return static_cast<int>(observations.size()); }

    // Ground-truth joints in the fitter's (scaled) world for one frame.
    std::vector<Vec3> truth_world_joints(const body::SkeletonDef& skel, int t) const {
        const auto& s = truth_states[t];
        const auto pos = body::joint_positions(skel, s.shape, s.pose, s.root);
        std::vector<Vec3> world;
        world.reserve(pos.size());
        for (const auto& p : pos) world.push_back(truth_cameras[t].apply(true_scale * p));
        return world;
    }
};

// Synthetic keypoint detector: joints outside the frustum (or behind the
// camera, or dropped) get confidence 0; the rest get Gaussian pixel noise and
// a confidence drawn uniformly from [0.6, 1.0].
inline energy::FrameObservations detect(const std::vector<Vec3>& camera_joints,
                                        const CameraIntrinsics& intr, const Frustum& frustum,
                                        double pixel_std, double dropout, std::mt19937_64& rng) {
    if (pixel_std < 0.0) throw InvalidConfigError("pixel noise must be >= 0");
    std::normal_distribution<double> noise(0.0, pixel_std);
    std::uniform_real_distribution<double> conf(0.6, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    energy::FrameObservations out(camera_joints.size());
    for (size_t i = 0; i < camera_joints.size(); ++i) {
        const auto px = try_project(intr, camera_joints[i]);
        if (!px || !frustum.contains(*px)) continue; // confidence stays 0
        if (dropout > 0.0 && coin(rng) < dropout) continue;
        Vec2 p = *px;
        if (pixel_std > 0.0) p += Vec2(noise(rng), noise(rng));
        out[i].position = p;
        out[i].confidence = conf(rng);
    }
    return out;
}

// Joints forced out of view while the wearer frames only the upper body.
inline std::vector<int> lower_body_joints(const body::SkeletonDef& skel) {
    std::vector<int> ids;
    for (const char* name : {"left_hip", "right_hip", "left_knee", "right_knee",
                             "left_ankle", "right_ankle"}) {
        const int j = skel.find_joint(name);
        if (j >= 0) ids.push_back(j);
    }
    return ids;
}

// Two truncation windows centered at T/3 and 2T/3 covering the requested
// fraction of the sequence.
inline bool truncated_frame(int t, int frames, double fraction) {
    if (fraction <= 0.0) return false;
    const int len = static_cast<int>(std::ceil(fraction * frames / 2.0));
    const int c1 = frames / 3, c2 = 2 * frames / 3;
    const auto inside = [&](int center) {
        const int lo = center - len / 2;
        return t >= lo && t < lo + len;
    };
    return inside(c1) || inside(c2);
}

namespace detail {

// Per-frame joint angles and root track of the gait primitives; grounding is
// applied afterwards.
struct GaitFrame {
    body::PoseParams pose;
    Vec2 root_xy = Vec2::Zero();
};

inline void set_axis_y(body::PoseParams& pose, int joint, double angle) {
    pose.theta.segment<3>(3 * joint) = Vec3(0.0, angle, 0.0);
}

inline void set_axis_z(body::PoseParams& pose, int joint, double angle) {
    pose.theta.segment<3>(3 * joint) = Vec3(0.0, 0.0, angle);
}

// The rotation slot at a joint steers the bone *into* that joint, so thigh
// swing lives on the knee slot and knee flexion on the ankle slot (and the
// same one row up for the arms).
inline GaitFrame gait_frame(const body::SkeletonDef& skel, Motion motion, int t) {
    GaitFrame out;
    out.pose = body::PoseParams::rest(skel.joint_count());
    const int spine = skel.find_joint("spine");
    const int l_elbow = skel.find_joint("left_elbow"), r_elbow = skel.find_joint("right_elbow");
    const int l_wrist = skel.find_joint("left_wrist"), r_wrist = skel.find_joint("right_wrist");
    const int l_knee = skel.find_joint("left_knee"), r_knee = skel.find_joint("right_knee");
    const int l_ankle = skel.find_joint("left_ankle"), r_ankle = skel.find_joint("right_ankle");

    double speed = 0.0, omega = 0.0, thigh = 0.0, knee = 0.0, arm = 0.0, twist = 0.0;
    switch (motion) {
        case Motion::Walk: speed = 0.035; omega = 0.55; thigh = 0.35; knee = 0.55; arm = 0.30; twist = 0.06; break;
        case Motion::Jog: speed = 0.07; omega = 0.9; thigh = 0.55; knee = 0.95; arm = 0.50; twist = 0.08; break;
        case Motion::ArmSwing: speed = 0.0; omega = 0.45; thigh = 0.03; knee = 0.06; arm = 1.10; twist = 0.15; break;
    }
    const double ph = omega * t;

    // legs antiphase; knees flex most mid-swing (smooth, no clamping)
    set_axis_y(out.pose, l_knee, -thigh * std::sin(ph));
    set_axis_y(out.pose, r_knee, -thigh * std::sin(ph + std::numbers::pi));
    set_axis_y(out.pose, l_ankle, knee * 0.5 * (1.0 - std::cos(ph)));
    set_axis_y(out.pose, r_ankle, knee * 0.5 * (1.0 - std::cos(ph + std::numbers::pi)));

    // arms counter-swing with a slightly bent elbow
    const double arm_ph = motion == Motion::ArmSwing ? ph : ph + std::numbers::pi;
    set_axis_y(out.pose, l_elbow, -arm * std::sin(arm_ph));
    set_axis_y(out.pose, r_elbow, -arm * std::sin(arm_ph + std::numbers::pi));
    set_axis_y(out.pose, l_wrist, -0.25 - 0.15 * (1.0 + std::sin(arm_ph)));
    set_axis_y(out.pose, r_wrist, -0.25 - 0.15 * (1.0 + std::sin(arm_ph + std::numbers::pi)));

    set_axis_z(out.pose, spine, twist * std::sin(ph));
    out.root_xy = Vec2(speed * t, 0.0);
    return out;
}

// Rectangular patch of triangles appended to `mesh`, sampled at most `step`
// apart along both spanning vectors.
inline void append_patch(scene::SceneMesh& mesh, const Vec3& origin, const Vec3& span_a,
                         const Vec3& span_b, double step) {
    const int na = std::max(1, static_cast<int>(std::ceil(span_a.norm() / step)));
    const int nb = std::max(1, static_cast<int>(std::ceil(span_b.norm() / step)));
    const int base = static_cast<int>(mesh.vertices.size());
    for (int ia = 0; ia <= na; ++ia)
        for (int ib = 0; ib <= nb; ++ib)
            mesh.vertices.push_back(origin + span_a * (double(ia) / na) + span_b * (double(ib) / nb));
    const auto vid = [&](int ia, int ib) { return base + ia * (nb + 1) + ib; };
    for (int ia = 0; ia < na; ++ia)
        for (int ib = 0; ib < nb; ++ib) {
            mesh.faces.push_back({vid(ia, ib), vid(ia + 1, ib), vid(ia + 1, ib + 1)});
            mesh.faces.push_back({vid(ia, ib), vid(ia + 1, ib + 1), vid(ia, ib + 1)});
        }
}

inline void append_box(scene::SceneMesh& mesh, const Vec3& corner, const Vec3& size, double step) {
    const Vec3 dx(size.x(), 0, 0), dy(0, size.y(), 0), dz(0, 0, size.z());
    append_patch(mesh, corner + dz, dx, dy, step);                 // top
    append_patch(mesh, corner, dx, dz, step);                      // y- side
    append_patch(mesh, corner + dy, dx, dz, step);                 // y+ side
    append_patch(mesh, corner, dy, dz, step);                      // x- side
    append_patch(mesh, corner + dx, dy, dz, step);                 // x+ side
}

// Ground plane under the whole walk plus 1-3 boxes beside the path,
// vertex-sampled at 2 cm.
inline scene::SceneMesh make_scene(double walk_span, std::mt19937_64& rng) {
    constexpr double kStep = 0.02;
    scene::SceneMesh mesh;
    const double x0 = -1.5, x1 = walk_span + 1.5, y0 = -2.5, y1 = 2.5;
    append_patch(mesh, Vec3(x0, y0, 0), Vec3(x1 - x0, 0, 0), Vec3(0, y1 - y0, 0), kStep);

    std::uniform_int_distribution<int> count(1, 3);
    std::uniform_real_distribution<double> along(0.0, 1.0), height(0.5, 0.9);
    const int boxes = count(rng);
    for (int b = 0; b < boxes; ++b) {
        const double side = b % 2 == 0 ? 1.5 : -1.9;
        const double x = x0 + 0.5 + along(rng) * (x1 - x0 - 1.5);
        append_box(mesh, Vec3(x, side, 0.0), Vec3(0.4, 0.4, height(rng)), kStep);
    }
    mesh.validate();
    return mesh;
}

inline Pose3 jitter_pose(const Pose3& pose, double max_angle, std::mt19937_64& rng) {
    if (max_angle <= 0.0) return pose;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> mag(0.0, max_angle);
    Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
    if (axis.norm() < 1e-12) axis = Vec3(0, 0, 1);
    axis.normalize();
    const Mat3 r = rodrigues(axis * mag(rng));
    return Pose3(pose.rotation * Eigen::Quaterniond(r), pose.translation);
}

} // namespace detail

// Deterministic scenario synthesis: gait + grounding in a metric world, a
// smooth head-height camera orbiting ahead of the subject, a detector pass per
// frame, and an s*-scaled copy of the scene and camera track for the fitter.
inline ScenarioBundle generate(const ScenarioConfig& config) {
    config.validate();
    const auto skel = body::default_skeleton();
    std::mt19937_64 rng(config.seed);

    ScenarioBundle bundle;
    bundle.config = config;
    bundle.intrinsics = config.intrinsics;
    bundle.true_scale = config.scene_scale;

    double walk_span = 0.0;
    for (int t = 0; t < config.frames; ++t)
        walk_span = std::max(walk_span, detail::gait_frame(skel, config.motion, t).root_xy.x());
    scene::SceneMesh true_scene = detail::make_scene(walk_span, rng);
    bundle.scene = true_scene;
    for (auto& v : bundle.scene.vertices) v *= config.scene_scale;

    const auto truncated = lower_body_joints(skel);
    const body::ShapeParams shape = body::ShapeParams::zero(skel.shape_group_count);
    std::normal_distribution<double> trans_noise(0.0, 1.0);

    for (int t = 0; t < config.frames; ++t) {
        // true-world body: gait angles, root on the path, lowest contact point
        // grounded at z = 0
        const auto gait = detail::gait_frame(skel, config.motion, t);
        body::RootTransform root;
        root.translation = Vec3(gait.root_xy.x(), gait.root_xy.y(), 0.0);
        const auto probe = body::contact_points(skel, shape, gait.pose, root);
        double min_z = probe.front().z();
        for (const auto& p : probe) min_z = std::min(min_z, p.z());
        root.translation.z() = -min_z;

        // true camera: ahead of the subject, weaving, looking at the pelvis
        const Vec3 eye(gait.root_xy.x() + config.camera_distance * std::cos(0.25 * std::sin(0.07 * t)),
                       gait.root_xy.y() + config.camera_distance * std::sin(0.25 * std::sin(0.07 * t)),
                       config.camera_height + 0.04 * std::sin(0.11 * t));
        const Vec3 target(root.translation.x(), root.translation.y(), root.translation.z() + 0.1);
        const Pose3 t_wc = detail::jitter_pose(look_at(eye, target), config.camera_jitter, rng);

        // the same body expressed in camera coordinates; observations project
        // these joints so zero-noise residuals are exactly zero
        body::BodyState state;
        state.shape = shape;
        state.pose = gait.pose;
        state.root.orientation =
            wrap_axis_angle(axis_angle_of(t_wc.rotation.conjugate() * Eigen::Quaterniond(rodrigues(root.orientation))));
        state.root.translation = t_wc.inverse().apply(root.translation);
        bundle.truth_states.push_back(state);

        const auto cam_joints = body::joint_positions(skel, state.shape, state.pose, state.root);
        auto obs = detect(cam_joints, config.intrinsics, config.frustum, config.pixel_noise,
                          config.dropout, rng);
        if (truncated_frame(t, config.frames, config.truncated_fraction))
            for (const int j : truncated) obs[j] = energy::Observation2D{};
        bundle.observations.push_back(std::move(obs));

        const Pose3 scaled(t_wc.rotation, config.scene_scale * t_wc.translation);
        bundle.truth_cameras.push_back(scaled);
        Pose3 fitter_cam =
            detail::jitter_pose(scaled, config.camera_rot_noise, rng);
        if (config.camera_trans_noise > 0.0)
            fitter_cam.translation += config.camera_trans_noise *
                Vec3(trans_noise(rng), trans_noise(rng), trans_noise(rng));
        bundle.cameras.push_back(fitter_cam);
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Bundle directory layout: scene.obj, camera.jsonl, observations.jsonl,
// truth.jsonl, config.json. One JSON object per line per frame.

namespace detail {

inline nlohmann::json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
    Eigen::VectorXd v(a.size());
    for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
    return v;
}

inline nlohmann::json pose_json(const Pose3& p) {
    return {{"q", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
            {"t", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline Pose3 pose_from_json(const nlohmann::json& j) {
    const auto& q = j.at("q");
    const auto& t = j.at("t");
    // assign members directly: the saved coefficients are already normalized,
    // and re-normalizing would cost a bit-exact round trip
    Pose3 pose;
    pose.rotation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                       q.at(2).get<double>(), q.at(3).get<double>());
    pose.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    return pose;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw BundleIoError("cannot write " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw BundleIoError("cannot read " + path.string());
    return in;
}

} // namespace detail

inline nlohmann::json config_json(const ScenarioConfig& c) {
    return {{"frames", c.frames},
            {"motion", motion_name(c.motion)},
            {"pixel_noise", c.pixel_noise},
            {"dropout", c.dropout},
            {"truncated_fraction", c.truncated_fraction},
            {"scene_scale", c.scene_scale},
            {"seed", c.seed},
            {"camera_distance", c.camera_distance},
            {"camera_height", c.camera_height},
            {"camera_jitter", c.camera_jitter},
            {"camera_rot_noise", c.camera_rot_noise},
            {"camera_trans_noise", c.camera_trans_noise},
            {"focal", {c.intrinsics.focal.x(), c.intrinsics.focal.y()}},
            {"principal_point", {c.intrinsics.principal_point.x(), c.intrinsics.principal_point.y()}},
            {"image", {c.frustum.width, c.frustum.height}},
            {"skeleton", "egofit-skel-1"}};
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    c.frames = j.at("frames").get<int>();
    c.motion = motion_from_name(j.at("motion").get<std::string>());
    c.pixel_noise = j.at("pixel_noise").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.truncated_fraction = j.at("truncated_fraction").get<double>();
    c.scene_scale = j.at("scene_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.camera_distance = j.at("camera_distance").get<double>();
    c.camera_height = j.at("camera_height").get<double>();
    c.camera_jitter = j.at("camera_jitter").get<double>();
    c.camera_rot_noise = j.at("camera_rot_noise").get<double>();
    c.camera_trans_noise = j.at("camera_trans_noise").get<double>();
    c.intrinsics.focal = Vec2(j.at("focal").at(0).get<double>(), j.at("focal").at(1).get<double>());
    c.intrinsics.principal_point = Vec2(j.at("principal_point").at(0).get<double>(),
                                        j.at("principal_point").at(1).get<double>());
    c.frustum.width = j.at("image").at(0).get<int>();
    c.frustum.height = j.at("image").at(1).get<int>();
    return c;
}

inline void save_bundle(const ScenarioBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    scene::save_obj((dir / "scene.obj").string(), bundle.scene);

    auto cams = detail::open_out(dir / "camera.jsonl");
    for (const auto& c : bundle.cameras) cams << detail::pose_json(c).dump() << '\n';

    auto obs = detail::open_out(dir / "observations.jsonl");
    for (const auto& frame : bundle.observations) {
        nlohmann::json joints = nlohmann::json::array();
        for (const auto& o : frame)
            joints.push_back({o.position.x(), o.position.y(), o.confidence});
        obs << nlohmann::json{{"joints", joints}}.dump() << '\n';
    }

    auto truth = detail::open_out(dir / "truth.jsonl");
    for (int t = 0; t < bundle.frame_count(); ++t) {
        const auto& s = bundle.truth_states[t];
        nlohmann::json row = {{"beta", detail::vec_json(s.shape.beta)},
                              {"theta", detail::vec_json(s.pose.theta)},
                              {"root_orientation", detail::vec_json(s.root.orientation)},
                              {"root_translation", detail::vec_json(s.root.translation)},
                              {"camera", detail::pose_json(bundle.truth_cameras[t])}};
        truth << row.dump() << '\n';
    }

    auto cfg = detail::open_out(dir / "config.json");
    nlohmann::json j = config_json(bundle.config);
    j["true_scale"] = bundle.true_scale;
    cfg << j.dump(2) << '\n';
}

inline ScenarioBundle load_bundle(const std::filesystem::path& dir) {
    ScenarioBundle bundle;
    {
        auto in = detail::open_in(dir / "config.json");
        nlohmann::json j = nlohmann::json::parse(in);
        bundle.config = config_from_json(j);
        bundle.true_scale = j.at("true_scale").get<double>();
        bundle.intrinsics = bundle.config.intrinsics;
    }
    bundle.scene = scene::load_obj((dir / "scene.obj").string());

    std::string line;
    {
        auto in = detail::open_in(dir / "camera.jsonl");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            bundle.cameras.push_back(detail::pose_from_json(nlohmann::json::parse(line)));
        }
    }
    {
        auto in = detail::open_in(dir / "observations.jsonl");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            const auto& joints = j.at("joints");
            energy::FrameObservations frame(joints.size());
            for (size_t i = 0; i < joints.size(); ++i) {
                frame[i].position = Vec2(joints[i].at(0).get<double>(), joints[i].at(1).get<double>());
                frame[i].confidence = joints[i].at(2).get<double>();
            }
            bundle.observations.push_back(std::move(frame));
        }
    }
    {
        auto in = detail::open_in(dir / "truth.jsonl");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            body::BodyState s;
            s.shape.beta = detail::vec_from_json(j.at("beta"));
            s.pose.theta = detail::vec_from_json(j.at("theta"));
            const Eigen::VectorXd ori = detail::vec_from_json(j.at("root_orientation"));
            const Eigen::VectorXd tra = detail::vec_from_json(j.at("root_translation"));
            if (ori.size() != 3 || tra.size() != 3)
                throw BundleIoError("truth.jsonl: root fields must have 3 components");
            s.root.orientation = ori;
            s.root.translation = tra;
            bundle.truth_states.push_back(std::move(s));
            bundle.truth_cameras.push_back(detail::pose_from_json(j.at("camera")));
        }
    }
    const size_t frames = bundle.observations.size();
    if (bundle.cameras.size() != frames || bundle.truth_states.size() != frames ||
        bundle.truth_cameras.size() != frames)
        throw BundleIoError("bundle frame counts disagree across files");
    return bundle;
}

} // namespace egofit::synth

#include "egofit/energy.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>

using namespace egofit;
using namespace egofit::energy;

namespace {

double urand(std::mt19937& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 vrand(std::mt19937& rng, double s) {
    return Vec3(urand(rng, -s, s), urand(rng, -s, s), urand(rng, -s, s));
}

// A body-in-front-of-camera sequence with a bumpy ground mesh; observations
// are projections of the state itself plus pixel noise.
struct Sequence {
    body::SkeletonDef skel = body::default_skeleton();
    CameraIntrinsics intr{{500.0, 500.0}, {320.0, 240.0}};
    scene::SceneMesh mesh;
    std::shared_ptr<scene::SpatialIndex> index;
    std::vector<FrameObservations> obs;
    SequenceState state;
};

Sequence make_sequence(int frames, bool shared_beta, unsigned seed) {
    Sequence q;
    std::mt19937 rng(seed);
    for (int ix = -6; ix <= 6; ++ix)
        for (int iy = -6; iy <= 6; ++iy)
            q.mesh.vertices.push_back(Vec3(0.4 * ix, 0.4 * iy, 0.05 * urand(rng, -1, 1)));
    q.index = std::make_shared<scene::SpatialIndex>(q.mesh);

    const int joints = q.skel.joint_count();
    q.state = SequenceState::make(q.skel, frames, shared_beta);
    for (auto& b : q.state.betas) b.beta = Eigen::VectorXd::NullaryExpr(
        q.skel.shape_group_count, [&](Eigen::Index) { return urand(rng, -0.15, 0.15); });
    for (int t = 0; t < frames; ++t) {
        q.state.poses[t].theta = Eigen::VectorXd::NullaryExpr(
            3 * joints, [&](Eigen::Index) { return urand(rng, -0.25, 0.25); });
        q.state.roots[t].orientation = Vec3(M_PI / 2, 0, 0) + vrand(rng, 0.2);
        q.state.roots[t].translation = Vec3(0.3, 0.5, 3.0) + vrand(rng, 0.3) + Vec3(0.1 * t, 0, 0);
        q.state.cam_base[t] = Pose3::from_axis_angle(Vec3(-M_PI / 2, 0, 0) + vrand(rng, 0.15),
                                                     Vec3(0.2 * t, -3.0, 1.4) + vrand(rng, 0.1));
        q.state.cam_rot_delta[t] = vrand(rng, 0.08);
        q.state.cam_trans_delta[t] = vrand(rng, 0.05);
    }
    q.state.scale = 1.3;

    q.obs.resize(frames);
    for (int t = 0; t < frames; ++t) {
        const auto pos = body::joint_positions(q.skel, q.state.beta(t), q.state.poses[t], q.state.roots[t]);
        q.obs[t].resize(joints);
        for (int i = 0; i < joints; ++i) {
            q.obs[t][i].position = project(q.intr, pos[i]) + Vec2(urand(rng, -40, 40), urand(rng, -40, 40));
            q.obs[t][i].confidence = (i % 7 == 3) ? 0.0 : (i % 5 == 2 ? 1.0 : urand(rng, 0.3, 0.95));
        }
    }
    return q;
}

EnergyModel make_model(const Sequence& q, const Weights& w, ScalePlacement placement, int threads = 1) {
    EnergyModel::Inputs in;
    in.skeleton = &q.skel;
    in.intrinsics = q.intr;
    in.observations = q.obs;
    in.scene_index = q.index.get();
    in.weights = w;
    in.scale_placement = placement;
    in.threads = threads;
    return EnergyModel(in);
}

void check_gradient(EnergyModel& model, const SequenceState& state, const ParamLayout& layout,
                    double tol = 1e-4) {
    model.refresh_correspondences(state);
    const Eigen::VectorXd x0 = pack_state(state, layout);
    const Eigen::VectorXd g = model.gradient(state, layout);
    auto total_at = [&](const Eigen::VectorXd& x) {
        SequenceState s = state;
        unpack_state(x, layout, s);
        return model.evaluate(s).total;
    };
    const double h = 1e-6;
    for (int i = 0; i < x0.size(); ++i) {
        Eigen::VectorXd p = x0, m = x0;
        p[i] += h;
        m[i] -= h;
        const double fd = (total_at(p) - total_at(m)) / (2 * h);
        const double denom = std::max({std::abs(g[i]), std::abs(fd), 1e-8});
        INFO("component " << i << ": analytic " << g[i] << " fd " << fd);
        REQUIRE(std::abs(g[i] - fd) / denom < tol);
    }
}

} // namespace

TEST_CASE("robust kernel follows the saturating law") {
    const RobustKernel k(100.0);
    REQUIRE(k(0.0) == 0.0);
    REQUIRE(k(1.0) == Catch::Approx(1.0 / 10001.0).epsilon(1e-14));
    REQUIRE(k(100.0) == Catch::Approx(0.5).epsilon(1e-14)); // e == sigma is the half-way point
    REQUIRE(k(1e9) < 1.0);
    REQUIRE(k(1e9) > 0.999999);
    double prev = -1.0;
    for (double e = 0.0; e < 500.0; e += 7.3) {
        REQUIRE(k(e) > prev);
        prev = k(e);
    }
    REQUIRE_THROWS_AS(RobustKernel(0.0), std::invalid_argument);
}

TEST_CASE("robust kernel vector gradient matches finite differences") {
    const RobustKernel k(0.35);
    std::mt19937 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 r = vrand(rng, 1.2);
        const Vec3 g = k.vector_gradient_scale(r.squaredNorm()) * r;
        const double h = 1e-7;
        for (int a = 0; a < 3; ++a) {
            Vec3 p = r, m = r;
            p[a] += h;
            m[a] -= h;
            const double fd = (k(p.norm()) - k(m.norm())) / (2 * h);
            REQUIRE(g[a] == Catch::Approx(fd).margin(1e-6));
        }
    }
}

TEST_CASE("robust kernel gradient is smooth through zero residual") {
    const RobustKernel k(0.2);
    REQUIRE(k.vector_gradient_scale(0.0) == Catch::Approx(2.0 / (0.2 * 0.2)));
    const Vec3 g = k.vector_gradient_scale(0.0) * Vec3::Zero();
    REQUIRE(g.norm() == 0.0);
}

TEST_CASE("joint term matches a hand-computed value") {
    body::SkeletonDef skel;
    skel.version = "single";
    skel.shape_group_count = 1;
    skel.joints.push_back({"root", -1, Vec3::Zero(), -1, false, false});
    skel.contact_candidates = {{0, Vec3(0, 0, -0.1)}};
    skel.validate();

    const CameraIntrinsics intr{{500.0, 500.0}, {320.0, 240.0}};
    body::RootTransform root;
    root.translation = Vec3(0, 0, 2);
    const auto shape = body::ShapeParams::zero(1);
    const auto pose = body::PoseParams::rest(1);

    FrameObservations obs(1);
    obs[0].position = project(intr, root.translation) + Vec2(30, 40); // |r| = 50
    obs[0].confidence = 0.7;
    const RobustKernel kernel(100.0);
    Weights w;

    const double expected = 0.7 * (2500.0 / 12500.0); // w * rho(50)
    REQUIRE(e_joint(skel, shape, pose, root, intr, obs, kernel, w) ==
            Catch::Approx(expected).epsilon(1e-14));

    SECTION("annealing weight scales the term") {
        w.joint_anneal = Eigen::VectorXd::Constant(1, 0.5);
        REQUIRE(e_joint(skel, shape, pose, root, intr, obs, kernel, w) ==
                Catch::Approx(0.5 * expected).epsilon(1e-14));
        w.joint_anneal[0] = 0.0;
        REQUIRE(e_joint(skel, shape, pose, root, intr, obs, kernel, w) == 0.0);
    }

    SECTION("zero confidence masks the joint even with a garbage position") {
        obs[0].confidence = 0.0;
        obs[0].position = Vec2(1e300, -1e300);
        REQUIRE(e_joint(skel, shape, pose, root, intr, obs, kernel, w) == 0.0);
    }

    SECTION("points behind the camera are masked") {
        root.translation = Vec3(0, 0, -2);
        REQUIRE(e_joint(skel, shape, pose, root, intr, obs, kernel, w) == 0.0);
    }
}

TEST_CASE("prior terms match closed forms") {
    Eigen::VectorXd beta(2);
    beta << 0.3, -0.4;
    REQUIRE(e_shape_prior(body::ShapeParams(beta)) == Catch::Approx(0.25).epsilon(1e-14));

    body::PoseParams pose = body::PoseParams::rest(2);
    pose.theta << 0.1, 0, 0, 0, -0.2, 0;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(6);
    w[4] = 4.0;
    const Eigen::VectorXd rest = Eigen::VectorXd::Zero(6);
    REQUIRE(e_pose_prior(pose, rest, w) == Catch::Approx(0.01 + 4.0 * 0.04).epsilon(1e-14));
}

TEST_CASE("pose prior weights emphasize the twist axis of hinge joints") {
    const auto skel = body::default_skeleton();
    const auto w = pose_prior_weights(skel);
    REQUIRE(w.size() == 3 * skel.joint_count());
    const int knee = skel.find_joint("left_knee");
    // knee bone points down z, so z is the twist axis
    REQUIRE(w[3 * knee + 0] == 1.0);
    REQUIRE(w[3 * knee + 1] == 1.0);
    REQUIRE(w[3 * knee + 2] == 4.0);
    const int elbow = skel.find_joint("right_elbow");
    REQUIRE(w[3 * elbow + 2] == 4.0);
    const int ankle = skel.find_joint("left_ankle");
    REQUIRE(w[3 * ankle + 2] == 1.0);
    REQUIRE(w.sum() == Catch::Approx(3 * skel.joint_count() + 4 * 3.0));
}

TEST_CASE("temporal term matches a hand-computed stencil") {
    const RobustKernel k(0.1);
    std::vector<std::vector<Vec3>> pts = {{Vec3(0, 0, 0)}, {Vec3(0.1, 0, 0)}, {Vec3(0.3, 0, 0)}};
    std::vector<std::vector<double>> conf = {{0.4}, {0.9}, {0.6}};
    // accel = 0.3 - 0.2 + 0.0 ... = |(0.3 - 2*0.1 + 0)| = 0.1, rho = 0.5, gate = 1 - 0.4
    REQUIRE(e_temporal(pts, conf, k) == Catch::Approx(0.6 * 0.5).epsilon(1e-12));

    SECTION("fully confident joints drop out") {
        conf = {{1.0}, {1.0}, {1.0}};
        REQUIRE(e_temporal(pts, conf, k) == 0.0);
    }
    SECTION("too-short sequences are rejected") {
        pts.pop_back();
        conf.pop_back();
        REQUIRE_THROWS_AS(e_temporal(pts, conf, k), SequenceTooShortError);
    }
}

TEST_CASE("temporal term vanishes on affine-in-time trajectories") {
    const RobustKernel k(0.1);
    std::mt19937 rng(43);
    std::uniform_int_distribution<int> quarter(-8, 8); // dyadic coords keep the sums exact
    const int frames = 6, joints = 4;
    std::vector<std::vector<Vec3>> pts(frames, std::vector<Vec3>(joints));
    std::vector<std::vector<double>> conf(frames, std::vector<double>(joints, 0.0));
    std::vector<Vec3> start(joints), velocity(joints);
    for (int i = 0; i < joints; ++i) {
        start[i] = 0.25 * Vec3(quarter(rng), quarter(rng), quarter(rng));
        velocity[i] = 0.25 * Vec3(quarter(rng), quarter(rng), quarter(rng));
    }
    for (int t = 0; t < frames; ++t)
        for (int i = 0; i < joints; ++i) pts[t][i] = start[i] + t * velocity[i];
    REQUIRE(e_temporal(pts, conf, k) == 0.0);
}

TEST_CASE("scale placements map as documented") {
    const Pose3 t_wc = Pose3::from_axis_angle(Vec3(0.3, -0.2, 0.5), Vec3(1, 2, 3));
    const Vec3 p(0.4, -0.1, 2.0), root(0.1, 0.2, 2.2);
    const double s = 1.7;
    REQUIRE((to_world(t_wc, s, p, ScalePlacement::CameraFrame, root) - t_wc.apply(s * p)).norm() < 1e-15);
    REQUIRE((to_world(t_wc, s, p, ScalePlacement::BodyFrame, root) -
             t_wc.apply(s * p + (1.0 - s) * root)).norm() < 1e-15);
    // body placement leaves the root point itself unscaled
    REQUIRE((to_world(t_wc, s, root, ScalePlacement::BodyFrame, root) - t_wc.apply(root)).norm() < 1e-15);
}

TEST_CASE("contact term matches hand-computed nearest distances") {
    body::SkeletonDef skel;
    skel.version = "single";
    skel.shape_group_count = 1;
    skel.joints.push_back({"root", -1, Vec3::Zero(), -1, false, false});
    skel.contact_candidates = {{0, Vec3::Zero()}};
    skel.validate();

    scene::SceneMesh mesh;
    mesh.vertices = {Vec3(0, 0, 0), Vec3(10, 0, 0)};
    const scene::SpatialIndex index(mesh);

    std::vector<body::BodyState> states(1);
    states[0].shape = body::ShapeParams::zero(1);
    states[0].pose = body::PoseParams::rest(1);
    states[0].root.translation = Vec3(0, 0, 0.5);
    std::vector<Pose3> cams = {Pose3::identity()};
    const RobustKernel k(0.2);

    // world point = scale * (0,0,0.5); nearest vertex is the origin
    const double s = 1.4;
    const double d = s * 0.5;
    const double expected = d * d / (0.04 + d * d);
    REQUIRE(e_contact(skel, states, cams, index, s, k, ScalePlacement::CameraFrame) ==
            Catch::Approx(expected).epsilon(1e-12));

    SECTION("non-positive scale is rejected") {
        REQUIRE_THROWS_AS(e_contact(skel, states, cams, index, 0.0, k, ScalePlacement::CameraFrame),
                          NonPositiveScaleError);
        REQUIRE_THROWS_AS(e_contact(skel, states, cams, index, -1.0, k, ScalePlacement::CameraFrame),
                          NonPositiveScaleError);
    }

    SECTION("frozen correspondences keep pulling toward the old vertex") {
        const auto corr = contact_correspondences(skel, states, cams, index, s, ScalePlacement::CameraFrame);
        REQUIRE(corr[0][0] == 0);
        states[0].root.translation = Vec3(9.9, 0, 0); // now closest to vertex 1
        const double frozen = e_contact_fixed(skel, states, cams, index, corr, 1.0, k,
                                              ScalePlacement::CameraFrame);
        const double fresh = e_contact(skel, states, cams, index, 1.0, k, ScalePlacement::CameraFrame);
        const double d_frozen = 9.9, d_fresh = 0.1;
        REQUIRE(frozen == Catch::Approx(d_frozen * d_frozen / (0.04 + d_frozen * d_frozen)).epsilon(1e-12));
        REQUIRE(fresh == Catch::Approx(d_fresh * d_fresh / (0.04 + d_fresh * d_fresh)).epsilon(1e-12));
    }
}

TEST_CASE("parameter layout packs and unpacks free blocks only") {
    const auto skel = body::default_skeleton();
    const int frames = 3, joints = skel.joint_count(), groups = skel.shape_group_count;
    auto state = SequenceState::make(skel, frames, true);
    std::mt19937 rng(59);
    state.betas[0].beta = Eigen::VectorXd::Random(groups);
    for (int t = 0; t < frames; ++t) {
        state.poses[t].theta = Eigen::VectorXd::Random(3 * joints);
        state.roots[t].orientation = vrand(rng, 1.0);
        state.roots[t].translation = vrand(rng, 2.0);
        state.cam_rot_delta[t] = vrand(rng, 0.1);
        state.cam_trans_delta[t] = vrand(rng, 0.1);
    }
    state.scale = 1.23;

    SECTION("full round trip") {
        FreeSet free;
        free.cam_pose = true;
        free.scale = true;
        const auto layout = ParamLayout::create(free, true, frames, joints, groups);
        REQUIRE(layout.total == groups + frames * (3 * joints + 6 + 6) + 1);
        const auto x = pack_state(state, layout);
        auto copy = SequenceState::make(skel, frames, true);
        unpack_state(x, layout, copy);
        REQUIRE((pack_state(copy, layout) - x).norm() == 0.0);
        REQUIRE(copy.scale == state.scale);
        REQUIRE((copy.poses[2].theta - state.poses[2].theta).norm() == 0.0);
    }

    SECTION("frozen blocks stay untouched") {
        FreeSet free;
        free.beta = false;
        free.root = false;
        const auto layout = ParamLayout::create(free, true, frames, joints, groups);
        REQUIRE(layout.total == frames * 3 * joints);
        auto x = pack_state(state, layout);
        x.array() += 0.5;
        SequenceState target = state;
        unpack_state(x, layout, target);
        REQUIRE((target.betas[0].beta - state.betas[0].beta).norm() == 0.0);
        REQUIRE((target.roots[1].translation - state.roots[1].translation).norm() == 0.0);
        REQUIRE(target.scale == state.scale);
        REQUIRE((target.poses[0].theta.array() - state.poses[0].theta.array() - 0.5).abs().maxCoeff() <
                1e-15);
    }

    SECTION("scale-only layout is a single entry") {
        FreeSet free;
        free.beta = free.theta = free.root = false;
        free.scale = true;
        const auto layout = ParamLayout::create(free, true, frames, joints, groups);
        REQUIRE(layout.total == 1);
        REQUIRE(pack_state(state, layout)[0] == 1.23);
    }

    SECTION("per-frame beta layout") {
        auto pf = SequenceState::make(skel, frames, false);
        for (auto& b : pf.betas) b.beta = Eigen::VectorXd::Random(groups);
        FreeSet free;
        const auto layout = ParamLayout::create(free, false, frames, joints, groups);
        REQUIRE(layout.total == frames * (groups + 3 * joints + 6));
        const auto x = pack_state(pf, layout);
        auto copy = SequenceState::make(skel, frames, false);
        unpack_state(x, layout, copy);
        for (int t = 0; t < frames; ++t)
            REQUIRE((copy.betas[t].beta - pf.betas[t].beta).norm() == 0.0);
    }

    SECTION("mismatched sharing is rejected") {
        FreeSet free;
        const auto layout = ParamLayout::create(free, false, frames, joints, groups);
        REQUIRE_THROWS_AS(pack_state(state, layout), std::invalid_argument);
    }

    SECTION("an all-frozen layout is rejected") {
        FreeSet free;
        free.beta = free.theta = free.root = false;
        REQUIRE_THROWS_AS(ParamLayout::create(free, true, frames, joints, groups),
                          std::invalid_argument);
    }
}

TEST_CASE("camera rebase preserves the effective pose") {
    const auto skel = body::default_skeleton();
    auto state = SequenceState::make(skel, 2, true);
    std::mt19937 rng(61);
    for (int t = 0; t < 2; ++t) {
        state.cam_base[t] = Pose3::from_axis_angle(vrand(rng, 1.0), vrand(rng, 2.0));
        state.cam_rot_delta[t] = vrand(rng, 0.3);
        state.cam_trans_delta[t] = vrand(rng, 0.4);
    }
    const auto before0 = state.camera_pose(0).matrix();
    const auto before1 = state.camera_pose(1).matrix();
    state.rebase_cameras();
    REQUIRE((state.camera_pose(0).matrix() - before0).norm() < 1e-14);
    REQUIRE((state.camera_pose(1).matrix() - before1).norm() < 1e-14);
    REQUIRE(state.cam_rot_delta[0].norm() == 0.0);
    REQUIRE(state.cam_trans_delta[1].norm() == 0.0);
}

TEST_CASE("fused total equals the weighted sum of the individual terms") {
    const auto q = make_sequence(4, true, 71);
    Weights w;
    Kernels kernels;
    for (const auto placement : {ScalePlacement::CameraFrame, ScalePlacement::BodyFrame}) {
        auto model = make_model(q, w, placement);
        model.refresh_correspondences(q.state);
        const auto bd = model.evaluate(q.state);

        double ej = 0.0, eb = 0.0, ep = 0.0;
        const auto prior_w = pose_prior_weights(q.skel);
        const Eigen::VectorXd rest = Eigen::VectorXd::Zero(3 * q.skel.joint_count());
        for (int t = 0; t < 4; ++t) {
            ej += e_joint(q.skel, q.state.beta(t), q.state.poses[t], q.state.roots[t], q.intr,
                          q.obs[t], kernels.joint, w);
            eb += e_shape_prior(q.state.beta(t));
            ep += e_pose_prior(q.state.poses[t], rest, prior_w);
        }
        const double ec = e_contact_fixed(q.skel, q.state.body_states(), q.state.camera_poses(),
                                          *q.index, model.correspondences(), q.state.scale,
                                          kernels.contact, placement);
        std::vector<std::vector<Vec3>> world(4);
        std::vector<std::vector<double>> conf(4);
        for (int t = 0; t < 4; ++t) {
            const auto pos = body::joint_positions(q.skel, q.state.beta(t), q.state.poses[t], q.state.roots[t]);
            for (int i = 0; i < q.skel.joint_count(); ++i) {
                world[t].push_back(to_world(q.state.camera_pose(t), q.state.scale, pos[i], placement,
                                            q.state.roots[t].translation));
                conf[t].push_back(q.obs[t][i].confidence);
            }
        }
        const double et = e_temporal(world, conf, kernels.temporal);

        REQUIRE(bd.joint == Catch::Approx(ej).epsilon(1e-12));
        REQUIRE(bd.shape_prior == Catch::Approx(eb).epsilon(1e-12));
        REQUIRE(bd.pose_prior == Catch::Approx(ep).epsilon(1e-12));
        REQUIRE(bd.contact == Catch::Approx(ec).epsilon(1e-12));
        REQUIRE(bd.temporal == Catch::Approx(et).epsilon(1e-12));
        const double total = ej + w.lambda_beta * eb + w.lambda_theta * ep +
                             w.lambda_contact * ec + w.lambda_temporal * et;
        REQUIRE(bd.total == Catch::Approx(total).epsilon(1e-12));
    }
}

TEST_CASE("e_total helper refreshes correspondences itself") {
    const auto q = make_sequence(3, true, 73);
    Weights w;
    Kernels kernels;
    const auto bd = e_total(q.skel, q.state, q.intr, q.obs, q.index.get(), w, kernels);
    auto model = make_model(q, w, ScalePlacement::CameraFrame);
    model.refresh_correspondences(q.state);
    REQUIRE(bd.total == model.evaluate(q.state).total);
}

TEST_CASE("gradient matches finite differences with every term active") {
    const auto q = make_sequence(4, true, 83);
    Weights w;
    FreeSet free;
    free.cam_pose = true;
    free.scale = true;
    const auto layout =
        ParamLayout::create(free, true, 4, q.skel.joint_count(), q.skel.shape_group_count);
    for (const auto placement : {ScalePlacement::CameraFrame, ScalePlacement::BodyFrame}) {
        auto model = make_model(q, w, placement);
        check_gradient(model, q.state, layout);
    }
}

TEST_CASE("gradient matches finite differences with per-frame shape") {
    const auto q = make_sequence(3, false, 89);
    Weights w;
    FreeSet free;
    free.cam_pose = true;
    free.scale = true;
    const auto layout =
        ParamLayout::create(free, false, 3, q.skel.joint_count(), q.skel.shape_group_count);
    auto model = make_model(q, w, ScalePlacement::CameraFrame);
    check_gradient(model, q.state, layout);
}

TEST_CASE("gradient matches finite differences for the joint term alone") {
    auto q = make_sequence(3, true, 97);
    Weights w;
    w.lambda_beta = w.lambda_theta = w.lambda_contact = w.lambda_temporal = 0.0;
    w.joint_anneal = Eigen::VectorXd::Ones(q.skel.joint_count());
    for (int i = 0; i < q.skel.joint_count(); i += 4) w.joint_anneal[i] = (i % 8 == 0) ? 0.0 : 0.5;
    FreeSet free;
    const auto layout =
        ParamLayout::create(free, true, 3, q.skel.joint_count(), q.skel.shape_group_count);
    auto model = make_model(q, w, ScalePlacement::CameraFrame);
    check_gradient(model, q.state, layout);
}

TEST_CASE("gradient matches finite differences for the contact term alone") {
    auto q = make_sequence(3, true, 101);
    for (auto& frame : q.obs)
        for (auto& o : frame) o.confidence = 0.0; // silence the joint term
    Weights w;
    w.lambda_beta = w.lambda_theta = w.lambda_temporal = 0.0;
    w.lambda_contact = 0.1;
    FreeSet free;
    free.cam_pose = true;
    free.scale = true;
    const auto layout =
        ParamLayout::create(free, true, 3, q.skel.joint_count(), q.skel.shape_group_count);
    for (const auto placement : {ScalePlacement::CameraFrame, ScalePlacement::BodyFrame}) {
        auto model = make_model(q, w, placement);
        check_gradient(model, q.state, layout);
    }
}

TEST_CASE("gradient matches finite differences for the temporal term alone") {
    auto q = make_sequence(4, true, 103);
    Weights w;
    w.lambda_beta = w.lambda_theta = w.lambda_contact = 0.0;
    w.lambda_temporal = 0.1;
    for (auto& frame : q.obs)
        for (auto& o : frame) o.confidence = std::min(o.confidence, 0.9);
    FreeSet free;
    free.cam_pose = true;
    free.scale = true;
    const auto layout =
        ParamLayout::create(free, true, 4, q.skel.joint_count(), q.skel.shape_group_count);
    for (const auto placement : {ScalePlacement::CameraFrame, ScalePlacement::BodyFrame}) {
        auto model = make_model(q, w, placement);
        check_gradient(model, q.state, layout);
    }
}

TEST_CASE("evaluation and gradient are identical across thread counts") {
    const auto q = make_sequence(5, true, 107);
    Weights w;
    FreeSet free;
    free.cam_pose = true;
    free.scale = true;
    const auto layout =
        ParamLayout::create(free, true, 5, q.skel.joint_count(), q.skel.shape_group_count);
    auto reference = make_model(q, w, ScalePlacement::CameraFrame, 1);
    reference.refresh_correspondences(q.state);
    const double e1 = reference.evaluate(q.state).total;
    const Eigen::VectorXd g1 = reference.gradient(q.state, layout);
    for (const int threads : {2, 3, 8}) {
        auto model = make_model(q, w, ScalePlacement::CameraFrame, threads);
        model.refresh_correspondences(q.state);
        REQUIRE(model.evaluate(q.state).total == e1); // bit-identical
        const Eigen::VectorXd g = model.gradient(q.state, layout);
        REQUIRE((g - g1).norm() == 0.0);
    }
}

TEST_CASE("model rejects inconsistent inputs") {
    const auto q = make_sequence(3, true, 109);
    Weights w;

    SECTION("contact weight without a scene index") {
        EnergyModel::Inputs in;
        in.skeleton = &q.skel;
        in.intrinsics = q.intr;
        in.observations = q.obs;
        in.scene_index = nullptr;
        in.weights = w;
        REQUIRE_THROWS_AS(EnergyModel(in), std::invalid_argument);
    }

    SECTION("contact evaluation without refreshed correspondences") {
        auto model = make_model(q, w, ScalePlacement::CameraFrame);
        REQUIRE_THROWS_AS(model.evaluate(q.state), std::logic_error);
    }

    SECTION("frame count mismatch") {
        auto model = make_model(q, w, ScalePlacement::CameraFrame);
        auto state = SequenceState::make(q.skel, 2, true);
        REQUIRE_THROWS_AS(model.evaluate(state), std::invalid_argument);
    }

    SECTION("non-positive scale with world terms active") {
        auto model = make_model(q, w, ScalePlacement::CameraFrame);
        auto state = q.state;
        state.scale = 0.0;
        REQUIRE_THROWS_AS(model.refresh_correspondences(state), NonPositiveScaleError);
        model.refresh_correspondences(q.state);
        REQUIRE_THROWS_AS(model.evaluate(state), NonPositiveScaleError);
    }

    SECTION("non-finite observations are reported with term and frame") {
        auto bad = q;
        bad.obs[1][2].position = Vec2(std::nan(""), 10.0);
        bad.obs[1][2].confidence = 0.8;
        auto model = make_model(bad, w, ScalePlacement::CameraFrame);
        model.refresh_correspondences(bad.state);
        try {
            model.evaluate(bad.state);
            FAIL("expected NonFiniteEnergyError");
        } catch (const NonFiniteEnergyError& e) {
            REQUIRE(e.term == "joint");
            REQUIRE(e.frame == 1);
        }
    }
}

TEST_CASE("too-short sequences are rejected when the temporal term is active") {
    auto q = make_sequence(2, true, 113);
    Weights w; // lambda_temporal = 0.1 by default
    auto model = make_model(q, w, ScalePlacement::CameraFrame);
    model.refresh_correspondences(q.state);
    REQUIRE_THROWS_AS(model.evaluate(q.state), SequenceTooShortError);
    FreeSet free;
    const auto layout =
        ParamLayout::create(free, true, 2, q.skel.joint_count(), q.skel.shape_group_count);
    REQUIRE_THROWS_AS(model.gradient(q.state, layout), SequenceTooShortError);
}

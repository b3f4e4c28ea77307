// egofit: scenario synthesis (synth), sequence fitting (fit) and metric
// evaluation incl. ablations (eval). Exit codes: 0 ok, 2 config error,
// 3 numerical failure, 4 input mismatch.

#include "egofit/config.hpp"
#include "egofit/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace egofit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitInput = 4;

// Anything wrong with the data handed to a run (as opposed to its config).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    return in;
}

// ---------------------------------------------------------------------------
// Estimate files: estimate.jsonl rows share the bundle's truth.jsonl schema,
// scale.json holds the recovered body-vs-scene scale.

void write_estimate(const fs::path& dir, const energy::SequenceState& state) {
    auto rows = open_out(dir / "estimate.jsonl");
    for (int t = 0; t < state.frame_count(); ++t) {
        const nlohmann::json row = {
            {"beta", synth::detail::vec_json(state.beta(t).beta)},
            {"theta", synth::detail::vec_json(state.poses[t].theta)},
            {"root_orientation", synth::detail::vec_json(state.roots[t].orientation)},
            {"root_translation", synth::detail::vec_json(state.roots[t].translation)},
            {"camera", synth::detail::pose_json(state.camera_pose(t))}};
        rows << row.dump() << '\n';
    }
    auto scale = open_out(dir / "scale.json");
    scale << nlohmann::json{{"scale", state.scale}}.dump(2) << '\n';
}

energy::SequenceState read_estimate(const fs::path& dir, const body::SkeletonDef& skel) {
    energy::SequenceState state;
    state.shared_beta = false;
    auto rows = open_in(dir / "estimate.jsonl");
    std::string line;
    int line_no = 0;
    while (std::getline(rows, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("estimate.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            state.betas.emplace_back(synth::detail::vec_from_json(row.at("beta")));
            state.poses.emplace_back(synth::detail::vec_from_json(row.at("theta")));
            body::RootTransform root;
            const Eigen::VectorXd ori = synth::detail::vec_from_json(row.at("root_orientation"));
            const Eigen::VectorXd trs = synth::detail::vec_from_json(row.at("root_translation"));
            if (ori.size() != 3 || trs.size() != 3)
                throw InputError("estimate.jsonl line " + std::to_string(line_no) +
                                 ": root fields must have 3 entries");
            root.orientation = ori;
            root.translation = trs;
            state.roots.push_back(root);
            state.cam_base.push_back(synth::detail::pose_from_json(row.at("camera")));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("estimate.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
        state.cam_rot_delta.emplace_back(Vec3::Zero());
        state.cam_trans_delta.emplace_back(Vec3::Zero());
        const auto& beta = state.betas.back().beta;
        const auto& theta = state.poses.back().theta;
        if (beta.size() != skel.shape_group_count || theta.size() != 3 * skel.joint_count())
            throw InputError("estimate.jsonl line " + std::to_string(line_no) +
                             ": parameter sizes do not match the skeleton");
    }
    if (state.poses.empty()) throw InputError("estimate.jsonl is empty");

    auto scale = open_in(dir / "scale.json");
    try {
        nlohmann::json j;
        scale >> j;
        state.scale = j.at("scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("scale.json: ") + e.what());
    }
    return state;
}

void write_trace(const fs::path& path, const std::vector<opt::TraceRow>& rows) {
    auto out = open_out(path);
    out.precision(17);
    out << "stage,iter,joint,shape_prior,pose_prior,contact,temporal,total\n";
    for (const auto& r : rows)
        out << r.stage << ',' << r.iter << ',' << r.energy.joint << ',' << r.energy.shape_prior
            << ',' << r.energy.pose_prior << ',' << r.energy.contact << ',' << r.energy.temporal
            << ',' << r.energy.total << '\n';
}

// ---------------------------------------------------------------------------
// OBJ export: one octagonal capsule per bone.

void append_capsule(scene::SceneMesh& mesh, const Vec3& a, const Vec3& b, double radius) {
    const Vec3 axis = b - a;
    const double len = axis.norm();
    if (len < 1e-9) return;
    const Vec3 n = axis / len;
    const Vec3 seed = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 u = n.cross(seed).normalized();
    const Vec3 v = n.cross(u);
    constexpr int kSides = 8;
    const int base = static_cast<int>(mesh.vertices.size());
    for (int i = 0; i < kSides; ++i) {
        const double ang = 2.0 * std::numbers::pi * i / kSides;
        const Vec3 spoke = radius * (std::cos(ang) * u + std::sin(ang) * v);
        mesh.vertices.push_back(a + spoke);
        mesh.vertices.push_back(b + spoke);
    }
    mesh.vertices.push_back(a);
    mesh.vertices.push_back(b);
    const int ca = base + 2 * kSides;
    const int cb = ca + 1;
    for (int i = 0; i < kSides; ++i) {
        const int j = (i + 1) % kSides;
        const int a0 = base + 2 * i, b0 = a0 + 1;
        const int a1 = base + 2 * j, b1 = a1 + 1;
        mesh.faces.push_back({a0, b0, a1});
        mesh.faces.push_back({a1, b0, b1});
        mesh.faces.push_back({ca, a1, a0});
        mesh.faces.push_back({cb, b0, b1});
    }
}

scene::SceneMesh body_mesh(const body::SkeletonDef& skel, const std::vector<Vec3>& world_joints,
                           double radius) {
    scene::SceneMesh mesh;
    for (int i = 0; i < skel.joint_count(); ++i) {
        const int p = skel.joints[i].parent;
        if (p == i) continue;
        append_capsule(mesh, world_joints[p], world_joints[i], radius);
    }
    return mesh;
}

void append_mesh(scene::SceneMesh& dst, const scene::SceneMesh& src) {
    const int base = static_cast<int>(dst.vertices.size());
    dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
    for (const auto& f : src.faces) dst.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

void export_objs(const fs::path& dir, const body::SkeletonDef& skel,
                 const energy::SequenceState& state, const scene::SceneMesh& scene_mesh,
                 energy::ScalePlacement placement) {
    const auto tracks = metrics::world_tracks(skel, state, placement);
    const double radius = 0.04 * state.scale;
    scene::SceneMesh combined = scene_mesh;
    for (int t = 0; t < state.frame_count(); ++t) {
        const scene::SceneMesh body = body_mesh(skel, tracks[t], radius);
        std::ostringstream name;
        name << "body_" << std::setw(4) << std::setfill('0') << t << ".obj";
        scene::save_obj((dir / name.str()).string(), body);
        append_mesh(combined, body);
    }
    scene::save_obj((dir / "combined.obj").string(), combined);
}

// ---------------------------------------------------------------------------
// Subcommands.

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int threads = -1; // -1 = take the config's value
};

config::RunConfig resolve_config(const CommonArgs& args) {
    config::RunConfig cfg =
        args.config_path.empty()
            ? config::load_config(config::default_config_text(), args.overrides)
            : config::load_config_file(args.config_path, args.overrides);
    if (args.threads >= 0) cfg.threads = args.threads;
    return cfg;
}

int cmd_synth(const CommonArgs& args, const std::string& out) {
    const config::RunConfig cfg = resolve_config(args);
    const synth::ScenarioBundle bundle = synth::generate(cfg.scenario);
    fs::create_directories(out);
    synth::save_bundle(bundle, out);
    open_out(fs::path(out) / "config.ini") << config::serialize(cfg);
    std::cout << "wrote " << bundle.frame_count() << " frames (motion "
              << synth::motion_name(cfg.scenario.motion) << ", seed " << cfg.scenario.seed
              << ", scene scale " << bundle.true_scale << ") to " << out << "\n";
    return kExitOk;
}

opt::FitInputs fit_inputs(const body::SkeletonDef& skel, const synth::ScenarioBundle& bundle,
                          const scene::SpatialIndex& index) {
    opt::FitInputs in;
    in.skeleton = &skel;
    in.intrinsics = bundle.intrinsics;
    in.observations = bundle.observations;
    in.scene_index = &index;
    in.cameras = bundle.cameras;
    return in;
}

int cmd_fit(const CommonArgs& args, const std::string& bundle_dir, const std::string& out,
            bool export_obj) {
    const config::RunConfig cfg = resolve_config(args);
    const synth::ScenarioBundle bundle = synth::load_bundle(bundle_dir);
    const scene::SpatialIndex index(bundle.scene);
    const body::SkeletonDef skel = body::default_skeleton();

    const opt::PipelineResult result = opt::run_pipeline(fit_inputs(skel, bundle, index),
                                                         config::to_pipeline(cfg));
    fs::create_directories(out);
    write_estimate(out, result.state);
    write_trace(fs::path(out) / "trace.csv", result.full_trace());
    open_out(fs::path(out) / "config.ini") << config::serialize(cfg);
    if (export_obj) export_objs(out, skel, result.state, bundle.scene, cfg.scale_placement);

    const auto trace = result.full_trace();
    std::cout << "fit " << result.state.frame_count() << " frames: scale "
              << result.state.scale << ", final energy "
              << (trace.empty() ? 0.0 : trace.back().energy.total) << ", outputs in " << out
              << "\n";
    return kExitOk;
}

// Energy variants mirroring the ablation rows: data term only, with contact,
// with temporal, and the full schedule.
std::vector<std::pair<std::string, std::vector<opt::StageConfig>>>
ablation_schedules(const std::vector<opt::StageConfig>& full) {
    std::vector<std::pair<std::string, std::vector<opt::StageConfig>>> out;

    std::vector<opt::StageConfig> data_only{full.front()};
    data_only[0].lambda_contact = 0.0;
    data_only[0].lambda_temporal = 0.0;
    out.emplace_back("E_M", std::move(data_only));

    std::vector<opt::StageConfig> contact = full;
    for (auto& s : contact) s.lambda_temporal = 0.0;
    out.emplace_back("E_M+E_C", std::move(contact));

    std::vector<opt::StageConfig> temporal{full.front()};
    if (full.size() > 1) temporal.push_back(full.back());
    for (auto& s : temporal) s.lambda_contact = 0.0;
    out.emplace_back("E_M+E_T", std::move(temporal));

    out.emplace_back("full", full);
    return out;
}

std::string slug(const std::string& label) {
    std::string s;
    for (const char c : label) s += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : '_';
    return s;
}

int cmd_eval(const CommonArgs& args, const std::string& bundle_dir,
             const std::string& estimate_dir, const std::string& out_dir, bool ablation) {
    const config::RunConfig cfg = resolve_config(args);
    const synth::ScenarioBundle bundle = synth::load_bundle(bundle_dir);
    const scene::SpatialIndex index(bundle.scene);
    const body::SkeletonDef skel = body::default_skeleton();

    std::vector<std::vector<Vec3>> truth_joints;
    for (int t = 0; t < bundle.frame_count(); ++t)
        truth_joints.push_back(bundle.truth_world_joints(skel, t));
    const metrics::TruthRef truth{&truth_joints, bundle.true_scale};

    std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
    fs::path out;

    if (ablation) {
        out = out_dir;
        fs::create_directories(out);
        for (const auto& [label, schedule] : ablation_schedules(cfg.schedule)) {
            config::RunConfig variant = cfg;
            variant.schedule = schedule;
            const opt::PipelineResult result = opt::run_pipeline(
                fit_inputs(skel, bundle, index), config::to_pipeline(variant));
            const fs::path vdir = out / slug(label);
            fs::create_directories(vdir);
            write_estimate(vdir, result.state);
            write_trace(vdir / "trace.csv", result.full_trace());
            rows.emplace_back(label, metrics::evaluate_run(skel, bundle.intrinsics, result.state,
                                                           bundle.observations, &index, &truth,
                                                           cfg.scale_placement));
        }
    } else {
        const energy::SequenceState state = read_estimate(estimate_dir, skel);
        if (state.frame_count() != bundle.frame_count())
            throw InputError("estimate has " + std::to_string(state.frame_count()) +
                             " frames, bundle has " + std::to_string(bundle.frame_count()));
        out = out_dir.empty() ? fs::path(estimate_dir) : fs::path(out_dir);
        fs::create_directories(out);
        rows.emplace_back("fit", metrics::evaluate_run(skel, bundle.intrinsics, state,
                                                       bundle.observations, &index, &truth,
                                                       cfg.scale_placement));
    }

    auto csv = open_out(out / "metrics.csv");
    csv << metrics::csv_header() << '\n';
    nlohmann::json all = nlohmann::json::array();
    std::cout << metrics::csv_header() << "\n";
    for (const auto& [label, report] : rows) {
        const std::string row = metrics::csv_row(label, report);
        csv << row << '\n';
        std::cout << row << "\n";
        nlohmann::json j = metrics::to_json(report);
        j["label"] = label;
        all.push_back(std::move(j));
    }
    open_out(out / "metrics.json") << all.dump(2) << '\n';
    open_out(out / "config.ini") << config::serialize(cfg);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"articulated body fitting against a scene: synthesis, fitting, evaluation"};
    app.require_subcommand(1);

    CommonArgs args;
    const auto add_common = [&args](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "run configuration file (INI)");
        cmd->add_option("--set", args.overrides, "override: section.key=value")
            ->take_all();
        cmd->add_option("--threads", args.threads, "worker threads (0 = all cores)");
    };

    std::string out_dir, bundle_dir, estimate_dir;
    bool export_obj = false, ablation = false;

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scenario bundle");
    add_common(synth_cmd);
    synth_cmd->add_option("--out", out_dir, "output bundle directory")->required();

    CLI::App* fit_cmd = app.add_subcommand("fit", "fit a sequence to a bundle");
    add_common(fit_cmd);
    fit_cmd->add_option("--bundle", bundle_dir, "input bundle directory")->required();
    fit_cmd->add_option("--out", out_dir, "output directory")->required();
    fit_cmd->add_flag("--export-obj", export_obj, "write per-frame body and combined scene OBJs");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate an estimate against a bundle");
    add_common(eval_cmd);
    eval_cmd->add_option("--bundle", bundle_dir, "input bundle directory")->required();
    eval_cmd->add_option("--estimate", estimate_dir, "fit output directory to score");
    eval_cmd->add_option("--out", out_dir, "output directory (default: the estimate directory)");
    eval_cmd->add_flag("--ablation", ablation, "fit and score the energy-variant ladder");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(args, out_dir);
        if (fit_cmd->parsed()) return cmd_fit(args, bundle_dir, out_dir, export_obj);
        if (eval_cmd->parsed()) {
            if (ablation && out_dir.empty())
                throw config::ConfigError("--ablation needs --out");
            if (!ablation && estimate_dir.empty())
                throw config::ConfigError("eval needs --estimate (or --ablation)");
            return cmd_eval(args, bundle_dir, estimate_dir, out_dir, ablation);
        }
        return kExitConfig;
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const synth::InvalidConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const energy::NonFiniteEnergyError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const synth::BundleIoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

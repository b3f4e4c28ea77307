#pragma once

// Run configuration: every tunable of the fitter and the scenario generator
// in one INI-style document. Parsing is strict -- unknown sections or keys are
// errors that name the offender with its line and column -- and the canonical
// serializer round-trips bit-exactly (shortest round-trip float formatting,
// from_chars on the way back in).

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "egofit/energy.hpp"
#include "egofit/optimizer.hpp"
#include "egofit/synth.hpp"

namespace egofit::config {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Schema version 1. threads = 0 means one worker per hardware core.
struct RunConfig {
    int version = 1;
    int threads = 0;
    double lambda_beta = 0.01;
    double lambda_theta = 0.1;
    double sigma_joint = 100.0;
    double sigma_contact = 0.2;
    double sigma_temporal = 0.1;
    energy::ScalePlacement scale_placement = energy::ScalePlacement::CameraFrame;
    int consolidate_after = 0;
    double default_depth = 3.0;
    bool scale_seek = true;
    std::vector<opt::StageConfig> schedule = opt::default_schedule();
    synth::ScenarioConfig scenario;
};

namespace detail {

inline std::string where(int line, int col) {
    if (line == 0) return "--set override";
    return "line " + std::to_string(line) + ", col " + std::to_string(col);
}

struct Entry {
    std::string key;
    std::string value;
    int line = 0; // 0 marks a --set override
    int key_col = 1;
    int value_col = 1;
};

struct Section {
    std::string name;
    int line = 0;
    std::vector<Entry> entries;

    Entry* find(std::string_view key) {
        for (auto& e : entries)
            if (e.key == key) return &e;
        return nullptr;
    }
};

struct Document {
    std::vector<Section> sections;

    Section* find(std::string_view name) {
        for (auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    const Section* find(std::string_view name) const {
        return const_cast<Document*>(this)->find(name);
    }
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

inline Document parse_ini(const std::string& text) {
    Document doc;
    Section* current = nullptr;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const std::string_view line = raw;
        const std::string_view body = trim(line);
        if (body.empty() || body.front() == '#' || body.front() == ';') continue;
        const int col = static_cast<int>(body.data() - line.data()) + 1;
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ConfigError(where(line_no, col) + ": unterminated section header");
            const auto name = trim(body.substr(1, body.size() - 2));
            if (!valid_name(name))
                throw ConfigError(where(line_no, col) + ": bad section name '" +
                                  std::string(name) + "'");
            if (doc.find(name))
                throw ConfigError(where(line_no, col) + ": duplicate section [" +
                                  std::string(name) + "]");
            doc.sections.push_back({std::string(name), line_no, {}});
            current = &doc.sections.back();
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(where(line_no, col) + ": expected 'key = value' or '[section]'");
        const auto key = trim(body.substr(0, eq));
        const auto value = trim(body.substr(eq + 1));
        if (!valid_name(key))
            throw ConfigError(where(line_no, col) + ": bad key name '" + std::string(key) + "'");
        if (!current)
            throw ConfigError(where(line_no, col) + ": key '" + std::string(key) +
                              "' outside any [section]");
        if (current->find(key))
            throw ConfigError(where(line_no, col) + ": duplicate key '" + current->name + "." +
                              std::string(key) + "'");
        const int value_col =
            value.empty() ? col : static_cast<int>(value.data() - line.data()) + 1;
        current->entries.push_back({std::string(key), std::string(value), line_no, col, value_col});
    }
    return doc;
}

// "section.key=value": replaces the entry if present, appends it otherwise.
inline void apply_override(Document& doc, const std::string& spec) {
    const auto bad = [&](const char* why) {
        throw ConfigError("bad --set '" + spec + "': " + why);
    };
    const auto eq = spec.find('=');
    if (eq == std::string::npos) bad("expected section.key=value");
    const auto lhs = trim(std::string_view(spec).substr(0, eq));
    const auto value = trim(std::string_view(spec).substr(eq + 1));
    const auto dot = lhs.find('.');
    if (dot == std::string_view::npos) bad("expected section.key=value");
    const auto section = lhs.substr(0, dot);
    const auto key = lhs.substr(dot + 1);
    if (!valid_name(section)) bad("bad section name");
    if (!valid_name(key)) bad("bad key name");
    Section* s = doc.find(section);
    if (!s) {
        doc.sections.push_back({std::string(section), 0, {}});
        s = &doc.sections.back();
    }
    if (Entry* e = s->find(key)) {
        e->value = std::string(value);
        e->line = 0;
        e->key_col = e->value_col = 1;
    } else {
        s->entries.push_back({std::string(key), std::string(value), 0, 1, 1});
    }
}

inline double to_double(const Entry& e, const std::string& qual) {
    double v = 0.0;
    const char* b = e.value.data();
    const char* en = b + e.value.size();
    const auto [p, ec] = std::from_chars(b, en, v);
    if (ec != std::errc() || p != en)
        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                          "' expects a number, got '" + e.value + "'");
    return v;
}

inline int to_int(const Entry& e, const std::string& qual) {
    int v = 0;
    const char* b = e.value.data();
    const char* en = b + e.value.size();
    const auto [p, ec] = std::from_chars(b, en, v);
    if (ec != std::errc() || p != en)
        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                          "' expects an integer, got '" + e.value + "'");
    return v;
}

inline std::uint64_t to_u64(const Entry& e, const std::string& qual) {
    std::uint64_t v = 0;
    const char* b = e.value.data();
    const char* en = b + e.value.size();
    const auto [p, ec] = std::from_chars(b, en, v);
    if (ec != std::errc() || p != en)
        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                          "' expects a non-negative integer, got '" + e.value + "'");
    return v;
}

inline std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = s.find(',');
        out.push_back(trim(s.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

inline std::vector<double> to_double_list(const Entry& e, const std::string& qual) {
    std::vector<double> out;
    for (const auto tok : split_list(e.value)) {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size())
            throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                              "' expects comma-separated numbers, got '" + e.value + "'");
        out.push_back(v);
    }
    return out;
}

inline energy::FreeSet to_free_set(const Entry& e, const std::string& qual) {
    energy::FreeSet f;
    f.beta = f.theta = f.root = f.cam_pose = f.scale = false;
    if (trim(e.value).empty())
        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                          "' must free at least one block");
    for (const auto tok : split_list(e.value)) {
        if (tok == "beta") f.beta = true;
        else if (tok == "theta") f.theta = true;
        else if (tok == "root") f.root = true;
        else if (tok == "cameras") f.cam_pose = true;
        else if (tok == "scale") f.scale = true;
        else
            throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                              "' has unknown block '" + std::string(tok) +
                              "' (beta | theta | root | cameras | scale)");
    }
    if (!f.any())
        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                          "' must free at least one block");
    return f;
}

inline std::string format_double(double v) {
    std::array<char, 64> buf;
    const auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), p);
}

inline std::string free_set_text(const energy::FreeSet& f) {
    std::string out;
    const auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ", ";
        out += name;
    };
    add(f.beta, "beta");
    add(f.theta, "theta");
    add(f.root, "root");
    add(f.cam_pose, "cameras");
    add(f.scale, "scale");
    return out;
}

inline std::string double_list_text(const std::vector<double>& xs) {
    std::string out;
    for (const double x : xs) {
        if (!out.empty()) out += ", ";
        out += format_double(x);
    }
    return out;
}

// Unknown keys are rejected as they are encountered; every accepted key lands
// in exactly one RunConfig field.
inline RunConfig decode(const Document& doc) {
    RunConfig cfg;
    const auto reject = [](const Section& sec, const Entry& e) {
        throw ConfigError(where(e.line, e.key_col) + ": unknown key '" + sec.name + "." + e.key +
                          "'");
    };
    const auto positive = [](double v, const Entry& e, const std::string& qual) {
        if (!(v > 0.0))
            throw ConfigError(where(e.line, e.value_col) + ": key '" + qual + "' must be > 0");
        return v;
    };
    const auto non_negative = [](double v, const Entry& e, const std::string& qual) {
        if (!(v >= 0.0))
            throw ConfigError(where(e.line, e.value_col) + ": key '" + qual + "' must be >= 0");
        return v;
    };

    int stages = static_cast<int>(cfg.schedule.size());
    bool stages_overridden = false;
    if (const Section* sch = doc.find("schedule")) {
        for (const auto& e : sch->entries) {
            if (e.key == "stages") {
                stages = to_int(e, "schedule.stages");
                stages_overridden = e.line == 0;
                if (stages < 1)
                    throw ConfigError(where(e.line, e.value_col) +
                                      ": key 'schedule.stages' must be >= 1");
            } else {
                reject(*sch, e);
            }
        }
    }
    const auto base = opt::default_schedule();
    cfg.schedule.clear();
    for (int i = 0; i < stages; ++i) {
        opt::StageConfig s;
        if (i < static_cast<int>(base.size())) s = base[i];
        s.name = "stage" + std::to_string(i + 1);
        cfg.schedule.push_back(s);
    }

    bool saw_version = false;
    for (const auto& sec : doc.sections) {
        if (sec.name == "run") {
            for (const auto& e : sec.entries) {
                if (e.key == "version") {
                    cfg.version = to_int(e, "run.version");
                    saw_version = true;
                    if (cfg.version != 1)
                        throw ConfigError(where(e.line, e.value_col) +
                                          ": unsupported config version " +
                                          std::to_string(cfg.version) +
                                          " (this build reads version 1)");
                } else if (e.key == "threads") {
                    cfg.threads = to_int(e, "run.threads");
                    if (cfg.threads < 0)
                        throw ConfigError(where(e.line, e.value_col) +
                                          ": key 'run.threads' must be >= 0 (0 = all cores)");
                } else {
                    reject(sec, e);
                }
            }
        } else if (sec.name == "weights") {
            for (const auto& e : sec.entries) {
                if (e.key == "lambda_beta")
                    cfg.lambda_beta = non_negative(to_double(e, "weights.lambda_beta"), e,
                                                   "weights.lambda_beta");
                else if (e.key == "lambda_theta")
                    cfg.lambda_theta = non_negative(to_double(e, "weights.lambda_theta"), e,
                                                    "weights.lambda_theta");
                else
                    reject(sec, e);
            }
        } else if (sec.name == "kernels") {
            for (const auto& e : sec.entries) {
                if (e.key == "sigma_joint")
                    cfg.sigma_joint =
                        positive(to_double(e, "kernels.sigma_joint"), e, "kernels.sigma_joint");
                else if (e.key == "sigma_contact")
                    cfg.sigma_contact =
                        positive(to_double(e, "kernels.sigma_contact"), e, "kernels.sigma_contact");
                else if (e.key == "sigma_temporal")
                    cfg.sigma_temporal = positive(to_double(e, "kernels.sigma_temporal"), e,
                                                  "kernels.sigma_temporal");
                else
                    reject(sec, e);
            }
        } else if (sec.name == "fit") {
            for (const auto& e : sec.entries) {
                if (e.key == "scale_placement") {
                    if (e.value == "camera")
                        cfg.scale_placement = energy::ScalePlacement::CameraFrame;
                    else if (e.value == "body")
                        cfg.scale_placement = energy::ScalePlacement::BodyFrame;
                    else
                        throw ConfigError(where(e.line, e.value_col) +
                                          ": key 'fit.scale_placement' expects camera | body, "
                                          "got '" +
                                          e.value + "'");
                } else if (e.key == "consolidate_after") {
                    cfg.consolidate_after = to_int(e, "fit.consolidate_after");
                    if (cfg.consolidate_after < -1)
                        throw ConfigError(where(e.line, e.value_col) +
                                          ": key 'fit.consolidate_after' must be >= -1");
                } else if (e.key == "default_depth") {
                    cfg.default_depth =
                        positive(to_double(e, "fit.default_depth"), e, "fit.default_depth");
                } else if (e.key == "scale_seek") {
                    if (e.value == "true") cfg.scale_seek = true;
                    else if (e.value == "false") cfg.scale_seek = false;
                    else
                        throw ConfigError(where(e.line, e.value_col) +
                                          ": key 'fit.scale_seek' expects true | false, got '" +
                                          e.value + "'");
                } else {
                    reject(sec, e);
                }
            }
        } else if (sec.name == "schedule") {
            continue; // consumed above
        } else if (sec.name.rfind("stage", 0) == 0) {
            const std::string tail = sec.name.substr(5);
            int n = 0;
            const auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), n);
            if (tail.empty() || ec != std::errc() || p != tail.data() + tail.size())
                throw ConfigError(where(sec.line, 1) + ": unknown section [" + sec.name + "]");
            if (n < 1 || n > stages) {
                // a --set that shrinks the count deliberately drops the tail
                // stages a file defines; contradictions involving overrides
                // themselves are still errors
                const bool touched = std::any_of(sec.entries.begin(), sec.entries.end(),
                                                 [](const Entry& e) { return e.line == 0; });
                if (n >= 1 && stages_overridden && sec.line > 0 && !touched) continue;
                throw ConfigError(where(sec.line, 1) + ": section [" + sec.name +
                                  "] but schedule.stages = " + std::to_string(stages));
            }
            opt::StageConfig& s = cfg.schedule[n - 1];
            for (const auto& e : sec.entries) {
                const std::string qual = sec.name + "." + e.key;
                if (e.key == "free") {
                    s.free = to_free_set(e, qual);
                } else if (e.key == "anneal") {
                    s.anneal_phases = to_double_list(e, qual);
                    for (const double a : s.anneal_phases) non_negative(a, e, qual);
                } else if (e.key == "lambda_contact") {
                    s.lambda_contact = non_negative(to_double(e, qual), e, qual);
                } else if (e.key == "lambda_temporal") {
                    s.lambda_temporal = non_negative(to_double(e, qual), e, qual);
                } else if (e.key == "outer_iterations") {
                    s.outer_iterations = to_int(e, qual);
                    if (s.outer_iterations < 0)
                        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                                          "' must be >= 0");
                } else if (e.key == "inner_steps") {
                    s.inner_steps = to_int(e, qual);
                    if (s.inner_steps < 0)
                        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual +
                                          "' must be >= 0");
                } else if (e.key == "learning_rate") {
                    s.learning_rate = positive(to_double(e, qual), e, qual);
                } else if (e.key == "lr_decay") {
                    s.lr_decay = positive(to_double(e, qual), e, qual);
                } else {
                    reject(sec, e);
                }
            }
        } else if (sec.name == "scenario") {
            auto& sc = cfg.scenario;
            for (const auto& e : sec.entries) {
                const std::string qual = "scenario." + e.key;
                if (e.key == "frames") sc.frames = to_int(e, qual);
                else if (e.key == "motion") {
                    try {
                        sc.motion = synth::motion_from_name(e.value);
                    } catch (const synth::InvalidConfigError& ex) {
                        throw ConfigError(where(e.line, e.value_col) + ": key '" + qual + "': " +
                                          ex.what());
                    }
                } else if (e.key == "pixel_noise") sc.pixel_noise = to_double(e, qual);
                else if (e.key == "dropout") sc.dropout = to_double(e, qual);
                else if (e.key == "truncated_fraction") sc.truncated_fraction = to_double(e, qual);
                else if (e.key == "scene_scale") sc.scene_scale = to_double(e, qual);
                else if (e.key == "seed") sc.seed = to_u64(e, qual);
                else if (e.key == "camera_distance") sc.camera_distance = to_double(e, qual);
                else if (e.key == "camera_height") sc.camera_height = to_double(e, qual);
                else if (e.key == "camera_jitter") sc.camera_jitter = to_double(e, qual);
                else if (e.key == "camera_rot_noise") sc.camera_rot_noise = to_double(e, qual);
                else if (e.key == "camera_trans_noise") sc.camera_trans_noise = to_double(e, qual);
                else if (e.key == "fx") sc.intrinsics.focal.x() = positive(to_double(e, qual), e, qual);
                else if (e.key == "fy") sc.intrinsics.focal.y() = positive(to_double(e, qual), e, qual);
                else if (e.key == "cx") sc.intrinsics.principal_point.x() = to_double(e, qual);
                else if (e.key == "cy") sc.intrinsics.principal_point.y() = to_double(e, qual);
                else if (e.key == "image_width") sc.frustum.width = to_int(e, qual);
                else if (e.key == "image_height") sc.frustum.height = to_int(e, qual);
                else reject(sec, e);
            }
        } else {
            throw ConfigError(where(sec.line, 1) + ": unknown section [" + sec.name + "]");
        }
    }
    if (!saw_version)
        throw ConfigError("missing required key 'run.version' (expected 1)");
    try {
        cfg.scenario.validate();
    } catch (const synth::InvalidConfigError& ex) {
        throw ConfigError(std::string("scenario: ") + ex.what());
    }
    return cfg;
}

} // namespace detail

// Canonical form: fixed section/key order, every key present, shortest
// round-trip number formatting. serialize(load_config(serialize(c))) is
// byte-identical to serialize(c).
inline std::string serialize(const RunConfig& c) {
    using detail::format_double;
    std::string out;
    const auto kv = [&](const char* k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    };
    out += "[run]\n";
    kv("version", std::to_string(c.version));
    kv("threads", std::to_string(c.threads));
    out += "\n[weights]\n";
    kv("lambda_beta", format_double(c.lambda_beta));
    kv("lambda_theta", format_double(c.lambda_theta));
    out += "\n[kernels]\n";
    kv("sigma_joint", format_double(c.sigma_joint));
    kv("sigma_contact", format_double(c.sigma_contact));
    kv("sigma_temporal", format_double(c.sigma_temporal));
    out += "\n[fit]\n";
    kv("scale_placement",
       c.scale_placement == energy::ScalePlacement::CameraFrame ? "camera" : "body");
    kv("consolidate_after", std::to_string(c.consolidate_after));
    kv("default_depth", format_double(c.default_depth));
    kv("scale_seek", c.scale_seek ? "true" : "false");
    out += "\n[schedule]\n";
    kv("stages", std::to_string(c.schedule.size()));
    for (std::size_t i = 0; i < c.schedule.size(); ++i) {
        const auto& s = c.schedule[i];
        out += "\n[stage" + std::to_string(i + 1) + "]\n";
        kv("free", detail::free_set_text(s.free));
        kv("anneal", detail::double_list_text(s.anneal_phases));
        kv("lambda_contact", format_double(s.lambda_contact));
        kv("lambda_temporal", format_double(s.lambda_temporal));
        kv("outer_iterations", std::to_string(s.outer_iterations));
        kv("inner_steps", std::to_string(s.inner_steps));
        kv("learning_rate", format_double(s.learning_rate));
        kv("lr_decay", format_double(s.lr_decay));
    }
    const auto& sc = c.scenario;
    out += "\n[scenario]\n";
    kv("frames", std::to_string(sc.frames));
    kv("motion", synth::motion_name(sc.motion));
    kv("pixel_noise", format_double(sc.pixel_noise));
    kv("dropout", format_double(sc.dropout));
    kv("truncated_fraction", format_double(sc.truncated_fraction));
    kv("scene_scale", format_double(sc.scene_scale));
    kv("seed", std::to_string(sc.seed));
    kv("camera_distance", format_double(sc.camera_distance));
    kv("camera_height", format_double(sc.camera_height));
    kv("camera_jitter", format_double(sc.camera_jitter));
    kv("camera_rot_noise", format_double(sc.camera_rot_noise));
    kv("camera_trans_noise", format_double(sc.camera_trans_noise));
    kv("fx", format_double(sc.intrinsics.focal.x()));
    kv("fy", format_double(sc.intrinsics.focal.y()));
    kv("cx", format_double(sc.intrinsics.principal_point.x()));
    kv("cy", format_double(sc.intrinsics.principal_point.y()));
    kv("image_width", std::to_string(sc.frustum.width));
    kv("image_height", std::to_string(sc.frustum.height));
    return out;
}

inline RunConfig load_config(const std::string& text,
                             const std::vector<std::string>& overrides = {}) {
    auto doc = detail::parse_ini(text);
    for (const auto& o : overrides) detail::apply_override(doc, o);
    return detail::decode(doc);
}

inline RunConfig load_config_file(const std::filesystem::path& path,
                                  const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return load_config(text.str(), overrides);
}

inline std::string default_config_text() { return serialize(RunConfig{}); }

inline int resolved_threads(const RunConfig& c) {
    if (c.threads > 0) return c.threads;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline opt::PipelineConfig to_pipeline(const RunConfig& c) {
    opt::PipelineConfig p;
    p.schedule = c.schedule;
    p.lambda_beta = c.lambda_beta;
    p.lambda_theta = c.lambda_theta;
    p.kernels.joint = energy::RobustKernel(c.sigma_joint);
    p.kernels.contact = energy::RobustKernel(c.sigma_contact);
    p.kernels.temporal = energy::RobustKernel(c.sigma_temporal);
    p.scale_placement = c.scale_placement;
    p.threads = resolved_threads(c);
    p.consolidate_after = c.consolidate_after;
    p.default_depth = c.default_depth;
    p.scale_seek = c.scale_seek;
    return p;
}

} // namespace egofit::config

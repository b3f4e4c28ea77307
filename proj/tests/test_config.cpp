#include "egofit/config.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

using namespace egofit;
using namespace egofit::config;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("default config text parses back to the defaults") {
    const std::string text = default_config_text();
    const RunConfig parsed = load_config(text);
    CHECK(serialize(parsed) == text);

    CHECK(parsed.version == 1);
    CHECK(parsed.threads == 0);
    CHECK(parsed.lambda_beta == 0.01);
    CHECK(parsed.lambda_theta == 0.1);
    CHECK(parsed.sigma_joint == 100.0);
    CHECK(parsed.sigma_contact == 0.2);
    CHECK(parsed.sigma_temporal == 0.1);
    CHECK(parsed.scale_placement == energy::ScalePlacement::CameraFrame);
    CHECK(parsed.consolidate_after == 0);
    CHECK(parsed.scale_seek);
    REQUIRE(parsed.schedule.size() == 3);
    CHECK(parsed.schedule[0].anneal_phases == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(parsed.schedule[1].free.scale);
    CHECK_FALSE(parsed.schedule[1].free.cam_pose);
    CHECK(parsed.schedule[2].free.cam_pose);
    CHECK(parsed.schedule[2].lambda_temporal == 0.1);
    CHECK(parsed.scenario.frames == 60);
    CHECK(parsed.scenario.motion == synth::Motion::Walk);
}

TEST_CASE("serialize -> parse -> serialize is byte-identical for awkward values") {
    RunConfig c;
    c.lambda_beta = 0.1 + 0.2;
    c.sigma_joint = 1.0 / 3.0;
    c.sigma_contact = 1e-17;
    c.default_depth = std::nextafter(3.0, 4.0);
    c.schedule.push_back(c.schedule.back());
    c.schedule[3].learning_rate = 0.1234567890123456;
    c.schedule[3].anneal_phases = {0.0, 1.0 / 7.0, 0.99999999999999989};
    c.scenario.pixel_noise = 3.141592653589793;
    c.scenario.seed = 18446744073709551615ull;
    c.scenario.scene_scale = 2.0000000000000004;

    const std::string text = serialize(c);
    const RunConfig parsed = load_config(text);
    CHECK(serialize(parsed) == text);
    CHECK(parsed.lambda_beta == c.lambda_beta);
    CHECK(parsed.sigma_joint == c.sigma_joint);
    CHECK(parsed.sigma_contact == c.sigma_contact);
    CHECK(parsed.default_depth == c.default_depth);
    REQUIRE(parsed.schedule.size() == 4);
    CHECK(parsed.schedule[3].learning_rate == c.schedule[3].learning_rate);
    CHECK(parsed.schedule[3].anneal_phases == c.schedule[3].anneal_phases);
    CHECK(parsed.scenario.pixel_noise == c.scenario.pixel_noise);
    CHECK(parsed.scenario.seed == c.scenario.seed);
    CHECK(parsed.scenario.scene_scale == c.scenario.scene_scale);
}

TEST_CASE("scruffy but valid text parses to the same config as the canonical form") {
    const std::string scruffy =
        "; run configuration\r\n"
        "  [scenario]\r\n"
        "frames=12\n"
        "\n"
        "   motion   =   jog\n"
        "# a comment\n"
        "[run]\n"
        "version = 1\n"
        "[stage2]\n"
        "learning_rate = 0.25\n";
    const RunConfig a = load_config(scruffy);
    RunConfig b;
    b.scenario.frames = 12;
    b.scenario.motion = synth::Motion::Jog;
    b.schedule[1].learning_rate = 0.25;
    CHECK(serialize(a) == serialize(b));
}

TEST_CASE("diagnostics name the offender with line and column") {
    const std::string base = "[run]\nversion = 1\n";

    SECTION("unknown key") {
        const std::string text = base + "[weights]\nlambda_bogus = 1\n";
        CHECK_THROWS_MATCHES(load_config(text), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("line 4") &&
                                 ContainsSubstring("weights.lambda_bogus")));
    }
    SECTION("unknown section") {
        CHECK_THROWS_MATCHES(load_config(base + "[wieghts]\n"), ConfigError,
                             Catch::Matchers::MessageMatches(ContainsSubstring("line 3") &&
                                                             ContainsSubstring("[wieghts]")));
    }
    SECTION("bad number names key and value") {
        CHECK_THROWS_MATCHES(load_config(base + "[weights]\nlambda_beta = soft\n"), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("weights.lambda_beta") &&
                                 ContainsSubstring("soft")));
    }
    SECTION("column points at the value") {
        try {
            load_config(base + "[weights]\nlambda_beta = soft\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK_THAT(e.what(), ContainsSubstring("line 4, col 15"));
        }
    }
    SECTION("duplicate key") {
        CHECK_THROWS_MATCHES(
            load_config(base + "[weights]\nlambda_beta = 1\nlambda_beta = 2\n"), ConfigError,
            Catch::Matchers::MessageMatches(ContainsSubstring("duplicate key") &&
                                            ContainsSubstring("weights.lambda_beta")));
    }
    SECTION("duplicate section") {
        CHECK_THROWS_MATCHES(load_config(base + "[run]\n"), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("duplicate section") &&
                                 ContainsSubstring("[run]")));
    }
    SECTION("key outside any section") {
        CHECK_THROWS_MATCHES(load_config("version = 1\n"), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("outside any [section]")));
    }
    SECTION("unterminated section header") {
        CHECK_THROWS_MATCHES(load_config("[run\n"), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("unterminated")));
    }
    SECTION("line without equals sign") {
        CHECK_THROWS_MATCHES(load_config(base + "lambda_beta\n"), ConfigError,
                             Catch::Matchers::MessageMatches(ContainsSubstring("line 3")));
    }
}

TEST_CASE("schema version is required and checked") {
    CHECK_THROWS_MATCHES(load_config("[run]\nthreads = 2\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("run.version")));
    CHECK_THROWS_MATCHES(load_config("[run]\nversion = 2\n"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("unsupported config version 2")));
}

TEST_CASE("overrides rewrite single keys and pass through full validation") {
    const std::string text = default_config_text();

    SECTION("values land in the right fields") {
        const RunConfig c = load_config(
            text, {"stage2.learning_rate=0.01", "scenario.frames=10", "run.threads=4",
                   "fit.scale_placement=body"});
        CHECK(c.schedule[1].learning_rate == 0.01);
        CHECK(c.scenario.frames == 10);
        CHECK(c.threads == 4);
        CHECK(c.scale_placement == energy::ScalePlacement::BodyFrame);
    }
    SECTION("unknown key through an override is still rejected") {
        CHECK_THROWS_MATCHES(load_config(text, {"weights.lambda_bogus=1"}), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("--set override") &&
                                 ContainsSubstring("weights.lambda_bogus")));
    }
    SECTION("unknown section through an override is rejected") {
        CHECK_THROWS_MATCHES(load_config(text, {"bogus.key=1"}), ConfigError,
                             Catch::Matchers::MessageMatches(ContainsSubstring("[bogus]")));
    }
    SECTION("malformed override specs") {
        CHECK_THROWS_MATCHES(load_config(text, {"weights.lambda_beta"}), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("section.key=value")));
        CHECK_THROWS_MATCHES(load_config(text, {"lambda_beta=1"}), ConfigError,
                             Catch::Matchers::MessageMatches(
                                 ContainsSubstring("section.key=value")));
    }
    SECTION("override of a bad value reports the override, not a line") {
        try {
            load_config(text, {"scenario.frames=many"});
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK_THAT(e.what(), ContainsSubstring("--set override"));
            CHECK_THAT(e.what(), ContainsSubstring("scenario.frames"));
        }
    }
}

TEST_CASE("stage count controls which stage sections exist") {
    const std::string base = "[run]\nversion = 1\n";

    SECTION("stages = 1 keeps the first default stage only") {
        const RunConfig c = load_config(base + "[schedule]\nstages = 1\n");
        REQUIRE(c.schedule.size() == 1);
        CHECK(c.schedule[0].name == "stage1");
        CHECK(c.schedule[0].anneal_phases == std::vector<double>{0.0, 0.5, 1.0});
        CHECK_FALSE(c.schedule[0].free.scale);
    }
    SECTION("stage section beyond the count is an error") {
        CHECK_THROWS_MATCHES(
            load_config(base + "[schedule]\nstages = 1\n[stage2]\nlearning_rate = 0.1\n"),
            ConfigError,
            Catch::Matchers::MessageMatches(ContainsSubstring("[stage2]") &&
                                            ContainsSubstring("schedule.stages = 1")));
    }
    SECTION("stages beyond the default three start from plain defaults") {
        const RunConfig c = load_config(base + "[schedule]\nstages = 5\n");
        REQUIRE(c.schedule.size() == 5);
        CHECK(c.schedule[4].name == "stage5");
        CHECK(c.schedule[4].anneal_phases == std::vector<double>{1.0});
        CHECK(c.schedule[4].free.beta);
        CHECK_FALSE(c.schedule[4].free.scale);
    }
    SECTION("stages must be at least one") {
        CHECK_THROWS_MATCHES(load_config(base + "[schedule]\nstages = 0\n"), ConfigError,
                             Catch::Matchers::MessageMatches(ContainsSubstring("stages")));
    }
    SECTION("non-numeric stage suffix is an unknown section") {
        CHECK_THROWS_MATCHES(load_config(base + "[stagex]\n"), ConfigError,
                             Catch::Matchers::MessageMatches(ContainsSubstring("[stagex]")));
    }
}

TEST_CASE("free-set values parse and reject bad blocks") {
    const std::string base = "[run]\nversion = 1\n[stage1]\n";

    const RunConfig c = load_config(base + "free = scale, cameras\n");
    CHECK_FALSE(c.schedule[0].free.beta);
    CHECK_FALSE(c.schedule[0].free.theta);
    CHECK_FALSE(c.schedule[0].free.root);
    CHECK(c.schedule[0].free.cam_pose);
    CHECK(c.schedule[0].free.scale);

    CHECK_THROWS_MATCHES(load_config(base + "free = beta, legs\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("legs")));
    CHECK_THROWS_MATCHES(load_config(base + "free =\n"), ConfigError,
                         Catch::Matchers::MessageMatches(
                             ContainsSubstring("at least one block")));
}

TEST_CASE("scenario cross-field validation is surfaced as a config error") {
    CHECK_THROWS_MATCHES(load_config("[run]\nversion = 1\n[scenario]\nframes = 2\n"),
                         ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("at least 3 frames")));
    CHECK_THROWS_MATCHES(load_config("[run]\nversion = 1\n[scenario]\ndropout = 1.5\n"),
                         ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("dropout")));
}

TEST_CASE("range checks on fitter keys") {
    const std::string base = "[run]\nversion = 1\n";
    CHECK_THROWS_MATCHES(load_config(base + "[kernels]\nsigma_joint = 0\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("sigma_joint")));
    CHECK_THROWS_MATCHES(load_config(base + "[run2]\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("[run2]")));
    CHECK_THROWS_MATCHES(load_config(base + "[stage1]\nlearning_rate = -0.1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("learning_rate")));
    CHECK_THROWS_MATCHES(load_config(base + "[fit]\nconsolidate_after = -2\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("consolidate_after")));
    CHECK_THROWS_MATCHES(load_config(base + "[fit]\nscale_seek = maybe\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("scale_seek") &&
                                                         ContainsSubstring("maybe")));
    CHECK_FALSE(load_config(base + "[fit]\nscale_seek = false\n").scale_seek);
    CHECK_THROWS_MATCHES(load_config(base + "[run]x", {}), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unterminated")));
}

TEST_CASE("pipeline conversion carries every tunable across") {
    RunConfig c;
    c.sigma_joint = 50.0;
    c.sigma_contact = 0.4;
    c.sigma_temporal = 0.05;
    c.lambda_beta = 0.02;
    c.lambda_theta = 0.3;
    c.consolidate_after = -1;
    c.threads = 3;
    c.scale_placement = energy::ScalePlacement::BodyFrame;
    c.schedule[0].inner_steps = 7;

    const opt::PipelineConfig p = to_pipeline(c);
    CHECK(p.kernels.joint.sigma == 50.0);
    CHECK(p.kernels.contact.sigma == 0.4);
    CHECK(p.kernels.temporal.sigma == 0.05);
    CHECK(p.lambda_beta == 0.02);
    CHECK(p.lambda_theta == 0.3);
    CHECK(p.consolidate_after == -1);
    CHECK(p.threads == 3);
    CHECK(p.scale_placement == energy::ScalePlacement::BodyFrame);
    CHECK(p.schedule[0].inner_steps == 7);

    c.threads = 0;
    CHECK(to_pipeline(c).threads >= 1);
}

TEST_CASE("config file loading reports unreadable paths") {
    CHECK_THROWS_AS(load_config_file("/nonexistent/egofit.ini"), ConfigError);
}

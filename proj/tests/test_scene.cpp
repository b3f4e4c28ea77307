#include "egofit/scene.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <limits>
#include <random>
#include <sstream>

using namespace egofit;
using namespace egofit::scene;

namespace {

// Exhaustive nearest vertex with the same tie rule (lowest id wins).
NearestResult brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
    NearestResult best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
        const double d2 = (pts[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = {i, pts[i], std::sqrt(d2)};
        }
    }
    return best;
}

std::vector<Vec3> random_points(std::mt19937& rng, int n, double span) {
    std::uniform_real_distribution<double> d(-span, span);
    std::vector<Vec3> out(n);
    for (auto& p : out) p = Vec3(d(rng), d(rng), d(rng));
    return out;
}

} // namespace

TEST_CASE("nearest queries agree with the exhaustive scan") {
    std::mt19937 rng(211);
    for (const int n : {1, 2, 12, 13, 50, 400}) {
        SceneMesh mesh;
        mesh.vertices = random_points(rng, n, 4.0);
        const SpatialIndex index(mesh);
        REQUIRE(index.size() == static_cast<size_t>(n));
        for (int q = 0; q < 200; ++q) {
            const Vec3 query = random_points(rng, 1, 6.0)[0];
            const auto got = index.nearest(query);
            const auto expected = brute_nearest(mesh.vertices, query);
            REQUIRE(got.index == expected.index);
            REQUIRE(got.distance == Catch::Approx(expected.distance).margin(1e-12));
            REQUIRE((got.vertex - expected.vertex).norm() == 0.0);
        }
    }
}

TEST_CASE("equidistant vertices resolve to the lowest id") {
    SceneMesh mesh;
    // a symmetric cross around the origin: all four at distance 1
    mesh.vertices = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0)};
    const SpatialIndex index(mesh);
    const auto got = index.nearest(Vec3::Zero());
    REQUIRE(got.index == 0);
    REQUIRE(got.distance == Catch::Approx(1.0));

    // duplicated vertices: the earliest copy wins
    SceneMesh dup;
    dup.vertices = {Vec3(5, 5, 5), Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(1, 1, 1)};
    const SpatialIndex index2(dup);
    REQUIRE(index2.nearest(Vec3(1.1, 1, 1)).index == 1);
}

TEST_CASE("ties across the split plane still pick the lowest id") {
    // many duplicated coordinates force equal distances across subtrees
    SceneMesh mesh;
    std::mt19937 rng(223);
    std::uniform_int_distribution<int> coord(-2, 2);
    for (int i = 0; i < 300; ++i)
        mesh.vertices.push_back(Vec3(coord(rng), coord(rng), coord(rng)));
    const SpatialIndex index(mesh);
    std::uniform_real_distribution<double> qd(-2.5, 2.5);
    for (int q = 0; q < 400; ++q) {
        const Vec3 query(coord(rng), qd(rng), coord(rng));
        const auto got = index.nearest(query);
        const auto expected = brute_nearest(mesh.vertices, query);
        REQUIRE(got.index == expected.index);
    }
}

TEST_CASE("index stores every vertex exactly once") {
    std::mt19937 rng(227);
    SceneMesh mesh;
    mesh.vertices = random_points(rng, 97, 3.0);
    const SpatialIndex index(mesh);
    auto ids = index.stored_ids();
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 97; ++i) REQUIRE(ids[i] == i);
    for (int i = 0; i < 97; ++i)
        REQUIRE((index.stored_point(i) - mesh.vertices[i]).norm() == 0.0);
}

TEST_CASE("empty meshes are rejected") {
    SceneMesh mesh;
    REQUIRE_THROWS_AS(mesh.validate(), EmptyMeshError);
    REQUIRE_THROWS_AS(SpatialIndex(mesh), EmptyMeshError);
}

TEST_CASE("obj io round-trips vertices and faces exactly") {
    SceneMesh mesh;
    std::mt19937 rng(229);
    mesh.vertices = random_points(rng, 40, 2.0);
    mesh.vertices.push_back(Vec3(0.1, -1.0 / 3.0, 1e-17));
    for (int i = 0; i + 2 < 41; i += 3) mesh.faces.push_back({i, i + 1, i + 2});

    std::stringstream buf;
    write_obj(buf, mesh);
    const SceneMesh back = read_obj(buf);
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.faces == mesh.faces);
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
        REQUIRE((back.vertices[i] - mesh.vertices[i]).norm() == 0.0); // %.17g is lossless
}

TEST_CASE("obj parser reads the common dialect") {
    std::stringstream in(
        "# comment\n"
        "o box\n"
        "v 0 0 0\n"
        "v 1 0 0\n"
        "v 0 1 0\n"
        "vn 0 0 1\n"
        "vt 0.5 0.5\n"
        "s off\n"
        "f 1/1/1 2/2/1 3/3/1\n");
    const SceneMesh mesh = read_obj(in);
    REQUIRE(mesh.vertices.size() == 3);
    REQUIRE(mesh.faces.size() == 1);
    REQUIRE(mesh.faces[0] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("obj parser reports the offending line") {
    std::stringstream bad_vertex("v 0 0 0\nv 1 oops 0\n");
    try {
        read_obj(bad_vertex);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }

    std::stringstream short_face("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n");
    try {
        read_obj(short_face);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("line 4") != std::string::npos);
    }
}

TEST_CASE("face indices out of range fail validation") {
    std::stringstream in("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n");
    REQUIRE_THROWS_AS(read_obj(in), std::invalid_argument);
}

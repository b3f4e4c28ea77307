#pragma once

// Scene mesh container, ASCII OBJ io and an exact nearest-vertex index.

#include "egofit/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace egofit::scene {

struct EmptyMeshError : std::runtime_error {
    EmptyMeshError() : std::runtime_error("scene mesh has no vertices") {}
};

struct SceneMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces; // 0-based here; OBJ io shifts by one

    void validate() const {
        if (vertices.empty()) throw EmptyMeshError{};
        for (const auto& v : vertices)
            if (!v.allFinite()) throw std::invalid_argument("scene mesh has non-finite vertex");
        const int n = static_cast<int>(vertices.size());
        for (const auto& f : faces)
            for (int idx : f)
                if (idx < 0 || idx >= n) throw std::invalid_argument("scene mesh face index out of range");
    }
};

inline SceneMesh read_obj(std::istream& in) {
    SceneMesh mesh;
    std::string line;
    int line_no = 0;
    auto fail = [&line_no](const std::string& what) {
        throw std::runtime_error("obj parse error at line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z())) fail("bad vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ls >> tok)) fail("face needs three indices");
                f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            mesh.faces.push_back(f);
        }
        // other obj records (vn, vt, o, g, s, ...) are ignored
    }
    mesh.validate();
    return mesh;
}

inline SceneMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open obj file: " + path);
    return read_obj(in);
}

inline void write_obj(std::ostream& out, const SceneMesh& mesh) {
    char buf[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& f : mesh.faces)
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline void save_obj(const std::string& path, const SceneMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write obj file: " + path);
    write_obj(out, mesh);
}

struct NearestResult {
    int index = -1;
    Vec3 vertex = Vec3::Zero();
    double distance = std::numeric_limits<double>::infinity();
};

// kd-tree over the mesh vertices. Queries are exact; equal distances
// resolve to the lowest vertex id. Immutable after construction.
class SpatialIndex {
public:
    explicit SpatialIndex(const SceneMesh& mesh) : pts_(mesh.vertices) {
        if (pts_.empty()) throw EmptyMeshError{};
        order_.resize(pts_.size());
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * pts_.size() / kLeafSize + 4);
        root_ = build(0, static_cast<int>(pts_.size()));
    }

    size_t size() const { return pts_.size(); }

    NearestResult nearest(const Vec3& q) const {
        Best best;
        search(root_, q, best);
        return {best.id, pts_[best.id], std::sqrt(best.d2)};
    }

    const Vec3& stored_point(int id) const { return pts_[id]; }

    // ids stored by the tree, each vertex exactly once
    const std::vector<int>& stored_ids() const { return order_; }

private:
    static constexpr int kLeafSize = 12;

    struct Node {
        int axis = -1;          // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0; // leaf range into order_
    };

    struct Best {
        double d2 = std::numeric_limits<double>::infinity();
        int id = std::numeric_limits<int>::max();
    };

    int build(int begin, int end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<int>(nodes_.size()) - 1;
        }
        Vec3 lo = pts_[order_[begin]], hi = lo;
        for (int i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(pts_[order_[i]]);
            hi = hi.cwiseMax(pts_[order_[i]]);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [this, axis](int a, int b) {
                             const double ca = pts_[a][axis], cb = pts_[b][axis];
                             return ca < cb || (ca == cb && a < b);
                         });
        node.axis = axis;
        node.split = pts_[order_[mid]][axis];
        nodes_.push_back(node);
        const int self = static_cast<int>(nodes_.size()) - 1;
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void search(int node_id, const Vec3& q, Best& best) const {
        const Node& node = nodes_[node_id];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int id = order_[i];
                const double d2 = (pts_[id] - q).squaredNorm();
                if (d2 < best.d2 || (d2 == best.d2 && id < best.id)) {
                    best.d2 = d2;
                    best.id = id;
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, q, best);
        // <= keeps equal-distance candidates reachable for the id tie rule
        if (delta * delta <= best.d2) search(far, q, best);
    }

    std::vector<Vec3> pts_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

inline SpatialIndex build_index(const SceneMesh& mesh) { return SpatialIndex(mesh); }

} // namespace egofit::scene

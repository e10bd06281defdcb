#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include "sfpt/error.hpp"

namespace sfpt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<int, 3>;
using Edge = std::pair<int, int>;
using SparseOp = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Triangle mesh. Vertices are in model units, faces index into `vertices`.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::string name;

    std::size_t num_vertices() const noexcept { return vertices.size(); }
    std::size_t num_faces() const noexcept { return faces.size(); }
};

/// Throws InvalidArgument when the mesh breaks one of the Mesh invariants.
inline void validate(const Mesh& mesh) {
    const auto n = static_cast<long>(mesh.vertices.size());
    if (n < 3) throw InvalidArgument("mesh needs at least 3 vertices");
    if (mesh.faces.empty()) throw InvalidArgument("mesh has no faces");
    for (const auto& f : mesh.faces) {
        for (int idx : f) {
            if (idx < 0 || idx >= n) throw InvalidArgument("face index out of range");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
            throw InvalidArgument("face references the same vertex twice");
        }
    }
}

inline bool same_topology(const Mesh& a, const Mesh& b) {
    return a.vertices.size() == b.vertices.size() && a.faces == b.faces;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline double parse_double(std::string_view tok, std::size_t line_no) {
    // strtod accepts forms from_chars rejects on some toolchains (leading '+').
    std::string s(tok);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ParseError("bad number '" + s + "'", line_no);
    return v;
}

inline long parse_long(std::string_view tok, std::size_t line_no) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("bad integer '" + std::string(tok) + "'", line_no);
    }
    return v;
}

}  // namespace detail

/// Parses the OBJ subset: `v`, `f` (fan-triangulated, `/` attributes ignored).
/// `vn` and every other record are skipped; normals are recomputed on demand.
inline Mesh parse_obj(std::istream& in, std::string name = {}) {
    Mesh mesh;
    mesh.name = std::move(name);
    struct RawFace {
        std::vector<long> idx;
        std::size_t line;
    };
    std::vector<RawFace> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto toks = detail::split_ws(line);
        if (toks.empty() || toks[0].front() == '#') continue;
        if (toks[0] == "v") {
            if (toks.size() < 4) throw ParseError("vertex needs 3 coordinates", line_no);
            mesh.vertices.emplace_back(detail::parse_double(toks[1], line_no),
                                       detail::parse_double(toks[2], line_no),
                                       detail::parse_double(toks[3], line_no));
        } else if (toks[0] == "f") {
            if (toks.size() < 4) throw ParseError("face needs at least 3 vertices", line_no);
            RawFace f{{}, line_no};
            for (std::size_t t = 1; t < toks.size(); ++t) {
                auto tok = toks[t];
                tok = tok.substr(0, tok.find('/'));
                long v = detail::parse_long(tok, line_no);
                if (v == 0) throw ParseError("face index 0 is invalid", line_no);
                // Negative indices are relative to the vertices read so far.
                if (v < 0) v = static_cast<long>(mesh.vertices.size()) + v + 1;
                f.idx.push_back(v - 1);
            }
            raw.push_back(std::move(f));
        }
    }
    const auto n = static_cast<long>(mesh.vertices.size());
    for (const auto& f : raw) {
        for (long v : f.idx) {
            if (v < 0 || v >= n) throw ParseError("face index out of range", f.line);
        }
        for (std::size_t k = 1; k + 1 < f.idx.size(); ++k) {
            Face tri{static_cast<int>(f.idx[0]), static_cast<int>(f.idx[k]),
                     static_cast<int>(f.idx[k + 1])};
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) {
                throw ParseError("face references the same vertex twice", f.line);
            }
            mesh.faces.push_back(tri);
        }
    }
    if (mesh.vertices.size() < 3) throw ParseError("mesh needs at least 3 vertices");
    if (mesh.faces.empty()) throw ParseError("mesh has no faces");
    return mesh;
}

inline Mesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return parse_obj(in, path);
}

/// Optional per-vertex RGB colors are written as the `v x y z r g b` extension.
inline void write_obj(std::ostream& out, const Mesh& mesh,
                      const std::vector<Vec3>* colors = nullptr) {
    validate(mesh);
    if (colors && colors->size() != mesh.vertices.size()) {
        throw DimensionError("one color per vertex required");
    }
    char buf[160];
    if (!mesh.name.empty()) out << "# " << mesh.name << '\n';
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& v = mesh.vertices[i];
        int len = std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g", v.x(), v.y(), v.z());
        out.write(buf, len);
        if (colors) {
            const auto& c = (*colors)[i];
            len = std::snprintf(buf, sizeof buf, " %.4f %.4f %.4f", c.x(), c.y(), c.z());
            out.write(buf, len);
        }
        out << '\n';
    }
    for (const auto& f : mesh.faces) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
}

inline void save_obj(const Mesh& mesh, const std::string& path,
                     const std::vector<Vec3>* colors = nullptr) {
    validate(mesh);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_obj(out, mesh, colors);
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

/// Area-weighted vertex normals; vertices without a non-degenerate incident
/// face get the zero vector.
inline std::vector<Vec3> vertex_normals(const Mesh& mesh) {
    std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3& b = mesh.vertices[f[1]];
        const Vec3& c = mesh.vertices[f[2]];
        // |cross| is twice the area, so summing raw cross products area-weights.
        const Vec3 n = (b - a).cross(c - a);
        for (int idx : f) acc[idx] += n;
    }
    for (auto& n : acc) {
        const double len = n.norm();
        n = len > 1e-300 ? Vec3(n / len) : Vec3::Zero();
    }
    return acc;
}

/// N×6 row-major matrix: position then unit normal.
using VertexFeatures = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

inline VertexFeatures vertex_features(const Mesh& mesh) {
    const auto normals = vertex_normals(mesh);
    VertexFeatures f(static_cast<Eigen::Index>(mesh.vertices.size()), 6);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        f.block<1, 3>(r, 0) = mesh.vertices[i].transpose();
        f.block<1, 3>(r, 3) = normals[i].transpose();
    }
    return f;
}

/// Undirected, deduplicated edges (i < j), sorted.
inline std::vector<Edge> edge_set(const Mesh& mesh) {
    std::vector<Edge> edges;
    edges.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int s = 0; s < 3; ++s) {
            int a = f[s];
            int b = f[(s + 1) % 3];
            if (a > b) std::swap(a, b);
            edges.emplace_back(a, b);
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

/// Row-normalized adjacency with self loops, A = D^{-1}(Adj + I).
struct GraphOperator {
    SparseOp matrix;
    std::vector<Edge> edges;
};

inline GraphOperator graph_operator(const Mesh& mesh) {
    GraphOperator g;
    g.edges = edge_set(mesh);
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    std::vector<int> degree(mesh.vertices.size(), 1);
    for (const auto& [a, b] : g.edges) {
        ++degree[a];
        ++degree[b];
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.edges.size() * 2 + mesh.vertices.size());
    for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0 / degree[i]);
    for (const auto& [a, b] : g.edges) {
        trip.emplace_back(a, b, 1.0 / degree[a]);
        trip.emplace_back(b, a, 1.0 / degree[b]);
    }
    g.matrix.resize(n, n);
    g.matrix.setFromTriplets(trip.begin(), trip.end());
    g.matrix.makeCompressed();
    return g;
}

/// Axis-aligned bounding box extent along y.
inline double mesh_height(const Mesh& mesh) {
    double lo = mesh.vertices.front().y();
    double hi = lo;
    for (const auto& v : mesh.vertices) {
        lo = std::min(lo, v.y());
        hi = std::max(hi, v.y());
    }
    return hi - lo;
}

/// Similarity that maps a rest mesh to unit height centered at the origin.
struct Normalization {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;  // multiply after subtracting center

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 invert(const Vec3& p) const { return p / scale + center; }

    Mesh apply(const Mesh& m) const {
        Mesh out = m;
        for (auto& v : out.vertices) v = apply(v);
        return out;
    }
    Mesh invert(const Mesh& m) const {
        Mesh out = m;
        for (auto& v : out.vertices) v = invert(v);
        return out;
    }
};

inline Normalization unit_height_normalization(const Mesh& rest) {
    Vec3 lo = rest.vertices.front();
    Vec3 hi = lo;
    for (const auto& v : rest.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    Normalization n;
    n.center = 0.5 * (lo + hi);
    const double h = hi.y() - lo.y();
    if (!(h > 0)) throw InvalidArgument("mesh has zero height");
    n.scale = 1.0 / h;
    return n;
}

}  // namespace sfpt

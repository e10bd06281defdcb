#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "sfpt/error.hpp"
#include "sfpt/mesh.hpp"

namespace sfpt {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N×K row-stochastic matrix; row i binds vertex i to the K deformation parts.
using SkinningWeights = RowMatrix;

/// Parts whose total weight falls below this are degenerate.
inline constexpr double kCoverageEpsilon = 1e-8;
inline constexpr int kDefaultParts = 40;

/// Partition-of-unity check. Columns may be all zero.
inline bool is_partition_of_unity(const SkinningWeights& w, double tol = 1e-6) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double s = 0;
        for (Eigen::Index k = 0; k < w.cols(); ++k) {
            const double v = w(i, k);
            if (v < -tol || v > 1 + tol) return false;
            s += v;
        }
        if (std::abs(s - 1) > tol) return false;
    }
    return true;
}

struct PartCenters {
    std::vector<Vec3> centers;
    std::vector<double> coverage;

    bool degenerate(std::size_t k) const { return coverage[k] < kCoverageEpsilon; }
    std::size_t size() const noexcept { return centers.size(); }
};

/// T(x) = R x + t. The pose-neutral transform of part k is (I, C_k).
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 operator()(const Vec3& x) const { return rotation * x + translation; }
};

using PartTransforms = std::vector<RigidTransform>;

inline void check_rows(const Mesh& mesh, const SkinningWeights& w) {
    if (static_cast<std::size_t>(w.rows()) != mesh.vertices.size()) {
        throw DimensionError("skinning rows (" + std::to_string(w.rows()) +
                             ") do not match vertex count (" +
                             std::to_string(mesh.vertices.size()) + ")");
    }
}

/// C_k = sum_i w_ik V_i / sum_i w_ik; degenerate parts get the origin.
inline PartCenters part_centers(const Mesh& rest, const SkinningWeights& w) {
    check_rows(rest, w);
    const auto parts = static_cast<std::size_t>(w.cols());
    PartCenters pc{std::vector<Vec3>(parts, Vec3::Zero()), std::vector<double>(parts, 0.0)};
    for (std::size_t i = 0; i < rest.vertices.size(); ++i) {
        for (std::size_t k = 0; k < parts; ++k) {
            const double wik = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            pc.coverage[k] += wik;
            pc.centers[k] += wik * rest.vertices[i];
        }
    }
    for (std::size_t k = 0; k < parts; ++k) {
        pc.centers[k] = pc.degenerate(k) ? Vec3::Zero() : Vec3(pc.centers[k] / pc.coverage[k]);
    }
    return pc;
}

/// Transforms that leave the rest mesh in place: (I, C_k) for every part.
inline PartTransforms rest_transforms(const PartCenters& centers) {
    PartTransforms t(centers.size());
    for (std::size_t k = 0; k < centers.size(); ++k) t[k].translation = centers.centers[k];
    return t;
}

/// Linear blend skinning about part centers:
/// V_i = sum_k w_ik (R_k (Vbar_i - C_k) + t_k).
inline Mesh lbs_deform(const Mesh& rest, const SkinningWeights& w, const PartTransforms& t) {
    check_rows(rest, w);
    if (t.size() != static_cast<std::size_t>(w.cols())) {
        throw DimensionError("transform count does not match part count");
    }
    const PartCenters pc = part_centers(rest, w);
    Mesh out = rest;
    for (std::size_t i = 0; i < rest.vertices.size(); ++i) {
        Vec3 acc = Vec3::Zero();
        for (std::size_t k = 0; k < t.size(); ++k) {
            const double wik = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            if (wik == 0.0) continue;
            acc += wik * t[k](rest.vertices[i] - pc.centers[k]);
        }
        out.vertices[i] = acc;
    }
    return out;
}

/// argmax per row, lowest index on ties.
inline std::vector<int> hard_assignment(const SkinningWeights& w) {
    std::vector<int> labels(static_cast<std::size_t>(w.rows()), 0);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < w.cols(); ++k) {
            if (w(i, k) > w(i, best)) best = k;
        }
        labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return labels;
}

inline SkinningWeights one_hot(const std::vector<int>& labels, int parts) {
    SkinningWeights w = SkinningWeights::Zero(static_cast<Eigen::Index>(labels.size()), parts);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= parts) throw InvalidArgument("label out of range");
        w(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return w;
}

/// Rotation R in SO(3) maximizing <R, A>_F, i.e. the proper polar factor of A.
/// Rank-deficient inputs: rank 0 gives I; rank 1 gives the smallest rotation
/// carrying the right singular direction onto the left one.
inline Mat3 best_rotation(const Mat3& a) {
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 s = svd.singularValues();
    if (!(s(0) > 1e-300)) return Mat3::Identity();
    if (s(1) <= 1e-10 * s(0)) {
        const Vec3 u = svd.matrixU().col(0);
        const Vec3 v = svd.matrixV().col(0);
        return Eigen::Quaterniond::FromTwoVectors(v, u).toRotationMatrix();
    }
    const Mat3& u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    if ((u * v.transpose()).determinant() < 0) d(2, 2) = -1;
    return u * d * v.transpose();
}

/// Weighted Kabsch fit of every part: min sum_i w_ik |R(Vbar_i - C_k) + t - V_i|^2.
/// The optimal translation is the weighted centroid of the posed points.
inline PartTransforms estimate_part_transforms(const Mesh& rest, const Mesh& posed,
                                               const SkinningWeights& w) {
    check_rows(rest, w);
    if (rest.vertices.size() != posed.vertices.size()) {
        throw DimensionError("rest and posed meshes differ in vertex count");
    }
    const PartCenters pc = part_centers(rest, w);
    const auto parts = static_cast<std::size_t>(w.cols());
    PartTransforms out = rest_transforms(pc);
    for (std::size_t k = 0; k < parts; ++k) {
        if (pc.degenerate(k)) continue;
        const auto kk = static_cast<Eigen::Index>(k);
        Vec3 target = Vec3::Zero();
        for (std::size_t i = 0; i < rest.vertices.size(); ++i) {
            target += w(static_cast<Eigen::Index>(i), kk) * posed.vertices[i];
        }
        target /= pc.coverage[k];
        Mat3 cov = Mat3::Zero();
        for (std::size_t i = 0; i < rest.vertices.size(); ++i) {
            const double wik = w(static_cast<Eigen::Index>(i), kk);
            if (wik == 0.0) continue;
            cov += wik * (posed.vertices[i] - target) * (rest.vertices[i] - pc.centers[k]).transpose();
        }
        out[k].rotation = best_rotation(cov);
        out[k].translation = target;
    }
    return out;
}

// Flattened layout: row-major rotation (9) followed by translation (3).
inline constexpr int kTransformWidth = 12;

inline std::array<double, 12> flatten(const RigidTransform& t) {
    std::array<double, 12> f{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f[static_cast<std::size_t>(r * 3 + c)] = t.rotation(r, c);
    for (int c = 0; c < 3; ++c) f[static_cast<std::size_t>(9 + c)] = t.translation(c);
    return f;
}

inline RigidTransform unflatten(const double* f) {
    RigidTransform t;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t.rotation(r, c) = f[r * 3 + c];
    for (int c = 0; c < 3; ++c) t.translation(c) = f[9 + c];
    return t;
}

inline RowMatrix flatten(const PartTransforms& ts) {
    RowMatrix m(static_cast<Eigen::Index>(ts.size()), kTransformWidth);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const auto f = flatten(ts[k]);
        for (int c = 0; c < kTransformWidth; ++c) m(static_cast<Eigen::Index>(k), c) = f[static_cast<std::size_t>(c)];
    }
    return m;
}

inline PartTransforms unflatten(const RowMatrix& m) {
    if (m.cols() != kTransformWidth) throw DimensionError("transform rows need 12 values");
    PartTransforms ts(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index k = 0; k < m.rows(); ++k) ts[static_cast<std::size_t>(k)] = unflatten(m.row(k).data());
    return ts;
}

// ---------------------------------------------------------------------------
// Text formats

inline void write_skinning(std::ostream& out, const SkinningWeights& w) {
    out << w.rows() << ' ' << w.cols() << '\n';
    char buf[40];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        for (Eigen::Index k = 0; k < w.cols(); ++k) {
            const int len = std::snprintf(buf, sizeof buf, "%.17g", w(i, k));
            if (k) out << ' ';
            out.write(buf, len);
        }
        out << '\n';
    }
}

inline SkinningWeights read_skinning(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError("empty skinning file", line_no);
    const auto head = detail::split_ws(line);
    if (head.size() != 2) throw ParseError("expected header 'N K'", line_no);
    const long n = detail::parse_long(head[0], line_no);
    const long k = detail::parse_long(head[1], line_no);
    if (n <= 0 || k <= 0) throw ParseError("N and K must be positive", line_no);
    SkinningWeights w(n, k);
    for (long i = 0; i < n; ++i) {
        ++line_no;
        if (!std::getline(in, line)) throw ParseError("missing skinning row", line_no);
        const auto toks = detail::split_ws(line);
        if (static_cast<long>(toks.size()) != k) throw ParseError("expected K values", line_no);
        for (long c = 0; c < k; ++c) w(i, c) = detail::parse_double(toks[static_cast<std::size_t>(c)], line_no);
    }
    return w;
}

inline void write_transforms(std::ostream& out, const PartTransforms& ts) {
    char buf[40];
    for (const auto& t : ts) {
        const auto f = flatten(t);
        for (std::size_t c = 0; c < f.size(); ++c) {
            const int len = std::snprintf(buf, sizeof buf, "%.17g", f[c]);
            if (c) out << ' ';
            out.write(buf, len);
        }
        out << '\n';
    }
}

inline PartTransforms read_transforms(std::istream& in) {
    PartTransforms ts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != kTransformWidth) throw ParseError("expected 12 values", line_no);
        double f[kTransformWidth];
        for (int c = 0; c < kTransformWidth; ++c) f[c] = detail::parse_double(toks[static_cast<std::size_t>(c)], line_no);
        ts.push_back(unflatten(f));
    }
    return ts;
}

inline void save_skinning(const SkinningWeights& w, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_skinning(out, w);
}

inline SkinningWeights load_skinning(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_skinning(in);
}

inline void save_transforms(const PartTransforms& ts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    write_transforms(out, ts);
}

inline PartTransforms load_transforms(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return read_transforms(in);
}

}  // namespace sfpt

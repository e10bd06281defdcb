#pragma once

#include <cmath>
#include <algorithm>
#include <random>
#include <vector>

#include "sfpt/mesh.hpp"

namespace fixtures {

using sfpt::Mesh;
using sfpt::Vec3;

inline Mesh triangle() {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}};
    return m;
}

inline Mesh tetrahedron() {
    Mesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
    return m;
}

// Unit cube, two outward CCW triangles per face.
inline Mesh cube() {
    Mesh m;
    for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

// Closed tube-like grid: `rings` rings of `res` vertices with jitter.
inline Mesh random_tube(int rings, int res, std::uint64_t seed, double jitter = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    Mesh m;
    for (int r = 0; r < rings; ++r)
        for (int k = 0; k < res; ++k) {
            const double th = 2 * 3.14159265358979323846 * k / res;
            m.vertices.emplace_back(0.3 * std::cos(th) + u(rng), 0.25 * r + u(rng), 0.3 * std::sin(th) + u(rng));
        }
    for (int r = 0; r + 1 < rings; ++r)
        for (int k = 0; k < res; ++k) {
            const int a0 = r * res + k, a1 = r * res + (k + 1) % res;
            const int b0 = a0 + res, b1 = a1 + res;
            m.faces.push_back({a0, b1, a1});
            m.faces.push_back({a0, b0, b1});
        }
    return m;
}

inline sfpt::Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

}  // namespace fixtures

#include "sfpt/synthdata.hpp"

namespace fixtures {

// Two-limb, one-segment character with 18 vertices.
inline sfpt::CharacterSample tiny_character(std::uint64_t seed, double limb_scale = 1.0) {
    sfpt::CharacterSpec s;
    s.seed = seed;
    s.limb_count = 2;
    s.segments_per_limb = 1;
    s.ring_resolution = 3;
    s.rings_per_segment = 1;
    for (auto& slot : s.proportions) slot[0].length = limb_scale;
    return sfpt::generate_character(s);
}

inline sfpt::Mesh permuted(const sfpt::Mesh& m, const std::vector<int>& perm) {
    sfpt::Mesh p = m;  // p.vertices[perm[i]] = m.vertices[i]
    for (std::size_t i = 0; i < perm.size(); ++i) p.vertices[static_cast<std::size_t>(perm[i])] = m.vertices[i];
    for (auto& f : p.faces)
        for (auto& v : f) v = perm[static_cast<std::size_t>(v)];
    return p;
}

inline std::vector<int> random_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<int> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

}  // namespace fixtures

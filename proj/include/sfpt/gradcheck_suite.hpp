#pragma once

// Finite-difference checks over every differentiable op, every loss and the
// full transfer pipeline. Shared by the unit tests, the CLI and the
// acceptance run.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfpt/losses.hpp"
#include "sfpt/networks.hpp"
#include "sfpt/synthdata.hpp"

namespace sfpt {

struct GradcheckCase {
    std::string name;
    ad::GradcheckReport report;
    double tolerance = 1e-4;
};

namespace gradcheck_detail {

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(r * c);
    for (auto& x : v) x = u(rng);
    return Tensor::from(r, c, std::move(v), true);
}

// Random projection to a scalar so every output entry is exercised.
inline Tensor project(const Tensor& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xabcdefULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(y.size());
    for (auto& x : v) x = u(rng);
    return ad::sum(y * Tensor::from(y.rows(), y.cols(), std::move(v)));
}

// Two limbs of one segment each: 18 vertices.
inline CharacterSample small_character(std::uint64_t seed, double limb_scale = 1.0) {
    CharacterSpec s;
    s.seed = seed;
    s.limb_count = 2;
    s.segments_per_limb = 1;
    s.ring_resolution = 3;
    s.rings_per_segment = 1;
    for (auto& slot : s.proportions) slot[0].length = limb_scale;
    return generate_character(s);
}

inline void randomize(Tensor& t, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& x : t.mutable_data()) x = u(rng);
}

}  // namespace gradcheck_detail

using GradcheckObjective = std::pair<std::vector<Tensor>, std::function<Tensor()>>;

struct OpCase {
    const char* name;
    // (rng, rows, cols, projection seed) -> inputs and scalar objective
    std::function<GradcheckObjective(std::mt19937_64&, std::size_t, std::size_t, std::uint64_t)> make;
};

inline std::vector<OpCase> op_cases() {
    using gradcheck_detail::project;
    using gradcheck_detail::random_tensor;
    using Made = GradcheckObjective;
    auto g = std::make_shared<SparseOp>(graph_operator(gradcheck_detail::small_character(1).rest).matrix);
    return {
        {"add", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(r, c, rng);
             return {{a, b}, [=] { return project(a + b, s); }};
         }},
        {"sub", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(r, c, rng);
             return {{a, b}, [=] { return project(a - b, s); }};
         }},
        {"mul", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(r, c, rng);
             return {{a, b}, [=] { return project(a * b, s); }};
         }},
        {"div", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(r, c, rng, 0.5, 2.0);
             return {{a, b}, [=] { return project(ad::div(a, b), s); }};
         }},
        {"scale_add_scalar", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] { return project(ad::add_scalar(2.5 * a, -0.3), s); }};
         }},
        {"matmul", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(c, 3, rng);
             return {{a, b}, [=] { return project(ad::matmul(a, b), s); }};
         }},
        {"transpose", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] { return project(ad::transpose(a), s); }};
         }},
        {"sparse_matmul", [g](auto& rng, auto, auto c, auto s) -> Made {
             auto a = random_tensor(static_cast<std::size_t>(g->cols()), c, rng);
             return {{a}, [=] { return project(ad::sparse_matmul(g, a), s); }};
         }},
        {"concat_slice", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), b = random_tensor(r, 2, rng), d = random_tensor(1, c + 2, rng);
             return {{a, b, d}, [=] {
                         const Tensor cat = ad::concat_rows({ad::concat_cols({a, b}), d});
                         return project(ad::slice_rows(ad::slice_cols(cat, 1, c + 1), 0, r), s);
                     }};
         }},
        {"gather_rows", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             std::vector<int> idx{0, static_cast<int>(r - 1), 0};
             return {{a}, [=] { return project(ad::gather_rows(a, idx), s); }};
         }},
        {"reductions", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] {
                         return ad::sum(a) * ad::mean(a) + project(ad::sum_rows(a), s) + project(ad::sum_cols(a), s);
                     }};
         }},
        {"abs", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] { return project(ad::abs(a), s); }};
         }},
        {"leaky_relu", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] { return project(ad::leaky_relu(a, 0.2), s); }};
         }},
        {"log_exp_sqrt", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng, 0.2, 2.0);
             return {{a}, [=] { return project(ad::log(a) + ad::exp(a) + ad::sqrt(a), s); }};
         }},
        {"clamp", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng, -2.0, 2.0);
             return {{a}, [=] { return project(ad::clamp(a, -1.0, 1.0), s); }};
         }},
        {"broadcast", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng), row = random_tensor(1, c, rng), col = random_tensor(r, 1, rng);
             return {{a, row, col}, [=] { return project(ad::mul_col(ad::add_row(a, row), col), s); }};
         }},
        {"softmax_rows", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng, -3.0, 3.0);
             return {{a}, [=] { return project(ad::softmax_rows(a), s); }};
         }},
        {"norm_normalize", [](auto& rng, auto r, auto c, auto s) -> Made {
             auto a = random_tensor(r, c, rng);
             return {{a}, [=] { return project(ad::norm_rows(a), s) + project(ad::normalize_rows(a), s); }};
         }},
        {"row_geometry", [](auto& rng, auto r, auto, auto s) -> Made {
             auto a = random_tensor(r, 3, rng), b = random_tensor(r, 3, rng), m = random_tensor(r, 9, rng);
             return {{a, b, m}, [=] {
                         return project(ad::cross_rows(a, b), s) + project(ad::outer_rows(a, b), s) +
                                project(ad::apply_rows(m, a), s) + project(ad::matmul_rows3(m, ad::outer_rows(a, b)), s);
                     }};
         }},
        {"proper_polar_rows", [](auto& rng, auto r, auto, auto s) -> Made {
             auto a = random_tensor(r, 9, rng);
             return {{a}, [=] { return project(ad::proper_polar_rows(a), s); }};
         }},
    };
}

/// Every op over `shapes_per_op` random shapes (worst case reported), every
/// loss at 1e-4, and the full pipeline plus the cycle objective at 1e-3.
inline std::vector<GradcheckCase> run_gradcheck_suite(int shapes_per_op = 20) {
    using gradcheck_detail::random_tensor;
    std::vector<GradcheckCase> out;
    const auto cases = op_cases();
    for (std::size_t k = 0; k < cases.size(); ++k) {
        GradcheckCase gc{std::string("op/") + cases[k].name, {}, 1e-4};
        for (int s = 0; s < shapes_per_op; ++s) {
            const auto seed = static_cast<std::uint64_t>(s);
            std::mt19937_64 rng(seed * 7919 + k);
            std::uniform_int_distribution<std::size_t> dim(1, 5);
            const std::size_t r = dim(rng) + 1, c = dim(rng);
            auto [inputs, f] = cases[k].make(rng, r, c, seed);
            const auto rep = ad::gradcheck_inputs(f, inputs);
            gc.report.max_relative_error = std::max(gc.report.max_relative_error, rep.max_relative_error);
            gc.report.max_absolute_error = std::max(gc.report.max_absolute_error, rep.max_absolute_error);
            gc.report.checked += rep.checked;
            gc.report.skipped_near_kink += rep.skipped_near_kink;
        }
        gc.report.passed = gc.report.checked > 0 && gc.report.max_relative_error < gc.tolerance;
        out.push_back(std::move(gc));
    }

    auto check = [&](const std::string& name, double tol, const std::function<Tensor()>& f, std::vector<Tensor> in,
                     std::size_t max_coords = 0) {
        ad::GradcheckOptions opt;
        opt.tolerance = tol;
        opt.max_coords_per_tensor = max_coords;
        opt.seed = 19;
        GradcheckCase gc{name, ad::gradcheck_inputs(f, std::move(in), opt), tol};
        gc.report.passed = gc.report.passed && gc.report.checked > 0;
        out.push_back(std::move(gc));
    };

    std::mt19937_64 rng(9);
    const auto c = gradcheck_detail::small_character(11);
    const auto t = gradcheck_detail::small_character(14, 1.1);
    const std::size_t n = c.rest.vertices.size();
    const MeshTopology topo = make_topology(c.rest);
    const Tensor rest = positions_tensor(c.rest);
    const Tensor pred = random_tensor(n, 3, rng), gt = random_tensor(n, 3, rng);
    check("loss/rec", 1e-4, [&] { return loss_rec(pred, gt); }, {pred});
    check("loss/edge", 1e-4, [&] { return loss_edge(pred, rest, topo); }, {pred});

    const Tensor logits = random_tensor(n, 4, rng, -2.0, 2.0);
    check("loss/skin", 1e-4, [&] { return loss_skin(ad::softmax_rows(logits), c.gt_skinning, 64, 3); }, {logits});

    const Mesh posed = pose_character(c, random_pose(12, 0.6));
    const Tensor rot = random_tensor(3, 9, rng), trans = random_tensor(3, 3, rng);
    const Tensor labels = Tensor::from_matrix(one_hot(hard_assignment(c.gt_skinning), 3));
    check("loss/trans", 1e-4, [&] { return loss_trans(ad::concat_cols({rot, trans}), c.rest, posed, labels); },
          {rot, trans});

    ModelParams model = init_model(ModelConfig{}, 13);
    // Large enough residual output that no L1 residual sits near zero.
    gradcheck_detail::randomize(model.decoder.layers.back().weight, rng, 0.3);
    gradcheck_detail::randomize(model.decoder.layers.back().bias, rng, 0.05);
    const PreparedMesh ps = prepare(unit_height_normalization(c.rest).apply(c.rest));
    const PreparedMesh pt = prepare(unit_height_normalization(t.rest).apply(t.rest));
    const Tensor sp = positions_tensor(unit_height_normalization(c.rest).apply(posed));
    const Tensor goal = positions_tensor(unit_height_normalization(t.rest).apply(pose_character(t, random_pose(12, 0.6))));
    check("pipeline/pose_transfer", 1e-3, [&] { return loss_rec(pose_transfer(model, sp, ps, pt).vertices, goal); },
          model.parameters(), 4);

    // The pseudo target is a stop-gradient constant, so finite differences
    // must see it frozen too.
    const Tensor pseudo_gt = [&] {
        const auto cyc = loss_cycle(model, sp, ps, encode_rest(model, ps), pt, encode_rest(model, pt));
        return lbs(pt.positions, cyc.forward.target_skinning, cyc.forward.source_transforms).detach();
    }();
    check("loss/cycle", 1e-3,
          [&] {
              const auto cyc = loss_cycle(model, sp, ps, encode_rest(model, ps), pt, encode_rest(model, pt), false);
              return cyc.cycle + ad::scale(loss_rec(cyc.forward.vertices, pseudo_gt), 0.3);
          },
          model.parameters(), 3);
    return out;
}

}  // namespace sfpt

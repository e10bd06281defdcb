#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "sfpt/articulation.hpp"
#include "sfpt/autodiff.hpp"
#include "sfpt/networks.hpp"

namespace sfpt {

struct LossWeights {
    double rec = 1.0;
    double trans = 1.0;
    double cycle = 1.0;
    double skin = 0.1;
    double edge = 0.5;
    double pseudo = 0.3;  // w_pseudo inside the cycle objective
};

inline constexpr double kSkinSelectThreshold = 0.9;
inline constexpr double kSkinLogFloor = 1e-8;
inline constexpr double kSkinNegativeClamp = 5.0;

/// Mean absolute per-coordinate error.
inline Tensor loss_rec(const Tensor& pred, const Tensor& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw DimensionError("loss_rec: size mismatch");
    return ad::mean(ad::abs(pred - gt));
}

/// Ground-truth part transforms from hard (argmax) parts of `skinning`:
/// unweighted Kabsch per part between rest and posed. Parts with fewer than
/// three vertices are reported in `valid` as false.
///
/// The fit is re-expressed about the centers of `skinning` itself, the
/// pivots that LBS uses with these weights, so an unposed mesh yields the
/// pose-neutral (I, C_k).
struct HardPartTransforms {
    PartTransforms transforms;
    std::vector<bool> valid;
};

inline HardPartTransforms hard_part_transforms(const Mesh& rest, const Mesh& posed, const SkinningWeights& skinning) {
    const auto labels = hard_assignment(skinning);
    const int parts = static_cast<int>(skinning.cols());
    std::vector<int> counts(static_cast<std::size_t>(parts), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    const SkinningWeights hard = one_hot(labels, parts);
    const PartCenters hard_c = part_centers(rest, hard), soft_c = part_centers(rest, skinning);
    HardPartTransforms h;
    h.transforms = estimate_part_transforms(rest, posed, hard);
    for (std::size_t k = 0; k < h.transforms.size(); ++k) {
        auto& t = h.transforms[k];
        if (!hard_c.degenerate(k) && !soft_c.degenerate(k))
            t.translation += t.rotation * (soft_c.centers[k] - hard_c.centers[k]);
        h.valid.push_back(counts[k] >= 3);
    }
    return h;
}

/// Mean L1 over the 12 flattened entries of every part with >= 3 assigned
/// vertices. Returns an undefined tensor when no part qualifies.
inline Tensor loss_trans(const Tensor& pred_transforms, const Mesh& rest, const Mesh& gt_posed,
                         const Tensor& target_skinning) {
    const HardPartTransforms gt = hard_part_transforms(rest, gt_posed, to_skinning(target_skinning));
    if (gt.transforms.size() != pred_transforms.rows()) throw DimensionError("loss_trans: part count mismatch");
    std::vector<int> rows;
    std::vector<double> target;
    for (std::size_t k = 0; k < gt.transforms.size(); ++k) {
        if (!gt.valid[k]) continue;
        rows.push_back(static_cast<int>(k));
        const auto f = flatten(gt.transforms[k]);
        target.insert(target.end(), f.begin(), f.end());
    }
    if (rows.empty()) return {};
    const std::size_t n = rows.size();
    const Tensor picked = ad::gather_rows(pred_transforms, std::move(rows));
    return ad::mean(ad::abs(picked - Tensor::from(n, kTransformWidth, std::move(target))));
}

/// Mean over edges of | |pred_i - pred_j| - |rest_i - rest_j| |.
inline Tensor loss_edge(const Tensor& pred, const Tensor& rest, const MeshTopology& topo) {
    if (pred.rows() != rest.rows() || pred.rows() != topo.num_vertices) throw DimensionError("loss_edge: size mismatch");
    auto lengths = [&](const Tensor& x) {
        return ad::norm_rows(ad::gather_rows(x, topo.edge_a) - ad::gather_rows(x, topo.edge_b));
    };
    const Tensor rest_len = lengths(rest.detach());
    return ad::mean(ad::abs(lengths(pred) - rest_len));
}

/// Contrastive KL between sampled vertex pairs. Candidates are vertices
/// whose ground-truth row peaks above 0.9; gamma is +1 for same GT part and
/// -1 otherwise. Each pair contributes max(gamma * KL(w_i || w_j), -5).
/// Returns zero when fewer than two candidates exist.
inline Tensor loss_skin(const Tensor& predicted, const SkinningWeights& gt, int pairs, std::uint64_t seed) {
    if (static_cast<std::size_t>(gt.rows()) != predicted.rows()) throw DimensionError("loss_skin: row mismatch");
    std::vector<int> candidates;
    std::vector<int> gt_label(static_cast<std::size_t>(gt.rows()), -1);
    for (Eigen::Index i = 0; i < gt.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < gt.cols(); ++k)
            if (gt(i, k) > gt(i, best)) best = k;
        gt_label[static_cast<std::size_t>(i)] = static_cast<int>(best);
        if (gt(i, best) > kSkinSelectThreshold) candidates.push_back(static_cast<int>(i));
    }
    if (candidates.size() < 2 || pairs <= 0) return Tensor::scalar(0.0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, candidates.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, candidates.size() - 2);
    std::vector<int> ia, ib;
    std::vector<double> gamma;
    for (int p = 0; p < pairs; ++p) {
        const std::size_t a = first(rng);
        std::size_t b = second(rng);
        if (b >= a) ++b;  // distinct partner
        ia.push_back(candidates[a]);
        ib.push_back(candidates[b]);
        gamma.push_back(gt_label[static_cast<std::size_t>(candidates[a])] ==
                                gt_label[static_cast<std::size_t>(candidates[b])]
                            ? 1.0
                            : -1.0);
    }
    const double inf = std::numeric_limits<double>::infinity();
    const Tensor wi = ad::gather_rows(predicted, std::move(ia));
    const Tensor wj = ad::gather_rows(predicted, std::move(ib));
    const Tensor log_i = ad::log(ad::clamp(wi, kSkinLogFloor, 1.0));
    const Tensor log_j = ad::log(ad::clamp(wj, kSkinLogFloor, 1.0));
    const Tensor kl = ad::sum_rows(wi * (log_i - log_j));
    const std::size_t n = gamma.size();
    const Tensor signed_kl = ad::mul_col(kl, Tensor::from(n, 1, std::move(gamma)));
    return ad::mean(ad::clamp(signed_kl, -kSkinNegativeClamp, inf));
}

/// Source -> target -> source transfer plus the pseudo-ground-truth term.
struct CycleTerms {
    Tensor cycle;   // L1(Vhat^s, V^s)
    Tensor pseudo;  // L1(Vhat^t, Vtilde^t); undefined when disabled
    TransferResult forward;
    TransferResult backward;
};

/// `source_posed` shares topology with `source_rest`. The pseudo target
/// Vtilde^t = lbs(target rest, W^t, T^s) is treated as a constant.
inline CycleTerms loss_cycle(const ModelParams& m, const Tensor& source_posed, const PreparedMesh& source_rest,
                             const RestEncoding& source_enc, const PreparedMesh& target_rest,
                             const RestEncoding& target_enc, bool use_pseudo = true) {
    CycleTerms c;
    c.forward = pose_transfer(m, source_posed, source_rest, source_enc, target_rest, target_enc);
    c.backward = pose_transfer(m, c.forward.vertices, target_rest, target_enc, source_rest, source_enc);
    c.cycle = loss_rec(c.backward.vertices, source_posed.detach());
    if (use_pseudo) {
        Tensor pseudo_gt;
        {
            ad::NoGradGuard ng;
            pseudo_gt = lbs(target_rest.positions, c.forward.target_skinning, c.forward.source_transforms);
        }
        c.pseudo = loss_rec(c.forward.vertices, pseudo_gt);
    }
    return c;
}

enum class TrainingMode { paired, unpaired };

/// Individual loss terms; undefined tensors are absent.
struct LossComponents {
    Tensor rec;
    Tensor trans;
    Tensor cycle;
    Tensor pseudo;
    Tensor skin;
    Tensor edge;
};

/// Weighted sum: paired mode uses rec + trans, unpaired uses cycle (+ pseudo);
/// skin and edge apply in both. Missing terms contribute zero.
inline Tensor total_loss(const LossComponents& c, const LossWeights& w, TrainingMode mode) {
    Tensor total = Tensor::scalar(0.0);
    auto acc = [&](const Tensor& t, double weight) {
        if (t.defined() && weight != 0.0) total = total + ad::scale(t, weight);
    };
    if (mode == TrainingMode::paired) {
        acc(c.rec, w.rec);
        acc(c.trans, w.trans);
    } else {
        acc(c.cycle, w.cycle);
        acc(c.pseudo, w.cycle * w.pseudo);
    }
    acc(c.skin, w.skin);
    acc(c.edge, w.edge);
    return total;
}

}  // namespace sfpt

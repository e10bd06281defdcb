#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sfpt/networks.hpp"
#include "sfpt/synthdata.hpp"

namespace sfpt {

// ---------------------------------------------------------------------------
// PMD

namespace detail {
inline double height_of(const Mesh& m) {
    double lo = m.vertices.front().y(), hi = lo;
    for (const auto& v : m.vertices) {
        lo = std::min(lo, v.y());
        hi = std::max(hi, v.y());
    }
    return hi - lo;
}
}  // namespace detail

/// Mean per-vertex Euclidean distance divided by `height`, times 100.
inline double pmd(const Mesh& pred, const Mesh& gt, double height) {
    if (pred.vertices.size() != gt.vertices.size()) throw DimensionError("pmd: vertex count mismatch");
    if (pred.vertices.empty()) throw InvalidArgument("pmd: empty mesh");
    if (!(height > 0)) throw InvalidArgument("pmd: height must be positive");
    double sum = 0;
    for (std::size_t i = 0; i < pred.vertices.size(); ++i) sum += (pred.vertices[i] - gt.vertices[i]).norm();
    return 100.0 * sum / static_cast<double>(pred.vertices.size()) / height;
}

/// Height is the mean vertical extent of the two meshes, which keeps the
/// measure symmetric.
inline double pmd(const Mesh& pred, const Mesh& gt) {
    if (pred.vertices.size() != gt.vertices.size()) throw DimensionError("pmd: vertex count mismatch");
    if (pred.vertices.empty()) throw InvalidArgument("pmd: empty mesh");
    return pmd(pred, gt, 0.5 * (detail::height_of(pred) + detail::height_of(gt)));
}

/// PMD between position tensors that already live in a unit-height frame.
inline double pmd(const Tensor& pred, const Tensor& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3) throw DimensionError("pmd: shape mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < pred.rows(); ++i) {
        const double dx = pred(i, 0) - gt(i, 0), dy = pred(i, 1) - gt(i, 1), dz = pred(i, 2) - gt(i, 2);
        sum += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return 100.0 * sum / static_cast<double>(pred.rows());
}

// ---------------------------------------------------------------------------
// Semantic consistency

struct PartCorrelation {
    int part = 0;
    std::vector<int> matched;  // per character; -1 when the part is empty there
    int modal = -1;
    double score = 0.0;
};

struct ConsistencyReport {
    double pred_to_gt = 0.0;
    double gt_to_pred = 0.0;
    std::vector<PartCorrelation> pred_table;
    std::vector<PartCorrelation> gt_table;
};

/// Directional score: each `from` part is matched per character to the `to`
/// label it overlaps most; ties go to the label met first in vertex order,
/// which keeps the score independent of how labels are numbered. A part's
/// score is its modal match count over the characters where it is
/// non-empty. Returns the mean over non-empty parts.
inline double consistency_score(const std::vector<std::vector<int>>& from, const std::vector<std::vector<int>>& to,
                                 std::vector<PartCorrelation>* table = nullptr) {
    if (from.size() != to.size() || from.empty()) throw InvalidArgument("consistency: need matching, non-empty character lists");
    struct Overlap {
        int count = 0;
        std::size_t first = 0;
    };
    std::map<int, PartCorrelation> parts;
    for (std::size_t c = 0; c < from.size(); ++c) {
        if (from[c].size() != to[c].size()) throw DimensionError("consistency: label count mismatch");
        std::map<int, std::map<int, Overlap>> overlap;
        for (std::size_t i = 0; i < from[c].size(); ++i) {
            auto& o = overlap[from[c][i]][to[c][i]];
            if (o.count++ == 0) o.first = i;
        }
        for (const auto& [k, counts] : overlap) {
            auto& p = parts[k];
            p.part = k;
            p.matched.resize(from.size(), -1);
            int best = -1;
            Overlap top;
            for (const auto& [label, o] : counts)
                if (o.count > top.count || (o.count == top.count && o.first < top.first)) best = label, top = o;
            p.matched[c] = best;
        }
    }
    double total = 0;
    for (auto& [k, p] : parts) {
        p.matched.resize(from.size(), -1);
        std::map<int, int> votes;
        int present = 0;
        for (int m : p.matched)
            if (m >= 0) ++votes[m], ++present;
        int modal_count = 0;
        for (const auto& [label, n] : votes)
            if (n > modal_count) p.modal = label, modal_count = n;
        p.score = static_cast<double>(modal_count) / present;
        total += p.score;
        if (table) table->push_back(p);
    }
    return total / static_cast<double>(parts.size());
}

inline ConsistencyReport consistency_scores(const std::vector<std::vector<int>>& predicted,
                                            const std::vector<std::vector<int>>& ground_truth) {
    ConsistencyReport r;
    r.pred_to_gt = consistency_score(predicted, ground_truth, &r.pred_table);
    r.gt_to_pred = consistency_score(ground_truth, predicted, &r.gt_table);
    return r;
}

// ---------------------------------------------------------------------------
// Characters in the pipeline frame

/// A character normalized to unit height with its parameter-independent
/// pipeline inputs precomputed.
struct PreparedCharacter {
    std::string id;
    Normalization norm;
    PreparedMesh rest;
    SkinningWeights gt_skinning;
    std::vector<int> gt_labels;                // canonical part ids
    std::map<int, Mesh> posed;                 // pose id -> normalized GT mesh
    std::map<int, Tensor> posed_positions;     // pose id -> N×3
};

inline PreparedCharacter prepare_character(const CharacterRecord& rec) {
    PreparedCharacter p;
    p.id = rec.id;
    p.norm = unit_height_normalization(rec.sample.rest);
    p.rest = prepare(p.norm.apply(rec.sample.rest));
    p.gt_skinning = rec.sample.gt_skinning;
    p.gt_labels = rec.sample.gt_labels();
    for (const auto& pi : rec.sample.poses) {
        p.posed[pi.pose_id] = p.norm.apply(pi.mesh);
        p.posed_positions[pi.pose_id] = positions_tensor(p.posed[pi.pose_id]);
    }
    return p;
}

inline std::vector<PreparedCharacter> prepare_split(const Dataset& ds, Split s) {
    std::vector<PreparedCharacter> out;
    for (const auto* c : ds.split(s)) out.push_back(prepare_character(*c));
    return out;
}

// ---------------------------------------------------------------------------
// Held-out protocol

struct TransferEvaluation {
    double pmd = 0.0;  // mean over (source, target, pose) triples
    std::size_t pairs = 0;
};

/// Transfers every shared pose between every ordered pair of distinct
/// characters and averages PMD in the target's unit-height frame.
inline TransferEvaluation evaluate_transfer(const ModelParams& m, const std::vector<PreparedCharacter>& chars) {
    ad::NoGradGuard ng;
    std::vector<RestEncoding> enc;
    for (const auto& c : chars) enc.push_back(encode_rest(m, c.rest));
    TransferEvaluation ev;
    double sum = 0;
    for (std::size_t s = 0; s < chars.size(); ++s)
        for (std::size_t t = 0; t < chars.size(); ++t) {
            if (s == t) continue;
            for (const auto& [pose, src] : chars[s].posed_positions) {
                const auto gt = chars[t].posed_positions.find(pose);
                if (gt == chars[t].posed_positions.end()) continue;
                const auto r = pose_transfer(m, src, chars[s].rest, enc[s], chars[t].rest, enc[t]);
                sum += pmd(r.vertices, gt->second);
                ++ev.pairs;
            }
        }
    if (ev.pairs == 0) throw InvalidArgument("evaluation needs two characters sharing a pose");
    ev.pmd = sum / static_cast<double>(ev.pairs);
    return ev;
}

/// Hard part labels predicted for each character's rest mesh.
inline std::vector<std::vector<int>> predicted_labels(const ModelParams& m, const std::vector<PreparedCharacter>& chars) {
    ad::NoGradGuard ng;
    std::vector<std::vector<int>> out;
    for (const auto& c : chars)
        out.push_back(hard_assignment(to_skinning(predict_skinning(c.rest.features, c.rest.topology.graph, m.skin, m.config.leaky_slope))));
    return out;
}

struct EvaluationReport {
    std::string split;
    TransferEvaluation model;
    TransferEvaluation baseline;  // decoder output zeroed
    ConsistencyReport consistency;
};

inline EvaluationReport evaluate(const ModelParams& m, const Dataset& ds, Split split = Split::held_out) {
    const auto chars = prepare_split(ds, split);
    EvaluationReport r;
    r.split = split_name(split);
    r.model = evaluate_transfer(m, chars);
    ModelParams base = clone(m);
    zero_decoder_output(base);
    r.baseline = evaluate_transfer(base, chars);
    std::vector<std::vector<int>> gt;
    for (const auto& c : chars) gt.push_back(c.gt_labels);
    r.consistency = consistency_scores(predicted_labels(m, chars), gt);
    return r;
}

/// CSV with header `metric,split,value`.
inline void write_report(const EvaluationReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write '" + path + "'");
    char buf[64];
    auto row = [&](const char* metric, double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        f << metric << ',' << r.split << ',' << buf << '\n';
    };
    f << "metric,split,value\n";
    row("pmd", r.model.pmd);
    row("pmd_baseline", r.baseline.pmd);
    row("pairs", static_cast<double>(r.model.pairs));
    row("consistency_pred_to_gt", r.consistency.pred_to_gt);
    row("consistency_gt_to_pred", r.consistency.gt_to_pred);
    f.flush();
    if (!f) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Visualization

/// Fixed palette: evenly spread hues at full saturation.
inline Vec3 part_color(int part) {
    const double h = std::fmod(part * 0.61803398874989485, 1.0) * 6.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    switch (static_cast<int>(h)) {
        case 0: return {1, x, 0};
        case 1: return {x, 1, 0};
        case 2: return {0, 1, x};
        case 3: return {0, x, 1};
        case 4: return {x, 0, 1};
        default: return {1, 0, x};
    }
}

inline void save_part_colored_obj(const Mesh& mesh, const std::vector<int>& labels, const std::string& path) {
    if (labels.size() != mesh.vertices.size()) throw DimensionError("one label per vertex required");
    std::vector<Vec3> colors;
    colors.reserve(labels.size());
    for (int l : labels) colors.push_back(part_color(l));
    save_obj(mesh, path, &colors);
}

}  // namespace sfpt

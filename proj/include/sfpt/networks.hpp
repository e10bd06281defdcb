#pragma once

// Skinning predictor, mesh encoder with part attention, transformation
// decoder, and the composed pose-transfer pipeline. Everything here is
// built from autodiff ops so the pipeline is differentiable end to end.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sfpt/articulation.hpp"
#include "sfpt/autodiff.hpp"
#include "sfpt/mesh.hpp"

namespace sfpt {

using ad::Tensor;

struct ModelConfig {
    int parts = kDefaultParts;
    int latent = 128;
    std::vector<int> skin_widths{64, 128, 128};
    std::vector<int> encoder_widths{64, 128, 128};
    std::vector<int> decoder_widths{256, 128};
    double leaky_slope = 0.2;
};

// Graph convolution: act(A X W_neighbor + X W_self + b).
struct GraphConv {
    Tensor neighbor;
    Tensor self;
    Tensor bias;
};

struct Linear {
    Tensor weight;  // in × out
    Tensor bias;    // 1 × out

    Tensor operator()(const Tensor& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

struct SkinningPredictorParams {
    std::vector<GraphConv> layers;
    Linear head;  // -> K, followed by row softmax
};

struct EncoderParams {
    std::vector<GraphConv> layers;
    Linear head;       // -> C
    Linear part_conv;  // kernel-size-1 conv over parts, C -> C
};

struct DecoderParams {
    std::vector<Linear> layers;  // last layer outputs 9 and starts at zero
};

struct ModelParams {
    ModelConfig config;
    SkinningPredictorParams skin;
    EncoderParams encoder;
    DecoderParams decoder;

    /// Every learnable tensor with a stable, unique name (checkpoint keys).
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto conv = [&](const std::string& prefix, const std::vector<GraphConv>& layers) {
            for (std::size_t i = 0; i < layers.size(); ++i) {
                const std::string p = prefix + ".conv" + std::to_string(i);
                out.emplace_back(p + ".neighbor", layers[i].neighbor);
                out.emplace_back(p + ".self", layers[i].self);
                out.emplace_back(p + ".bias", layers[i].bias);
            }
        };
        auto lin = [&](const std::string& p, const Linear& l) {
            out.emplace_back(p + ".weight", l.weight);
            out.emplace_back(p + ".bias", l.bias);
        };
        conv("skin", skin.layers);
        lin("skin.head", skin.head);
        conv("encoder", encoder.layers);
        lin("encoder.head", encoder.head);
        lin("encoder.part_conv", encoder.part_conv);
        for (std::size_t i = 0; i < decoder.layers.size(); ++i) lin("decoder.fc" + std::to_string(i), decoder.layers[i]);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }
};

namespace detail {

inline Tensor uniform_param(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = dist(rng);
    return Tensor::from(rows, cols, std::move(v), true);
}

// Biases are random so that the initial networks are not positively
// homogeneous; with zero biases the first skinning partition is a fan of
// cones around the mesh center.
inline GraphConv make_conv(int in, int out, std::mt19937_64& rng) {
    // He-uniform over the doubled fan-in of the two branches.
    const double bound = std::sqrt(6.0 / (2.0 * in));
    const auto n = static_cast<std::size_t>(in), m = static_cast<std::size_t>(out);
    GraphConv c{uniform_param(n, m, bound, rng), uniform_param(n, m, bound, rng), {}};
    c.bias = uniform_param(1, m, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    return c;
}

inline Linear make_linear(int in, int out, std::mt19937_64& rng, bool zero = false) {
    const auto n = static_cast<std::size_t>(in), m = static_cast<std::size_t>(out);
    if (zero) return {Tensor::zeros(n, m, true), Tensor::zeros(1, m, true)};
    Linear l{uniform_param(n, m, std::sqrt(6.0 / (in + out)), rng), {}};
    l.bias = uniform_param(1, m, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    return l;
}

}  // namespace detail

inline constexpr int kDecoderOutput = 9;  // 6D rotation + translation

inline int decoder_input_width(const ModelConfig& c) { return 2 * c.latent + kTransformWidth; }

/// Deterministic initialization. The decoder output layer is zero so an
/// untrained model applies the source transforms unchanged.
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    if (config.parts < 1 || config.latent < 1) throw InvalidArgument("parts and latent must be positive");
    std::mt19937_64 rng(seed);
    ModelParams m;
    m.config = config;
    int in = 6;
    for (int w : config.skin_widths) {
        m.skin.layers.push_back(detail::make_conv(in, w, rng));
        in = w;
    }
    m.skin.head = detail::make_linear(in, config.parts, rng);
    in = 6;
    for (int w : config.encoder_widths) {
        m.encoder.layers.push_back(detail::make_conv(in, w, rng));
        in = w;
    }
    m.encoder.head = detail::make_linear(in, config.latent, rng);
    m.encoder.part_conv = detail::make_linear(config.latent, config.latent, rng);
    in = decoder_input_width(config);
    for (int w : config.decoder_widths) {
        m.decoder.layers.push_back(detail::make_linear(in, w, rng));
        in = w;
    }
    m.decoder.layers.push_back(detail::make_linear(in, kDecoderOutput, rng, /*zero=*/true));
    return m;
}

/// Deep copy with fresh leaves (independent optimizer state / ablations).
inline ModelParams clone(const ModelParams& m) {
    ModelParams c = m;
    auto dup = [](Tensor& t) { t = Tensor::from(t.rows(), t.cols(), t.data(), true); };
    for (auto* layers : {&c.skin.layers, &c.encoder.layers})
        for (auto& l : *layers) {
            dup(l.neighbor);
            dup(l.self);
            dup(l.bias);
        }
    for (auto* l : {&c.skin.head, &c.encoder.head, &c.encoder.part_conv}) {
        dup(l->weight);
        dup(l->bias);
    }
    for (auto& l : c.decoder.layers) {
        dup(l.weight);
        dup(l.bias);
    }
    return c;
}

/// Sets the decoder output layer to zero (pure analytic retarget).
inline void zero_decoder_output(ModelParams& m) {
    auto& last = m.decoder.layers.back();
    std::fill(last.weight.mutable_data().begin(), last.weight.mutable_data().end(), 0.0);
    std::fill(last.bias.mutable_data().begin(), last.bias.mutable_data().end(), 0.0);
}

// ---------------------------------------------------------------------------
// Mesh-derived constants

/// Connectivity-derived operators shared by every pose of one character.
struct MeshTopology {
    std::size_t num_vertices = 0;
    std::vector<Face> faces;
    std::vector<Edge> edges;
    std::shared_ptr<const SparseOp> graph;
    std::shared_ptr<const SparseOp> face_to_vertex;  // N×F incidence
    std::vector<int> corner[3];
    std::vector<int> edge_a;
    std::vector<int> edge_b;
};

inline MeshTopology make_topology(const Mesh& mesh) {
    validate(mesh);
    MeshTopology t;
    t.num_vertices = mesh.vertices.size();
    t.faces = mesh.faces;
    GraphOperator g = graph_operator(mesh);
    t.edges = g.edges;
    t.graph = std::make_shared<const SparseOp>(std::move(g.matrix));
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        for (int c = 0; c < 3; ++c) {
            t.corner[c].push_back(mesh.faces[f][static_cast<std::size_t>(c)]);
            trip.emplace_back(mesh.faces[f][static_cast<std::size_t>(c)], static_cast<int>(f), 1.0);
        }
    }
    SparseOp inc(static_cast<Eigen::Index>(t.num_vertices), static_cast<Eigen::Index>(mesh.faces.size()));
    inc.setFromTriplets(trip.begin(), trip.end());
    inc.makeCompressed();
    t.face_to_vertex = std::make_shared<const SparseOp>(std::move(inc));
    for (const auto& [a, b] : t.edges) {
        t.edge_a.push_back(a);
        t.edge_b.push_back(b);
    }
    return t;
}

inline Tensor positions_tensor(const Mesh& mesh) {
    std::vector<double> v;
    v.reserve(mesh.vertices.size() * 3);
    for (const auto& p : mesh.vertices) v.insert(v.end(), {p.x(), p.y(), p.z()});
    return Tensor::from(mesh.vertices.size(), 3, std::move(v));
}

inline Mesh to_mesh(const Tensor& positions, const MeshTopology& topo, std::string name = {}) {
    if (positions.cols() != 3 || positions.rows() != topo.num_vertices) throw DimensionError("positions do not match topology");
    Mesh m;
    m.faces = topo.faces;
    m.name = std::move(name);
    m.vertices.reserve(positions.rows());
    for (std::size_t i = 0; i < positions.rows(); ++i) m.vertices.emplace_back(positions(i, 0), positions(i, 1), positions(i, 2));
    return m;
}

/// Differentiable position + area-weighted normal features (N×6).
inline Tensor feature_tensor(const Tensor& positions, const MeshTopology& topo) {
    if (positions.rows() != topo.num_vertices || positions.cols() != 3) throw DimensionError("features: bad positions");
    const Tensor p0 = ad::gather_rows(positions, topo.corner[0]);
    const Tensor e1 = ad::gather_rows(positions, topo.corner[1]) - p0;
    const Tensor e2 = ad::gather_rows(positions, topo.corner[2]) - p0;
    const Tensor face_n = ad::cross_rows(e1, e2);
    const Tensor normals = ad::normalize_rows(ad::sparse_matmul(topo.face_to_vertex, face_n), 1e-300);
    return ad::concat_cols({positions, normals});
}

/// A mesh together with its constant operators and features.
struct PreparedMesh {
    Mesh mesh;
    MeshTopology topology;
    Tensor positions;
    Tensor features;
};

inline PreparedMesh prepare(const Mesh& mesh) {
    PreparedMesh p;
    p.mesh = mesh;
    p.topology = make_topology(mesh);
    p.positions = positions_tensor(mesh);
    p.features = Tensor::from_matrix(vertex_features(mesh));
    return p;
}

// ---------------------------------------------------------------------------
// Networks

namespace detail {

inline Tensor graph_conv(const GraphConv& layer, const Tensor& x, const std::shared_ptr<const SparseOp>& graph,
                         double slope) {
    const Tensor neigh = ad::matmul(ad::sparse_matmul(graph, x), layer.neighbor);
    const Tensor self = ad::matmul(x, layer.self);
    return ad::leaky_relu(ad::add_row(neigh + self, layer.bias), slope);
}

inline void check_graph_input(const Tensor& features, const std::shared_ptr<const SparseOp>& graph) {
    if (features.cols() != 6) throw DimensionError("vertex features must have 6 columns");
    if (static_cast<std::size_t>(graph->rows()) != features.rows()) {
        throw DimensionError("feature rows do not match graph size");
    }
}

}  // namespace detail

/// W = softmax_rows(g_s(features)); N×K, rows sum to one.
inline Tensor predict_skinning(const Tensor& features, const std::shared_ptr<const SparseOp>& graph,
                               const SkinningPredictorParams& p, double slope = 0.2) {
    detail::check_graph_input(features, graph);
    Tensor x = features;
    for (const auto& layer : p.layers) x = detail::graph_conv(layer, x, graph, slope);
    return ad::softmax_rows(p.head(x));
}

/// Per-vertex latent Y (N×C).
inline Tensor encode(const Tensor& features, const std::shared_ptr<const SparseOp>& graph, const EncoderParams& p,
                     double slope = 0.2) {
    detail::check_graph_input(features, graph);
    Tensor x = features;
    for (const auto& layer : p.layers) x = detail::graph_conv(layer, x, graph, slope);
    return p.head(x);
}

/// Part features Z = conv1d(Wᵀ Y) with a kernel-size-1 conv (K×C).
inline Tensor attend(const Tensor& skinning, const Tensor& latent, const Linear& part_conv) {
    if (skinning.rows() != latent.rows()) throw DimensionError("attend: W and Y row counts differ");
    return part_conv(ad::matmul(ad::transpose(skinning), latent));
}

/// Column of part coverages (K×1), clamped away from zero.
inline Tensor part_coverage(const Tensor& skinning) {
    return ad::clamp(ad::transpose(ad::sum_cols(skinning)), kCoverageEpsilon, std::numeric_limits<double>::infinity());
}

/// Weighted part centers (K×3) of `positions` under `skinning`.
inline Tensor part_centers(const Tensor& skinning, const Tensor& positions) {
    const Tensor cov = part_coverage(skinning);
    const Tensor inv = ad::div(Tensor::full(cov.rows(), 1, 1.0), cov);
    return ad::mul_col(ad::matmul(ad::transpose(skinning), positions), inv);
}

/// Differentiable weighted Kabsch: K×12 rows [R row-major | t]. Degenerate
/// parts (coverage below kCoverageEpsilon) get (I, 0).
inline Tensor estimate_transforms(const Tensor& skinning, const Tensor& rest, const Tensor& posed) {
    if (skinning.rows() != rest.rows() || rest.rows() != posed.rows()) {
        throw DimensionError("estimate_transforms: row counts differ");
    }
    const std::size_t k = skinning.cols();
    const Tensor wt = ad::transpose(skinning);
    const Tensor cov = part_coverage(skinning);
    const Tensor inv = ad::div(Tensor::full(k, 1, 1.0), cov);
    const Tensor c = ad::mul_col(ad::matmul(wt, rest), inv);
    const Tensor d = ad::mul_col(ad::matmul(wt, posed), inv);
    const Tensor cross = ad::matmul(wt, ad::outer_rows(posed, rest)) - ad::mul_col(ad::outer_rows(d, c), cov);
    const Tensor raw = ad::concat_cols({ad::proper_polar_rows(cross), d});

    std::vector<double> mask(k * kTransformWidth, 1.0), fill(k * kTransformWidth, 0.0);
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < skinning.rows(); ++i) s += skinning(i, j);
        if (s >= kCoverageEpsilon) continue;
        any = true;
        for (int q = 0; q < kTransformWidth; ++q) mask[j * kTransformWidth + static_cast<std::size_t>(q)] = 0.0;
        fill[j * kTransformWidth + 0] = fill[j * kTransformWidth + 4] = fill[j * kTransformWidth + 8] = 1.0;
    }
    if (!any) return raw;
    return ad::mul(raw, Tensor::from(k, kTransformWidth, std::move(mask))) +
           Tensor::from(k, kTransformWidth, std::move(fill));
}

/// LBS about soft part centers: V_i = sum_k w_ik (R_k (Vbar_i - C_k) + t_k).
inline Tensor lbs(const Tensor& rest, const Tensor& skinning, const Tensor& transforms) {
    if (transforms.cols() != kTransformWidth || transforms.rows() != skinning.cols()) {
        throw DimensionError("lbs: transforms must be Kx12");
    }
    const Tensor centers = part_centers(skinning, rest);
    const Tensor rot = ad::slice_cols(transforms, 0, 9);
    const Tensor offset = ad::slice_cols(transforms, 9, 12) - ad::apply_rows(rot, centers);
    return ad::apply_rows(ad::matmul(skinning, rot), rest) + ad::matmul(skinning, offset);
}

/// Maps K×9 raw decoder output to K×12 transforms composed onto the source
/// guess: R = R_res R_s, t = t_s + t_res. The 6D part is offset by
/// (1,0,0,0,1,0) so a zero output is the identity residual.
inline Tensor compose_residual(const Tensor& raw, const Tensor& source) {
    const std::size_t k = raw.rows();
    auto offset_row = [k](double x, double y, double z) {
        std::vector<double> v;
        v.reserve(k * 3);
        for (std::size_t i = 0; i < k; ++i) v.insert(v.end(), {x, y, z});
        return Tensor::from(k, 3, std::move(v));
    };
    const Tensor a1 = ad::slice_cols(raw, 0, 3) + offset_row(1, 0, 0);
    const Tensor a2 = ad::slice_cols(raw, 3, 6) + offset_row(0, 1, 0);
    const Tensor b1 = ad::normalize_rows(a1);
    const Tensor proj = ad::sum_rows(b1 * a2);
    const Tensor b2 = ad::normalize_rows(a2 - ad::mul_col(b1, proj));
    const Tensor b3 = ad::cross_rows(b1, b2);
    const Tensor residual = ad::concat_cols({b1, b2, b3});
    const Tensor rot = ad::matmul_rows3(residual, ad::slice_cols(source, 0, 9));
    const Tensor trans = ad::slice_cols(source, 9, 12) + ad::slice_cols(raw, 6, 9);
    return ad::concat_cols({rot, trans});
}

/// g_d applied per part with shared weights.
inline Tensor decode_transforms(const Tensor& target_rest_z, const Tensor& pose_delta_z, const Tensor& source_transforms,
                                const DecoderParams& p, double slope = 0.2) {
    const std::size_t k = target_rest_z.rows();
    if (pose_delta_z.rows() != k || source_transforms.rows() != k || pose_delta_z.cols() != target_rest_z.cols() ||
        source_transforms.cols() != kTransformWidth) {
        throw DimensionError("decode_transforms: shape mismatch");
    }
    Tensor x = ad::concat_cols({target_rest_z, pose_delta_z, source_transforms});
    if (x.cols() != p.layers.front().weight.rows()) throw DimensionError("decode_transforms: input width mismatch");
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        x = p.layers[i](x);
        if (i + 1 < p.layers.size()) x = ad::leaky_relu(x, slope);
    }
    return compose_residual(x, source_transforms);
}

// ---------------------------------------------------------------------------
// Pipeline

/// Quantities the pipeline needs from a rest-pose mesh.
struct RestEncoding {
    Tensor skinning;  // W, N×K
    Tensor latent;    // Zbar, K×C
};

inline RestEncoding encode_rest(const ModelParams& m, const PreparedMesh& rest) {
    const double a = m.config.leaky_slope;
    RestEncoding e;
    e.skinning = predict_skinning(rest.features, rest.topology.graph, m.skin, a);
    e.latent = attend(e.skinning, encode(rest.features, rest.topology.graph, m.encoder, a), m.encoder.part_conv);
    return e;
}

struct TransferResult {
    Tensor vertices;           // deformed target, N_t×3
    Tensor source_skinning;    // W^s
    Tensor target_skinning;    // W^t
    Tensor source_transforms;  // T^s, K×12
    Tensor target_transforms;  // predicted T^t, K×12
};

/// {posed source, rest source, rest target} -> posed target. `source_posed`
/// shares the source topology; it may carry gradient (cycle pass).
inline TransferResult pose_transfer(const ModelParams& m, const Tensor& source_posed, const PreparedMesh& source_rest,
                                    const RestEncoding& source_enc, const PreparedMesh& target_rest,
                                    const RestEncoding& target_enc) {
    if (source_posed.rows() != source_rest.topology.num_vertices) {
        throw DimensionError("posed and rest source differ in vertex count");
    }
    const double a = m.config.leaky_slope;
    const Tensor posed_features = feature_tensor(source_posed, source_rest.topology);
    const Tensor posed_z = attend(source_enc.skinning, encode(posed_features, source_rest.topology.graph, m.encoder, a),
                                  m.encoder.part_conv);
    TransferResult r;
    r.source_skinning = source_enc.skinning;
    r.target_skinning = target_enc.skinning;
    r.source_transforms = estimate_transforms(source_enc.skinning, source_rest.positions, source_posed);
    r.target_transforms = decode_transforms(target_enc.latent, posed_z - source_enc.latent, r.source_transforms,
                                            m.decoder, a);
    r.vertices = lbs(target_rest.positions, target_enc.skinning, r.target_transforms);
    return r;
}

inline TransferResult pose_transfer(const ModelParams& m, const Tensor& source_posed, const PreparedMesh& source_rest,
                                    const PreparedMesh& target_rest) {
    return pose_transfer(m, source_posed, source_rest, encode_rest(m, source_rest), target_rest,
                         encode_rest(m, target_rest));
}

inline SkinningWeights to_skinning(const Tensor& w) {
    return SkinningWeights(w.matrix());
}

/// Plain-value pipeline result for inference callers. Skinning and
/// transforms live in the per-character normalized frames.
struct TransferOutput {
    Mesh deformed;
    SkinningWeights source_skinning;
    SkinningWeights target_skinning;
    PartTransforms source_transforms;
    PartTransforms target_transforms;
};

/// Mesh-level transfer. Each character is normalized to unit height about
/// its rest bounding-box center; the result is mapped back to target units.
inline TransferOutput pose_transfer(const ModelParams& m, const Mesh& source_posed, const Mesh& source_rest,
                                    const Mesh& target_rest) {
    if (!same_topology(source_posed, source_rest)) throw DimensionError("source meshes must share connectivity");
    ad::NoGradGuard ng;
    const Normalization ns = unit_height_normalization(source_rest);
    const Normalization nt = unit_height_normalization(target_rest);
    const PreparedMesh src = prepare(ns.apply(source_rest));
    const PreparedMesh tgt = prepare(nt.apply(target_rest));
    const TransferResult r = pose_transfer(m, positions_tensor(ns.apply(source_posed)), src, tgt);
    TransferOutput out;
    out.deformed = nt.invert(to_mesh(r.vertices, tgt.topology, target_rest.name));
    out.source_skinning = to_skinning(r.source_skinning);
    out.target_skinning = to_skinning(r.target_skinning);
    out.source_transforms = unflatten(RowMatrix(r.source_transforms.matrix()));
    out.target_transforms = unflatten(RowMatrix(r.target_transforms.matrix()));
    return out;
}

/// Skinning prediction for one rest mesh (inference, normalized frame).
inline SkinningWeights predict_skinning(const ModelParams& m, const Mesh& mesh) {
    ad::NoGradGuard ng;
    const PreparedMesh p = prepare(unit_height_normalization(mesh).apply(mesh));
    return to_skinning(predict_skinning(p.features, p.topology.graph, m.skin, m.config.leaky_slope));
}

}  // namespace sfpt

#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "sfpt/losses.hpp"
#include "sfpt/networks.hpp"

using namespace sfpt;
using ad::Tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.parts = 6;
    c.latent = 8;
    c.skin_widths = {8, 8};
    c.encoder_widths = {8, 8};
    c.decoder_widths = {16};
    return c;
}

void randomize(Tensor& t, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& x : t.mutable_data()) x = u(rng);
}

void randomize_decoder_output(ModelParams& m, std::uint64_t seed, double scale = 0.05) {
    std::mt19937_64 rng(seed);
    randomize(m.decoder.layers.back().weight, rng, scale);
    randomize(m.decoder.layers.back().bias, rng, scale);
}

Mesh posed_copy(const CharacterSample& c, std::uint64_t seed, double angle = 0.6) {
    return pose_character(c, random_pose(seed, angle));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double e = 0;
    for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
    return e;
}

}  // namespace

TEST(Networks, ParameterNamesAreUniqueAndShapesMatchConfig) {
    const ModelParams m = init_model(ModelConfig{}, 1);
    std::set<std::string> names;
    for (const auto& [n, t] : m.named_parameters()) EXPECT_TRUE(names.insert(n).second) << n;
    EXPECT_EQ(m.skin.head.weight.cols(), 40u);
    EXPECT_EQ(m.encoder.head.weight.cols(), 128u);
    EXPECT_EQ(m.encoder.part_conv.weight.rows(), 128u);
    EXPECT_EQ(m.decoder.layers.front().weight.rows(), 2u * 128u + 12u);
    EXPECT_EQ(m.decoder.layers.back().weight.cols(), 9u);
    for (double v : m.decoder.layers.back().weight.data()) EXPECT_EQ(v, 0.0);
}

TEST(Networks, InitIsSeedDeterministic) {
    const auto a = init_model(small_config(), 3).parameters();
    const auto b = init_model(small_config(), 3).parameters();
    const auto c = init_model(small_config(), 4).parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data(), b[i].data());
    EXPECT_NE(a[0].data(), c[0].data());
}

TEST(FeatureTensor, MatchesVertexFeatures) {
    const auto c = fixtures::tiny_character(1);
    const PreparedMesh p = prepare(c.rest);
    const Tensor f = feature_tensor(p.positions, p.topology);
    EXPECT_LE(max_abs_diff(f.data(), p.features.data()), 1e-12);
}

TEST(PredictSkinning, RowsSumToOneAndZeroHeadIsUniform) {
    ModelParams m = init_model(ModelConfig{}, 2);
    const PreparedMesh p = prepare(fixtures::random_tube(4, 6, 3));
    const Tensor w = predict_skinning(p.features, p.topology.graph, m.skin);
    EXPECT_TRUE(is_partition_of_unity(to_skinning(w)));
    std::fill(m.skin.head.weight.mutable_data().begin(), m.skin.head.weight.mutable_data().end(), 0.0);
    std::fill(m.skin.head.bias.mutable_data().begin(), m.skin.head.bias.mutable_data().end(), 0.0);
    const Tensor u = predict_skinning(p.features, p.topology.graph, m.skin);
    for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 40.0, 1e-15);
}

TEST(PredictSkinning, ShapeMismatchThrows) {
    const ModelParams m = init_model(small_config(), 2);
    const PreparedMesh a = prepare(fixtures::random_tube(4, 6, 3));
    const PreparedMesh b = prepare(fixtures::random_tube(3, 6, 3));
    EXPECT_THROW(predict_skinning(a.features, b.topology.graph, m.skin), DimensionError);
}

TEST(PredictSkinning, PermutationEquivariant) {
    const ModelParams m = init_model(ModelConfig{}, 5);
    const Mesh mesh = fixtures::random_tube(4, 5, 6);
    const auto perm = fixtures::random_permutation(mesh.vertices.size(), 7);
    const PreparedMesh a = prepare(mesh), b = prepare(fixtures::permuted(mesh, perm));
    const Tensor wa = predict_skinning(a.features, a.topology.graph, m.skin);
    const Tensor wb = predict_skinning(b.features, b.topology.graph, m.skin);
    const Tensor ya = encode(a.features, a.topology.graph, m.encoder);
    const Tensor yb = encode(b.features, b.topology.graph, m.encoder);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const auto j = static_cast<std::size_t>(perm[i]);
        for (std::size_t k = 0; k < wa.cols(); ++k) EXPECT_NEAR(wa(i, k), wb(j, k), 1e-12);
        for (std::size_t k = 0; k < ya.cols(); ++k) EXPECT_NEAR(ya(i, k), yb(j, k), 1e-10);
    }
}

TEST(Encode, ZeroParametersGiveZeroAndOutputIsDeterministic) {
    ModelParams m = init_model(ModelConfig{}, 8);
    const PreparedMesh p = prepare(fixtures::random_tube(3, 5, 1));
    const Tensor y1 = encode(p.features, p.topology.graph, m.encoder);
    const Tensor y2 = encode(p.features, p.topology.graph, init_model(ModelConfig{}, 8).encoder);
    EXPECT_EQ(y1.data(), y2.data());
    EXPECT_EQ(y1.cols(), 128u);
    for (auto& [name, t] : m.named_parameters()) {
        if (name.rfind("encoder", 0) == 0) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    for (double v : encode(p.features, p.topology.graph, m.encoder).data()) EXPECT_EQ(v, 0.0);
}

TEST(Attend, OneHotSelectsRowAndUniformPoolsEqually) {
    std::mt19937_64 rng(1);
    Tensor y = Tensor::zeros(5, 4);
    randomize(y, rng, 1.0);
    Linear identity{Tensor::from_matrix(Eigen::MatrixXd::Identity(4, 4)), Tensor::zeros(1, 4)};
    std::vector<double> w(5 * 3, 0.0);
    w[2 * 3 + 1] = 1.0;  // part 1 owns exactly vertex 2
    const Tensor z = attend(Tensor::from(5, 3, w), y, identity);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(z(1, c), y(2, c));
    const Tensor zu = attend(Tensor::full(5, 3, 1.0 / 3.0), y, identity);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < 5; ++i) mean += y(i, c) / 5.0;
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(zu(k, c), mean * 5.0 / 3.0, 1e-14);
    }
}

TEST(Attend, GradcheckWrtLatent) {
    std::mt19937_64 rng(2);
    Tensor w = Tensor::zeros(6, 3), y = Tensor::zeros(6, 4, true);
    randomize(w, rng, 1.0);
    randomize(y, rng, 1.0);
    Linear conv{Tensor::zeros(4, 4), Tensor::zeros(1, 4)};
    randomize(conv.weight, rng, 1.0);
    const auto rep = ad::gradcheck_inputs([&] { return ad::sum(attend(w, y, conv)); }, {y, conv.weight});
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}

TEST(DecodeTransforms, ZeroOutputReturnsSourceTransformsExactly) {
    const ModelConfig cfg = small_config();
    const ModelParams m = init_model(cfg, 3);
    std::mt19937_64 rng(4);
    Tensor zt = Tensor::zeros(6, 8), dz = Tensor::zeros(6, 8);
    randomize(zt, rng, 1.0);
    randomize(dz, rng, 1.0);
    PartTransforms ts(6);
    for (auto& t : ts) {
        t.rotation = fixtures::random_rotation(rng);
        t.translation = Vec3(0.1, -0.2, 0.3);
    }
    const Tensor src = Tensor::from_matrix(flatten(ts));
    const Tensor out = decode_transforms(zt, dz, src, m.decoder);
    EXPECT_EQ(out.data(), src.data());
}

TEST(DecodeTransforms, RotationsAreOrthonormalForAnyParameters) {
    ModelParams m = init_model(small_config(), 5);
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::mt19937_64 rng(s);
        for (Tensor t : m.parameters()) randomize(t, rng, 2.0);
        Tensor zt = Tensor::zeros(6, 8), dz = Tensor::zeros(6, 8);
        randomize(zt, rng, 3.0);
        randomize(dz, rng, 3.0);
        PartTransforms ts(6);
        for (auto& t : ts) t.rotation = fixtures::random_rotation(rng);
        const auto out = unflatten(RowMatrix(decode_transforms(zt, dz, Tensor::from_matrix(flatten(ts)), m.decoder).matrix()));
        for (const auto& t : out) {
            EXPECT_LE((t.rotation.transpose() * t.rotation - Mat3::Identity()).norm(), 1e-6);
            EXPECT_NEAR(t.rotation.determinant(), 1.0, 1e-6);
        }
    }
}

TEST(DecodeTransforms, GradcheckWrtParameters) {
    ModelParams m = init_model(small_config(), 6);
    randomize_decoder_output(m, 7, 0.3);
    std::mt19937_64 rng(8);
    Tensor zt = Tensor::zeros(6, 8), dz = Tensor::zeros(6, 8);
    randomize(zt, rng, 1.0);
    randomize(dz, rng, 1.0);
    PartTransforms ts(6);
    for (auto& t : ts) t.rotation = fixtures::random_rotation(rng);
    const Tensor src = Tensor::from_matrix(flatten(ts));
    std::vector<Tensor> params;
    for (const auto& l : m.decoder.layers) params.insert(params.end(), {l.weight, l.bias});
    std::vector<double> proj(6 * 12);
    for (auto& p : proj) p = std::uniform_real_distribution<double>(-1, 1)(rng);
    const Tensor pr = Tensor::from(6, 12, proj);
    const auto rep = ad::gradcheck_inputs([&] { return ad::sum(decode_transforms(zt, dz, src, m.decoder) * pr); }, params);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}

TEST(TensorArticulation, MatchesReferenceImplementation) {
    const auto c = fixtures::tiny_character(3);
    const Mesh posed = posed_copy(c, 4);
    std::mt19937_64 rng(5);
    Tensor logits = Tensor::zeros(c.rest.vertices.size(), 5);
    randomize(logits, rng, 2.0);
    const Tensor w = ad::softmax_rows(logits);
    const SkinningWeights ws = to_skinning(w);
    const Tensor t = estimate_transforms(w, positions_tensor(c.rest), positions_tensor(posed));
    const auto ref = estimate_part_transforms(c.rest, posed, ws);
    const RowMatrix flat = flatten(ref);
    EXPECT_LE(max_abs_diff(t.data(), std::vector<double>(flat.data(), flat.data() + flat.size())), 1e-9);
    const Tensor v = lbs(positions_tensor(c.rest), w, t);
    const Mesh vref = lbs_deform(c.rest, ws, ref);
    for (std::size_t i = 0; i < vref.vertices.size(); ++i)
        for (int d = 0; d < 3; ++d) EXPECT_NEAR(v(i, static_cast<std::size_t>(d)), vref.vertices[i](d), 1e-9);
}

TEST(TensorArticulation, DegeneratePartGetsIdentityAtOrigin) {
    const auto c = fixtures::tiny_character(3);
    std::vector<double> w(c.rest.vertices.size() * 2, 0.0);
    for (std::size_t i = 0; i < c.rest.vertices.size(); ++i) w[i * 2] = 1.0;
    const Tensor t = estimate_transforms(Tensor::from(c.rest.vertices.size(), 2, w), positions_tensor(c.rest),
                                         positions_tensor(posed_copy(c, 1)));
    const std::vector<double> expect{1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
    for (std::size_t q = 0; q < 12; ++q) EXPECT_EQ(t(1, q), expect[q]);
}

TEST(PoseTransfer, IdentityPipelineReturnsTargetRest) {
    const ModelParams m = init_model(ModelConfig{}, 9);
    const auto c = fixtures::tiny_character(4);
    const auto out = pose_transfer(m, c.rest, c.rest, c.rest);
    for (std::size_t i = 0; i < c.rest.vertices.size(); ++i)
        EXPECT_LE((out.deformed.vertices[i] - c.rest.vertices[i]).norm(), 1e-9);
}

TEST(PoseTransfer, ZeroDecoderAppliesSourceTransformsExactly) {
    const ModelParams m = init_model(ModelConfig{}, 10);
    const auto src = fixtures::tiny_character(5);
    const auto tgt = fixtures::tiny_character(6, 1.3);
    const PreparedMesh ps = prepare(src.rest), pt = prepare(tgt.rest);
    const Tensor posed = positions_tensor(posed_copy(src, 11));
    const TransferResult r = pose_transfer(m, posed, ps, pt);
    const Tensor ts = estimate_transforms(r.source_skinning, ps.positions, posed);
    EXPECT_EQ(r.target_transforms.data(), ts.data());
    const Tensor retarget = lbs(pt.positions, r.target_skinning, ts);
    EXPECT_LE(max_abs_diff(r.vertices.data(), retarget.data()), 1e-12);
}

TEST(PoseTransfer, PermutedTargetGivesPermutedOutput) {
    ModelParams m = init_model(ModelConfig{}, 12);
    randomize_decoder_output(m, 13);
    const auto src = fixtures::tiny_character(7);
    const auto tgt = fixtures::tiny_character(8, 0.8);
    const Mesh posed = posed_copy(src, 14);
    const auto perm = fixtures::random_permutation(tgt.rest.vertices.size(), 15);
    const auto a = pose_transfer(m, posed, src.rest, tgt.rest);
    const auto b = pose_transfer(m, posed, src.rest, fixtures::permuted(tgt.rest, perm));
    for (std::size_t i = 0; i < perm.size(); ++i)
        EXPECT_LE((a.deformed.vertices[i] - b.deformed.vertices[static_cast<std::size_t>(perm[i])]).norm(), 1e-9);
}

TEST(PoseTransfer, SourceConnectivityMustMatch) {
    const ModelParams m = init_model(small_config(), 1);
    const auto src = fixtures::tiny_character(1);
    EXPECT_THROW(pose_transfer(m, fixtures::triangle(), src.rest, src.rest), DimensionError);
}

TEST(PoseTransfer, FullPipelineGradcheckEveryParameterGroup) {
    ModelParams m = init_model(ModelConfig{}, 16);
    randomize_decoder_output(m, 17);
    const auto src = fixtures::tiny_character(9);
    const auto tgt = fixtures::tiny_character(10, 1.2);
    ASSERT_LE(src.rest.vertices.size(), 30u);
    const PreparedMesh ps = prepare(unit_height_normalization(src.rest).apply(src.rest));
    const PreparedMesh pt = prepare(unit_height_normalization(tgt.rest).apply(tgt.rest));
    const Tensor posed = positions_tensor(unit_height_normalization(src.rest).apply(posed_copy(src, 18)));
    const Tensor goal = positions_tensor(unit_height_normalization(tgt.rest).apply(posed_copy(tgt, 18)));
    ad::GradcheckOptions opt;
    opt.tolerance = 1e-3;
    opt.max_coords_per_tensor = 4;
    opt.seed = 19;
    std::set<std::string> groups;
    std::vector<Tensor> params;
    for (const auto& [name, t] : m.named_parameters()) {
        params.push_back(t);
        groups.insert(name.substr(0, name.find('.')));
    }
    EXPECT_EQ(groups, (std::set<std::string>{"skin", "encoder", "decoder"}));
    const auto rep = ad::gradcheck_inputs([&] { return loss_rec(pose_transfer(m, posed, ps, pt).vertices, goal); },
                                          params, opt);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
    EXPECT_GT(rep.checked, params.size() * 2);
}

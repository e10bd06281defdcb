#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "sfpt/synthdata.hpp"

using namespace sfpt;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("sfpt_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(GenerateCharacter, SameSeedIsBitIdentical) {
    const CharacterSpec spec = random_spec(17, CharacterStyle::stylized);
    const auto a = generate_character(spec), b = generate_character(spec);
    EXPECT_EQ(a.rest.vertices, b.rest.vertices);
    EXPECT_EQ(a.rest.faces, b.rest.faces);
    EXPECT_EQ(a.gt_skinning, b.gt_skinning);
}

TEST(GenerateCharacter, VertexCountMatchesRingFormula) {
    CharacterSpec s;
    s.limb_count = 2;
    s.segments_per_limb = 1;
    s.ring_resolution = 7;
    s.rings_per_segment = 3;
    // Torso: 2·3 rings of 7 plus two caps; each limb: 3 rings of 7 plus two caps.
    const std::size_t expected = (2 * 3 * 7 + 2) + 2 * (3 * 7 + 2);
    EXPECT_EQ(expected_vertex_count(s), expected);
    EXPECT_EQ(generate_character(s).rest.vertices.size(), expected);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const CharacterSpec r = random_spec(seed, CharacterStyle::stylized);
        EXPECT_EQ(generate_character(r).rest.vertices.size(), expected_vertex_count(r));
    }
}

TEST(GenerateCharacter, SkinningIsPartitionWithDominantPart) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto c = generate_character(random_spec(seed, seed % 2 ? CharacterStyle::stylized : CharacterStyle::humanoid));
        EXPECT_NO_THROW(validate(c.rest));
        EXPECT_TRUE(is_partition_of_unity(c.gt_skinning));
        EXPECT_EQ(c.part_ids.size(), static_cast<std::size_t>(c.gt_skinning.cols()));
        for (Eigen::Index i = 0; i < c.gt_skinning.rows(); ++i) EXPECT_GT(c.gt_skinning.row(i).maxCoeff(), 0.5);
        EXPECT_GE(c.gt_skinning.minCoeff(), 0.0);
    }
}

TEST(GenerateCharacter, TopologyVariantsChangePartCount) {
    CharacterSpec s;
    s.limb_count = 4;
    const auto base = generate_character(s).part_ids.size();
    s.variant = TopologyVariant::missing_limb;
    EXPECT_EQ(generate_character(s).part_ids.size(), base - 2);
    s.variant = TopologyVariant::extra_appendage;
    EXPECT_EQ(generate_character(s).part_ids.size(), base + 2);
}

TEST(GenerateCharacter, InvalidSpecRejected) {
    CharacterSpec s;
    s.limb_count = 7;
    EXPECT_THROW(generate_character(s), InvalidArgument);
    s = CharacterSpec{};
    s.segments_per_limb = 0;
    EXPECT_THROW(generate_character(s), InvalidArgument);
    s = CharacterSpec{};
    s.ring_resolution = 2;
    EXPECT_THROW(generate_character(s), InvalidArgument);
}

TEST(PoseCharacter, ZeroPoseIsRestBitwise) {
    const auto c = generate_character(random_spec(3, CharacterStyle::humanoid));
    EXPECT_EQ(pose_character(c, PoseSpec{}).vertices, c.rest.vertices);
}

TEST(PoseCharacter, AngleBoundEnforced) {
    const auto c = generate_character(random_spec(3, CharacterStyle::humanoid));
    PoseSpec p;
    p.rotations[1] = Vec3(0, 0, 1.0);
    EXPECT_THROW(pose_character(c, p, 0.5), InvalidArgument);
    EXPECT_NO_THROW(pose_character(c, p, 1.0));
}

TEST(PoseCharacter, SingleJointBendRotatesDistalVertices) {
    const auto c = generate_character(random_spec(5, CharacterStyle::humanoid));
    const int part = canonical_part_id(static_cast<int>(LimbSlot::arm_left), 1);
    std::size_t col = 0;
    while (c.part_ids[col] != part) ++col;
    PoseSpec p;
    p.rotations[static_cast<std::size_t>(part)] = Vec3(0, 0, M_PI / 2);
    const Mesh posed = pose_character(c, p);
    const Vec3 joint = c.rig[col].position;
    const Mat3 r = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
    std::size_t checked = 0;
    for (std::size_t i = 0; i < c.rest.vertices.size(); ++i) {
        const double w = c.gt_skinning(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col));
        if (w == 1.0) {
            EXPECT_LE((posed.vertices[i] - (r * (c.rest.vertices[i] - joint) + joint)).norm(), 1e-12);
            ++checked;
        } else if (w == 0.0) {
            EXPECT_LE((posed.vertices[i] - c.rest.vertices[i]).norm(), 1e-12);
        }
    }
    EXPECT_GT(checked, 0u);
}

TEST(PoseCharacter, SharedPoseGivesSameJointRotations) {
    // Two characters with different proportions: for every canonical part the
    // fitted rotation of its one-hot vertices is identical.
    const auto a = generate_character(random_spec(21, CharacterStyle::humanoid));
    const auto b = generate_character(random_spec(22, CharacterStyle::humanoid));
    ASSERT_EQ(a.part_ids, b.part_ids);
    const PoseSpec pose = random_pose(3, 0.8);
    auto rigid_rotations = [&](const CharacterSample& c) {
        const Mesh posed = pose_character(c, pose);
        std::vector<int> labels(c.rest.vertices.size(), 0);
        SkinningWeights w = SkinningWeights::Zero(c.gt_skinning.rows(), c.gt_skinning.cols());
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            Eigen::Index k;
            if (c.gt_skinning.row(i).maxCoeff(&k) == 1.0) w(i, k) = 1.0;
        }
        std::vector<Mat3> out;
        for (const auto& t : estimate_part_transforms(c.rest, posed, w)) out.push_back(t.rotation);
        return out;
    };
    const auto ra = rigid_rotations(a), rb = rigid_rotations(b);
    for (std::size_t k = 0; k < ra.size(); ++k) EXPECT_LE((ra[k] - rb[k]).norm(), 1e-9) << k;
}

TEST(PoseCharacter, EdgesBetweenConfidentVerticesKeepLength) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto c = generate_character(random_spec(seed, seed % 2 ? CharacterStyle::stylized : CharacterStyle::humanoid));
        const Mesh posed = pose_character(c, random_pose(seed + 100, 0.8));
        for (const auto& [a, b] : edge_set(c.rest)) {
            if (c.gt_skinning.row(a).maxCoeff() <= 0.9 || c.gt_skinning.row(b).maxCoeff() <= 0.9) continue;
            const auto i = static_cast<std::size_t>(a), j = static_cast<std::size_t>(b);
            const double l0 = (c.rest.vertices[i] - c.rest.vertices[j]).norm();
            const double l1 = (posed.vertices[i] - posed.vertices[j]).norm();
            EXPECT_LE(std::abs(l1 - l0) / l0, 0.02) << "seed " << seed << " edge " << a << "-" << b;
        }
    }
}

TEST(MakeDataset, CountsSplitsAndDeterminism) {
    DatasetConfig cfg;
    cfg.paired = 4;
    cfg.static_only = 4;
    cfg.held_out = 2;
    cfg.poses = 3;
    const Dataset a = make_dataset(cfg), b = make_dataset(cfg);
    ASSERT_EQ(a.characters.size(), 10u);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < a.characters.size(); ++i) {
        const auto& c = a.characters[i];
        ids.insert(c.id);
        for (std::size_t j = 0; j < i; ++j) EXPECT_NE(c.sample.rest.vertices, a.characters[j].sample.rest.vertices);
        EXPECT_EQ(c.sample.rest.vertices, b.characters[i].sample.rest.vertices);
        EXPECT_EQ(c.sample.poses.size(), c.split == Split::static_only ? 0u : 3u);
        for (const auto& p : c.sample.poses) {
            EXPECT_TRUE(same_topology(p.mesh, c.sample.rest));
            EXPECT_EQ(p.mesh.vertices, b.characters[i].sample.poses[static_cast<std::size_t>(&p - &c.sample.poses[0])].mesh.vertices);
        }
    }
    EXPECT_EQ(ids.size(), 10u);
    EXPECT_EQ(a.split(Split::paired).size(), 4u);
    EXPECT_EQ(a.split(Split::held_out).size(), 2u);
    // Paired characters share pose ids; held-out characters use unseen poses.
    EXPECT_EQ(a.split(Split::paired)[0]->sample.poses[1].pose_id, a.split(Split::paired)[3]->sample.poses[1].pose_id);
    EXPECT_GE(a.split(Split::held_out)[0]->sample.poses[0].pose_id, cfg.poses);
}

TEST(MakeDataset, DiskRoundTrip) {
    DatasetConfig cfg;
    cfg.paired = 2;
    cfg.static_only = 1;
    cfg.held_out = 1;
    cfg.poses = 2;
    const Dataset d = make_dataset(cfg);
    const auto dir = scratch("dataset");
    write_dataset(d, dir);
    const Dataset r = read_dataset(dir);
    ASSERT_EQ(r.characters.size(), d.characters.size());
    ASSERT_EQ(r.poses.size(), d.poses.size());
    for (std::size_t p = 0; p < d.poses.size(); ++p)
        for (std::size_t j = 0; j < d.poses[p].rotations.size(); ++j) EXPECT_EQ(r.poses[p].rotations[j], d.poses[p].rotations[j]);
    for (std::size_t i = 0; i < d.characters.size(); ++i) {
        const auto &x = d.characters[i], &y = r.characters[i];
        EXPECT_EQ(x.id, y.id);
        EXPECT_EQ(x.split, y.split);
        EXPECT_EQ(x.sample.part_ids, y.sample.part_ids);
        EXPECT_EQ(x.sample.rest.vertices, y.sample.rest.vertices);  // %.17g is exact
        EXPECT_EQ(x.sample.gt_skinning, y.sample.gt_skinning);
        ASSERT_EQ(x.sample.poses.size(), y.sample.poses.size());
        for (std::size_t p = 0; p < x.sample.poses.size(); ++p) {
            EXPECT_EQ(x.sample.poses[p].pose_id, y.sample.poses[p].pose_id);
            EXPECT_EQ(x.sample.poses[p].mesh.vertices, y.sample.poses[p].mesh.vertices);
        }
        EXPECT_EQ(x.sample.gt_labels(), y.sample.gt_labels());
    }
    std::filesystem::remove_all(dir);
}

TEST(MakeDataset, MissingDirectoryIsIoError) { EXPECT_THROW(read_dataset("/nonexistent/sfpt"), IoError); }

TEST(CanonicalParts, NamesRoundTrip) {
    for (int id = 0; id < kCanonicalParts; ++id) EXPECT_EQ(canonical_part_id(canonical_part_name(id)), id);
    EXPECT_EQ(canonical_part_name(0), "torso");
    EXPECT_EQ(canonical_part_name(canonical_part_id(4, 1)), "head.1");
}

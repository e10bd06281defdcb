#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "sfpt/mesh.hpp"

using namespace sfpt;

namespace {

Mesh parse(const std::string& text) {
    std::istringstream in(text);
    return parse_obj(in);
}

}  // namespace

TEST(ObjParse, SingleTriangle) {
    const Mesh m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    ASSERT_EQ(m.vertices.size(), 3u);
    ASSERT_EQ(m.faces.size(), 1u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(ObjParse, QuadIsFanTriangulated) {
    const Mesh m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
    ASSERT_EQ(m.faces.size(), 2u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
    EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
}

TEST(ObjParse, OutOfRangeIndexReportsLine) {
    try {
        parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(ObjParse, AttributesNegativeIndicesAndIgnoredLines) {
    const Mesh m = parse(
        "# comment\no thing\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\n"
        "f 1/1/1 2//1 -1/3\nusemtl x\n");
    ASSERT_EQ(m.faces.size(), 1u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(ObjParse, MalformedNumberIsParseError) {
    EXPECT_THROW(parse("v 0 zero 0\n"), ParseError);
    EXPECT_THROW(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n"), ParseError);
}

TEST(ObjParse, MissingFileIsIoError) { EXPECT_THROW(load_obj("/nonexistent/dir/x.obj"), IoError); }

TEST(ObjWrite, RoundTripPreservesGeometry) {
    const Mesh m = fixtures::random_tube(4, 7, 3);
    const auto path = std::filesystem::temp_directory_path() / "sfpt_mesh_roundtrip.obj";
    save_obj(m, path.string());
    const Mesh r = load_obj(path.string());
    std::filesystem::remove(path);
    ASSERT_EQ(r.vertices.size(), m.vertices.size());
    EXPECT_EQ(r.faces, m.faces);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_LE((r.vertices[i] - m.vertices[i]).norm(), 1e-6);
}

TEST(ObjWrite, KeepsSevenSignificantDigits) {
    Mesh m = fixtures::triangle();
    m.vertices[0] = Vec3(0.1234567, 0, 0);
    std::ostringstream out;
    write_obj(out, m);
    EXPECT_NE(out.str().find("0.1234567"), std::string::npos);
}

TEST(ObjWrite, EmptyFaceMeshIsRejected) {
    Mesh m = fixtures::triangle();
    m.faces.clear();
    EXPECT_THROW(save_obj(m, (std::filesystem::temp_directory_path() / "sfpt_empty.obj").string()),
                 InvalidArgument);
}

TEST(MeshValidate, RejectsRepeatedVertexInFace) {
    Mesh m = fixtures::triangle();
    m.faces[0] = {0, 1, 1};
    EXPECT_THROW(validate(m), InvalidArgument);
}

TEST(VertexNormals, PlanarTriangle) {
    for (const auto& n : vertex_normals(fixtures::triangle())) EXPECT_LE((n - Vec3(0, 0, 1)).norm(), 1e-12);
}

TEST(VertexNormals, CubeCornersMatchAreaWeightedOracle) {
    const auto n = vertex_normals(fixtures::cube());
    EXPECT_LE((n[0] - Vec3(-1, -1, -1).normalized()).norm(), 1e-12);
    EXPECT_LE((n[7] - Vec3(1, 1, 1).normalized()).norm(), 1e-12);
    // Vertex 1 touches one triangle of the -z and -y quads and both of +x.
    const Vec3 oracle = (0.5 * Vec3(0, 0, -1) + 0.5 * Vec3(0, -1, 0) + 1.0 * Vec3(1, 0, 0)).normalized();
    EXPECT_LE((n[1] - oracle).norm(), 1e-12);
}

TEST(VertexNormals, IsolatedVertexIsZero) {
    Mesh m = fixtures::triangle();
    m.vertices.emplace_back(5, 5, 5);
    EXPECT_EQ(vertex_normals(m)[3], Vec3::Zero());
}

TEST(VertexNormals, PermutationEquivariant) {
    const Mesh m = fixtures::random_tube(5, 6, 11);
    std::vector<int> perm(m.vertices.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mesh p = m;  // p.vertices[perm[i]] = m.vertices[i]
    for (std::size_t i = 0; i < perm.size(); ++i) p.vertices[static_cast<std::size_t>(perm[i])] = m.vertices[i];
    for (auto& f : p.faces)
        for (auto& v : f) v = perm[static_cast<std::size_t>(v)];
    const auto a = vertex_normals(m);
    const auto b = vertex_normals(p);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_LE((a[i] - b[static_cast<std::size_t>(perm[i])]).norm(), 1e-12);
}

TEST(VertexFeatures, TriangleRows) {
    const auto f = vertex_features(fixtures::triangle());
    ASSERT_EQ(f.cols(), 6);
    EXPECT_DOUBLE_EQ(f(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(f(1, 5), 1.0);
    EXPECT_DOUBLE_EQ(f(2, 3), 0.0);
}

TEST(VertexFeatures, TranslationAndRotation) {
    const Mesh m = fixtures::random_tube(4, 6, 2);
    std::mt19937_64 rng(9);
    const Mat3 r = fixtures::random_rotation(rng);
    const Vec3 t(0.3, -1.0, 2.0);
    Mesh shifted = m, rotated = m;
    for (auto& v : shifted.vertices) v += t;
    for (auto& v : rotated.vertices) v = r * v;
    const auto f = vertex_features(m), fs = vertex_features(shifted), fr = vertex_features(rotated);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        const Vec3 p = f.row(i).head<3>().transpose(), n = f.row(i).tail<3>().transpose();
        EXPECT_LE((Vec3(fs.row(i).head<3>().transpose()) - (p + t)).norm(), 1e-12);
        EXPECT_LE((Vec3(fs.row(i).tail<3>().transpose()) - n).norm(), 1e-12);
        EXPECT_LE((Vec3(fr.row(i).head<3>().transpose()) - r * p).norm(), 1e-12);
        EXPECT_LE((Vec3(fr.row(i).tail<3>().transpose()) - r * n).norm(), 1e-9);
        EXPECT_NEAR(n.norm(), 1.0, 1e-6);
    }
}

TEST(EdgeSet, Counts) {
    EXPECT_EQ(edge_set(fixtures::triangle()).size(), 3u);
    Mesh two = fixtures::triangle();
    two.vertices.emplace_back(1, 1, 0);
    two.faces.push_back({1, 3, 2});
    EXPECT_EQ(edge_set(two).size(), 5u);
    const auto tet = edge_set(fixtures::tetrahedron());
    EXPECT_EQ(tet.size(), 6u);
    for (const auto& [a, b] : tet) EXPECT_LT(a, b);
}

TEST(GraphOperator, TriangleRowsAreThirds) {
    const auto g = graph_operator(fixtures::triangle());
    const Eigen::MatrixXd d(g.matrix);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(d(i, j), 1.0 / 3.0, 1e-15);
}

TEST(GraphOperator, IsolatedVertexAndPath) {
    Mesh m;
    // Triangles cannot form a bare path; vertex 0 has exactly two neighbours,
    // like the middle of a path, and vertex 5 is isolated.
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 1, 0}, {1, -1, 0}, {9, 9, 9}};
    m.faces = {{0, 1, 3}, {1, 2, 4}};
    const Eigen::MatrixXd d(graph_operator(m).matrix);
    EXPECT_DOUBLE_EQ(d(5, 5), 1.0);
    EXPECT_DOUBLE_EQ(d.row(5).sum(), 1.0);
    // Vertex 0 neighbours {1, 3}: three entries of 1/3.
    EXPECT_NEAR(d(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(d(0, 1), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(d(0, 3), 1.0 / 3.0, 1e-15);
}

TEST(GraphOperator, RowsSumToOneAndPatternSymmetric) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto g = graph_operator(fixtures::random_tube(3 + static_cast<int>(s), 5, s));
        const Eigen::MatrixXd d(g.matrix);
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            EXPECT_NEAR(d.row(i).sum(), 1.0, 1e-6);
            for (Eigen::Index j = 0; j < d.cols(); ++j) EXPECT_EQ(d(i, j) != 0.0, d(j, i) != 0.0);
        }
    }
}

TEST(Normalization, UnitHeightCentered) {
    Mesh m = fixtures::cube();
    for (auto& v : m.vertices) v = 3.0 * v + Vec3(1, 2, 3);
    const auto n = unit_height_normalization(m);
    const Mesh u = n.apply(m);
    EXPECT_NEAR(mesh_height(u), 1.0, 1e-12);
    const Mesh back = n.invert(u);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_LE((back.vertices[i] - m.vertices[i]).norm(), 1e-12);
}

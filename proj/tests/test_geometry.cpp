#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mvembed/geometry.hpp"
#include "support.hpp"

using namespace mvembed;

TEST(ParseObj, Tetrahedron) {
    const auto m = parse_obj(testsupport::tetra_obj());
    EXPECT_EQ(m.vertices.size(), 4u);
    EXPECT_EQ(m.faces.size(), 4u);
    EXPECT_EQ(m.faces[0], (Face{0, 2, 1}));
}

TEST(ParseObj, QuadIsFanTriangulated) {
    const auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
    ASSERT_EQ(m.faces.size(), 2u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
    EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
}

TEST(ParseObj, PentagonGivesThreeTriangles) {
    const auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 2 1 0\nv 1 2 0\nv 0 1 0\nf 1 2 3 4 5\n");
    ASSERT_EQ(m.faces.size(), 3u);
    EXPECT_EQ(m.faces[2], (Face{0, 3, 4}));
}

TEST(ParseObj, IndexOutOfRange) { EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 5\n"), ParseError); }

TEST(ParseObj, IndexZeroRejected) { EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n"), ParseError); }

TEST(ParseObj, MalformedNumber) {
    EXPECT_THROW(parse_obj("v 0 0 zero\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"), ParseError);
    EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3x\n"), ParseError);
}

TEST(ParseObj, NoFaces) { EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\n"), ParseError); }

TEST(ParseObj, SlashIndicesAndIgnoredLines) {
    const auto m = parse_obj(
        "# comment\nmtllib a.mtl\no thing\ng grp\ns 1\nusemtl red\n"
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nf 1/1/1 2/2/1 3//1\n");
    ASSERT_EQ(m.faces.size(), 1u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(ParseObj, NegativeIndicesAreRelative) {
    const auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\nv 0 0 1\nf -1 -2 -3\n");
    ASSERT_EQ(m.faces.size(), 2u);
    EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
    EXPECT_EQ(m.faces[1], (Face{3, 2, 1}));
}

TEST(ParseObj, RoundTrip) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = testsupport::random_mesh(rng, 3 + trial, 5 + trial);
        std::ostringstream out;
        write_obj(m, out);
        EXPECT_EQ(parse_obj(out.str()), m);
    }
}

TEST(NormalizeMesh, UnitCube) {
    const auto n = normalize_mesh(testsupport::unit_cube());
    EXPECT_LE(norm(centroid(n.vertices())), 1e-12);
    for (const auto& v : n.vertices()) EXPECT_NEAR(norm(v), 1.0, 1e-12);
}

TEST(NormalizeMesh, Idempotent) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto once = normalize_mesh(testsupport::random_mesh(rng, 12, 10));
        const auto twice = normalize_mesh(once.mesh());
        for (std::size_t i = 0; i < once.vertices().size(); ++i)
            EXPECT_LE(norm(once.vertices()[i] - twice.vertices()[i]), 1e-12);
        EXPECT_EQ(once.faces(), twice.faces());
    }
}

TEST(NormalizeMesh, InvariantsHold) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto n = normalize_mesh(testsupport::random_mesh(rng, 20, 10));
        EXPECT_LE(norm(centroid(n.vertices())), 1e-6);
        EXPECT_NEAR(max_radius(n.vertices()), 1.0, 1e-6);
    }
}

TEST(NormalizeMesh, DegenerateThrows) {
    Mesh m;
    m.vertices = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
    m.faces = {{0, 1, 2}};
    EXPECT_THROW(normalize_mesh(m), Error);
}

TEST(PerturbMesh, PreservesPairwiseDistances) {
    std::mt19937_64 rng(10);
    const auto n = normalize_mesh(testsupport::random_mesh(rng, 25, 10));
    for (std::uint64_t seed : {0ull, 1ull, 77ull, 123456789ull}) {
        const auto p = perturb_mesh(n, seed);
        for (std::size_t i = 0; i < n.vertices().size(); ++i)
            for (std::size_t j = i + 1; j < n.vertices().size(); ++j)
                EXPECT_NEAR(norm(n.vertices()[i] - n.vertices()[j]), norm(p.vertices()[i] - p.vertices()[j]), 1e-9);
    }
}

TEST(PerturbMesh, DeterministicPerSeed) {
    const auto n = normalize_mesh(testsupport::unit_cube());
    EXPECT_EQ(perturb_mesh(n, 42).mesh(), perturb_mesh(n, 42).mesh());
    EXPECT_NE(perturb_mesh(n, 42).mesh(), perturb_mesh(n, 43).mesh());
}

TEST(PerturbMesh, SphereNormsUnchanged) {
    const auto n = normalize_mesh(testsupport::unit_sphere(2));
    const auto p = perturb_mesh(n, 3);
    std::vector<double> a, b;
    for (const auto& v : n.vertices()) a.push_back(norm(v));
    for (const auto& v : p.vertices()) b.push_back(norm(v));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(PerturbMesh, StaysNormalized) {
    std::mt19937_64 rng(12);
    const auto p = perturb_mesh(normalize_mesh(testsupport::random_mesh(rng, 30, 10)), 99);
    EXPECT_LE(norm(centroid(p.vertices())), 1e-6);
    EXPECT_NEAR(max_radius(p.vertices()), 1.0, 1e-6);
}

TEST(RandomRotation, IsProperOrthogonal) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto r = random_rotation(seed);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double d = 0;
                for (int k = 0; k < 3; ++k) d += r[i * 3 + k] * r[j * 3 + k];
                EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-12);
            }
        const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                           r[2] * (r[3] * r[7] - r[4] * r[6]);
        EXPECT_NEAR(det, 1.0, 1e-12);
    }
}

// A uniform rotation sends a fixed axis to a uniform point on the sphere, so
// each coordinate of the image has mean 0 and variance 1/3.
TEST(RandomRotation, AxisImageLooksUniform) {
    const int n = 4000;
    double mean = 0, sq = 0;
    for (int s = 0; s < n; ++s) {
        const auto v = apply(random_rotation(static_cast<std::uint64_t>(s)), {0, 0, 1});
        mean += v.z;
        sq += v.z * v.z;
    }
    EXPECT_NEAR(mean / n, 0.0, 0.05);
    EXPECT_NEAR(sq / n, 1.0 / 3.0, 0.03);
}

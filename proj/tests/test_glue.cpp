#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "rext/glue.hpp"
#include "rext/lengthspace.hpp"
#include "rext/spec_io.hpp"

using namespace rext;

namespace {

ManifoldWithBoundary flat_halfplane() {
    return parse_manifold(json::parse(R"js({
        "dimension": 2,
        "charts": [{"id": "H", "domain": {"cut": {"axis": 2, "offset": 0, "keep": "le"}},
                    "metric": [["1", "0"], ["0", "1"]]}]
    })js"));
}

ManifoldWithBoundary disk_complement() {
    return parse_manifold(json::parse(R"js({
        "dimension": 2,
        "charts": [{"id": "P", "domain": {"box": {"lo": [0, 1], "hi": [6.283185307179586, 3]},
                                          "periodic": [true, false],
                                          "cut": {"axis": 2, "offset": 1, "keep": "ge"}},
                    "metric": [["x2^2", "0"], ["0", "1"]]}]
    })js"));
}

ManifoldWithBoundary closed_disk() {
    return parse_manifold(json::parse(R"js({
        "dimension": 2,
        "charts": [
          {"id": "P", "domain": {"box": {"lo": [0, 0.25], "hi": [6.283185307179586, 1]},
                                 "periodic": [true, false],
                                 "cut": {"axis": 2, "offset": 1, "keep": "le"}},
           "metric": [["x2^2", "0"], ["0", "1"]]},
          {"id": "C", "domain": {"ball": {"center": [0, 0], "radius": 0.5, "open": true}},
           "metric": [["1", "0"], ["0", "1"]]}
        ],
        "transitions": [
          {"from": "P", "to": "C", "map": ["x2*cos(x1)", "x2*sin(x1)"]},
          {"from": "C", "to": "P", "map": ["atan2(x2, x1)", "sqrt(x1^2 + x2^2)"]}
        ]
    })js"));
}

Vec pt(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

/// Cartesian position of a vertex of the glued disk atlas.
Vec cartesian(const GluedManifold& N, const MeshVertex& v) {
    const std::string& id = N.atlas->charts[static_cast<std::size_t>(v.chart)].id;
    if (id == "Q:C") return v.x;
    return pt(v.x[1] * std::cos(v.x[0]), v.x[1] * std::sin(v.x[0]));
}

}  // namespace

TEST(Glue, FlatDoubleIsPlane) {
    auto M = flat_halfplane();
    auto N = glue(M, flat_halfplane(), BoundaryDiffeo::identity(2, 1));
    ASSERT_EQ(N.collars.size(), 1u);
    EXPECT_TRUE(N.collars[0].orientation_preserving);
    Mesh mesh = N.sample(0.5, Window{Box{{-1, -1}, {1, 1}}, {}});
    // 5 x 5 plane grid, every vertex in the collar chart
    EXPECT_EQ(mesh.num_vertices(), 25u);
    for (const auto& v : mesh.vertices) {
        EXPECT_EQ(v.chart, 0);
        if (std::fabs(v.x[1]) < 1) EXPECT_EQ(collar_coordinates(N, v.chart, v.x).s, v.x[1]);
        EXPECT_EQ(bool(v.flags & kInM), v.x[1] <= 0);
        EXPECT_EQ(bool(v.flags & kInQ), v.x[1] >= 0);
    }
    EXPECT_EQ(boundary_vertices(mesh).size(), 5u);
    for (int v : boundary_vertices(mesh)) EXPECT_EQ(mesh.vertices[static_cast<std::size_t>(v)].x[1], 0.0);
    // the union metric is the flat metric on both sides
    for (double l : mesh.lengths("g_MQ")) EXPECT_TRUE(l == 0.5 || std::fabs(l - 0.5 * std::sqrt(2.0)) < 1e-15);
}

TEST(Glue, CollarCoordinates) {
    auto N = glue(flat_halfplane(), flat_halfplane(), BoundaryDiffeo::identity(2, 1));
    auto at0 = collar_coordinates(N, 0, pt(0.7, 0.0));
    EXPECT_EQ(at0.s, 0.0);
    EXPECT_EQ(at0.u[0], 0.7);
    auto deep = collar_coordinates(N, 0, pt(0.2, -0.3));
    EXPECT_DOUBLE_EQ(deep.s, -0.3);
    EXPECT_THROW(collar_coordinates(N, 0, pt(0.0, -1.5)), Error);
    // a Q-chart point reaches the collar through η and the product structure
    auto q = collar_coordinates(N, N.q_chart[0], pt(0.4, -0.25));
    EXPECT_DOUBLE_EQ(q.s, 0.25);
    EXPECT_DOUBLE_EQ(q.u[0], 0.4);
}

TEST(Glue, MeshRestrictsToM) {
    auto M = flat_halfplane();
    auto N = glue(M, flat_halfplane(), BoundaryDiffeo::identity(2, 1));
    Window w{Box{{-1, -1}, {1, 1}}, {}};
    Mesh mn = N.sample(0.25, w);
    Mesh mm = sample_mesh(M, 0.25, w);
    std::set<std::pair<double, double>> vn, vm;
    std::set<std::tuple<double, double, double, double>> en, em;
    auto key = [](const Mesh& ms, const MeshEdge& e) {
        auto a = ms.vertices[static_cast<std::size_t>(e.a)].x, b = ms.vertices[static_cast<std::size_t>(e.b)].x;
        if (std::make_pair(a[0], a[1]) > std::make_pair(b[0], b[1])) std::swap(a, b);
        return std::make_tuple(a[0], a[1], b[0], b[1]);
    };
    for (const auto& v : mn.vertices)
        if (v.flags & kInM) vn.emplace(v.x[0], v.x[1]);
    for (const auto& v : mm.vertices) vm.emplace(v.x[0], v.x[1]);
    for (const auto& e : mn.edges)
        if ((mn.vertices[static_cast<std::size_t>(e.a)].flags & kInM) && (mn.vertices[static_cast<std::size_t>(e.b)].flags & kInM))
            en.insert(key(mn, e));
    for (const auto& e : mm.edges) em.insert(key(mm, e));
    EXPECT_EQ(vn, vm);
    EXPECT_EQ(en, em);
    // the ∂M flags agree with M's own boundary vertices
    std::size_t nb = 0;
    for (const auto& v : mn.vertices) nb += (v.flags & kOnBoundary) ? 1 : 0;
    EXPECT_EQ(nb, boundary_vertices(mm).size());
}

TEST(Glue, DiskPatchCoversPlane) {
    auto N = glue(disk_complement(), closed_disk(), BoundaryDiffeo::identity(2, 1));
    const double h = 0.05;
    Mesh mesh = N.sample(h, Window{}, Stencil::Knight);
    // coverage: every Cartesian point of radius < 2.9 has a vertex within half a polar cell
    // diagonal (angular spacing is h in θ, so up to 2.9h in arc length)
    std::vector<Vec> pos;
    for (const auto& v : mesh.vertices) pos.push_back(cartesian(N, v));
    std::size_t centre = 0;
    for (const auto& v : mesh.vertices)
        if (N.atlas->charts[static_cast<std::size_t>(v.chart)].id == "Q:C") {
            ++centre;
            EXPECT_LT(v.x.norm(), 0.25);
        }
    EXPECT_GT(centre, 0u);
    for (double x = -2.8; x <= 2.8; x += 0.37)
        for (double y = -2.8; y <= 2.8; y += 0.41) {
            if (std::hypot(x, y) > 2.9) continue;
            double best = kInf;
            for (const auto& p : pos) best = std::min(best, (p - pt(x, y)).norm());
            EXPECT_LT(best, 0.5 * std::hypot(2.9 * h * 1.0001, h)) << x << "," << y;
        }
    // interface vertices sit on the unit circle
    for (int v : boundary_vertices(mesh)) EXPECT_NEAR(pos[static_cast<std::size_t>(v)].norm(), 1.0, 1e-12);
    // distances agree with the Euclidean plane within the stencil budget
    auto near_to = [&](double x, double y) {
        int best = -1;
        double bd = kInf;
        for (std::size_t v = 0; v < pos.size(); ++v)
            if ((pos[v] - pt(x, y)).norm() < bd) {
                bd = (pos[v] - pt(x, y)).norm();
                best = static_cast<int>(v);
            }
        return best;
    };
    const std::vector<std::pair<Vec, Vec>> pairs = {{pt(-2, 0), pt(2, 0)}, {pt(0, -1.5), pt(0.1, 1.5)},
                                                    {pt(-0.05, 0.05), pt(1.6, 1.2)}, {pt(0.9, 0), pt(1.8, 0.3)}};
    for (const auto& [a, b] : pairs) {
        const int va = near_to(a[0], a[1]), vb = near_to(b[0], b[1]);
        const double d = *length_distance(va, vb, mesh, "g_MQ");
        const double e = (pos[static_cast<std::size_t>(va)] - pos[static_cast<std::size_t>(vb)]).norm();
        EXPECT_NEAR(d, e, 0.04 * e) << a.transpose() << " -> " << b.transpose();
        EXPECT_GE(d, e * (1 - 1e-9));
    }
}

TEST(Glue, SwappedOrientation) {
    auto eta = parse_eta(json::parse(R"js([{"forward": ["6.283185307179586 - x1"], "inverse": ["6.283185307179586 - x1"]}])js"), 2, 1);
    auto N = glue(disk_complement(), closed_disk(), eta);
    EXPECT_FALSE(N.collars[0].orientation_preserving);
    auto N2 = glue(disk_complement(), closed_disk(), BoundaryDiffeo::identity(2, 1));
    EXPECT_TRUE(N2.collars[0].orientation_preserving);
    Mesh mesh = N.sample(0.1, Window{});
    EXPECT_GT(mesh.num_vertices(), 0u);
}

TEST(Glue, Errors) {
    auto M = flat_halfplane();
    auto none = parse_manifold(json::parse(R"js({"dimension": 2, "charts": [{"id": "R", "domain": {}, "metric": [["1","0"],["0","1"]]}]})js"));
    EXPECT_THROW(glue(M, none, BoundaryDiffeo::identity(2, 1)), SpecError);
    auto bad = parse_eta(json::parse(R"js([{"forward": ["x1^2"], "inverse": ["x1"]}])js"), 2, 1);
    EXPECT_THROW(glue(M, flat_halfplane(), bad), SpecError);
}

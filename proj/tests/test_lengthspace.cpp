#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rext/lengthspace.hpp"

using namespace rext;

namespace {

std::shared_ptr<Atlas> plane_atlas(bool open_disk = false) {
    auto a = std::make_shared<Atlas>();
    a->dim = 2;
    Domain d = open_disk ? Domain::full_ball({0, 0}, 1.0, true) : Domain::box({-kInf, -kInf}, {kInf, kInf});
    a->charts.push_back({"R", d, MetricExpr::identity(2)});
    return a;
}

int nearest(const Mesh& m, double x, double y) {
    int best = -1;
    double bd = kInf;
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
        const double d = std::hypot(m.vertices[v].x[0] - x, m.vertices[v].x[1] - y);
        if (d < bd) {
            bd = d;
            best = static_cast<int>(v);
        }
    }
    return best;
}

Vec pt(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

}  // namespace

TEST(MetricLength, StraightSegment) {
    auto p = SampledPath::in_chart(0, {pt(0, 0), pt(3, 4)});
    EXPECT_DOUBLE_EQ(metric_length(p, euclidean_oracle()).length, 5.0);
}

TEST(MetricLength, IrregularStamps) {
    SampledPath p;
    double t = 0;
    for (int i = 0; i < 17; ++i) {
        const double s = (i == 16) ? 1.0 : std::pow(i / 16.0, 1.7);
        p.push(t, {0, pt(3 * s, 4 * s), -1});
        t += 0.01 + 0.003 * (i % 3);
    }
    EXPECT_NEAR(metric_length(p, euclidean_oracle()).length, 5.0, 1e-12);
}

TEST(MetricLength, QuarterCircle) {
    std::vector<Vec> xs;
    for (int i = 0; i < 64; ++i) {
        const double a = (std::numbers::pi / 2) * i / 63.0;
        xs.push_back(pt(std::cos(a), std::sin(a)));
    }
    auto r = metric_length(SampledPath::in_chart(0, xs), euclidean_oracle());
    EXPECT_NEAR(r.length, std::numbers::pi / 2, 1e-3);
    EXPECT_TRUE(r.stabilized);
    EXPECT_LE(r.depth, r.max_depth);
}

TEST(MetricLength, OracleFailure) {
    SampledPath p;
    p.push(0, {0, pt(0, 0), -1});
    p.push(1, {1, pt(1, 0), -1});
    EXPECT_THROW(metric_length(p, euclidean_oracle()), Error);
}

TEST(RiemannianLength, HyperbolicSegment) {
    auto a = std::make_shared<Atlas>();
    a->dim = 2;
    a->charts.push_back({"U", Domain::box({-kInf, 1e-9}, {kInf, kInf}), MetricExpr::parse({{"1/x2^2", "0"}, {"0", "1/x2^2"}}, 2)});
    std::vector<Vec> xs;
    for (int i = 0; i <= 64; ++i) xs.push_back(pt(0, 1 + i / 64.0));
    EXPECT_NEAR(riemannian_length(SampledPath::in_chart(0, xs), *a, AtlasMetric::from_atlas(*a)), std::log(2.0), 1e-6);
}

TEST(RiemannianLength, FlatAndErrors) {
    auto a = plane_atlas();
    auto p = SampledPath::in_chart(0, {pt(0, -1), pt(0, 0)});
    EXPECT_DOUBLE_EQ(riemannian_length(p, *a, AtlasMetric::from_atlas(*a)), 1.0);
    AtlasMetric none;
    none.per_chart.emplace_back(std::nullopt);
    EXPECT_THROW(riemannian_length(p, *a, none), Error);
}

TEST(LengthDistance, OctileBoundAndKnightStencil) {
    // 8-neighbour grids give the octile distance exactly: max + (√2 − 1)·min
    auto a = plane_atlas();
    ManifoldWithBoundary man{a, {}};
    Window w{Box{{-0.5, -0.5}, {3.5, 4.5}}, {}};
    Mesh oct = sample_mesh(man, 0.05, w);
    auto d8 = length_distance(nearest(oct, 0, 0), nearest(oct, 3, 4), oct, "g");
    ASSERT_TRUE(d8);
    EXPECT_NEAR(*d8, 4 + (std::sqrt(2.0) - 1) * 3, 1e-9);
    EXPECT_LE(*d8 / 5.0, 1.0824);  // worst-case octile distortion
    Mesh kn = sample_mesh(man, 0.05, w, Stencil::Knight);
    auto d16 = length_distance(nearest(kn, 0, 0), nearest(kn, 3, 4), kn, "g");
    ASSERT_TRUE(d16);
    EXPECT_NEAR(*d16, 5.0, 0.02 * 5.0);
    EXPECT_EQ(length_distance(3, 3, kn, "g").value(), 0.0);
}

TEST(LengthDistance, Unreachable) {
    auto a = plane_atlas();
    ManifoldWithBoundary man{a, {}};
    Mesh m = sample_mesh(man, 0.25, Window{Box{{-1, -1}, {1, 1}}, {}});
    Mask mask = mask_where(m, [&](int v) { return std::fabs(m.vertices[static_cast<std::size_t>(v)].x[0]) > 0.3; });
    EXPECT_FALSE(length_distance(nearest(m, -1, 0), nearest(m, 1, 0), m, "g", mask).has_value());
}

TEST(LengthDistance, MetricAxiomsAndWindowMonotonicity) {
    auto a = plane_atlas();
    a->charts[0].metric = MetricExpr::conformal(parse_expr("1 + 0.5*sin(x1)*cos(x2)", 2), 2);
    ManifoldWithBoundary man{a, {}};
    Mesh small = sample_mesh(man, 0.1, Window{Box{{-1, -1}, {1, 1}}, {}});
    Mesh big = sample_mesh(man, 0.1, Window{Box{{-2, -2}, {2, 2}}, {}});
    const int x = nearest(small, -0.8, 0.7), y = nearest(small, 0.9, -0.6), z = nearest(small, 0.1, 0.9);
    const double dxy = *length_distance(x, y, small, "g"), dyx = *length_distance(y, x, small, "g");
    EXPECT_NEAR(dxy, dyx, 1e-12);
    EXPECT_LE(dxy, *length_distance(x, z, small, "g") + *length_distance(z, y, small, "g") + 1e-12);
    const double dbig = *length_distance(nearest(big, -0.8, 0.7), nearest(big, 0.9, -0.6), big, "g");
    EXPECT_LE(dbig, dxy + 1e-12);
    // infimum property: straight polyline is no shorter than the mesh distance's continuum limit
    auto sp = dijkstra(small, small.lengths("g"), x);
    auto path = sp.path_to(y);
    EXPECT_NEAR(mesh_path_length(small, small.lengths("g"), path), dxy, 1e-12);
    EXPECT_LE(dxy, riemannian_length(SampledPath::from_vertices(small, path), *a, AtlasMetric::from_atlas(*a)) + 1e-9);
}

TEST(LengthSpace, MetricLengthMatchesRiemannianOnMeshPaths) {
    auto a = plane_atlas();
    a->charts[0].metric = MetricExpr::conformal(parse_expr("exp(0.3*x1)", 2), 2);
    ManifoldWithBoundary man{a, {}};
    Mesh m = sample_mesh(man, 0.05, Window{Box{{-1, -1}, {1, 1}}, {}});
    const auto& len = m.lengths("g");
    auto sp = dijkstra(m, len, nearest(m, -0.9, -0.9));
    auto path = sp.path_to(nearest(m, 0.8, 0.6));
    auto p = SampledPath::from_vertices(m, path);
    const double rl = riemannian_length(p, *a, AtlasMetric::from_atlas(*a));
    auto ml = metric_length(p, [&](const PathPoint& u, const PathPoint& v) -> std::optional<double> {
        return length_distance(u.vertex, v.vertex, m, "g");
    });
    EXPECT_NEAR(ml.length, rl, 0.02 * rl);
}

TEST(IsDivergent, Examples) {
    std::vector<Region> windows;
    for (double r : {1.0, 2.0, 4.0, 8.0, 16.0})
        windows.push_back([r](const PathPoint& p) { return p.x.lpNorm<Eigen::Infinity>() <= r; });
    std::vector<Vec> ray, loop;
    for (int i = 0; i < 200; ++i) {
        const double t = i / 200.0;
        ray.push_back(pt(t / (1 - t), 0));
        loop.push_back(pt(std::cos(2 * std::numbers::pi * t), std::sin(2 * std::numbers::pi * t)));
    }
    EXPECT_TRUE(is_divergent(SampledPath::in_chart(0, ray), windows));
    EXPECT_FALSE(is_divergent(SampledPath::in_chart(0, loop), windows));
    // punctured disk: compact sub-windows exclude a neighbourhood of the puncture
    std::vector<Region> sub;
    for (double e : {0.5, 0.25, 0.125, 0.0625})
        sub.push_back([e](const PathPoint& p) { return p.x.norm() >= e && p.x.norm() <= 1 - e / 8; });
    std::vector<Vec> acc;
    for (int i = 0; i < 100; ++i) acc.push_back(pt(0.5 * std::pow(0.9, i), 0));
    EXPECT_TRUE(is_divergent(SampledPath::in_chart(0, acc), sub));
}

TEST(Completeness, OpenDiskIncomplete) {
    auto a = plane_atlas(true);
    ManifoldWithBoundary man{a, {}};
    Mesh m = sample_mesh(man, 0.01, Window{});
    CompletenessBudget b;
    for (int i = 1; i <= 5; ++i) {
        const double r = 1 - std::pow(2.0, -i);
        b.levels.push_back(mask_where(m, [&](int v) { return m.vertices[static_cast<std::size_t>(v)].x.norm() <= r; }));
        b.thresholds.push_back(std::pow(2.0, i - 1));
    }
    b.starts = {nearest(m, 0, 0)};
    b.ball_radii = {0.25, 0.95};
    auto rep = completeness_report(m, "g", b);
    EXPECT_EQ(rep.verdict, Verdict::IncompleteWitnessFound);
    ASSERT_TRUE(rep.witness);
    EXPECT_LT(rep.witness_length, 1.05);
    auto wp = SampledPath::from_vertices(m, rep.witness->vertices, true);
    std::vector<Region> regions;
    for (const auto& lv : b.levels) regions.push_back(vertex_region(lv));
    EXPECT_TRUE(is_divergent(wp, regions));
    EXPECT_TRUE(rep.balls[0].stabilized);
    EXPECT_FALSE(rep.balls[1].stabilized);
}

TEST(Completeness, HalfPlaneComplete) {
    auto a = plane_atlas();
    a->charts[0].domain.cut = Domain::Cut{1, 0.0, true};
    ManifoldWithBoundary man{a, boundary_from_cuts(*a)};
    Mesh m = sample_mesh(man, 0.1, Window{Box{{-9, -9}, {9, 0}}, {}});
    CompletenessBudget b;
    for (double r : {1.0, 2.0, 4.0, 8.0}) {
        b.levels.push_back(mask_where(m, [&](int v) { return m.vertices[static_cast<std::size_t>(v)].x.lpNorm<Eigen::Infinity>() <= r; }));
        b.thresholds.push_back(r);
    }
    b.starts = {nearest(m, 0, 0)};
    b.ball_radii = {0.5, 1.5};
    auto rep = completeness_report(m, "g", b);
    EXPECT_EQ(rep.verdict, Verdict::CompleteUpToBudget);
    for (const auto& s : rep.samples)
        for (std::size_t l = 0; l < b.levels.size(); ++l)
            if (!std::isnan(s.exit_length[l])) EXPECT_GE(s.exit_length[l], b.thresholds[l]) << s.id;
    for (const auto& row : rep.balls) EXPECT_TRUE(row.stabilized);
    EXPECT_EQ(rep.samples.size(), 1u + 32u);
}

TEST(Completeness, Deterministic) {
    auto a = plane_atlas(true);
    ManifoldWithBoundary man{a, {}};
    Mesh m = sample_mesh(man, 0.05, Window{});
    CompletenessBudget b;
    b.levels.push_back(mask_where(m, [&](int v) { return m.vertices[static_cast<std::size_t>(v)].x.norm() <= 0.5; }));
    b.thresholds = {1.0};
    b.starts = {nearest(m, 0, 0)};
    auto r1 = completeness_report(m, "g", b), r2 = completeness_report(m, "g", b);
    ASSERT_EQ(r1.samples.size(), r2.samples.size());
    for (std::size_t i = 0; i < r1.samples.size(); ++i) EXPECT_EQ(r1.samples[i].vertices, r2.samples[i].vertices);
}

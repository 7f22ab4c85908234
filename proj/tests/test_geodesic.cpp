#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rext/geodesic.hpp"
#include "rext/spec_io.hpp"

using namespace rext;

namespace {

Vec pt(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

MetricExpr metric(const std::string& factor) { return MetricExpr::conformal(parse_expr(factor, 2), 2); }

const char* kSphereFactor = "4/(1 + x1^2 + x2^2)^2";

std::shared_ptr<Atlas> single_chart(const MetricExpr& g, Domain d = Domain::box({-kInf, -kInf}, {kInf, kInf})) {
    auto a = std::make_shared<Atlas>();
    a->dim = 2;
    a->charts.push_back({"A", d, g});
    return a;
}

// two stereographic charts of the unit sphere, glued by inversion in the unit circle
std::shared_ptr<const Atlas> sphere_atlas() {
    auto man = parse_manifold(json::parse(R"js({
        "dimension": 2,
        "charts": [
          {"id": "S", "domain": {"ball": {"center": [0, 0], "radius": 2}}, "metric": [["4/(1+x1^2+x2^2)^2", "0"], ["0", "4/(1+x1^2+x2^2)^2"]]},
          {"id": "N", "domain": {"ball": {"center": [0, 0], "radius": 2}}, "metric": [["4/(1+x1^2+x2^2)^2", "0"], ["0", "4/(1+x1^2+x2^2)^2"]]}
        ],
        "transitions": [
          {"from": "S", "to": "N", "map": ["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]},
          {"from": "N", "to": "S", "map": ["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]}
        ]
    })js"));
    return man.atlas;
}

}  // namespace

TEST(Christoffel, FlatIsZero) {
    auto G = christoffel(MetricExpr::identity(2), pt(0.3, -1.2));
    for (const auto& m : G) EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Christoffel, UpperHalfPlane) {
    auto G = christoffel(metric("1/x2^2"), pt(0, 1));
    EXPECT_NEAR(G[0](0, 1), -1, 1e-14);
    EXPECT_NEAR(G[0](1, 0), -1, 1e-14);
    EXPECT_NEAR(G[1](0, 0), 1, 1e-14);
    EXPECT_NEAR(G[1](1, 1), -1, 1e-14);
    EXPECT_NEAR(G[0](0, 0), 0, 1e-14);
    EXPECT_NEAR(G[1](0, 1), 0, 1e-14);
}

TEST(Christoffel, MatchesFiniteDifferences) {
    auto g = MetricExpr::parse({{"1 + x1^2", "0.3*sin(x2)"}, {"0", "exp(x1*x2) + 1"}}, 2);
    const Vec p = pt(0.4, -0.7);
    auto G = christoffel(g, p);
    const double h = 1e-5;
    std::vector<Mat> dg(2);
    for (int k = 0; k < 2; ++k) {
        Vec a = p, b = p;
        a[k] += h;
        b[k] -= h;
        dg[static_cast<std::size_t>(k)] = (g.value(a) - g.value(b)) / (2 * h);
    }
    const Mat gi = g.value(p).inverse();
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                double ref = 0;
                for (int s = 0; s < 2; ++s)
                    ref += 0.5 * gi(k, s) * (dg[static_cast<std::size_t>(i)](s, j) + dg[static_cast<std::size_t>(j)](s, i) - dg[static_cast<std::size_t>(s)](i, j));
                EXPECT_NEAR(G[static_cast<std::size_t>(k)](i, j), ref, 1e-8);
                EXPECT_EQ(G[static_cast<std::size_t>(k)](i, j), G[static_cast<std::size_t>(k)](j, i));
            }
}

TEST(Christoffel, DegenerateMetric) {
    EXPECT_THROW(christoffel(MetricExpr::parse({{"1", "1"}, {"1", "1"}}, 2), pt(0, 0)), NumericGuard);
    EXPECT_THROW(gaussian_curvature(metric("x1^2"), pt(0, 0.5)), NumericGuard);
}

TEST(Curvature, ConstantCurvatureModels) {
    for (const auto& p : {pt(0, 0), pt(0.7, -0.3), pt(-1.5, 2.0), pt(3, 1)}) {
        EXPECT_EQ(gaussian_curvature(MetricExpr::identity(2), p), 0.0);
        EXPECT_NEAR(gaussian_curvature(metric(kSphereFactor), p), 1.0, 1e-8);
    }
    for (const auto& p : {pt(0, 1), pt(0.7, 0.3), pt(-1.5, 2.0), pt(3, 7)})
        EXPECT_NEAR(gaussian_curvature(metric("1/x2^2"), p), -1.0, 1e-8);
    // a warped product dr² + f(r)² dθ² has K = −f''/f
    auto cosh_w = MetricExpr::parse({{"1", "0"}, {"0", "((exp(x1) + exp(-x1))/2)^2"}}, 2);
    EXPECT_NEAR(gaussian_curvature(cosh_w, pt(0.4, 0.1)), -1.0, 1e-8);
    auto polar_sphere = MetricExpr::parse({{"1", "0"}, {"0", "sin(x1)^2"}}, 2);
    EXPECT_NEAR(gaussian_curvature(polar_sphere, pt(1.1, 0.1)), 1.0, 1e-8);
}

TEST(Geodesic, FlatStraightLine) {
    auto a = single_chart(MetricExpr::identity(2));
    auto g = AtlasMetric::from_atlas(*a);
    const Vec v = pt(0.6, 0.8);
    auto run = shoot_geodesic(*a, g, {0, pt(1, 2), v, 0}, 3.0, 1e-3);
    EXPECT_FALSE(run.boundary_hit);
    EXPECT_DOUBLE_EQ(run.arc(), 3.0);
    EXPECT_LT((run.last().x - (pt(1, 2) + 3.0 * v)).norm(), 1e-12);
}

TEST(Geodesic, GreatCircleSingleChart) {
    auto a = single_chart(metric(kSphereFactor));
    auto g = AtlasMetric::from_atlas(*a);
    // the equator is the unit circle; unit speed needs |v| = (1 + |x|²)/2 = 1
    const double T = 2 * std::numbers::pi;
    auto run = shoot_geodesic(*a, g, {0, pt(1, 0), pt(0, 1), 0}, T, 1e-3);
    EXPECT_FALSE(run.boundary_hit);
    EXPECT_LT((run.last().x - pt(1, 0)).norm(), 1e-4);
    // tilted great circle through (0.5, 0)
    const Vec x0 = pt(0.5, 0);
    const Vec v0 = unit(g.at(0), x0, pt(0.3, 1));
    auto r2 = shoot_geodesic(*a, g, {0, x0, v0, 0}, T, 1e-3);
    EXPECT_LT((r2.last().x - x0).norm(), 1e-4);
    double smin = kInf, smax = 0;
    for (const auto& s : r2.states) {
        const double sp = speed(g.at(0), s.x, s.v);
        smin = std::min(smin, sp);
        smax = std::max(smax, sp);
    }
    EXPECT_LT((smax - smin) / smin, 1e-6);
}

TEST(Geodesic, GreatCircleThroughPoleSwitchesCharts) {
    auto a = sphere_atlas();
    auto g = AtlasMetric::from_atlas(*a);
    const Vec x0 = pt(0.5, 0);
    const Vec v0 = unit(g.at(0), x0, pt(1, 0));
    auto run = shoot_geodesic(*a, g, {0, x0, v0, 0}, 2 * std::numbers::pi, 1e-3);
    ASSERT_FALSE(run.boundary_hit);
    bool visited_north = false;
    for (const auto& s : run.states) visited_north |= s.chart == 1;
    EXPECT_TRUE(visited_north);
    Vec end = run.last().x;
    if (run.last().chart == 1) end /= end.squaredNorm();
    EXPECT_LT((end - x0).norm(), 1e-4);
}

TEST(Geodesic, Reversibility) {
    auto a = single_chart(metric(kSphereFactor));
    auto g = AtlasMetric::from_atlas(*a);
    const Vec x0 = pt(0.2, -0.4);
    const Vec v0 = unit(g.at(0), x0, pt(1, 0.5));
    auto fwd = shoot_geodesic(*a, g, {0, x0, v0, 0}, 2.0, 1e-3);
    auto back = shoot_geodesic(*a, g, {0, fwd.last().x, -fwd.last().v, 0}, 2.0, 1e-3);
    EXPECT_LT((back.last().x - x0).norm(), 1e-5);
    auto flat = single_chart(MetricExpr::identity(2));
    auto gf = AtlasMetric::from_atlas(*flat);
    auto f1 = shoot_geodesic(*flat, gf, {0, x0, pt(0, 1), 0}, 1.5, 1e-3);
    auto f2 = shoot_geodesic(*flat, gf, {0, f1.last().x, -f1.last().v, 0}, 1.5, 1e-3);
    EXPECT_LT((f2.last().x - x0).norm(), 1e-12);
}

TEST(Geodesic, OpenDiskBoundaryHit) {
    auto a = single_chart(MetricExpr::identity(2), Domain::full_ball({0, 0}, 1, true));
    auto g = AtlasMetric::from_atlas(*a);
    auto run = shoot_geodesic(*a, g, {0, pt(0, 0), pt(1, 0), 0}, 2.0, 1e-3);
    EXPECT_TRUE(run.boundary_hit);
    EXPECT_NEAR(run.arc(), 1.0, 2e-3);
    EXPECT_LT(run.arc(), 1.0);
}

TEST(Geodesic, BadInput) {
    auto a = single_chart(MetricExpr::identity(2));
    auto g = AtlasMetric::from_atlas(*a);
    EXPECT_THROW(shoot_geodesic(*a, g, {0, pt(0, 0), pt(2, 0), 0}, 1.0, 1e-3), SpecError);
    EXPECT_THROW(shoot_geodesic(*a, g, {0, pt(0, 0), pt(1, 0), 0}, 1.0, 0.5), SpecError);
}

TEST(Riccati, ClosedForms) {
    EXPECT_NEAR(riccati_evolve(-1.0, 0.0, 0.5, 1e-3).lambda, -2.0 / 3.0, 1e-6);
    EXPECT_NEAR(riccati_evolve(0.0, 1.0, std::numbers::pi / 4, 1e-3).lambda, 1.0, 1e-6);
    const double l0 = 0.5, T = 1.0;
    const auto r = riccati_evolve(l0, -1.0, T, 1e-3);
    // closed form of λ' = λ² − 1: λ = −tanh(t + c) with tanh(c) = −λ0
    EXPECT_NEAR(r.lambda, -std::tanh(T + std::atanh(-l0)), 1e-6);
    EXPECT_FALSE(r.blew_up);
}

TEST(Riccati, BlowUp) {
    auto r = riccati_evolve(1.0, 0.0, 2.0, 1e-3);
    EXPECT_TRUE(r.blew_up);
    EXPECT_NEAR(r.blowup_time, 1.0, 1e-3);
    auto k = riccati_evolve(0.0, 1.0, 2.0, 1e-3);  // tan blows up at π/2
    EXPECT_TRUE(k.blew_up);
    EXPECT_NEAR(k.blowup_time, std::numbers::pi / 2, 1e-3);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rext/extend.hpp"
#include "rext/spec_io.hpp"

using namespace rext;

namespace {

ManifoldWithBoundary halfplane(const std::string& g11, const std::string& g22) {
    json j = json::parse(R"js({
        "dimension": 2,
        "charts": [{"id": "H", "domain": {"cut": {"axis": 2, "offset": 0, "keep": "le"}},
                    "metric": [["1", "0"], ["0", "1"]]}]
    })js");
    j["charts"][0]["metric"] = json::array({json::array({g11, "0"}), json::array({"0", g22})});
    return parse_manifold(j);
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

const Window kSquare{Box{{-1, -1}, {1, 1}}, {}};

struct Circle {
    GluedManifold N;
    Mesh mesh;
    AtlasMetric g;
    FermiCollar fc;
};

Circle& circle() {
    static Circle c = [] {
        Circle out{glue(disk_complement(), closed_disk(), BoundaryDiffeo::identity(2, 1)), {}, {}, {}};
        out.mesh = out.N.sample(0.1, Window{});
        auto exts = extend_boundary_charts(out.N);
        out.g = assemble_global_metric(out.N, out.mesh, exts, build_partition(out.N, exts));
        out.fc = build_fermi_collar(out.N, out.mesh, out.g);
        return out;
    }();
    return c;
}

}  // namespace

TEST(Extend, SeeleyCoefficients) {
    const auto c = seeley_coefficients(3);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_NEAR(c[0], 6, 1e-12);
    EXPECT_NEAR(c[1], -32, 1e-12);
    EXPECT_NEAR(c[2], 27, 1e-12);
    for (int order = 1; order <= 5; ++order) {
        const auto k = seeley_coefficients(order);
        for (int j = 0; j < order; ++j) {
            double sum = 0;
            for (int i = 0; i < order; ++i) sum += k[static_cast<std::size_t>(i)] * std::pow(-1.0 / (i + 1), j);
            EXPECT_NEAR(sum, 1, 1e-9);
        }
    }
}

TEST(Extend, ConstantMetricFullThreshold) {
    auto M = halfplane("1", "1");
    auto e = extend_chart_metric(M.atlas->charts[0]);
    EXPECT_DOUBLE_EQ(e.t, 0.5);
    for (double s : {0.1, 0.5, 0.9}) EXPECT_NEAR((e.metric.value(pt(0.3, s)) - Mat::Identity(2, 2)).norm(), 0, 1e-12);
}

TEST(Extend, LinearMetricThreshold) {
    auto e = extend_chart_metric(halfplane("1", "1 - x2").atlas->charts[0]);
    // the reflection reproduces 1 − x2, which vanishes at depth 1
    EXPECT_NEAR(e.t, 0.5, 0.04);
    EXPECT_LT(e.t, 0.5);
    EXPECT_NEAR(e.metric.value(pt(0, 0.4))(1, 1), 0.6, 1e-12);
}

TEST(Extend, MatchesDerivativesAtFace) {
    auto M = halfplane("exp(x2)*(1 + x1^2)", "2 + sin(x2)");
    auto e = extend_chart_metric(M.atlas->charts[0]);
    const MetricExpr& g = M.atlas->charts[0].metric;
    // first and second normal derivatives agree from both sides of the face
    const double h = 1e-3;
    for (std::size_t k : {0u, 2u}) {
        auto f = [&](const MetricExpr& m, double s) { return eval(m.upper()[k], {0.4, s}); };
        const double in1 = (f(g, 0) - f(g, -h)) / h, out1 = (eval(e.reflected.upper()[k], {0.4, h}) - f(g, 0)) / h;
        EXPECT_NEAR(in1, out1, 5e-3);
        const double in2 = (f(g, 0) - 2 * f(g, -h) + f(g, -2 * h)) / (h * h);
        const double out2 = (f(g, 0) - 2 * eval(e.reflected.upper()[k], {0.4, h}) + eval(e.reflected.upper()[k], {0.4, 2 * h})) / (h * h);
        EXPECT_NEAR(in2, out2, 2e-2);
    }
}

TEST(Extend, DegenerateMetricRejected) {
    EXPECT_THROW(extend_chart_metric(halfplane("x2^2", "1").atlas->charts[0]), SpecError);
    // positive on M but degenerate immediately outside
    EXPECT_THROW(extend_chart_metric(halfplane("1", "1 - 1000*x2").atlas->charts[0]), SpecError);
    auto box = parse_manifold(json::parse(R"js({"dimension": 2,
        "charts": [{"id": "B", "domain": {"box": {"lo": [0, 0], "hi": [1, 1]}}, "metric": [["1","0"],["0","1"]]}]})js"));
    EXPECT_THROW(extend_chart_metric(box.atlas->charts[0]), SpecError);
}

TEST(Extend, FlatDoubleIsEuclidean) {
    auto N = glue(halfplane("1", "1"), halfplane("1", "1"), BoundaryDiffeo::identity(2, 1));
    Mesh mesh = N.sample(0.25, kSquare);
    auto exts = extend_boundary_charts(N);
    auto g = assemble_global_metric(N, mesh, exts, build_partition(N, exts));
    for (const auto& v : mesh.vertices) EXPECT_NEAR((g.value(v.chart, v.x) - Mat::Identity(2, 2)).norm(), 0, 1e-12);
    EXPECT_NO_THROW(mesh.lengths("g_tilde"));
}

TEST(Extend, BlendOfDifferentMetrics) {
    auto N = glue(halfplane("1", "1"), halfplane("4", "4"), BoundaryDiffeo::identity(2, 1));
    Mesh mesh = N.sample(0.125, kSquare);
    auto exts = extend_boundary_charts(N);
    auto pou = build_partition(N, exts);
    auto g = assemble_global_metric(N, mesh, exts, pou);
    const double b = pou.pieces[0].support;
    for (const auto& v : mesh.vertices) {
        const Mat gv = g.value(v.chart, v.x);
        const double s = N.s_of(N.collars[0], v.x);
        if (s <= 0) {
            EXPECT_EQ((gv - Mat::Identity(2, 2)).norm(), 0);
        } else if (s >= b) {
            EXPECT_NEAR((gv - 4 * Mat::Identity(2, 2)).norm(), 0, 1e-12);
        } else {
            EXPECT_GE(gv(0, 0), 1 - 1e-12);
            EXPECT_LE(gv(0, 0), 4 + 1e-12);
        }
        const auto w = partition_weights(N, pou, v.chart, v.x);
        EXPECT_NEAR(w.sum(), 1, 1e-12);
    }
}

TEST(Extend, SupportBeyondValidityFails) {
    auto N = glue(halfplane("1", "1 - 4*x2"), halfplane("1", "1"), BoundaryDiffeo::identity(2, 1));
    Mesh mesh = N.sample(0.125, kSquare);
    auto exts = extend_boundary_charts(N);
    EXPECT_NO_THROW(assemble_global_metric(N, mesh, exts, build_partition(N, exts)));
    Mesh mesh2 = N.sample(0.125, kSquare);
    EXPECT_THROW(assemble_global_metric(N, mesh2, exts, build_partition(N, exts, {1.0})), NumericGuard);
}

TEST(Extend, SmoothStep) {
    EXPECT_EQ(smooth_step(-0.1), 0);
    EXPECT_EQ(smooth_step(1.2), 1);
    EXPECT_DOUBLE_EQ(smooth_step(0.5), 0.5);
    const Expr t = Expr::var(0);
    for (double x : {-0.5, 0.0, 0.2, 0.7, 1.0, 1.5}) EXPECT_NEAR(eval(smooth_step(t), {x}), smooth_step(x), 1e-15);
}

TEST(Fermi, CircleDepthAndStretch) {
    auto& c = circle();
    for (const auto& s : c.fc.samples[0]) EXPECT_NEAR(s.s0, 1.0 / 3, 1.0 / 3 * 0.02);
    for (double s : {0.1, 0.2, 0.3}) EXPECT_NEAR(c.fc.drho_norm_at(0, 0.7, s), (1 + s) / (1 - s), 0.02 * (1 + s) / (1 - s));
    EXPECT_NEAR(c.fc.s0(0, 1.234), 1.0 / 3, 0.01);
    EXPECT_NE(collar_csv(c.fc).find("component,u,s0,max_drho"), std::string::npos);
}

TEST(Fermi, ZeroEpsilonRejected) {
    auto& c = circle();
    FermiOptions o;
    o.eps = 0;
    EXPECT_THROW(build_fermi_collar(c.N, c.mesh, c.g, o), SpecError);
}

TEST(Fermi, FlatReflection) {
    auto N = glue(halfplane("1", "1"), halfplane("1", "1"), BoundaryDiffeo::identity(2, 1));
    Mesh mesh = N.sample(0.25, kSquare);
    auto exts = extend_boundary_charts(N);
    auto g = assemble_global_metric(N, mesh, exts, build_partition(N, exts));
    auto fc = build_fermi_collar(N, mesh, g);
    for (const auto& s : fc.samples[0]) EXPECT_NEAR(s.s0, 0.5, 1e-12);
    // identity on M
    const PathPoint m{0, pt(0.2, -0.3), -1};
    EXPECT_EQ(fc.project_rho(m).x, m.x);
    // (u, s) ↦ (u, −s) in the flat collar
    const PathPoint q{0, pt(0.3, 0.2), -1};
    const auto r = fc.project_rho(q);
    EXPECT_NEAR((r.x - pt(0.3, -0.2)).norm(), 0, 1e-9);
    EXPECT_NEAR((fc.rho_inverse(r).x - q.x).norm(), 0, 1e-6);
    EXPECT_TRUE(fc.in_XQ(0, pt(0.1, 0.4)));
    EXPECT_FALSE(fc.in_XQ(0, pt(0.1, 0.6)));
    EXPECT_THROW(fc.project_rho({0, pt(0.1, 0.7), -1}), Error);
}

TEST(Fermi, CircleRoundTrip) {
    auto& c = circle();
    const int chart = c.N.collars[0].chart;
    for (double u : {0.3, 2.0, 5.9})
        for (double f : {0.2, 0.6, 0.95}) {
            const double s = f * c.fc.s0(0, u);
            const PathPoint q{chart, c.fc.exp_perp(0, u, s).first, -1};
            ASSERT_TRUE(c.fc.in_XQ(q.chart, q.x));
            const auto r = c.fc.project_rho(q);
            EXPECT_NEAR(r.x[1], 1 + s, 1e-6);  // radius 1 − s maps to 1 + s
            const auto back = c.fc.rho_inverse(r);
            EXPECT_NEAR((detail::unwrap_near(c.fc.collar_domain(0), q.x, back.x) - q.x).norm(), 0, 1e-6);
        }
}

TEST(Fermi, LipschitzAudit) {
    auto& c = circle();
    auto audit = lipschitz_audit(c.fc, collar_audit_paths(c.fc, 24));
    EXPECT_TRUE(audit.passed);
    EXPECT_LE(audit.max_ratio, 2.04);
    EXPECT_GE(audit.max_ratio, 1.0);
    EXPECT_NEAR(audit.bound, 2.04, 1e-12);
}

TEST(Fermi, PMask) {
    auto& c = circle();
    const Mask p = c.fc.p_mask(c.mesh);
    for (std::size_t v = 0; v < p.size(); ++v) {
        const auto& vx = c.mesh.vertices[v];
        const Vec x = [&] {
            if (c.N.atlas->charts[static_cast<std::size_t>(vx.chart)].id == "Q:C") return pt(std::atan2(vx.x[1], vx.x[0]), vx.x.norm());
            return vx.x;
        }();
        const double r = x[1];
        if (std::fabs(r - 2.0 / 3) < 0.01) continue;
        EXPECT_EQ(bool(p[v]), r > 2.0 / 3) << "radius " << r;
    }
}

TEST(Fermi, StretchTendsToOneAtInterface) {
    auto& c = circle();
    for (double u : {0.5, 3.0}) {
        const double s0 = c.fc.s0(0, u);
        double prev = kInf;
        for (double f : {0.1, 0.05, 0.025}) {
            const double n = c.fc.drho_norm_at(0, u, f * s0);
            EXPECT_LT(n, prev + 1e-3);
            EXPECT_GE(n, 1 - 1e-3);
            prev = n;
        }
        EXPECT_NEAR(prev, 1, 0.02);
    }
}

#include <gtest/gtest.h>

#include <cmath>

#include "rext/complete.hpp"
#include "rext/spec_io.hpp"

using namespace rext;

namespace {

ManifoldWithBoundary cylinder(const std::string& metric, double lo, double hi) {
    json j = json::parse(R"js({"dimension": 2, "charts": [{"id": "Z", "domain": {"box": {"lo": [0, 0], "hi": [0, 2]},
                 "periodic": [false, true]}, "metric": [["1", "0"], ["0", "1"]]}]})js");
    j["charts"][0]["domain"]["box"]["lo"][0] = lo;
    j["charts"][0]["domain"]["box"]["hi"][0] = hi;
    j["charts"][0]["metric"] = json::array({json::array({metric, "0"}), json::array({"0", metric})});
    return parse_manifold(j);
}

ManifoldWithBoundary plane() {
    return parse_manifold(json::parse(R"js({"dimension": 2, "charts": [{"id": "R", "domain": {}, "metric": [["1", "0"], ["0", "1"]]}]})js"));
}

Mesh with_coord(Mesh m) {
    m.register_metric("coord", coordinate_metric(*m.atlas));
    return m;
}

std::vector<int> where(const Mesh& m, const std::function<bool(const Vec&)>& f) {
    std::vector<int> out;
    for (std::size_t v = 0; v < m.num_vertices(); ++v)
        if (f(m.vertices[v].x)) out.push_back(static_cast<int>(v));
    return out;
}

Mask mask_of(const Mesh& m, const std::function<bool(const Vec&)>& f) { return mask_from(where(m, f), m.num_vertices()); }

}  // namespace

TEST(Exhaustion, FlatPlaneDisks) {
    Mesh m = with_coord(sample_mesh(plane(), 0.25, Window{Box{{-5, -5}, {5, 5}}, {}}));
    auto origin = where(m, [](const Vec& x) { return x.norm() == 0; });
    auto ex = build_exhaustion(m, "g", origin, 1.0, 4);
    const auto& d = ex.dist;
    std::size_t prev = 0;
    for (int j = 0; j < 4; ++j) {
        std::size_t cnt = 0;
        for (std::size_t v = 0; v < m.num_vertices(); ++v) {
            EXPECT_EQ(ex.in(j, static_cast<int>(v)), d[v] <= j + 1 + 1e-9);
            cnt += ex.in(j, static_cast<int>(v));
            // octile disks sit between the Euclidean disks of radius (j+1)/1.0824 and j+1
            if (m.vertices[v].x.norm() <= (j + 1) / 1.0824 - 1e-9) EXPECT_TRUE(ex.in(j, static_cast<int>(v)));
            if (m.vertices[v].x.norm() > j + 1 + 1e-9) EXPECT_FALSE(ex.in(j, static_cast<int>(v)));
        }
        EXPECT_GT(cnt, prev);
        prev = cnt;
    }
    EXPECT_FALSE(ex.in(-1, origin[0]));
    EXPECT_THROW(build_exhaustion(m, "g", origin, 0.0, 3), SpecError);
    EXPECT_THROW(build_exhaustion(m, "g", origin, 1e-3, 3), SpecError);
}

TEST(Exhaustion, TwoEndedCylinderBands) {
    Mesh m = with_coord(sample_mesh(cylinder("1", -5, 5), 0.25, Window{}));
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 1.0, 4);
    for (int j = 0; j < 4; ++j) {
        Mask out(m.num_vertices(), 0);
        for (std::size_t v = 0; v < out.size(); ++v) out[v] = !ex.in(j, static_cast<int>(v));
        EXPECT_EQ(components(m, out).second, 2);
        for (std::size_t v = 0; v < out.size(); ++v)
            EXPECT_EQ(ex.in(j, static_cast<int>(v)), std::fabs(m.vertices[v].x[0]) <= j + 1 + 1e-9);
    }
}

TEST(Annuli, EverythingInP) {
    Mesh m = with_coord(sample_mesh(cylinder("1", -3, 3), 0.25, Window{}));
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 1.0, 3);
    auto ann = decompose_annuli(m, ex, Mask(m.num_vertices(), 1));
    EXPECT_TRUE(ann.A.empty());
    EXPECT_TRUE(ann.B.empty());
}

TEST(Annuli, OneAndTwoTails) {
    Mesh m = with_coord(sample_mesh(cylinder("1", -6, 6), 0.25, Window{}));
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 1.0, 5);
    auto one = decompose_annuli(m, ex, mask_of(m, [](const Vec& x) { return x[0] <= 0.5; }));
    for (int j = 0; j <= one.jmax; ++j) EXPECT_EQ(one.count_A(j), 1u) << j;
    auto two = decompose_annuli(m, ex, mask_of(m, [](const Vec& x) { return std::fabs(x[0]) <= 0.5; }));
    for (int j = 0; j <= two.jmax; ++j) {
        EXPECT_EQ(two.count_A(j), 2u) << j;
        EXPECT_LE(two.count_B(j), two.count_A(j));
    }
    for (int b : two.A_index_of_B) EXPECT_GE(b, 0);
    // traces: the two rings x1 = ±0.5
    for (const auto& c : two.B)
        for (int v : c.trace) EXPECT_EQ(std::fabs(m.vertices[static_cast<std::size_t>(v)].x[0]), 0.5);
}

TEST(Certificates, FlatAnnulusCrossing) {
    Mesh m = with_coord(sample_mesh(plane(), 0.05, Window{Box{{-5, -5}, {5, 5}}, {}}, Stencil::Knight));
    auto origin = where(m, [](const Vec& x) { return x.norm() == 0; });
    auto ex = build_exhaustion(m, "g", origin, 1.0, 4);
    auto ann = decompose_annuli(m, ex, Mask(m.num_vertices(), 0));
    for (const auto& c : ann.A) {
        if (c.j < 0) continue;
        EXPECT_NEAR(compute_q1(m, c, m.lengths("g"), ex), 1, 0.02) << c.j;
    }
}

TEST(Certificates, CuspClosedForm) {
    Mesh m = with_coord(sample_mesh(cylinder("exp(-2*x1)", 0, 7), 0.02, Window{}));
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    // N_j = {x1 <= j + 1}
    auto ex = build_exhaustion(m, "coord", ring, 1.0, 6);
    auto ann = decompose_annuli(m, ex, mask_of(m, [](const Vec& x) { return x[0] <= 0.5; }));
    for (std::size_t k = 0; k < ann.A.size(); ++k) {
        const auto& c = ann.A[k];
        const double q = compute_q1(m, c, m.lengths("g"), ex);
        if (c.j < 0) {
            EXPECT_TRUE(std::isinf(q));
            continue;
        }
        EXPECT_NEAR(q / (std::exp(-(c.j + 1)) * (1 - std::exp(-1))), 1, 0.05) << c.j;
    }
}

TEST(Certificates, CorridorRatio) {
    Mesh m = sample_mesh(plane(), 0.1, Window{Box{{-2, -1}, {2, 2}}, {}});
    std::vector<int> corridor;
    auto on = [](const Vec& x) {
        const bool leg = (std::fabs(std::fabs(x[0]) - 1) < 1e-9) && x[1] >= -1e-9 && x[1] <= 1 + 1e-9;
        const bool top = std::fabs(x[1] - 1) < 1e-9 && std::fabs(x[0]) <= 1 + 1e-9;
        return leg || top;
    };
    AnnulusComponent c;
    c.vertices = where(m, on);
    c.trace = where(m, [&](const Vec& x) { return on(x) && std::fabs(x[1]) < 1e-9; });
    ASSERT_EQ(c.trace.size(), 2u);
    const Mask P = mask_of(m, [](const Vec& x) { return x[1] <= 1e-9; });
    auto r = compute_q2(m, c, m.lengths("g"), P, m.lengths("g"));
    EXPECT_EQ(r.mode, "exact");
    EXPECT_NEAR(r.value, 2, 0.1);
    AnnulusComponent single = c;
    single.trace.resize(1);
    EXPECT_EQ(compute_q2(m, single, m.lengths("g"), P, m.lengths("g")).value, 1);
}

TEST(Conformal, CuspDeformationAndNegativeControl) {
    Mesh m = with_coord(sample_mesh(cylinder("exp(-2*x1)", -1, 7), 0.04, Window{}));
    // mark x1 <= -0.5 as M so the factor must vanish there
    for (auto& v : m.vertices) v.flags = v.x[0] <= -0.5 ? kInM : kInQ;
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 1.0, 6);
    auto ann = decompose_annuli(m, ex, mask_of(m, [](const Vec& x) { return x[0] <= 0.5; }));
    auto cert = compute_certificates(m, ex, ann, "g", "g");
    auto f = conformal_metric(m, "g", "coord", ex, ann, cert);
    for (std::size_t v = 0; v < m.num_vertices(); ++v) {
        EXPECT_GE(f.exponent[v], 0);
        if (m.vertices[v].flags & kInM) EXPECT_EQ(f.exponent[v], 0);
    }
    EXPECT_LE(f.max_active, 6);
    for (std::size_t k = 0; k < ann.A.size(); ++k)
        for (int v : ann.A[k].vertices)
            if (std::isfinite(cert.q1[k])) EXPECT_GE(f.factor(v), std::pow(cert.q1[k], -2) * (1 - 1e-9));
    auto audit = verify_crossing_cost(m, "g_N", "g", ann, 20);
    EXPECT_TRUE(audit.passed) << (audit.failures.empty() ? "" : audit.failures[0]);
    register_unit_factor(m, "g", "g_plain");
    auto neg = verify_crossing_cost(m, "g_plain", "g", ann, 20);
    EXPECT_FALSE(neg.passed);
    EXPECT_NE(certificates_csv(ann, cert).find("q1"), std::string::npos);
}

TEST(Conformal, AllCertificatesAboveOne) {
    Mesh m = with_coord(sample_mesh(cylinder("1", -8, 8), 0.25, Window{}));
    for (auto& v : m.vertices) v.flags = kInQ;
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 1.5, 4);
    auto ann = decompose_annuli(m, ex, mask_of(m, [](const Vec& x) { return x[0] <= 0.25; }));
    auto cert = compute_certificates(m, ex, ann, "g", "g");
    auto f = conformal_metric(m, "g", "coord", ex, ann, cert);
    for (double e : f.exponent) EXPECT_EQ(e, 0);
}

TEST(Certify, ThreeCases) {
    Mesh m = with_coord(sample_mesh(cylinder("1", -4, 4), 0.25, Window{}));
    auto ring = where(m, [](const Vec& x) { return x[0] == 0; });
    auto ex = build_exhaustion(m, "coord", ring, 0.5, 3);
    auto vertex = [&](double a, double b) {
        for (std::size_t v = 0; v < m.num_vertices(); ++v)
            if (std::fabs(m.vertices[v].x[0] - a) < 1e-9 && std::fabs(m.vertices[v].x[1] - b) < 1e-9) return static_cast<int>(v);
        return -1;
    };
    const auto& g = m.lengths("g");
    std::vector<int> out;
    for (double a = 0; a <= 4 + 1e-9; a += 0.25) out.push_back(vertex(a, 0));
    // tail entirely outside int P
    const PRegion small = p_region(m, mask_of(m, [](const Vec& x) { return x[0] <= 0.5; }));
    auto c1 = classify_path(m, out, "out", g, g, ex, small, 0.05);
    EXPECT_EQ(c1.kind, 1);
    EXPECT_EQ(c1.annuli, 2);
    EXPECT_TRUE(c1.ok);
    // tail inside int P
    const PRegion all = p_region(m, Mask(m.num_vertices(), 1));
    auto c2 = classify_path(m, out, "out", g, g, ex, all, 0.05);
    EXPECT_EQ(c2.kind, 2);
    EXPECT_TRUE(c2.ok);
    EXPECT_DOUBLE_EQ(c2.length_N, c2.length_P);
    // weave across ∂P and back
    const PRegion P = p_region(m, mask_of(m, [](const Vec& x) { return x[0] <= 1.5; }));
    std::vector<int> weave;
    for (double a = 0; a <= 1.75 + 1e-9; a += 0.25) weave.push_back(vertex(a, 0));
    for (double b = 0.25; b <= 1 + 1e-9; b += 0.25) weave.push_back(vertex(1.75, b));
    for (double a = 1.5; a >= 0.5 - 1e-9; a -= 0.25) weave.push_back(vertex(a, 1));
    auto c3 = classify_path(m, weave, "weave", g, g, ex, P, 0.05);
    EXPECT_EQ(c3.kind, 3);
    EXPECT_EQ(c3.excursions, 1);
    EXPECT_TRUE(c3.ok);
    EXPECT_NEAR(c3.worst_excursion, 1 / 1.5, 1e-9);
}

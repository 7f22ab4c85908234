#pragma once
// N = M ∪_η Q with a product collar around the interface.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "atlas.hpp"

namespace rext {

/// Per boundary component: face coordinates of M (x1..x_{m-1}, the chart coordinates other
/// than the boundary axis, in order) to face coordinates of Q, with inverse.
struct BoundaryDiffeo {
    struct Component {
        std::vector<Expr> forward, inverse;
    };
    std::vector<Component> components;

    static BoundaryDiffeo identity(int dim, std::size_t count) {
        BoundaryDiffeo d;
        Component c;
        for (int i = 0; i < dim - 1; ++i) {
            c.forward.push_back(Expr::var(i));
            c.inverse.push_back(Expr::var(i));
        }
        d.components.assign(count, c);
        return d;
    }
};

struct Collar {
    int chart = 0;          // collar chart in N (coordinates of M's boundary chart)
    int axis = 0;
    double offset = 0.0;
    int sigma_m = -1;       // inward sign of M on `axis`
    int q_chart = 0;        // Q's boundary chart, as an N index
    int q_axis = 0;
    double q_offset = 0.0;
    int sigma_q = -1;
    bool orientation_preserving = true;
    std::vector<Expr> to_q;    // collar coords -> Q chart coords
    std::vector<Expr> from_q;  // Q chart coords -> collar coords
    Expr s;                    // signed collar coordinate, < 0 on the M side
};

enum class Side : std::uint8_t { Collar, M, Q };

struct GluedManifold {
    std::shared_ptr<Atlas> atlas;
    ManifoldWithBoundary M, Q;
    std::vector<Collar> collars;
    std::vector<Side> side;      // per N chart
    std::vector<int> m_chart;    // M chart index -> N chart index
    std::vector<int> q_chart;    // Q chart index -> N chart index
    std::vector<MetricExpr> g_m_on_collar;  // M's metric in collar coordinates (valid for s <= 0)
    std::vector<MetricExpr> g_q_on_collar;  // Q's metric pulled back (valid for s >= 0)

    int dim() const { return atlas->dim; }

    const Collar* collar_of(int chart) const {
        for (const auto& c : collars)
            if (c.chart == chart) return &c;
        return nullptr;
    }

    /// Signed collar coordinate of a collar-chart point.
    double s_of(const Collar& c, const Vec& p) const { return -c.sigma_m * (p[c.axis] - c.offset); }

    VertexClassifier classifier() const {
        return [this](int chart, const Vec& p) -> std::uint8_t {
            const Side sd = side[static_cast<std::size_t>(chart)];
            if (sd == Side::M) return kInM;
            if (sd == Side::Q) {
                for (const auto& b : Q.boundary)
                    if (q_chart[static_cast<std::size_t>(b.chart)] == chart && p[b.axis] == b.offset)
                        return kInQ | kInM | kOnBoundary;
                return kInQ;
            }
            const Collar& c = *collar_of(chart);
            const double s = s_of(c, p);
            if (s == 0) return kInM | kInQ | kOnBoundary;
            return s < 0 ? kInM : kInQ;
        };
    }

    /// Metric g_M ∪ g_Q as defined chart by chart (M formula on M, Q formula on Q).
    AtlasMetric union_metric() const { return AtlasMetric::from_atlas(*atlas); }

    /// g_M where it is defined: M-side charts only; collar charts carry M's formula.
    AtlasMetric m_metric() const {
        AtlasMetric g;
        for (std::size_t i = 0; i < atlas->charts.size(); ++i) {
            if (side[i] == Side::Q) {
                g.per_chart.emplace_back(std::nullopt);
            } else if (const Collar* c = collar_of(static_cast<int>(i))) {
                g.per_chart.emplace_back(g_m_on_collar[static_cast<std::size_t>(c - collars.data())]);
            } else {
                g.per_chart.emplace_back(atlas->charts[i].metric);
            }
        }
        return g;
    }

    Mesh sample(double h, const Window& window, Stencil stencil = Stencil::Octile) const {
        Mesh mesh = sample_mesh(atlas, h, window, classifier(), stencil);
        mesh.register_metric("coord", coordinate_metric(*atlas));
        mesh.register_metric("g_MQ", union_metric());
        return mesh;
    }
};

namespace detail {

inline std::vector<int> face_axes(int dim, int axis) {
    std::vector<int> out;
    for (int i = 0; i < dim; ++i)
        if (i != axis) out.push_back(i);
    return out;
}

/// Checks η⁻¹∘η = id on `samples` face points of the M chart (periodic axes compared modulo
/// the period) and returns the sign of det Dη at the first sample.
inline bool check_diffeo(const BoundaryDiffeo::Component& c, const Domain& mdom, int m_axis, int samples) {
    const int m = mdom.dim();
    const auto mf = face_axes(m, m_axis);
    const int k = m - 1;
    if (static_cast<int>(c.forward.size()) != k || static_cast<int>(c.inverse.size()) != k)
        throw SpecError("glue: eta needs " + std::to_string(k) + " component expressions each way");
    int orientation = 0;
    for (int n = 0; n < samples; ++n) {
        std::vector<double> u(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            const auto ax = static_cast<std::size_t>(mf[static_cast<std::size_t>(i)]);
            double lo = mdom.lo[ax], hi = mdom.hi[ax];
            if (!std::isfinite(lo)) lo = -4.0;
            if (!std::isfinite(hi)) hi = 4.0;
            // low-discrepancy fill of the face box
            const double frac = std::fmod((n + 0.5) * (0.6180339887498949 + 0.3 * i), 1.0);
            u[static_cast<std::size_t>(i)] = lo + (hi - lo) * frac;
        }
        std::vector<double> v(static_cast<std::size_t>(k)), w(static_cast<std::size_t>(k));
        try {
            for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(i)] = eval(c.forward[static_cast<std::size_t>(i)], u);
            for (int i = 0; i < k; ++i) w[static_cast<std::size_t>(i)] = eval(c.inverse[static_cast<std::size_t>(i)], v);
        } catch (const DomainError& e) {
            throw SpecError(std::string("glue: eta not evaluable: ") + e.what());
        }
        for (int i = 0; i < k; ++i) {
            const auto ax = static_cast<std::size_t>(mf[static_cast<std::size_t>(i)]);
            double d = w[static_cast<std::size_t>(i)] - u[static_cast<std::size_t>(i)];
            if (mdom.periodic[ax]) d -= mdom.period(static_cast<int>(ax)) * std::round(d / mdom.period(static_cast<int>(ax)));
            if (std::fabs(d) > 1e-9 * (1 + std::fabs(u[static_cast<std::size_t>(i)])))
                throw SpecError("glue: eta is not invertible (inverse mismatch " + std::to_string(d) + ")");
        }
        if (n == 0) {
            Mat J(k, k);
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) J(a, b) = eval(diff(c.forward[static_cast<std::size_t>(a)], b), u);
            const double det = k == 0 ? 1.0 : J.determinant();
            if (det == 0) throw SpecError("glue: eta has a singular differential");
            orientation = det > 0 ? 1 : -1;
        }
    }
    return orientation > 0;
}

}  // namespace detail

/// Glues Q to M along their boundaries. The collar chart of each boundary component reuses the
/// coordinates of M's boundary chart, extended across the cut; on the far side points are Q points
/// reached through η and the product collar s ↦ (face point, depth s).
inline GluedManifold glue(const ManifoldWithBoundary& M, const ManifoldWithBoundary& Q, const BoundaryDiffeo& eta) {
    if (M.dim() != Q.dim()) throw SpecError("glue: dimensions differ");
    if (M.boundary.size() != Q.boundary.size())
        throw SpecError("glue: boundary component counts differ (" + std::to_string(M.boundary.size()) + " vs " +
                        std::to_string(Q.boundary.size()) + ")");
    if (M.boundary.empty()) throw SpecError("glue: M has no boundary");
    if (eta.components.size() != M.boundary.size()) throw SpecError("glue: eta must be given per boundary component");
    const int m = M.dim();
    GluedManifold N;
    N.M = M;
    N.Q = Q;
    auto atlas = std::make_shared<Atlas>();
    atlas->dim = m;
    const Atlas& am = *M.atlas;
    const Atlas& aq = *Q.atlas;

    std::vector<int> boundary_of_chart(am.charts.size(), -1);
    for (std::size_t b = 0; b < M.boundary.size(); ++b) {
        const auto ci = static_cast<std::size_t>(M.boundary[b].chart);
        if (boundary_of_chart[ci] >= 0) throw SpecError("glue: one boundary component per chart supported");
        boundary_of_chart[ci] = static_cast<int>(b);
    }

    // chart order: collars, remaining M charts, Q charts
    N.m_chart.assign(am.charts.size(), -1);
    N.q_chart.assign(aq.charts.size(), -1);
    for (std::size_t b = 0; b < M.boundary.size(); ++b) {
        N.m_chart[static_cast<std::size_t>(M.boundary[b].chart)] = static_cast<int>(b);
        N.side.push_back(Side::Collar);
    }
    int next = static_cast<int>(M.boundary.size());
    for (std::size_t i = 0; i < am.charts.size(); ++i)
        if (N.m_chart[i] < 0) {
            N.m_chart[i] = next++;
            N.side.push_back(Side::M);
        }
    for (std::size_t i = 0; i < aq.charts.size(); ++i) {
        N.q_chart[i] = next++;
        N.side.push_back(Side::Q);
    }
    atlas->charts.resize(static_cast<std::size_t>(next));

    for (std::size_t i = 0; i < am.charts.size(); ++i) {
        Chart c = am.charts[i];
        c.id = "M:" + c.id;
        atlas->charts[static_cast<std::size_t>(N.m_chart[i])] = c;
    }
    for (std::size_t i = 0; i < aq.charts.size(); ++i) {
        Chart c = aq.charts[i];
        c.id = "Q:" + c.id;
        atlas->charts[static_cast<std::size_t>(N.q_chart[i])] = c;
    }

    // collars
    for (std::size_t b = 0; b < M.boundary.size(); ++b) {
        const BoundaryComponent& bm = M.boundary[b];
        const BoundaryComponent& bq = Q.boundary[b];
        const Chart& cm = am.charts[static_cast<std::size_t>(bm.chart)];
        const Chart& cq = aq.charts[static_cast<std::size_t>(bq.chart)];
        if (cm.domain.ball || cq.domain.ball) throw SpecError("glue: boundary charts must be coordinate boxes");
        const auto& comp = eta.components[b];
        Collar col;
        col.chart = static_cast<int>(b);
        col.axis = bm.axis;
        col.offset = bm.offset;
        col.sigma_m = bm.inward_sign;
        col.q_chart = N.q_chart[static_cast<std::size_t>(bq.chart)];
        col.q_axis = bq.axis;
        col.q_offset = bq.offset;
        col.sigma_q = bq.inward_sign;
        col.orientation_preserving = detail::check_diffeo(comp, cm.domain, bm.axis, 256);

        const auto mf = detail::face_axes(m, bm.axis), qf = detail::face_axes(m, bq.axis);
        col.s = Expr(static_cast<double>(-bm.inward_sign)) * (Expr::var(bm.axis) - Expr(bm.offset));
        // collar -> Q: face through η, depth through the product collar
        std::vector<Expr> face_vars;
        for (int ax : mf) face_vars.push_back(Expr::var(ax));
        col.to_q.assign(static_cast<std::size_t>(m), Expr(0.0));
        for (std::size_t i = 0; i < qf.size(); ++i)
            col.to_q[static_cast<std::size_t>(qf[i])] = substitute(comp.forward[i], face_vars);
        col.to_q[static_cast<std::size_t>(bq.axis)] = Expr(bq.offset) + Expr(static_cast<double>(bq.inward_sign)) * col.s;
        // Q -> collar
        std::vector<Expr> qface_vars;
        for (int ax : qf) qface_vars.push_back(Expr::var(ax));
        const Expr s_q = Expr(static_cast<double>(bq.inward_sign)) * (Expr::var(bq.axis) - Expr(bq.offset));
        col.from_q.assign(static_cast<std::size_t>(m), Expr(0.0));
        for (std::size_t i = 0; i < mf.size(); ++i)
            col.from_q[static_cast<std::size_t>(mf[i])] = substitute(comp.inverse[i], qface_vars);
        col.from_q[static_cast<std::size_t>(bm.axis)] = Expr(bm.offset) - Expr(static_cast<double>(bm.inward_sign)) * s_q;

        // collar domain: M's chart box continued across the cut by Q's inward depth
        Chart collar = cm;
        collar.id = "M:" + cm.id;
        collar.domain.cut.reset();
        collar.domain.snap.emplace_back(bm.axis, bm.offset);
        const auto qa = static_cast<std::size_t>(bq.axis);
        const double depth_q = bq.inward_sign < 0 ? bq.offset - cq.domain.lo[qa] : cq.domain.hi[qa] - bq.offset;
        const auto ma = static_cast<std::size_t>(bm.axis);
        if (bm.inward_sign < 0) collar.domain.hi[ma] = bm.offset + depth_q;
        else collar.domain.lo[ma] = bm.offset - depth_q;

        MetricExpr gq = cq.metric.pullback(col.to_q);
        std::vector<Expr> up;
        for (std::size_t k = 0; k < cm.metric.upper().size(); ++k)
            up.push_back(select_le0(col.s, cm.metric.upper()[k], gq.upper()[k]));
        collar.metric = MetricExpr(m, std::move(up));
        atlas->charts[b] = collar;
        N.g_m_on_collar.push_back(cm.metric);
        N.g_q_on_collar.push_back(gq);
        N.collars.push_back(std::move(col));
    }

    // transitions
    auto side_guard = [](const Collar& c, bool m_side) {
        return [c, m_side](const Vec& p) {
            const double s = -c.sigma_m * (p[c.axis] - c.offset);
            return m_side ? s <= 1e-12 : s >= -1e-12;
        };
    };
    for (const auto& t : am.transitions) {
        TransitionMap nt = t;
        nt.from = N.m_chart[static_cast<std::size_t>(t.from)];
        nt.to = N.m_chart[static_cast<std::size_t>(t.to)];
        if (const Collar* c = N.collar_of(nt.from)) nt.accept = side_guard(*c, true);
        atlas->transitions.push_back(std::move(nt));
    }
    for (const auto& t : aq.transitions) {
        TransitionMap nt = t;
        nt.from = N.q_chart[static_cast<std::size_t>(t.from)];
        nt.to = N.q_chart[static_cast<std::size_t>(t.to)];
        atlas->transitions.push_back(std::move(nt));
    }
    for (const auto& c : N.collars) {
        const Domain jdom = atlas->charts[static_cast<std::size_t>(c.q_chart)].domain;
        atlas->transitions.push_back({c.chart, c.q_chart, c.to_q, side_guard(c, false)});
        atlas->transitions.push_back({c.q_chart, c.chart, c.from_q, {}});
        // collar <-> other Q charts, composed through Q's boundary chart
        for (const auto& t : aq.transitions) {
            const int from = N.q_chart[static_cast<std::size_t>(t.from)], to = N.q_chart[static_cast<std::size_t>(t.to)];
            if (from == c.q_chart) {
                std::vector<Expr> comp;
                for (const auto& e : t.forward) comp.push_back(substitute(e, c.to_q));
                atlas->transitions.push_back({c.chart, to, comp, side_guard(c, false)});
            }
            if (to == c.q_chart) {
                std::vector<Expr> comp;
                for (const auto& e : c.from_q) comp.push_back(substitute(e, t.forward));
                const TransitionMap inner{from, to, t.forward, {}};
                atlas->transitions.push_back(
                    {from, c.chart, comp, [inner, jdom](const Vec& p) { return inner.apply(p, jdom, 1e-9).has_value(); }});
            }
        }
    }
    N.atlas = atlas;
    return N;
}

/// (face parameters, s) of a point of N near the interface; s < 0 on the M side.
struct CollarPoint {
    int component = 0;
    Vec u;
    double s = 0;
};

inline CollarPoint collar_coordinates(const GluedManifold& N, int chart, const Vec& p) {
    for (std::size_t b = 0; b < N.collars.size(); ++b) {
        const Collar& c = N.collars[b];
        std::optional<Vec> y;
        if (chart == c.chart) {
            y = p;
        } else if (const TransitionMap* t = N.atlas->transition(chart, c.chart)) {
            y = t->apply(p, N.atlas->charts[static_cast<std::size_t>(c.chart)].domain, 1e-9);
        }
        if (!y) continue;
        const double s = N.s_of(c, *y);
        if (!(std::fabs(s) < 1.0)) continue;
        const auto face = detail::face_axes(N.dim(), c.axis);
        CollarPoint out;
        out.component = static_cast<int>(b);
        out.u.resize(static_cast<Eigen::Index>(face.size()));
        for (std::size_t i = 0; i < face.size(); ++i) out.u[static_cast<Eigen::Index>(i)] = (*y)[face[i]];
        out.s = s;
        return out;
    }
    throw Error("collar_coordinates: point outside the collar");
}

}  // namespace rext

#pragma once
// Metric extension across the interface: chart-wise reflection, partition-of-unity assembly,
// and the Fermi reflection ρ of a thin collar onto M.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "geodesic.hpp"
#include "glue.hpp"
#include "graph.hpp"
#include "lengthspace.hpp"
#include "spec_io.hpp"

namespace rext {

// ---- step 1: chart-wise extension ----------------------------------------------

/// c_1..c_n with Σ_k c_k (−1/k)^j = 1 for j < n; reflection with these weights matches
/// derivatives up to order n−1 across the face.
inline std::vector<double> seeley_coefficients(int order) {
    if (order < 1) throw SpecError("seeley_coefficients: order must be positive");
    Mat A(order, order);
    for (int j = 0; j < order; ++j)
        for (int k = 1; k <= order; ++k) A(j, k - 1) = std::pow(-1.0 / k, j);
    const Vec c = A.colPivHouseholderQr().solve(Vec::Ones(order));
    return {c.data(), c.data() + c.size()};
}

struct ExtendOptions {
    int order = 3;
    int grid_points = 20;      // probe points per extension depth
    int t_levels = 16;         // candidate thresholds t = i / t_levels
    double default_depth = 1;  // extension depth when the M side of the chart is unbounded
    double face_extent = 4;    // probe range on unbounded face axes
};

struct LocalExtension {
    std::string chart_id;
    int axis = 0;
    double offset = 0;
    int outward = 1;            // +1 when the outside is x_axis > offset
    double depth = 1;           // length of the extension direction in chart units
    double t = 0;               // validity threshold as a fraction of depth
    MetricExpr metric;          // s̃: the chart metric inside, the reflection outside
    MetricExpr reflected;       // the outside branch alone

    double valid_depth() const { return t * depth; }
};

namespace detail {

inline double chart_depth(const Domain& d, const Domain::Cut& cut, double fallback) {
    const auto a = static_cast<std::size_t>(cut.axis);
    const int out = cut.keep_le ? 1 : -1;
    double D;
    if (d.ball) D = out * (d.ball->center[a] - cut.offset) + d.ball->radius;
    else D = cut.keep_le ? cut.offset - d.lo[a] : d.hi[a] - cut.offset;
    return std::isfinite(D) && D > 0 ? D : fallback;
}

}  // namespace detail

inline LocalExtension extend_chart_metric(const Chart& chart, const ExtendOptions& opt = {}) {
    const Domain& dom = chart.domain;
    if (!dom.cut) throw SpecError("extend: chart '" + chart.id + "' has no boundary face");
    const int m = dom.dim();
    const auto& cut = *dom.cut;
    LocalExtension ext;
    ext.chart_id = chart.id;
    ext.axis = cut.axis;
    ext.offset = cut.offset;
    ext.outward = cut.keep_le ? 1 : -1;
    ext.depth = detail::chart_depth(dom, cut, opt.default_depth);

    // s̃(x) = Σ c_k s(x′, c − (x_m − c)/k) outside the face
    const auto c = seeley_coefficients(opt.order);
    std::vector<std::vector<Expr>> images;
    for (int k = 1; k <= opt.order; ++k) {
        std::vector<Expr> img;
        for (int i = 0; i < m; ++i)
            img.push_back(i == cut.axis ? Expr(cut.offset) - (Expr::var(i) - Expr(cut.offset)) / Expr(static_cast<double>(k))
                                        : Expr::var(i));
        images.push_back(std::move(img));
    }
    const Expr depth = Expr(static_cast<double>(ext.outward)) * (Expr::var(cut.axis) - Expr(cut.offset));
    std::vector<Expr> refl, full;
    for (const auto& e : chart.metric.upper()) {
        Expr r(0.0);
        for (int k = 0; k < opt.order; ++k)
            r = r + Expr(c[static_cast<std::size_t>(k)]) * substitute(e, images[static_cast<std::size_t>(k)]);
        refl.push_back(r);
        full.push_back(select_le0(depth, e, r));
    }
    ext.reflected = MetricExpr(m, refl);
    ext.metric = MetricExpr(m, full);

    // probe grid: multiples of δ from the ball centre (or the box corner / origin)
    const double delta = ext.depth / opt.grid_points;
    std::vector<std::vector<double>> axis_vals(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        auto& vals = axis_vals[static_cast<std::size_t>(i)];
        const auto ui = static_cast<std::size_t>(i);
        if (i == cut.axis) {
            for (int k = -opt.grid_points; k <= opt.grid_points; ++k) vals.push_back(cut.offset + k * delta);
            continue;
        }
        double lo = dom.lo[ui], hi = dom.hi[ui];
        if (!std::isfinite(lo)) lo = -opt.face_extent;
        if (!std::isfinite(hi)) hi = opt.face_extent;
        const double base = dom.ball ? dom.ball->center[ui] : std::isfinite(dom.lo[ui]) ? dom.lo[ui] : 0.0;
        const long k0 = static_cast<long>(std::ceil((lo - base) / delta - 1e-9));
        const long k1 = static_cast<long>(std::floor((hi - base) / delta + 1e-9));
        for (long k = k0; k <= k1; ++k) {
            const double v = base + static_cast<double>(k) * delta;
            if (dom.periodic[ui] && v >= dom.hi[ui] - 1e-12) continue;
            vals.push_back(v);
        }
    }
    Domain probe = dom;
    probe.cut.reset();
    if (probe.ball) probe.ball->open = true;
    const auto ax = static_cast<std::size_t>(cut.axis);
    probe.lo[ax] = std::min(probe.lo[ax], cut.offset - ext.depth - 1e-9);
    probe.hi[ax] = std::max(probe.hi[ax], cut.offset + ext.depth + 1e-9);

    double first_bad = kInf;  // smallest outside depth with a non-positive eigenvalue
    std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
    Vec p(m);
    for (;;) {
        for (int i = 0; i < m; ++i) p[i] = axis_vals[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
        const double d = ext.outward * (p[cut.axis] - cut.offset);
        const bool inside = d <= 0 ? dom.contains(p, 1e-12) && !(dom.ball && !probe.contains(p, 0)) : probe.contains(p, 0);
        if (inside) {
            double lam;
            try {
                lam = min_eigenvalue(ext.metric.value(p));
            } catch (const DomainError&) {
                lam = -kInf;
            }
            if (d <= 0 && !(lam > 0))
                throw SpecError("extend: metric of chart '" + chart.id + "' is not positive definite at a point of M (" +
                                std::to_string(p[0]) + (m > 1 ? ", " + std::to_string(p[1]) : std::string()) + ")");
            if (d > 0 && !(lam > 0)) first_bad = std::min(first_bad, d);
        }
        int i = 0;
        for (; i < m; ++i) {
            auto& k = idx[static_cast<std::size_t>(i)];
            if (++k < axis_vals[static_cast<std::size_t>(i)].size()) break;
            k = 0;
        }
        if (i == m) break;
    }
    double tbest = 0;
    for (int i = 1; i <= opt.t_levels; ++i) {
        const double t = static_cast<double>(i) / opt.t_levels;
        if (t * ext.depth < first_bad - 1e-12) tbest = t;
    }
    if (tbest == 0)
        throw SpecError("extend: no positive validity threshold for chart '" + chart.id +
                        "' (metric degenerates at the boundary)");
    ext.t = 0.5 * tbest;
    return ext;
}

/// One extension per boundary component of the glued manifold, from M's boundary charts.
inline std::vector<LocalExtension> extend_boundary_charts(const GluedManifold& N, const ExtendOptions& opt = {}) {
    std::vector<LocalExtension> out(N.collars.size());
    parallel_for(out.size(), [&](std::size_t b) {
        const auto& chart = N.M.atlas->charts[static_cast<std::size_t>(N.M.boundary[b].chart)];
        out[b] = extend_chart_metric(chart, opt);
    });
    return out;
}

// ---- step 2: partition of unity -----------------------------------------------

/// exp(−1/t) for t > 0, 0 otherwise.
inline Expr flat_profile(const Expr& t) { return select_le0(t, Expr(0.0), exp(Expr(-1.0) / t)); }

/// C^∞ step: 0 for t <= 0, 1 for t >= 1.
inline Expr smooth_step(const Expr& t) {
    const Expr a = flat_profile(t);
    return a / (a + flat_profile(Expr(1.0) - t));
}

inline double smooth_step(double t) {
    if (t <= 0) return 0;
    if (t >= 1) return 1;
    const double a = std::exp(-1 / t), b = std::exp(-1 / (1 - t));
    return a / (a + b);
}

struct PartitionOfUnity {
    struct Piece {
        double plateau = 0, support = 0;  // |s| <= plateau: η_β = 1; |s| >= support: η_β = 0
        Expr eta_beta, eta_m, eta_q;      // over collar coordinates
    };
    std::vector<Piece> pieces;  // per collar
};

/// η_β = ψ(s) with ψ ≡ 1 on |s| <= support/2 and 0 from |s| = support on; η_M and η_Q take
/// the rest on their side. Supports default to the validity depth of each extension.
inline PartitionOfUnity build_partition(const GluedManifold& N, const std::vector<LocalExtension>& exts,
                                        const std::vector<double>& supports = {}) {
    if (exts.size() != N.collars.size()) throw SpecError("partition: one extension per collar required");
    PartitionOfUnity pou;
    for (std::size_t b = 0; b < N.collars.size(); ++b) {
        const Collar& c = N.collars[b];
        const Domain& cd = N.atlas->charts[static_cast<std::size_t>(c.chart)].domain;
        const auto ax = static_cast<std::size_t>(c.axis);
        const double depth_q = c.sigma_m < 0 ? cd.hi[ax] - c.offset : c.offset - cd.lo[ax];
        PartitionOfUnity::Piece pc;
        pc.support = supports.empty() ? std::min(exts[b].valid_depth(), 0.9 * depth_q) : supports[b];
        if (!(pc.support > 0)) throw SpecError("partition: support must be positive");
        pc.plateau = 0.5 * pc.support;
        const double b2 = pc.support * pc.support, a2 = pc.plateau * pc.plateau;
        pc.eta_beta = smooth_step((Expr(b2) - c.s * c.s) / Expr(b2 - a2));
        const Expr rest = Expr(1.0) - pc.eta_beta;
        pc.eta_m = select_le0(c.s, rest, Expr(0.0));
        pc.eta_q = select_le0(c.s, Expr(0.0), rest);
        pou.pieces.push_back(std::move(pc));
    }
    return pou;
}

struct Weights {
    double m = 0, q = 0, beta = 0;
    double sum() const { return m + q + beta; }
};

/// Partition weights at a chart point of N.
inline Weights partition_weights(const GluedManifold& N, const PartitionOfUnity& pou, int chart, const Vec& p) {
    const Side sd = N.side[static_cast<std::size_t>(chart)];
    if (sd == Side::M) return {1, 0, 0};
    for (std::size_t b = 0; b < N.collars.size(); ++b) {
        const Collar& c = N.collars[b];
        std::optional<Vec> y;
        if (chart == c.chart) y = p;
        else if (chart == c.q_chart) {
            Vec z(p.size());
            for (int i = 0; i < p.size(); ++i) z[i] = eval(c.from_q[static_cast<std::size_t>(i)], as_span(p));
            y = z;
        }
        if (!y) continue;
        const auto& pc = pou.pieces[b];
        return {eval(pc.eta_m, as_span(*y)), eval(pc.eta_q, as_span(*y)), eval(pc.eta_beta, as_span(*y))};
    }
    return {0, 1, 0};
}

/// g̃ = η_M g_M + η_Q g_Q + Σ η_β s̃_β chart by chart, registered on the mesh as "g_tilde".
/// Checked at every vertex: Ση = 1, g̃ = g_M on M, positive definiteness.
inline AtlasMetric assemble_global_metric(const GluedManifold& N, Mesh& mesh, const std::vector<LocalExtension>& exts,
                                          const PartitionOfUnity& pou) {
    const int m = N.dim();
    AtlasMetric g = AtlasMetric::from_atlas(*N.atlas);
    for (std::size_t b = 0; b < N.collars.size(); ++b) {
        const Collar& c = N.collars[b];
        const auto& pc = pou.pieces[b];
        const MetricExpr& gm = N.g_m_on_collar[b];
        const MetricExpr& gq = N.g_q_on_collar[b];
        const MetricExpr& st = exts[b].reflected;
        std::vector<Expr> up;
        for (std::size_t k = 0; k < gm.upper().size(); ++k)
            up.push_back(select_le0(c.s, gm.upper()[k], pc.eta_q * gq.upper()[k] + pc.eta_beta * st.upper()[k]));
        MetricExpr collar_metric(m, std::move(up));
        g.per_chart[static_cast<std::size_t>(c.chart)] = collar_metric;
        // Q's boundary chart sees the same tensor through the collar identification
        g.per_chart[static_cast<std::size_t>(c.q_chart)] = collar_metric.pullback(c.from_q);
    }
    const AtlasMetric gM = N.m_metric();
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
        const auto& vx = mesh.vertices[v];
        const auto where = [&] {
            return "vertex " + std::to_string(v) + " (chart '" + N.atlas->charts[static_cast<std::size_t>(vx.chart)].id + "')";
        };
        const Weights w = partition_weights(N, pou, vx.chart, vx.x);
        if (std::fabs(w.sum() - 1) > 1e-9) throw NumericGuard("partition of unity does not sum to 1 at " + where());
        if (N.side[static_cast<std::size_t>(vx.chart)] == Side::Q && !N.collar_of(vx.chart)) {
            bool boundary_chart = false;
            for (const auto& c : N.collars) boundary_chart |= c.q_chart == vx.chart;
            if (!boundary_chart) {
                try {
                    const auto cp = collar_coordinates(N, vx.chart, vx.x);
                    if (std::fabs(cp.s) < pou.pieces[static_cast<std::size_t>(cp.component)].support)
                        throw SpecError("partition support reaches " + where());
                } catch (const SpecError&) {
                    throw;
                } catch (const Error&) {
                }
            }
        }
        Mat gv;
        try {
            gv = g.value(vx.chart, vx.x);
        } catch (const DomainError& e) {
            throw NumericGuard("g_tilde not evaluable at " + where() + ": " + e.what());
        }
        if (!(min_eigenvalue(gv) > 0)) throw NumericGuard("g_tilde is not positive definite at " + where());
        if ((vx.flags & kInM) && gM.defined_on(vx.chart)) {
            const double diff = (gv - gM.value(vx.chart, vx.x)).cwiseAbs().maxCoeff();
            if (diff > 1e-12) throw NumericGuard("g_tilde differs from g_M at " + where());
        }
    }
    mesh.register_metric("g_tilde", g);
    return g;
}

// ---- step 3: Fermi collar and the reflection ρ ---------------------------------

namespace detail {

/// Monotone piecewise-cubic (Fritsch-Carlson) interpolant, optionally periodic.
class Pchip {
public:
    Pchip() = default;
    Pchip(std::vector<double> x, std::vector<double> y, double period = 0) : period_(period) {
        if (x.size() != y.size() || x.empty()) throw Error("pchip: bad data");
        if (period > 0) {
            // wrap three neighbours on each side
            const std::size_t n = x.size(), w = std::min<std::size_t>(3, n);
            std::vector<double> xs, ys;
            for (std::size_t i = n - w; i < n; ++i) {
                xs.push_back(x[i] - period);
                ys.push_back(y[i]);
            }
            xs.insert(xs.end(), x.begin(), x.end());
            ys.insert(ys.end(), y.begin(), y.end());
            for (std::size_t i = 0; i < w; ++i) {
                xs.push_back(x[i] + period);
                ys.push_back(y[i]);
            }
            lo_ = x.front();
            x = std::move(xs);
            y = std::move(ys);
        }
        x_ = std::move(x);
        y_ = std::move(y);
        const std::size_t n = x_.size();
        d_.assign(n, 0.0);
        if (n == 1) return;
        std::vector<double> h(n - 1), del(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            del[i] = (y_[i + 1] - y_[i]) / h[i];
        }
        d_[0] = del[0];
        d_[n - 1] = del[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (del[i - 1] * del[i] <= 0) continue;
            const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
            d_[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }

    double operator()(double t) const {
        if (period_ > 0) {
            t = std::fmod(t - lo_, period_);
            if (t < 0) t += period_;
            t += lo_;
        }
        if (x_.size() == 1) return y_[0];
        if (t <= x_.front()) return y_.front();
        if (t >= x_.back()) return y_.back();
        const auto it = std::upper_bound(x_.begin(), x_.end(), t);
        const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
        const double h = x_[i + 1] - x_[i], s = (t - x_[i]) / h;
        const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
        const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
        return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] + h11 * h * d_[i + 1];
    }

private:
    std::vector<double> x_, y_, d_;
    double period_ = 0, lo_ = 0;
};

/// Geodesic states at uniform arc spacing, with cubic Hermite interpolation in s.
struct ShotTable {
    double ds = 0;
    std::vector<Vec> x, v;  // collar-chart coordinates, periodic axes unwrapped along the shot

    double reach() const { return x.empty() ? 0 : ds * static_cast<double>(x.size() - 1); }

    std::pair<Vec, Vec> at(double s) const {
        if (x.size() == 1 || s <= 0) return {x[0], v[0]};
        double k = s / ds;
        std::size_t i = std::min(static_cast<std::size_t>(k), x.size() - 2);
        const double t = k - static_cast<double>(i);
        const Vec &p0 = x[i], &p1 = x[i + 1], &m0 = v[i], &m1 = v[i + 1];
        const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
        const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
        const Vec pos = h00 * p0 + h10 * ds * m0 + h01 * p1 + h11 * ds * m1;
        const double d00 = 6 * t * t - 6 * t, d10 = 3 * t * t - 4 * t + 1, d01 = -d00, d11 = 3 * t * t - 2 * t;
        const Vec vel = (d00 * p0 + d01 * p1) / ds + d10 * m0 + d11 * m1;
        return {pos, vel};
    }
};

}  // namespace detail

struct FermiOptions {
    double eps = 1.0;        // ‖dρ‖ ≤ 1 + eps
    double step = 0.005;     // RK4 step for normal geodesics
    double s_cap = 0.5;      // policy cap on the collar depth
    int depth_checks = 8;    // depths s·k/depth_checks tested per candidate s
    int bisect = 20;
    double fd = 1e-5;        // face-parameter difference for ∂F/∂u
};

struct FermiSample {
    int component = 0;
    double u = 0;               // face parameter (unwrapped, sorted)
    Vec p0, nu;                 // boundary point and outward unit normal, collar coordinates
    double spacing = 0;         // g̃-distance to the next sample
    double reach = 0;           // depth available to the shots
    double s0 = 0;
    double max_drho = 1;        // largest sampled ‖dρ‖ over (0, s0]
};

struct FermiCoord {
    int component = 0;
    double u = 0, s = 0;
};

/// Fermi coordinates (u, s) ↦ exp_{p0(u)}(s ν(u)) around each boundary component (m = 2).
class FermiCollar {
public:
    FermiCollar() = default;

    const GluedManifold* N = nullptr;
    AtlasMetric g;          // g̃
    FermiOptions opt;
    std::vector<std::vector<FermiSample>> samples;  // per component, sorted by u
    std::vector<double> coord_depth;                // per component: largest collar coordinate s of a tip

    double eps() const { return opt.eps; }

    int face_axis(int b) const { return N->collars[static_cast<std::size_t>(b)].axis == 0 ? 1 : 0; }

    const Domain& collar_domain(int b) const {
        return N->atlas->charts[static_cast<std::size_t>(N->collars[static_cast<std::size_t>(b)].chart)].domain;
    }

    double face_period(int b) const {
        const Domain& d = collar_domain(b);
        const int fa = face_axis(b);
        return d.periodic[static_cast<std::size_t>(fa)] ? d.period(fa) : 0;
    }

    double s0(int b, double u) const { return s0_interp_[static_cast<std::size_t>(b)](u); }

    /// Boundary point and outward g̃-unit normal at face parameter u.
    std::pair<Vec, Vec> boundary_frame(int b, double u) const {
        const Collar& c = N->collars[static_cast<std::size_t>(b)];
        Vec p0(2);
        p0[c.axis] = c.offset;
        p0[face_axis(b)] = u;
        p0 = collar_domain(b).wrap(p0);
        const MetricExpr& gc = g.at(c.chart);
        const Mat gi = gc.value(p0).inverse();
        Vec n = Vec::Zero(2);
        n[c.axis] = -c.sigma_m;  // ds
        Vec nu = gi * n;
        nu /= std::sqrt(n.dot(gi * n));
        return {p0, nu};
    }

    /// exp^⊥(u, s) in collar coordinates with velocity ∂/∂s; exact shooting.
    std::pair<Vec, Vec> exp_perp(int b, double u, double s) const {
        auto [p0, nu] = boundary_frame(b, u);
        if (s == 0) return {p0, nu};
        const double T = std::fabs(s);
        const int sign = s > 0 ? 1 : -1;
        auto tab = shoot(b, p0, sign * nu, T, std::min(opt.step, T / 10));
        if (tab.reach() < T * (1 - 1e-12)) throw NumericGuard("fermi: normal geodesic left the collar chart");
        return {tab.x.back(), sign * tab.v.back()};
    }

    /// Differential of (u, s) ↦ exp^⊥ (columns ∂_u, ∂_s), exact shooting.
    Mat dF(int b, double u, double s) const {
        const Domain& d = collar_domain(b);
        const auto [x, v] = exp_perp(b, u, s);
        const Vec xp = detail::unwrap_near(d, x, exp_perp(b, u + opt.fd, s).first);
        const Vec xm = detail::unwrap_near(d, x, exp_perp(b, u - opt.fd, s).first);
        Mat J(2, 2);
        J.col(0) = (xp - xm) / (2 * opt.fd);
        J.col(1) = v;
        return J;
    }

    /// Operator norm of dρ at exp^⊥(u, s), s > 0, from tabulated shots of sample i.
    double drho_norm(int b, std::size_t i, double s) const {
        const Collar& c = N->collars[static_cast<std::size_t>(b)];
        const MetricExpr& gc = g.at(c.chart);
        const auto Jq = table_jacobian(b, i, s), Jm = table_jacobian(b, i, -s);
        Mat flip = Mat::Identity(2, 2);
        flip(1, 1) = -1;
        const Mat A = Jm * flip * Jq.inverse();
        const Mat Gp = gc.value(table_point(b, i, s)), Gq = gc.value(table_point(b, i, -s));
        return operator_norm(A, Gp, Gq);
    }

    /// Same, at an arbitrary face parameter, by exact shooting.
    double drho_norm_at(int b, double u, double s) const {
        const Collar& c = N->collars[static_cast<std::size_t>(b)];
        const MetricExpr& gc = g.at(c.chart);
        const Mat Jq = dF(b, u, s), Jm = dF(b, u, -s);
        Mat flip = Mat::Identity(2, 2);
        flip(1, 1) = -1;
        const Mat A = Jm * flip * Jq.inverse();
        return operator_norm(A, gc.value(exp_perp(b, u, s).first), gc.value(exp_perp(b, u, -s).first));
    }

    static double operator_norm(const Mat& A, const Mat& Gp, const Mat& Gq) {
        const Mat B = A.transpose() * Gq * A;
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(0.5 * (B + B.transpose()), Gp, Eigen::EigenvaluesOnly);
        return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
    }

    /// Collar-chart coordinates of a point of N inside the collar chart region, if any.
    std::optional<std::pair<int, Vec>> to_collar(int chart, const Vec& x) const {
        for (std::size_t b = 0; b < N->collars.size(); ++b) {
            const Collar& c = N->collars[b];
            if (chart == c.chart) return std::make_pair(static_cast<int>(b), x);
            if (auto y = detail::to_chart(*N->atlas, {chart, x, -1}, c.chart)) return std::make_pair(static_cast<int>(b), *y);
        }
        return std::nullopt;
    }

    /// Approximate Fermi coordinates from the shot tables.
    std::optional<FermiCoord> fermi_coordinates_approx(int chart, const Vec& x) const {
        auto cx = to_collar(chart, x);
        if (!cx) return std::nullopt;
        const int b = cx->first;
        return invert_tables(b, cx->second);
    }

    /// Fermi coordinates by Newton iteration on exact shots (tables give the start).
    std::optional<FermiCoord> fermi_coordinates(int chart, const Vec& x) const {
        auto cx = to_collar(chart, x);
        if (!cx) return std::nullopt;
        const int b = cx->first;
        auto guess = invert_tables(b, cx->second);
        if (!guess) return std::nullopt;
        const Domain& d = collar_domain(b);
        double u = guess->u, s = guess->s;
        for (int it = 0; it < 30; ++it) {
            const auto [y, v] = exp_perp(b, u, s);
            const Vec r = detail::unwrap_near(d, cx->second, y) - cx->second;
            if (r.norm() < 1e-13) break;
            const Mat J = dF(b, u, s);
            const Vec step = J.fullPivLu().solve(r);
            u -= step[0];
            s -= step[1];
            if (step.norm() < 1e-14) break;
        }
        return FermiCoord{b, u, s};
    }

    bool in_XQ(int chart, const Vec& x) const {
        if (N->side[static_cast<std::size_t>(chart)] == Side::M) return false;
        auto cx = to_collar(chart, x);
        if (!cx) return false;
        const int b = cx->first;
        const double sc = N->s_of(N->collars[static_cast<std::size_t>(b)], cx->second);
        if (sc <= 0) return false;
        // tips interpolate linearly between samples, so nothing deeper can invert inside
        if (static_cast<std::size_t>(b) < coord_depth.size() && sc > 1.05 * coord_depth[static_cast<std::size_t>(b)] + 1e-9)
            return false;
        auto f = invert_tables(b, cx->second);
        return f && f->s >= -1e-12 && f->s <= s0(b, f->u) + 1e-12;
    }

    bool in_M(int chart, const Vec& x) const {
        const Side sd = N->side[static_cast<std::size_t>(chart)];
        if (sd == Side::M) return true;
        if (sd == Side::Collar) return N->s_of(*N->collar_of(chart), x) <= 0;
        return false;
    }

    bool in_P(int chart, const Vec& x) const { return in_M(chart, x) || in_XQ(chart, x); }

    /// Vertex mask of P = M ∪ 𝒳_Q.
    Mask p_mask(const Mesh& mesh) const {
        Mask out(mesh.num_vertices(), 0);
        for (std::size_t v = 0; v < out.size(); ++v) {
            const auto& vx = mesh.vertices[v];
            out[v] = (vx.flags & kInM) || in_XQ(vx.chart, vx.x) ? 1 : 0;
        }
        return out;
    }

    /// ρ: identity on M, Fermi reflection (u, s) ↦ (u, −s) on 𝒳_Q.
    PathPoint project_rho(const PathPoint& p) const {
        if (in_M(p.chart, p.x)) return p;
        auto f = fermi_coordinates(p.chart, p.x);
        if (!f || f->s < -1e-9 || f->s > s0(f->component, f->u) + 1e-9)
            throw Error("project_rho: point outside P");
        const int chart = N->collars[static_cast<std::size_t>(f->component)].chart;
        return {chart, collar_domain(f->component).wrap(exp_perp(f->component, f->u, -f->s).first), -1};
    }

    /// Inverse of ρ on 𝒳_M: (u, −s) ↦ (u, s).
    PathPoint rho_inverse(const PathPoint& p) const {
        auto f = fermi_coordinates(p.chart, p.x);
        if (!f || f->s > 1e-12 || -f->s > s0(f->component, f->u) + 1e-9)
            throw Error("rho_inverse: point outside the M-side collar");
        const int chart = N->collars[static_cast<std::size_t>(f->component)].chart;
        return {chart, collar_domain(f->component).wrap(exp_perp(f->component, f->u, -f->s).first), -1};
    }

    // internals shared with the builder
    struct Tables {
        detail::ShotTable fwd, bwd, fwd_p, bwd_p, fwd_m, bwd_m;  // at u, u+fd, u−fd
    };
    std::vector<std::vector<Tables>> tables;
    std::vector<detail::Pchip> s0_interp_;

    detail::ShotTable shoot(int b, const Vec& p0, const Vec& v0, double T, double step) const {
        const Collar& c = N->collars[static_cast<std::size_t>(b)];
        const Domain& d = collar_domain(b);
        detail::ShotTable tab;
        const auto run = shoot_geodesic(*N->atlas, g, {c.chart, p0, v0, 0}, T, step);
        tab.ds = run.states.size() > 1 ? run.states[1].arc : step;
        for (const auto& st : run.states) {
            Vec x = st.x, v = st.v;
            if (st.chart != c.chart) {
                const TransitionMap* t = N->atlas->transition(st.chart, c.chart);
                auto y = t ? t->apply(st.x, d, 1e-9) : std::nullopt;
                if (!y) break;
                v = t->jacobian(st.x) * st.v;
                x = *y;
            }
            if (!tab.x.empty()) x = detail::unwrap_near(d, tab.x.back(), x);
            tab.x.push_back(x);
            tab.v.push_back(v);
        }
        return tab;
    }

    Vec table_point(int b, std::size_t i, double s) const {
        const auto& t = tables[static_cast<std::size_t>(b)][i];
        return s >= 0 ? t.fwd.at(s).first : t.bwd.at(-s).first;
    }

    Mat table_jacobian(int b, std::size_t i, double s) const {
        const auto& t = tables[static_cast<std::size_t>(b)][i];
        const Domain& d = collar_domain(b);
        const bool pos = s >= 0;
        const double a = std::fabs(s);
        const auto [x, v] = pos ? t.fwd.at(a) : t.bwd.at(a);
        const Vec xp = detail::unwrap_near(d, x, (pos ? t.fwd_p : t.bwd_p).at(a).first);
        const Vec xm = detail::unwrap_near(d, x, (pos ? t.fwd_m : t.bwd_m).at(a).first);
        Mat J(2, 2);
        J.col(0) = (xp - xm) / (2 * opt.fd);
        J.col(1) = pos ? v : Vec(-v);
        return J;
    }

private:
    std::optional<FermiCoord> invert_tables(int b, const Vec& x) const {
        const auto& sm = samples[static_cast<std::size_t>(b)];
        if (sm.empty()) return std::nullopt;
        const Domain& d = collar_domain(b);
        const int fa = face_axis(b);
        const double per = face_period(b);
        const std::size_t n = sm.size();
        const Collar& c = N->collars[static_cast<std::size_t>(b)];
        // nearest sample by face parameter
        double ux = x[fa];
        std::size_t i0 = 0;
        double best = kInf;
        for (std::size_t i = 0; i < n; ++i) {
            double du = ux - sm[i].u;
            if (per > 0) du -= per * std::round(du / per);
            if (std::fabs(du) < best) {
                best = std::fabs(du);
                i0 = i;
            }
        }
        const double rate = -c.sigma_m * sm[i0].nu[c.axis];
        const double s_init = N->s_of(c, x) / rate;
        const long span = 3;
        for (long off = 0; off <= 2 * span; ++off) {
            const long k = static_cast<long>(i0) + ((off % 2) ? (off + 1) / 2 : -(off / 2));
            long i = k, j = k + 1;
            if (per > 0) {
                i = ((i % static_cast<long>(n)) + static_cast<long>(n)) % static_cast<long>(n);
                j = (i + 1) % static_cast<long>(n);
            } else if (i < 0 || j >= static_cast<long>(n)) {
                continue;
            }
            const auto& A = sm[static_cast<std::size_t>(i)];
            const auto& B = sm[static_cast<std::size_t>(j)];
            double uA = A.u, uB = B.u;
            if (per > 0 && uB <= uA) uB += per;
            const double reach = std::min(A.reach, B.reach);
            double w = 0.5, s = std::clamp(s_init, -reach, reach);
            bool ok = false;
            for (int it = 0; it < 40; ++it) {
                auto ev = [&](const FermiSample& S, std::size_t idx, double ss) {
                    const auto& t = tables[static_cast<std::size_t>(b)][idx];
                    auto pv = ss >= 0 ? t.fwd.at(ss) : t.bwd.at(-ss);
                    if (ss < 0) pv.second = -pv.second;
                    (void)S;
                    return pv;
                };
                auto [pa, va] = ev(A, static_cast<std::size_t>(i), s);
                auto [pb, vb] = ev(B, static_cast<std::size_t>(j), s);
                pa = detail::unwrap_near(d, x, pa);
                pb = detail::unwrap_near(d, pa, pb);
                const Vec r = (1 - w) * pa + w * pb - x;
                if (r.norm() < 1e-12) {
                    ok = true;
                    break;
                }
                Mat J(2, 2);
                J.col(0) = pb - pa;
                J.col(1) = (1 - w) * va + w * vb;
                const Vec dlt = J.fullPivLu().solve(r);
                w -= dlt[0];
                s -= dlt[1];
                w = std::clamp(w, -0.5, 1.5);
                s = std::clamp(s, -reach, reach);
                if (dlt.norm() < 1e-14) {
                    ok = r.norm() < 1e-9;
                    break;
                }
            }
            if (ok && w >= -1e-9 && w <= 1 + 1e-9) return FermiCoord{b, uA + w * (uB - uA), s};
        }
        return std::nullopt;
    }
};

/// Shoots normal g̃-geodesics from the interface vertices of `mesh`, picks per-sample depths
/// s0 by halving search (injectivity of the tips and ‖dρ‖ ≤ 1 + eps at every tested depth),
/// and interpolates s0 along each boundary component.
inline FermiCollar build_fermi_collar(const GluedManifold& N, const Mesh& mesh, const AtlasMetric& g_tilde,
                                      const FermiOptions& opt = {}) {
    if (N.dim() != 2) throw SpecError("fermi collar: implemented for dimension 2");
    if (!(opt.eps > 0)) throw SpecError("fermi collar: eps must be positive");
    FermiCollar fc;
    fc.N = &N;
    fc.g = g_tilde;
    fc.opt = opt;
    const std::size_t nb = N.collars.size();
    fc.samples.resize(nb);
    fc.tables.resize(nb);
    for (int v : boundary_vertices(mesh)) {
        const auto& vx = mesh.vertices[static_cast<std::size_t>(v)];
        for (std::size_t b = 0; b < nb; ++b)
            if (N.collars[b].chart == vx.chart) {
                FermiSample s;
                s.component = static_cast<int>(b);
                s.u = vx.x[fc.face_axis(static_cast<int>(b))];
                fc.samples[b].push_back(s);
            }
    }
    for (std::size_t b = 0; b < nb; ++b) {
        auto& sm = fc.samples[b];
        if (sm.size() < 2) throw SpecError("fermi collar: boundary component " + std::to_string(b) + " has fewer than 2 mesh samples");
        std::sort(sm.begin(), sm.end(), [](const FermiSample& a, const FermiSample& c) { return a.u < c.u; });
        const int bi = static_cast<int>(b);
        const double per = fc.face_period(bi);
        fc.tables[b].resize(sm.size());
        for (auto& s : sm) std::tie(s.p0, s.nu) = fc.boundary_frame(bi, s.u);
        const Domain& d = fc.collar_domain(bi);
        const MetricExpr& gc = g_tilde.at(N.collars[b].chart);
        for (std::size_t i = 0; i < sm.size(); ++i) {
            const std::size_t j = i + 1 < sm.size() ? i + 1 : 0;
            if (j == 0 && per == 0) {
                sm[i].spacing = sm[i - 1].spacing;
                continue;
            }
            const Vec q = detail::unwrap_near(d, sm[i].p0, sm[j].p0);
            const Vec mid = 0.5 * (sm[i].p0 + q), dl = q - sm[i].p0;
            sm[i].spacing = std::sqrt(dl.dot(gc.value(d.wrap(mid)) * dl));
        }
        const double T = opt.s_cap;
        const double step = std::min(opt.step, T / 10);
        parallel_for(sm.size(), [&](std::size_t i) {
            auto& t = fc.tables[b][i];
            const double u = sm[i].u;
            auto frame_p = fc.boundary_frame(bi, u + opt.fd), frame_m = fc.boundary_frame(bi, u - opt.fd);
            t.fwd = fc.shoot(bi, sm[i].p0, sm[i].nu, T, step);
            t.bwd = fc.shoot(bi, sm[i].p0, -sm[i].nu, T, step);
            t.fwd_p = fc.shoot(bi, frame_p.first, frame_p.second, T, step);
            t.bwd_p = fc.shoot(bi, frame_p.first, -frame_p.second, T, step);
            t.fwd_m = fc.shoot(bi, frame_m.first, frame_m.second, T, step);
            t.bwd_m = fc.shoot(bi, frame_m.first, -frame_m.second, T, step);
            double reach = T;
            for (const auto* tb : {&t.fwd, &t.bwd, &t.fwd_p, &t.bwd_p, &t.fwd_m, &t.bwd_m}) reach = std::min(reach, tb->reach());
            sm[i].reach = reach;
        });
        auto tip_ok = [&](std::size_t i, double s) {
            for (std::size_t j : {i + 1, i + sm.size() - 1}) {
                j %= sm.size();
                if (per == 0 && ((j == 0 && i + 1 == sm.size()) || (j + 1 == sm.size() && i == 0)) && sm.size() > 2) continue;
                if (j == i) continue;
                const double sp = std::min(sm[i].spacing, sm[std::min(i, j) == i && j == i + 1 ? i : j].spacing);
                for (double ss : {s, -s}) {
                    const Vec a = fc.table_point(bi, i, ss);
                    const Vec c = detail::unwrap_near(d, a, fc.table_point(bi, j, ss));
                    const Vec mid = 0.5 * (a + c), dl = c - a;
                    if (!(std::sqrt(dl.dot(gc.value(d.wrap(mid)) * dl)) >= 0.5 * sp)) return false;
                }
            }
            return true;
        };
        parallel_for(sm.size(), [&](std::size_t i) {
            const double top = sm[i].reach;
            auto passes = [&](double s, double* worst) {
                double w = 1;
                for (int k = 1; k <= opt.depth_checks; ++k) {
                    const double ss = s * k / opt.depth_checks;
                    const double nrm = fc.drho_norm(bi, i, ss);
                    w = std::max(w, nrm);
                    if (!(nrm <= 1 + opt.eps) || !tip_ok(i, ss)) return false;
                }
                if (worst) *worst = w;
                return true;
            };
            double worst = 1;
            if (top > 0 && passes(top, &worst)) {
                sm[i].s0 = top;
            } else {
                double lo = 0, hi = top;
                for (int it = 0; it < opt.bisect; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    double w = 1;
                    if (passes(mid, &w)) {
                        lo = mid;
                        worst = w;
                    } else {
                        hi = mid;
                    }
                }
                sm[i].s0 = lo;
            }
            sm[i].max_drho = worst;
        });
        std::vector<double> us, ss;
        for (const auto& s : sm) {
            if (!(s.s0 > 0))
                throw NumericGuard("fermi collar: no positive depth passes at boundary sample u = " + std::to_string(s.u));
            us.push_back(s.u);
            ss.push_back(s.s0);
        }
        fc.s0_interp_.emplace_back(us, ss, per);
        const double top = *std::max_element(ss.begin(), ss.end());
        double depth = 0;
        for (std::size_t i = 0; i < sm.size(); ++i)
            depth = std::max(depth, N.s_of(N.collars[b], fc.table_point(static_cast<int>(b), i, top)));
        fc.coord_depth.push_back(depth);
    }
    return fc;
}

// ---- Lipschitz audit ------------------------------------------------------------

struct LipschitzAudit {
    std::vector<double> ratios;  // L_{g_M}(ρ∘γ) / L_{g̃}(γ) per path
    double max_ratio = 0;
    double bound = 0;            // (1 + eps)(1 + tau)
    bool passed = false;
};

inline LipschitzAudit lipschitz_audit(const FermiCollar& fc, const std::vector<SampledPath>& paths, double tau = 0.02) {
    LipschitzAudit a;
    a.bound = (1 + fc.eps()) * (1 + tau);
    const AtlasMetric gM = fc.N->m_metric();
    a.ratios.resize(paths.size());
    parallel_for(paths.size(), [&](std::size_t k) {
        SampledPath img;
        for (std::size_t i = 0; i < paths[k].size(); ++i) img.push(paths[k].t[i], fc.project_rho(paths[k].pts[i]));
        const double lm = riemannian_length(img, *fc.N->atlas, gM);
        const double lt = riemannian_length(paths[k], *fc.N->atlas, fc.g);
        a.ratios[k] = lm / lt;
    });
    for (double r : a.ratios) a.max_ratio = std::max(a.max_ratio, r);
    a.passed = a.max_ratio <= a.bound;
    return a;
}

/// Deterministic audit paths through the collar: along the face at fixed fractions of s0,
/// across the interface from M into 𝒳_Q, and slanted.
inline std::vector<SampledPath> collar_audit_paths(const FermiCollar& fc, int points = 48) {
    std::vector<SampledPath> out;
    for (std::size_t b = 0; b < fc.samples.size(); ++b) {
        const auto& sm = fc.samples[b];
        const int bi = static_cast<int>(b);
        const int chart = fc.N->collars[b].chart;
        const double u0 = sm.front().u, u1 = sm.back().u;
        const double len = u1 - u0;
        auto make = [&](auto&& uf, auto&& sf) {
            SampledPath p;
            for (int i = 0; i <= points; ++i) {
                const double t = static_cast<double>(i) / points;
                const double u = uf(t);
                const double s = sf(u, t);
                p.push(t, {chart, fc.collar_domain(bi).wrap(fc.exp_perp(bi, u, s).first), -1});
            }
            return p;
        };
        for (double f : {0.25, 0.5, 0.75, 0.98}) {
            const double ua = u0 + 0.1 * len, ub = u0 + 0.35 * len;
            out.push_back(make([&](double t) { return ua + t * (ub - ua); }, [&](double u, double) { return f * fc.s0(bi, u); }));
        }
        const double uc = u0 + 0.6 * len;
        out.push_back(make([&](double) { return uc; }, [&](double u, double t) { return (-0.5 + 1.48 * t) * fc.s0(bi, u); }));
        out.push_back(make([&](double t) { return uc + 0.1 * len * t; },
                           [&](double u, double t) { return (-0.5 + 1.48 * t) * fc.s0(bi, u); }));
    }
    return out;
}

/// Audit table rows: component, face parameter, s0, largest sampled ‖dρ‖.
inline std::string collar_csv(const FermiCollar& fc) {
    CsvWriter w({"component", "u", "s0", "max_drho"});
    for (const auto& sm : fc.samples)
        for (const auto& s : sm) {
            w.cell(s.component).cell(s.u).cell(s.s0).cell(s.max_drho);
            w.end_row();
        }
    return w.str();
}

}  // namespace rext

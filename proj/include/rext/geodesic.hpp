#pragma once
// Christoffel symbols, geodesic shooting across charts, Gaussian curvature, scalar Riccati.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "atlas.hpp"
#include "lengthspace.hpp"

namespace rext {

/// Runs f(0..n-1) on up to hardware_concurrency threads; each index writes only its own slot.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Γ[k](i, j) = Γ^k_ij.
using Christoffel = std::vector<Mat>;

namespace detail {

inline Mat checked_inverse(const Mat& g, const char* who) {
    const double lam = min_eigenvalue(g);
    if (!(lam > 0) || !g.allFinite()) throw NumericGuard(std::string(who) + ": metric is singular or indefinite");
    return g.inverse();
}

// T[s](i, k) = ∂_i g_sk + ∂_k g_si − ∂_s g_ik
inline std::vector<Mat> lowered_symbols(const std::vector<Mat>& dg, int m) {
    std::vector<Mat> T(static_cast<std::size_t>(m), Mat(m, m));
    for (int s = 0; s < m; ++s)
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < m; ++k)
                T[static_cast<std::size_t>(s)](i, k) = dg[static_cast<std::size_t>(i)](s, k) +
                                                       dg[static_cast<std::size_t>(k)](s, i) -
                                                       dg[static_cast<std::size_t>(s)](i, k);
    return T;
}

}  // namespace detail

inline Christoffel christoffel(const MetricExpr& g, const Vec& p) {
    const int m = g.dim();
    const Mat gi = detail::checked_inverse(g.value(p), "christoffel");
    const auto T = detail::lowered_symbols(g.first(as_span(p)), m);
    Christoffel G(static_cast<std::size_t>(m), Mat::Zero(m, m));
    for (int k = 0; k < m; ++k)
        for (int s = 0; s < m; ++s) G[static_cast<std::size_t>(k)] += 0.5 * gi(k, s) * T[static_cast<std::size_t>(s)];
    return G;
}

/// Gaussian curvature (sectional curvature of the x1-x2 plane) from exact first and second
/// derivatives of the metric.
inline double gaussian_curvature(const MetricExpr& g, const Vec& p) {
    const int m = g.dim();
    if (m < 2) throw SpecError("gaussian_curvature: needs dimension >= 2");
    const Mat gv = g.value(p);
    const Mat gi = detail::checked_inverse(gv, "gaussian_curvature");
    const auto d1 = g.first(as_span(p));
    const auto d2 = g.second(as_span(p));
    const auto T = detail::lowered_symbols(d1, m);
    Christoffel G(static_cast<std::size_t>(m), Mat::Zero(m, m));
    for (int k = 0; k < m; ++k)
        for (int s = 0; s < m; ++s) G[static_cast<std::size_t>(k)] += 0.5 * gi(k, s) * T[static_cast<std::size_t>(s)];
    // ∂_j Γ^l_ik = ½ ∂_j g^{ls} T_sik + ½ g^{ls} ∂_j T_sik, with ∂_j g⁻¹ = −g⁻¹ (∂_j g) g⁻¹
    auto dGamma = [&](int j, int l, int i, int k) {
        const Mat dgi = -gi * d1[static_cast<std::size_t>(j)] * gi;
        double acc = 0;
        for (int s = 0; s < m; ++s) {
            auto dd = [&](int a, int b, int c, int e) {  // ∂_a ∂_b g_ce
                return d2[static_cast<std::size_t>(a * m + b)](c, e);
            };
            const double dT = dd(j, i, s, k) + dd(j, k, s, i) - dd(j, s, i, k);
            acc += 0.5 * dgi(l, s) * T[static_cast<std::size_t>(s)](i, k) + 0.5 * gi(l, s) * dT;
        }
        return acc;
    };
    // R^l_ijk = ∂_j Γ^l_ik − ∂_k Γ^l_ij + Γ^l_jn Γ^n_ik − Γ^l_kn Γ^n_ij, and R_1212 = g_1l R^l_212
    auto R = [&](int l, int i, int j, int k) {
        double r = dGamma(j, l, i, k) - dGamma(k, l, i, j);
        for (int n = 0; n < m; ++n)
            r += G[static_cast<std::size_t>(l)](j, n) * G[static_cast<std::size_t>(n)](i, k) -
                 G[static_cast<std::size_t>(l)](k, n) * G[static_cast<std::size_t>(n)](i, j);
        return r;
    };
    double r1212 = 0;
    for (int l = 0; l < m; ++l) r1212 += gv(0, l) * R(l, 1, 0, 1);
    const double area = gv(0, 0) * gv(1, 1) - gv(0, 1) * gv(0, 1);
    return r1212 / area;
}

// ---- geodesics --------------------------------------------------------------

struct GeodesicState {
    int chart = 0;
    Vec x, v;
    double arc = 0.0;
};

struct GeodesicRun {
    std::vector<GeodesicState> states;  // one per step, states.front() is the start
    bool boundary_hit = false;          // left every chart before reaching T
    GeodesicState last() const { return states.back(); }
    double arc() const { return states.back().arc; }

    SampledPath path() const {
        SampledPath p;
        for (const auto& s : states) p.push(s.arc, {s.chart, s.x, -1});
        return p;
    }
};

inline double speed(const MetricExpr& g, const Vec& x, const Vec& v) { return std::sqrt(v.dot(g.value(x) * v)); }

namespace detail {

inline Vec geodesic_accel(const MetricExpr& g, const Vec& x, const Vec& v) {
    const auto G = christoffel(g, x);
    Vec a(x.size());
    for (int k = 0; k < x.size(); ++k) a[k] = -v.dot(G[static_cast<std::size_t>(k)] * v);
    return a;
}

/// One RK4 step in a chart. nullopt when a stage leaves the chart domain or hits a
/// non-finite coefficient.
inline std::optional<std::pair<Vec, Vec>> rk4_step(const MetricExpr& g, const Domain& dom, const Vec& x, const Vec& v,
                                                    double dt) {
    try {
        auto inside = [&](const Vec& y) { return dom.contains(dom.wrap(y), 1e-12); };
        const Vec a1 = geodesic_accel(g, x, v);
        const Vec x2 = x + 0.5 * dt * v, v2 = v + 0.5 * dt * a1;
        if (!inside(x2)) return std::nullopt;
        const Vec a2 = geodesic_accel(g, x2, v2);
        const Vec x3 = x + 0.5 * dt * v2, v3 = v + 0.5 * dt * a2;
        if (!inside(x3)) return std::nullopt;
        const Vec a3 = geodesic_accel(g, x3, v3);
        const Vec x4 = x + dt * v3, v4 = v + dt * a3;
        if (!inside(x4)) return std::nullopt;
        const Vec a4 = geodesic_accel(g, x4, v4);
        Vec xn = x + dt / 6.0 * (v + 2 * v2 + 2 * v3 + v4);
        Vec vn = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4);
        if (!inside(xn)) return std::nullopt;
        return std::make_pair(dom.wrap(xn), vn);
    } catch (const DomainError&) {
        return std::nullopt;
    } catch (const NumericGuard&) {
        return std::nullopt;
    }
}

/// Candidate charts containing the state's point, current chart first, then by index.
inline std::vector<std::pair<int, std::pair<Vec, Vec>>> chart_images(const Atlas& atlas, const AtlasMetric& g,
                                                                     const GeodesicState& s) {
    std::vector<std::pair<int, std::pair<Vec, Vec>>> out;
    for (std::size_t c = 0; c < atlas.charts.size(); ++c) {
        const int ci = static_cast<int>(c);
        if (ci == s.chart || !g.defined_on(ci)) continue;
        const TransitionMap* t = atlas.transition(s.chart, ci);
        if (!t) continue;
        auto y = t->apply(s.x, atlas.charts[c].domain, 1e-12);
        if (!y) continue;
        try {
            const Vec w = t->jacobian(s.x) * s.v;
            if (w.allFinite()) out.push_back({ci, {*y, w}});
        } catch (const DomainError&) {
        }
    }
    return out;
}

}  // namespace detail

/// Unit-speed geodesic of length T by fixed-step RK4. When a step would leave the current
/// chart the state is handed to another chart containing it; if none can continue the
/// run stops with boundary_hit set (the last state is where coverage ran out).
inline GeodesicRun shoot_geodesic(const Atlas& atlas, const AtlasMetric& g, GeodesicState start, double T,
                                  double step) {
    if (!(step > 0) || !(T >= 0)) throw SpecError("shoot_geodesic: need T >= 0 and step > 0");
    if (T > 0 && step > T / 10 * (1 + 1e-12)) throw SpecError("shoot_geodesic: step must be at most T/10");
    const MetricExpr& g0 = g.at(start.chart);
    const double sp = speed(g0, start.x, start.v);
    if (std::fabs(sp - 1) > 1e-9) throw SpecError("shoot_geodesic: start velocity must have unit speed");
    GeodesicRun run;
    run.states.push_back(start);
    const long n = T > 0 ? static_cast<long>(std::ceil(T / step - 1e-9)) : 0;
    const double dt = n > 0 ? T / static_cast<double>(n) : 0;
    GeodesicState cur = start;
    for (long i = 0; i < n; ++i) {
        const auto& dom = atlas.charts[static_cast<std::size_t>(cur.chart)].domain;
        auto next = detail::rk4_step(g.at(cur.chart), dom, cur.x, cur.v, dt);
        if (!next) {
            for (auto& [ci, xv] : detail::chart_images(atlas, g, cur)) {
                next = detail::rk4_step(g.at(ci), atlas.charts[static_cast<std::size_t>(ci)].domain, xv.first, xv.second, dt);
                if (next) {
                    cur.chart = ci;
                    break;
                }
            }
        }
        if (!next) {
            run.boundary_hit = true;
            return run;
        }
        cur.x = next->first;
        cur.v = next->second;
        cur.arc = static_cast<double>(i + 1) * dt;
        run.states.push_back(cur);
    }
    return run;
}

/// Rescales v to unit g-speed.
inline Vec unit(const MetricExpr& g, const Vec& x, const Vec& v) { return v / speed(g, x, v); }

// ---- Riccati ------------------------------------------------------------------

struct RiccatiResult {
    double lambda = 0;
    bool blew_up = false;
    double blowup_time = kInf;
    std::vector<std::pair<double, double>> samples;  // (t, λ) at every accepted step
};

/// dλ/dt = λ² + K(t) by RK4. The step shrinks to keep |λ|·dt ≤ 0.1 so the blow-up is
/// tracked; |λ| > 1/step is reported as blow-up at the extrapolated pole t + 1/|λ|.
inline RiccatiResult riccati_evolve(double lambda0, const std::function<double(double)>& K, double T, double step) {
    if (!(step > 0) || !(T >= 0)) throw SpecError("riccati_evolve: need T >= 0 and step > 0");
    RiccatiResult r;
    double t = 0, lam = lambda0;
    r.samples.emplace_back(t, lam);
    auto f = [&](double tt, double l) { return l * l + K(tt); };
    while (t < T - 1e-15) {
        double dt = std::min(step, T - t);
        if (std::fabs(lam) * dt > 0.1) dt = 0.1 / std::fabs(lam);
        const double k1 = f(t, lam);
        const double k2 = f(t + 0.5 * dt, lam + 0.5 * dt * k1);
        const double k3 = f(t + 0.5 * dt, lam + 0.5 * dt * k2);
        const double k4 = f(t + dt, lam + dt * k3);
        lam += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += dt;
        if (!std::isfinite(lam) || std::fabs(lam) > 1.0 / step) {
            r.blew_up = true;
            r.blowup_time = std::isfinite(lam) ? t + 1.0 / std::fabs(lam) : t;
            r.lambda = lam;
            r.samples.emplace_back(t, lam);
            return r;
        }
        r.samples.emplace_back(t, lam);
    }
    r.lambda = lam;
    return r;
}

inline RiccatiResult riccati_evolve(double lambda0, double K, double T, double step) {
    return riccati_evolve(lambda0, [K](double) { return K; }, T, step);
}

}  // namespace rext

#pragma once
// Curvature bounds and boundary convexity carried from M into a thin collar of the extension.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "extend.hpp"
#include "geodesic.hpp"

namespace rext {

enum class Sense { Less, Greater };

inline const char* to_string(Sense s) { return s == Sense::Less ? "<" : ">"; }

struct CurvatureCollarOptions {
    double C = 0;
    Sense sense = Sense::Less;
    bool convexity = false;  // also require the parallel curves to keep the boundary's bending sign
    int depth_samples = 16;  // points per normal geodesic
    int halvings = 20;
    double riccati_step = 1e-3;
};

struct SignRecord {
    int component = 0;
    double u = 0;
    double lambda0 = 0;          // geodesic curvature of ∂M w.r.t. the outward normal
    double lambda_at_eps = 0;    // Riccati value at the verified depth
    double lambda_max_abs = 0;
    bool sign_kept = true;
};

struct CurvatureCollarReport {
    double C = 0;
    Sense sense = Sense::Less;
    double eps = 0;
    double k_min = kInf, k_max = -kInf;   // over the sampled collar up to eps
    double k_min_M = kInf, k_max_M = -kInf;
    double margin = 0;                    // smallest distance of a sampled K to the bound
    bool convexity_checked = false;
    std::vector<SignRecord> signs;
    std::vector<double> levels;                       // t values of the parallel curves
    std::vector<std::vector<Vec>> parallel_curves;    // (∂M)_t samples, collar chart coordinates
    std::string note;
};

namespace detail {

inline bool respects(double K, double C, Sense s) { return s == Sense::Less ? K < C : K > C; }

/// Geodesic curvature of the face curve at a boundary sample, sign taken against ν.
inline double boundary_bending(const FermiCollar& fc, int b, const FermiSample& s) {
    const Collar& c = fc.N->collars[static_cast<std::size_t>(b)];
    const MetricExpr& g = fc.g.at(c.chart);
    const int f = fc.face_axis(b);
    const auto G = christoffel(g, s.p0);
    const Mat gv = g.value(s.p0);
    Vec acc(2);
    for (int k = 0; k < 2; ++k) acc[k] = G[static_cast<std::size_t>(k)](f, f);
    return acc.dot(gv * s.nu) / gv(f, f);
}

}  // namespace detail

/// Largest depth ε ≤ min s0 (by halving) on which sampled curvature keeps the strict bound
/// along every normal geodesic on the Q side, and, optionally, on which the Riccati evolution
/// of the boundary's bending keeps its sign.
inline CurvatureCollarReport curvature_collar(const FermiCollar& fc, const Mesh& mesh, const CurvatureCollarOptions& opt) {
    CurvatureCollarReport rep;
    rep.C = opt.C;
    rep.sense = opt.sense;
    rep.convexity_checked = opt.convexity;
    rep.note = "dimension 2: sectional, Ricci and scalar bounds coincide with the Gaussian curvature; "
               "convexity and mean convexity are the same scalar check";
    const GluedManifold& N = *fc.N;
    const AtlasMetric gM = N.m_metric();
    for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
        const auto& vx = mesh.vertices[v];
        if (!(vx.flags & kInM) || !gM.defined_on(vx.chart)) continue;
        double K;
        try {
            K = gaussian_curvature(gM.at(vx.chart), vx.x);
        } catch (const DomainError&) {
            continue;  // on a degenerate chart edge; other charts cover the point
        }
        rep.k_min_M = std::min(rep.k_min_M, K);
        rep.k_max_M = std::max(rep.k_max_M, K);
        if (!detail::respects(K, opt.C, opt.sense))
            throw SpecError("curvature collar: bound K " + std::string(to_string(opt.sense)) + " " + fmt(opt.C) +
                            " already fails on M at vertex " + std::to_string(v) + " (K = " + fmt(K) + ")");
    }

    struct Trace {
        int b;
        std::size_t i;
        std::vector<double> t, K;
        double lambda0 = 0;
    };
    double top = kInf;
    for (const auto& sm : fc.samples)
        for (const auto& s : sm) top = std::min(top, s.s0);
    std::vector<Trace> traces;
    for (std::size_t b = 0; b < fc.samples.size(); ++b)
        for (std::size_t i = 0; i < fc.samples[b].size(); ++i) traces.push_back({static_cast<int>(b), i, {}, {}, 0});
    // curvature along every normal geodesic on a fine grid of [0, top]
    const int n = opt.depth_samples * 4;
    parallel_for(traces.size(), [&](std::size_t k) {
        Trace& tr = traces[k];
        const Collar& c = N.collars[static_cast<std::size_t>(tr.b)];
        const MetricExpr& g = fc.g.at(c.chart);
        const Domain& d = fc.collar_domain(tr.b);
        for (int j = 0; j <= n; ++j) {
            const double t = top * j / n;
            tr.t.push_back(t);
            tr.K.push_back(gaussian_curvature(g, d.wrap(fc.table_point(tr.b, tr.i, t))));
        }
        tr.lambda0 = detail::boundary_bending(fc, tr.b, fc.samples[static_cast<std::size_t>(tr.b)][tr.i]);
    });
    auto K_of = [&](const Trace& tr) {
        return [&tr](double t) {
            const double x = t / tr.t.back() * static_cast<double>(tr.t.size() - 1);
            const std::size_t j = std::min(static_cast<std::size_t>(x), tr.t.size() - 2);
            const double w = x - static_cast<double>(j);
            return (1 - w) * tr.K[j] + w * tr.K[j + 1];
        };
    };

    double eps = top;
    bool found = false;
    for (int h = 0; h <= opt.halvings && !found; ++h, eps *= 0.5) {
        bool ok = true;
        for (const auto& tr : traces) {
            for (std::size_t j = 0; j < tr.t.size() && ok; ++j)
                if (tr.t[j] <= eps * (1 + 1e-12)) ok = detail::respects(tr.K[j], opt.C, opt.sense);
            if (!ok) break;
            if (opt.convexity) {
                if (tr.lambda0 == 0) {
                    ok = false;
                    break;
                }
                const auto r = riccati_evolve(tr.lambda0, K_of(tr), eps, std::min(opt.riccati_step, eps / 10));
                ok = !r.blew_up && r.lambda * tr.lambda0 > 0;
                for (const auto& [t, l] : r.samples) ok = ok && l * tr.lambda0 > 0;
            }
            if (!ok) break;
        }
        if (ok) {
            found = true;
            rep.eps = eps;
        }
    }
    if (!found) throw NumericGuard("curvature collar: no positive depth keeps the bound at mesh scale");

    rep.margin = kInf;
    for (const auto& tr : traces) {
        for (std::size_t j = 0; j < tr.t.size(); ++j) {
            if (tr.t[j] > rep.eps * (1 + 1e-12)) break;
            rep.k_min = std::min(rep.k_min, tr.K[j]);
            rep.k_max = std::max(rep.k_max, tr.K[j]);
            rep.margin = std::min(rep.margin, std::fabs(tr.K[j] - opt.C));
        }
        SignRecord sr;
        sr.component = tr.b;
        sr.u = fc.samples[static_cast<std::size_t>(tr.b)][tr.i].u;
        sr.lambda0 = tr.lambda0;
        if (tr.lambda0 != 0) {
            const auto r = riccati_evolve(tr.lambda0, K_of(tr), rep.eps, std::min(opt.riccati_step, rep.eps / 10));
            sr.lambda_at_eps = r.lambda;
            sr.sign_kept = !r.blew_up;
            for (const auto& [t, l] : r.samples) {
                sr.lambda_max_abs = std::max(sr.lambda_max_abs, std::fabs(l));
                sr.sign_kept = sr.sign_kept && l * tr.lambda0 > 0;
            }
        } else {
            sr.sign_kept = false;
        }
        rep.signs.push_back(sr);
    }
    for (int k = 0; k <= 3; ++k) {
        const double t = rep.eps * k / 3;
        rep.levels.push_back(t);
        std::vector<Vec> curve;
        for (const auto& tr : traces) curve.push_back(fc.collar_domain(tr.b).wrap(fc.table_point(tr.b, tr.i, t)));
        rep.parallel_curves.push_back(std::move(curve));
    }
    return rep;
}

inline json to_json(const CurvatureCollarReport& r) {
    json j;
    j["bound"] = {{"C", jnum(r.C)}, {"sense", to_string(r.sense)}};
    j["eps"] = jnum(r.eps);
    j["K_collar"] = {{"min", jnum(r.k_min)}, {"max", jnum(r.k_max)}};
    j["K_M"] = {{"min", jnum(r.k_min_M)}, {"max", jnum(r.k_max_M)}};
    j["margin"] = jnum(r.margin);
    j["convexity_checked"] = r.convexity_checked;
    json signs = json::array();
    for (const auto& s : r.signs)
        signs.push_back({{"component", s.component}, {"u", jnum(s.u)}, {"lambda0", jnum(s.lambda0)},
                         {"lambda_eps", jnum(s.lambda_at_eps)}, {"sign_kept", s.sign_kept}});
    j["signs"] = signs;
    j["levels"] = r.levels;
    j["note"] = r.note;
    return j;
}

}  // namespace rext

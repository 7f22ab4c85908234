#pragma once
// Completing the extension: exhaustion, annulus components outside int P, the q1/q2
// certificates, the conformal factor, and the crossing-cost and three-case audits.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "exhaustion.hpp"
#include "graph.hpp"
#include "lengthspace.hpp"
#include "spec_io.hpp"

namespace rext {

// ---- exhaustion -----------------------------------------------------------------

struct Exhaustion {
    std::vector<double> dist;  // background distance to the base set
    double step = 1;
    std::vector<Mask> sets;    // N_0 ⊂ N_1 ⊂ …

    int levels() const { return static_cast<int>(sets.size()); }
    bool has(int j) const { return j >= 0 && j < levels(); }
    /// Membership with N_j = ∅ for j < 0 and N_j = everything past the last level.
    bool in(int j, int v) const {
        if (j < 0) return false;
        if (j >= levels()) return true;
        return sets[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)] != 0;
    }
};

/// N_j = {d(base, ·) ≤ (j + 1)·step} for j < levels, d the shortest-path distance of `tag`.
inline Exhaustion build_exhaustion(const Mesh& mesh, const std::string& tag, std::span<const int> base, double step,
                                   int levels) {
    if (!(step > 0)) throw SpecError("exhaustion: step must be positive");
    if (base.empty()) throw SpecError("exhaustion: empty base set");
    if (levels < 1) throw SpecError("exhaustion: need at least one level");
    Exhaustion ex;
    ex.step = step;
    ex.dist = dijkstra(mesh, mesh.lengths(tag), base).dist;
    std::size_t prev = 0;
    for (int j = 0; j < levels; ++j) {
        const double r = (j + 1) * step * (1 + 1e-9);
        Mask m(mesh.num_vertices(), 0);
        std::size_t count = 0;
        for (std::size_t v = 0; v < m.size(); ++v)
            if (ex.dist[v] <= r) {
                m[v] = 1;
                ++count;
            }
        if (j > 0 && count <= prev)
            throw SpecError("exhaustion: N_" + std::to_string(j) + " = N_" + std::to_string(j - 1) +
                            " (step too small or window exhausted)");
        prev = count;
        ex.sets.push_back(std::move(m));
    }
    return ex;
}

// ---- annulus components --------------------------------------------------------

struct PRegion {
    Mask P, interior, boundary;  // P, int P, ∂P = P \ int P
};

inline PRegion p_region(const Mesh& mesh, Mask P) {
    PRegion r;
    const std::size_t n = mesh.num_vertices();
    r.interior.assign(n, 0);
    r.boundary.assign(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
        if (!P[v]) continue;
        bool inner = true;
        for (const auto& nb : mesh.neighbors(static_cast<int>(v))) inner = inner && P[static_cast<std::size_t>(nb.vertex)];
        (inner ? r.interior : r.boundary)[v] = 1;
    }
    r.P = std::move(P);
    return r;
}

struct AnnulusComponent {
    int j = 0;
    int id = 0;                 // a (or b) within level j
    std::vector<int> vertices;
    std::vector<int> lower;     // vertices in N_j (the inner face)
    std::vector<int> upper;     // vertices on the outer layer of N_{j+1}
    std::vector<int> trace;     // vertices on ∂P
};

struct AnnulusComponents {
    PRegion P;
    std::vector<AnnulusComponent> A;  // components N_{j,a}
    std::vector<AnnulusComponent> B;  // components Ĥ_{j,b}
    std::vector<int> A_index_of_B;    // for each A, the B of the same j containing it
    int jmin = -1, jmax = -1;

    std::size_t count_A(int j) const {
        return static_cast<std::size_t>(std::count_if(A.begin(), A.end(), [j](const auto& c) { return c.j == j; }));
    }
    std::size_t count_B(int j) const {
        return static_cast<std::size_t>(std::count_if(B.begin(), B.end(), [j](const auto& c) { return c.j == j; }));
    }
};

namespace detail {

/// X ∪ {v ∈ inner : v adjacent to X}: closure of an exhaustion shell in the mesh.
inline Mask shell_closure(const Mesh& mesh, const Mask& X, const std::function<bool(int)>& inner) {
    Mask out = X;
    for (std::size_t v = 0; v < X.size(); ++v) {
        if (!X[v]) continue;
        for (const auto& nb : mesh.neighbors(static_cast<int>(v)))
            if (inner(nb.vertex)) out[static_cast<std::size_t>(nb.vertex)] = 1;
    }
    return out;
}

inline bool on_outer_layer(const Mesh& mesh, const Exhaustion& ex, int j, int v) {
    if (!ex.in(j, v)) return false;
    for (const auto& nb : mesh.neighbors(v))
        if (!ex.in(j, nb.vertex)) return true;
    return false;
}

inline std::vector<AnnulusComponent> shell_components(const Mesh& mesh, const Exhaustion& ex, const PRegion& P, int j,
                                                      int lo, int hi) {
    const std::size_t n = mesh.num_vertices();
    Mask X(n, 0);
    for (std::size_t v = 0; v < n; ++v) X[v] = ex.in(hi, static_cast<int>(v)) && !ex.in(lo, static_cast<int>(v));
    Mask cl = shell_closure(mesh, X, [&](int v) { return ex.in(lo, v); });
    for (std::size_t v = 0; v < n; ++v) cl[v] = cl[v] && !P.interior[v];
    auto [label, count] = components(mesh, cl);
    std::vector<AnnulusComponent> out(static_cast<std::size_t>(count));
    for (int c = 0; c < count; ++c) {
        out[static_cast<std::size_t>(c)].j = j;
        out[static_cast<std::size_t>(c)].id = c;
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (label[v] < 0) continue;
        auto& c = out[static_cast<std::size_t>(label[v])];
        const int vi = static_cast<int>(v);
        c.vertices.push_back(vi);
        if (ex.in(j, vi)) c.lower.push_back(vi);
        if (ex.has(j + 1) && on_outer_layer(mesh, ex, j + 1, vi)) c.upper.push_back(vi);
        if (P.boundary[v]) c.trace.push_back(vi);
    }
    return out;
}

}  // namespace detail

/// Components of (N \ int P) ∩ closure(N_{j+1} \ N_j) and of (N \ int P) ∩ closure(N_{j+2} \ N_{j−1})
/// for j = −1 … levels − 2.
inline AnnulusComponents decompose_annuli(const Mesh& mesh, const Exhaustion& ex, const Mask& P) {
    AnnulusComponents ann;
    ann.P = p_region(mesh, P);
    ann.jmin = -1;
    ann.jmax = ex.levels() - 2;
    for (int j = ann.jmin; j <= ann.jmax; ++j) {
        for (auto& c : detail::shell_components(mesh, ex, ann.P, j, j, j + 1)) ann.A.push_back(std::move(c));
        for (auto& c : detail::shell_components(mesh, ex, ann.P, j, j - 1, j + 2)) ann.B.push_back(std::move(c));
    }
    // every N_{j,a} lies in some Ĥ_{j,b}
    for (const auto& a : ann.A) {
        int found = -1;
        for (std::size_t b = 0; b < ann.B.size() && found < 0; ++b) {
            if (ann.B[b].j != a.j) continue;
            if (std::binary_search(ann.B[b].vertices.begin(), ann.B[b].vertices.end(), a.vertices.front()))
                found = static_cast<int>(b);
        }
        ann.A_index_of_B.push_back(found);
    }
    return ann;
}

// ---- certificates ---------------------------------------------------------------

/// Shortest in-component distance from the level set ∂N_j to ∂N_{j+1}; the crossings of the first
/// and last edge are located by linear interpolation of the exhaustion distance. +∞ when the
/// component does not span the shell.
inline double compute_q1(const Mesh& mesh, const AnnulusComponent& c, const std::vector<double>& len, const Exhaustion& ex) {
    if (c.lower.empty() || c.upper.empty()) return kInf;
    const std::size_t n = mesh.num_vertices();
    const int j = c.j;
    const double r0 = (j + 1) * ex.step, r1 = (j + 2) * ex.step;
    Mask shell(n, 0);
    for (int v : c.vertices) shell[static_cast<std::size_t>(v)] = !ex.in(j, v);
    std::vector<std::pair<int, double>> seeds;
    for (int v : c.lower)
        for (const auto& nb : mesh.neighbors(v)) {
            if (!shell[static_cast<std::size_t>(nb.vertex)]) continue;
            const double dv = ex.dist[static_cast<std::size_t>(v)], dw = ex.dist[static_cast<std::size_t>(nb.vertex)];
            const double t = dw > dv ? std::clamp((r0 - dv) / (dw - dv), 0.0, 1.0) : 0.0;
            seeds.emplace_back(nb.vertex, (1 - t) * len[static_cast<std::size_t>(nb.edge)]);
        }
    const auto sp = dijkstra_seeded(mesh, len, seeds, shell);
    double best = kInf;
    for (int u : c.upper) {
        const auto uu = static_cast<std::size_t>(u);
        if (!std::isfinite(sp.dist[uu])) continue;
        for (const auto& nb : mesh.neighbors(u)) {
            if (ex.in(j + 1, nb.vertex)) continue;
            const double du = ex.dist[uu], dx = ex.dist[static_cast<std::size_t>(nb.vertex)];
            const double t = dx > du ? std::clamp((r1 - du) / (dx - du), 0.0, 1.0) : 0.0;
            best = std::min(best, sp.dist[uu] + t * len[static_cast<std::size_t>(nb.edge)]);
        }
    }
    return best;
}

struct Q2Result {
    double value = 1;
    std::string mode = "vacuous";  // vacuous, exact or sampled
    std::size_t pairs = 0;
};

/// min over ∂P-trace pairs of d̃_Ĥ(x, y) / d_P(x, y).
inline Q2Result compute_q2(const Mesh& mesh, const AnnulusComponent& c, const std::vector<double>& len,
                           const Mask& P, const std::vector<double>& len_P, std::size_t pair_cap = 10000) {
    Q2Result r;
    if (c.trace.size() < 2) return r;
    const std::size_t n = mesh.num_vertices();
    const Mask hm = mask_from(c.vertices, n);
    std::vector<int> chosen;
    const std::size_t all_pairs = c.trace.size() * (c.trace.size() - 1) / 2;
    if (all_pairs <= pair_cap) {
        chosen = c.trace;
        r.mode = "exact";
    } else {
        // farthest-point sample of k vertices with k(k−1)/2 ≤ cap
        std::size_t k = 2;
        while ((k + 1) * k / 2 <= pair_cap) ++k;
        std::vector<double> mind(n, kInf);
        int next = c.trace.front();
        for (std::size_t s = 0; s < k; ++s) {
            chosen.push_back(next);
            const auto d = dijkstra(mesh, len, next, hm).dist;
            double far = -1;
            for (int v : c.trace) {
                const auto uv = static_cast<std::size_t>(v);
                mind[uv] = std::min(mind[uv], d[uv]);
                if (mind[uv] > far) {
                    far = mind[uv];
                    next = v;
                }
            }
            if (far <= 0) break;
        }
        r.mode = "sampled";
    }
    std::vector<double> best(chosen.size(), kInf);
    std::vector<std::size_t> npairs(chosen.size(), 0);
    parallel_for(chosen.size(), [&](std::size_t i) {
        const auto dh = dijkstra(mesh, len, chosen[i], hm).dist;
        const auto dp = dijkstra(mesh, len_P, chosen[i], P).dist;
        for (std::size_t k = i + 1; k < chosen.size(); ++k) {
            const auto y = static_cast<std::size_t>(chosen[k]);
            if (!std::isfinite(dp[y]) || !(dp[y] > 0)) continue;
            best[i] = std::min(best[i], dh[y] / dp[y]);
            ++npairs[i];
        }
    });
    r.value = kInf;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        r.value = std::min(r.value, best[i]);
        r.pairs += npairs[i];
    }
    if (r.pairs == 0) {
        r.value = 1;
        r.mode = "vacuous";
        return r;
    }
    if (!(r.value > 1e-6))
        throw NumericGuard("q2 guard: ratio " + fmt(r.value) + " for component (" + std::to_string(c.j) + ", " +
                           std::to_string(c.id) + "); mesh too coarse or degenerate geometry");
    return r;
}

struct Certificates {
    std::vector<double> q1;    // per A component
    std::vector<Q2Result> q2;  // per B component
};

inline Certificates compute_certificates(const Mesh& mesh, const Exhaustion& ex, const AnnulusComponents& ann,
                                         const std::string& tag, const std::string& p_tag) {
    Certificates c;
    const auto& len = mesh.lengths(tag);
    const auto& lp = mesh.lengths(p_tag);
    c.q1.resize(ann.A.size());
    c.q2.resize(ann.B.size());
    parallel_for(ann.A.size(), [&](std::size_t k) { c.q1[k] = compute_q1(mesh, ann.A[k], len, ex); });
    for (std::size_t k = 0; k < ann.B.size(); ++k) c.q2[k] = compute_q2(mesh, ann.B[k], len, ann.P.P, lp);
    return c;
}

inline std::string certificates_csv(const AnnulusComponents& ann, const Certificates& c) {
    CsvWriter w({"j", "component", "kind", "value", "sampling"});
    for (std::size_t k = 0; k < ann.A.size(); ++k) {
        w.cell(ann.A[k].j).cell(ann.A[k].id).cell("q1").cell(std::isfinite(c.q1[k]) ? fmt(c.q1[k]) : "+inf-no-crossing").cell("exact");
        w.end_row();
    }
    for (std::size_t k = 0; k < ann.B.size(); ++k) {
        w.cell(ann.B[k].j).cell(ann.B[k].id).cell("q2").cell(c.q2[k].value).cell(c.q2[k].mode);
        w.end_row();
    }
    return w.str();
}

// ---- conformal factor -----------------------------------------------------------

struct Bump {
    char kind = 'a';       // 'a' for μ_{j,a}, 'b' for ν_{j,b}
    int j = 0, id = 0;
    double weight = 0;     // max(0, −ln q)
    double radius = 0;     // decay length from the plateau (background metric)
};

struct ConformalFactorField {
    std::vector<double> exponent;  // E with g_N = e^E g̃
    std::vector<Bump> bumps;
    int max_active = 0;            // largest number of bumps nonzero at one vertex

    double factor(int v) const { return std::exp(exponent[static_cast<std::size_t>(v)]); }
};

/// E = 2 Σ [max(0, −ln q1) μ_{j,a} + max(0, −ln q2) ν_{j,b}], bumps S(1 − d/R) of the background
/// distance d to their plateau; registers e^E g̃ as `out_tag`. Each bump vanishes on M, on N_{j−1}
/// (N_{j−2} for ν) and outside N_{j+2} (N_{j+3} for ν).
inline ConformalFactorField conformal_metric(Mesh& mesh, const std::string& base_tag, const std::string& coord_tag,
                                             const Exhaustion& ex, const AnnulusComponents& ann, const Certificates& cert,
                                             const std::string& out_tag = "g_N") {
    const std::size_t n = mesh.num_vertices();
    const auto& cl = mesh.lengths(coord_tag);
    ConformalFactorField f;
    f.exponent.assign(n, 0.0);
    std::vector<int> active(n, 0);
    auto add = [&](const AnnulusComponent& c, char kind, double q, int below, int above) {
        // certificates within rounding of 1 need no bump
        const double w = std::isfinite(q) && q < 1 - 1e-9 ? -std::log(q) : 0.0;
        if (w == 0) return;
        const auto d = dijkstra(mesh, cl, c.vertices).dist;
        double gap = kInf;
        for (std::size_t v = 0; v < n; ++v) {
            const int vi = static_cast<int>(v);
            const bool forbidden = (mesh.vertices[v].flags & kInM) || ex.in(below, vi) || (above < ex.levels() && !ex.in(above, vi));
            if (forbidden) gap = std::min(gap, d[v]);
        }
        if (!(gap > 0))
            throw SpecError(std::string("conformal factor: bump ") + kind + "(" + std::to_string(c.j) + ", " +
                            std::to_string(c.id) + ") cannot avoid M, N_{j-1} and the outside of N_{j+2}");
        const double R = std::isfinite(gap) ? 0.5 * gap : ex.step;
        f.bumps.push_back({kind, c.j, c.id, w, R});
        for (std::size_t v = 0; v < n; ++v) {
            if (!(d[v] < R)) continue;
            const double mu = smooth_step(1 - d[v] / R);
            if (mu <= 0) continue;
            const int vi = static_cast<int>(v);
            if ((mesh.vertices[v].flags & kInM) || ex.in(below, vi) || (above < ex.levels() && !ex.in(above, vi)))
                throw SpecError("conformal factor: bump support violates its containment at vertex " + std::to_string(v));
            f.exponent[v] += 2 * w * mu;
            ++active[v];
        }
        for (int v : c.vertices)
            if (f.exponent[static_cast<std::size_t>(v)] < 2 * w * (1 - 1e-12))
                throw NumericGuard("conformal factor: plateau below its certificate at vertex " + std::to_string(v));
    };
    for (std::size_t k = 0; k < ann.A.size(); ++k) add(ann.A[k], 'a', cert.q1[k], ann.A[k].j - 1, ann.A[k].j + 2);
    for (std::size_t k = 0; k < ann.B.size(); ++k) add(ann.B[k], 'b', cert.q2[k].value, ann.B[k].j - 2, ann.B[k].j + 3);
    for (int a : active) f.max_active = std::max(f.max_active, a);
    for (std::size_t v = 0; v < n; ++v)
        if ((mesh.vertices[v].flags & kInM) && f.exponent[v] != 0) throw NumericGuard("conformal factor differs from 1 on M");
    mesh.register_conformal(out_tag, base_tag, f.exponent);
    return f;
}

/// Factor ≡ 1: the undeformed metric under the conformal tag (the negative control).
inline void register_unit_factor(Mesh& mesh, const std::string& base_tag, const std::string& out_tag = "g_N") {
    mesh.register_conformal(out_tag, base_tag, std::vector<double>(mesh.num_vertices(), 0.0));
}

// ---- crossing-cost audit --------------------------------------------------------

struct CrossingRow {
    char kind = 'a';
    int j = 0, id = 0;
    std::size_t pairs = 0;
    double worst = kInf;       // (a): shortest length; (b): smallest ratio to d_P
    int worst_x = -1, worst_y = -1;
    bool passed = true;
};

struct CrossingAudit {
    double tau = 0.05;
    std::vector<CrossingRow> rows;
    std::size_t pairs_a = 0, pairs_b = 0;
    bool passed = true;
    std::vector<std::string> failures;
};

/// (a) every sampled ∂N_j → ∂N_{j+1} pair of a spanning N_{j,a} costs ≥ 1 − τ under g_N inside the
/// component; (b) every sampled ∂_P Ĥ pair costs ≥ (1 − τ)·d_P inside Ĥ.
inline CrossingAudit verify_crossing_cost(const Mesh& mesh, const std::string& gN, const std::string& p_tag,
                                          const AnnulusComponents& ann, int trials, std::size_t b_pairs = 10000,
                                          std::uint64_t seed = 1, double tau = 0.05) {
    CrossingAudit au;
    au.tau = tau;
    const std::size_t n = mesh.num_vertices();
    const auto& len = mesh.lengths(gN);
    const auto& lp = mesh.lengths(p_tag);
    std::vector<CrossingRow> rows_a(ann.A.size());
    parallel_for(ann.A.size(), [&](std::size_t k) {
        const auto& c = ann.A[k];
        CrossingRow& row = rows_a[k];
        row.kind = 'a';
        row.j = c.j;
        row.id = c.id;
        if (c.lower.empty() || c.upper.empty()) return;
        std::mt19937_64 rng(task_seed(seed, "a:" + std::to_string(c.j) + ":" + std::to_string(c.id)));
        const Mask m = mask_from(c.vertices, n);
        for (int t = 0; t < trials; ++t) {
            const int x = c.lower[static_cast<std::size_t>(rng() % c.lower.size())];
            const int y = c.upper[static_cast<std::size_t>(rng() % c.upper.size())];
            const double d = dijkstra(mesh, len, x, m).dist[static_cast<std::size_t>(y)];
            ++row.pairs;
            if (d < row.worst) {
                row.worst = d;
                row.worst_x = x;
                row.worst_y = y;
            }
        }
        row.passed = row.worst >= 1 - tau;
    });
    // (b): share the pair budget across components with a trace
    std::size_t total = 0;
    for (const auto& c : ann.B) total += c.trace.size() * (c.trace.size() > 1 ? c.trace.size() - 1 : 0) / 2;
    std::vector<CrossingRow> rows_b;
    for (const auto& c : ann.B) {
        CrossingRow row;
        row.kind = 'b';
        row.j = c.j;
        row.id = c.id;
        const std::size_t all = c.trace.size() * (c.trace.size() > 1 ? c.trace.size() - 1 : 0) / 2;
        if (all == 0) {
            rows_b.push_back(row);
            continue;
        }
        const Mask hm = mask_from(c.vertices, n);
        std::vector<std::pair<int, int>> pairs;
        if (total <= b_pairs) {
            for (std::size_t i = 0; i < c.trace.size(); ++i)
                for (std::size_t k = i + 1; k < c.trace.size(); ++k) pairs.emplace_back(c.trace[i], c.trace[k]);
        } else {
            const std::size_t share = std::max<std::size_t>(1, b_pairs * all / total);
            std::mt19937_64 rng(task_seed(seed, "b:" + std::to_string(c.j) + ":" + std::to_string(c.id)));
            for (std::size_t t = 0; t < share; ++t) {
                const int x = c.trace[static_cast<std::size_t>(rng() % c.trace.size())];
                int y = c.trace[static_cast<std::size_t>(rng() % c.trace.size())];
                if (x == y) y = c.trace[(static_cast<std::size_t>(std::find(c.trace.begin(), c.trace.end(), x) - c.trace.begin()) + 1) % c.trace.size()];
                pairs.emplace_back(std::min(x, y), std::max(x, y));
            }
            std::sort(pairs.begin(), pairs.end());
        }
        // group by source
        std::vector<int> sources;
        for (const auto& p : pairs)
            if (sources.empty() || sources.back() != p.first) sources.push_back(p.first);
        std::vector<CrossingRow> part(sources.size(), row);
        parallel_for(sources.size(), [&](std::size_t s) {
            const int x = sources[s];
            const auto dh = dijkstra(mesh, len, x, hm).dist;
            const auto dp = dijkstra(mesh, lp, x, ann.P.P).dist;
            auto it = std::lower_bound(pairs.begin(), pairs.end(), std::make_pair(x, -1));
            for (; it != pairs.end() && it->first == x; ++it) {
                const auto y = static_cast<std::size_t>(it->second);
                ++part[s].pairs;
                if (!std::isfinite(dp[y]) || !(dp[y] > 0)) continue;
                const double ratio = dh[y] / dp[y];
                if (ratio < part[s].worst) {
                    part[s].worst = ratio;
                    part[s].worst_x = x;
                    part[s].worst_y = it->second;
                }
            }
        });
        for (const auto& p : part) {
            row.pairs += p.pairs;
            if (p.worst < row.worst) {
                row.worst = p.worst;
                row.worst_x = p.worst_x;
                row.worst_y = p.worst_y;
            }
        }
        row.passed = row.worst >= 1 - tau;
        rows_b.push_back(row);
    }
    for (auto& r : rows_a) au.rows.push_back(r);
    for (auto& r : rows_b) au.rows.push_back(r);
    for (const auto& r : au.rows) {
        (r.kind == 'a' ? au.pairs_a : au.pairs_b) += r.pairs;
        if (!r.passed) {
            au.passed = false;
            au.failures.push_back(std::string("(") + r.kind + ") j=" + std::to_string(r.j) + " component " + std::to_string(r.id) +
                                  ": pair (" + std::to_string(r.worst_x) + ", " + std::to_string(r.worst_y) + ") value " + fmt(r.worst));
        }
    }
    return au;
}

inline std::string crossing_csv(const CrossingAudit& a) {
    CsvWriter w({"kind", "j", "component", "pairs", "worst", "x", "y", "passed"});
    for (const auto& r : a.rows) {
        w.cell(std::string(1, r.kind)).cell(r.j).cell(r.id).cell(r.pairs).cell(r.worst).cell(r.worst_x).cell(r.worst_y).cell(r.passed ? "1" : "0");
        w.end_row();
    }
    return w.str();
}

// ---- three-case certification ---------------------------------------------------

struct PathCase {
    std::string id;
    int kind = 0;                  // 1: tail outside int P; 2: tail in int P; 3: oscillating; 0: no tail
    double length_N = 0, length_P = 0;
    int annuli = 0;                // shells fully crossed by the tail (case 1)
    int excursions = 0;
    double worst_excursion = 0;    // max of d_P(ends) / L_{g_N}(excursion) (case 3)
    bool ok = true;
};

struct CompletenessCertificate {
    CompletenessReport report;
    std::vector<PathCase> cases;
    std::vector<double> min_exit;  // per level, under g_N
    bool passed = true;
    std::vector<std::string> inconclusive;
};

namespace detail {

inline double edge_length_between(const Mesh& mesh, const std::vector<double>& len, int a, int b) {
    double best = kInf;
    for (const auto& nb : mesh.neighbors(a))
        if (nb.vertex == b) best = std::min(best, len[static_cast<std::size_t>(nb.edge)]);
    return best;
}

}  // namespace detail

/// Classifies a vertex path after it leaves N_0 and checks the matching lower bound.
inline PathCase classify_path(const Mesh& mesh, const std::vector<int>& vs, const std::string& id,
                              const std::vector<double>& lenN, const std::vector<double>& lenP, const Exhaustion& ex,
                              const PRegion& P, double tau) {
    PathCase pc;
    pc.id = id;
    std::size_t start = vs.size();
    for (std::size_t i = 0; i < vs.size(); ++i)
        if (!ex.in(0, vs[i])) {
            start = i;
            break;
        }
    if (start >= vs.size()) return pc;
    bool any_in = false, any_out = false;
    for (std::size_t i = start; i < vs.size(); ++i) {
        const bool in = P.interior[static_cast<std::size_t>(vs[i])] != 0;
        any_in |= in;
        any_out |= !in;
    }
    for (std::size_t i = start + 1; i < vs.size(); ++i) {
        pc.length_N += detail::edge_length_between(mesh, lenN, vs[i - 1], vs[i]);
        pc.length_P += detail::edge_length_between(mesh, lenP, vs[i - 1], vs[i]);
    }
    if (!any_in) {
        pc.kind = 1;
        // shells j with the tail inside N_j and later outside N_{j+1}
        for (int j = 0; j + 1 < ex.levels(); ++j) {
            bool inside = false, crossed = false;
            for (std::size_t i = start > 0 ? start - 1 : 0; i < vs.size() && !crossed; ++i) {
                if (ex.in(j, vs[i])) inside = true;
                else if (inside && !ex.in(j + 1, vs[i])) crossed = true;
            }
            pc.annuli += crossed ? 1 : 0;
        }
        pc.ok = pc.length_N >= (1 - tau) * pc.annuli;
    } else if (!any_out) {
        pc.kind = 2;
        pc.ok = pc.length_N >= pc.length_P * (1 - 1e-12);
    } else {
        pc.kind = 3;
        // excursions: maximal runs outside int P between ∂P (or P) vertices
        std::size_t i = start;
        while (i < vs.size()) {
            if (P.interior[static_cast<std::size_t>(vs[i])]) {
                ++i;
                continue;
            }
            std::size_t a = i;
            while (i < vs.size() && !P.interior[static_cast<std::size_t>(vs[i])]) ++i;
            std::size_t b = i - 1;
            // endpoints on P
            while (a <= b && !P.P[static_cast<std::size_t>(vs[a])]) ++a;
            while (b > a && !P.P[static_cast<std::size_t>(vs[b])]) --b;
            if (a >= b || i >= vs.size()) continue;  // no return to int P: tail, not an excursion
            double LN = 0;
            for (std::size_t k = a + 1; k <= b; ++k) LN += detail::edge_length_between(mesh, lenN, vs[k - 1], vs[k]);
            const double dP = dijkstra(mesh, lenP, vs[a], P.P).dist[static_cast<std::size_t>(vs[b])];
            ++pc.excursions;
            if (LN > 0) pc.worst_excursion = std::max(pc.worst_excursion, dP / LN);
            if (!(dP <= (2 + tau) * LN)) pc.ok = false;
        }
    }
    return pc;
}

/// Completeness report under g_N with every sampled divergent path sorted into the three cases.
inline CompletenessCertificate certify_completeness(const Mesh& mesh, const std::string& gN, const std::string& p_tag,
                                                    const Exhaustion& ex, const PRegion& P, const CompletenessBudget& budget,
                                                    double tau = 0.05) {
    CompletenessCertificate cc;
    cc.report = completeness_report(mesh, gN, budget);
    const auto& lenN = mesh.lengths(gN);
    const auto& lenP = mesh.lengths(p_tag);
    for (std::size_t l = 0; l < budget.levels.size(); ++l) cc.min_exit.push_back(cc.report.min_exit_length(l));
    for (const auto& s : cc.report.samples) {
        auto pc = classify_path(mesh, s.vertices, s.id, lenN, lenP, ex, P, tau);
        if (pc.kind == 0) cc.inconclusive.push_back(s.id + ": never leaves N_0");
        if (!pc.ok) cc.passed = false;
        cc.cases.push_back(std::move(pc));
    }
    return cc;
}

inline json to_json(const CompletenessReport& r) {
    json j;
    j["verdict"] = to_string(r.verdict);
    j["witness_length"] = jnum(r.witness_length);
    if (r.witness) j["witness"] = r.witness->id;
    json balls = json::array();
    for (const auto& b : r.balls) balls.push_back({{"radius", jnum(b.radius)}, {"counts", b.counts}, {"stabilized", b.stabilized}});
    j["balls"] = balls;
    json samples = json::array();
    for (const auto& s : r.samples) {
        json e = json::array();
        for (double x : s.exit_length) e.push_back(jnum(x));
        samples.push_back({{"id", s.id}, {"exit_length", e}, {"exits_all", s.exits_all}});
    }
    j["samples"] = samples;
    j["notes"] = r.notes;
    return j;
}

inline json to_json(const CompletenessCertificate& c) {
    json j;
    j["report"] = to_json(c.report);
    json me = json::array();
    for (double x : c.min_exit) me.push_back(jnum(x));
    j["min_exit_length"] = me;
    json cases = json::array();
    for (const auto& p : c.cases)
        cases.push_back({{"id", p.id}, {"case", p.kind}, {"length_N", jnum(p.length_N)}, {"length_P", jnum(p.length_P)},
                         {"annuli", p.annuli}, {"excursions", p.excursions}, {"worst_excursion", jnum(p.worst_excursion)},
                         {"ok", p.ok}});
    j["cases"] = cases;
    j["inconclusive"] = c.inconclusive;
    j["passed"] = c.passed;
    return j;
}

}  // namespace rext

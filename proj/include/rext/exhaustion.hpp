#pragma once
// Smooth Lipschitz exhaustion functions and the cutoff sequence ψ(ρ/k) on meshes.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "extend.hpp"
#include "graph.hpp"

namespace rext {

/// |∇f|_g at each vertex from a least-squares fit over in-chart incident edges
/// (NaN where fewer than m independent edges are available).
inline std::vector<double> gradient_norms(const Mesh& mesh, const AtlasMetric& g, std::span<const double> f) {
    const int m = mesh.atlas->dim;
    std::vector<double> out(mesh.num_vertices(), std::nan(""));
    parallel_for(mesh.num_vertices(), [&](std::size_t v) {
        const auto& vx = mesh.vertices[v];
        std::vector<Vec> dx;
        std::vector<double> df;
        for (const auto& nb : mesh.neighbors(static_cast<int>(v))) {
            const MeshEdge& e = mesh.edges[static_cast<std::size_t>(nb.edge)];
            if (e.chart != vx.chart) continue;
            const bool fwd = e.a == static_cast<int>(v);
            dx.push_back(fwd ? Vec(e.pb - e.pa) : Vec(e.pa - e.pb));
            df.push_back(f[static_cast<std::size_t>(nb.vertex)] - f[v]);
        }
        if (static_cast<int>(dx.size()) < m) return;
        Mat A(static_cast<Eigen::Index>(dx.size()), m);
        Vec b(static_cast<Eigen::Index>(dx.size()));
        for (std::size_t k = 0; k < dx.size(); ++k) {
            A.row(static_cast<Eigen::Index>(k)) = dx[k].transpose();
            b[static_cast<Eigen::Index>(k)] = df[k];
        }
        Eigen::ColPivHouseholderQR<Mat> qr(A);
        if (qr.rank() < m) return;
        const Vec grad = qr.solve(b);
        const Mat gi = g.value(vx.chart, vx.x).inverse();
        out[v] = std::sqrt(std::max(0.0, grad.dot(gi * grad)));
    });
    return out;
}

inline double finite_max(std::span<const double> v) {
    double m = 0;
    for (double x : v)
        if (std::isfinite(x)) m = std::max(m, x);
    return m;
}

struct ExhaustionField {
    std::vector<double> rho;
    double L = 0, radius = 0;
    double scale = 1;        // applied to the mollified distance
    double max_gradient = 0; // after scaling
};

/// Distance to the base vertices, averaged over metric balls of radius r, then scaled so the
/// sampled gradient norm stays within L.
inline ExhaustionField exhaustion_function(const Mesh& mesh, const std::string& tag, std::span<const int> base,
                                           double L, double r, double h) {
    if (!(L > 1)) throw SpecError("exhaustion: Lipschitz budget must exceed 1");
    if (!(r >= 2 * h * (1 - 1e-12))) throw SpecError("exhaustion: smoothing radius must be at least 2h");
    if (base.empty()) throw SpecError("exhaustion: empty base");
    const auto& len = mesh.lengths(tag);
    const auto d = dijkstra(mesh, len, base).dist;
    ExhaustionField ex;
    ex.L = L;
    ex.radius = r;
    ex.rho.assign(mesh.num_vertices(), 0.0);
    parallel_for(mesh.num_vertices(), [&](std::size_t v) {
        if (!std::isfinite(d[v])) {
            ex.rho[v] = kInf;
            return;
        }
        const auto ball = dijkstra(mesh, len, static_cast<int>(v), {}, r).dist;
        double sum = 0, wsum = 0;
        for (std::size_t w = 0; w < ball.size(); ++w)
            if (std::isfinite(ball[w]) && std::isfinite(d[w])) {
                // tent weights keep the average smooth as the ball moves
                const double wt = 1 - ball[w] / r + 1e-3;
                sum += wt * d[w];
                wsum += wt;
            }
        ex.rho[v] = sum / wsum;
    });
    const AtlasMetric& g = mesh.metric(tag);
    const double gmax = finite_max(gradient_norms(mesh, g, ex.rho));
    if (gmax > L) {
        ex.scale = L / gmax;
        for (double& x : ex.rho) x *= ex.scale;
    }
    ex.max_gradient = gmax * ex.scale;
    return ex;
}

/// Profile equal to 1 on t ≤ 1 and 0 on t ≥ 2.
inline double cutoff_profile(double t) { return 1 - smooth_step(t - 1); }

inline std::vector<double> cutoff_sequence(std::span<const double> rho, int k) {
    if (k < 1) throw SpecError("cutoff: k must be at least 1");
    std::vector<double> out(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) out[i] = std::isfinite(rho[i]) ? cutoff_profile(rho[i] / k) : 0.0;
    return out;
}

}  // namespace rext

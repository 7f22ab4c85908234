#pragma once
// Shortest paths and flood fills on meshes.

#include <algorithm>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "atlas.hpp"

namespace rext {

/// Vertex subset as a byte mask (empty mask = every vertex).
using Mask = std::vector<char>;

struct ShortestPaths {
    std::vector<double> dist;
    std::vector<int> pred;

    bool reached(int v) const { return std::isfinite(dist[static_cast<std::size_t>(v)]); }

    /// Source-to-target vertex sequence (empty when unreachable).
    std::vector<int> path_to(int target) const {
        std::vector<int> out;
        if (!reached(target)) return out;
        for (int v = target; v >= 0; v = pred[static_cast<std::size_t>(v)]) out.push_back(v);
        std::reverse(out.begin(), out.end());
        return out;
    }
};

inline bool in_mask(const Mask& m, int v) { return m.empty() || m[static_cast<std::size_t>(v)]; }

/// Multi-source Dijkstra restricted to `mask`; ties break on vertex index so results are
/// independent of container ordering. Vertices farther than `cutoff` stay unreached.
inline ShortestPaths dijkstra(const Mesh& mesh, const std::vector<double>& len, std::span<const int> sources,
                              const Mask& mask = {}, double cutoff = kInf) {
    const std::size_t n = mesh.num_vertices();
    ShortestPaths sp{std::vector<double>(n, kInf), std::vector<int>(n, -1)};
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (int s : sources) {
        if (!in_mask(mask, s)) continue;
        sp.dist[static_cast<std::size_t>(s)] = 0;
        pq.emplace(0.0, s);
    }
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > sp.dist[static_cast<std::size_t>(v)]) continue;
        for (const auto& nb : mesh.neighbors(v)) {
            if (!in_mask(mask, nb.vertex)) continue;
            const double nd = d + len[static_cast<std::size_t>(nb.edge)];
            if (nd > cutoff) continue;
            double& cur = sp.dist[static_cast<std::size_t>(nb.vertex)];
            if (nd < cur || (nd == cur && v < sp.pred[static_cast<std::size_t>(nb.vertex)])) {
                const bool improved = nd < cur;
                cur = nd;
                sp.pred[static_cast<std::size_t>(nb.vertex)] = v;
                if (improved) pq.emplace(nd, nb.vertex);
            }
        }
    }
    return sp;
}

inline ShortestPaths dijkstra(const Mesh& mesh, const std::vector<double>& len, int source, const Mask& mask = {},
                              double cutoff = kInf) {
    return dijkstra(mesh, len, std::span<const int>(&source, 1), mask, cutoff);
}

/// Dijkstra from sources carrying initial distances.
inline ShortestPaths dijkstra_seeded(const Mesh& mesh, const std::vector<double>& len,
                                     const std::vector<std::pair<int, double>>& seeds, const Mask& mask = {}) {
    const std::size_t n = mesh.num_vertices();
    ShortestPaths sp{std::vector<double>(n, kInf), std::vector<int>(n, -1)};
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (const auto& [s, d0] : seeds) {
        if (!in_mask(mask, s) || !(d0 < sp.dist[static_cast<std::size_t>(s)])) continue;
        sp.dist[static_cast<std::size_t>(s)] = d0;
        pq.emplace(d0, s);
    }
    while (!pq.empty()) {
        auto [d, v] = pq.top();
        pq.pop();
        if (d > sp.dist[static_cast<std::size_t>(v)]) continue;
        for (const auto& nb : mesh.neighbors(v)) {
            if (!in_mask(mask, nb.vertex)) continue;
            const double nd = d + len[static_cast<std::size_t>(nb.edge)];
            double& cur = sp.dist[static_cast<std::size_t>(nb.vertex)];
            if (nd < cur) {
                cur = nd;
                sp.pred[static_cast<std::size_t>(nb.vertex)] = v;
                pq.emplace(nd, nb.vertex);
            }
        }
    }
    return sp;
}

/// Unweighted hop counts from the sources (−1 when unreachable).
inline std::vector<int> hop_distance(const Mesh& mesh, std::span<const int> sources, const Mask& mask = {}) {
    std::vector<int> hop(mesh.num_vertices(), -1);
    std::vector<int> frontier;
    for (int s : sources)
        if (in_mask(mask, s) && hop[static_cast<std::size_t>(s)] < 0) {
            hop[static_cast<std::size_t>(s)] = 0;
            frontier.push_back(s);
        }
    for (std::size_t i = 0; i < frontier.size(); ++i) {
        const int v = frontier[i];
        for (const auto& nb : mesh.neighbors(v))
            if (in_mask(mask, nb.vertex) && hop[static_cast<std::size_t>(nb.vertex)] < 0) {
                hop[static_cast<std::size_t>(nb.vertex)] = hop[static_cast<std::size_t>(v)] + 1;
                frontier.push_back(nb.vertex);
            }
    }
    return hop;
}

/// Connected components of the masked subgraph: labels (−1 outside mask) and count.
/// Components are numbered in order of their smallest vertex.
inline std::pair<std::vector<int>, int> components(const Mesh& mesh, const Mask& mask) {
    std::vector<int> label(mesh.num_vertices(), -1);
    int count = 0;
    std::vector<int> stack;
    for (std::size_t s = 0; s < mesh.num_vertices(); ++s) {
        if (!in_mask(mask, static_cast<int>(s)) || label[s] >= 0) continue;
        label[s] = count;
        stack.assign(1, static_cast<int>(s));
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (const auto& nb : mesh.neighbors(v))
                if (in_mask(mask, nb.vertex) && label[static_cast<std::size_t>(nb.vertex)] < 0) {
                    label[static_cast<std::size_t>(nb.vertex)] = count;
                    stack.push_back(nb.vertex);
                }
        }
        ++count;
    }
    return {label, count};
}

inline Mask mask_from(const std::vector<int>& vertices, std::size_t n) {
    Mask m(n, 0);
    for (int v : vertices) m[static_cast<std::size_t>(v)] = 1;
    return m;
}

inline Mask mask_where(const Mesh& mesh, const std::function<bool(int)>& pred) {
    Mask m(mesh.num_vertices(), 0);
    for (std::size_t v = 0; v < m.size(); ++v) m[v] = pred(static_cast<int>(v)) ? 1 : 0;
    return m;
}

/// Sum of tagged edge lengths along a vertex sequence joined by mesh edges.
inline double mesh_path_length(const Mesh& mesh, const std::vector<double>& len, std::span<const int> path) {
    double total = 0;
    for (std::size_t i = 1; i < path.size(); ++i) {
        double best = kInf;
        for (const auto& nb : mesh.neighbors(path[i - 1]))
            if (nb.vertex == path[i]) best = std::min(best, len[static_cast<std::size_t>(nb.edge)]);
        if (!std::isfinite(best)) throw Error("mesh path: consecutive vertices are not adjacent");
        total += best;
    }
    return total;
}

}  // namespace rext

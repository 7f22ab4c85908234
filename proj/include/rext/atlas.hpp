#pragma once
// Chart atlases with SPD metric fields, and their sampling into weighted meshes.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "expr.hpp"

namespace rext {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline std::span<const double> as_span(const Vec& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---- metric coefficient fields ------------------------------------------------

/// Symmetric m×m matrix of expressions; only the upper triangle is stored.
/// First and second symbolic derivatives are built on first use.
class MetricExpr {
public:
    MetricExpr() = default;

    MetricExpr(int dim, std::vector<Expr> upper) : dim_(dim), upper_(std::move(upper)) {
        if (static_cast<int>(upper_.size()) != dim * (dim + 1) / 2)
            throw SpecError("metric: expected " + std::to_string(dim * (dim + 1) / 2) +
                            " upper-triangle coefficients");
        cache_ = std::make_shared<Cache>();
    }

    static MetricExpr identity(int dim) { return conformal(Expr(1.0), dim); }

    /// factor · I
    static MetricExpr conformal(const Expr& factor, int dim) {
        std::vector<Expr> up;
        for (int i = 0; i < dim; ++i)
            for (int j = i; j < dim; ++j) up.push_back(i == j ? factor : Expr(0.0));
        return {dim, std::move(up)};
    }

    /// Parses a full matrix of strings; the lower triangle is ignored.
    static MetricExpr parse(const std::vector<std::vector<std::string>>& rows, int dim) {
        if (static_cast<int>(rows.size()) != dim)
            throw SpecError("metric: expected " + std::to_string(dim) + " rows");
        std::vector<Expr> up;
        for (int i = 0; i < dim; ++i) {
            if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != dim)
                throw SpecError("metric: row " + std::to_string(i) + " has wrong length");
            for (int j = i; j < dim; ++j)
                up.push_back(parse_expr(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], dim));
        }
        return {dim, std::move(up)};
    }

    int dim() const { return dim_; }
    bool empty() const { return dim_ == 0; }

    int index(int i, int j) const {
        if (i > j) std::swap(i, j);
        return i * dim_ - i * (i - 1) / 2 + (j - i);
    }
    const Expr& coeff(int i, int j) const { return upper_[static_cast<std::size_t>(index(i, j))]; }
    const std::vector<Expr>& upper() const { return upper_; }

    Mat value(std::span<const double> p) const {
        Mat g(dim_, dim_);
        for (int i = 0; i < dim_; ++i)
            for (int j = i; j < dim_; ++j) g(i, j) = g(j, i) = eval(coeff(i, j), p);
        return g;
    }
    Mat value(const Vec& p) const { return value(as_span(p)); }

    /// ∂_k g for k = 0..m-1.
    std::vector<Mat> first(std::span<const double> p) const {
        build();
        std::vector<Mat> out(static_cast<std::size_t>(dim_), Mat(dim_, dim_));
        for (int k = 0; k < dim_; ++k)
            for (int i = 0; i < dim_; ++i)
                for (int j = i; j < dim_; ++j)
                    out[static_cast<std::size_t>(k)](i, j) = out[static_cast<std::size_t>(k)](j, i) =
                        eval(cache_->d1[static_cast<std::size_t>(k)][static_cast<std::size_t>(index(i, j))], p);
        return out;
    }

    /// ∂_k∂_l g stored at [k*m + l].
    std::vector<Mat> second(std::span<const double> p) const {
        build();
        std::vector<Mat> out(static_cast<std::size_t>(dim_ * dim_), Mat(dim_, dim_));
        for (int k = 0; k < dim_; ++k)
            for (int l = k; l < dim_; ++l) {
                Mat& m = out[static_cast<std::size_t>(k * dim_ + l)];
                for (int i = 0; i < dim_; ++i)
                    for (int j = i; j < dim_; ++j)
                        m(i, j) = m(j, i) = eval(
                            cache_->d2[static_cast<std::size_t>(k * dim_ + l)][static_cast<std::size_t>(index(i, j))], p);
                out[static_cast<std::size_t>(l * dim_ + k)] = m;
            }
        return out;
    }

    MetricExpr scaled(const Expr& factor) const {
        std::vector<Expr> up;
        for (const auto& c : upper_) up.push_back(factor * c);
        return {dim_, std::move(up)};
    }

    /// Pull back through a coordinate map y = F(x): (J^T g(F(x)) J).
    MetricExpr pullback(std::span<const Expr> map) const {
        const int m = dim_;
        std::vector<Expr> composed;
        for (const auto& c : upper_) composed.push_back(substitute(c, map));
        std::vector<std::vector<Expr>> jac(static_cast<std::size_t>(m), std::vector<Expr>(static_cast<std::size_t>(m)));
        for (int a = 0; a < m; ++a)
            for (int i = 0; i < m; ++i) jac[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] = diff(map[static_cast<std::size_t>(a)], i);
        auto g = [&](int a, int b) { return composed[static_cast<std::size_t>(index(a, b))]; };
        std::vector<Expr> up;
        for (int i = 0; i < m; ++i)
            for (int j = i; j < m; ++j) {
                Expr s(0.0);
                for (int a = 0; a < m; ++a)
                    for (int b = 0; b < m; ++b)
                        s = s + jac[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] * g(a, b) *
                                    jac[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
                up.push_back(s);
            }
        return {m, std::move(up)};
    }

private:
    struct Cache {
        std::once_flag once;
        std::vector<std::vector<Expr>> d1, d2;
    };

    void build() const {
        std::call_once(cache_->once, [this] {
            const auto n = upper_.size();
            cache_->d1.assign(static_cast<std::size_t>(dim_), std::vector<Expr>(n));
            cache_->d2.assign(static_cast<std::size_t>(dim_ * dim_), std::vector<Expr>(n));
            for (int k = 0; k < dim_; ++k)
                for (std::size_t c = 0; c < n; ++c) cache_->d1[static_cast<std::size_t>(k)][c] = diff(upper_[c], k);
            for (int k = 0; k < dim_; ++k)
                for (int l = k; l < dim_; ++l)
                    for (std::size_t c = 0; c < n; ++c) {
                        cache_->d2[static_cast<std::size_t>(k * dim_ + l)][c] = diff(cache_->d1[static_cast<std::size_t>(k)][c], l);
                        cache_->d2[static_cast<std::size_t>(l * dim_ + k)][c] = cache_->d2[static_cast<std::size_t>(k * dim_ + l)][c];
                    }
        });
    }

    int dim_ = 0;
    std::vector<Expr> upper_;
    std::shared_ptr<Cache> cache_;
};

inline double min_eigenvalue(const Mat& g) {
    if (g.rows() == 2) {
        const double mean = 0.5 * (g(0, 0) + g(1, 1));
        const double half = 0.5 * (g(0, 0) - g(1, 1));
        return mean - std::hypot(half, g(0, 1));
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// ---- chart domains -----------------------------------------------------------

struct Box {
    std::vector<double> lo, hi;
};

/// Axis box (optionally periodic per axis), optionally intersected with a ball and with a
/// half-space {x_axis <= offset} or {x_axis >= offset}. The half-space face is the boundary.
struct Domain {
    struct Ball {
        std::vector<double> center;
        double radius = 1.0;
        bool open = false;
    };
    struct Cut {
        int axis = 0;
        double offset = 0.0;
        bool keep_le = true;
    };

    std::vector<double> lo, hi;
    std::vector<bool> periodic;
    std::optional<Ball> ball;
    std::optional<Cut> cut;
    std::vector<std::pair<int, double>> snap;  // (axis, value) planes grid points are snapped onto

    static Domain box(std::vector<double> lo, std::vector<double> hi) {
        Domain d;
        d.periodic.assign(lo.size(), false);
        d.lo = std::move(lo);
        d.hi = std::move(hi);
        return d;
    }
    static Domain full_ball(std::vector<double> center, double r, bool open = false) {
        std::vector<double> lo, hi;
        for (double c : center) {
            lo.push_back(c - r);
            hi.push_back(c + r);
        }
        Domain d = box(lo, hi);
        d.ball = Ball{std::move(center), r, open};
        return d;
    }
    /// Ball intersected with x_m <= 0.
    static Domain half_ball(std::vector<double> center, double r) {
        Domain d = full_ball(std::move(center), r);
        d.cut = Cut{static_cast<int>(d.lo.size()) - 1, 0.0, true};
        return d;
    }

    int dim() const { return static_cast<int>(lo.size()); }

    double period(int i) const { return hi[static_cast<std::size_t>(i)] - lo[static_cast<std::size_t>(i)]; }

    /// Folds periodic coordinates into [lo, hi).
    Vec wrap(Vec p) const {
        for (int i = 0; i < dim(); ++i)
            if (periodic[static_cast<std::size_t>(i)]) {
                const double per = period(i);
                double t = std::fmod(p[i] - lo[static_cast<std::size_t>(i)], per);
                if (t < 0) t += per;
                if (t >= per) t -= per;
                p[i] = lo[static_cast<std::size_t>(i)] + t;
            }
        return p;
    }

    bool contains(const Vec& p, double tol = 1e-12) const {
        for (int i = 0; i < dim(); ++i) {
            if (periodic[static_cast<std::size_t>(i)]) continue;
            if (p[i] < lo[static_cast<std::size_t>(i)] - tol || p[i] > hi[static_cast<std::size_t>(i)] + tol) return false;
        }
        if (ball) {
            double r2 = 0;
            for (int i = 0; i < dim(); ++i) {
                const double d = p[i] - ball->center[static_cast<std::size_t>(i)];
                r2 += d * d;
            }
            const double r = std::sqrt(r2);
            if (ball->open ? !(r < ball->radius) : r > ball->radius + tol) return false;
        }
        if (cut) {
            const double v = p[cut->axis] - cut->offset;
            if (cut->keep_le ? v > tol : v < -tol) return false;
        }
        return true;
    }

    bool on_cut_face(const Vec& p, double tol = 1e-12) const {
        return cut && std::fabs(p[cut->axis] - cut->offset) <= tol;
    }
};

/// A coordinate patch with the manifold's metric expressed in its coordinates.
struct Chart {
    std::string id;
    Domain domain;
    MetricExpr metric;
};

/// Coordinate change between two charts, valid where the image lies in the target domain.
struct TransitionMap {
    int from = 0, to = 0;
    std::vector<Expr> forward;
    std::function<bool(const Vec&)> accept;  // overlap predicate on source points (empty = any)

    std::optional<Vec> apply(const Vec& p, const Domain& target, double tol = 1e-12) const {
        if (accept && !accept(p)) return std::nullopt;
        Vec q(static_cast<Eigen::Index>(forward.size()));
        try {
            for (std::size_t i = 0; i < forward.size(); ++i) q[static_cast<Eigen::Index>(i)] = eval(forward[i], as_span(p));
        } catch (const DomainError&) {
            return std::nullopt;
        }
        q = target.wrap(q);
        if (!target.contains(q, tol)) return std::nullopt;
        return q;
    }

    Mat jacobian(const Vec& p) const {
        const int m = static_cast<int>(forward.size());
        Mat J(m, m);
        for (int a = 0; a < m; ++a)
            for (int i = 0; i < m; ++i) J(a, i) = eval(diff(forward[static_cast<std::size_t>(a)], i), as_span(p));
        return J;
    }
};

struct Atlas {
    int dim = 2;
    std::vector<Chart> charts;
    std::vector<TransitionMap> transitions;

    int chart_index(const std::string& id) const {
        for (std::size_t i = 0; i < charts.size(); ++i)
            if (charts[i].id == id) return static_cast<int>(i);
        throw SpecError("unknown chart '" + id + "'");
    }

    const TransitionMap* transition(int from, int to) const {
        for (const auto& t : transitions)
            if (t.from == from && t.to == to) return &t;
        return nullptr;
    }
};

/// One connected boundary component: the cut face of `chart`.
/// `inward_sign` is +1 when the manifold lies on x_axis >= offset, −1 when on x_axis <= offset.
struct BoundaryComponent {
    int chart = 0;
    int axis = 0;
    double offset = 0.0;
    int inward_sign = -1;
};

struct ManifoldWithBoundary {
    std::shared_ptr<const Atlas> atlas;
    std::vector<BoundaryComponent> boundary;

    int dim() const { return atlas->dim; }
};

/// Derives boundary components from the chart cuts.
inline std::vector<BoundaryComponent> boundary_from_cuts(const Atlas& atlas) {
    std::vector<BoundaryComponent> out;
    for (std::size_t i = 0; i < atlas.charts.size(); ++i)
        if (const auto& c = atlas.charts[i].domain.cut)
            out.push_back({static_cast<int>(i), c->axis, c->offset, c->keep_le ? -1 : +1});
    return out;
}

// ---- SPD check ----------------------------------------------------------------

struct SpdReport {
    double min_eigenvalue = kInf;
    Vec argmin;
    std::size_t samples = 0;
    bool accepted() const { return min_eigenvalue > 0; }
};

/// Smallest metric eigenvalue over grid points of the chart domain (open on the round
/// part of a ball, closed on the flat cut face).
inline SpdReport check_spd(const Chart& chart, double grid_step) {
    const Domain& d = chart.domain;
    const int m = d.dim();
    double extent = kInf;
    for (int i = 0; i < m; ++i) {
        if (!std::isfinite(d.lo[static_cast<std::size_t>(i)]) || !std::isfinite(d.hi[static_cast<std::size_t>(i)]))
            throw SpecError("check_spd: chart '" + chart.id + "' has an unbounded domain");
        extent = std::min(extent, d.hi[static_cast<std::size_t>(i)] - d.lo[static_cast<std::size_t>(i)]);
    }
    if (d.ball) extent = std::min(extent, d.ball->radius);
    if (!(grid_step > 0) || grid_step >= extent)
        throw SpecError("check_spd: grid step must be positive and below the chart radius");

    Domain probe = d;
    if (probe.ball) probe.ball->open = true;
    SpdReport rep;
    std::vector<long> k0(static_cast<std::size_t>(m)), k1(static_cast<std::size_t>(m)), k(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        k0[static_cast<std::size_t>(i)] = static_cast<long>(std::ceil(d.lo[static_cast<std::size_t>(i)] / grid_step - 1e-9));
        k1[static_cast<std::size_t>(i)] = static_cast<long>(std::floor(d.hi[static_cast<std::size_t>(i)] / grid_step + 1e-9));
    }
    k = k0;
    Vec p(m);
    for (;;) {
        for (int i = 0; i < m; ++i) p[i] = static_cast<double>(k[static_cast<std::size_t>(i)]) * grid_step;
        if (probe.contains(p, 1e-12)) {
            Mat g;
            try {
                g = chart.metric.value(p);
            } catch (const DomainError& e) {
                throw NumericGuard("check_spd: non-finite coefficient in chart '" + chart.id +
                                   "': " + e.what());
            }
            const double lam = min_eigenvalue(g);
            ++rep.samples;
            if (lam < rep.min_eigenvalue) {
                rep.min_eigenvalue = lam;
                rep.argmin = p;
            }
        }
        int i = 0;
        for (; i < m; ++i) {
            if (++k[static_cast<std::size_t>(i)] <= k1[static_cast<std::size_t>(i)]) break;
            k[static_cast<std::size_t>(i)] = k0[static_cast<std::size_t>(i)];
        }
        if (i == m) break;
    }
    return rep;
}

// ---- meshes ------------------------------------------------------------------

/// Computational truncation: a global coordinate box and/or per-chart boxes.
struct Window {
    std::optional<Box> global;
    std::map<std::string, Box> per_chart;
};

/// Metric defined chart by chart (charts with no entry carry none).
struct AtlasMetric {
    std::vector<std::optional<MetricExpr>> per_chart;

    static AtlasMetric from_atlas(const Atlas& a) {
        AtlasMetric m;
        for (const auto& c : a.charts) m.per_chart.emplace_back(c.metric);
        return m;
    }
    bool defined_on(int chart) const {
        return chart >= 0 && static_cast<std::size_t>(chart) < per_chart.size() &&
               per_chart[static_cast<std::size_t>(chart)].has_value();
    }
    const MetricExpr& at(int chart) const {
        if (!defined_on(chart)) throw SpecError("metric undefined on chart " + std::to_string(chart));
        return *per_chart[static_cast<std::size_t>(chart)];
    }
    Mat value(int chart, const Vec& p) const { return at(chart).value(p); }
};

enum VertexFlag : std::uint8_t { kInM = 1, kInQ = 2, kOnBoundary = 4 };

struct MeshVertex {
    int chart = 0;
    Vec x;
    std::array<int, 3> grid{};
    std::uint8_t flags = 0;
};

struct MeshEdge {
    int a = 0, b = 0;
    int chart = 0;  // coordinates of the segment
    Vec pa, pb;     // unwrapped segment endpoints in that chart
};

/// 3-point Gauss-Legendre length of the coordinate segment pa→pb.
inline double segment_length(const MetricExpr& g, const Vec& pa, const Vec& pb) {
    static const double nodes[3] = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
    static const double weights[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    const Vec d = pb - pa;
    double len = 0;
    for (int i = 0; i < 3; ++i) {
        const Vec p = pa + nodes[i] * d;
        const double q = d.dot(g.value(p) * d);
        len += weights[i] * std::sqrt(std::max(0.0, q));
    }
    return len;
}

class Mesh {
public:
    struct GridSpec {
        std::vector<double> spacing;
        std::vector<double> origin;
        std::vector<int> period_n;  // 0 when not periodic
    };

    int dim = 2;
    double h = 0.0;
    std::shared_ptr<const Atlas> atlas;
    std::vector<MeshVertex> vertices;
    std::vector<MeshEdge> edges;
    std::vector<GridSpec> grids;

    std::size_t num_vertices() const { return vertices.size(); }

    struct Nbr {
        int vertex;
        int edge;
    };
    std::span<const Nbr> neighbors(int v) const {
        return {adj_.data() + offsets_[static_cast<std::size_t>(v)],
                adj_.data() + offsets_[static_cast<std::size_t>(v) + 1]};
    }

    void finalize() {
        offsets_.assign(vertices.size() + 1, 0);
        for (const auto& e : edges) {
            ++offsets_[static_cast<std::size_t>(e.a) + 1];
            ++offsets_[static_cast<std::size_t>(e.b) + 1];
        }
        for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
        adj_.resize(edges.size() * 2);
        std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t k = 0; k < edges.size(); ++k) {
            adj_[fill[static_cast<std::size_t>(edges[k].a)]++] = {edges[k].b, static_cast<int>(k)};
            adj_[fill[static_cast<std::size_t>(edges[k].b)]++] = {edges[k].a, static_cast<int>(k)};
        }
        lookup_.assign(atlas->charts.size(), {});
        for (std::size_t v = 0; v < vertices.size(); ++v)
            lookup_[static_cast<std::size_t>(vertices[v].chart)][pack(vertices[v].grid)] = static_cast<int>(v);
    }

    static std::int64_t pack(const std::array<int, 3>& g) {
        constexpr std::int64_t off = 1 << 20;
        return ((g[0] + off) << 42) | ((g[1] + off) << 21) | (g[2] + off);
    }

    /// Vertex at integer grid position of a chart, or −1.
    int vertex_at(int chart, const std::array<int, 3>& g) const {
        const auto& mp = lookup_[static_cast<std::size_t>(chart)];
        auto it = mp.find(pack(g));
        return it == mp.end() ? -1 : it->second;
    }

    bool has_metric(const std::string& tag) const { return lengths_.count(tag) > 0; }

    const std::vector<double>& lengths(const std::string& tag) const {
        auto it = lengths_.find(tag);
        if (it == lengths_.end()) throw Error("metric '" + tag + "' not registered on mesh");
        return it->second;
    }

    /// Computes per-edge lengths of an atlas metric.
    void register_metric(const std::string& tag, const AtlasMetric& g) {
        std::vector<double> len(edges.size());
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const auto& e = edges[k];
            double l = 0;
            try {
                l = segment_length(g.at(e.chart), e.pa, e.pb);
            } catch (const DomainError& ex) {
                throw NumericGuard("metric '" + tag + "': " + ex.what());
            }
            if (!(l > 0) || !std::isfinite(l))
                throw NumericGuard("metric '" + tag + "': non-positive edge length at edge " +
                                   std::to_string(k));
            len[k] = l;
        }
        lengths_[tag] = std::move(len);
        metrics_[tag] = g;
    }

    /// Conformal rescaling exp(E)·g of a registered metric, E given per vertex and
    /// interpolated linearly along each edge at the Gauss nodes.
    void register_conformal(const std::string& tag, const std::string& base,
                            const std::vector<double>& exponent) {
        const auto& g = metrics_.at(base);
        static const double nodes[3] = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
        static const double weights[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
        std::vector<double> len(edges.size());
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const auto& e = edges[k];
            const Vec d = e.pb - e.pa;
            const double ea = exponent[static_cast<std::size_t>(e.a)], eb = exponent[static_cast<std::size_t>(e.b)];
            double l = 0;
            for (int i = 0; i < 3; ++i) {
                const Vec p = e.pa + nodes[i] * d;
                const double q = d.dot(g.value(e.chart, p) * d);
                const double ex = ea + nodes[i] * (eb - ea);
                l += weights[i] * std::exp(0.5 * ex) * std::sqrt(std::max(0.0, q));
            }
            len[k] = l;
        }
        lengths_[tag] = std::move(len);
        metrics_[tag] = g;
        exponents_[tag] = exponent;
    }

    const AtlasMetric& metric(const std::string& tag) const { return metrics_.at(tag); }

    /// Per-vertex log-factor of a conformal tag (nullptr for plain metrics).
    const std::vector<double>* exponent(const std::string& tag) const {
        auto it = exponents_.find(tag);
        return it == exponents_.end() ? nullptr : &it->second;
    }

    /// Multilinear interpolation of a vertex field at a chart point; missing cell corners
    /// are dropped and the weights renormalized. Returns nullopt if no corner exists.
    std::optional<double> interpolate(const std::vector<double>& field, int chart, const Vec& p) const {
        const GridSpec& gs = grids[static_cast<std::size_t>(chart)];
        std::array<int, 3> base{};
        std::array<double, 3> frac{};
        for (int i = 0; i < dim; ++i) {
            const double t = (p[i] - gs.origin[static_cast<std::size_t>(i)]) / gs.spacing[static_cast<std::size_t>(i)];
            double fl = std::floor(t + 1e-9);
            base[static_cast<std::size_t>(i)] = static_cast<int>(fl);
            frac[static_cast<std::size_t>(i)] = std::clamp(t - fl, 0.0, 1.0);
        }
        double acc = 0, wsum = 0;
        for (int corner = 0; corner < (1 << dim); ++corner) {
            std::array<int, 3> g{};
            double w = 1;
            for (int i = 0; i < dim; ++i) {
                const int bit = (corner >> i) & 1;
                int gi = base[static_cast<std::size_t>(i)] + bit;
                const int pn = gs.period_n[static_cast<std::size_t>(i)];
                if (pn > 0) gi = ((gi % pn) + pn) % pn;
                g[static_cast<std::size_t>(i)] = gi;
                w *= bit ? frac[static_cast<std::size_t>(i)] : 1 - frac[static_cast<std::size_t>(i)];
            }
            if (w == 0) continue;
            const int v = vertex_at(chart, g);
            if (v < 0) continue;
            acc += w * field[static_cast<std::size_t>(v)];
            wsum += w;
        }
        if (wsum == 0) {
            // exactly on a vertex whose zero-weight neighbours are missing
            for (int i = 0; i < dim; ++i)
                if (frac[static_cast<std::size_t>(i)] > 0.5) ++base[static_cast<std::size_t>(i)];
            const int v = vertex_at(chart, base);
            if (v < 0) return std::nullopt;
            return field[static_cast<std::size_t>(v)];
        }
        return acc / wsum;
    }

private:
    std::vector<std::size_t> offsets_;
    std::vector<Nbr> adj_;
    std::vector<std::unordered_map<std::int64_t, int>> lookup_;
    std::map<std::string, std::vector<double>> lengths_;
    std::map<std::string, AtlasMetric> metrics_;
    std::map<std::string, std::vector<double>> exponents_;
};

/// Flags for a sampled vertex (chart index, coordinates).
using VertexClassifier = std::function<std::uint8_t(int, const Vec&)>;

/// Grid connectivity: axes + diagonals, or additionally the (1,2) "knight" moves in 2-D.
enum class Stencil { Octile, Knight };

namespace detail {

inline Box chart_region(const Chart& c, const Window& w) {
    Box b{c.domain.lo, c.domain.hi};
    auto clip = [&](const Box& o) {
        for (std::size_t i = 0; i < b.lo.size(); ++i) {
            if (c.domain.periodic[i]) continue;
            b.lo[i] = std::max(b.lo[i], o.lo[i]);
            b.hi[i] = std::min(b.hi[i], o.hi[i]);
        }
    };
    if (w.global) clip(*w.global);
    if (auto it = w.per_chart.find(c.id); it != w.per_chart.end()) clip(it->second);
    return b;
}

inline bool in_box(const Box& b, const Domain& d, const Vec& p, double tol) {
    for (int i = 0; i < p.size(); ++i) {
        if (d.periodic[static_cast<std::size_t>(i)]) continue;
        if (p[i] < b.lo[static_cast<std::size_t>(i)] - tol || p[i] > b.hi[static_cast<std::size_t>(i)] + tol) return false;
    }
    return true;
}

}  // namespace detail

/// Samples every chart on a grid of spacing ~h inside the window, drops points owned by an
/// earlier chart (via transitions), connects each grid to its full {-1,0,1}^m neighbourhood
/// and stitches neighbouring charts across their ownership border.
inline Mesh sample_mesh(std::shared_ptr<const Atlas> atlas, double h, const Window& window,
                        const VertexClassifier& classify = {}, Stencil stencil = Stencil::Octile) {
    if (!(h > 0)) throw SpecError("sample_mesh: resolution must be positive");
    const int m = atlas->dim;
    if (m < 1 || m > 3) throw SpecError("sample_mesh: dimension must be 1..3");
    Mesh mesh;
    mesh.dim = m;
    mesh.h = h;
    mesh.atlas = atlas;
    const auto nch = atlas->charts.size();
    std::vector<Box> regions(nch);
    std::vector<std::unordered_map<std::int64_t, int>> local(nch);

    for (std::size_t ci = 0; ci < nch; ++ci) {
        const Chart& c = atlas->charts[ci];
        const Domain& d = c.domain;
        regions[ci] = detail::chart_region(c, window);
        Mesh::GridSpec gs;
        std::vector<int> k0(3, 0), k1(3, 0);
        bool empty = false;
        for (int i = 0; i < m; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            if (d.periodic[ui]) {
                const int n = std::max(3, static_cast<int>(std::lround(d.period(i) / h)));
                gs.period_n.push_back(n);
                gs.spacing.push_back(d.period(i) / n);
                gs.origin.push_back(d.lo[ui]);
                k0[ui] = 0;
                k1[ui] = n - 1;
            } else {
                if (!std::isfinite(regions[ci].lo[ui]) || !std::isfinite(regions[ci].hi[ui]))
                    throw SpecError("sample_mesh: window unbounded for chart '" + c.id + "'");
                gs.period_n.push_back(0);
                gs.spacing.push_back(h);
                gs.origin.push_back(0.0);
                k0[ui] = static_cast<int>(std::ceil(regions[ci].lo[ui] / h - 1e-9));
                k1[ui] = static_cast<int>(std::floor(regions[ci].hi[ui] / h + 1e-9));
                if (k1[ui] < k0[ui]) empty = true;
            }
        }
        mesh.grids.push_back(gs);
        if (empty) continue;
        std::array<int, 3> k{k0[0], k0[1], k0[2]};
        for (;;) {
            Vec p(m);
            for (int i = 0; i < m; ++i) {
                const auto ui = static_cast<std::size_t>(i);
                p[i] = gs.origin[ui] + k[ui] * gs.spacing[ui];
                if (d.cut && d.cut->axis == i && std::fabs(p[i] - d.cut->offset) < 1e-9 * h)
                    p[i] = d.cut->offset;
                for (const auto& [ax, val] : d.snap)
                    if (ax == i && std::fabs(p[i] - val) < 1e-9 * h) p[i] = val;
                if (std::fabs(p[i]) < 1e-12 * h) p[i] = 0.0;
            }
            bool keep = d.contains(p, 1e-12) && detail::in_box(regions[ci], d, p, 1e-9 * h);
            for (std::size_t a = 0; keep && a < ci; ++a) {
                const TransitionMap* t = atlas->transition(static_cast<int>(ci), static_cast<int>(a));
                if (!t) continue;
                if (auto q = t->apply(p, atlas->charts[a].domain, 1e-12);
                    q && detail::in_box(regions[a], atlas->charts[a].domain, *q, 1e-9 * h))
                    keep = false;
            }
            if (keep) {
                MeshVertex v;
                v.chart = static_cast<int>(ci);
                v.x = p;
                v.grid = k;
                if (classify) v.flags = classify(static_cast<int>(ci), p);
                local[ci][Mesh::pack(k)] = static_cast<int>(mesh.vertices.size());
                mesh.vertices.push_back(std::move(v));
            }
            int i = 0;
            for (; i < m; ++i) {
                const auto ui = static_cast<std::size_t>(i);
                if (++k[ui] <= k1[ui]) break;
                k[ui] = k0[ui];
            }
            if (i == m) break;
        }
    }
    if (mesh.vertices.empty()) throw SpecError("sample_mesh: window intersects no chart");

    // in-chart grid edges
    std::vector<std::array<int, 3>> offsets;
    for (int a = -1; a <= 1; ++a)
        for (int b = (m > 1 ? -1 : 0); b <= (m > 1 ? 1 : 0); ++b)
            for (int c = (m > 2 ? -1 : 0); c <= (m > 2 ? 1 : 0); ++c) {
                std::array<int, 3> o{a, b, c};
                // keep one of each ± pair: first nonzero component positive
                int first = a != 0 ? a : b != 0 ? b : c;
                if (first > 0) offsets.push_back(o);
            }
    if (stencil == Stencil::Knight && m == 2)
        for (const std::array<int, 3>& o : {std::array<int, 3>{1, 2, 0}, {2, 1, 0}, {1, -2, 0}, {2, -1, 0}})
            offsets.push_back(o);
    for (std::size_t vi = 0; vi < mesh.vertices.size(); ++vi) {
        const MeshVertex& v = mesh.vertices[vi];
        const auto ci = static_cast<std::size_t>(v.chart);
        const Mesh::GridSpec& gs = mesh.grids[ci];
        const Domain& d = atlas->charts[ci].domain;
        for (const auto& o : offsets) {
            std::array<int, 3> g = v.grid;
            Vec pb = v.x;
            for (int i = 0; i < m; ++i) {
                const auto ui = static_cast<std::size_t>(i);
                g[ui] += o[ui];
                pb[i] += o[ui] * gs.spacing[ui];
                if (gs.period_n[ui] > 0) g[ui] = ((g[ui] % gs.period_n[ui]) + gs.period_n[ui]) % gs.period_n[ui];
            }
            auto it = local[ci].find(Mesh::pack(g));
            if (it == local[ci].end()) continue;
            if (!d.contains(d.wrap(0.5 * (v.x + pb)), 1e-12)) continue;
            // snap the far endpoint to the stored coordinate (exact boundary values)
            const Vec& xb = mesh.vertices[static_cast<std::size_t>(it->second)].x;
            for (int i = 0; i < m; ++i)
                if (gs.period_n[static_cast<std::size_t>(i)] == 0) pb[i] = xb[i];
            mesh.edges.push_back({static_cast<int>(vi), it->second, v.chart, v.x, pb});
        }
    }

    // stitch chart b to earlier chart a across the ownership border
    for (std::size_t b = 1; b < nch; ++b) {
        for (std::size_t a = 0; a < b; ++a) {
            const TransitionMap* t = atlas->transition(static_cast<int>(a), static_cast<int>(b));
            if (!t) continue;
            const Domain& db = atlas->charts[b].domain;
            const Mesh::GridSpec& gs = mesh.grids[b];
            std::unordered_map<std::int64_t, std::vector<std::pair<int, Vec>>> buckets;
            auto bucket_of = [&](const Vec& y) {
                std::array<int, 3> g{};
                for (int i = 0; i < m; ++i)
                    g[static_cast<std::size_t>(i)] = static_cast<int>(std::floor((y[i] - gs.origin[static_cast<std::size_t>(i)]) / gs.spacing[static_cast<std::size_t>(i)]));
                return g;
            };
            for (std::size_t u = 0; u < mesh.vertices.size(); ++u) {
                if (mesh.vertices[u].chart != static_cast<int>(a)) continue;
                auto y = t->apply(mesh.vertices[u].x, db, 1e-9);
                if (!y) continue;
                buckets[Mesh::pack(bucket_of(*y))].emplace_back(static_cast<int>(u), *y);
            }
            if (buckets.empty()) continue;
            for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
                if (mesh.vertices[v].chart != static_cast<int>(b)) continue;
                const Vec& x = mesh.vertices[v].x;
                const auto g0 = bucket_of(x);
                for (int da = -2; da <= 2; ++da)
                    for (int db2 = (m > 1 ? -2 : 0); db2 <= (m > 1 ? 2 : 0); ++db2)
                        for (int dc = (m > 2 ? -2 : 0); dc <= (m > 2 ? 2 : 0); ++dc) {
                            std::array<int, 3> g{g0[0] + da, g0[1] + db2, g0[2] + dc};
                            for (int i = 0; i < m; ++i) {
                                const int pn = gs.period_n[static_cast<std::size_t>(i)];
                                if (pn > 0) g[static_cast<std::size_t>(i)] = ((g[static_cast<std::size_t>(i)] % pn) + pn) % pn;
                            }
                            auto it = buckets.find(Mesh::pack(g));
                            if (it == buckets.end()) continue;
                            for (const auto& [u, y] : it->second) {
                                Vec yy = y;
                                bool close = true;
                                for (int i = 0; i < m; ++i) {
                                    const auto ui = static_cast<std::size_t>(i);
                                    double dlt = yy[i] - x[i];
                                    if (gs.period_n[ui] > 0) {
                                        const double per = db.period(i);
                                        dlt -= per * std::round(dlt / per);
                                        yy[i] = x[i] + dlt;
                                    }
                                    if (std::fabs(dlt) > 1.01 * gs.spacing[ui]) close = false;
                                }
                                if (!close || (yy - x).norm() < 1e-12) continue;
                                if (!db.contains(db.wrap(0.5 * (x + yy)), 1e-9)) continue;
                                mesh.edges.push_back({static_cast<int>(v), u, static_cast<int>(b), x, yy});
                            }
                        }
            }
        }
    }
    mesh.finalize();
    return mesh;
}

/// Samples a manifold with boundary: every vertex is in M, cut-face vertices are on ∂M.
inline Mesh sample_mesh(const ManifoldWithBoundary& man, double h, const Window& window,
                        Stencil stencil = Stencil::Octile) {
    auto classify = [&man](int chart, const Vec& p) -> std::uint8_t {
        std::uint8_t f = kInM;
        for (const auto& b : man.boundary)
            if (b.chart == chart && p[b.axis] == b.offset) f |= kOnBoundary;
        return f;
    };
    Mesh mesh = sample_mesh(man.atlas, h, window, classify, stencil);
    mesh.register_metric("g", AtlasMetric::from_atlas(*man.atlas));
    return mesh;
}

/// Vertices flagged on ∂M.
inline std::vector<int> boundary_vertices(const Mesh& mesh) {
    std::vector<int> out;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
        if (mesh.vertices[v].flags & kOnBoundary) out.push_back(static_cast<int>(v));
    return out;
}

/// Euclidean chart-coordinate metric on every chart.
inline AtlasMetric coordinate_metric(const Atlas& a) {
    AtlasMetric m;
    for (std::size_t i = 0; i < a.charts.size(); ++i) m.per_chart.emplace_back(MetricExpr::identity(a.dim));
    return m;
}

}  // namespace rext

#pragma once
// JSON manifold descriptions (schema in README.md) and small CSV/JSON writers.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas.hpp"
#include "glue.hpp"

namespace rext {

using json = nlohmann::ordered_json;

namespace detail {

inline double json_bound(const json& v, double unbounded) {
    if (v.is_null()) return unbounded;
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
        throw SpecError("bad bound '" + s + "'");
    }
    if (!v.is_number()) throw SpecError("bound must be a number, null, \"inf\" or \"-inf\"");
    return v.get<double>();
}

inline std::vector<double> json_bounds(const json& arr, int dim, double unbounded, const char* what) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != dim)
        throw SpecError(std::string(what) + ": expected an array of " + std::to_string(dim) + " bounds");
    std::vector<double> out;
    for (const auto& v : arr) out.push_back(json_bound(v, unbounded));
    return out;
}

inline Box parse_box(const json& j, int dim) {
    return {json_bounds(j.at("lo"), dim, -kInf, "lo"), json_bounds(j.at("hi"), dim, kInf, "hi")};
}

inline Domain parse_domain(const json& j, int dim) {
    Domain d;
    if (j.contains("ball")) {
        const auto& b = j.at("ball");
        auto c = b.at("center").get<std::vector<double>>();
        if (static_cast<int>(c.size()) != dim) throw SpecError("ball center has wrong dimension");
        d = Domain::full_ball(c, b.at("radius").get<double>(), b.value("open", false));
    } else {
        d = Domain::box(std::vector<double>(static_cast<std::size_t>(dim), -kInf),
                        std::vector<double>(static_cast<std::size_t>(dim), kInf));
    }
    if (j.contains("box")) {
        Box bx = parse_box(j.at("box"), dim);
        for (int i = 0; i < dim; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            d.lo[ui] = std::max(d.lo[ui], bx.lo[ui]);
            d.hi[ui] = std::min(d.hi[ui], bx.hi[ui]);
        }
    }
    if (j.contains("periodic")) {
        auto p = j.at("periodic").get<std::vector<bool>>();
        if (static_cast<int>(p.size()) != dim) throw SpecError("periodic flags have wrong dimension");
        for (int i = 0; i < dim; ++i)
            if (p[static_cast<std::size_t>(i)] &&
                (!std::isfinite(d.lo[static_cast<std::size_t>(i)]) || !std::isfinite(d.hi[static_cast<std::size_t>(i)])))
                throw SpecError("periodic axis needs finite bounds");
        d.periodic = p;
    }
    if (j.contains("cut")) {
        const auto& c = j.at("cut");
        const int axis = c.at("axis").get<int>();
        if (axis < 1 || axis > dim) throw SpecError("cut axis out of range (axes are 1-based)");
        const auto keep = c.value("keep", std::string("le"));
        if (keep != "le" && keep != "ge") throw SpecError("cut keep must be \"le\" or \"ge\"");
        d.cut = Domain::Cut{axis - 1, c.value("offset", 0.0), keep == "le"};
    }
    return d;
}

inline std::vector<Expr> parse_map(const json& arr, int dim) {
    std::vector<Expr> out;
    for (const auto& e : arr) out.push_back(parse_expr(e.get<std::string>(), dim));
    return out;
}

}  // namespace detail

inline Window parse_window(const json& j, int dim) {
    Window w;
    if (j.is_null()) return w;
    if (j.contains("lo") || j.contains("hi")) w.global = detail::parse_box(j, dim);
    if (j.contains("per_chart"))
        for (const auto& [id, bx] : j.at("per_chart").items()) w.per_chart[id] = detail::parse_box(bx, dim);
    return w;
}

/// Manifold with (possibly empty) boundary from its JSON description.
inline ManifoldWithBoundary parse_manifold(const json& j) {
    try {
        auto atlas = std::make_shared<Atlas>();
        const int dim = j.at("dimension").get<int>();
        if (dim < 1) throw SpecError("dimension must be positive");
        atlas->dim = dim;
        for (const auto& c : j.at("charts")) {
            Chart ch;
            ch.id = c.at("id").get<std::string>();
            ch.domain = detail::parse_domain(c.at("domain"), dim);
            ch.metric = MetricExpr::parse(c.at("metric").get<std::vector<std::vector<std::string>>>(), dim);
            atlas->charts.push_back(std::move(ch));
        }
        if (atlas->charts.empty()) throw SpecError("no charts");
        if (j.contains("transitions"))
            for (const auto& t : j.at("transitions")) {
                TransitionMap tm;
                tm.from = atlas->chart_index(t.at("from").get<std::string>());
                tm.to = atlas->chart_index(t.at("to").get<std::string>());
                tm.forward = detail::parse_map(t.at("map"), dim);
                if (static_cast<int>(tm.forward.size()) != dim) throw SpecError("transition map has wrong arity");
                atlas->transitions.push_back(std::move(tm));
            }
        ManifoldWithBoundary man;
        man.atlas = atlas;
        // boundary components: the cut faces of the listed charts (default: every cut)
        std::vector<BoundaryComponent> cuts = boundary_from_cuts(*atlas);
        if (j.contains("boundary") && j.at("boundary").is_array()) {
            for (const auto& b : j.at("boundary")) {
                const int ci = atlas->chart_index(b.at("chart").get<std::string>());
                bool found = false;
                for (const auto& c : cuts)
                    if (c.chart == ci) {
                        man.boundary.push_back(c);
                        found = true;
                    }
                if (!found) throw SpecError("boundary chart '" + b.at("chart").get<std::string>() + "' has no cut");
            }
        } else {
            man.boundary = cuts;
        }
        return man;
    } catch (const json::exception& e) {
        throw SpecError(std::string("manifold spec: ") + e.what());
    } catch (const SyntaxError& e) {
        throw SpecError(std::string("manifold spec: ") + e.what());
    }
}

inline BoundaryDiffeo parse_eta(const json& j, int dim, std::size_t components) {
    if (j.is_null() || (j.is_string() && j.get<std::string>() == "identity")) return BoundaryDiffeo::identity(dim, components);
    BoundaryDiffeo d;
    try {
        for (const auto& c : j)
            d.components.push_back({detail::parse_map(c.at("forward"), dim - 1), detail::parse_map(c.at("inverse"), dim - 1)});
    } catch (const json::exception& e) {
        throw SpecError(std::string("eta: ") + e.what());
    } catch (const SyntaxError& e) {
        throw SpecError(std::string("eta: ") + e.what());
    }
    return d;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw SpecError("'" + path + "': " + e.what());
    }
}

// ---- output -------------------------------------------------------------------

/// Shortest round-trip decimal text of a double (identical on every run).
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

/// JSON-safe number (non-finite values become strings).
inline json jnum(double v) {
    if (std::isfinite(v)) return v;
    return fmt(v);
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) { row_strings(header); }

    CsvWriter& cell(const std::string& s) {
        if (!cur_.empty()) cur_ += ',';
        cur_ += s;
        return *this;
    }
    CsvWriter& cell(double v) { return cell(fmt(v)); }
    CsvWriter& cell(long long v) { return cell(std::to_string(v)); }
    CsvWriter& cell(int v) { return cell(std::to_string(v)); }
    CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
    void end_row() {
        out_ += cur_;
        out_ += '\n';
        cur_.clear();
    }
    const std::string& str() const { return out_; }

private:
    void row_strings(const std::vector<std::string>& r) {
        for (const auto& s : r) cell(s);
        end_row();
    }
    std::size_t cols_;
    std::string cur_, out_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
}

inline std::string dump(const json& j) {
    // ordered_json keeps insertion order and the serializer is deterministic;
    // doubles print with round-trip precision
    return j.dump(2) + "\n";
}

}  // namespace rext

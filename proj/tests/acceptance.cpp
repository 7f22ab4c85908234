// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rext/scenarios.hpp"

using namespace rext;

namespace {

struct Timed {
    PipelineResult r;
    double seconds = 0;
};

Timed run(const std::string& name, std::vector<std::string> stages = {}) {
    ScenarioConfig cfg;
    cfg.spec = builtin_scenario(name);
    cfg.stages = std::move(stages);
    const auto t0 = std::chrono::steady_clock::now();
    Timed t{run_pipeline(cfg), 0};
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return t;
}

const std::string* file(const PipelineResult& r, const std::string& name) {
    for (const auto& [n, c] : r.files)
        if (n == name) return &c;
    return nullptr;
}

json summary(const PipelineResult& r) { return json::parse(*file(r, "summary.json")).at("results"); }

double num(const json& v) { return v.is_number() ? v.get<double>() : (v == "inf" ? kInf : std::nan("")); }

class Line {
public:
    explicit Line(int id) : id_(id) {}
    void require(bool ok, const std::string& what) {
        if (!ok) {
            ok_ = false;
            fails_.push_back(what);
        }
    }
    void check(const PipelineResult& r, const std::string& name) {
        const Check* c = r.check(name);
        require(c && c->passed, r.scenario + ":" + name + (c ? " = " + fmt(c->value) : " missing"));
    }
    void note(const std::string& s) { notes_.push_back(s); }
    bool print() const {
        std::printf("criterion %d: %s", id_, ok_ ? "PASS" : "FAIL");
        std::string sep = "  (";
        for (const auto& n : notes_) {
            std::printf("%s%s", sep.c_str(), n.c_str());
            sep = "; ";
        }
        if (!notes_.empty()) std::printf(")");
        for (const auto& f : fails_) std::printf("\n    failed: %s", f.c_str());
        std::printf("\n");
        return ok_;
    }

private:
    int id_;
    bool ok_ = true;
    std::vector<std::string> notes_, fails_;
};

}  // namespace

int main() {
    std::map<std::string, Timed> first;
    for (const auto& s : list_scenarios()) first.emplace(s.name, run(s.name));
    bool all = true;

    {  // flat double
        Line l(1);
        const auto& t = first.at("flat_double");
        l.require(t.r.exit_code == 0, "exit code " + std::to_string(t.r.exit_code));
        for (const char* c : {"g_tilde_identity", "factor_identity", "geodesic_0_straight", "geodesic_1_straight"}) l.check(t.r, c);
        l.require(t.seconds <= 30, "runtime " + fmt(t.seconds) + " s");
        l.note("max |g~ - I| " + fmt(t.r.check("g_tilde_identity")->value));
        l.note("runtime " + std::to_string(static_cast<int>(t.seconds + 0.5)) + " s");
        all &= l.print();
    }
    {  // g_N restricted to M
        Line l(2);
        int n = 0;
        for (const auto& [name, t] : first) {
            if (builtin_scenario(name).at("kind") != "extension") continue;
            ++n;
            for (const char* c : {"g_tilde_equals_g_M_on_M", "g_N_equals_g_M_on_M", "in_M_paths_sampled", "in_M_path_length_rel"})
                l.check(t.r, c);
        }
        l.require(n >= 6, "only " + std::to_string(n) + " gluing scenarios");
        l.note(std::to_string(n) + " gluing scenarios, 100 paths each");
        all &= l.print();
    }
    {  // circle boundary collar
        Line l(3);
        const auto& t = first.at("disk_patch");
        l.require(t.r.exit_code == 0, "exit code " + std::to_string(t.r.exit_code));
        for (const char* c : {"drho_within_1_plus_eps", "lipschitz_path_ratio", "tangential_stretch_rel"}) l.check(t.r, c);
        l.require(t.seconds <= 60, "runtime " + fmt(t.seconds) + " s");
        if (auto* c = t.r.check("lipschitz_path_ratio")) l.note("max ratio " + fmt(c->value));
        if (auto* c = t.r.check("tangential_stretch_rel")) l.note("stretch rel err " + fmt(c->value));
        all &= l.print();
    }
    {  // cusp certificates and crossing audits
        Line l(4);
        const auto& t = first.at("cusp_tail");
        l.require(t.r.exit_code == 0, "exit code " + std::to_string(t.r.exit_code));
        for (const char* c : {"q1_levels_present", "q1_closed_form_rel", "crossing_audit"}) l.check(t.r, c);
        // per-row audit figures straight from the table
        std::istringstream csv(*file(t.r, "crossing.csv"));
        std::string row;
        std::getline(csv, row);
        std::size_t rows_a = 0, pairs_b = 0;
        while (std::getline(csv, row)) {
            std::vector<std::string> f;
            std::stringstream rs(row);
            for (std::string x; std::getline(rs, x, ',');) f.push_back(x);
            const std::size_t pairs = std::stoul(f[3]);
            if (pairs == 0) continue;
            const double worst = std::stod(f[4]);
            if (f[0] == "a") {
                ++rows_a;
                l.require(pairs >= 50, "audit (a) row with " + f[3] + " pairs");
                l.require(worst >= 0.95, "audit (a) j=" + f[1] + " worst " + f[4]);
            } else {
                pairs_b += pairs;
                l.require(worst >= 0.95, "audit (b) j=" + f[1] + " ratio " + f[4]);
            }
        }
        l.require(rows_a >= 6, "audit (a) covers " + std::to_string(rows_a) + " components");
        const std::size_t all_b = summary(t.r).at("crossing_audit").at("pairs_b").get<std::size_t>();
        l.require(all_b >= 9900, "audit (b) pairs " + std::to_string(all_b));
        l.require(t.seconds <= 300, "runtime " + fmt(t.seconds) + " s");
        l.note("q1 rel err " + fmt(t.r.check("q1_closed_form_rel") ? t.r.check("q1_closed_form_rel")->value : std::nan("")));
        l.note("(a) " + std::to_string(rows_a) + " components x 50 pairs, (b) " + std::to_string(pairs_b) + " pairs");
        l.note("runtime " + std::to_string(static_cast<int>(t.seconds + 0.5)) + " s");
        all &= l.print();
    }
    {  // completeness growth and the negative control
        Line l(5);
        const auto& t = first.at("cusp_tail");
        const json c = summary(t.r).at("completeness");
        l.require(c.at("verdict") == "complete-up-to-budget", "verdict " + c.at("verdict").get<std::string>());
        const json me = c.at("min_exit_length");
        double worst = kInf;
        for (int j = 1; j <= 5; ++j) worst = std::min(worst, num(me[static_cast<std::size_t>(j)]) - num(me[static_cast<std::size_t>(j - 1)]));
        l.require(worst >= 0.95, "smallest growth per annulus " + fmt(worst));
        const json rep = json::parse(*file(t.r, "completeness.json")).at("report");
        l.require(rep.at("samples").size() >= 32, "only " + std::to_string(rep.at("samples").size()) + " divergent samples");
        const auto neg = run("cusp_tail", {"glue", "extend", "collar", "certify"});
        const double wl = num(summary(neg.r).at("completeness").at("witness_length"));
        l.require(neg.r.exit_code != 0, "undeformed cusp exits 0");
        l.require(wl <= 1.1, "undeformed witness length " + fmt(wl));
        const auto neg2 = run("two_tail", {"glue", "extend", "collar", "certify"});
        l.require(first.at("two_tail").r.exit_code == 0 && neg2.r.exit_code != 0, "two-tail negative control does not flip");
        l.note("min growth " + fmt(worst));
        l.note("undeformed witness " + fmt(wl) + ", exit " + std::to_string(neg.r.exit_code));
        all &= l.print();
    }
    {  // Hopf-Rinow diagnostics
        Line l(6);
        const auto& d = first.at("open_disk");
        const auto& h = first.at("half_plane");
        for (const char* c : {"verdict_incomplete-witness-found", "witness_length"}) l.check(d.r, c);
        for (const char* c : {"verdict_complete-up-to-budget", "exit_length_over_radius"}) l.check(h.r, c);
        if (auto* c = d.r.check("witness_length")) l.note("disk witness " + fmt(c->value));
        all &= l.print();
    }
    {  // geodesy kernels
        Line l(7);
        for (const char* s : {"sphere_suite", "hyperbolic_suite", "flat_plane"}) {
            l.check(first.at(s).r, "curvature_constant");
            l.check(first.at(s).r, "riccati_closed_form");
        }
        l.check(first.at("sphere_suite").r, "geodesic_0_closed");
        l.check(first.at("sphere_suite").r, "geodesic_1_closed");
        l.check(first.at("convex_disk").r, "bending_sign_kept");
        l.check(first.at("convex_disk").r, "bending_max");
        if (auto* c = first.at("sphere_suite").r.check("geodesic_0_closed")) l.note("great circle return " + fmt(c->value));
        all &= l.print();
    }
    {  // exhaustion and cutoff
        Line l(8);
        const auto& t = first.at("flat_plane");
        for (const char* c : {"rho_gradient", "rho_outside_window", "cutoff_sup_ratio_dev"}) l.check(t.r, c);
        if (auto* c = t.r.check("rho_gradient")) l.note("max |grad rho| " + fmt(c->value));
        if (auto* c = t.r.check("cutoff_sup_ratio_dev")) l.note("cutoff ratio deviation " + fmt(c->value));
        all &= l.print();
    }
    {  // determinism
        Line l(9);
        std::size_t files = 0;
        for (const auto& [name, t] : first) {
            const auto again = run(name);
            l.require(again.r.files.size() == t.r.files.size(), name + ": different artifact sets");
            for (std::size_t i = 0; i < std::min(again.r.files.size(), t.r.files.size()); ++i) {
                l.require(again.r.files[i] == t.r.files[i], name + ": " + t.r.files[i].first + " differs");
                ++files;
            }
        }
        l.note(std::to_string(files) + " artifacts compared across " + std::to_string(first.size()) + " scenarios");
        all &= l.print();
    }
    return all ? 0 : 1;
}

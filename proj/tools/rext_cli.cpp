// rext_cli: list and run the built-in scenarios or a scenario file.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rext/scenarios.hpp"

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string part; std::getline(in, part, sep);)
        if (!part.empty()) out.push_back(part);
    return out;
}

rext::Window parse_window_flag(const std::string& text) {
    std::vector<double> v;
    for (const auto& p : split(text, ',')) v.push_back(std::stod(p));
    if (v.size() != 4) throw rext::SpecError("--window expects lo1,lo2,hi1,hi2");
    return rext::Window{rext::Box{{v[0], v[1]}, {v[2], v[3]}}, {}};
}

void print_result(const rext::PipelineResult& r) {
    for (const auto& c : r.checks)
        std::cout << (c.passed ? "  ok    " : "  FAIL  ") << c.name << "  " << rext::fmt(c.value) << ' ' << c.op << ' '
                  << rext::fmt(c.bound) << '\n';
    if (!r.error_stage.empty()) std::cout << "  error in stage '" << r.error_stage << "': " << r.error_message << '\n';
    std::cout << r.scenario << ": exit " << r.exit_code << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Riemannian extension pipeline"};
    app.require_subcommand(1);

    auto* list = app.add_subcommand("list", "list built-in scenarios");
    std::string filter;
    list->add_option("filter,--scenario", filter, "substring of the scenario name");

    auto* show = app.add_subcommand("show", "print a built-in scenario as JSON");
    std::string show_name;
    show->add_option("name", show_name)->required();

    auto* run = app.add_subcommand("run", "run a scenario");
    std::string scenario, spec_path, stages, window, out_dir;
    double resolution = 0, epsilon = 0;
    std::uint64_t seed = 1;
    auto* o_scen = run->add_option("--scenario", scenario, "built-in scenario name, or 'all'");
    auto* o_spec = run->add_option("--spec", spec_path, "scenario JSON file")->check(CLI::ExistingFile);
    o_scen->excludes(o_spec);
    run->add_option("--stages", stages, "comma-separated stage list");
    auto* o_res = run->add_option("--resolution", resolution, "mesh spacing h");
    auto* o_win = run->add_option("--window", window, "global window lo1,lo2,hi1,hi2");
    auto* o_eps = run->add_option("--epsilon", epsilon, "collar Lipschitz slack");
    run->add_option("--seed", seed, "run seed");
    auto* o_out = run->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    if (*list) {
        for (const auto& s : rext::list_scenarios(filter)) std::cout << s.name << '\t' << s.kind << '\t' << s.description << '\n';
        return 0;
    }
    if (*show) {
        try {
            std::cout << rext::builtin_scenario(show_name).dump(2) << '\n';
        } catch (const rext::SpecError& e) {
            std::cerr << e.what() << '\n';
            return 3;
        }
        return 0;
    }

    if (!*o_out) {
        const char* env = std::getenv("REXT_OUT_DIR");
        out_dir = env && *env ? env : "rext_out";
    }
    std::vector<rext::json> specs;
    try {
        if (*o_spec) specs.push_back(rext::load_scenario_file(spec_path));
        else if (scenario == "all")
            for (const auto& s : rext::list_scenarios()) specs.push_back(rext::builtin_scenario(s.name));
        else if (!scenario.empty()) specs.push_back(rext::builtin_scenario(scenario));
        else throw rext::SpecError("run needs --scenario or --spec");
    } catch (const rext::SpecError& e) {
        std::cerr << "spec error: " << e.what() << '\n';
        return 3;
    }

    int worst = 0;
    for (const auto& spec : specs) {
        rext::ScenarioConfig cfg;
        cfg.spec = spec;
        cfg.stages = split(stages, ',');
        cfg.seed = seed;
        if (*o_res) cfg.resolution = resolution;
        if (*o_eps) cfg.epsilon = epsilon;
        rext::PipelineResult r;
        try {
            if (*o_win) cfg.window = parse_window_flag(window);
            r = rext::run_pipeline(cfg);
        } catch (const std::exception& e) {
            std::cerr << "spec error: " << e.what() << '\n';
            return 3;
        }
        try {
            rext::write_artifacts(r, (std::filesystem::path(out_dir) / r.scenario).string());
        } catch (const std::exception& e) {
            std::cerr << "cannot write outputs: " << e.what() << '\n';
            return 3;
        }
        print_result(r);
        worst = std::max(worst, r.exit_code);
    }
    return worst;
}

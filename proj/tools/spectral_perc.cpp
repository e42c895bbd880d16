#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "experiments.hpp"

namespace {

using namespace spectral_perc;
using namespace spectral_perc::cli;

enum Exit { kPass = 0, kCheckFailed = 1, kConfigError = 2 };

// "-" selects stdout; files are appended to.
std::unique_ptr<std::ostream> open_out(const std::string& path, bool append)
{
    if (path == "-") return nullptr;
    auto f = std::make_unique<std::ofstream>(path, append ? std::ios::app : std::ios::trunc);
    if (!*f) throw ConfigError("cannot open " + path + " for writing");
    return f;
}

int run_report(const std::string& in_path, const std::string& kind, const std::string& experiment,
               const std::string& quantity, const std::string& param, const std::string& out_path)
{
    std::ifstream in(in_path);
    if (!in) throw ConfigError("cannot read " + in_path);
    const auto records = read_jsonl(in);
    auto file = open_out(out_path, false);
    std::ostream& out = file ? *file : std::cout;
    if (kind == "csv") {
        std::vector<ResultRecord> keep;
        for (const auto& r : records)
            if ((experiment.empty() || r.experiment == experiment) && (quantity.empty() || r.quantity == quantity))
                keep.push_back(r);
        write_csv(keep, out);
        return kPass;
    }
    if (kind != "slope") throw ConfigError("unknown report kind '" + kind + "' (csv, slope)");
    const auto rep = fit_records(records, experiment, quantity, param);
    out << "x,value,stderr\n";
    for (std::size_t i = 0; i < rep.x.size(); ++i)
        out << json(rep.x[i]).dump() << ',' << json(rep.y[i]).dump() << ',' << json(rep.se[i]).dump() << '\n';
    const json summary{{"experiment", experiment}, {"quantity", quantity}, {"param", param},
                       {"slope", rep.fit.slope},   {"stderr", rep.fit.slope_stderr},
                       {"intercept", rep.fit.intercept}, {"points", rep.fit.points}, {"weighted", rep.weighted}};
    std::cerr << summary.dump() << '\n';
    if (file) std::cout << summary.dump() << '\n';
    return kPass;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Spectral sample and noise experiments for critical planar percolation"};
    app.set_version_flag("--version", kVersion);

    ExperimentConfig cfg;
    std::string lattice = "tri";
    std::string in_path, report_kind = "slope", quantity, param = "R", filter;

    std::string names;
    for (const auto& [name, fn] : experiments()) names += (names.empty() ? "" : ", ") + name;
    app.add_option("experiment", cfg.experiment, "Experiment to run, or 'report': " + names)->required();
    app.add_option("--lattice", lattice, "tri | z2")->capture_default_str();
    app.add_option("--shape", cfg.shape, "rectangle | annulus | half | quarter")->capture_default_str();
    app.add_option("--geometry", cfg.geometry, "Arm events: full | half | quarter")->capture_default_str();
    app.add_option("--R", cfg.R, "Outer radius or rectangle side")->capture_default_str();
    app.add_option("--r", cfg.r, "Inner radius")->capture_default_str();
    app.add_option("--r2", cfg.r2, "Middle radius for quasimult (0: geometric mean)")->capture_default_str();
    app.add_option("--j", cfg.j, "Number of arms")->capture_default_str();
    app.add_option("--radii", cfg.radii, "Comma-separated outer radii")->delimiter(',');
    app.add_option("--eps", cfg.eps, "Comma-separated noise levels")->delimiter(',');
    app.add_option("--t", cfg.t, "Comma-separated times")->delimiter(',');
    app.add_option("--lambda", cfg.lambda, "Comma-separated lower-tail levels")->delimiter(',');
    app.add_option("--samples", cfg.samples, "Monte Carlo replicas (instances for ldp-check)")->capture_default_str();
    app.add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
    app.add_option("--gamma", cfg.gamma, "Energy exponent")->capture_default_str();
    app.add_option("--density", cfg.density, "Density of the thinning set")->capture_default_str();
    app.add_option("--cell", cfg.cell, "Box half-side or coarse cell size")->capture_default_str();
    app.add_option("--w-density", cfg.w_density, "Density of resampled cells (quasimult on coupled pairs)")->capture_default_str();
    app.add_option("--choices", cfg.choices, "Random set choices for coupled-prob and lambda-sq")->capture_default_str();
    app.add_flag("--compare-paths", cfg.compare_paths, "dynamics-corr: also compare noise and clock paths");
    app.add_option("--kind", cfg.kind, "ldp-check instances: thinning | spectral-derived | adversarial-random")->capture_default_str();
    app.add_option("--n", cfg.coords, "ldp-check coordinate count")->capture_default_str();
    app.add_option("--bit-cap", cfg.bit_cap, "Largest bit count enumerated exactly")->capture_default_str();
    app.add_option("--out", cfg.out, "Output path (JSONL, appended; '-' for stdout)")->required();
    app.add_option("--csv", cfg.csv, "Also write the records as CSV");
    app.add_option("--in", in_path, "report: input JSONL");
    app.add_option("--report", report_kind, "report: csv | slope")->capture_default_str();
    app.add_option("--quantity", quantity, "report: record quantity to keep");
    app.add_option("--param", param, "report: sweep variable for the slope")->capture_default_str();
    app.add_option("--filter", filter, "report: experiment to keep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (cfg.experiment == "report") {
            if (in_path.empty()) throw ConfigError("report needs --in");
            return run_report(in_path, report_kind, filter, quantity, param, cfg.out);
        }
        try {
            cfg.lattice = parse_lattice(lattice);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        validate(cfg);
        auto file = open_out(cfg.out, true);
        const auto res = run(cfg);
        write_jsonl(res.records, file ? *file : std::cout);
        if (!cfg.csv.empty()) {
            auto csv = open_out(cfg.csv, false);
            write_csv(res.records, csv ? *csv : std::cout);
        }
        for (const auto& note : res.notes) std::cerr << "check failed: " << note << '\n';
        std::cerr << cfg.experiment << ": " << res.records.size() << " records, " << (res.ok ? "pass" : "FAIL") << '\n';
        return res.ok ? kPass : kCheckFailed;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

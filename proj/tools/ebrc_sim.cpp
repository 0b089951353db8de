#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ebrc/harness.hpp"

namespace fs = std::filesystem;
using namespace ebrc;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kSafety = 2;

int status_of(const harness::MetricsReport& r) {
    if (r.safety_violation) {
        std::cerr << r.name << ": safety violation: " << r.safety_detail << '\n';
        return kSafety;
    }
    if (!r.error.empty()) {
        std::cerr << r.name << ": " << r.error << '\n';
        return kUsage;
    }
    return kOk;
}

std::string safe_name(std::string s) {
    for (auto& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reputation-based committee consensus simulator with a PBFT baseline"};
    app.require_subcommand(1);
    bool trace = false;
    app.add_flag("--trace", trace, "Write the message event log (trace.log) next to each report");

    auto* run = app.add_subcommand("run", "Run one scenario");
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    run->add_option("--scenario", scenario, "Scenario file (JSON)")->required();
    run->add_option("--seed", seed, "Seed overriding the scenario's own");
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_flag("--trace", trace, "Write the message event log");

    auto* cmp = app.add_subcommand("compare", "Run several scenarios and summarise them side by side");
    std::vector<std::string> scenarios;
    std::string cmp_out;
    std::optional<std::uint64_t> cmp_seed;
    cmp->add_option("--scenarios", scenarios, "Scenario files")->required()->expected(1, -1);
    cmp->add_option("--out", cmp_out, "Output directory")->required();
    cmp->add_option("--seed", cmp_seed, "Seed applied to every scenario");
    cmp->add_flag("--trace", trace, "Write the message event log");

    auto* fair = app.add_subcommand("fairness", "Election fairness study over equal-reputation nodes");
    std::size_t nodes = 20;
    std::size_t epochs = 1000;
    bool poison_odd = false;
    std::uint64_t fair_seed = 1;
    std::string fair_out;
    fair->add_option("--nodes", nodes, "Number of nodes")->required()->check(CLI::Range(std::size_t{4}, std::size_t{100000}));
    fair->add_option("--epochs", epochs, "Number of epochs")->required()->check(CLI::PositiveNumber);
    fair->add_flag("--poison-odd", poison_odd, "Give odd ids confirmed misbehaviour reports first");
    fair->add_option("--seed", fair_seed, "Seed");
    fair->add_option("--out", fair_out, "Output directory for fairness.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*run) {
            auto config = harness::load_scenario(scenario);
            if (seed) config.seed = *seed;
            const auto report = harness::run_scenario(config, trace);
            harness::write_outputs(out_dir, report);
            std::cout << harness::metrics_csv({report});
            return status_of(report);
        }
        if (*cmp) {
            std::vector<harness::ScenarioConfig> configs;
            for (const auto& f : scenarios) {
                configs.push_back(harness::load_scenario(f));
                if (cmp_seed) configs.back().seed = *cmp_seed;
            }
            std::vector<harness::MetricsReport> reports;
            int status = kOk;
            for (std::size_t i = 0; i < configs.size(); ++i) {
                reports.push_back(harness::run_scenario(configs[i], trace));
                const auto dir = fs::path(cmp_out) / (std::to_string(i) + "_" + safe_name(configs[i].name));
                harness::write_outputs(dir.string(), reports.back());
                const auto s = status_of(reports.back());
                if (s == kSafety || status == kOk) status = std::max(status, s);
            }
            fs::create_directories(cmp_out);
            std::ofstream(fs::path(cmp_out) / "compare.json") << harness::compare(reports).dump(2) << '\n';
            std::ofstream(fs::path(cmp_out) / "metrics.csv") << harness::metrics_csv(reports);
            std::cout << harness::metrics_csv(reports);
            return status;
        }
        if (*fair) {
            const auto report = harness::run_fairness(nodes, epochs, poison_odd, fair_seed);
            const auto doc = harness::to_json(report).dump(2);
            if (!fair_out.empty()) {
                fs::create_directories(fair_out);
                std::ofstream(fs::path(fair_out) / "fairness.json") << doc << '\n';
            }
            std::cout << doc << '\n';
            return kOk;
        }
    } catch (const harness::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}

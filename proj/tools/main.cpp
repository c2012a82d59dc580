// Experiment runner: loads a scenario (zoo + cluster + profiles + workload),
// simulates it under the selected serving mode, and emits report artifacts.
// Inspection subcommands expose the zoo partition, the equivalence graph, and
// the parameter-redundancy accounting; `compare` lines up finished reports.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "blocksim/config.hpp"
#include "blocksim/engine.hpp"
#include "blocksim/scenario.hpp"
#include "blocksim/zoo.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ZooArgs {
    std::string zoo_path;
    std::string signatures_dir;
    double threshold = 0.98;
    int groups = 0;
};

void add_zoo_options(CLI::App* cmd, ZooArgs& args) {
    cmd->add_option("--zoo", args.zoo_path, "Model zoo description (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--signatures", args.signatures_dir,
                    "Directory with per-model signature files");
    cmd->add_option("--threshold", args.threshold, "Equivalence similarity threshold")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--groups", args.groups,
                    "Override the layer-group count for cross-depth comparison");
}

blocksim::Zoo load_zoo_args(const ZooArgs& args) {
    return blocksim::load_zoo(args.zoo_path, args.threshold, args.groups, args.signatures_dir);
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out_dir, const std::string& mode,
            const std::vector<std::string>& ablations, bool quiet) {
    blocksim::ScenarioConfig cfg = blocksim::load_scenario(config_path);
    if (!mode.empty()) blocksim::apply_override(cfg, "mode", mode);
    if (seed.has_value()) blocksim::apply_override(cfg, "seed", std::to_string(*seed));
    for (const std::string& kv : ablations) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw blocksim::ConfigError("--ablation expects key=value, got: " + kv);
        blocksim::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg = blocksim::effective_config(cfg);

    blocksim::Zoo zoo = blocksim::load_zoo(cfg.zoo_path, cfg.equivalence_threshold,
                                           cfg.override_groups, cfg.signatures_dir);
    blocksim::Cluster cluster = blocksim::load_cluster(cfg.cluster_path);
    blocksim::CostModel cost = blocksim::load_profiles(cfg.profiles_path);
    blocksim::Simulation sim(cfg, zoo, std::move(cluster), std::move(cost),
                             blocksim::build_workload(cfg));
    const ordered_json report = sim.run();

    if (!out_dir.empty()) {
        sim.metrics().write_outputs(out_dir, report);
        if (!quiet)
            std::cout << "wrote " << out_dir << "/report.json ("
                      << report["requests"]["completed"] << " of "
                      << report["requests"]["arrived"] << " requests completed)\n";
    } else {
        std::cout << report.dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_partition(const ZooArgs& args) {
    blocksim::Zoo zoo = load_zoo_args(args);
    ordered_json j;
    j["threshold"] = args.threshold;
    j["block_count"] = zoo.block_count();
    ordered_json blocks = ordered_json::array();
    for (const auto& id : zoo.block_ids()) {
        const auto& b = zoo.block(id);
        ordered_json e;
        e["id"] = b.id;
        e["param_bytes"] = b.param_bytes;
        e["embed_dim_in"] = b.embed_dim_in;
        e["embed_dim_out"] = b.embed_dim_out;
        ordered_json comps = ordered_json::array();
        for (const auto& c : zoo.block_components(id)) comps.push_back(c.id);
        e["components"] = comps;
        blocks.push_back(std::move(e));
    }
    j["blocks"] = std::move(blocks);
    ordered_json models = ordered_json::array();
    for (const auto& mid : zoo.model_ids()) {
        const auto& m = zoo.model(mid);
        ordered_json e;
        e["id"] = m.id;
        e["tuning"] = blocksim::tuning_kind_name(m.tuning);
        e["chain"] = m.chain;
        e["shared_fraction"] = m.shared_fraction;
        models.push_back(std::move(e));
    }
    j["models"] = std::move(models);
    j["warnings"] = zoo.warnings();
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_equiv(const ZooArgs& args) {
    blocksim::Zoo zoo = load_zoo_args(args);
    ordered_json j;
    j["threshold"] = args.threshold;
    ordered_json edges = ordered_json::array();
    for (const auto& edge : zoo.equivalence_edges()) {
        ordered_json e;
        e["a"] = edge.a;
        e["b"] = edge.b;
        e["score"] = edge.score;
        edges.push_back(std::move(e));
    }
    j["edges"] = std::move(edges);
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_redundancy(const ZooArgs& args, std::vector<std::string> models) {
    blocksim::Zoo zoo = load_zoo_args(args);
    if (models.empty()) models = zoo.model_ids();
    const auto r = zoo.redundancy_report(models);
    ordered_json j;
    j["models"] = models;
    j["naive_bytes"] = r.naive_bytes;
    j["dedup_bytes"] = r.dedup_bytes;
    j["redundancy_fraction"] = r.redundancy_fraction;
    j["duplicate_copy_fraction"] = r.duplicate_copy_fraction;
    j["switch_overhead_fraction"] = r.switch_overhead_fraction;
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

ordered_json read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw blocksim::ConfigError("cannot read report: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw blocksim::ConfigError(path + ": " + e.what());
    }
    return j;
}

int cmd_compare(const std::vector<std::string>& paths) {
    std::vector<ordered_json> reports;
    for (const auto& p : paths) reports.push_back(read_report(p));
    const std::string digest = reports.front().value("workload_digest", "");
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].value("workload_digest", "") != digest)
            throw blocksim::ConfigError("workload digest mismatch: " + paths[0] + " vs " +
                                        paths[i] + " (reports must share one workload)");
    }

    auto metric = [](const ordered_json& r, std::initializer_list<const char*> keys) {
        const ordered_json* cur = &r;
        for (const char* k : keys) cur = &(*cur).at(k);
        return cur->get<double>();
    };
    ordered_json j;
    j["workload_digest"] = digest;
    j["baseline"] = reports.front().value("name", paths.front());
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        ordered_json row;
        row["name"] = r.value("name", paths[i]);
        row["mode"] = r.value("mode", "");
        row["p50_us"] = metric(r, {"latency", "p50_us"});
        row["p95_us"] = metric(r, {"latency", "p95_us"});
        row["throughput_tokens_per_s"] = metric(r, {"throughput_tokens_per_s"});
        row["comm_bytes"] = metric(r, {"comm", "bytes"});
        row["util_proxy"] = metric(r, {"util_proxy", "mean"});
        ordered_json ratios;
        const auto& base = reports.front();
        auto ratio = [&](std::initializer_list<const char*> keys) {
            const double b = metric(base, keys);
            return b != 0.0 ? metric(r, keys) / b : 0.0;
        };
        ratios["p50"] = ratio({"latency", "p50_us"});
        ratios["p95"] = ratio({"latency", "p95_us"});
        ratios["throughput"] = ratio({"throughput_tokens_per_s"});
        ratios["comm"] = ratio({"comm", "bytes"});
        ratios["util"] = ratio({"util_proxy", "mean"});
        row["vs_baseline"] = std::move(ratios);
        rows.push_back(std::move(row));
    }
    j["reports"] = std::move(rows);
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Block-granularity multi-model serving simulator"};
    app.require_subcommand(1);

    // run
    std::string config_path, out_dir, mode;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> ablations;
    bool quiet = false;
    CLI::App* run = app.add_subcommand("run", "Simulate a scenario and emit a report");
    run->add_option("--config", config_path, "Scenario file (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out_dir,
                    "Output directory (report.json, latency_cdf.csv, timeseries.csv, "
                    "decisions.log); prints the report to stdout when omitted");
    run->add_option("--mode", mode, "Serving mode")
        ->check(CLI::IsMember({"block", "per_model", "param_share"}));
    run->add_option("--ablation", ablations, "key=value scenario override (repeatable)");
    run->add_flag("--quiet", quiet, "Suppress the completion summary line");

    // zoo inspection
    ZooArgs part_args, equiv_args, red_args;
    std::vector<std::string> red_models;
    CLI::App* part = app.add_subcommand("partition", "Print the block partition of a zoo");
    add_zoo_options(part, part_args);
    CLI::App* equiv = app.add_subcommand("equiv", "Print the block equivalence graph");
    add_zoo_options(equiv, equiv_args);
    CLI::App* red =
        app.add_subcommand("redundancy", "Parameter-redundancy accounting across models");
    add_zoo_options(red, red_args);
    red->add_option("--models", red_models, "Restrict to these model ids");

    // compare
    std::vector<std::string> report_paths;
    CLI::App* cmp = app.add_subcommand("compare", "Line up reports from one workload");
    cmp->add_option("reports", report_paths, "report.json files (first is the baseline)")
        ->required()
        ->expected(2, -1)
        ->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, seed, out_dir, mode, ablations, quiet);
        if (part->parsed()) return cmd_partition(part_args);
        if (equiv->parsed()) return cmd_equiv(equiv_args);
        if (red->parsed()) return cmd_redundancy(red_args, red_models);
        if (cmp->parsed()) return cmd_compare(report_paths);
    } catch (const blocksim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const blocksim::SimAbort& e) {
        std::cerr << "runtime abort: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

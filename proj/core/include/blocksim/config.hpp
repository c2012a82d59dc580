#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"

#include "blocksim/cluster.hpp"
#include "blocksim/costmodel.hpp"
#include "blocksim/time.hpp"
#include "blocksim/workload.hpp"
#include "blocksim/zoo.hpp"

namespace blocksim {

// Raised for malformed configuration (maps to exit code 2 in the CLI, as
// opposed to runtime aborts which map to 3).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class ServeMode : std::uint8_t { kBlock, kPerModel, kParamShare };
const char* serve_mode_name(ServeMode m);
ServeMode serve_mode_from(const std::string& s);

enum class PlacementPolicy : std::uint8_t { kLocality, kFragMin };
const char* placement_policy_name(PlacementPolicy p);
PlacementPolicy placement_policy_from(const std::string& s);

// Everything a simulation run needs, resolved and validated. Paths inside a
// scenario file are relative to the file's directory.
struct ScenarioConfig {
    std::string name = "scenario";
    std::string zoo_path;
    std::string cluster_path;
    std::string profiles_path;
    std::string signatures_dir;          // optional; "<model>.sig" per model
    std::string trace_path;              // optional: replay instead of synthetic
    std::string arrivals_path;           // optional: exact arrivals file
    WorkloadSpec workload;

    ServeMode mode = ServeMode::kBlock;
    std::uint64_t seed = 1;

    double equivalence_threshold = 0.98;
    int override_groups = 0;

    SimTime review_period_us = us_from_s(60);
    SimTime kv_review_period_us = us_from_s(1);
    SimTime metrics_tick_us = us_from_s(1);

    int max_batch_tokens = 2048;
    int expected_tokens = 256;
    SimTime scale_queue_us = 0;  // queue-delay scale-out trigger, 0 = length rule only
    bool scaling = true;         // dynamic scale-out / placement reviews

    bool speculation = true;
    double spec_fraction = 0.10;
    double spec_accept_prob = 192.0 / 231.0;
    double spec_alpha = 1.0;

    bool adaptive = true;
    bool kv_recalc_only = false;
    bool least_busy = false;
    PlacementPolicy placement = PlacementPolicy::kLocality;

    double ps_branch_surcharge = 0.08;
};

// Scenario files support one level of composition: an "include" key names a
// base file loaded first, with the including file's keys overlaid (objects
// merge recursively, scalars and arrays replace).
ScenarioConfig load_scenario(const std::string& path);
ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::string& base_dir);

// Applies a `key=value` override (the CLI's --ablation flag) onto the
// scenario's knobs. Unknown keys throw ConfigError.
void apply_override(ScenarioConfig& cfg, const std::string& key, const std::string& value);

Zoo load_zoo(const std::string& path, double threshold, int override_groups,
             const std::string& signatures_dir = "");
Cluster load_cluster(const std::string& path);
CostModel load_profiles(const std::string& path);

// Signature file: one line per layer, `layer p0 p1 ...`.
std::vector<LayerSignature> load_signatures(const std::string& path, const std::string& model_id);

}  // namespace blocksim

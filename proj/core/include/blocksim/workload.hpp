#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blocksim/time.hpp"

namespace blocksim {

struct Request {
    std::uint64_t id = 0;
    int app_id = 0;
    SimTime arrival_us = 0;
    int prompt_tokens = 0;
    int output_tokens = 0;
    // Requests in the same group share a common prompt prefix (KV pages of
    // the prefix can be deduplicated). -1: no shared prefix.
    int prefix_group = -1;
    int prefix_tokens = 0;
};

struct WorkloadSpec {
    int n_apps = 1;
    SimTime duration_us = us_from_s(60);
    int total_requests = 100;
    int prompt_min = 64;
    int prompt_max = 512;
    int output_min = 32;
    int output_max = 512;
    int total_token_cap = 1024;
    // Fraction of an app's requests that reuse the app's shared prefix.
    double prefix_share_fraction = 0.0;
    int prefix_tokens = 64;
};

// Synthetic multi-app workload:
//  - per-app load weights drawn U(0,1), request counts apportioned by
//    largest remainder (ties to the lower app id);
//  - each app's arrivals are a Poisson process conditioned on its exact
//    count (normalized exponential gaps), sorted within [0, duration);
//  - prompt/output lengths uniform in their ranges, total capped.
// Deterministic in (spec, seed).
std::vector<Request> generate_workload(const WorkloadSpec& spec, std::uint64_t seed);

// Replays an external arrival-rate trace: each line is
// `epoch_seconds[,count]` (count defaults to 1). Counts are bucketed per
// epoch second, the bucket rates are linearly mapped onto [1, 45] requests/s
// (all-equal traces map to the midpoint 23), and bucket i becomes simulated
// second i with its requests evenly spaced. Lengths and app assignment
// follow `spec`. Throws if the file is missing, has no valid rows, or more
// than 1% of its rows are malformed.
std::vector<Request> replay_trace(const std::string& path, const WorkloadSpec& spec,
                                  std::uint64_t seed);

// Arrivals file: header plus `t_us,app_id,prompt_tokens,output_tokens
// [,prefix_group,prefix_tokens]` rows.
void save_arrivals(const std::string& path, const std::vector<Request>& requests);
std::vector<Request> load_arrivals(const std::string& path);

// FNV-1a digest over the canonical serialization; guards comparisons across
// runs and modes (identical workloads have identical digests).
std::uint64_t workload_digest(const std::vector<Request>& requests);

}  // namespace blocksim

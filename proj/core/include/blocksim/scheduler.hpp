#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "blocksim/agent.hpp"
#include "blocksim/cluster.hpp"
#include "blocksim/config.hpp"
#include "blocksim/costmodel.hpp"
#include "blocksim/kv.hpp"
#include "blocksim/zoo.hpp"

namespace blocksim {

// Latency estimate for running one step on one candidate target, decomposed
// into the four phases a request can spend time in. All terms are pure
// ratios of work to rates, so uniformly scaling compute profiles by k and
// bandwidths by 1/k rescales every estimate by k without reordering them.
struct EstimateBreakdown {
    double queue_us = 0.0;
    double compute_us = 0.0;
    double transfer_us = 0.0;
    double load_us = 0.0;
    double total_us() const { return queue_us + compute_us + transfer_us + load_us; }
};

// Where one chain step should run: an existing instance, or a new instance
// (instance_id empty) to create on `device`, possibly after evictions.
struct BindingChoice {
    std::string block_id;       // serving block (equivalent of the chain block when adaptive)
    std::string stitch_class;   // entry stitch cost class, empty for direct entry
    std::string instance_id;    // empty -> create a new instance on `device`
    int device = -1;
    bool adaptive = false;      // serving block differs from the chain block
    std::int64_t evict_bytes = 0;  // idle-eviction needed before creation
    EstimateBreakdown est;
};

struct BindingQuery {
    std::uint64_t request_id = 0;
    std::string chain_block;  // the request chain's own block for this step
    Phase phase = Phase::kPrefill;
    int tokens = 0;           // batch-budget tokens (prompt length / 1)
    int context_tokens = 0;   // sequence length for the duration lookup
    int from_device = -1;     // previous step's device (-1 at chain entry)
    SimTime now = 0;
};

struct ScaleDecision {
    std::string instance_id;  // overloaded source
    int device = -1;          // target for the new sibling instance
};

struct PlacementMove {
    std::string instance_id;
    int dst_device = -1;
};

enum class DevicePreference : std::uint8_t { kLocality, kTightestFit, kMostFree };

// All policy: dispatch target choice via the latency estimator, scale-out
// reviews, speculative-execution marking, and placement. Pure decisions over
// pool/kv/ledger state; the simulation applies them.
class Scheduler {
  public:
    Scheduler(const Zoo& zoo, const CostModel& cost, const Cluster& cluster,
              MemoryLedger& ledger, InstancePool& pool, KvStore& kv,
              const ScenarioConfig& cfg);

    // Picks the lowest-estimate candidate for a step: every instance of every
    // acceptable block, plus (only when the best block has no instance at
    // all) a new instance on the preferred device. Decode steps whose cache
    // already sits on some candidate's device restrict to those owners.
    // nullopt when nothing is feasible.
    std::optional<BindingChoice> choose_binding(const BindingQuery& q) const;

    EstimateBreakdown estimate(const BindingQuery& q, const std::string& block_id,
                               const std::string& stitch_class, const Instance* inst,
                               int device, std::int64_t* evict_bytes_out = nullptr) const;

    // Instances whose batches should run a draft surrogate alongside: the
    // top ceil(fraction * N) by queued work, skipping blocks without a
    // surrogate, chain-final blocks, and lower-ranked chain-neighbours of an
    // already marked block.
    std::vector<std::string> speculation_marks() const;

    // Overloaded instances (queue beyond 80% of what request memory on their
    // device can hold) paired with the least-loaded feasible target device.
    std::vector<ScaleDecision> scale_decisions(SimTime now) const;

    // Placement. Creation-time device choice honours the configured policy;
    // scale-out always spreads to the most-free feasible device. -1 when no
    // device fits even after idle eviction.
    int choose_device(const std::string& block_id, DevicePreference pref,
                      const std::set<int>& exclude = {}) const;
    void note_adjacency(const std::string& from_block, const std::string& to_block);
    // Greedy co-location of the hottest cross-server adjacent block pair;
    // at most two moves per review, idle instances only.
    std::vector<PlacementMove> placement_moves() const;

    // Per-page migration rates for re-homing a cache segment: recompute
    // prices one 16-token chunk of prefill on the destination; copy prices a
    // page over the path. Both at least 1us.
    std::pair<SimTime, SimTime> migration_rates(const std::string& block_id, int src_device,
                                                int dst_device) const;

    // Queue capacity used by the scale rule: how many typical requests the
    // device's non-parameter memory can hold for this block.
    std::int64_t max_queue_len(const Instance& inst) const;

    const std::map<std::pair<std::string, std::string>, std::int64_t>& adjacency() const {
        return adjacency_;
    }

  private:
    double speed(int device) const;
    bool block_is_chain_final(const std::string& block_id) const;
    std::vector<std::pair<std::string, std::string>> chain_neighbours() const;

    const Zoo& zoo_;
    const CostModel& cost_;
    const Cluster& cluster_;
    MemoryLedger& ledger_;
    InstancePool& pool_;
    KvStore& kv_;
    const ScenarioConfig& cfg_;
    std::map<std::pair<std::string, std::string>, std::int64_t> adjacency_;
};

}  // namespace blocksim

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "blocksim/agent.hpp"
#include "blocksim/cluster.hpp"
#include "blocksim/config.hpp"
#include "blocksim/costmodel.hpp"
#include "blocksim/engine.hpp"
#include "blocksim/kv.hpp"
#include "blocksim/metrics.hpp"
#include "blocksim/rng.hpp"
#include "blocksim/scheduler.hpp"
#include "blocksim/workload.hpp"
#include "blocksim/zoo.hpp"

namespace blocksim {

// The per-mode mapping from models to serving chains.
//  - block: the zoo's partition as-is, equivalence intact.
//  - per_model: one monolithic block per served model; content ids are
//    namespaced per model so nothing dedups across models.
//  - param_share: one merged engine block per foundation family that all its
//    adapter variants route through (their delta bytes ride along); fully
//    fine-tuned models stay monolithic per model.
struct ServingPlan {
    Zoo zoo;
    std::map<std::string, std::vector<std::string>> chains;  // model -> serving chain
    std::map<std::string, int> branches;  // block -> models merged into it (param_share)
    std::vector<std::string> served_models;
};

ServingPlan build_serving_plan(const ScenarioConfig& cfg, const Zoo& original);

// Event-driven execution of one scenario: requests flow through their chains
// step by step; instances batch greedily; the scheduler places, scales,
// migrates and marks speculation; metrics aggregate into the report.
class Simulation {
  public:
    Simulation(const ScenarioConfig& cfg, const Zoo& original_zoo, Cluster cluster,
               CostModel cost, std::vector<Request> requests);

    nlohmann::ordered_json run();

    const MetricsCollector& metrics() const { return metrics_; }
    const InstancePool& pool() const { return pool_; }
    const ServingPlan& plan() const { return plan_; }
    Engine& engine() { return engine_; }

  private:
    struct StepBinding {
        std::string instance_id;
        std::string block_id;
        std::string stitch_class;
    };
    struct RequestSim {
        Request req;
        std::string model_id;
        const std::vector<std::string>* chain = nullptr;
        int step = 0;
        Phase phase = Phase::kPrefill;
        int generated = 0;
        int context_tokens = 0;
        int from_device = -1;
        std::vector<StepBinding> bindings;
        bool done = false;
        // speculation
        bool spec_outstanding = false;
        int spec_step = -1;          // step whose output is an unverified draft
        bool held = false;           // finished the consuming step, awaiting verdict
        bool discard_on_finish = false;
        int held_step = -1;
        int held_device = -1;
    };
    struct RunningBatch {
        std::string instance_id;
        ExecBatch batch;
        bool speculated = false;
        std::vector<std::uint64_t> spec_members;
        SimTime start = 0;
        SimTime finish = 0;
    };

    SimTime now() const { return engine_.now(); }
    const std::string& chain_block(const RequestSim& r, int step) const {
        return (*r.chain)[static_cast<std::size_t>(step)];
    }
    double device_speed(int dev) const;
    double batch_duration_us(const Instance& inst, const ExecBatch& b) const;
    double standalone_cost_us(const StepBinding& b, Phase phase, int context, int dev) const;

    void on_arrival(std::size_t index);
    void dispatch_step(RequestSim& r);
    std::string create_instance(const std::string& block_id, int device);
    void deliver(RequestSim& r);
    void enqueue_step(RequestSim& r);
    void request_pump(int device);
    void pump(int device);
    void try_join_running(int device);
    void sweep_remote_kv(Instance& inst);
    void start_kv_migration(std::uint64_t request_id, int step, int dst_device,
                            const std::string& dst_instance, bool proactive);
    void on_batch_finish(int device);
    void handle_member_finish(const QueueEntry& member, int device);
    void advance_after_step(RequestSim& r, int step, int device);
    void advance_from(RequestSim& r, int step);
    // The KV paths return false when the device cannot host the bytes even
    // after idle evictions; callers park the request and retry, which is how
    // memory pressure turns into admission control instead of an abort.
    bool create_kv_for_step(RequestSim& r, int step, int device);
    bool append_decode_kv(RequestSim& r);
    bool ensure_request_memory(int device, std::int64_t bytes);
    void finish_verified(RequestSim& r, int k, bool accepted, int device);
    void complete_request(RequestSim& r);
    void resolve_speculation(const RunningBatch& rb, bool accepted, int device);

    void schedule_ticks();
    void scale_review();
    void kv_review();
    void placement_review();
    void refresh_marks();

    ScenarioConfig cfg_;
    ServingPlan plan_;
    Cluster cluster_;
    CostModel cost_;
    Engine engine_;
    MemoryLedger ledger_;
    LinkManager links_;
    InstancePool pool_;
    KvStore kv_;
    Scheduler sched_;
    MetricsCollector metrics_;
    EventDigest digest_;
    InterceptionTracker tint_;
    RngStream spec_rng_;

    std::vector<Request> requests_;
    std::map<std::uint64_t, RequestSim> live_;
    std::map<int, RunningBatch> running_;  // device -> in-flight batch
    // (prefix group, chain block, device) -> donor request for KV sharing
    std::map<std::tuple<int, std::string, int>, std::uint64_t> prefix_donors_;
    // (request, step) -> (instance, idle-since) for interception sampling
    std::map<std::pair<std::uint64_t, int>, std::pair<std::string, SimTime>> tint_pending_;
    std::set<std::string> spec_marked_;
    std::int64_t kv_shared_hwm_ = 0;  // report the peak, caches drain at the end
    // Batch-mates advance together within one event; pumping is deferred so
    // they merge into the downstream batch instead of starting one by one.
    bool defer_pumps_ = false;
    std::set<int> pending_pumps_;
    std::size_t completed_ = 0;
};

// Baseline modes serve whole models: adaptive resolution and speculation are
// meaningless there and get forced off.
ScenarioConfig effective_config(ScenarioConfig cfg);

// Builds the request stream a scenario describes: explicit arrivals file,
// trace replay, or the synthetic generator, in that order of precedence.
std::vector<Request> build_workload(const ScenarioConfig& cfg);

// Loads inputs per the scenario, builds the workload, runs, and returns the
// report.
nlohmann::ordered_json run_scenario(const ScenarioConfig& cfg);

}  // namespace blocksim

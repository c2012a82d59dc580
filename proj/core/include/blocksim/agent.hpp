#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "blocksim/cluster.hpp"
#include "blocksim/costmodel.hpp"
#include "blocksim/zoo.hpp"

namespace blocksim {

enum class InstanceState : std::uint8_t { kLoading, kReady };

// One queued (request, chain-step) execution. `tokens` is the batch-budget
// weight (prompt length for prefill, 1 for decode); `context_tokens` is the
// sequence length the duration lookup uses (prompt so far + generated).
struct QueueEntry {
    int request_id = -1;
    int chain_step = -1;
    Phase phase = Phase::kPrefill;
    int tokens = 0;
    int context_tokens = 0;
    std::string stitch_class;   // non-empty when this binding enters via a stitch
    double est_cost_us = 0.0;   // standalone cost recorded at enqueue (queue estimates)
    std::uint64_t enqueue_seq = 0;
    bool kv_resident = false;   // priority segment: resident work runs first
};

// A merged group popped from one instance queue: the longest queue prefix in
// the head's phase whose budget tokens fit max_batch_tokens.
struct ExecBatch {
    std::vector<QueueEntry> members;
    Phase phase = Phase::kPrefill;
    int batch_size() const { return static_cast<int>(members.size()); }
    int max_context_tokens() const;
    int stitched_count() const;
};

// A serving copy of one block on one device. Queues and execution flags are
// pure state; the simulation drives time and the scheduler makes choices.
struct Instance {
    std::string id;
    std::string block_id;
    int device = -1;
    InstanceState state = InstanceState::kLoading;
    SimTime ready_at = 0;    // load completion when kLoading
    SimTime last_used = 0;   // for LRU eviction
    bool executing = false;  // one of its batches occupies the device lane
    std::deque<QueueEntry> queue;
    double queued_cost_us = 0.0;   // sum of est_cost_us over queue
    double queued_cost_hwm = 0.0;  // high-water mark since the last scaling review
    std::uint64_t created_seq = 0;
};

// One compute lane per device: a single batch executes at a time. The
// surrogate lane models the cheap draft executor that runs alongside.
struct DeviceLane {
    SimTime busy_until = 0;
    SimTime surrogate_busy_until = 0;
};

// Owns instances, their queues, per-device compute lanes, and parameter
// residency. Parameter content is reference-counted per device by content id:
// a second instance whose block shares content bytes with an already-resident
// block reserves only the bytes not yet on the device.
class InstancePool {
  public:
    InstancePool(const Zoo& zoo, const Cluster& cluster, MemoryLedger& ledger);

    // Parameter bytes a new instance of `block_id` would actually reserve on
    // `device` given what is already resident there.
    std::int64_t param_bytes_needed(const std::string& block_id, int device) const;

    // Creates the instance in kLoading state until `ready_at`. Reserves the
    // newly needed parameter bytes. Throws if the device already serves this
    // block or the reservation does not fit (callers evict first).
    Instance& create(const std::string& block_id, int device, SimTime now, SimTime ready_at);
    void mark_ready(const std::string& instance_id, SimTime now);

    // Idle instances on `device` in LRU order whose eviction frees at least
    // `bytes` of actually-reserved parameter memory. Empty when `bytes` <= 0;
    // `ok` is false when even evicting everything idle is not enough.
    struct EvictionPlan {
        std::vector<std::string> victims;
        std::int64_t freed_bytes = 0;
        bool ok = true;
    };
    EvictionPlan eviction_plan(int device, std::int64_t bytes) const;
    // Releases the instance's reference-counted parameter bytes. Throws if it
    // still has queued or executing work.
    void evict(const std::string& instance_id);

    // Queue mechanics. Entries with kv_resident=true form a priority segment
    // at the front (stable within each segment).
    void enqueue(const std::string& instance_id, QueueEntry entry);
    // Removes every queued entry of `request_id`; returns them in queue order.
    std::vector<QueueEntry> remove_queued(const std::string& instance_id, int request_id);
    // Removes the last `count` entries (scale-out moves the queue tail).
    std::vector<QueueEntry> take_tail(const std::string& instance_id, std::size_t count);
    // Greedy prefix merge at dequeue; marks the instance executing.
    ExecBatch pop_batch(const std::string& instance_id, int max_batch_tokens, SimTime now);
    void finish_batch(const std::string& instance_id, SimTime now);

    // Arbitration when a lane frees: among ready, non-executing instances on
    // the device with queued work, the one whose head entered earliest.
    Instance* next_runnable(int device, SimTime now);

    Instance* find(const std::string& instance_id);
    const Instance* find(const std::string& instance_id) const;
    Instance* instance_of(const std::string& block_id, int device);
    const Instance* instance_of(const std::string& block_id, int device) const;
    std::vector<Instance*> instances_of(const std::string& block_id);
    const std::map<std::string, Instance>& all() const { return instances_; }

    // Scaling reviews consume the queue-pressure high-water marks.
    void reset_queue_hwm() {
        for (auto& [id, inst] : instances_) inst.queued_cost_hwm = inst.queued_cost_us;
    }

    DeviceLane& lane(int device) { return lanes_[device]; }
    const DeviceLane& lane(int device) const;

    std::uint64_t next_enqueue_seq() { return ++enqueue_seq_; }
    std::int64_t resident_param_bytes(int device) const;

  private:
    const Zoo& zoo_;
    const Cluster& cluster_;
    MemoryLedger& ledger_;
    std::map<std::string, Instance> instances_;
    // device -> content id -> (refcount, bytes)
    std::map<int, std::map<std::string, std::pair<int, std::int64_t>>> residency_;
    std::map<int, DeviceLane> lanes_;
    std::uint64_t next_instance_ = 0;
    std::uint64_t enqueue_seq_ = 0;
    std::uint64_t created_seq_ = 0;
};

}  // namespace blocksim

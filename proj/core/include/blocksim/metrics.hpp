#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "blocksim/cluster.hpp"
#include "blocksim/engine.hpp"
#include "blocksim/time.hpp"
#include "blocksim/workload.hpp"

namespace blocksim {

// Nearest-rank percentile: the ceil(q*n)-th order statistic. q in (0, 1].
// Empty input yields 0.
double percentile(std::vector<double> values, double q);

// FNV-1a digest over the processed-event stream; two runs with equal digests
// executed the same events at the same times in the same order.
class EventDigest {
  public:
    void observe(SimTime t, std::uint64_t seq, EventKind kind);
    std::uint64_t value() const { return h_; }

  private:
    void mix(std::uint64_t v);
    std::uint64_t h_ = 1469598103934665603ULL;
};

// Exactly one of these holds a request's wall time at any moment, so the
// per-state durations sum to completion - arrival. Parked batches and
// speculation holds count as queueing.
enum class RequestState : std::uint8_t { kQueue, kCompute, kTransfer, kLoad, kDone };
const char* request_state_name(RequestState s);

struct RequestRecord {
    std::uint64_t id = 0;
    int app_id = 0;
    SimTime arrival_us = 0;
    SimTime first_token_us = -1;
    SimTime completion_us = -1;
    int prompt_tokens = 0;
    int target_output_tokens = 0;
    int generated_tokens = 0;
    SimTime in_state_us[4] = {0, 0, 0, 0};
    RequestState state = RequestState::kQueue;
    SimTime state_since_us = 0;
    int adaptive_resolutions = 0;
    bool speculated = false;
};

// Passive sink for everything the simulation reports; turns into report.json
// plus CSV/log side files at the end of a run.
class MetricsCollector {
  public:
    void on_arrival(const Request& r, SimTime now);
    void set_state(std::uint64_t id, RequestState s, SimTime now);
    void on_first_token(std::uint64_t id, SimTime now);
    void on_tokens(std::uint64_t id, int generated);
    void on_complete(std::uint64_t id, SimTime now);

    void on_busy(int device, SimTime from, SimTime to);

    void add_comm_bytes(std::int64_t bytes) { comm_bytes_ += bytes; }
    void add_kv_copy_bytes(std::int64_t bytes) { kv_copy_bytes_ += bytes; }
    void inc_inter_server_forward() { ++inter_server_forwards_; }
    void on_kv_migration(int recomputed_pages, int copied_pages);
    void on_speculation_start(std::uint64_t request);
    void on_speculation_resolved(bool accepted);
    void on_adaptive_resolution(std::uint64_t request);
    void on_scale_out() { ++scale_outs_; }
    void on_mem_stall() { ++mem_stalls_; }
    void on_batch(bool prefill, int members) {
        if (prefill) {
            ++prefill_batches_;
            prefill_batch_members_ += members;
        } else {
            ++decode_batches_;
            decode_batch_members_ += members;
        }
    }
    void set_kv_shared_bytes(std::int64_t bytes) { kv_shared_bytes_ = bytes; }

    void decision(SimTime t, const std::string& kind, const std::string& detail);

    // Appends one timeseries row covering (last sample, t].
    void sample(SimTime t, const MemoryLedger& ledger, const std::vector<int>& devices);

    const RequestRecord& record(std::uint64_t id) const;
    std::size_t completed() const { return completed_; }
    std::int64_t comm_bytes() const { return comm_bytes_; }
    std::int64_t kv_copy_bytes() const { return kv_copy_bytes_; }
    std::uint64_t inter_server_forwards() const { return inter_server_forwards_; }

    // Aggregates everything; `meta` lands first in the report.
    nlohmann::ordered_json build_report(const nlohmann::ordered_json& meta,
                                        std::uint64_t event_digest) const;
    // report.json, latency_cdf.csv, timeseries.csv, decisions.log.
    void write_outputs(const std::string& dir, const nlohmann::ordered_json& report) const;

  private:
    struct Sample {
        SimTime t_us;
        double util;
        std::int64_t mem_params;
        std::int64_t mem_reqdata;
    };

    std::map<std::uint64_t, RequestRecord> requests_;
    std::map<int, SimTime> busy_us_;
    std::map<int, SimTime> busy_at_last_sample_;
    SimTime last_sample_us_ = 0;
    std::vector<Sample> samples_;
    std::vector<std::string> decisions_;

    std::size_t completed_ = 0;
    std::int64_t comm_bytes_ = 0;
    std::int64_t kv_copy_bytes_ = 0;
    std::int64_t kv_shared_bytes_ = 0;
    std::uint64_t inter_server_forwards_ = 0;
    std::uint64_t kv_migrations_ = 0;
    std::int64_t kv_recomputed_pages_ = 0;
    std::int64_t kv_copied_pages_ = 0;
    std::uint64_t spec_started_ = 0;
    std::uint64_t spec_accepted_ = 0;
    std::uint64_t spec_rejected_ = 0;
    std::uint64_t scale_outs_ = 0;
    std::uint64_t mem_stalls_ = 0;
    std::uint64_t prefill_batches_ = 0;
    std::uint64_t prefill_batch_members_ = 0;
    std::uint64_t decode_batches_ = 0;
    std::uint64_t decode_batch_members_ = 0;
    std::set<std::uint64_t> adaptive_requests_;
};

}  // namespace blocksim

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "blocksim/time.hpp"

namespace blocksim {

enum class EventKind : std::uint8_t {
    kRequestArrival,
    kBatchStart,
    kBatchFinish,
    kTransferComplete,
    kMigrationStep,
    kSpeculationVerify,
    kScaleCheck,
    kPlacementReview,
    kMetricsTick,
    kKvReview,
    kLoadComplete,
    kRetry,
    kGeneric,
};

const char* event_kind_name(EventKind k);

struct SimAbort : std::runtime_error {
    explicit SimAbort(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic discrete-event loop. Events fire in (fire_at, seq) order;
// seq is the global schedule counter, so insertion order breaks timestamp
// ties and the execution order is a total order independent of heap layout.
class Engine {
  public:
    using Handle = std::uint64_t;
    static constexpr Handle kInvalidHandle = 0;

    struct Stats {
        std::uint64_t scheduled = 0;
        std::uint64_t processed = 0;
        std::uint64_t cancelled = 0;
    };

    explicit Engine(std::uint64_t event_budget = 50'000'000) : budget_(event_budget) {}

    SimTime now() const { return now_; }
    const Stats& stats() const { return stats_; }

    // Observes every processed event; used by determinism digests and tests.
    void set_trace_hook(std::function<void(SimTime, std::uint64_t, EventKind)> hook) {
        trace_hook_ = std::move(hook);
    }

    Handle schedule(SimTime at, EventKind kind, std::function<void()> fn) {
        if (at < now_) throw std::invalid_argument("schedule: event in the past");
        const Handle h = ++next_seq_;
        ++stats_.scheduled;
        pq_.push(Entry{at, h, kind, std::move(fn)});
        live_.insert(h);
        return h;
    }

    Handle schedule_in(SimTime delay, EventKind kind, std::function<void()> fn) {
        return schedule(now_ + delay, kind, std::move(fn));
    }

    // Cancellation is a tombstone; the entry is dropped when it surfaces.
    // Returns whether a still-pending event was cancelled.
    bool cancel(Handle h) {
        if (h == kInvalidHandle || live_.erase(h) == 0) return false;
        cancelled_.insert(h);
        ++stats_.cancelled;
        return true;
    }

    // Runs events with fire_at <= until. Returns the clock at termination:
    // `until` when bounded, otherwise the timestamp of the last processed
    // event (0 if none were processed).
    SimTime run(SimTime until = std::numeric_limits<SimTime>::max()) {
        const bool bounded = until != std::numeric_limits<SimTime>::max();
        while (!pq_.empty() && pq_.top().at <= until) {
            Entry e = pq_.top();
            pq_.pop();
            if (auto it = cancelled_.find(e.seq); it != cancelled_.end()) {
                cancelled_.erase(it);
                continue;
            }
            live_.erase(e.seq);
            now_ = e.at;
            if (++stats_.processed > budget_)
                throw SimAbort("event budget exceeded (live-lock?) at t=" + std::to_string(now_) +
                               "us after " + std::to_string(stats_.processed - 1) + " events");
            if (trace_hook_) trace_hook_(e.at, e.seq, e.kind);
            e.fn();
        }
        if (bounded && until > now_) now_ = until;
        return now_;
    }

    bool empty() const { return live_.empty(); }

  private:
    struct Entry {
        SimTime at;
        Handle seq;
        EventKind kind;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.seq > b.seq;
        }
    };

    SimTime now_ = 0;
    Handle next_seq_ = 0;
    std::uint64_t budget_;
    Stats stats_;
    std::priority_queue<Entry, std::vector<Entry>, Later> pq_;
    std::unordered_set<Handle> live_;
    std::unordered_set<Handle> cancelled_;
    std::function<void(SimTime, std::uint64_t, EventKind)> trace_hook_;
};

}  // namespace blocksim

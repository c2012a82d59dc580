#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blocksim/cluster.hpp"
#include "blocksim/time.hpp"

namespace blocksim {

// KV cache is paged: one page holds the keys/values of kPageTokens tokens
// for one (request, block) pair.
constexpr int kPageTokens = 16;

// A dual-path KV migration: the destination recomputes the sequence prefix
// (page by page, from the front) while the source copies the suffix (from
// the back); the two meet in the middle.
struct MigrationPlan {
    int pages = 0;
    SimTime rec_us_per_page = 0;  // 0 = recompute path disabled
    SimTime cp_us_per_page = 0;   // 0 = copy path disabled
    int recompute_pages = 0;      // prefix claimed by the destination
    int copy_pages = 0;           // suffix claimed by the source
    SimTime completion_us = 0;
};

// Replays the two workers page by page: the next unclaimed page goes to
// whichever path frees up first; ties go to the faster path, and to the copy
// path when the rates are equal. With one path disabled the other takes all
// pages. Throws if both are disabled while pages remain.
MigrationPlan plan_migration(int pages, SimTime rec_us_per_page, SimTime cp_us_per_page);

struct MigrationCandidate {
    std::uint64_t request_id = 0;
    std::string block_id;
    int shared_pages = 0;   // pages also referenced by other requests
    SimTime resume_time = 0;  // when the owner expects to need the KV again
};

// Migration order: requests entangled with the fewest shared pages move
// first, earliest resumption breaking ties, then ids for determinism.
void order_migrations(std::vector<MigrationCandidate>& candidates);

// Online mean of the interception interval: how long KV sits idle between a
// request leaving an instance and returning to it. Used to decide whether a
// proactive migration can finish before the KV is needed again.
class InterceptionTracker {
  public:
    void record(const std::string& key, SimTime sample);
    std::optional<double> mean(const std::string& key) const;
    std::optional<double> global_mean() const;
    // Expected idle time still ahead for KV parked since t_call; nullopt when
    // no samples exist yet (callers defer rather than guess).
    std::optional<SimTime> predicted_remaining(const std::string& key, SimTime t_call,
                                               SimTime now) const;
    std::uint64_t samples(const std::string& key) const;

  private:
    std::map<std::string, std::pair<double, std::uint64_t>> per_key_;
    double global_sum_ = 0.0;
    std::uint64_t global_n_ = 0;
};

// Paged KV storage with reference-counted prefix sharing. Placement is per
// segment (one (request, block) pair lives on one device); bytes are
// accounted against the ledger's KV category. Shared pages are immutable:
// when a segment moves, private pages move with it and shared pages are
// replaced by fresh private copies on the destination.
class KvStore {
  public:
    explicit KvStore(MemoryLedger& ledger) : ledger_(&ledger) {}

    // Creates an empty segment; bytes_per_token fixes the page size.
    void create_segment(std::uint64_t request, const std::string& block, int device,
                        std::int64_t bytes_per_token);
    bool has_segment(std::uint64_t request, const std::string& block) const;

    // Appends n tokens, reserving pages as they fill. Returns newly
    // allocated pages (0 when the tokens fit in the last partial page).
    int append_tokens(std::uint64_t request, const std::string& block, int n);

    // Shares the whole-page prefix of `from`'s segment (same block, same
    // device) covering `tokens` tokens. The destination segment must be
    // empty. Returns the number of tokens actually covered (full pages).
    int share_prefix(std::uint64_t request, std::uint64_t from, const std::string& block,
                     int tokens);

    void release(std::uint64_t request, const std::string& block);
    void release_request(std::uint64_t request);  // all segments of a request

    // Re-homes the segment; shared pages stay for their other readers and
    // are duplicated on the destination.
    void move_segment(std::uint64_t request, const std::string& block, int dst_device);

    int device_of(std::uint64_t request, const std::string& block) const;  // -1 if absent
    int tokens(std::uint64_t request, const std::string& block) const;
    int pages(std::uint64_t request, const std::string& block) const;
    int shared_pages(std::uint64_t request, const std::string& block) const;
    std::int64_t segment_bytes(std::uint64_t request, const std::string& block) const;

    std::int64_t bytes_saved_by_sharing() const { return saved_by_sharing_; }

  private:
    struct Page {
        std::int64_t bytes = 0;
        int ref = 0;
        int device = -1;
    };
    struct Segment {
        int device = -1;
        std::int64_t bytes_per_page = 0;
        int tokens = 0;
        std::vector<std::uint64_t> page_ids;
    };

    Segment& seg(std::uint64_t request, const std::string& block);
    const Segment* find(std::uint64_t request, const std::string& block) const;
    void deref(std::uint64_t page_id);

    MemoryLedger* ledger_;
    std::map<std::pair<std::uint64_t, std::string>, Segment> segments_;
    std::map<std::uint64_t, Page> pages_;
    std::uint64_t next_page_ = 1;
    std::int64_t saved_by_sharing_ = 0;
};

}  // namespace blocksim

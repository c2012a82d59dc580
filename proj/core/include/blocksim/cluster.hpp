#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "blocksim/engine.hpp"
#include "blocksim/time.hpp"

namespace blocksim {

struct DeviceDescriptor {
    int id = -1;
    int server = -1;
    std::string device_class;            // cost-model speed class
    std::int64_t mem_capacity_bytes = 0;
    double mem_bandwidth_bps = 0.0;      // on-device memory bandwidth, bytes/s
    double load_bandwidth_bps = 0.0;     // host-to-device parameter load path, bytes/s
};

struct ServerDescriptor {
    int id = -1;
    double intra_bandwidth_bps = 0.0;  // device-to-device within the server, bytes/s
};

// Static topology plus pure bandwidth/latency arithmetic. Dynamic contention
// lives in LinkManager; memory accounting lives in MemoryLedger.
class Cluster {
  public:
    void add_server(const ServerDescriptor& s);
    void add_device(const DeviceDescriptor& d);
    // Symmetric inter-server bandwidth; a pair without an explicit entry uses
    // the default (set_inter_default).
    void set_inter_bandwidth(int server_a, int server_b, double bps);
    void set_inter_default(double bps);

    const DeviceDescriptor& device(int id) const;
    const ServerDescriptor& server(int id) const;
    std::vector<int> device_ids() const;  // sorted
    std::size_t n_devices() const { return devices_.size(); }
    bool same_server(int dev_a, int dev_b) const;

    // Effective bandwidth of the path between two devices: infinity on the
    // same device, the server's intra bandwidth within a server, otherwise
    // min(intra_src, inter_pair, intra_dst).
    double path_bandwidth_bps(int dev_a, int dev_b) const;
    // Identity of the slowest link on the path ("" for same device). Ties
    // resolve in the order inter link, source intra, destination intra.
    std::string bottleneck_link(int dev_a, int dev_b) const;
    double link_bandwidth_bps(const std::string& link) const;

    // Uncontended transfer duration, rounded half-up to whole microseconds.
    SimTime transfer_us(int dev_a, int dev_b, std::int64_t bytes) const;
    // Duration to evict then load parameters on one device: eviction writes
    // through device memory, loading streams over the device's load path.
    SimTime swap_us(int dev, std::int64_t evict_bytes, std::int64_t load_bytes) const;

  private:
    std::map<int, DeviceDescriptor> devices_;
    std::map<int, ServerDescriptor> servers_;
    std::map<std::pair<int, int>, double> inter_;  // key normalized (a < b)
    double inter_default_ = 0.0;
};

// Per-device memory accounting by category. Reservations that would exceed
// capacity (or releases that would go negative) throw: callers must check
// headroom first, so the ledger doubles as an invariant guard.
class MemoryLedger {
  public:
    enum class Category : std::uint8_t { kParams, kKv, kActivation };
    static const char* category_name(Category c);

    explicit MemoryLedger(const Cluster& cluster);

    bool can_reserve(int dev, std::int64_t bytes) const;
    void reserve(int dev, Category c, std::int64_t bytes);
    void release(int dev, Category c, std::int64_t bytes);

    std::int64_t used(int dev) const;
    std::int64_t used(int dev, Category c) const;
    std::int64_t free_bytes(int dev) const;
    std::int64_t capacity(int dev) const;

  private:
    struct Usage {
        std::int64_t by_category[3] = {0, 0, 0};
        std::int64_t capacity = 0;
    };
    std::map<int, Usage> usage_;
};

// Shared-link transfer simulation. Each transfer is charged to the slowest
// link on its path; concurrent transfers on a link share its bandwidth
// equally (processor sharing), recomputed at every arrival and departure.
class LinkManager {
  public:
    using JobId = std::uint64_t;

    LinkManager(Engine& engine, const Cluster& cluster);

    // Starts a transfer and invokes `done` from the completion event. Zero
    // bytes or a same-device path completes via an immediate event (still
    // asynchronous, never reentrant).
    JobId transfer(int src_dev, int dst_dev, std::int64_t bytes, std::function<void()> done);

    std::int64_t total_bytes_requested() const { return total_bytes_; }
    std::size_t active_jobs() const;
    bool idle() const { return active_jobs() == 0; }

  private:
    struct Job {
        double remaining_bytes = 0.0;
        std::function<void()> done;
        Engine::Handle event = Engine::kInvalidHandle;
    };
    struct Link {
        double bandwidth_bps = 0.0;
        SimTime last_update = 0;
        std::map<JobId, Job> jobs;
    };

    void advance(Link& link);
    void reschedule(const std::string& link_id, Link& link);
    void complete(const std::string& link_id, JobId id);

    Engine& engine_;
    const Cluster& cluster_;
    std::map<std::string, Link> links_;
    JobId next_job_ = 1;
    std::int64_t total_bytes_ = 0;
};

}  // namespace blocksim

#include "blocksim/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace blocksim {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("cluster: " + what); }

}  // namespace

void Cluster::add_server(const ServerDescriptor& s) {
    if (s.id < 0) fail("server id must be non-negative");
    if (s.intra_bandwidth_bps <= 0.0) fail("server intra bandwidth must be positive");
    if (!servers_.emplace(s.id, s).second) fail("duplicate server id");
}

void Cluster::add_device(const DeviceDescriptor& d) {
    if (d.id < 0) fail("device id must be non-negative");
    if (!servers_.count(d.server)) fail("device references unknown server");
    if (d.mem_capacity_bytes <= 0) fail("device memory capacity must be positive");
    if (d.mem_bandwidth_bps <= 0.0 || d.load_bandwidth_bps <= 0.0)
        fail("device bandwidths must be positive");
    if (!devices_.emplace(d.id, d).second) fail("duplicate device id");
}

void Cluster::set_inter_bandwidth(int a, int b, double bps) {
    if (a == b) fail("inter bandwidth between a server and itself");
    if (bps <= 0.0) fail("inter bandwidth must be positive");
    inter_[{std::min(a, b), std::max(a, b)}] = bps;
}

void Cluster::set_inter_default(double bps) {
    if (bps <= 0.0) fail("inter bandwidth must be positive");
    inter_default_ = bps;
}

const DeviceDescriptor& Cluster::device(int id) const {
    auto it = devices_.find(id);
    if (it == devices_.end()) fail("unknown device: " + std::to_string(id));
    return it->second;
}

const ServerDescriptor& Cluster::server(int id) const {
    auto it = servers_.find(id);
    if (it == servers_.end()) fail("unknown server: " + std::to_string(id));
    return it->second;
}

std::vector<int> Cluster::device_ids() const {
    std::vector<int> out;
    out.reserve(devices_.size());
    for (const auto& [id, d] : devices_) out.push_back(id);
    return out;
}

bool Cluster::same_server(int dev_a, int dev_b) const {
    return device(dev_a).server == device(dev_b).server;
}

double Cluster::path_bandwidth_bps(int dev_a, int dev_b) const {
    if (dev_a == dev_b) return std::numeric_limits<double>::infinity();
    const auto& a = device(dev_a);
    const auto& b = device(dev_b);
    if (a.server == b.server) return server(a.server).intra_bandwidth_bps;
    auto it = inter_.find({std::min(a.server, b.server), std::max(a.server, b.server)});
    double inter = it != inter_.end() ? it->second : inter_default_;
    if (inter <= 0.0) fail("no inter-server bandwidth configured");
    return std::min({server(a.server).intra_bandwidth_bps, inter,
                     server(b.server).intra_bandwidth_bps});
}

std::string Cluster::bottleneck_link(int dev_a, int dev_b) const {
    if (dev_a == dev_b) return "";
    const auto& a = device(dev_a);
    const auto& b = device(dev_b);
    if (a.server == b.server) return "intra:" + std::to_string(a.server);
    const double want = path_bandwidth_bps(dev_a, dev_b);
    auto it = inter_.find({std::min(a.server, b.server), std::max(a.server, b.server)});
    double inter = it != inter_.end() ? it->second : inter_default_;
    if (inter == want)
        return "inter:" + std::to_string(std::min(a.server, b.server)) + ":" +
               std::to_string(std::max(a.server, b.server));
    if (server(a.server).intra_bandwidth_bps == want) return "intra:" + std::to_string(a.server);
    return "intra:" + std::to_string(b.server);
}

double Cluster::link_bandwidth_bps(const std::string& link) const {
    if (link.rfind("intra:", 0) == 0) return server(std::stoi(link.substr(6))).intra_bandwidth_bps;
    if (link.rfind("inter:", 0) == 0) {
        auto colon = link.find(':', 6);
        int a = std::stoi(link.substr(6, colon - 6));
        int b = std::stoi(link.substr(colon + 1));
        auto it = inter_.find({std::min(a, b), std::max(a, b)});
        return it != inter_.end() ? it->second : inter_default_;
    }
    fail("unknown link: " + link);
}

SimTime Cluster::transfer_us(int dev_a, int dev_b, std::int64_t bytes) const {
    if (bytes <= 0 || dev_a == dev_b) return 0;
    const double bps = path_bandwidth_bps(dev_a, dev_b);
    return round_us(static_cast<double>(bytes) / bps * 1e6);
}

SimTime Cluster::swap_us(int dev, std::int64_t evict_bytes, std::int64_t load_bytes) const {
    const auto& d = device(dev);
    double secs = 0.0;
    if (evict_bytes > 0) secs += static_cast<double>(evict_bytes) / d.mem_bandwidth_bps;
    if (load_bytes > 0) secs += static_cast<double>(load_bytes) / d.load_bandwidth_bps;
    return round_us(secs * 1e6);
}

const char* MemoryLedger::category_name(Category c) {
    switch (c) {
        case Category::kParams: return "params";
        case Category::kKv: return "kv";
        case Category::kActivation: return "activation";
    }
    return "unknown";
}

MemoryLedger::MemoryLedger(const Cluster& cluster) {
    for (int id : cluster.device_ids()) usage_[id].capacity = cluster.device(id).mem_capacity_bytes;
}

bool MemoryLedger::can_reserve(int dev, std::int64_t bytes) const {
    return bytes <= free_bytes(dev);
}

void MemoryLedger::reserve(int dev, Category c, std::int64_t bytes) {
    if (bytes < 0) throw std::logic_error("ledger: negative reservation");
    auto& u = usage_.at(dev);
    if (used(dev) + bytes > u.capacity)
        throw std::logic_error("ledger: device " + std::to_string(dev) + " over capacity (" +
                               category_name(c) + ")");
    u.by_category[static_cast<int>(c)] += bytes;
}

void MemoryLedger::release(int dev, Category c, std::int64_t bytes) {
    if (bytes < 0) throw std::logic_error("ledger: negative release");
    auto& u = usage_.at(dev);
    auto& slot = u.by_category[static_cast<int>(c)];
    if (bytes > slot)
        throw std::logic_error("ledger: device " + std::to_string(dev) + " " + category_name(c) +
                               " released below zero");
    slot -= bytes;
}

std::int64_t MemoryLedger::used(int dev) const {
    const auto& u = usage_.at(dev);
    return u.by_category[0] + u.by_category[1] + u.by_category[2];
}

std::int64_t MemoryLedger::used(int dev, Category c) const {
    return usage_.at(dev).by_category[static_cast<int>(c)];
}

std::int64_t MemoryLedger::free_bytes(int dev) const { return usage_.at(dev).capacity - used(dev); }

std::int64_t MemoryLedger::capacity(int dev) const { return usage_.at(dev).capacity; }

LinkManager::LinkManager(Engine& engine, const Cluster& cluster)
    : engine_(engine), cluster_(cluster) {}

LinkManager::JobId LinkManager::transfer(int src_dev, int dst_dev, std::int64_t bytes,
                                         std::function<void()> done) {
    const JobId id = next_job_++;
    if (bytes > 0) total_bytes_ += bytes;
    const std::string link_id = cluster_.bottleneck_link(src_dev, dst_dev);
    if (bytes <= 0 || link_id.empty()) {
        engine_.schedule_in(0, EventKind::kTransferComplete, [cb = std::move(done)] { cb(); });
        return id;
    }
    auto [it, inserted] = links_.try_emplace(link_id);
    Link& link = it->second;
    if (inserted) {
        link.bandwidth_bps = cluster_.link_bandwidth_bps(link_id);
        link.last_update = engine_.now();
    }
    advance(link);
    Job job;
    job.remaining_bytes = static_cast<double>(bytes);
    job.done = std::move(done);
    link.jobs.emplace(id, std::move(job));
    reschedule(link_id, link);
    return id;
}

std::size_t LinkManager::active_jobs() const {
    std::size_t n = 0;
    for (const auto& [id, link] : links_) n += link.jobs.size();
    return n;
}

void LinkManager::advance(Link& link) {
    const SimTime now = engine_.now();
    if (!link.jobs.empty() && now > link.last_update) {
        const double rate = link.bandwidth_bps / static_cast<double>(link.jobs.size());
        const double moved = rate * static_cast<double>(now - link.last_update) * 1e-6;
        for (auto& [id, job] : link.jobs)
            job.remaining_bytes = std::max(0.0, job.remaining_bytes - moved);
    }
    link.last_update = now;
}

void LinkManager::reschedule(const std::string& link_id, Link& link) {
    if (link.jobs.empty()) return;
    const double rate = link.bandwidth_bps / static_cast<double>(link.jobs.size());
    for (auto& [id, job] : link.jobs) {
        if (job.event != Engine::kInvalidHandle) engine_.cancel(job.event);
        const SimTime eta =
            job.remaining_bytes <= 0.0 ? 0 : round_us(job.remaining_bytes / rate * 1e6);
        job.event = engine_.schedule_in(eta, EventKind::kTransferComplete,
                                        [this, link_id, jid = id] { complete(link_id, jid); });
    }
}

void LinkManager::complete(const std::string& link_id, JobId id) {
    Link& link = links_.at(link_id);
    advance(link);
    auto it = link.jobs.find(id);
    if (it == link.jobs.end()) return;
    auto done = std::move(it->second.done);
    link.jobs.erase(it);
    reschedule(link_id, link);
    done();
}

}  // namespace blocksim

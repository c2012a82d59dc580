#include "blocksim/agent.hpp"

#include <algorithm>
#include <stdexcept>

namespace blocksim {

namespace {
[[noreturn]] void fail(const std::string& what) { throw std::logic_error("pool: " + what); }
}  // namespace

int ExecBatch::max_context_tokens() const {
    int m = 0;
    for (const auto& e : members) m = std::max(m, e.context_tokens);
    return m;
}

int ExecBatch::stitched_count() const {
    int n = 0;
    for (const auto& e : members) n += e.stitch_class.empty() ? 0 : 1;
    return n;
}

InstancePool::InstancePool(const Zoo& zoo, const Cluster& cluster, MemoryLedger& ledger)
    : zoo_(zoo), cluster_(cluster), ledger_(ledger) {
    for (int dev : cluster_.device_ids()) lanes_[dev];
}

std::int64_t InstancePool::param_bytes_needed(const std::string& block_id, int device) const {
    std::int64_t need = 0;
    auto rit = residency_.find(device);
    for (const auto& comp : zoo_.block_components(block_id)) {
        for (const auto& piece : comp.contents) {
            if (rit != residency_.end()) {
                auto it = rit->second.find(piece.content_id);
                if (it != rit->second.end() && it->second.first > 0) continue;
            }
            need += piece.bytes;
        }
    }
    return need;
}

Instance& InstancePool::create(const std::string& block_id, int device, SimTime now,
                               SimTime ready_at) {
    if (instance_of(block_id, device) != nullptr)
        fail("device " + std::to_string(device) + " already serves " + block_id);
    const std::int64_t need = param_bytes_needed(block_id, device);
    if (!ledger_.can_reserve(device, need))
        fail("instance of " + block_id + " does not fit on device " + std::to_string(device));
    ledger_.reserve(device, MemoryLedger::Category::kParams, need);
    auto& res = residency_[device];
    for (const auto& comp : zoo_.block_components(block_id)) {
        for (const auto& piece : comp.contents) {
            auto& slot = res[piece.content_id];
            slot.first += 1;
            slot.second = piece.bytes;
        }
    }
    Instance inst;
    inst.id = "i" + std::to_string(++next_instance_);
    inst.block_id = block_id;
    inst.device = device;
    inst.state = ready_at > now ? InstanceState::kLoading : InstanceState::kReady;
    inst.ready_at = ready_at;
    inst.last_used = now;
    inst.created_seq = ++created_seq_;
    auto [it, inserted] = instances_.emplace(inst.id, std::move(inst));
    if (!inserted) fail("duplicate instance id");
    return it->second;
}

void InstancePool::mark_ready(const std::string& instance_id, SimTime now) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    inst->state = InstanceState::kReady;
    inst->ready_at = std::min(inst->ready_at, now);
}

InstancePool::EvictionPlan InstancePool::eviction_plan(int device, std::int64_t bytes) const {
    EvictionPlan plan;
    if (bytes <= 0) return plan;
    // LRU over idle instances; creation order breaks last_used ties.
    std::vector<const Instance*> idle;
    for (const auto& [id, inst] : instances_) {
        if (inst.device != device || inst.executing || !inst.queue.empty()) continue;
        if (inst.state != InstanceState::kReady) continue;
        idle.push_back(&inst);
    }
    std::sort(idle.begin(), idle.end(), [](const Instance* a, const Instance* b) {
        return std::tie(a->last_used, a->created_seq) < std::tie(b->last_used, b->created_seq);
    });
    // Simulate the deref sequence so shared content only counts when its last
    // referencing instance goes.
    std::map<std::string, int> refs;
    auto rit = residency_.find(device);
    if (rit != residency_.end())
        for (const auto& [cid, rc] : rit->second) refs[cid] = rc.first;
    for (const Instance* inst : idle) {
        if (plan.freed_bytes >= bytes) break;
        plan.victims.push_back(inst->id);
        for (const auto& comp : zoo_.block_components(inst->block_id)) {
            for (const auto& piece : comp.contents) {
                if (--refs[piece.content_id] == 0) plan.freed_bytes += piece.bytes;
            }
        }
    }
    plan.ok = plan.freed_bytes >= bytes;
    return plan;
}

void InstancePool::evict(const std::string& instance_id) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    if (inst->executing || !inst->queue.empty()) fail(instance_id + " is busy, cannot evict");
    auto& res = residency_[inst->device];
    std::int64_t freed = 0;
    for (const auto& comp : zoo_.block_components(inst->block_id)) {
        for (const auto& piece : comp.contents) {
            auto it = res.find(piece.content_id);
            if (it == res.end() || it->second.first <= 0) fail("residency underflow");
            if (--it->second.first == 0) {
                freed += it->second.second;
                res.erase(it);
            }
        }
    }
    ledger_.release(inst->device, MemoryLedger::Category::kParams, freed);
    instances_.erase(instance_id);
}

void InstancePool::enqueue(const std::string& instance_id, QueueEntry entry) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    entry.enqueue_seq = next_enqueue_seq();
    inst->queued_cost_us += entry.est_cost_us;
    inst->queued_cost_hwm = std::max(inst->queued_cost_hwm, inst->queued_cost_us);
    if (entry.kv_resident) {
        auto pos = std::find_if(inst->queue.begin(), inst->queue.end(),
                                [](const QueueEntry& e) { return !e.kv_resident; });
        inst->queue.insert(pos, std::move(entry));
    } else {
        inst->queue.push_back(std::move(entry));
    }
}

std::vector<QueueEntry> InstancePool::remove_queued(const std::string& instance_id,
                                                    int request_id) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    std::vector<QueueEntry> removed;
    std::deque<QueueEntry> kept;
    for (auto& e : inst->queue) {
        if (e.request_id == request_id) {
            inst->queued_cost_us -= e.est_cost_us;
            removed.push_back(std::move(e));
        } else {
            kept.push_back(std::move(e));
        }
    }
    inst->queue.swap(kept);
    return removed;
}

std::vector<QueueEntry> InstancePool::take_tail(const std::string& instance_id,
                                                std::size_t count) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    count = std::min(count, inst->queue.size());
    std::vector<QueueEntry> taken;
    for (std::size_t i = 0; i < count; ++i) {
        QueueEntry e = std::move(inst->queue.back());
        inst->queue.pop_back();
        inst->queued_cost_us -= e.est_cost_us;
        taken.push_back(std::move(e));
    }
    std::reverse(taken.begin(), taken.end());
    if (inst->queue.empty()) inst->queued_cost_us = 0.0;
    return taken;
}

ExecBatch InstancePool::pop_batch(const std::string& instance_id, int max_batch_tokens,
                                  SimTime now) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    if (inst->queue.empty()) fail(instance_id + ": pop from empty queue");
    if (inst->executing) fail(instance_id + " is already executing");
    ExecBatch b;
    b.phase = inst->queue.front().phase;
    long long budget = 0;
    while (!inst->queue.empty()) {
        const QueueEntry& head = inst->queue.front();
        if (head.phase != b.phase) break;
        if (!b.members.empty() && budget + head.tokens > max_batch_tokens) break;
        budget += head.tokens;
        inst->queued_cost_us -= head.est_cost_us;
        b.members.push_back(head);
        inst->queue.pop_front();
    }
    if (inst->queue.empty()) inst->queued_cost_us = 0.0;  // absorb float drift
    inst->executing = true;
    inst->last_used = now;
    return b;
}

void InstancePool::finish_batch(const std::string& instance_id, SimTime now) {
    Instance* inst = find(instance_id);
    if (inst == nullptr) fail("unknown instance " + instance_id);
    if (!inst->executing) fail(instance_id + " is not executing");
    inst->executing = false;
    inst->last_used = now;
}

Instance* InstancePool::next_runnable(int device, SimTime now) {
    Instance* best = nullptr;
    for (auto& [id, inst] : instances_) {
        if (inst.device != device || inst.executing || inst.queue.empty()) continue;
        if (inst.state != InstanceState::kReady || inst.ready_at > now) continue;
        if (best == nullptr ||
            inst.queue.front().enqueue_seq < best->queue.front().enqueue_seq)
            best = &inst;
    }
    return best;
}

Instance* InstancePool::find(const std::string& instance_id) {
    auto it = instances_.find(instance_id);
    return it == instances_.end() ? nullptr : &it->second;
}

const Instance* InstancePool::find(const std::string& instance_id) const {
    auto it = instances_.find(instance_id);
    return it == instances_.end() ? nullptr : &it->second;
}

Instance* InstancePool::instance_of(const std::string& block_id, int device) {
    for (auto& [id, inst] : instances_)
        if (inst.block_id == block_id && inst.device == device) return &inst;
    return nullptr;
}

const Instance* InstancePool::instance_of(const std::string& block_id, int device) const {
    return const_cast<InstancePool*>(this)->instance_of(block_id, device);
}

std::vector<Instance*> InstancePool::instances_of(const std::string& block_id) {
    std::vector<Instance*> out;
    for (auto& [id, inst] : instances_)
        if (inst.block_id == block_id) out.push_back(&inst);
    return out;
}

const DeviceLane& InstancePool::lane(int device) const {
    auto it = lanes_.find(device);
    if (it == lanes_.end()) fail("unknown device lane " + std::to_string(device));
    return it->second;
}

std::int64_t InstancePool::resident_param_bytes(int device) const {
    std::int64_t total = 0;
    auto it = residency_.find(device);
    if (it == residency_.end()) return 0;
    for (const auto& [cid, rc] : it->second)
        if (rc.first > 0) total += rc.second;
    return total;
}

}  // namespace blocksim

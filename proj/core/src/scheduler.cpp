#include "blocksim/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace blocksim {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Scheduler::Scheduler(const Zoo& zoo, const CostModel& cost, const Cluster& cluster,
                     MemoryLedger& ledger, InstancePool& pool, KvStore& kv,
                     const ScenarioConfig& cfg)
    : zoo_(zoo), cost_(cost), cluster_(cluster), ledger_(ledger), pool_(pool), kv_(kv),
      cfg_(cfg) {}

double Scheduler::speed(int device) const {
    return cost_.speed_factor(cluster_.device(device).device_class);
}

EstimateBreakdown Scheduler::estimate(const BindingQuery& q, const std::string& block_id,
                                      const std::string& stitch_class, const Instance* inst,
                                      int device, std::int64_t* evict_bytes_out) const {
    EstimateBreakdown e;
    const double sp = speed(device);
    e.compute_us = cost_.block_us(zoo_, block_id, q.phase, 1.0, q.context_tokens, sp);
    if (!stitch_class.empty())
        e.compute_us += cost_.stitch_us(stitch_class, 1.0, q.context_tokens, sp);

    const DeviceLane& lane = pool_.lane(device);
    const double lane_rem = std::max(0.0, static_cast<double>(lane.busy_until - q.now));
    e.queue_us = lane_rem + (inst != nullptr ? inst->queued_cost_us : 0.0);

    double tx = 0.0;
    if (q.from_device >= 0 && q.from_device != device) {
        const std::int64_t act = cost_.act_bytes_per_token(zoo_, block_id) *
                                 (q.phase == Phase::kPrefill ? q.context_tokens : 1);
        tx = static_cast<double>(act) / cluster_.path_bandwidth_bps(q.from_device, device) * 1e6;
    }
    if (q.phase == Phase::kDecode) {
        const int owner = kv_.device_of(q.request_id, q.chain_block);
        if (owner >= 0 && owner != device) {
            auto [rec, cp] = migration_rates(block_id, owner, device);
            tx += static_cast<double>(
                plan_migration(kv_.pages(q.request_id, q.chain_block), rec, cp).completion_us);
        }
    }
    e.transfer_us = tx;

    if (inst != nullptr) {
        if (inst->state == InstanceState::kLoading) {
            const double rem = std::max(0.0, static_cast<double>(inst->ready_at - q.now));
            // An idle load path overlaps the incoming transfer.
            e.load_us = lane_rem > 0.0 ? rem : std::max(0.0, rem - e.transfer_us);
        }
        return e;
    }
    // New instance: parameter load, after idle evictions if memory is tight.
    const std::int64_t need = pool_.param_bytes_needed(block_id, device);
    std::int64_t evict = 0;
    if (need > ledger_.free_bytes(device)) {
        auto plan = pool_.eviction_plan(device, need - ledger_.free_bytes(device));
        if (!plan.ok) {
            e.load_us = kInf;
            return e;
        }
        evict = plan.freed_bytes;
    }
    if (evict_bytes_out != nullptr) *evict_bytes_out = evict;
    const DeviceDescriptor& d = cluster_.device(device);
    const double swap = (static_cast<double>(evict) / d.mem_bandwidth_bps +
                         static_cast<double>(need) / d.load_bandwidth_bps) *
                        1e6;
    e.load_us = lane_rem > 0.0 ? swap : std::max(0.0, swap - e.transfer_us);
    return e;
}

std::optional<BindingChoice> Scheduler::choose_binding(const BindingQuery& q) const {
    std::vector<CandidateBlock> candidates;
    if (cfg_.adaptive) {
        candidates = zoo_.candidate_instances(q.chain_block);
    } else {
        candidates.push_back({q.chain_block, "", 1.0});
    }

    struct Option {
        BindingChoice choice;
        double score = 0.0;
    };
    std::vector<Option> options;
    auto push_option = [&](const CandidateBlock& cb, const std::string& stitch_class,
                           const Instance* inst, int device) {
        std::int64_t evict = 0;
        EstimateBreakdown e = estimate(q, cb.block_id, stitch_class, inst, device, &evict);
        if (!std::isfinite(e.total_us())) return;
        Option o;
        o.choice.block_id = cb.block_id;
        o.choice.stitch_class = stitch_class;
        o.choice.instance_id = inst != nullptr ? inst->id : "";
        o.choice.device = device;
        o.choice.adaptive = cb.block_id != q.chain_block;
        o.choice.evict_bytes = evict;
        o.choice.est = e;
        o.score = cfg_.least_busy ? e.queue_us : e.total_us();
        options.push_back(std::move(o));
    };

    auto pool = const_cast<InstancePool*>(&pool_);
    for (const auto& cb : candidates) {
        const std::string stitch_class =
            cb.stitch_id.empty() ? "" : zoo_.stitch(cb.stitch_id).cost_class;
        for (Instance* inst : pool->instances_of(cb.block_id))
            push_option(cb, stitch_class, inst, inst->device);
    }

    // Keep the cache at home when possible: if the decode step's cache
    // device hosts ready candidates, choose among those only. The naive
    // least-busy policy balances on queue length alone and ignores cache
    // placement, so it skips this restriction (and pays in migrations).
    if (q.phase == Phase::kDecode && !cfg_.least_busy) {
        const int owner = kv_.device_of(q.request_id, q.chain_block);
        if (owner >= 0) {
            std::vector<Option> at_home;
            for (const auto& o : options) {
                const Instance* inst = pool_.find(o.choice.instance_id);
                if (o.choice.device == owner && inst != nullptr &&
                    inst->state == InstanceState::kReady)
                    at_home.push_back(o);
            }
            if (!at_home.empty()) options.swap(at_home);
        }
    }

    if (options.empty()) {
        // Nothing serves any acceptable block yet: plan a new instance,
        // preferring the chain block itself (candidates are self-first).
        for (const auto& cb : candidates) {
            const std::string stitch_class =
                cb.stitch_id.empty() ? "" : zoo_.stitch(cb.stitch_id).cost_class;
            const DevicePreference pref = cfg_.placement == PlacementPolicy::kFragMin
                                              ? DevicePreference::kTightestFit
                                              : DevicePreference::kLocality;
            const int dev = choose_device(cb.block_id, pref);
            if (dev >= 0) push_option(cb, stitch_class, nullptr, dev);
        }
    }
    if (options.empty()) return std::nullopt;

    const Option* best = &options.front();
    for (const auto& o : options) {
        auto key = [](const Option& x) {
            return std::make_tuple(x.score, x.choice.est.transfer_us, x.choice.device,
                                   x.choice.instance_id);
        };
        if (key(o) < key(*best)) best = &o;
    }
    return best->choice;
}

std::vector<std::pair<std::string, std::string>> Scheduler::chain_neighbours() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& mid : zoo_.model_ids()) {
        const auto& chain = zoo_.model(mid).chain;
        for (std::size_t i = 0; i + 1 < chain.size(); ++i)
            out.emplace_back(chain[i], chain[i + 1]);
    }
    return out;
}

bool Scheduler::block_is_chain_final(const std::string& block_id) const {
    for (const auto& mid : zoo_.model_ids()) {
        const auto& chain = zoo_.model(mid).chain;
        if (!chain.empty() && chain.back() == block_id) return true;
    }
    return false;
}

std::vector<std::string> Scheduler::speculation_marks() const {
    if (!cfg_.speculation || cfg_.spec_fraction <= 0.0 || pool_.all().empty()) return {};
    struct Ranked {
        double score;
        const Instance* inst;
    };
    std::vector<Ranked> ranked;
    for (const auto& [id, inst] : pool_.all()) ranked.push_back({inst.queued_cost_us, &inst});
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.inst->id < b.inst->id;
    });
    const std::size_t want = static_cast<std::size_t>(
        std::ceil(cfg_.spec_fraction * static_cast<double>(ranked.size())));

    auto neighbours = chain_neighbours();
    std::set<std::string> marked_blocks;
    std::vector<std::string> marks;
    for (const auto& r : ranked) {
        if (marks.size() >= want) break;
        const std::string& b = r.inst->block_id;
        if (!cost_.surrogate_speedup(zoo_, b).has_value()) continue;
        if (block_is_chain_final(b)) continue;
        bool adjacent = false;
        for (const auto& [x, y] : neighbours) {
            if ((x == b && marked_blocks.count(y)) || (y == b && marked_blocks.count(x))) {
                adjacent = true;
                break;
            }
        }
        if (adjacent) continue;
        marked_blocks.insert(b);
        marks.push_back(r.inst->id);
    }
    return marks;
}

std::int64_t Scheduler::max_queue_len(const Instance& inst) const {
    const std::int64_t per_token = cost_.kv_bytes_per_token(zoo_, inst.block_id) +
                                   cost_.act_bytes_per_token(zoo_, inst.block_id);
    if (per_token <= 0) return std::numeric_limits<std::int64_t>::max();
    const std::int64_t request_mem =
        ledger_.capacity(inst.device) - ledger_.used(inst.device, MemoryLedger::Category::kParams);
    if (request_mem <= 0) return 0;
    return request_mem / (static_cast<std::int64_t>(cfg_.expected_tokens) * per_token);
}

std::vector<ScaleDecision> Scheduler::scale_decisions(SimTime) const {
    std::vector<const Instance*> overloaded;
    for (const auto& [id, inst] : pool_.all()) {
        // Two overload signals: the memory-derived queue-length cap, and the
        // estimated queueing delay held behind the instance. The delay rule
        // catches hot instances whose queues are short in entries but long in
        // time (a few expensive requests), which the length rule never sees.
        bool hot = false;
        const std::int64_t maxq = max_queue_len(inst);
        if (maxq != std::numeric_limits<std::int64_t>::max() &&
            static_cast<double>(inst.queue.size()) > 0.8 * static_cast<double>(maxq))
            hot = true;
        const double pressure = std::max(inst.queued_cost_us, inst.queued_cost_hwm);
        if (cfg_.scale_queue_us > 0 && pressure > static_cast<double>(cfg_.scale_queue_us))
            hot = true;
        if (hot) overloaded.push_back(&inst);
    }
    std::sort(overloaded.begin(), overloaded.end(), [](const Instance* a, const Instance* b) {
        const double pa = std::max(a->queued_cost_us, a->queued_cost_hwm);
        const double pb = std::max(b->queued_cost_us, b->queued_cost_hwm);
        if (pa != pb) return pa > pb;
        return a->id < b->id;
    });
    std::vector<ScaleDecision> out;
    std::map<std::string, std::set<int>> claimed;
    for (const Instance* inst : overloaded) {
        std::set<int> exclude = claimed[inst->block_id];
        const int dev = choose_device(inst->block_id, DevicePreference::kMostFree, exclude);
        if (dev < 0) continue;
        out.push_back({inst->id, dev});
        claimed[inst->block_id].insert(dev);
    }
    return out;
}

int Scheduler::choose_device(const std::string& block_id, DevicePreference pref,
                             const std::set<int>& exclude) const {
    struct Feasible {
        int dev;
        std::int64_t free;
    };
    std::vector<Feasible> feasible;
    for (int dev : cluster_.device_ids()) {
        if (exclude.count(dev) > 0) continue;
        if (pool_.instance_of(block_id, dev) != nullptr) continue;
        const std::int64_t need = pool_.param_bytes_needed(block_id, dev);
        const std::int64_t free = ledger_.free_bytes(dev);
        if (need > free && !pool_.eviction_plan(dev, need - free).ok) continue;
        feasible.push_back({dev, free});
    }
    if (feasible.empty()) return -1;

    if (pref == DevicePreference::kTightestFit) {
        const Feasible* best = &feasible.front();
        for (const auto& f : feasible)
            if (f.free < best->free) best = &f;
        return best->dev;
    }
    if (pref == DevicePreference::kLocality) {
        // Score devices by adjacency of the blocks they already host, seeded
        // with static chain adjacency so the preference works from the start.
        std::map<std::pair<std::string, std::string>, std::int64_t> weight = adjacency_;
        for (const auto& [x, y] : chain_neighbours()) weight[{x, y}] += 1;
        const Feasible* best = nullptr;
        std::int64_t best_score = -1;
        for (const auto& f : feasible) {
            std::int64_t score = 0;
            for (const auto& [id, inst] : pool_.all()) {
                if (inst.device != f.dev) continue;
                auto it = weight.find({inst.block_id, block_id});
                if (it != weight.end()) score += it->second;
                it = weight.find({block_id, inst.block_id});
                if (it != weight.end()) score += it->second;
            }
            if (best == nullptr || score > best_score ||
                (score == best_score && f.free > best->free)) {
                best = &f;
                best_score = score;
            }
        }
        if (best_score > 0) return best->dev;
        // No adjacency signal: fall through to spreading.
    }
    const Feasible* best = &feasible.front();
    for (const auto& f : feasible)
        if (f.free > best->free) best = &f;
    return best->dev;
}

void Scheduler::note_adjacency(const std::string& from_block, const std::string& to_block) {
    if (from_block.empty() || to_block.empty() || from_block == to_block) return;
    adjacency_[{from_block, to_block}] += 1;
}

std::vector<PlacementMove> Scheduler::placement_moves() const {
    if (cfg_.placement != PlacementPolicy::kLocality) return {};
    std::vector<std::pair<std::int64_t, std::pair<std::string, std::string>>> hot;
    for (const auto& [pair, count] : adjacency_) hot.push_back({count, pair});
    std::sort(hot.begin(), hot.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    auto pool = const_cast<InstancePool*>(&pool_);
    std::vector<PlacementMove> moves;
    std::set<std::string> moved;
    std::set<int> targeted;
    auto idle = [&](const Instance* i) {
        return !i->executing && i->queue.empty() && i->state == InstanceState::kReady &&
               moved.count(i->id) == 0;
    };
    auto fits = [&](const std::string& block, int dev) {
        if (pool_.instance_of(block, dev) != nullptr) return false;
        const std::int64_t need = pool_.param_bytes_needed(block, dev);
        const std::int64_t free = ledger_.free_bytes(dev);
        return need <= free || pool_.eviction_plan(dev, need - free).ok;
    };
    for (const auto& [count, pair] : hot) {
        if (moves.size() >= 2) break;
        if (count <= 0) break;
        for (Instance* ia : pool->instances_of(pair.first)) {
            if (moves.size() >= 2) break;
            for (Instance* ib : pool->instances_of(pair.second)) {
                if (moves.size() >= 2) break;
                if (cluster_.same_server(ia->device, ib->device)) continue;
                if (targeted.count(ia->device) + targeted.count(ib->device) > 0) continue;
                if (idle(ib) && fits(ib->block_id, ia->device)) {
                    moves.push_back({ib->id, ia->device});
                    moved.insert(ib->id);
                    targeted.insert(ia->device);
                } else if (idle(ia) && fits(ia->block_id, ib->device)) {
                    moves.push_back({ia->id, ib->device});
                    moved.insert(ia->id);
                    targeted.insert(ib->device);
                }
            }
        }
    }
    return moves;
}

std::pair<SimTime, SimTime> Scheduler::migration_rates(const std::string& block_id,
                                                       int src_device, int dst_device) const {
    const double chunk_us =
        cost_.block_us(zoo_, block_id, Phase::kPrefill, 1.0, 16.0 * kPageTokens,
                       speed(dst_device));
    const SimTime rec = std::max<SimTime>(1, std::llround(chunk_us / 16.0));
    const std::int64_t page_bytes = cost_.kv_bytes_per_token(zoo_, block_id) * kPageTokens;
    const double bw = cluster_.path_bandwidth_bps(src_device, dst_device);
    SimTime cp = 1;
    if (std::isfinite(bw) && bw > 0.0)
        cp = std::max<SimTime>(1, std::llround(static_cast<double>(page_bytes) / bw * 1e6));
    return {rec, cp};
}

}  // namespace blocksim

#include "blocksim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace blocksim {

namespace {

// Backoff before re-attempting a KV reservation that found the device full.
constexpr SimTime kMemStallUs = 100000;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error("run: " + what); }

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

}  // namespace

ServingPlan build_serving_plan(const ScenarioConfig& cfg, const Zoo& original) {
    ServingPlan plan;
    plan.served_models = original.served_model_ids();
    if (plan.served_models.empty()) fail("zoo has no served models");

    if (cfg.mode == ServeMode::kBlock) {
        plan.zoo = original;
        for (const auto& mid : original.model_ids())
            plan.chains[mid] = original.model(mid).chain;
        return plan;
    }

    auto components_of = [&](const std::string& mid) {
        std::vector<ComponentDescriptor> out;
        for (const auto& cid : original.model(mid).component_ids)
            out.push_back(original.component(cid));
        return out;
    };

    if (cfg.mode == ServeMode::kPerModel) {
        // One whole-model block per served model. Content ids are namespaced
        // per model: every model carries a full private parameter copy.
        Zoo z(cfg.equivalence_threshold);
        for (const auto& mid : plan.served_models) {
            auto comps = components_of(mid);
            for (auto& c : comps) {
                c.id = "pm." + mid + "." + c.id;
                c.model_id = mid;
                for (auto& p : c.contents) p.content_id = "pm." + mid + "." + p.content_id;
            }
            z.add_foundation(mid, comps);
            plan.chains[mid] = z.model(mid).chain;
        }
        plan.zoo = std::move(z);
        return plan;
    }

    // Parameter sharing: per foundation family one merged engine block that
    // carries the foundation weights plus every adapter's delta bytes; all
    // adapter variants route through it (branch surcharge at execution).
    // Fully fine-tuned models keep a private monolithic block.
    Zoo z(cfg.equivalence_threshold);
    std::map<std::string, std::vector<std::string>> families;  // foundation -> PE models
    for (const auto& mid : plan.served_models) {
        const auto& m = original.model(mid);
        if (m.tuning == TuningKind::kFull) {
            z.add_foundation(mid, components_of(mid));
            plan.chains[mid] = z.model(mid).chain;
        } else {
            families[m.foundation_id].push_back(mid);
        }
    }
    for (const auto& mid : original.model_ids()) {
        auto fit = families.find(mid);
        if (fit == families.end()) continue;
        auto comps = components_of(mid);
        std::set<std::string> have;
        for (const auto& c : comps)
            for (const auto& p : c.contents) have.insert(p.content_id);
        for (const auto& member : fit->second) {
            for (const auto& cid : original.model(member).component_ids) {
                for (const auto& p : original.component(cid).contents) {
                    if (have.insert(p.content_id).second) comps.front().contents.push_back(p);
                }
            }
        }
        z.add_foundation(mid, comps);
        const std::string engine_block = z.model(mid).chain.front();
        for (const auto& member : fit->second) {
            plan.chains[member] = {engine_block};
            plan.branches[engine_block] += 1;
        }
    }
    plan.zoo = std::move(z);
    return plan;
}

Simulation::Simulation(const ScenarioConfig& cfg, const Zoo& original_zoo, Cluster cluster,
                       CostModel cost, std::vector<Request> requests)
    : cfg_(cfg),
      plan_(build_serving_plan(cfg, original_zoo)),
      cluster_(std::move(cluster)),
      cost_(std::move(cost)),
      engine_(),
      ledger_(cluster_),
      links_(engine_, cluster_),
      pool_(plan_.zoo, cluster_, ledger_),
      kv_(ledger_),
      sched_(plan_.zoo, cost_, cluster_, ledger_, pool_, kv_, cfg_),
      spec_rng_(cfg.seed, "speculation"),
      requests_(std::move(requests)) {
    engine_.set_trace_hook([this](SimTime t, std::uint64_t seq, EventKind kind) {
        digest_.observe(t, seq, kind);
    });
}

double Simulation::device_speed(int dev) const {
    return cost_.speed_factor(cluster_.device(dev).device_class);
}

double Simulation::standalone_cost_us(const StepBinding& b, Phase phase, int context,
                                      int dev) const {
    const double sp = device_speed(dev);
    double us = cost_.block_us(plan_.zoo, b.block_id, phase, 1.0, context, sp);
    if (!b.stitch_class.empty()) us += cost_.stitch_us(b.stitch_class, 1.0, context, sp);
    return us;
}

double Simulation::batch_duration_us(const Instance& inst, const ExecBatch& b) const {
    const double sp = device_speed(inst.device);
    const double n = b.batch_size();
    const double ctx = b.max_context_tokens();
    double us = cost_.block_us(plan_.zoo, inst.block_id, b.phase, n, ctx, sp);
    std::map<std::string, int> stitched;
    for (const auto& m : b.members)
        if (!m.stitch_class.empty()) stitched[m.stitch_class] += 1;
    for (const auto& [cls, count] : stitched)
        us += cost_.stitch_us(cls, count, ctx, sp);
    auto bit = plan_.branches.find(inst.block_id);
    if (bit != plan_.branches.end() && bit->second > 1)
        us *= 1.0 + cfg_.ps_branch_surcharge * (bit->second - 1);
    if (pool_.lane(inst.device).surrogate_busy_until > now()) us *= cfg_.spec_alpha;
    return us;
}

nlohmann::ordered_json Simulation::run() {
    for (std::size_t i = 0; i < requests_.size(); ++i) {
        engine_.schedule(requests_[i].arrival_us, EventKind::kRequestArrival,
                         [this, i] { on_arrival(i); });
    }
    schedule_ticks();
    engine_.run();

    nlohmann::ordered_json meta;
    meta["name"] = cfg_.name;
    meta["mode"] = serve_mode_name(cfg_.mode);
    meta["placement"] = placement_policy_name(cfg_.placement);
    meta["seed"] = cfg_.seed;
    meta["adaptive"] = cfg_.adaptive;
    meta["speculation"] = cfg_.speculation;
    meta["kv_recalc_only"] = cfg_.kv_recalc_only;
    meta["least_busy"] = cfg_.least_busy;
    meta["requests"] = requests_.size();
    meta["models"] = plan_.served_models.size();
    meta["blocks"] = plan_.zoo.block_count();
    meta["instances"] = pool_.all().size();
    meta["workload_digest"] = hex64(workload_digest(requests_));
    return metrics_.build_report(meta, digest_.value());
}

void Simulation::schedule_ticks() {
    auto recur = [this](SimTime period, EventKind kind, auto&& body) {
        auto loop = [this, period, kind, body](auto&& self) -> void {
            engine_.schedule_in(period, kind, [this, body, self] {
                body();
                if (completed_ < requests_.size()) self(self);
            });
        };
        loop(loop);
    };
    recur(cfg_.metrics_tick_us, EventKind::kMetricsTick,
          [this] { metrics_.sample(now(), ledger_, cluster_.device_ids()); });
    recur(cfg_.review_period_us, EventKind::kScaleCheck, [this] { scale_review(); });
    recur(cfg_.review_period_us, EventKind::kPlacementReview, [this] { placement_review(); });
    recur(cfg_.kv_review_period_us, EventKind::kKvReview, [this] { kv_review(); });
}

void Simulation::on_arrival(std::size_t index) {
    const Request& req = requests_[index];
    RequestSim r;
    r.req = req;
    r.model_id =
        plan_.served_models[static_cast<std::size_t>(req.app_id) % plan_.served_models.size()];
    r.chain = &plan_.chains.at(r.model_id);
    if (r.chain->empty()) fail("model " + r.model_id + " has an empty chain");
    r.bindings.resize(r.chain->size());
    r.context_tokens = req.prompt_tokens;
    metrics_.on_arrival(req, now());
    auto [it, inserted] = live_.emplace(req.id, std::move(r));
    if (!inserted) fail("duplicate request id");
    dispatch_step(it->second);
}

void Simulation::dispatch_step(RequestSim& r) {
    StepBinding& binding = r.bindings[static_cast<std::size_t>(r.step)];
    const bool stale =
        binding.instance_id.empty() || pool_.find(binding.instance_id) == nullptr;
    if (stale || cfg_.least_busy) {
        BindingQuery q;
        q.request_id = r.req.id;
        q.chain_block = chain_block(r, r.step);
        q.phase = r.phase;
        q.tokens = r.phase == Phase::kPrefill ? r.req.prompt_tokens : 1;
        q.context_tokens = r.context_tokens;
        q.from_device = r.from_device;
        q.now = now();
        auto choice = sched_.choose_binding(q);
        if (!choice.has_value())
            fail("no feasible target for block " + q.chain_block);
        std::string inst_id = choice->instance_id;
        if (inst_id.empty()) inst_id = create_instance(choice->block_id, choice->device);
        binding.instance_id = inst_id;
        binding.block_id = choice->block_id;
        binding.stitch_class = choice->stitch_class;
        if (choice->adaptive) {
            metrics_.on_adaptive_resolution(r.req.id);
            metrics_.decision(now(), "adaptive_resolution",
                              q.chain_block + " -> " + choice->block_id + " req=" +
                                  std::to_string(r.req.id));
        }
        if (r.step > 0)
            sched_.note_adjacency(r.bindings[static_cast<std::size_t>(r.step) - 1].block_id,
                                  choice->block_id);
    }
    deliver(r);
}

std::string Simulation::create_instance(const std::string& block_id, int device) {
    // Evicting can remove shared content the incoming block was counting as
    // resident, which grows its own footprint, so re-derive the deficit until
    // the block genuinely fits.
    std::int64_t evicted = 0;
    for (;;) {
        const std::int64_t deficit =
            pool_.param_bytes_needed(block_id, device) - ledger_.free_bytes(device);
        if (deficit <= 0) break;
        auto plan = pool_.eviction_plan(device, deficit);
        if (!plan.ok)
            fail("block " + block_id + " does not fit on device " + std::to_string(device));
        for (const auto& victim : plan.victims) {
            metrics_.decision(now(), "evict", victim + " dev=" + std::to_string(device));
            pool_.evict(victim);
        }
        evicted += plan.freed_bytes;
    }
    const std::int64_t need = pool_.param_bytes_needed(block_id, device);
    const SimTime load = cluster_.swap_us(device, evicted, need);
    Instance& inst = pool_.create(block_id, device, now(), now() + load);
    metrics_.decision(now(), "instance_create",
                      inst.id + " block=" + block_id + " dev=" + std::to_string(device) +
                          " load_us=" + std::to_string(load));
    if (load > 0) {
        const std::string id = inst.id;
        engine_.schedule_in(load, EventKind::kLoadComplete, [this, id] {
            Instance* in = pool_.find(id);
            if (in == nullptr) return;  // evicted while loading (should not happen: busy)
            pool_.mark_ready(id, now());
            for (const auto& e : in->queue)
                metrics_.set_state(e.request_id, RequestState::kQueue, now());
            pump(in->device);
        });
    }
    return inst.id;
}

void Simulation::deliver(RequestSim& r) {
    const StepBinding& b = r.bindings[static_cast<std::size_t>(r.step)];
    Instance* inst = pool_.find(b.instance_id);
    if (inst == nullptr) {  // evicted since binding; choose again
        r.bindings[static_cast<std::size_t>(r.step)] = {};
        dispatch_step(r);
        return;
    }
    const int dev = inst->device;
    if (r.from_device >= 0 && r.from_device != dev) {
        const std::int64_t bytes =
            cost_.act_bytes_per_token(plan_.zoo, b.block_id) *
            (r.phase == Phase::kPrefill ? r.context_tokens : 1);
        metrics_.add_comm_bytes(bytes);
        if (!cluster_.same_server(r.from_device, dev)) metrics_.inc_inter_server_forward();
        metrics_.set_state(r.req.id, RequestState::kTransfer, now());
        const std::uint64_t id = r.req.id;
        links_.transfer(r.from_device, dev, bytes, [this, id] {
            auto it = live_.find(id);
            if (it == live_.end() || it->second.done) return;
            it->second.from_device = -1;  // delivered; no further hop this step
            enqueue_step(it->second);
        });
        return;
    }
    enqueue_step(r);
}

void Simulation::enqueue_step(RequestSim& r) {
    const StepBinding& b = r.bindings[static_cast<std::size_t>(r.step)];
    Instance* inst = pool_.find(b.instance_id);
    if (inst == nullptr) {
        r.bindings[static_cast<std::size_t>(r.step)] = {};
        dispatch_step(r);
        return;
    }
    QueueEntry e;
    e.request_id = static_cast<int>(r.req.id);
    e.chain_step = r.step;
    e.phase = r.phase;
    e.tokens = r.phase == Phase::kPrefill ? r.req.prompt_tokens : 1;
    e.context_tokens = r.context_tokens;
    e.stitch_class = b.stitch_class;
    e.est_cost_us = standalone_cost_us(b, r.phase, r.context_tokens, inst->device);
    e.kv_resident = r.phase == Phase::kDecode &&
                    kv_.device_of(r.req.id, chain_block(r, r.step)) == inst->device;
    pool_.enqueue(inst->id, e);
    metrics_.set_state(r.req.id,
                       inst->state == InstanceState::kLoading ? RequestState::kLoad
                                                              : RequestState::kQueue,
                       now());
    request_pump(inst->device);
}

void Simulation::request_pump(int device) {
    if (defer_pumps_) {
        pending_pumps_.insert(device);
        return;
    }
    pump(device);
}

void Simulation::sweep_remote_kv(Instance& inst) {
    // Decode entries whose cache sits elsewhere cannot run here yet: pull
    // them out and re-home the cache first (reactive migration).
    std::vector<std::pair<std::uint64_t, int>> remote;
    for (const auto& e : inst.queue) {
        if (e.phase != Phase::kDecode) continue;
        const auto& r = live_.at(static_cast<std::uint64_t>(e.request_id));
        const int owner = kv_.device_of(r.req.id, chain_block(r, e.chain_step));
        if (owner >= 0 && owner != inst.device)
            remote.emplace_back(r.req.id, e.chain_step);
    }
    for (const auto& [id, step] : remote) {
        pool_.remove_queued(inst.id, static_cast<int>(id));
        start_kv_migration(id, step, inst.device, inst.id, /*proactive=*/false);
    }
}

void Simulation::start_kv_migration(std::uint64_t request_id, int step, int dst_device,
                                    const std::string& dst_instance, bool proactive) {
    auto& r = live_.at(request_id);
    const std::string cb = chain_block(r, step);
    const int src = kv_.device_of(request_id, cb);
    if (src < 0 || src == dst_device) {
        enqueue_step(r);
        return;
    }
    const StepBinding& b = r.bindings[static_cast<std::size_t>(step)];
    auto [rec, cp] = sched_.migration_rates(b.block_id.empty() ? cb : b.block_id, src,
                                            dst_device);
    if (cfg_.kv_recalc_only) cp = 0;
    const int pages = kv_.pages(request_id, cb);
    MigrationPlan plan = plan_migration(pages, rec, cp);
    metrics_.set_state(request_id, RequestState::kTransfer, now());
    metrics_.decision(now(), proactive ? "kv_migrate_proactive" : "kv_migrate_reactive",
                      "req=" + std::to_string(request_id) + " block=" + cb + " " +
                          std::to_string(src) + "->" + std::to_string(dst_device) + " pages=" +
                          std::to_string(pages));
    // Recompute work occupies the destination while the plan runs.
    if (plan.recompute_pages > 0)
        metrics_.on_busy(dst_device, now(), now() + plan.recompute_pages * plan.rec_us_per_page);

    const std::int64_t page_bytes = kv_.segment_bytes(request_id, cb) > 0 && pages > 0
                                        ? kv_.segment_bytes(request_id, cb) / pages
                                        : 0;
    engine_.schedule_in(plan.completion_us, EventKind::kMigrationStep,
                        [this, request_id, cb, dst_device, dst_instance, plan, page_bytes] {
        auto it = live_.find(request_id);
        if (it == live_.end() || it->second.done) return;
        auto& req = it->second;
        if (!kv_.has_segment(request_id, cb)) return;
        if (cfg_.kv_recalc_only) {
            // Fresh recompute on the destination: no bytes cross the wire.
            const int toks = kv_.tokens(request_id, cb);
            const std::int64_t bpt = cost_.kv_bytes_per_token(plan_.zoo, cb);
            if (!ensure_request_memory(
                    dst_device, ((toks + kPageTokens - 1) / kPageTokens) * bpt * kPageTokens)) {
                // Destination filled up while the plan ran: abandon the move
                // and let dispatch re-evaluate with the cache where it is.
                req.bindings[static_cast<std::size_t>(req.step)] = {};
                dispatch_step(req);
                return;
            }
            kv_.release(request_id, cb);
            kv_.create_segment(request_id, cb, dst_device, bpt);
            kv_.append_tokens(request_id, cb, toks);
            metrics_.on_kv_migration(plan.pages, 0);
        } else {
            if (!ensure_request_memory(dst_device, kv_.segment_bytes(request_id, cb))) {
                req.bindings[static_cast<std::size_t>(req.step)] = {};
                dispatch_step(req);
                return;
            }
            kv_.move_segment(request_id, cb, dst_device);
            metrics_.on_kv_migration(plan.recompute_pages, plan.copy_pages);
            const std::int64_t copied = plan.copy_pages * page_bytes;
            metrics_.add_kv_copy_bytes(copied);
            metrics_.add_comm_bytes(copied);
        }
        Instance* inst = pool_.find(dst_instance);
        if (inst == nullptr || inst->device != dst_device) {
            // Target vanished while migrating; route through dispatch again.
            req.bindings[static_cast<std::size_t>(req.step)] = {};
            dispatch_step(req);
            return;
        }
        enqueue_step(req);
    });
}

// A decode arrival boards the decode iteration already running on its
// instance and finishes with it (continuous batching: joiners slot into the
// next micro-iteration and sync to the iteration boundary). Convoys that meet
// at a shared block this way finish and forward together, so they stay one
// batch at every later chain hop.
void Simulation::try_join_running(int device) {
    auto rit = running_.find(device);
    if (rit == running_.end()) return;
    RunningBatch& rb = rit->second;
    if (rb.speculated || rb.batch.phase != Phase::kDecode) return;
    Instance* inst = pool_.find(rb.instance_id);
    if (inst == nullptr || inst->device != device) return;
    for (auto it = inst->queue.begin(); it != inst->queue.end();) {
        if (it->phase != Phase::kDecode) {
            ++it;
            continue;
        }
        QueueEntry e = *it;
        it = inst->queue.erase(it);
        inst->queued_cost_us = std::max(0.0, inst->queued_cost_us - e.est_cost_us);
        auto tit = tint_pending_.find({static_cast<std::uint64_t>(e.request_id), e.chain_step});
        if (tit != tint_pending_.end()) {
            if (tit->second.first == inst->id)
                tint_.record(inst->id, now() - tit->second.second);
            tint_pending_.erase(tit);
        }
        metrics_.set_state(static_cast<std::uint64_t>(e.request_id), RequestState::kCompute,
                           now());
        rb.batch.members.push_back(std::move(e));
    }
}

void Simulation::pump(int device) {
    if (running_.count(device) > 0) {
        try_join_running(device);
        return;
    }
    if (pool_.lane(device).busy_until > now()) return;
    Instance* inst = pool_.next_runnable(device, now());
    if (inst == nullptr) return;
    sweep_remote_kv(*inst);
    if (inst->queue.empty()) {
        // Everything runnable needed its cache moved; try the next instance.
        Instance* other = pool_.next_runnable(device, now());
        if (other == nullptr || other == inst) return;
        inst = other;
        sweep_remote_kv(*inst);
        if (inst->queue.empty()) return;
    }
    ExecBatch batch = pool_.pop_batch(inst->id, cfg_.max_batch_tokens, now());

    for (const auto& m : batch.members) {
        auto it = tint_pending_.find({static_cast<std::uint64_t>(m.request_id), m.chain_step});
        if (it != tint_pending_.end()) {
            if (it->second.first == inst->id)
                tint_.record(inst->id, now() - it->second.second);
            tint_pending_.erase(it);
        }
    }

    const double dur = batch_duration_us(*inst, batch);
    const SimTime d = std::max<SimTime>(1, round_us(dur));

    RunningBatch rb;
    rb.instance_id = inst->id;
    rb.batch = batch;
    rb.start = now();
    rb.finish = now() + d;

    const bool marked = cfg_.speculation && spec_marked_.count(inst->id) > 0;
    auto speedup = marked ? cost_.surrogate_speedup(plan_.zoo, inst->block_id) : std::nullopt;
    if (speedup.has_value()) {
        bool any_outstanding = false;
        for (const auto& m : batch.members)
            any_outstanding |=
                live_.at(static_cast<std::uint64_t>(m.request_id)).spec_outstanding;
        if (!any_outstanding) {
            for (const auto& m : batch.members) {
                auto& r = live_.at(static_cast<std::uint64_t>(m.request_id));
                if (m.chain_step + 1 >= static_cast<int>(r.chain->size()))
                    continue;  // a draft may not emit tokens
                rb.spec_members.push_back(r.req.id);
            }
        }
        if (!rb.spec_members.empty()) {
            rb.speculated = true;
            // Marks are one-shot: each review hands out a fresh ration, so a
            // marked instance drafts once per review rather than every batch.
            spec_marked_.erase(inst->id);
            const SimTime s_d = std::max<SimTime>(1, round_us(dur / *speedup));
            pool_.lane(device).surrogate_busy_until = now() + s_d;
            for (std::uint64_t id : rb.spec_members) {
                auto& r = live_.at(id);
                r.spec_outstanding = true;
                r.spec_step = r.step;
                metrics_.on_speculation_start(id);
            }
            const int dev = device;
            std::vector<std::uint64_t> forwarded = rb.spec_members;
            engine_.schedule_in(s_d, EventKind::kGeneric, [this, forwarded, dev] {
                defer_pumps_ = true;
                for (std::uint64_t id : forwarded) {
                    auto it = live_.find(id);
                    if (it == live_.end() || it->second.done) continue;
                    auto& r = it->second;
                    // Forward the draft output downstream right away.
                    r.from_device = dev;
                    r.step = r.spec_step + 1;
                    dispatch_step(r);
                }
                defer_pumps_ = false;
                const std::set<int> devices = std::exchange(pending_pumps_, {});
                for (int d : devices) pump(d);
            });
        }
    }

    for (const auto& m : batch.members)
        metrics_.set_state(static_cast<std::uint64_t>(m.request_id), RequestState::kCompute,
                           now());
    metrics_.on_busy(device, now(), now() + d);
    pool_.lane(device).busy_until = now() + d;
    running_.emplace(device, std::move(rb));
    engine_.schedule_in(d, EventKind::kBatchFinish, [this, device] { on_batch_finish(device); });
}

void Simulation::on_batch_finish(int device) {
    auto it = running_.find(device);
    if (it == running_.end()) fail("batch finish without running batch");
    RunningBatch rb = std::move(it->second);
    running_.erase(it);
    pool_.finish_batch(rb.instance_id, now());
    metrics_.on_batch(rb.batch.phase == Phase::kPrefill,
                      static_cast<int>(rb.batch.members.size()));
    defer_pumps_ = true;
    if (rb.speculated) {
        const bool accepted = spec_rng_.bernoulli(cfg_.spec_accept_prob);
        resolve_speculation(rb, accepted, device);
    } else {
        for (const auto& m : rb.batch.members) handle_member_finish(m, device);
    }
    defer_pumps_ = false;
    pending_pumps_.insert(device);
    const std::set<int> devices = std::exchange(pending_pumps_, {});
    for (int d : devices) pump(d);
}

void Simulation::handle_member_finish(const QueueEntry& member, int device) {
    auto& r = live_.at(static_cast<std::uint64_t>(member.request_id));
    if (r.done) return;
    if (r.discard_on_finish) {
        // This execution consumed a rejected draft: discard and re-run.
        r.discard_on_finish = false;
        r.step = member.chain_step;
        r.from_device = device;
        metrics_.set_state(r.req.id, RequestState::kQueue, now());
        deliver(r);
        return;
    }
    advance_after_step(r, member.chain_step, device);
}

void Simulation::advance_after_step(RequestSim& r, int step, int device) {
    r.from_device = device;
    if (r.spec_outstanding && step == r.spec_step + 1) {
        // The input to this step was an unverified draft: park until the
        // verdict lands.
        r.held = true;
        r.held_step = step;
        r.held_device = device;
        metrics_.set_state(r.req.id, RequestState::kQueue, now());
        return;
    }
    if (r.phase == Phase::kPrefill && !create_kv_for_step(r, step, device)) {
        // No room to materialize the prompt's KV even after idle evictions:
        // stall this request until residents complete and release pages.
        metrics_.on_mem_stall();
        metrics_.set_state(r.req.id, RequestState::kQueue, now());
        const std::uint64_t rid = r.req.id;
        engine_.schedule_in(kMemStallUs, EventKind::kRetry, [this, rid, step, device] {
            auto it = live_.find(rid);
            if (it == live_.end() || it->second.done) return;
            advance_after_step(it->second, step, device);
        });
        return;
    }
    if (r.phase == Phase::kDecode) {
        const std::string& cb = chain_block(r, step);
        if (cost_.kv_bytes_per_token(plan_.zoo, cb) > 0) {
            const StepBinding& b = r.bindings[static_cast<std::size_t>(step)];
            tint_pending_[{r.req.id, step}] = {b.instance_id, now()};
        }
    }
    advance_from(r, step);
}

void Simulation::advance_from(RequestSim& r, int step) {
    if (step + 1 < static_cast<int>(r.chain->size())) {
        r.step = step + 1;
        dispatch_step(r);
        return;
    }
    if (r.phase == Phase::kPrefill) {
        metrics_.on_first_token(r.req.id, now());
        r.generated = 1;
        metrics_.on_tokens(r.req.id, 1);
        r.context_tokens = r.req.prompt_tokens + 1;
        if (r.generated >= r.req.output_tokens) {
            complete_request(r);
            return;
        }
        r.phase = Phase::kDecode;
        r.step = 0;
        dispatch_step(r);
        return;
    }
    if (!append_decode_kv(r)) {
        metrics_.on_mem_stall();
        metrics_.set_state(r.req.id, RequestState::kQueue, now());
        const std::uint64_t rid = r.req.id;
        engine_.schedule_in(kMemStallUs, EventKind::kRetry, [this, rid, step] {
            auto it = live_.find(rid);
            if (it == live_.end() || it->second.done) return;
            advance_from(it->second, step);
        });
        return;
    }
    r.generated += 1;
    metrics_.on_tokens(r.req.id, 1);
    r.context_tokens += 1;
    if (r.generated >= r.req.output_tokens) {
        complete_request(r);
        return;
    }
    r.step = 0;
    dispatch_step(r);
}

bool Simulation::create_kv_for_step(RequestSim& r, int step, int device) {
    const std::string& cb = chain_block(r, step);
    const std::int64_t bpt = cost_.kv_bytes_per_token(plan_.zoo, cb);
    if (bpt <= 0 || kv_.has_segment(r.req.id, cb)) return true;
    const int pages = (r.req.prompt_tokens + kPageTokens - 1) / kPageTokens;
    if (!ensure_request_memory(device, pages * bpt * kPageTokens)) return false;
    kv_.create_segment(r.req.id, cb, device, bpt);
    int covered = 0;
    if (r.req.prefix_group >= 0 && r.req.prefix_tokens > 0) {
        const auto key = std::make_tuple(r.req.prefix_group, cb, device);
        auto dit = prefix_donors_.find(key);
        const int want = std::min(r.req.prefix_tokens, r.req.prompt_tokens);
        if (dit != prefix_donors_.end() && dit->second != r.req.id &&
            kv_.has_segment(dit->second, cb) && kv_.device_of(dit->second, cb) == device &&
            kv_.tokens(dit->second, cb) >= want) {
            covered = kv_.share_prefix(r.req.id, dit->second, cb, want);
            kv_shared_hwm_ = std::max(kv_shared_hwm_, kv_.bytes_saved_by_sharing());
            metrics_.set_kv_shared_bytes(kv_shared_hwm_);
        } else {
            prefix_donors_[key] = r.req.id;
        }
    }
    kv_.append_tokens(r.req.id, cb, r.req.prompt_tokens - covered);
    return true;
}

bool Simulation::append_decode_kv(RequestSim& r) {
    // Two passes: secure every page the boundary crossings need before
    // appending anywhere, so a failure leaves all segments untouched. The
    // segments share one token count, so crossings coincide — demand must be
    // summed per device, not checked one segment at a time.
    std::map<int, std::int64_t> need;
    for (int s = 0; s < static_cast<int>(r.chain->size()); ++s) {
        const std::string& cb = chain_block(r, s);
        if (!kv_.has_segment(r.req.id, cb)) continue;
        if (kv_.tokens(r.req.id, cb) % kPageTokens == 0) {
            const std::int64_t bpt = cost_.kv_bytes_per_token(plan_.zoo, cb);
            need[kv_.device_of(r.req.id, cb)] += bpt * kPageTokens;
        }
    }
    for (const auto& [device, bytes] : need)
        if (!ensure_request_memory(device, bytes)) return false;
    for (int s = 0; s < static_cast<int>(r.chain->size()); ++s) {
        const std::string& cb = chain_block(r, s);
        if (!kv_.has_segment(r.req.id, cb)) continue;
        kv_.append_tokens(r.req.id, cb, 1);
    }
    return true;
}

bool Simulation::ensure_request_memory(int device, std::int64_t bytes) {
    if (ledger_.can_reserve(device, bytes)) return true;
    auto plan = pool_.eviction_plan(device, bytes - ledger_.free_bytes(device));
    if (!plan.ok) return false;
    for (const auto& victim : plan.victims) {
        metrics_.decision(now(), "evict", victim + " dev=" + std::to_string(device) +
                                              " (request data pressure)");
        pool_.evict(victim);
    }
    return true;
}

void Simulation::complete_request(RequestSim& r) {
    r.done = true;
    metrics_.on_complete(r.req.id, now());
    kv_.release_request(r.req.id);
    completed_ += 1;
}

void Simulation::resolve_speculation(const RunningBatch& rb, bool accepted, int device) {
    std::set<std::uint64_t> spec(rb.spec_members.begin(), rb.spec_members.end());
    for (const auto& m : rb.batch.members) {
        auto& r = live_.at(static_cast<std::uint64_t>(m.request_id));
        if (r.done) continue;
        if (spec.count(r.req.id) == 0) {
            handle_member_finish(m, device);
            continue;
        }
        metrics_.on_speculation_resolved(accepted);
        finish_verified(r, m.chain_step, accepted, device);
    }
}

void Simulation::finish_verified(RequestSim& r, int k, bool accepted, int device) {
    // The verification lane just produced the correct output and state. Keep
    // the speculation outstanding until the KV lands: any draft-fed step that
    // finishes meanwhile parks itself on the hold.
    if (r.phase == Phase::kPrefill && !create_kv_for_step(r, k, device)) {
        metrics_.on_mem_stall();
        metrics_.set_state(r.req.id, RequestState::kQueue, now());
        const std::uint64_t rid = r.req.id;
        engine_.schedule_in(kMemStallUs, EventKind::kRetry, [this, rid, k, accepted, device] {
            auto it = live_.find(rid);
            if (it == live_.end() || it->second.done) return;
            finish_verified(it->second, k, accepted, device);
        });
        return;
    }
    r.spec_outstanding = false;
    if (accepted) {
        if (r.held) {
            r.held = false;
            const int hs = r.held_step;
            const int hd = r.held_device;
            r.held_step = -1;
            r.held_device = -1;
            advance_after_step(r, hs, hd);
        }
        // Otherwise downstream work is still queued or running; it will
        // advance on its own now that the draft is verified.
        return;
    }
    // Rejected: everything computed from the draft is invalid.
    if (r.held) {
        r.held = false;
        r.held_step = -1;
        r.held_device = -1;
        r.step = k + 1;
        r.from_device = device;
        deliver(r);
        return;
    }
    const StepBinding& nb = r.bindings[static_cast<std::size_t>(k + 1)];
    if (!nb.instance_id.empty()) {
        Instance* inst = pool_.find(nb.instance_id);
        if (inst != nullptr &&
            !pool_.remove_queued(inst->id, static_cast<int>(r.req.id)).empty()) {
            // Still queued downstream: restart it with the true output.
            r.step = k + 1;
            r.from_device = device;
            deliver(r);
            return;
        }
    }
    // Executing right now: let it finish, then discard and re-run.
    r.discard_on_finish = true;
}

void Simulation::scale_review() {
    if (!cfg_.scaling) return;
    for (const auto& d : sched_.scale_decisions(now())) {
        Instance* src = pool_.find(d.instance_id);
        if (src == nullptr) continue;
        const std::string block = src->block_id;
        std::string nid;
        try {
            nid = create_instance(block, d.device);
        } catch (const std::runtime_error&) {
            continue;  // lost the race for memory this round
        }
        metrics_.on_scale_out();
        metrics_.decision(now(), "scale_out",
                          block + " " + d.instance_id + " -> " + nid + " dev=" +
                              std::to_string(d.device));
        Instance* dst = pool_.find(nid);
        auto moved = pool_.take_tail(d.instance_id, src->queue.size() / 2);
        for (auto& e : moved) {
            auto& r = live_.at(static_cast<std::uint64_t>(e.request_id));
            r.bindings[static_cast<std::size_t>(e.chain_step)] = {nid, block, e.stitch_class};
            e.kv_resident =
                e.phase == Phase::kDecode &&
                kv_.device_of(r.req.id, chain_block(r, e.chain_step)) == d.device;
            pool_.enqueue(nid, e);
            metrics_.set_state(r.req.id,
                               dst->state == InstanceState::kLoading ? RequestState::kLoad
                                                                     : RequestState::kQueue,
                               now());
        }
        pump(d.device);
    }
    refresh_marks();
}

void Simulation::kv_review() {
    // Proactive migrations: queued decode entries whose cache is remote and
    // predicted to stay idle long enough for the move to finish in time.
    struct Candidate {
        MigrationCandidate mc;
        std::string instance_id;
        int device;
    };
    std::vector<Candidate> picked;
    for (const auto& [iid, inst] : pool_.all()) {
        for (const auto& e : inst.queue) {
            if (e.phase != Phase::kDecode) continue;
            const auto& r = live_.at(static_cast<std::uint64_t>(e.request_id));
            const std::string& cb = chain_block(r, e.chain_step);
            const int owner = kv_.device_of(r.req.id, cb);
            if (owner < 0 || owner == inst.device) continue;
            auto [rec, cp] = sched_.migration_rates(inst.block_id, owner, inst.device);
            if (cfg_.kv_recalc_only) cp = 0;
            MigrationPlan plan = plan_migration(kv_.pages(r.req.id, cb), rec, cp);
            auto pending = tint_pending_.find({r.req.id, e.chain_step});
            const std::string key =
                pending != tint_pending_.end() ? pending->second.first : inst.id;
            const SimTime t_call =
                pending != tint_pending_.end() ? pending->second.second : now();
            auto predicted = tint_.predicted_remaining(key, t_call, now());
            if (!predicted.has_value() || *predicted < plan.completion_us) continue;
            Candidate c;
            c.mc.request_id = r.req.id;
            c.mc.block_id = cb;
            c.mc.shared_pages = kv_.shared_pages(r.req.id, cb);
            c.mc.resume_time = t_call + *predicted;
            c.instance_id = iid;
            c.device = inst.device;
            picked.push_back(std::move(c));
        }
    }
    std::vector<MigrationCandidate> order;
    for (const auto& c : picked) order.push_back(c.mc);
    order_migrations(order);
    for (const auto& mc : order) {
        for (const auto& c : picked) {
            if (c.mc.request_id != mc.request_id || c.mc.block_id != mc.block_id) continue;
            auto& r = live_.at(mc.request_id);
            // Find the queued step for this block and pull it out.
            for (std::size_t s = 0; s < r.chain->size(); ++s) {
                if (chain_block(r, static_cast<int>(s)) != mc.block_id) continue;
                pool_.remove_queued(c.instance_id, static_cast<int>(mc.request_id));
                r.step = static_cast<int>(s);
                start_kv_migration(mc.request_id, static_cast<int>(s), c.device,
                                   c.instance_id, /*proactive=*/true);
                break;
            }
            break;
        }
    }
    refresh_marks();
}

void Simulation::placement_review() {
    if (!cfg_.scaling) return;
    for (const auto& mv : sched_.placement_moves()) {
        Instance* inst = pool_.find(mv.instance_id);
        if (inst == nullptr || inst->executing || !inst->queue.empty()) continue;
        const std::string block = inst->block_id;
        metrics_.decision(now(), "placement_move",
                          mv.instance_id + " block=" + block + " -> dev=" +
                              std::to_string(mv.dst_device));
        pool_.evict(mv.instance_id);
        try {
            create_instance(block, mv.dst_device);
        } catch (const std::runtime_error&) {
            // Device filled up in between; the block will be re-created on
            // demand by the next dispatch that needs it.
        }
    }
}

void Simulation::refresh_marks() {
    if (!cfg_.speculation) return;
    auto marks = sched_.speculation_marks();
    spec_marked_ = std::set<std::string>(marks.begin(), marks.end());
}

ScenarioConfig effective_config(ScenarioConfig cfg) {
    if (cfg.mode != ServeMode::kBlock) {
        // Baselines model static deployments: every model (or shared engine)
        // is provisioned once and stays put. The adaptive, speculative and
        // elastic machinery under test only runs at block granularity.
        cfg.adaptive = false;
        cfg.speculation = false;
        cfg.scaling = false;
    }
    return cfg;
}

std::vector<Request> build_workload(const ScenarioConfig& cfg) {
    if (!cfg.arrivals_path.empty()) return load_arrivals(cfg.arrivals_path);
    if (!cfg.trace_path.empty()) return replay_trace(cfg.trace_path, cfg.workload, cfg.seed);
    return generate_workload(cfg.workload, cfg.seed);
}

nlohmann::ordered_json run_scenario(const ScenarioConfig& raw) {
    ScenarioConfig cfg = effective_config(raw);
    Zoo original = load_zoo(cfg.zoo_path, cfg.equivalence_threshold, cfg.override_groups,
                            cfg.signatures_dir);
    Cluster cluster = load_cluster(cfg.cluster_path);
    CostModel cost = load_profiles(cfg.profiles_path);
    Simulation sim(cfg, original, std::move(cluster), std::move(cost), build_workload(cfg));
    return sim.run();
}

}  // namespace blocksim

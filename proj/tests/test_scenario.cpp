#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "blocksim/scenario.hpp"
#include "zoo_fixtures.hpp"

using namespace blocksim;

namespace {

// Grids built so the bilinear interpolant is exactly coef * batch * tokens
// inside [1,8] x [1,512] (clamped outside).
Interp2D product_grid(double coef) {
    Interp2D g;
    g.xs = {1, 8};
    g.ys = {1, 512};
    g.v = {{coef * 1 * 1, coef * 1 * 512}, {coef * 8 * 1, coef * 8 * 512}};
    return g;
}

// A second LoRA on the same foundation; with two adapters the parameter
// sharing baseline has to multiplex one merged engine between branches.
void add_lora2(Zoo& zoo) {
    std::vector<ComponentDescriptor> comps;
    const auto& base = zoo.model("base");
    for (int l = 0; l < 2; ++l) {
        ComponentDescriptor att;
        att.id = "lora2.att" + std::to_string(l);
        att.kind = ComponentKind::kAttention;
        att.embed_dim = 4096;
        att.model_id = "lora2";
        att.layer = l;
        att.slot = 0;
        att.attach = "fuse";
        att.contents = {{"base.att" + std::to_string(l) + ".w", 1000},
                        {"lora2.att" + std::to_string(l) + ".delta", 8}};
        comps.push_back(att);
        comps.push_back(zoo.component(base.component_ids[static_cast<std::size_t>(2 * l + 1)]));
    }
    zoo.add_model_pe("lora2", TuningKind::kLora, "base", comps);
}

Cluster make_cluster(std::int64_t mem = 1 << 20) {
    Cluster c;
    c.add_server({0, 1.25e9});
    c.add_server({1, 1.25e9});
    c.add_device({0, 0, "std", mem, 1e9, 1e6});
    c.add_device({1, 1, "std", mem, 1e9, 1e6});
    c.set_inter_default(1.25e8);
    return c;
}

CostModel make_cost() {
    CostModel m;
    m.set_device_class("std", 1.0);
    ComponentClassProfile att;
    att.prefill = product_grid(100.0);
    att.decode = product_grid(10.0);
    att.kv_bytes_per_token = 64;
    m.add_class("attention:4096", att);
    ComponentClassProfile ffn;
    ffn.prefill = product_grid(200.0);
    ffn.decode = product_grid(20.0);
    m.add_class("ffn:4096", ffn);
    return m;
}

std::vector<Request> burst(int n, int prompt, int out, SimTime gap_us, int apps = 2) {
    std::vector<Request> reqs;
    for (int i = 0; i < n; ++i) {
        Request r;
        r.id = static_cast<std::uint64_t>(i + 1);
        r.app_id = i % apps;
        r.arrival_us = gap_us * i;
        r.prompt_tokens = prompt;
        r.output_tokens = out;
        reqs.push_back(r);
    }
    return reqs;
}

ScenarioConfig quiet_config() {
    ScenarioConfig cfg;
    cfg.name = "test";
    cfg.speculation = false;
    cfg.adaptive = true;
    // Reviews far beyond any test horizon unless a test opts in.
    cfg.review_period_us = us_from_s(3600);
    cfg.kv_review_period_us = us_from_s(3600);
    cfg.metrics_tick_us = us_from_s(3600);
    return cfg;
}

}  // namespace

TEST_CASE("serving plan: block granularity keeps the partitioned zoo") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.mode = ServeMode::kBlock;
    ServingPlan plan = build_serving_plan(cfg, zoo);
    CHECK(plan.zoo.block_count() == 9);
    REQUIRE(plan.served_models == std::vector<std::string>{"ft", "lora"});
    CHECK(plan.chains.at("ft").size() == 3);
    CHECK(plan.chains.at("lora").size() == 4);
    CHECK(plan.branches.empty());
    // lora rides the foundation's ffn blocks.
    CHECK(plan.chains.at("lora")[1] == plan.zoo.model("base").chain[1]);
}

TEST_CASE("serving plan: per-model rebuild severs all parameter sharing") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.mode = ServeMode::kPerModel;
    ServingPlan plan = build_serving_plan(cfg, zoo);
    CHECK(plan.zoo.block_count() == 2);  // one monolith per served model
    REQUIRE(plan.chains.at("ft").size() == 1);
    REQUIRE(plan.chains.at("lora").size() == 1);
    CHECK(plan.zoo.block(plan.chains.at("ft")[0]).param_bytes == 8000);
    // The adapter now carries a private copy of the foundation weights too.
    CHECK(plan.zoo.block(plan.chains.at("lora")[0]).param_bytes == 8016);
    CHECK(plan.zoo.equivalence_edges().empty());
    CHECK(plan.branches.empty());
}

TEST_CASE("serving plan: parameter sharing merges adapter families") {
    Zoo zoo = fixtures::family_zoo();
    add_lora2(zoo);
    ScenarioConfig cfg = quiet_config();
    cfg.mode = ServeMode::kParamShare;
    ServingPlan plan = build_serving_plan(cfg, zoo);
    CHECK(plan.zoo.block_count() == 2);  // ft monolith + one family engine
    REQUIRE(plan.chains.at("lora").size() == 1);
    REQUIRE(plan.chains.at("lora2").size() == 1);
    const std::string engine = plan.chains.at("lora")[0];
    CHECK(plan.chains.at("lora2")[0] == engine);
    CHECK(plan.branches.at(engine) == 2);
    // Foundation weights once, plus both adapters' deltas (4 x 8 bytes).
    CHECK(plan.zoo.block(engine).param_bytes == 8032);
    CHECK(plan.zoo.block(plan.chains.at("ft")[0]).param_bytes == 8000);
}

TEST_CASE("end to end: a two-model burst completes with a consistent report") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    auto reqs = burst(12, 32, 4, us_from_ms(3));
    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();

    CHECK(report["requests"]["arrived"] == 12);
    CHECK(report["requests"]["completed"] == 12);
    CHECK(report["generated_tokens"] == 12 * 4);
    CHECK(report["latency"]["count"] == 12);
    CHECK(report["latency"]["mean_us"].get<double>() > 0.0);
    CHECK(report["ttft"]["mean_us"].get<double>() <=
          report["latency"]["mean_us"].get<double>());
    CHECK(report["event_digest"].get<std::uint64_t>() != 0);

    // Every completed request's lifetime decomposes exactly into the four
    // states, so the aggregates reconstruct total latency.
    const auto& d = report["time_decomposition"];
    const double span = d["queue_us"].get<double>() + d["compute_us"].get<double>() +
                        d["transfer_us"].get<double>() + d["load_us"].get<double>();
    const double total_latency =
        report["latency"]["mean_us"].get<double>() * report["latency"]["count"].get<double>();
    CHECK(span == doctest::Approx(total_latency).epsilon(1e-9));
    CHECK(d["compute_us"].get<double>() > 0.0);
    CHECK(d["load_us"].get<double>() > 0.0);  // first touch loads instances
}

TEST_CASE("end to end: identical runs are byte-identical") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.speculation = true;
    cfg.spec_fraction = 0.5;
    cfg.kv_review_period_us = us_from_ms(2);  // refresh marks while running
    auto reqs = burst(10, 32, 6, us_from_ms(2));

    Simulation a(cfg, zoo, make_cluster(), make_cost(), reqs);
    Simulation b(cfg, zoo, make_cluster(), make_cost(), reqs);
    const auto ra = a.run();
    const auto rb = b.run();
    CHECK(ra.dump() == rb.dump());
    CHECK(ra["event_digest"] == rb["event_digest"]);
}

TEST_CASE("speculation: drafts run ahead and every start is resolved") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.speculation = true;
    cfg.spec_fraction = 1.0;  // mark every instance that has a surrogate
    cfg.spec_accept_prob = 0.5;
    cfg.kv_review_period_us = us_from_ms(1);
    auto reqs = burst(10, 32, 6, us_from_ms(2));
    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();

    CHECK(report["requests"]["completed"] == 10);
    const auto started = report["speculation"]["started"].get<std::int64_t>();
    const auto accepted = report["speculation"]["accepted"].get<std::int64_t>();
    const auto rejected = report["speculation"]["rejected"].get<std::int64_t>();
    CHECK(started > 0);
    CHECK(accepted + rejected == started);
    CHECK(rejected > 0);  // p=0.5 over dozens of verdicts
    CHECK(accepted > 0);
}

TEST_CASE("scaling: deep queues split onto a second device") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.review_period_us = us_from_ms(2);
    cfg.expected_tokens = 4096;  // headroom for ~0 queued requests: always scale
    auto reqs = burst(12, 32, 6, us_from_ms(1));
    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();

    CHECK(report["requests"]["completed"] == 12);
    CHECK(report["scale_outs"].get<std::int64_t>() >= 1);
    CHECK(report["instances"].get<std::int64_t>() > 7);  // 7 distinct chain blocks
}

TEST_CASE("kv: rebinding decode across devices migrates the cache") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.review_period_us = us_from_ms(2);
    cfg.expected_tokens = 4096;
    cfg.least_busy = true;  // rebind every step; decode hops devices
    auto reqs = burst(12, 32, 8, us_from_ms(1));
    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();

    CHECK(report["requests"]["completed"] == 12);
    CHECK(report["kv"]["migrations"].get<std::int64_t>() >= 1);
    const auto rec = report["kv"]["recomputed_pages"].get<std::int64_t>();
    const auto cp = report["kv"]["copied_pages"].get<std::int64_t>();
    CHECK(rec + cp >= 1);
    if (cp > 0) CHECK(report["comm"]["kv_copy_bytes"].get<std::int64_t>() > 0);
}

TEST_CASE("kv: recompute-only migration moves no cache bytes") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    cfg.review_period_us = us_from_ms(2);
    cfg.expected_tokens = 4096;
    cfg.least_busy = true;
    cfg.kv_recalc_only = true;
    auto reqs = burst(12, 32, 8, us_from_ms(1));
    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();

    CHECK(report["requests"]["completed"] == 12);
    CHECK(report["kv"]["migrations"].get<std::int64_t>() >= 1);
    CHECK(report["kv"]["copied_pages"].get<std::int64_t>() == 0);
    CHECK(report["comm"]["kv_copy_bytes"].get<std::int64_t>() == 0);
}

TEST_CASE("kv: a shared prompt prefix is stored once") {
    Zoo zoo = fixtures::family_zoo();
    ScenarioConfig cfg = quiet_config();
    std::vector<Request> reqs;
    Request donor;
    donor.id = 1;
    donor.app_id = 0;
    donor.arrival_us = 0;
    donor.prompt_tokens = 32;
    donor.output_tokens = 200;  // stays alive while the follower prefills
    donor.prefix_group = 7;
    donor.prefix_tokens = 16;
    Request follower = donor;
    follower.id = 2;
    follower.arrival_us = us_from_ms(60);
    follower.output_tokens = 4;
    reqs.push_back(donor);
    reqs.push_back(follower);

    Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
    auto report = sim.run();
    CHECK(report["requests"]["completed"] == 2);
    CHECK(report["kv"]["shared_bytes"].get<std::int64_t>() > 0);
    CHECK(report["kv"]["migrations"].get<std::int64_t>() == 0);
}

TEST_CASE("baselines: whole-model serving completes the same workload") {
    Zoo zoo = fixtures::family_zoo();
    add_lora2(zoo);
    auto reqs = burst(9, 32, 4, us_from_ms(3), /*apps=*/3);

    for (ServeMode mode : {ServeMode::kPerModel, ServeMode::kParamShare}) {
        CAPTURE(serve_mode_name(mode));
        ScenarioConfig cfg = quiet_config();
        cfg.mode = mode;
        cfg.adaptive = false;  // baseline semantics
        Simulation sim(cfg, zoo, make_cluster(), make_cost(), reqs);
        auto report = sim.run();
        CHECK(report["requests"]["completed"] == 9);
        // Monolithic chains have no mid-chain hops to forward.
        CHECK(report["comm"]["inter_server_forwards"].get<std::int64_t>() == 0);
        CHECK(report["adaptive"]["requests_with_adaptive_resolution"].get<std::int64_t>() == 0);
        CHECK(report["speculation"]["started"].get<std::int64_t>() == 0);
    }
}

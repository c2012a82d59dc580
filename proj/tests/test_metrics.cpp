#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "blocksim/metrics.hpp"
#include "blocksim/rng.hpp"

using namespace blocksim;

TEST_CASE("percentile is the nearest-rank order statistic") {
    std::vector<double> v = {15, 20, 35, 40, 50};
    CHECK(percentile(v, 0.05) == 15);
    CHECK(percentile(v, 0.30) == 20);
    CHECK(percentile(v, 0.40) == 20);
    CHECK(percentile(v, 0.50) == 35);
    CHECK(percentile(v, 0.95) == 50);
    CHECK(percentile(v, 1.00) == 50);
    CHECK(percentile({}, 0.5) == 0.0);
    CHECK_THROWS_AS(percentile({1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(percentile({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("per-state durations always sum to completion minus arrival") {
    MetricsCollector m;
    Request r;
    r.id = 1;
    r.app_id = 0;
    m.on_arrival(r, 100);
    m.set_state(1, RequestState::kLoad, 150);
    m.set_state(1, RequestState::kCompute, 400);
    m.set_state(1, RequestState::kQueue, 900);
    m.set_state(1, RequestState::kTransfer, 1000);
    m.set_state(1, RequestState::kCompute, 1200);
    m.on_complete(1, 2000);

    const auto& rec = m.record(1);
    CHECK(rec.in_state_us[0] == 50 + 100);          // queue
    CHECK(rec.in_state_us[1] == 500 + 800);         // compute
    CHECK(rec.in_state_us[2] == 200);               // transfer
    CHECK(rec.in_state_us[3] == 250);               // load
    const SimTime sum =
        rec.in_state_us[0] + rec.in_state_us[1] + rec.in_state_us[2] + rec.in_state_us[3];
    CHECK(sum == rec.completion_us - rec.arrival_us);
}

TEST_CASE("randomized state walks preserve the decomposition invariant") {
    RngStream rng(31, "metrics-walk");
    for (int iter = 0; iter < 1000; ++iter) {
        MetricsCollector m;
        Request r;
        r.id = 7;
        SimTime t = static_cast<SimTime>(rng.uniform_int(0, 1000));
        m.on_arrival(r, t);
        const int steps = static_cast<int>(rng.uniform_int(1, 20));
        for (int i = 0; i < steps; ++i) {
            t += static_cast<SimTime>(rng.uniform_int(0, 500));
            m.set_state(7, static_cast<RequestState>(rng.uniform_int(0, 3)), t);
        }
        t += static_cast<SimTime>(rng.uniform_int(0, 500));
        m.on_complete(7, t);
        const auto& rec = m.record(7);
        const SimTime sum =
            rec.in_state_us[0] + rec.in_state_us[1] + rec.in_state_us[2] + rec.in_state_us[3];
        CHECK(sum == rec.completion_us - rec.arrival_us);
    }
}

TEST_CASE("state changes after completion or into the past are rejected") {
    MetricsCollector m;
    Request r;
    r.id = 2;
    m.on_arrival(r, 0);
    m.set_state(2, RequestState::kCompute, 10);
    CHECK_THROWS_AS(m.set_state(2, RequestState::kQueue, 5), std::invalid_argument);
    m.on_complete(2, 20);
    CHECK_THROWS_AS(m.set_state(2, RequestState::kQueue, 30), std::invalid_argument);
    CHECK_THROWS_AS(m.on_arrival(r, 40), std::invalid_argument);  // duplicate id
}

TEST_CASE("the report aggregates latency, throughput and counters") {
    MetricsCollector m;
    for (std::uint64_t id = 1; id <= 4; ++id) {
        Request r;
        r.id = id;
        r.app_id = static_cast<int>(id % 2);
        m.on_arrival(r, 0);
        m.set_state(id, RequestState::kCompute, 0);
        m.on_first_token(id, static_cast<SimTime>(100 * id));
        m.on_tokens(id, 50);
        m.on_complete(id, static_cast<SimTime>(1000 * id));
    }
    m.add_comm_bytes(4096);
    m.add_kv_copy_bytes(1024);
    m.inc_inter_server_forward();
    m.on_kv_migration(3, 5);
    m.on_speculation_start(1);
    m.on_speculation_resolved(true);
    m.on_adaptive_resolution(2);
    m.on_adaptive_resolution(2);  // same request twice: counted once
    m.on_busy(0, 0, 2000);

    auto j = m.build_report({{"scenario", "unit"}}, 0xabcd);
    CHECK(j["scenario"] == "unit");
    CHECK(j["requests"]["arrived"] == 4);
    CHECK(j["requests"]["completed"] == 4);
    CHECK(j["drain_us"] == 4000);
    // 200 tokens over 4 ms.
    CHECK(j["throughput_tokens_per_s"].get<double>() == doctest::Approx(50'000.0));
    CHECK(j["latency"]["p50_us"].get<double>() == doctest::Approx(2000.0));
    CHECK(j["latency"]["p99_us"].get<double>() == doctest::Approx(4000.0));
    CHECK(j["ttft"]["count"] == 4);
    CHECK(j["comm"]["bytes"] == 4096);
    CHECK(j["kv"]["migrations"] == 1);
    CHECK(j["kv"]["recomputed_pages"] == 3);
    CHECK(j["speculation"]["accepted"] == 1);
    CHECK(j["adaptive"]["requests_with_adaptive_resolution"] == 1);
    CHECK(j["util_proxy"]["per_device"]["device_0"].get<double>() == doctest::Approx(0.5));
    CHECK(j["event_digest"] == 0xabcd);
    CHECK(j["per_app"].size() == 2);
}

TEST_CASE("output files are written with stable shapes") {
    namespace fs = std::filesystem;
    const std::string dir = "/tmp/blocksim_metrics_out";
    fs::remove_all(dir);

    MetricsCollector m;
    Cluster c;
    c.add_server({0, 1e9});
    c.add_device({0, 0, "std", 1 << 20, 1e9, 1e9});
    MemoryLedger ledger(c);
    ledger.reserve(0, MemoryLedger::Category::kParams, 1000);
    ledger.reserve(0, MemoryLedger::Category::kKv, 200);

    Request r;
    r.id = 1;
    m.on_arrival(r, 0);
    m.on_complete(1, 500);
    m.on_busy(0, 0, 250);
    m.sample(1000, ledger, {0});
    m.decision(42, "dispatch", "request 1 -> device 0");

    auto report = m.build_report({{"scenario", "files"}}, 7);
    m.write_outputs(dir, report);

    CHECK(fs::exists(dir + "/report.json"));
    std::ifstream cdf(dir + "/latency_cdf.csv");
    std::string header, row;
    std::getline(cdf, header);
    std::getline(cdf, row);
    CHECK(header == "latency_us,cum_fraction");
    CHECK(row == "500,1");

    std::ifstream ts(dir + "/timeseries.csv");
    std::getline(ts, header);
    CHECK(header == "t_us,util_proxy,mem_params,mem_reqdata");
    std::getline(ts, row);
    CHECK(row == "1000,0.25,1000,200");

    std::ifstream dec(dir + "/decisions.log");
    std::getline(dec, row);
    CHECK(row == "42 dispatch request 1 -> device 0");

    // Byte-stable: rebuilding the same report produces identical text.
    auto report2 = m.build_report({{"scenario", "files"}}, 7);
    CHECK(report.dump(2) == report2.dump(2));
    fs::remove_all(dir);
}

TEST_CASE("event digest distinguishes different event streams") {
    EventDigest a, b, c;
    a.observe(10, 1, EventKind::kBatchStart);
    a.observe(20, 2, EventKind::kBatchFinish);
    b.observe(10, 1, EventKind::kBatchStart);
    b.observe(20, 2, EventKind::kBatchFinish);
    c.observe(10, 1, EventKind::kBatchStart);
    c.observe(21, 2, EventKind::kBatchFinish);
    CHECK(a.value() == b.value());
    CHECK(a.value() != c.value());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <stdexcept>
#include <vector>

#include "blocksim/engine.hpp"
#include "blocksim/rng.hpp"
#include "blocksim/time.hpp"

using namespace blocksim;

TEST_CASE("time rounding is half-up and rejects negatives") {
    CHECK(round_us(0.0) == 0);
    CHECK(round_us(0.4) == 0);
    CHECK(round_us(0.5) == 1);
    CHECK(round_us(1.49) == 1);
    CHECK(round_us(2.5) == 3);
    CHECK(round_us(1e6) == 1'000'000);
    CHECK_THROWS_AS(round_us(-0.001), std::invalid_argument);
    CHECK(us_from_ms(3) == 3'000);
    CHECK(us_from_s(2) == 2'000'000);
    CHECK(s_from_us(1'500'000) == doctest::Approx(1.5));
}

TEST_CASE("events fire in time order with insertion order breaking ties") {
    Engine e;
    std::vector<int> order;
    e.schedule(20, EventKind::kGeneric, [&] { order.push_back(2); });
    e.schedule(10, EventKind::kGeneric, [&] { order.push_back(1); });
    e.schedule(20, EventKind::kGeneric, [&] { order.push_back(3); });
    e.schedule(20, EventKind::kGeneric, [&] { order.push_back(4); });
    e.run();
    CHECK(order == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("now advances to the firing event and run returns the horizon") {
    Engine e;
    SimTime seen = -1;
    e.schedule(42, EventKind::kGeneric, [&] { seen = e.now(); });
    SimTime end = e.run(100);
    CHECK(seen == 42);
    CHECK(end == 100);
    CHECK(e.now() == 100);

    Engine e2;
    e2.schedule(7, EventKind::kGeneric, [] {});
    CHECK(e2.run() == 7);

    Engine e3;
    CHECK(e3.run() == 0);
}

TEST_CASE("bounded run leaves later events pending") {
    Engine e;
    int fired = 0;
    e.schedule(5, EventKind::kGeneric, [&] { ++fired; });
    e.schedule(50, EventKind::kGeneric, [&] { ++fired; });
    e.run(10);
    CHECK(fired == 1);
    CHECK_FALSE(e.empty());
    e.run();
    CHECK(fired == 2);
    CHECK(e.empty());
}

TEST_CASE("scheduling in the past throws") {
    Engine e;
    e.schedule(10, EventKind::kGeneric, [&] {
        CHECK_THROWS_AS(e.schedule(5, EventKind::kGeneric, [] {}), std::invalid_argument);
        e.schedule(10, EventKind::kGeneric, [] {});  // same-time is allowed
    });
    e.run();
}

TEST_CASE("cancelled events do not fire and are counted") {
    Engine e;
    int fired = 0;
    auto h = e.schedule(10, EventKind::kGeneric, [&] { ++fired; });
    e.schedule(10, EventKind::kGeneric, [&] { ++fired; });
    CHECK(e.cancel(h));
    CHECK_FALSE(e.cancel(h));  // double cancel is a no-op
    e.run();
    CHECK(fired == 1);
    CHECK(e.stats().scheduled == 2);
    CHECK(e.stats().processed == 1);
    CHECK(e.stats().cancelled == 1);
}

TEST_CASE("events scheduled from handlers run at their due time") {
    Engine e;
    std::vector<SimTime> at;
    e.schedule(1, EventKind::kGeneric, [&] {
        at.push_back(e.now());
        e.schedule_in(4, EventKind::kGeneric, [&] { at.push_back(e.now()); });
    });
    e.run();
    CHECK(at == std::vector<SimTime>{1, 5});
}

TEST_CASE("event budget aborts a runaway simulation") {
    Engine e(/*budget=*/100);
    std::function<void()> loop = [&] { e.schedule_in(1, EventKind::kGeneric, loop); };
    e.schedule(0, EventKind::kGeneric, loop);
    CHECK_THROWS_AS(e.run(), SimAbort);
}

TEST_CASE("trace hook observes every processed event in order") {
    Engine e;
    std::vector<std::pair<SimTime, EventKind>> seen;
    e.set_trace_hook([&](SimTime t, std::uint64_t, EventKind k) { seen.push_back({t, k}); });
    e.schedule(3, EventKind::kBatchStart, [] {});
    e.schedule(1, EventKind::kRequestArrival, [] {});
    e.run();
    REQUIRE(seen.size() == 2);
    CHECK(seen[0] == std::pair<SimTime, EventKind>{1, EventKind::kRequestArrival});
    CHECK(seen[1] == std::pair<SimTime, EventKind>{3, EventKind::kBatchStart});
}

TEST_CASE("event kind names are stable") {
    CHECK(std::string(event_kind_name(EventKind::kRequestArrival)) == "request_arrival");
    CHECK(std::string(event_kind_name(EventKind::kBatchFinish)) == "batch_finish");
}

TEST_CASE("rng streams are deterministic and independent") {
    RngStream a(123, "arrivals");
    RngStream b(123, "arrivals");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(123, "speculation");
    bool differs = false;
    RngStream a2(123, "arrivals");
    for (int i = 0; i < 100; ++i)
        if (a2.next_u64() != c.next_u64()) differs = true;
    CHECK(differs);
}

TEST_CASE("rng distributions stay within bounds") {
    RngStream r(7, "test");
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        auto k = r.uniform_int(3, 9);
        CHECK(k >= 3);
        CHECK(k <= 9);
        CHECK(r.exponential(5.0) >= 0.0);
    }
    RngStream r2(7, "test2");
    int lo_count = 0, hi_count = 0;
    for (int i = 0; i < 1000; ++i) {
        if (r2.bernoulli(0.0)) ++lo_count;
        if (r2.bernoulli(1.0)) ++hi_count;
    }
    CHECK(lo_count == 0);
    CHECK(hi_count == 1000);
}

TEST_CASE("uniform_int covers its full range") {
    RngStream r(99, "range");
    std::vector<int> hits(4, 0);
    for (int i = 0; i < 4000; ++i) ++hits[static_cast<std::size_t>(r.uniform_int(0, 3))];
    for (int h : hits) CHECK(h > 0);
}

#include "blocksim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace blocksim {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("metrics: " + what); }

nlohmann::ordered_json latency_stats(const std::vector<double>& v) {
    nlohmann::ordered_json j;
    double mean = 0.0;
    for (double x : v) mean += x;
    j["count"] = v.size();
    j["mean_us"] = v.empty() ? 0.0 : mean / static_cast<double>(v.size());
    j["p50_us"] = percentile(v, 0.50);
    j["p90_us"] = percentile(v, 0.90);
    j["p95_us"] = percentile(v, 0.95);
    j["p99_us"] = percentile(v, 0.99);
    return j;
}

}  // namespace

double percentile(std::vector<double> values, double q) {
    if (values.empty()) return 0.0;
    if (q <= 0.0 || q > 1.0) fail("percentile q out of (0, 1]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    rank = std::min(std::max<std::size_t>(rank, 1), values.size());
    return values[rank - 1];
}

void EventDigest::mix(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h_ ^= (v >> (8 * i)) & 0xff;
        h_ *= 1099511628211ULL;
    }
}

void EventDigest::observe(SimTime t, std::uint64_t seq, EventKind kind) {
    mix(static_cast<std::uint64_t>(t));
    mix(seq);
    mix(static_cast<std::uint64_t>(kind));
}

const char* request_state_name(RequestState s) {
    switch (s) {
        case RequestState::kQueue: return "queue";
        case RequestState::kCompute: return "compute";
        case RequestState::kTransfer: return "transfer";
        case RequestState::kLoad: return "load";
        case RequestState::kDone: return "done";
    }
    return "unknown";
}

void MetricsCollector::on_arrival(const Request& r, SimTime now) {
    RequestRecord rec;
    rec.id = r.id;
    rec.app_id = r.app_id;
    rec.arrival_us = now;
    rec.prompt_tokens = r.prompt_tokens;
    rec.target_output_tokens = r.output_tokens;
    rec.state = RequestState::kQueue;
    rec.state_since_us = now;
    if (!requests_.emplace(r.id, rec).second) fail("duplicate request id");
}

void MetricsCollector::set_state(std::uint64_t id, RequestState s, SimTime now) {
    auto& rec = requests_.at(id);
    if (rec.state == RequestState::kDone) fail("state change after completion");
    if (now < rec.state_since_us) fail("state change in the past");
    rec.in_state_us[static_cast<int>(rec.state)] += now - rec.state_since_us;
    rec.state = s;
    rec.state_since_us = now;
}

void MetricsCollector::on_first_token(std::uint64_t id, SimTime now) {
    auto& rec = requests_.at(id);
    if (rec.first_token_us < 0) rec.first_token_us = now;
}

void MetricsCollector::on_tokens(std::uint64_t id, int generated) {
    requests_.at(id).generated_tokens += generated;
}

void MetricsCollector::on_complete(std::uint64_t id, SimTime now) {
    auto& rec = requests_.at(id);
    set_state(id, RequestState::kDone, now);
    rec.completion_us = now;
    ++completed_;
}

void MetricsCollector::on_busy(int device, SimTime from, SimTime to) {
    if (to < from) fail("busy interval reversed");
    busy_us_[device] += to - from;
}

void MetricsCollector::on_kv_migration(int recomputed_pages, int copied_pages) {
    ++kv_migrations_;
    kv_recomputed_pages_ += recomputed_pages;
    kv_copied_pages_ += copied_pages;
}

void MetricsCollector::on_speculation_start(std::uint64_t request) {
    ++spec_started_;
    auto it = requests_.find(request);
    if (it != requests_.end()) it->second.speculated = true;
}

void MetricsCollector::on_speculation_resolved(bool accepted) {
    if (accepted)
        ++spec_accepted_;
    else
        ++spec_rejected_;
}

void MetricsCollector::on_adaptive_resolution(std::uint64_t request) {
    adaptive_requests_.insert(request);
    auto it = requests_.find(request);
    if (it != requests_.end()) ++it->second.adaptive_resolutions;
}

void MetricsCollector::decision(SimTime t, const std::string& kind, const std::string& detail) {
    decisions_.push_back(std::to_string(t) + " " + kind + " " + detail);
}

void MetricsCollector::sample(SimTime t, const MemoryLedger& ledger,
                              const std::vector<int>& devices) {
    double util = 0.0;
    std::int64_t params = 0, reqdata = 0;
    const SimTime window = t - last_sample_us_;
    for (int d : devices) {
        const SimTime busy = busy_us_[d] - busy_at_last_sample_[d];
        if (window > 0) util += static_cast<double>(busy) / static_cast<double>(window);
        busy_at_last_sample_[d] = busy_us_[d];
        params += ledger.used(d, MemoryLedger::Category::kParams);
        reqdata += ledger.used(d, MemoryLedger::Category::kKv) +
                   ledger.used(d, MemoryLedger::Category::kActivation);
    }
    if (!devices.empty()) util /= static_cast<double>(devices.size());
    samples_.push_back({t, util, params, reqdata});
    last_sample_us_ = t;
}

const RequestRecord& MetricsCollector::record(std::uint64_t id) const {
    auto it = requests_.find(id);
    if (it == requests_.end()) fail("unknown request id");
    return it->second;
}

nlohmann::ordered_json MetricsCollector::build_report(const nlohmann::ordered_json& meta,
                                                      std::uint64_t event_digest) const {
    nlohmann::ordered_json j = meta;

    std::vector<double> latency, ttft;
    std::map<int, std::vector<double>> per_app_latency;
    std::map<int, std::uint64_t> per_app_count;
    SimTime drain = 0;
    std::int64_t total_tokens = 0;
    SimTime queue_us = 0, compute_us = 0, transfer_us = 0, load_us = 0;
    for (const auto& [id, r] : requests_) {
        ++per_app_count[r.app_id];
        if (r.completion_us < 0) continue;
        const auto lat = static_cast<double>(r.completion_us - r.arrival_us);
        latency.push_back(lat);
        per_app_latency[r.app_id].push_back(lat);
        if (r.first_token_us >= 0)
            ttft.push_back(static_cast<double>(r.first_token_us - r.arrival_us));
        drain = std::max(drain, r.completion_us);
        total_tokens += r.generated_tokens;
        queue_us += r.in_state_us[0];
        compute_us += r.in_state_us[1];
        transfer_us += r.in_state_us[2];
        load_us += r.in_state_us[3];
    }

    j["requests"] = {{"arrived", requests_.size()}, {"completed", completed_}};
    j["drain_us"] = drain;
    j["throughput_tokens_per_s"] =
        drain > 0 ? static_cast<double>(total_tokens) / s_from_us(drain) : 0.0;
    j["generated_tokens"] = total_tokens;
    j["latency"] = latency_stats(latency);
    j["ttft"] = latency_stats(ttft);

    const double total_latency =
        static_cast<double>(queue_us + compute_us + transfer_us + load_us);
    j["time_decomposition"] = {
        {"queue_us", queue_us},
        {"compute_us", compute_us},
        {"transfer_us", transfer_us},
        {"load_us", load_us},
        {"transfer_fraction", total_latency > 0 ? static_cast<double>(transfer_us) / total_latency
                                                : 0.0},
    };

    nlohmann::ordered_json apps = nlohmann::ordered_json::array();
    for (const auto& [app, lats] : per_app_latency) {
        nlohmann::ordered_json a;
        a["app_id"] = app;
        a["arrived"] = per_app_count.at(app);
        a["stats"] = latency_stats(lats);
        apps.push_back(a);
    }
    j["per_app"] = apps;

    nlohmann::ordered_json util;
    double mean_util = 0.0;
    for (const auto& [d, busy] : busy_us_) {
        const double u =
            drain > 0 ? static_cast<double>(busy) / static_cast<double>(drain) : 0.0;
        util["device_" + std::to_string(d)] = u;
        mean_util += u;
    }
    if (!busy_us_.empty()) mean_util /= static_cast<double>(busy_us_.size());
    j["util_proxy"] = {{"mean", mean_util}, {"per_device", util}};

    j["comm"] = {
        {"bytes", comm_bytes_},
        {"kv_copy_bytes", kv_copy_bytes_},
        {"inter_server_forwards", inter_server_forwards_},
    };
    j["kv"] = {
        {"migrations", kv_migrations_},
        {"recomputed_pages", kv_recomputed_pages_},
        {"copied_pages", kv_copied_pages_},
        {"shared_bytes", kv_shared_bytes_},
    };
    j["speculation"] = {
        {"started", spec_started_},
        {"accepted", spec_accepted_},
        {"rejected", spec_rejected_},
    };
    j["adaptive"] = {{"requests_with_adaptive_resolution", adaptive_requests_.size()}};
    j["scale_outs"] = scale_outs_;
    j["mem_stalls"] = mem_stalls_;
    j["batches"] = {
        {"prefill", prefill_batches_},
        {"prefill_members", prefill_batch_members_},
        {"decode", decode_batches_},
        {"decode_members", decode_batch_members_},
    };
    j["event_digest"] = event_digest;
    return j;
}

void MetricsCollector::write_outputs(const std::string& dir,
                                     const nlohmann::ordered_json& report) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/report.json");
        if (!out) fail("cannot write report.json in " + dir);
        out << report.dump(2) << '\n';
    }
    {
        std::ofstream out(dir + "/latency_cdf.csv");
        out << "latency_us,cum_fraction\n";
        std::vector<double> latency;
        for (const auto& [id, r] : requests_)
            if (r.completion_us >= 0)
                latency.push_back(static_cast<double>(r.completion_us - r.arrival_us));
        std::sort(latency.begin(), latency.end());
        for (std::size_t i = 0; i < latency.size(); ++i)
            out << static_cast<std::int64_t>(latency[i]) << ','
                << static_cast<double>(i + 1) / static_cast<double>(latency.size()) << '\n';
    }
    {
        std::ofstream out(dir + "/timeseries.csv");
        out << "t_us,util_proxy,mem_params,mem_reqdata\n";
        for (const auto& s : samples_)
            out << s.t_us << ',' << s.util << ',' << s.mem_params << ',' << s.mem_reqdata << '\n';
    }
    {
        std::ofstream out(dir + "/decisions.log");
        for (const auto& d : decisions_) out << d << '\n';
    }
}

}  // namespace blocksim

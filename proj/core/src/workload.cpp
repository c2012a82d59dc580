#include "blocksim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "blocksim/rng.hpp"

namespace blocksim {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("workload: " + what); }

void validate(const WorkloadSpec& spec) {
    if (spec.n_apps <= 0) fail("n_apps must be positive");
    if (spec.duration_us <= 0) fail("duration must be positive");
    if (spec.total_requests < 0) fail("total_requests must be non-negative");
    if (spec.prompt_min <= 0 || spec.prompt_max < spec.prompt_min) fail("bad prompt range");
    if (spec.output_min <= 0 || spec.output_max < spec.output_min) fail("bad output range");
    if (spec.prefix_share_fraction < 0.0 || spec.prefix_share_fraction > 1.0)
        fail("prefix_share_fraction out of [0,1]");
}

// Largest-remainder apportionment of `total` among weights; ties broken
// toward the lower index.
std::vector<int> apportion(const std::vector<double>& weights, int total) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (sum <= 0.0) fail("degenerate app weights");
    std::vector<int> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    int assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = static_cast<double>(total) * weights[i] / sum;
        counts[i] = static_cast<int>(quota);
        assigned += counts[i];
        rema.push_back({quota - std::floor(quota), i});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int k = 0; k < total - assigned; ++k) ++counts[rema[static_cast<std::size_t>(k)].second];
    return counts;
}

// Exactly n arrivals in [0, duration): a Poisson process conditioned on its
// count, built from n+1 exponential gaps normalized to the horizon.
std::vector<SimTime> arrivals_for_count(int n, SimTime duration_us, RngStream& rng) {
    std::vector<SimTime> out;
    if (n <= 0) return out;
    std::vector<double> prefix(static_cast<std::size_t>(n) + 1);
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        s += rng.exponential(1.0);
        prefix[static_cast<std::size_t>(i)] = s;
    }
    const double total = prefix.back();
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        SimTime t = round_us(static_cast<double>(duration_us) * prefix[static_cast<std::size_t>(i)] /
                             total);
        out.push_back(std::min(t, duration_us - 1));
    }
    std::sort(out.begin(), out.end());
    return out;
}

void fill_lengths(Request& r, const WorkloadSpec& spec, RngStream& rng) {
    r.prompt_tokens = static_cast<int>(
        rng.uniform_int(spec.prompt_min, spec.prompt_max));
    r.output_tokens = static_cast<int>(
        rng.uniform_int(spec.output_min, spec.output_max));
    if (r.prompt_tokens + r.output_tokens > spec.total_token_cap)
        r.output_tokens = std::max(1, spec.total_token_cap - r.prompt_tokens);
}

void assign_prefix(Request& r, const WorkloadSpec& spec, RngStream& rng) {
    if (spec.prefix_share_fraction > 0.0 && rng.bernoulli(spec.prefix_share_fraction)) {
        r.prefix_group = r.app_id;
        r.prefix_tokens = std::min(spec.prefix_tokens, r.prompt_tokens);
    }
}

void sort_and_number(std::vector<Request>& all) {
    std::sort(all.begin(), all.end(), [](const Request& a, const Request& b) {
        if (a.arrival_us != b.arrival_us) return a.arrival_us < b.arrival_us;
        return a.app_id < b.app_id;
    });
    std::uint64_t id = 1;
    for (auto& r : all) r.id = id++;
}

}  // namespace

std::vector<Request> generate_workload(const WorkloadSpec& spec, std::uint64_t seed) {
    validate(spec);
    RngStream wrng(seed, "app_weights");
    std::vector<double> weights(static_cast<std::size_t>(spec.n_apps));
    for (auto& w : weights) w = wrng.uniform();
    const auto counts = apportion(weights, spec.total_requests);

    std::vector<Request> all;
    all.reserve(static_cast<std::size_t>(spec.total_requests));
    for (int app = 0; app < spec.n_apps; ++app) {
        RngStream rng(seed, "app_arrivals:" + std::to_string(app));
        const auto times = arrivals_for_count(counts[static_cast<std::size_t>(app)],
                                              spec.duration_us, rng);
        for (SimTime t : times) {
            Request r;
            r.app_id = app;
            r.arrival_us = t;
            fill_lengths(r, spec, rng);
            assign_prefix(r, spec, rng);
            all.push_back(r);
        }
    }
    sort_and_number(all);
    return all;
}

std::vector<Request> replay_trace(const std::string& path, const WorkloadSpec& spec,
                                  std::uint64_t seed) {
    validate(spec);
    std::ifstream in(path);
    if (!in) fail("cannot open trace: " + path);

    std::map<std::int64_t, std::int64_t> buckets;  // epoch second -> count
    std::size_t rows = 0, malformed = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        ++rows;
        std::istringstream ls(line);
        std::string epoch_field, count_field;
        std::getline(ls, epoch_field, ',');
        std::getline(ls, count_field, ',');
        try {
            std::size_t used = 0;
            const std::int64_t epoch = std::stoll(epoch_field, &used);
            if (used != epoch_field.size() || epoch < 0) throw std::invalid_argument("epoch");
            std::int64_t count = 1;
            if (!count_field.empty()) {
                count = std::stoll(count_field, &used);
                if (used != count_field.size() || count <= 0) throw std::invalid_argument("count");
            }
            buckets[epoch] += count;
        } catch (const std::exception&) {
            ++malformed;
        }
    }
    if (rows == 0 || buckets.empty()) fail("trace has no usable rows: " + path);
    if (static_cast<double>(malformed) > 0.01 * static_cast<double>(rows))
        fail("trace has >1% malformed rows: " + path);

    std::int64_t lo = buckets.begin()->second, hi = lo;
    for (const auto& [epoch, c] : buckets) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }

    RngStream wrng(seed, "app_weights");
    std::vector<double> weights(static_cast<std::size_t>(spec.n_apps));
    double wsum = 0.0;
    for (auto& w : weights) {
        w = wrng.uniform();
        wsum += w;
    }

    RngStream rng(seed, "trace_replay");
    std::vector<Request> all;
    std::int64_t second = 0;
    for (const auto& [epoch, c] : buckets) {
        double qps = 23.0;
        if (hi != lo)
            qps = 1.0 + static_cast<double>(c - lo) * 44.0 / static_cast<double>(hi - lo);
        const int n = static_cast<int>(std::llround(qps));
        for (int j = 0; j < n; ++j) {
            Request r;
            r.arrival_us = second * kUsPerSec +
                           round_us(static_cast<double>(j) * 1e6 / static_cast<double>(n));
            // Weighted app draw keeps the per-app heterogeneity of the
            // synthetic path.
            double pick = rng.uniform() * wsum;
            int app = 0;
            for (; app + 1 < spec.n_apps; ++app) {
                pick -= weights[static_cast<std::size_t>(app)];
                if (pick < 0.0) break;
            }
            r.app_id = app;
            fill_lengths(r, spec, rng);
            assign_prefix(r, spec, rng);
            all.push_back(r);
        }
        ++second;
    }
    sort_and_number(all);
    return all;
}

void save_arrivals(const std::string& path, const std::vector<Request>& requests) {
    std::ofstream out(path);
    if (!out) fail("cannot write arrivals: " + path);
    out << "t_us,app_id,prompt_tokens,output_tokens,prefix_group,prefix_tokens\n";
    for (const auto& r : requests)
        out << r.arrival_us << ',' << r.app_id << ',' << r.prompt_tokens << ','
            << r.output_tokens << ',' << r.prefix_group << ',' << r.prefix_tokens << '\n';
}

std::vector<Request> load_arrivals(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open arrivals: " + path);
    std::vector<Request> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (first && line.rfind("t_us", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream ls(line);
        std::vector<std::string> f;
        std::string field;
        while (std::getline(ls, field, ',')) f.push_back(field);
        if (f.size() != 4 && f.size() != 6) fail("arrivals row needs 4 or 6 fields: " + line);
        Request r;
        r.arrival_us = std::stoll(f[0]);
        r.app_id = std::stoi(f[1]);
        r.prompt_tokens = std::stoi(f[2]);
        r.output_tokens = std::stoi(f[3]);
        if (f.size() == 6) {
            r.prefix_group = std::stoi(f[4]);
            r.prefix_tokens = std::stoi(f[5]);
        }
        if (r.arrival_us < 0 || r.prompt_tokens <= 0 || r.output_tokens <= 0)
            fail("arrivals row out of range: " + line);
        out.push_back(r);
    }
    if (out.empty()) fail("arrivals file has no rows: " + path);
    sort_and_number(out);
    return out;
}

std::uint64_t workload_digest(const std::vector<Request>& requests) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& r : requests) {
        mix(r.id);
        mix(static_cast<std::uint64_t>(r.app_id));
        mix(static_cast<std::uint64_t>(r.arrival_us));
        mix(static_cast<std::uint64_t>(r.prompt_tokens));
        mix(static_cast<std::uint64_t>(r.output_tokens));
        mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.prefix_group)));
        mix(static_cast<std::uint64_t>(r.prefix_tokens));
    }
    return h;
}

}  // namespace blocksim

#include "blocksim/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace blocksim {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw ConfigError("config: " + what); }

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path);
    try {
        return json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        fail(path + ": " + e.what());
    }
}

std::string resolve(const std::string& base_dir, const std::string& rel) {
    if (rel.empty()) return rel;
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

const json& require(const json& j, const std::string& key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end()) fail(ctx + ": missing key '" + key + "'");
    return *it;
}

void check_schema(const json& j, const std::string& path) {
    if (require(j, "schema_version", path).get<int>() != 1)
        fail(path + ": unsupported schema_version");
}

// Bandwidths are configured in gigabits per second.
double bps_from_gbps(double gbps) {
    if (gbps <= 0.0) fail("bandwidth must be positive");
    return gbps * 1e9 / 8.0;
}

Interp2D parse_grid(const json& j, const std::string& ctx) {
    Interp2D g;
    g.xs = require(j, "batch", ctx).get<std::vector<double>>();
    g.ys = require(j, "tokens", ctx).get<std::vector<double>>();
    g.v = require(j, "us", ctx).get<std::vector<std::vector<double>>>();
    try {
        g.validate();
    } catch (const std::exception& e) {
        fail(ctx + ": " + e.what());
    }
    return g;
}

ComponentDescriptor parse_component(const json& j, const std::string& model_id) {
    ComponentDescriptor c;
    c.id = require(j, "id", model_id).get<std::string>();
    c.kind = component_kind_from(require(j, "kind", c.id).get<std::string>());
    c.embed_dim = require(j, "embed_dim", c.id).get<int>();
    c.model_id = model_id;
    c.layer = require(j, "layer", c.id).get<int>();
    c.slot = j.value("slot", 0);
    c.attach = j.value("attach", "");
    for (const auto& piece : require(j, "contents", c.id)) {
        ContentPiece p;
        p.content_id = require(piece, "id", c.id).get<std::string>();
        p.bytes = require(piece, "bytes", c.id).get<std::int64_t>();
        if (p.bytes <= 0) fail(c.id + ": content bytes must be positive");
        c.contents.push_back(p);
    }
    return c;
}

// Deep merge: objects merge key-wise, everything else is replaced.
void merge_into(json& base, const json& overlay) {
    if (!base.is_object() || !overlay.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object())
            merge_into(base[key], value);
        else
            base[key] = value;
    }
}

// Path-valued keys resolve against the directory of the file that declared
// them, so they are rewritten to absolute before include merging.
void absolutize_paths(json& j, const std::string& dir) {
    for (const char* key : {"zoo", "cluster", "profiles", "signatures_dir", "trace", "arrivals"}) {
        if (auto it = j.find(key); it != j.end() && it->is_string())
            *it = resolve(dir, it->get<std::string>());
    }
}

json load_with_includes(const std::string& path, int depth = 0) {
    if (depth > 8) fail("include chain too deep at " + path);
    json j = load_json(path);
    if (!j.is_object()) fail(path + ": scenario must be a JSON object");
    std::error_code ec;
    fs::path abs = fs::absolute(path, ec);
    if (ec) abs = path;
    absolutize_paths(j, abs.parent_path().string());
    auto it = j.find("include");
    if (it == j.end()) return j;
    const std::string base_path = resolve(fs::path(path).parent_path().string(),
                                          it->get<std::string>());
    json base = load_with_includes(base_path, depth + 1);
    j.erase("include");
    merge_into(base, j);
    return base;
}

}  // namespace

const char* serve_mode_name(ServeMode m) {
    switch (m) {
        case ServeMode::kBlock: return "block";
        case ServeMode::kPerModel: return "per_model";
        case ServeMode::kParamShare: return "param_share";
    }
    return "unknown";
}

ServeMode serve_mode_from(const std::string& s) {
    if (s == "block") return ServeMode::kBlock;
    if (s == "per_model") return ServeMode::kPerModel;
    if (s == "param_share") return ServeMode::kParamShare;
    fail("unknown mode: " + s);
}

const char* placement_policy_name(PlacementPolicy p) {
    return p == PlacementPolicy::kLocality ? "locality" : "frag_min";
}

PlacementPolicy placement_policy_from(const std::string& s) {
    if (s == "locality") return PlacementPolicy::kLocality;
    if (s == "frag_min") return PlacementPolicy::kFragMin;
    fail("unknown placement policy: " + s);
}

ScenarioConfig scenario_from_json(const json& j, const std::string& base_dir) {
    check_schema(j, "scenario");
    ScenarioConfig c;
    c.name = j.value("name", c.name);
    c.zoo_path = resolve(base_dir, require(j, "zoo", "scenario").get<std::string>());
    c.cluster_path = resolve(base_dir, require(j, "cluster", "scenario").get<std::string>());
    c.profiles_path = resolve(base_dir, require(j, "profiles", "scenario").get<std::string>());
    c.signatures_dir = resolve(base_dir, j.value("signatures_dir", ""));
    c.trace_path = resolve(base_dir, j.value("trace", ""));
    c.arrivals_path = resolve(base_dir, j.value("arrivals", ""));

    if (auto it = j.find("workload"); it != j.end()) {
        const json& w = *it;
        c.workload.n_apps = w.value("n_apps", c.workload.n_apps);
        if (w.contains("duration_s"))
            c.workload.duration_us = us_from_s(w["duration_s"].get<double>());
        c.workload.total_requests = w.value("total_requests", c.workload.total_requests);
        c.workload.prompt_min = w.value("prompt_min", c.workload.prompt_min);
        c.workload.prompt_max = w.value("prompt_max", c.workload.prompt_max);
        c.workload.output_min = w.value("output_min", c.workload.output_min);
        c.workload.output_max = w.value("output_max", c.workload.output_max);
        c.workload.total_token_cap = w.value("total_token_cap", c.workload.total_token_cap);
        c.workload.prefix_share_fraction =
            w.value("prefix_share_fraction", c.workload.prefix_share_fraction);
        c.workload.prefix_tokens = w.value("prefix_tokens", c.workload.prefix_tokens);
    }

    c.mode = serve_mode_from(j.value("mode", "block"));
    c.seed = j.value("seed", c.seed);
    c.equivalence_threshold = j.value("equivalence_threshold", c.equivalence_threshold);
    c.override_groups = j.value("override_groups", c.override_groups);
    if (j.contains("review_period_s")) c.review_period_us = us_from_s(j["review_period_s"].get<double>());
    if (j.contains("kv_review_period_s"))
        c.kv_review_period_us = us_from_s(j["kv_review_period_s"].get<double>());
    if (j.contains("metrics_tick_s")) c.metrics_tick_us = us_from_s(j["metrics_tick_s"].get<double>());
    c.max_batch_tokens = j.value("max_batch_tokens", c.max_batch_tokens);
    c.expected_tokens = j.value("expected_tokens", c.expected_tokens);
    if (j.contains("scale_delay_s")) c.scale_queue_us = us_from_s(j["scale_delay_s"].get<double>());

    if (auto it = j.find("speculation"); it != j.end()) {
        const json& s = *it;
        c.speculation = s.value("enabled", c.speculation);
        c.spec_fraction = s.value("fraction", c.spec_fraction);
        c.spec_accept_prob = s.value("accept_prob", c.spec_accept_prob);
        c.spec_alpha = s.value("alpha", c.spec_alpha);
    }
    c.adaptive = j.value("adaptive", c.adaptive);
    c.kv_recalc_only = j.value("kv_recalc_only", c.kv_recalc_only);
    c.least_busy = j.value("least_busy", c.least_busy);
    c.placement = placement_policy_from(j.value("placement", "locality"));
    c.ps_branch_surcharge = j.value("ps_branch_surcharge", c.ps_branch_surcharge);

    if (c.review_period_us <= 0 || c.kv_review_period_us <= 0 || c.metrics_tick_us <= 0)
        fail("periods must be positive");
    if (c.max_batch_tokens <= 0 || c.expected_tokens <= 0) fail("token budgets must be positive");
    if (c.spec_fraction < 0.0 || c.spec_fraction > 1.0) fail("spec_fraction out of [0,1]");
    if (c.spec_accept_prob < 0.0 || c.spec_accept_prob > 1.0) fail("accept_prob out of [0,1]");
    if (c.spec_alpha < 1.0) fail("alpha must be >= 1");
    if (c.ps_branch_surcharge < 0.0) fail("surcharge must be non-negative");
    return c;
}

ScenarioConfig load_scenario(const std::string& path) {
    json j = load_with_includes(path);
    return scenario_from_json(j, fs::path(path).parent_path().string());
}

void apply_override(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
    auto as_bool = [&](const std::string& v) {
        if (v == "true" || v == "1" || v == "on") return true;
        if (v == "false" || v == "0" || v == "off") return false;
        fail("override " + key + ": not a boolean: " + v);
    };
    try {
        if (key == "mode") cfg.mode = serve_mode_from(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "adaptive") cfg.adaptive = as_bool(value);
        else if (key == "kv_recalc_only") cfg.kv_recalc_only = as_bool(value);
        else if (key == "least_busy") cfg.least_busy = as_bool(value);
        else if (key == "speculation") cfg.speculation = as_bool(value);
        else if (key == "placement") cfg.placement = placement_policy_from(value);
        else if (key == "spec_fraction") cfg.spec_fraction = std::stod(value);
        else if (key == "spec_accept_prob") cfg.spec_accept_prob = std::stod(value);
        else if (key == "spec_alpha") cfg.spec_alpha = std::stod(value);
        else if (key == "max_batch_tokens") cfg.max_batch_tokens = std::stoi(value);
        else if (key == "expected_tokens") cfg.expected_tokens = std::stoi(value);
        else if (key == "review_period_s") cfg.review_period_us = us_from_s(std::stod(value));
        else if (key == "scale_delay_s") cfg.scale_queue_us = us_from_s(std::stod(value));
        else if (key == "scaling") cfg.scaling = as_bool(value);
        else if (key == "kv_review_period_s") cfg.kv_review_period_us = us_from_s(std::stod(value));
        else if (key == "equivalence_threshold") cfg.equivalence_threshold = std::stod(value);
        else if (key == "override_groups") cfg.override_groups = std::stoi(value);
        else if (key == "ps_branch_surcharge") cfg.ps_branch_surcharge = std::stod(value);
        else if (key == "total_requests") cfg.workload.total_requests = std::stoi(value);
        else if (key == "n_apps") cfg.workload.n_apps = std::stoi(value);
        else if (key == "duration_s") cfg.workload.duration_us = us_from_s(std::stod(value));
        else fail("unknown override key: " + key);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail("override " + key + ": bad value: " + value);
    }
}

Zoo load_zoo(const std::string& path, double threshold, int override_groups,
             const std::string& signatures_dir) {
    json j = load_json(path);
    check_schema(j, path);
    Zoo zoo(threshold);
    const std::string dir = fs::path(path).parent_path().string();

    if (auto it = j.find("stitches"); it != j.end()) {
        for (const auto& s : *it) {
            StitchDescriptor st;
            st.id = require(s, "id", "stitch").get<std::string>();
            st.dim_in = require(s, "dim_in", st.id).get<int>();
            st.dim_out = require(s, "dim_out", st.id).get<int>();
            st.cost_class = require(s, "cost_class", st.id).get<std::string>();
            st.quality = s.value("quality", 0.0);
            zoo.add_stitch(st);
        }
    }

    auto sigs_for = [&](const json& model_json, const std::string& model_id)
        -> std::vector<LayerSignature> {
        if (auto sit = model_json.find("signatures"); sit != model_json.end())
            return load_signatures(resolve(dir, sit->get<std::string>()), model_id);
        if (!signatures_dir.empty()) {
            const std::string p = (fs::path(signatures_dir) / (model_id + ".sig")).string();
            if (fs::exists(p)) return load_signatures(p, model_id);
        }
        return {};
    };

    std::map<std::string, std::vector<LayerSignature>> foundation_sigs;
    for (const auto& m : require(j, "models", path)) {
        const std::string id = require(m, "id", "model").get<std::string>();
        const TuningKind tuning = tuning_kind_from(require(m, "tuning", id).get<std::string>());
        if (tuning == TuningKind::kFoundation) {
            std::vector<ComponentDescriptor> comps;
            for (const auto& cj : require(m, "components", id))
                comps.push_back(parse_component(cj, id));
            zoo.add_foundation(id, comps);
            foundation_sigs[id] = sigs_for(m, id);
            continue;
        }
        const std::string foundation = require(m, "foundation", id).get<std::string>();
        if (tuning == TuningKind::kFull) {
            std::vector<ComponentDescriptor> comps;
            for (const auto& cj : require(m, "components", id))
                comps.push_back(parse_component(cj, id));
            auto fit = foundation_sigs.find(foundation);
            zoo.add_model_ff(id, foundation, comps, sigs_for(m, id),
                             fit == foundation_sigs.end() ? std::vector<LayerSignature>{}
                                                          : fit->second,
                             override_groups);
            continue;
        }
        // Parameter-efficient: entries are either {"ref": component} for
        // positions served by the foundation or full descriptors.
        std::vector<ComponentDescriptor> comps;
        for (const auto& cj : require(m, "components", id)) {
            if (auto rit = cj.find("ref"); rit != cj.end()) {
                comps.push_back(zoo.component(rit->get<std::string>()));
            } else {
                comps.push_back(parse_component(cj, id));
            }
        }
        zoo.add_model_pe(id, tuning, foundation, comps);
    }
    return zoo;
}

Cluster load_cluster(const std::string& path) {
    json j = load_json(path);
    check_schema(j, path);
    Cluster c;
    for (const auto& s : require(j, "servers", path)) {
        ServerDescriptor sd;
        sd.id = require(s, "id", "server").get<int>();
        sd.intra_bandwidth_bps = bps_from_gbps(require(s, "intra_gbps", "server").get<double>());
        c.add_server(sd);
    }
    for (const auto& d : require(j, "devices", path)) {
        DeviceDescriptor dd;
        dd.id = require(d, "id", "device").get<int>();
        dd.server = require(d, "server", "device").get<int>();
        dd.device_class = d.value("class", "std");
        dd.mem_capacity_bytes =
            static_cast<std::int64_t>(require(d, "mem_gib", "device").get<double>() *
                                      static_cast<double>(1LL << 30));
        dd.mem_bandwidth_bps = bps_from_gbps(require(d, "mem_gbps", "device").get<double>());
        dd.load_bandwidth_bps = bps_from_gbps(require(d, "load_gbps", "device").get<double>());
        c.add_device(dd);
    }
    if (j.contains("inter_gbps")) c.set_inter_default(bps_from_gbps(j["inter_gbps"].get<double>()));
    if (auto it = j.find("inter_pairs"); it != j.end()) {
        for (const auto& p : *it)
            c.set_inter_bandwidth(require(p, "a", "inter").get<int>(),
                                  require(p, "b", "inter").get<int>(),
                                  bps_from_gbps(require(p, "gbps", "inter").get<double>()));
    }
    return c;
}

CostModel load_profiles(const std::string& path) {
    json j = load_json(path);
    check_schema(j, path);
    CostModel cm;
    for (const auto& [name, factor] : require(j, "device_classes", path).items())
        cm.set_device_class(name, factor.get<double>());
    for (const auto& [key, cj] : require(j, "classes", path).items()) {
        ComponentClassProfile p;
        p.prefill = parse_grid(require(cj, "prefill", key), key + ".prefill");
        p.decode = parse_grid(require(cj, "decode", key), key + ".decode");
        p.kv_bytes_per_token = cj.value("kv_bytes_per_token", std::int64_t{-1});
        cm.add_class(key, std::move(p));
    }
    if (auto it = j.find("stitch_classes"); it != j.end()) {
        for (const auto& [key, cj] : it->items())
            cm.add_stitch_class(key, parse_grid(cj, key));
    }
    if (auto it = j.find("surrogate"); it != j.end()) {
        SurrogateRules r;
        r.attention_only = it->value("attention_only", r.attention_only);
        r.ffn_only = it->value("ffn_only", r.ffn_only);
        r.one_layer = it->value("one_layer", r.one_layer);
        r.multi_layer = it->value("multi_layer", r.multi_layer);
        r.allow_adapter_blocks = it->value("allow_adapter_blocks", r.allow_adapter_blocks);
        r.accept_threshold = it->value("accept_threshold", r.accept_threshold);
        cm.set_surrogate_rules(r);
    }
    return cm;
}

std::vector<LayerSignature> load_signatures(const std::string& path, const std::string& model_id) {
    std::ifstream in(path);
    if (!in) fail("cannot open signatures: " + path);
    std::vector<LayerSignature> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LayerSignature s;
        s.model_id = model_id;
        if (!(ls >> s.layer)) fail(path + ": bad signature row: " + line);
        double p;
        while (ls >> p) s.probs.push_back(p);
        if (s.probs.empty()) fail(path + ": signature row without probabilities");
        out.push_back(s);
    }
    if (out.empty()) fail(path + ": no signature rows");
    return out;
}

}  // namespace blocksim

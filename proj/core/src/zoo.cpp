#include "blocksim/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

namespace blocksim {

namespace {

std::string renorm_error(const std::string& what) { return "zoo: " + what; }

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(renorm_error(what)); }

}  // namespace

const char* component_kind_name(ComponentKind k) {
    switch (k) {
        case ComponentKind::kAttention: return "attention";
        case ComponentKind::kFfn: return "ffn";
        case ComponentKind::kEmbedding: return "embedding";
        case ComponentKind::kLmHead: return "lm_head";
        case ComponentKind::kAdapter: return "adapter";
    }
    return "unknown";
}

const char* tuning_kind_name(TuningKind k) {
    switch (k) {
        case TuningKind::kFoundation: return "foundation";
        case TuningKind::kFull: return "full";
        case TuningKind::kLora: return "lora";
        case TuningKind::kAdapter: return "adapter";
        case TuningKind::kPrefix: return "prefix";
        case TuningKind::kBitfit: return "bitfit";
        case TuningKind::kPrompt: return "prompt";
    }
    return "unknown";
}

ComponentKind component_kind_from(const std::string& s) {
    if (s == "attention") return ComponentKind::kAttention;
    if (s == "ffn") return ComponentKind::kFfn;
    if (s == "embedding") return ComponentKind::kEmbedding;
    if (s == "lm_head") return ComponentKind::kLmHead;
    if (s == "adapter") return ComponentKind::kAdapter;
    fail("unknown component kind: " + s);
}

TuningKind tuning_kind_from(const std::string& s) {
    if (s == "foundation") return TuningKind::kFoundation;
    if (s == "full") return TuningKind::kFull;
    if (s == "lora") return TuningKind::kLora;
    if (s == "adapter") return TuningKind::kAdapter;
    if (s == "prefix") return TuningKind::kPrefix;
    if (s == "bitfit") return TuningKind::kBitfit;
    if (s == "prompt") return TuningKind::kPrompt;
    fail("unknown tuning kind: " + s);
}

bool is_parameter_efficient(TuningKind k) {
    return k == TuningKind::kLora || k == TuningKind::kAdapter || k == TuningKind::kPrefix ||
           k == TuningKind::kBitfit || k == TuningKind::kPrompt;
}

std::int64_t ComponentDescriptor::param_bytes() const {
    std::int64_t total = 0;
    for (const auto& p : contents) total += p.bytes;
    return total;
}

bool ComponentDescriptor::single_content(const std::string& content_id) const {
    return contents.size() == 1 && contents[0].content_id == content_id;
}

double signature_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) fail("similarity: mismatched signature lengths");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) fail("similarity: zero-norm signature");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::pair<int, int>> group_layers(int na, int nb, int override_groups) {
    if (na <= 0 || nb <= 0) fail("group_layers: layer counts must be positive");
    int g = override_groups > 0 ? override_groups : std::gcd(na, nb);
    if (g > std::min(na, nb)) fail("group_layers: more groups than layers");
    std::vector<std::pair<int, int>> groups(static_cast<std::size_t>(g), {na / g, nb / g});
    groups.back().first += na % g;
    groups.back().second += nb % g;
    return groups;
}

void Zoo::add_stitch(const StitchDescriptor& s) {
    if (s.dim_in <= 0 || s.dim_out <= 0) fail("stitch dims must be positive");
    if (!stitches_.emplace(s.id, s).second) fail("duplicate stitch id: " + s.id);
}

void Zoo::register_components(const std::vector<ComponentDescriptor>& components) {
    for (const auto& c : components) {
        if (c.contents.empty()) fail("component without content: " + c.id);
        auto [it, inserted] = components_.emplace(c.id, c);
        if (!inserted) fail("duplicate component id: " + c.id);
    }
}

std::string Zoo::new_block(const std::string& model_id, const std::vector<std::string>& comp_ids) {
    BlockDescriptor b;
    b.id = "b" + std::to_string(next_block_++);
    b.component_ids = comp_ids;
    b.origin_models.insert(model_id);
    refresh_block_meta(b);
    blocks_.emplace(b.id, b);
    return b.id;
}

void Zoo::refresh_block_meta(BlockDescriptor& b) {
    if (b.component_ids.empty()) fail("empty block");
    b.param_bytes = 0;
    for (const auto& cid : b.component_ids) b.param_bytes += components_.at(cid).param_bytes();
    b.embed_dim_in = components_.at(b.component_ids.front()).embed_dim;
    b.embed_dim_out = components_.at(b.component_ids.back()).embed_dim;
}

void Zoo::add_edge(const std::string& a, const std::string& b, double score) {
    if (a == b) fail("self equivalence edge");
    if (score < threshold_) fail("equivalence edge below threshold");
    edges_[a][b] = score;
    edges_[b][a] = score;
}

std::vector<std::string> Zoo::kind_sequence(const BlockDescriptor& b) const {
    std::vector<std::string> seq;
    seq.reserve(b.component_ids.size());
    for (const auto& cid : b.component_ids)
        seq.push_back(component_kind_name(components_.at(cid).kind));
    return seq;
}

std::pair<std::string, std::string> Zoo::split_block(const std::string& block_id, int k) {
    // Collect the propagation closure: structurally identical equivalence
    // partners split at the same component index so edges survive at child
    // granularity; structurally different partners lose the edge.
    std::vector<std::string> group{block_id};
    std::deque<std::string> pending{block_id};
    const auto base_kinds = kind_sequence(blocks_.at(block_id));
    while (!pending.empty()) {
        std::string cur = pending.front();
        pending.pop_front();
        auto eit = edges_.find(cur);
        if (eit == edges_.end()) continue;
        for (const auto& [partner, score] : std::map<std::string, double>(eit->second)) {
            if (std::find(group.begin(), group.end(), partner) != group.end()) continue;
            if (kind_sequence(blocks_.at(partner)) == base_kinds) {
                group.push_back(partner);
                pending.push_back(partner);
            } else {
                warnings_.push_back("split of " + cur + " drops equivalence with " + partner +
                                    " (structure differs)");
                edges_[cur].erase(partner);
                edges_[partner].erase(cur);
            }
        }
    }

    // Snapshot surviving edges among the group before mutating.
    std::vector<EquivalenceEdge> old_edges;
    for (const auto& g : group) {
        auto eit = edges_.find(g);
        if (eit == edges_.end()) continue;
        for (const auto& [partner, score] : eit->second)
            if (g < partner) old_edges.push_back({g, partner, score});
    }

    std::map<std::string, std::pair<std::string, std::string>> children;
    for (const auto& g : group) {
        BlockDescriptor parent = blocks_.at(g);
        const int n = static_cast<int>(parent.component_ids.size());
        if (k <= 0 || k >= n) fail("split index out of range for block " + g);
        BlockDescriptor left, right;
        left.id = "b" + std::to_string(next_block_++);
        right.id = "b" + std::to_string(next_block_++);
        left.component_ids.assign(parent.component_ids.begin(), parent.component_ids.begin() + k);
        right.component_ids.assign(parent.component_ids.begin() + k, parent.component_ids.end());
        left.origin_models = parent.origin_models;
        right.origin_models = parent.origin_models;
        refresh_block_meta(left);
        refresh_block_meta(right);
        blocks_.emplace(left.id, left);
        blocks_.emplace(right.id, right);
        children[g] = {left.id, right.id};
        for (auto& [mid, m] : models_) {
            std::vector<std::string> chain;
            chain.reserve(m.chain.size() + 1);
            for (const auto& bid : m.chain) {
                if (bid == g) {
                    chain.push_back(left.id);
                    chain.push_back(right.id);
                } else {
                    chain.push_back(bid);
                }
            }
            m.chain = std::move(chain);
        }
        blocks_.erase(g);
        edges_.erase(g);
    }
    for (auto& [bid, adj] : edges_)
        for (const auto& g : group) adj.erase(g);

    for (const auto& e : old_edges) {
        const auto& [a1, a2] = children.at(e.a);
        const auto& [b1, b2] = children.at(e.b);
        add_edge(a1, b1, e.score);
        add_edge(a2, b2, e.score);
    }
    return children.at(block_id);
}

void Zoo::ensure_cuts(const std::string& model_id, const std::set<int>& cut_points) {
    auto& m = models_.at(model_id);
    const int total = static_cast<int>(m.component_ids.size());
    for (int cut : cut_points) {
        if (cut <= 0 || cut >= total) continue;
        // Re-walk the chain each time; earlier splits shift the block list.
        int start = 0;
        for (const auto& bid : std::vector<std::string>(m.chain.begin(), m.chain.end())) {
            const auto& b = blocks_.at(bid);
            const int len = static_cast<int>(b.component_ids.size());
            if (cut > start && cut < start + len) {
                split_block(bid, cut - start);
                break;
            }
            start += len;
        }
    }
}

void Zoo::add_foundation(const std::string& model_id,
                         const std::vector<ComponentDescriptor>& components) {
    if (models_.count(model_id)) fail("duplicate model id: " + model_id);
    if (components.empty()) fail("foundation without components");
    register_components(components);
    ModelDescriptor m;
    m.id = model_id;
    m.tuning = TuningKind::kFoundation;
    int max_layer = 0;
    for (const auto& c : components) {
        m.component_ids.push_back(c.id);
        max_layer = std::max(max_layer, c.layer);
    }
    m.n_layers = max_layer + 1;
    m.chain.push_back(new_block(model_id, m.component_ids));
    m.shared_fraction = 0.0;
    models_.emplace(model_id, m);
    registration_order_.push_back(model_id);
}

void Zoo::add_model_pe(const std::string& model_id, TuningKind tuning,
                       const std::string& foundation_id,
                       const std::vector<ComponentDescriptor>& components) {
    if (!is_parameter_efficient(tuning)) fail("add_model_pe with non-PE tuning");
    auto fit = models_.find(foundation_id);
    if (fit == models_.end()) fail("unknown foundation: " + foundation_id);
    auto existing = models_.find(model_id);
    if (existing != models_.end()) {
        // Idempotent re-registration: identical component sequence is a no-op.
        std::vector<std::string> ids;
        for (const auto& c : components) ids.push_back(c.id);
        if (existing->second.component_ids == ids) return;
        fail("model re-registered with different components: " + model_id);
    }
    const auto& foundation = fit->second;

    // Shared positions reference foundation components by id; everything else
    // is the model's own (fused replacements or standalone adapters).
    struct Pos {
        std::string comp_id;
        bool shared;
        int f_index;  // index in the foundation sequence, -1 for standalone adapters
    };
    std::map<std::string, int> f_index;
    for (int i = 0; i < static_cast<int>(foundation.component_ids.size()); ++i)
        f_index[foundation.component_ids[i]] = i;
    std::map<std::pair<int, int>, int> f_by_pos;
    for (int i = 0; i < static_cast<int>(foundation.component_ids.size()); ++i) {
        const auto& fc = components_.at(foundation.component_ids[i]);
        f_by_pos[{fc.layer, fc.slot}] = i;
    }

    std::vector<Pos> seq;
    std::vector<ComponentDescriptor> own;
    std::int64_t shared_bytes = 0, total_bytes = 0;
    int last_f = -1;
    for (const auto& c : components) {
        auto idx = f_index.find(c.id);
        if (idx != f_index.end()) {
            if (idx->second <= last_f) fail("shared components out of foundation order");
            last_f = idx->second;
            seq.push_back({c.id, true, idx->second});
            const auto& fc = components_.at(c.id);
            shared_bytes += fc.param_bytes();
            total_bytes += fc.param_bytes();
            continue;
        }
        if (c.attach == "inside")
            fail("adapter attaches inside a component (sub-component granularity): " + c.id);
        int fpos = -1;
        if (c.attach == "fuse") {
            auto pit = f_by_pos.find({c.layer, c.slot});
            if (pit == f_by_pos.end()) fail("fused component has no host position: " + c.id);
            fpos = pit->second;
            if (fpos <= last_f) fail("fused component out of foundation order: " + c.id);
            last_f = fpos;
        }
        own.push_back(c);
        seq.push_back({c.id, false, fpos});
        total_bytes += c.param_bytes();
        // A fused replacement still shares the base weights it carries.
        for (const auto& piece : c.contents) {
            if (fpos >= 0) {
                const auto& host = components_.at(foundation.component_ids[fpos]);
                for (const auto& hp : host.contents)
                    if (hp.content_id == piece.content_id) shared_bytes += piece.bytes;
            }
        }
    }
    register_components(own);

    // Foundation positions covered by this model's shared runs must be
    // servable as whole blocks: cut at every shared/unshared boundary.
    std::vector<bool> shared_mask(foundation.component_ids.size(), false);
    for (const auto& p : seq)
        if (p.shared) shared_mask[static_cast<std::size_t>(p.f_index)] = true;
    std::set<int> cuts;
    for (std::size_t i = 1; i < shared_mask.size(); ++i)
        if (shared_mask[i] != shared_mask[i - 1]) cuts.insert(static_cast<int>(i));
    ensure_cuts(foundation_id, cuts);

    ModelDescriptor m;
    m.id = model_id;
    m.foundation_id = foundation_id;
    m.tuning = tuning;
    int max_layer = 0;
    for (const auto& p : seq) {
        m.component_ids.push_back(p.comp_id);
        max_layer = std::max(max_layer, components_.at(p.comp_id).layer);
    }
    m.n_layers = max_layer + 1;
    m.shared_fraction = total_bytes > 0 ? static_cast<double>(shared_bytes) / total_bytes : 0.0;

    // Chain: shared runs map onto the foundation's blocks, own runs become
    // the model's own blocks (one per maximal run).
    const auto& fchain = models_.at(foundation_id).chain;
    std::vector<std::pair<int, int>> block_span;  // foundation block -> [start, end)
    {
        int start = 0;
        for (const auto& bid : fchain) {
            const int len = static_cast<int>(blocks_.at(bid).component_ids.size());
            block_span.push_back({start, start + len});
            (void)bid;
            start += len;
        }
    }
    std::size_t i = 0;
    while (i < seq.size()) {
        if (seq[i].shared) {
            int run_start = seq[i].f_index;
            std::size_t j = i;
            while (j + 1 < seq.size() && seq[j + 1].shared) ++j;
            int run_end = seq[j].f_index + 1;
            for (std::size_t bi = 0; bi < fchain.size(); ++bi) {
                if (block_span[bi].first >= run_start && block_span[bi].second <= run_end) {
                    m.chain.push_back(fchain[bi]);
                    blocks_.at(fchain[bi]).origin_models.insert(model_id);
                }
            }
            i = j + 1;
        } else {
            std::vector<std::string> run;
            while (i < seq.size() && !seq[i].shared) run.push_back(seq[i++].comp_id);
            m.chain.push_back(new_block(model_id, run));
        }
    }
    models_.emplace(model_id, m);
    registration_order_.push_back(model_id);
}

void Zoo::add_model_ff(const std::string& model_id, const std::string& foundation_id,
                       const std::vector<ComponentDescriptor>& components,
                       const std::vector<LayerSignature>& model_sigs,
                       const std::vector<LayerSignature>& foundation_sigs, int override_groups) {
    auto fit = models_.find(foundation_id);
    if (fit == models_.end()) fail("unknown foundation: " + foundation_id);
    if (models_.count(model_id)) fail("duplicate model id: " + model_id);
    register_components(components);

    ModelDescriptor m;
    m.id = model_id;
    m.foundation_id = foundation_id;
    m.tuning = TuningKind::kFull;
    int max_layer = 0;
    for (const auto& c : components) {
        m.component_ids.push_back(c.id);
        max_layer = std::max(max_layer, c.layer);
    }
    m.n_layers = max_layer + 1;
    m.shared_fraction = 0.0;  // full fine-tune: no identical content

    const int n_f = fit->second.n_layers;
    const int n_m = m.n_layers;

    auto collect = [](const std::vector<LayerSignature>& sigs, int n) {
        std::vector<const std::vector<double>*> rows(static_cast<std::size_t>(n), nullptr);
        for (const auto& s : sigs)
            if (s.layer >= 0 && s.layer < n) rows[static_cast<std::size_t>(s.layer)] = &s.probs;
        for (const auto* r : rows)
            if (r == nullptr) return std::vector<const std::vector<double>*>{};
        return rows;
    };
    auto f_rows = collect(foundation_sigs, n_f);
    auto m_rows = collect(model_sigs, n_m);

    if (f_rows.empty() || m_rows.empty()) {
        warnings_.push_back("model " + model_id + " excluded from equivalence (missing signature)");
        m.chain.push_back(new_block(model_id, m.component_ids));
        models_.emplace(model_id, m);
        registration_order_.push_back(model_id);
        return;
    }

    auto group_sig = [](const std::vector<const std::vector<double>*>& rows, int lo, int hi) {
        std::vector<double> mean(rows[static_cast<std::size_t>(lo)]->size(), 0.0);
        for (int l = lo; l < hi; ++l) {
            const auto& r = *rows[static_cast<std::size_t>(l)];
            if (r.size() != mean.size()) fail("signature rows differ in length");
            for (std::size_t i = 0; i < r.size(); ++i) mean[i] += r[i];
        }
        double sum = 0.0;
        for (double v : mean) sum += v;
        if (sum > 0.0)
            for (double& v : mean) v /= sum;
        return mean;
    };

    const auto groups = group_layers(n_f, n_m, override_groups);
    struct Group {
        int f_lo, f_hi, m_lo, m_hi;
        double sim;
        bool above;
    };
    std::vector<Group> gs;
    int f_at = 0, m_at = 0;
    for (const auto& [fa, mb] : groups) {
        Group g{f_at, f_at + fa, m_at, m_at + mb, 0.0, false};
        g.sim = signature_similarity(group_sig(f_rows, g.f_lo, g.f_hi),
                                     group_sig(m_rows, g.m_lo, g.m_hi));
        g.above = g.sim >= threshold_;
        gs.push_back(g);
        f_at = g.f_hi;
        m_at = g.m_hi;
    }

    // Maximal runs of groups with equal status become one segment; equivalent
    // segments carry the run's most conservative (minimum) similarity.
    struct Segment {
        int f_lo, f_hi, m_lo, m_hi;
        bool above;
        double score;
    };
    std::vector<Segment> segments;
    for (const auto& g : gs) {
        if (!segments.empty() && segments.back().above == g.above) {
            segments.back().f_hi = g.f_hi;
            segments.back().m_hi = g.m_hi;
            segments.back().score = std::min(segments.back().score, g.sim);
        } else {
            segments.push_back({g.f_lo, g.f_hi, g.m_lo, g.m_hi, g.above, g.sim});
        }
    }

    // Map foundation layer boundaries to component indices and cut there.
    const auto& f_comp_ids = fit->second.component_ids;
    std::vector<int> f_layer_start(static_cast<std::size_t>(n_f) + 1,
                                   static_cast<int>(f_comp_ids.size()));
    for (int i = static_cast<int>(f_comp_ids.size()) - 1; i >= 0; --i) {
        int layer = components_.at(f_comp_ids[static_cast<std::size_t>(i)]).layer;
        f_layer_start[static_cast<std::size_t>(layer)] = i;
    }
    for (int l = n_f - 1; l >= 0; --l)
        if (f_layer_start[static_cast<std::size_t>(l)] > f_layer_start[static_cast<std::size_t>(l) + 1])
            f_layer_start[static_cast<std::size_t>(l)] = f_layer_start[static_cast<std::size_t>(l) + 1];
    std::set<int> cuts;
    for (const auto& s : segments)
        if (s.f_lo > 0) cuts.insert(f_layer_start[static_cast<std::size_t>(s.f_lo)]);
    ensure_cuts(foundation_id, cuts);

    // Model component indices per layer.
    std::vector<int> m_layer_start(static_cast<std::size_t>(n_m) + 1,
                                   static_cast<int>(m.component_ids.size()));
    for (int i = static_cast<int>(m.component_ids.size()) - 1; i >= 0; --i) {
        int layer = components_.at(m.component_ids[static_cast<std::size_t>(i)]).layer;
        m_layer_start[static_cast<std::size_t>(layer)] = i;
    }
    for (int l = n_m - 1; l >= 0; --l)
        if (m_layer_start[static_cast<std::size_t>(l)] > m_layer_start[static_cast<std::size_t>(l) + 1])
            m_layer_start[static_cast<std::size_t>(l)] = m_layer_start[static_cast<std::size_t>(l) + 1];

    const auto& fchain = models_.at(foundation_id).chain;
    auto f_blocks_in = [&](int comp_lo, int comp_hi) {
        std::vector<std::string> out;
        int start = 0;
        for (const auto& bid : fchain) {
            const int len = static_cast<int>(blocks_.at(bid).component_ids.size());
            if (start >= comp_lo && start + len <= comp_hi) out.push_back(bid);
            start += len;
        }
        return out;
    };

    for (const auto& s : segments) {
        const int m_comp_lo = m_layer_start[static_cast<std::size_t>(s.m_lo)];
        const int m_comp_hi = m_layer_start[static_cast<std::size_t>(s.m_hi)];
        std::vector<std::string> run(m.component_ids.begin() + m_comp_lo,
                                     m.component_ids.begin() + m_comp_hi);
        if (!s.above) {
            m.chain.push_back(new_block(model_id, run));
            continue;
        }
        const int f_comp_lo = f_layer_start[static_cast<std::size_t>(s.f_lo)];
        const int f_comp_hi = f_layer_start[static_cast<std::size_t>(s.f_hi)];
        const auto fblocks = f_blocks_in(f_comp_lo, f_comp_hi);
        const int f_layers = s.f_hi - s.f_lo;
        const int m_layers = s.m_hi - s.m_lo;
        if (f_layers == m_layers && fblocks.size() > 1) {
            // Mirror earlier foundation splits so edges stay one-to-one.
            int off = 0;
            for (const auto& fbid : fblocks) {
                const int len = static_cast<int>(blocks_.at(fbid).component_ids.size());
                std::vector<std::string> part(run.begin() + off, run.begin() + off + len);
                std::string nb = new_block(model_id, part);
                add_edge(fbid, nb, s.score);
                m.chain.push_back(nb);
                off += len;
            }
            if (off != static_cast<int>(run.size()))
                fail("mirrored segment does not cover the model run");
        } else if (fblocks.size() == 1) {
            std::string nb = new_block(model_id, run);
            add_edge(fblocks[0], nb, s.score);
            m.chain.push_back(nb);
        } else {
            warnings_.push_back("segment of " + model_id +
                                " spans unaligned foundation blocks; no equivalence edge");
            m.chain.push_back(new_block(model_id, run));
        }
    }
    models_.emplace(model_id, m);
    registration_order_.push_back(model_id);
}

std::vector<CandidateBlock> Zoo::candidate_instances(const std::string& block_id) const {
    const auto& base = block(block_id);
    std::vector<CandidateBlock> out;
    out.push_back({block_id, "", 1.0});
    auto eit = edges_.find(block_id);
    if (eit == edges_.end()) return out;
    for (const auto& [partner, score] : eit->second) {
        const auto& p = blocks_.at(partner);
        if (p.embed_dim_in == base.embed_dim_in) {
            out.push_back({partner, "", score});
            continue;
        }
        for (const auto& [sid, st] : stitches_) {
            if (st.dim_in == base.embed_dim_in && st.dim_out == p.embed_dim_in) {
                out.push_back({partner, sid, score});
                break;
            }
        }
        // No registered stitch: candidate excluded.
    }
    return out;
}

RedundancyReport Zoo::redundancy_report(const std::vector<std::string>& model_ids) const {
    RedundancyReport r;
    if (model_ids.empty()) return r;
    std::map<std::string, std::pair<std::int64_t, std::set<std::string>>> content;  // id -> bytes, models
    std::vector<std::int64_t> sizes;
    for (const auto& mid : model_ids) {
        const auto& m = model(mid);
        std::int64_t sz = 0;
        for (const auto& cid : m.component_ids) {
            for (const auto& piece : component(cid).contents) {
                auto& entry = content[piece.content_id];
                if (entry.first != 0 && entry.first != piece.bytes)
                    fail("content id with inconsistent size: " + piece.content_id);
                entry.first = piece.bytes;
                entry.second.insert(mid);
                sz += piece.bytes;
            }
        }
        sizes.push_back(sz);
        r.naive_bytes += sz;
    }
    for (const auto& [cid, entry] : content) r.dedup_bytes += entry.first;
    std::int64_t dup = 0;
    for (const auto& mid : model_ids) {
        const auto& m = model(mid);
        for (const auto& cid : m.component_ids)
            for (const auto& piece : component(cid).contents)
                if (content.at(piece.content_id).second.size() > 1) dup += piece.bytes;
    }
    r.redundancy_fraction =
        r.naive_bytes > 0 ? 1.0 - static_cast<double>(r.dedup_bytes) / r.naive_bytes : 0.0;
    r.duplicate_copy_fraction =
        r.naive_bytes > 0 ? static_cast<double>(dup) / r.naive_bytes : 0.0;

    // Round-robin whole-model swapping in list order (cyclic): bytes whose
    // content is already resident from the previous model were moved in vain.
    if (model_ids.size() >= 2) {
        std::int64_t wasted = 0, moved = 0;
        const std::size_t k = model_ids.size();
        for (std::size_t i = 0; i < k; ++i) {
            const auto& prev = model(model_ids[(i + k - 1) % k]);
            const auto& cur = model(model_ids[i]);
            std::set<std::string> prev_content;
            for (const auto& cid : prev.component_ids)
                for (const auto& piece : component(cid).contents)
                    prev_content.insert(piece.content_id);
            for (const auto& cid : cur.component_ids)
                for (const auto& piece : component(cid).contents)
                    if (prev_content.count(piece.content_id)) wasted += piece.bytes;
            moved += sizes[i];
        }
        r.switch_overhead_fraction = moved > 0 ? static_cast<double>(wasted) / moved : 0.0;
    }
    return r;
}

std::vector<std::string> Zoo::served_model_ids() const {
    std::vector<std::string> out;
    for (const auto& mid : registration_order_)
        if (models_.at(mid).tuning != TuningKind::kFoundation) out.push_back(mid);
    return out;
}

const ModelDescriptor& Zoo::model(const std::string& id) const {
    auto it = models_.find(id);
    if (it == models_.end()) fail("unknown model: " + id);
    return it->second;
}

const BlockDescriptor& Zoo::block(const std::string& id) const {
    auto it = blocks_.find(id);
    if (it == blocks_.end()) fail("unknown block: " + id);
    return it->second;
}

const ComponentDescriptor& Zoo::component(const std::string& id) const {
    auto it = components_.find(id);
    if (it == components_.end()) fail("unknown component: " + id);
    return it->second;
}

const StitchDescriptor& Zoo::stitch(const std::string& id) const {
    auto it = stitches_.find(id);
    if (it == stitches_.end()) fail("unknown stitch: " + id);
    return it->second;
}

std::vector<std::string> Zoo::block_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, b] : blocks_) out.push_back(id);
    return out;
}

std::vector<EquivalenceEdge> Zoo::equivalence_edges() const {
    std::vector<EquivalenceEdge> out;
    for (const auto& [a, adj] : edges_)
        for (const auto& [b, score] : adj)
            if (a < b) out.push_back({a, b, score});
    return out;
}

double Zoo::edge_score(const std::string& a, const std::string& b) const {
    auto it = edges_.find(a);
    if (it == edges_.end()) return 0.0;
    auto jt = it->second.find(b);
    return jt == it->second.end() ? 0.0 : jt->second;
}

std::vector<ComponentDescriptor> Zoo::block_components(const std::string& block_id) const {
    std::vector<ComponentDescriptor> out;
    for (const auto& cid : block(block_id).component_ids) out.push_back(component(cid));
    return out;
}

}  // namespace blocksim

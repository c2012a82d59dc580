#include "blocksim/costmodel.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace blocksim {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("costmodel: " + what);
}

// Index of the grid cell containing x: largest i with axis[i] <= x, clamped
// so that [i, i+1] is always a valid cell when the axis has >= 2 points.
std::size_t cell_index(const std::vector<double>& axis, double x) {
    if (axis.size() < 2) return 0;
    auto it = std::upper_bound(axis.begin(), axis.end(), x);
    if (it == axis.begin()) return 0;
    std::size_t i = static_cast<std::size_t>(it - axis.begin()) - 1;
    return std::min(i, axis.size() - 2);
}

double axis_t(const std::vector<double>& axis, std::size_t i, double x) {
    if (axis.size() < 2) return 0.0;
    const double lo = axis[i], hi = axis[i + 1];
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    return (x - lo) / (hi - lo);
}

}  // namespace

const char* phase_name(Phase p) { return p == Phase::kPrefill ? "prefill" : "decode"; }

void Interp2D::validate() const {
    if (xs.empty() || ys.empty()) fail("empty interpolation axis");
    if (!std::is_sorted(xs.begin(), xs.end()) || !std::is_sorted(ys.begin(), ys.end()))
        fail("interpolation axes must be sorted");
    if (std::adjacent_find(xs.begin(), xs.end()) != xs.end() ||
        std::adjacent_find(ys.begin(), ys.end()) != ys.end())
        fail("interpolation axes must be strictly increasing");
    if (v.size() != xs.size()) fail("interpolation grid row count mismatch");
    for (const auto& row : v)
        if (row.size() != ys.size()) fail("interpolation grid column count mismatch");
}

double Interp2D::eval(double x, double y) const {
    if (empty()) fail("eval on empty grid");
    const std::size_t i = cell_index(xs, x);
    const std::size_t j = cell_index(ys, y);
    const double tx = axis_t(xs, i, x);
    const double ty = axis_t(ys, j, y);
    const std::size_t i1 = xs.size() < 2 ? i : i + 1;
    const std::size_t j1 = ys.size() < 2 ? j : j + 1;
    const double v00 = v[i][j], v01 = v[i][j1], v10 = v[i1][j], v11 = v[i1][j1];
    return v00 * (1 - tx) * (1 - ty) + v01 * (1 - tx) * ty + v10 * tx * (1 - ty) + v11 * tx * ty;
}

std::string CostModel::class_key(ComponentKind kind, int embed_dim) {
    return std::string(component_kind_name(kind)) + ":" + std::to_string(embed_dim);
}

void CostModel::add_class(const std::string& key, ComponentClassProfile profile) {
    profile.prefill.validate();
    profile.decode.validate();
    if (!classes_.emplace(key, std::move(profile)).second) fail("duplicate class: " + key);
}

void CostModel::add_stitch_class(const std::string& key, Interp2D table) {
    table.validate();
    if (!stitch_classes_.emplace(key, std::move(table)).second)
        fail("duplicate stitch class: " + key);
}

void CostModel::set_device_class(const std::string& name, double speed_factor) {
    if (speed_factor <= 0.0) fail("speed factor must be positive");
    device_classes_[name] = speed_factor;
}

double CostModel::speed_factor(const std::string& device_class) const {
    auto it = device_classes_.find(device_class);
    if (it == device_classes_.end()) fail("unknown device class: " + device_class);
    return it->second;
}

double CostModel::component_us(const std::string& key, Phase phase, double batch,
                               double tokens) const {
    auto it = classes_.find(key);
    if (it == classes_.end()) fail("unknown component class: " + key);
    const Interp2D& t = phase == Phase::kPrefill ? it->second.prefill : it->second.decode;
    return t.eval(batch, tokens);
}

double CostModel::block_us(const Zoo& zoo, const std::string& block_id, Phase phase, double batch,
                           double tokens, double speed_factor) const {
    if (speed_factor <= 0.0) fail("speed factor must be positive");
    double total = 0.0;
    for (const auto& cid : zoo.block(block_id).component_ids) {
        const auto& c = zoo.component(cid);
        total += component_us(class_key(c.kind, c.embed_dim), phase, batch, tokens);
    }
    return total / speed_factor;
}

double CostModel::stitch_us(const std::string& cost_class, double batch, double tokens,
                            double speed_factor) const {
    auto it = stitch_classes_.find(cost_class);
    if (it == stitch_classes_.end()) fail("unknown stitch class: " + cost_class);
    return it->second.eval(batch, tokens) / speed_factor;
}

std::int64_t CostModel::kv_bytes_per_token(const Zoo& zoo, const std::string& block_id) const {
    std::int64_t total = 0;
    for (const auto& cid : zoo.block(block_id).component_ids) {
        const auto& c = zoo.component(cid);
        auto it = classes_.find(class_key(c.kind, c.embed_dim));
        if (it != classes_.end() && it->second.kv_bytes_per_token >= 0) {
            total += it->second.kv_bytes_per_token;
        } else if (c.kind == ComponentKind::kAttention) {
            // K and V caches at 2 bytes per element.
            total += 4LL * c.embed_dim;
        }
    }
    return total;
}

std::int64_t CostModel::act_bytes_per_token(const Zoo& zoo, const std::string& block_id) const {
    return 2LL * zoo.block(block_id).embed_dim_out;
}

std::optional<double> CostModel::surrogate_speedup(const Zoo& zoo,
                                                   const std::string& block_id) const {
    bool any_attention = false, any_ffn = false, any_other = false, any_adapter = false;
    std::set<int> layers;
    for (const auto& c : zoo.block_components(block_id)) {
        layers.insert(c.layer);
        switch (c.kind) {
            case ComponentKind::kAttention: any_attention = true; break;
            case ComponentKind::kFfn: any_ffn = true; break;
            case ComponentKind::kAdapter: any_adapter = true; break;
            default: any_other = true; break;
        }
    }
    if (any_adapter && !surrogate_.allow_adapter_blocks) return std::nullopt;
    if (any_attention && !any_ffn && !any_other) return surrogate_.attention_only;
    if (any_ffn && !any_attention && !any_other) return surrogate_.ffn_only;
    return layers.size() <= 1 ? std::optional<double>(surrogate_.one_layer)
                              : std::optional<double>(surrogate_.multi_layer);
}

}  // namespace blocksim

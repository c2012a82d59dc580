#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blocksim/zoo.hpp"

namespace blocksim {

enum class Phase : std::uint8_t { kPrefill, kDecode };
const char* phase_name(Phase p);

// Bilinear interpolation over a rectangular grid, clamped at the edges
// (queries outside the measured range use the nearest boundary value).
struct Interp2D {
    std::vector<double> xs;               // sorted, non-empty
    std::vector<double> ys;               // sorted, non-empty
    std::vector<std::vector<double>> v;   // v[i][j] at (xs[i], ys[j])

    bool empty() const { return xs.empty(); }
    double eval(double x, double y) const;
    void validate() const;  // throws std::invalid_argument on malformed grids
};

// Measured costs for one component class (a component kind at one embedding
// dim). Prefill tables are (batch, prompt_tokens) -> microseconds for the
// whole pass; decode tables are (batch, context_tokens) -> microseconds for
// one generation iteration.
struct ComponentClassProfile {
    Interp2D prefill;
    Interp2D decode;
    std::int64_t kv_bytes_per_token = -1;  // -1: derive from kind/dim
};

// Surrogate (approximate executor) speedup by block shape.
struct SurrogateRules {
    double attention_only = 37.43;
    double ffn_only = 1.71;
    double one_layer = 22.91;
    double multi_layer = 18.55;
    // Blocks containing adapter components have no measured surrogate.
    bool allow_adapter_blocks = false;
    // Advisory quality floor recorded alongside plans; not a filter.
    double accept_threshold = 0.95;
};

// Duration oracle for block executions, stitches and memory footprints.
// Component costs compose: a block costs the sum of its components' class
// costs, so blocks created by later splits are priced with no new tables.
class CostModel {
  public:
    static std::string class_key(ComponentKind kind, int embed_dim);

    void add_class(const std::string& key, ComponentClassProfile profile);
    void add_stitch_class(const std::string& key, Interp2D table);
    void set_device_class(const std::string& name, double speed_factor);
    void set_surrogate_rules(const SurrogateRules& rules) { surrogate_ = rules; }
    const SurrogateRules& surrogate_rules() const { return surrogate_; }

    bool has_class(const std::string& key) const { return classes_.count(key) > 0; }
    const ComponentClassProfile& class_profile(const std::string& key) const {
        return classes_.at(key);
    }
    double speed_factor(const std::string& device_class) const;

    // Microsecond durations (unrounded; round once when scheduling).
    double component_us(const std::string& key, Phase phase, double batch, double tokens) const;
    double block_us(const Zoo& zoo, const std::string& block_id, Phase phase, double batch,
                    double tokens, double speed_factor = 1.0) const;
    double stitch_us(const std::string& cost_class, double batch, double tokens,
                     double speed_factor = 1.0) const;

    std::int64_t kv_bytes_per_token(const Zoo& zoo, const std::string& block_id) const;
    std::int64_t act_bytes_per_token(const Zoo& zoo, const std::string& block_id) const;

    // Speedup of the block's surrogate over true execution, or nullopt when
    // the block has no surrogate (adapter-bearing blocks by default).
    std::optional<double> surrogate_speedup(const Zoo& zoo, const std::string& block_id) const;

  private:
    std::map<std::string, ComponentClassProfile> classes_;
    std::map<std::string, Interp2D> stitch_classes_;
    std::map<std::string, double> device_classes_;
    SurrogateRules surrogate_;
};

}  // namespace blocksim

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace blocksim {

enum class ComponentKind : std::uint8_t { kAttention, kFfn, kEmbedding, kLmHead, kAdapter };
enum class TuningKind : std::uint8_t { kFoundation, kFull, kLora, kAdapter, kPrefix, kBitfit, kPrompt };

const char* component_kind_name(ComponentKind k);
const char* tuning_kind_name(TuningKind k);
ComponentKind component_kind_from(const std::string& s);
TuningKind tuning_kind_from(const std::string& s);
bool is_parameter_efficient(TuningKind k);

// One stored parameter blob. Components may carry several pieces so that a
// fused component (base weights plus an adapter delta) still shares the base
// bytes with the foundation at the content level.
struct ContentPiece {
    std::string content_id;
    std::int64_t bytes = 0;
};

struct ComponentDescriptor {
    std::string id;
    ComponentKind kind = ComponentKind::kAttention;
    int embed_dim = 0;
    std::string model_id;
    int layer = 0;
    int slot = 0;
    std::vector<ContentPiece> contents;
    // Adapter attachment: "fuse" replaces the host component, "before"/"after"
    // insert sequentially at a component boundary, "inside" is sub-component
    // granularity and is rejected to preserve architectural integrity.
    std::string attach;

    std::int64_t param_bytes() const;
    bool single_content(const std::string& content_id) const;
};

struct BlockDescriptor {
    std::string id;
    std::vector<std::string> component_ids;  // ordered
    std::int64_t param_bytes = 0;
    int embed_dim_in = 0;
    int embed_dim_out = 0;
    std::set<std::string> origin_models;
};

struct ModelDescriptor {
    std::string id;
    std::string foundation_id;  // empty for foundations
    TuningKind tuning = TuningKind::kFoundation;
    std::vector<std::string> component_ids;  // ordered full sequence
    std::vector<std::string> chain;          // ordered block ids after partitioning
    double shared_fraction = 0.0;
    int n_layers = 0;
};

struct LayerSignature {
    std::string model_id;
    int layer = 0;
    std::vector<double> probs;
};

struct StitchDescriptor {
    std::string id;
    int dim_in = 0;
    int dim_out = 0;
    std::string cost_class;  // cost-model key for the stitch computation
    double quality = 0.0;
};

struct EquivalenceEdge {
    std::string a;
    std::string b;
    double score = 0.0;
};

// Candidate serving target for a chain step: the block itself or an
// equivalent, optionally entered through a stitch when embed dims differ.
struct CandidateBlock {
    std::string block_id;
    std::string stitch_id;  // empty when dims match
    double score = 1.0;     // 1.0 for self, edge score for equivalents
};

struct RedundancyReport {
    std::int64_t naive_bytes = 0;
    std::int64_t dedup_bytes = 0;
    double redundancy_fraction = 0.0;       // 1 - dedup/naive
    double duplicate_copy_fraction = 0.0;   // bytes whose content appears in >1 model / naive
    double switch_overhead_fraction = 0.0;  // wasted bytes under round-robin whole-model swapping
};

// Cosine similarity of probability signatures; throws on zero-norm input.
double signature_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Contiguous layer grouping for models with different depths: G = gcd(na, nb)
// groups (or an explicit override), equal division, remainder layers folded
// into the final group. Returns per-group (a_layers, b_layers).
std::vector<std::pair<int, int>> group_layers(int na, int nb, int override_groups = 0);

// The block zoo: models, their partition into blocks, the functional
// equivalence graph over blocks, and the stitch registry.
//
// Partitioning is lazy and monotone: registering a model never merges
// existing blocks, only splits them or reuses them. Splitting a block that
// has equivalence edges propagates the split to structurally identical
// partners so edges always connect whole blocks; partners with a different
// component-kind sequence lose the edge instead (recorded as a warning).
class Zoo {
  public:
    explicit Zoo(double equivalence_threshold = 0.98) : threshold_(equivalence_threshold) {}

    double threshold() const { return threshold_; }

    void add_stitch(const StitchDescriptor& s);

    // Registers a foundation model as a single whole-chain block.
    void add_foundation(const std::string& model_id,
                        const std::vector<ComponentDescriptor>& components);

    // Lazy partitioning for a parameter-efficient model: adapter components
    // become the model's own blocks, shared components are served by
    // foundation blocks, splitting those blocks only where adapters attach.
    void add_model_pe(const std::string& model_id, TuningKind tuning,
                      const std::string& foundation_id,
                      const std::vector<ComponentDescriptor>& components);

    // Lazy partitioning for a fully fine-tuned model: layers are grouped
    // against the foundation (gcd grouping), per-group signature similarity
    // decides equivalence, and maximal runs of groups with the same status
    // merge into single blocks. Models without signatures register as one
    // whole block and take part in no equivalence.
    void add_model_ff(const std::string& model_id, const std::string& foundation_id,
                      const std::vector<ComponentDescriptor>& components,
                      const std::vector<LayerSignature>& model_sigs,
                      const std::vector<LayerSignature>& foundation_sigs,
                      int override_groups = 0);

    // The serving candidates for a chain step: self plus equivalents; an
    // equivalent with a different input dim needs a registered stitch
    // (dim_in = base's, dim_out = equivalent's) or it is excluded.
    std::vector<CandidateBlock> candidate_instances(const std::string& block_id) const;

    RedundancyReport redundancy_report(const std::vector<std::string>& model_ids) const;
    // All non-foundation models in registration order.
    std::vector<std::string> served_model_ids() const;
    // Every model (foundations included) in registration order.
    const std::vector<std::string>& model_ids() const { return registration_order_; }

    const ModelDescriptor& model(const std::string& id) const;
    const BlockDescriptor& block(const std::string& id) const;
    const ComponentDescriptor& component(const std::string& id) const;
    const StitchDescriptor& stitch(const std::string& id) const;
    bool has_model(const std::string& id) const { return models_.count(id) > 0; }

    std::vector<std::string> block_ids() const;  // sorted
    std::size_t block_count() const { return blocks_.size(); }
    std::vector<EquivalenceEdge> equivalence_edges() const;  // sorted by (a, b)
    double edge_score(const std::string& a, const std::string& b) const;  // 0 if absent
    const std::vector<std::string>& warnings() const { return warnings_; }

    std::vector<ComponentDescriptor> block_components(const std::string& block_id) const;

  private:
    struct Cut;  // component-index cut request within a block

    void register_components(const std::vector<ComponentDescriptor>& components);
    std::string new_block(const std::string& model_id, const std::vector<std::string>& comp_ids);
    void refresh_block_meta(BlockDescriptor& b);
    void add_edge(const std::string& a, const std::string& b, double score);
    // Splits `block_id` before component index k (1..size-1); propagates to
    // equivalence partners. Returns the two child ids.
    std::pair<std::string, std::string> split_block(const std::string& block_id, int k);
    // Ensures the model's chain has block boundaries at the given component
    // indices of the model's component sequence.
    void ensure_cuts(const std::string& model_id, const std::set<int>& cut_points);
    std::vector<std::string> kind_sequence(const BlockDescriptor& b) const;

    double threshold_;
    std::map<std::string, ModelDescriptor> models_;
    std::map<std::string, BlockDescriptor> blocks_;
    std::map<std::string, ComponentDescriptor> components_;
    std::map<std::string, StitchDescriptor> stitches_;
    std::map<std::string, std::map<std::string, double>> edges_;  // symmetric adjacency
    std::vector<std::string> registration_order_;
    std::vector<std::string> warnings_;
    std::uint64_t next_block_ = 0;
};

}  // namespace blocksim

#pragma once

// Shared model-family builders for zoo tests: a small foundation, a full
// fine-tune whose upper half diverges, and a LoRA with fused attention at
// every layer. Registering all three walks the partition from one block to
// four to nine, with two equivalence edges surviving the final splits.

#include <string>
#include <vector>

#include "blocksim/zoo.hpp"

namespace fixtures {

inline std::vector<blocksim::ComponentDescriptor> transformer_components(
    const std::string& model, int layers, int dim, std::int64_t attention_bytes,
    std::int64_t ffn_bytes) {
    using namespace blocksim;
    std::vector<ComponentDescriptor> out;
    for (int l = 0; l < layers; ++l) {
        ComponentDescriptor att;
        att.id = model + ".att" + std::to_string(l);
        att.kind = ComponentKind::kAttention;
        att.embed_dim = dim;
        att.model_id = model;
        att.layer = l;
        att.slot = 0;
        att.contents = {{model + ".att" + std::to_string(l) + ".w", attention_bytes}};
        out.push_back(att);

        ComponentDescriptor ffn;
        ffn.id = model + ".ffn" + std::to_string(l);
        ffn.kind = ComponentKind::kFfn;
        ffn.embed_dim = dim;
        ffn.model_id = model;
        ffn.layer = l;
        ffn.slot = 1;
        ffn.contents = {{model + ".ffn" + std::to_string(l) + ".w", ffn_bytes}};
        out.push_back(ffn);
    }
    return out;
}

inline std::vector<blocksim::LayerSignature> flat_signatures(const std::string& model, int layers,
                                                             const std::vector<double>& row) {
    std::vector<blocksim::LayerSignature> out;
    for (int l = 0; l < layers; ++l) out.push_back({model, l, row});
    return out;
}

// Foundation "base": 2 layers, one block. Shapes every walkthrough below.
inline void add_base(blocksim::Zoo& zoo) {
    zoo.add_foundation("base", transformer_components("base", 2, 4096, 1000, 3000));
}

// Full fine-tune "ft": layer 0 matches the foundation's signature, layer 1
// diverges, so partitioning cuts both models mid-chain -> 4 blocks total.
inline void add_ft(blocksim::Zoo& zoo) {
    using namespace blocksim;
    std::vector<LayerSignature> base_sigs = {{"base", 0, {0.7, 0.2, 0.1}},
                                             {"base", 1, {0.1, 0.2, 0.7}}};
    std::vector<LayerSignature> ft_sigs = {{"ft", 0, {0.7, 0.2, 0.1}},
                                           {"ft", 1, {0.7, 0.2, 0.1}}};
    zoo.add_model_ff("ft", "base", transformer_components("ft", 2, 4096, 1000, 3000), ft_sigs,
                     base_sigs);
}

// LoRA "lora": fused attention replacements at both layers, ffns shared with
// the foundation. Forces attention/ffn splits that propagate across the
// equivalence edge -> 9 blocks total.
inline void add_lora(blocksim::Zoo& zoo) {
    using namespace blocksim;
    std::vector<ComponentDescriptor> comps;
    const auto& base = zoo.model("base");
    for (int l = 0; l < 2; ++l) {
        ComponentDescriptor att;
        att.id = "lora.att" + std::to_string(l);
        att.kind = ComponentKind::kAttention;
        att.embed_dim = 4096;
        att.model_id = "lora";
        att.layer = l;
        att.slot = 0;
        att.attach = "fuse";
        // Fused = the base weights plus a small delta; base bytes stay shared.
        att.contents = {{"base.att" + std::to_string(l) + ".w", 1000},
                        {"lora.att" + std::to_string(l) + ".delta", 8}};
        comps.push_back(att);
        comps.push_back(zoo.component(base.component_ids[static_cast<std::size_t>(2 * l + 1)]));
    }
    zoo.add_model_pe("lora", TuningKind::kLora, "base", comps);
}

inline blocksim::Zoo family_zoo() {
    blocksim::Zoo zoo;
    add_base(zoo);
    add_ft(zoo);
    add_lora(zoo);
    return zoo;
}

}  // namespace fixtures

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <stdexcept>

#include "blocksim/zoo.hpp"
#include "zoo_fixtures.hpp"

using namespace blocksim;

TEST_CASE("signature similarity is cosine and rejects bad input") {
    CHECK(signature_similarity({1, 0, 0}, {1, 0, 0}) == doctest::Approx(1.0));
    CHECK(signature_similarity({0.5, 0.5, 0}, {0.5, 0, 0.5}) == doctest::Approx(0.5));
    CHECK(signature_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(signature_similarity({1, 0}, {1, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(signature_similarity({0, 0}, {1, 0}), std::invalid_argument);
}

TEST_CASE("layer grouping uses the gcd with remainder in the last group") {
    auto g = group_layers(6, 3);
    REQUIRE(g.size() == 3);
    CHECK(g[0] == std::pair<int, int>{2, 1});
    CHECK(g[2] == std::pair<int, int>{2, 1});

    auto same = group_layers(4, 4);
    CHECK(same.size() == 4);

    auto overridden = group_layers(7, 5, 2);
    REQUIRE(overridden.size() == 2);
    CHECK(overridden[0] == std::pair<int, int>{3, 2});
    CHECK(overridden[1] == std::pair<int, int>{4, 3});

    CHECK_THROWS_AS(group_layers(4, 2, 3), std::invalid_argument);
}

TEST_CASE("a foundation registers as a single whole-chain block") {
    Zoo zoo;
    fixtures::add_base(zoo);
    CHECK(zoo.block_count() == 1);
    const auto& m = zoo.model("base");
    REQUIRE(m.chain.size() == 1);
    const auto& b = zoo.block(m.chain[0]);
    CHECK(b.component_ids.size() == 4);
    CHECK(b.param_bytes == 2 * (1000 + 3000));
    CHECK(b.embed_dim_in == 4096);
    CHECK(b.embed_dim_out == 4096);
}

TEST_CASE("a half-divergent fine-tune splits both models into two blocks") {
    Zoo zoo;
    fixtures::add_base(zoo);
    fixtures::add_ft(zoo);
    CHECK(zoo.block_count() == 4);

    const auto& base = zoo.model("base");
    const auto& ft = zoo.model("ft");
    REQUIRE(base.chain.size() == 2);
    REQUIRE(ft.chain.size() == 2);

    // The similar halves are linked, the divergent halves are not.
    CHECK(zoo.edge_score(base.chain[0], ft.chain[0]) == doctest::Approx(1.0));
    CHECK(zoo.edge_score(base.chain[1], ft.chain[1]) == 0.0);
    CHECK(zoo.equivalence_edges().size() == 1);
    CHECK(zoo.warnings().empty());
}

TEST_CASE("adapter registration splits shared blocks and propagates across edges") {
    Zoo zoo = fixtures::family_zoo();
    CHECK(zoo.block_count() == 9);
    CHECK(zoo.warnings().empty());

    const auto& base = zoo.model("base");
    const auto& ft = zoo.model("ft");
    const auto& lora = zoo.model("lora");
    REQUIRE(base.chain.size() == 4);
    REQUIRE(ft.chain.size() == 3);
    REQUIRE(lora.chain.size() == 4);

    // The adapter's chain reuses the foundation's ffn blocks directly.
    CHECK(lora.chain[1] == base.chain[1]);
    CHECK(lora.chain[3] == base.chain[3]);
    CHECK(lora.chain[0] != base.chain[0]);

    // The fine-tune's similar half mirrors the foundation's split, keeping
    // the equivalence whole-block: two edges, forming an equivalent
    // chain-of-blocks over the first layer.
    auto edges = zoo.equivalence_edges();
    REQUIRE(edges.size() == 2);
    CHECK(zoo.edge_score(base.chain[0], ft.chain[0]) == doctest::Approx(1.0));
    CHECK(zoo.edge_score(base.chain[1], ft.chain[1]) == doctest::Approx(1.0));

    // Split blocks keep component order: base chain spells att,ffn,att,ffn.
    std::vector<ComponentKind> kinds;
    for (const auto& bid : base.chain)
        for (const auto& c : zoo.block_components(bid)) kinds.push_back(c.kind);
    CHECK(kinds == std::vector<ComponentKind>{ComponentKind::kAttention, ComponentKind::kFfn,
                                              ComponentKind::kAttention, ComponentKind::kFfn});

    // Shared blocks know every model they serve.
    const auto& shared_ffn = zoo.block(base.chain[1]);
    CHECK(shared_ffn.origin_models.count("base") == 1);
    CHECK(shared_ffn.origin_models.count("lora") == 1);
}

TEST_CASE("adapter re-registration is idempotent") {
    Zoo zoo = fixtures::family_zoo();
    const auto before = zoo.block_count();
    fixtures::add_lora(zoo);  // identical components: no-op
    CHECK(zoo.block_count() == before);
}

TEST_CASE("adapters attaching inside a component are rejected") {
    Zoo zoo;
    fixtures::add_base(zoo);
    ComponentDescriptor bad;
    bad.id = "x.inner";
    bad.kind = ComponentKind::kAdapter;
    bad.embed_dim = 4096;
    bad.model_id = "x";
    bad.layer = 0;
    bad.slot = 0;
    bad.attach = "inside";
    bad.contents = {{"x.inner.w", 4}};
    CHECK_THROWS_AS(zoo.add_model_pe("x", TuningKind::kAdapter, "base", {bad}),
                    std::invalid_argument);
}

TEST_CASE("shared fraction reflects content-level sharing") {
    Zoo zoo = fixtures::family_zoo();
    // lora: shares 2 ffn (3000 each) + 2 fused attention bases (1000 each);
    // own bytes are 2 deltas of 8.
    const double total = 2 * 3000 + 2 * 1000 + 2 * 8;
    const double shared = 2 * 3000 + 2 * 1000;
    CHECK(zoo.model("lora").shared_fraction == doctest::Approx(shared / total));
    CHECK(zoo.model("ft").shared_fraction == 0.0);
    CHECK(zoo.model("base").shared_fraction == 0.0);
}

TEST_CASE("candidate instances include equivalents, stitched when dims differ") {
    Zoo zoo = fixtures::family_zoo();
    const auto& base = zoo.model("base");
    auto cands = zoo.candidate_instances(base.chain[0]);
    REQUIRE(cands.size() == 2);
    CHECK(cands[0].block_id == base.chain[0]);
    CHECK(cands[0].stitch_id.empty());
    CHECK(cands[0].score == doctest::Approx(1.0));
    CHECK(cands[1].block_id == zoo.model("ft").chain[0]);
    CHECK(cands[1].stitch_id.empty());  // same dims: direct reuse

    // A block with no edges has only itself.
    CHECK(zoo.candidate_instances(zoo.model("ft").chain[2]).size() == 1);
}

TEST_CASE("cross-dim equivalents need a registered stitch") {
    Zoo zoo;
    zoo.add_foundation("wide", fixtures::transformer_components("wide", 2, 4096, 1000, 3000));
    std::vector<LayerSignature> wide_sigs = fixtures::flat_signatures("wide", 2, {0.6, 0.3, 0.1});
    std::vector<LayerSignature> slim_sigs = fixtures::flat_signatures("slim", 2, {0.6, 0.3, 0.1});
    zoo.add_model_ff("slim", "wide", fixtures::transformer_components("slim", 2, 2048, 500, 1500),
                     slim_sigs, wide_sigs);
    const auto& wide = zoo.model("wide");
    // Fully similar: one segment, no cuts, a single cross-model edge.
    CHECK(zoo.block_count() == 2);
    CHECK(zoo.equivalence_edges().size() == 1);

    // Without a stitch the 2048-dim equivalent is unreachable from wide.
    CHECK(zoo.candidate_instances(wide.chain[0]).size() == 1);

    StitchDescriptor st;
    st.id = "st.4096.2048";
    st.dim_in = 4096;
    st.dim_out = 2048;
    st.cost_class = "stitch:4096:2048";
    st.quality = 0.9634;
    zoo.add_stitch(st);
    auto cands = zoo.candidate_instances(wide.chain[0]);
    REQUIRE(cands.size() == 2);
    CHECK(cands[1].block_id == zoo.model("slim").chain[0]);
    CHECK(cands[1].stitch_id == "st.4096.2048");
}

TEST_CASE("fine-tunes without signatures register whole and unlinked") {
    Zoo zoo;
    fixtures::add_base(zoo);
    zoo.add_model_ff("blind", "base", fixtures::transformer_components("blind", 2, 4096, 1000, 3000),
                     {}, {});
    CHECK(zoo.block_count() == 2);
    CHECK(zoo.model("blind").chain.size() == 1);
    CHECK(zoo.equivalence_edges().empty());
    REQUIRE(zoo.warnings().size() == 1);
    CHECK(zoo.warnings()[0].find("blind") != std::string::npos);
}

TEST_CASE("depth-mismatched fine-tunes group layers by gcd") {
    Zoo zoo;
    zoo.add_foundation("deep", fixtures::transformer_components("deep", 4, 4096, 1000, 3000));
    // 4 vs 2 layers -> 2 groups of (2,1). First group similar, second not.
    std::vector<LayerSignature> deep_sigs = {{"deep", 0, {0.6, 0.3, 0.1}},
                                             {"deep", 1, {0.6, 0.3, 0.1}},
                                             {"deep", 2, {0.1, 0.3, 0.6}},
                                             {"deep", 3, {0.1, 0.3, 0.6}}};
    std::vector<LayerSignature> half_sigs = {{"half", 0, {0.6, 0.3, 0.1}},
                                             {"half", 1, {0.7, 0.2, 0.1}}};
    zoo.add_model_ff("half", "deep", fixtures::transformer_components("half", 2, 4096, 1000, 3000),
                     half_sigs, deep_sigs);
    const auto& deep = zoo.model("deep");
    const auto& half = zoo.model("half");
    REQUIRE(deep.chain.size() == 2);
    REQUIRE(half.chain.size() == 2);
    // Heterogeneous (2 layers vs 1) segment still gets an edge: the blocks
    // are whole on both sides.
    CHECK(zoo.edge_score(deep.chain[0], half.chain[0]) > 0.0);
    CHECK(zoo.edge_score(deep.chain[1], half.chain[1]) == 0.0);
}

TEST_CASE("splitting near a structurally different partner drops the edge") {
    Zoo zoo;
    zoo.add_foundation("deep", fixtures::transformer_components("deep", 4, 4096, 1000, 3000));
    std::vector<LayerSignature> deep_sigs = fixtures::flat_signatures("deep", 4, {0.6, 0.3, 0.1});
    std::vector<LayerSignature> half_sigs = fixtures::flat_signatures("half", 2, {0.6, 0.3, 0.1});
    zoo.add_model_ff("half", "deep", fixtures::transformer_components("half", 2, 4096, 1000, 3000),
                     half_sigs, deep_sigs);
    REQUIRE(zoo.equivalence_edges().size() == 1);

    // A LoRA on "deep" cuts the foundation mid-chain; the 8-component
    // foundation block cannot mirror its cut onto the 4-component partner.
    std::vector<ComponentDescriptor> comps;
    const auto& deep = zoo.model("deep");
    ComponentDescriptor att;
    att.id = "ad.att0";
    att.kind = ComponentKind::kAttention;
    att.embed_dim = 4096;
    att.model_id = "ad";
    att.layer = 0;
    att.slot = 0;
    att.attach = "fuse";
    att.contents = {{"deep.att0.w", 1000}, {"ad.att0.delta", 8}};
    comps.push_back(att);
    for (std::size_t i = 1; i < deep.component_ids.size(); ++i)
        comps.push_back(zoo.component(deep.component_ids[i]));
    zoo.add_model_pe("ad", TuningKind::kLora, "deep", comps);

    CHECK(zoo.equivalence_edges().empty());
    REQUIRE_FALSE(zoo.warnings().empty());
    CHECK(zoo.warnings()[0].find("structure differs") != std::string::npos);
}

TEST_CASE("redundancy report separates naive and deduplicated footprints") {
    Zoo zoo = fixtures::family_zoo();
    auto served = zoo.served_model_ids();
    CHECK(served == std::vector<std::string>{"ft", "lora"});

    // ft: 8000 own bytes. lora: 8016 bytes, 8000 of them the foundation's.
    auto r = zoo.redundancy_report(served);
    CHECK(r.naive_bytes == 8000 + 8016);
    CHECK(r.dedup_bytes == 8000 + 8000 + 16);
    CHECK(r.redundancy_fraction == doctest::Approx(0.0));  // no cross-model duplicates
    CHECK(r.duplicate_copy_fraction == doctest::Approx(0.0));

    // Two LoRAs on the same base: the base bytes are stored once.
    Zoo zoo2;
    fixtures::add_base(zoo2);
    fixtures::add_lora(zoo2);
    {
        std::vector<ComponentDescriptor> comps;
        const auto& base = zoo2.model("base");
        for (int l = 0; l < 2; ++l) {
            ComponentDescriptor att;
            att.id = "lora2.att" + std::to_string(l);
            att.kind = ComponentKind::kAttention;
            att.embed_dim = 4096;
            att.model_id = "lora2";
            att.layer = l;
            att.slot = 0;
            att.attach = "fuse";
            att.contents = {{"base.att" + std::to_string(l) + ".w", 1000},
                            {"lora2.att" + std::to_string(l) + ".delta", 8}};
            comps.push_back(att);
            comps.push_back(zoo2.component(base.component_ids[static_cast<std::size_t>(2 * l + 1)]));
        }
        zoo2.add_model_pe("lora2", TuningKind::kLora, "base", comps);
    }
    auto r2 = zoo2.redundancy_report(zoo2.served_model_ids());
    CHECK(r2.naive_bytes == 2 * 8016);
    CHECK(r2.dedup_bytes == 8000 + 16 + 16);
    CHECK(r2.redundancy_fraction ==
          doctest::Approx(1.0 - (8000.0 + 32.0) / 16032.0));
    // All base bytes appear in both models.
    CHECK(r2.duplicate_copy_fraction == doctest::Approx(16000.0 / 16032.0));
    // Round-robin between the two wastes the shared bytes every switch.
    CHECK(r2.switch_overhead_fraction == doctest::Approx(16000.0 / 16032.0));
}

TEST_CASE("block ids and edges enumerate deterministically") {
    Zoo zoo = fixtures::family_zoo();
    auto ids = zoo.block_ids();
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(ids.size() == 9);
    auto edges = zoo.equivalence_edges();
    for (const auto& e : edges) {
        CHECK(e.a < e.b);
        CHECK(e.score >= zoo.threshold());
    }
}

TEST_CASE("duplicate registrations and unknown lookups throw") {
    Zoo zoo;
    fixtures::add_base(zoo);
    CHECK_THROWS_AS(fixtures::add_base(zoo), std::invalid_argument);
    CHECK_THROWS_AS(zoo.model("nope"), std::invalid_argument);
    CHECK_THROWS_AS(zoo.block("nope"), std::invalid_argument);
    CHECK_THROWS_AS(zoo.add_model_ff("x", "nope", {}, {}, {}), std::invalid_argument);
}

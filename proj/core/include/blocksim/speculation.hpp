#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace blocksim {

// One step of a block chain under speculative execution analysis.
struct SpecStep {
    double true_us = 0.0;       // full execution duration
    double surrogate_us = 0.0;  // surrogate duration (ignored unless speculated)
    bool speculated = false;
    bool correct = true;  // whether the surrogate's output matches the truth
};

// Timing summary of a chain executed with per-step surrogates feeding
// downstream immediately while a single verification lane recomputes each
// speculated step truthfully in order.
struct SpecChainResult {
    double no_speculation_us = 0.0;      // serial truth: sum of true durations
    double draft_completion_us = 0.0;    // first correct final output (possibly unverified)
    double verified_completion_us = 0.0; // final output trusted: all inputs verified
    double draft_reduction_us = 0.0;     // no_speculation - draft_completion
    double verified_reduction_us = 0.0;  // no_speculation - verified_completion
};

// Replays the chain:
//  - correct availability c_i: a correct value for step i's output exists at
//    c_{i-1} + s_i when its surrogate is right, at the verification lane's
//    true recompute otherwise, and at c_{i-1} + T_i for unspeculated steps;
//  - the verification lane recomputes speculated steps serially, each one
//    waiting for the previous verification and for correct inputs;
//  - verified emission runs the final step on verified inputs (surrogate
//    accepted when correct), so a wrong final surrogate erases the entire
//    latency reduction.
SpecChainResult evaluate_chain(const std::vector<SpecStep>& steps);

// A scheduler-issued speculation assignment: run this chain step through its
// surrogate while the true execution verifies in the background.
struct SpeculationAssignment {
    std::size_t step_index = 0;
    std::string block_id;
    double speedup = 1.0;
};

}  // namespace blocksim

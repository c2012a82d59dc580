#include "blocksim/speculation.hpp"

#include <algorithm>
#include <stdexcept>

namespace blocksim {

SpecChainResult evaluate_chain(const std::vector<SpecStep>& steps) {
    if (steps.empty()) throw std::invalid_argument("speculation: empty chain");
    for (const auto& s : steps) {
        if (s.true_us < 0.0 || s.surrogate_us < 0.0)
            throw std::invalid_argument("speculation: negative duration");
        if (s.speculated && s.surrogate_us <= 0.0)
            throw std::invalid_argument("speculation: speculated step without surrogate");
    }

    SpecChainResult r;
    for (const auto& s : steps) r.no_speculation_us += s.true_us;

    double c = 0.0;       // when a correct input for the next step exists
    double v = 0.0;       // verification lane availability
    double c_prev = 0.0;  // c before the final step
    double v_prev = 0.0;  // v before the final step
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const SpecStep& s = steps[i];
        c_prev = c;
        v_prev = v;
        if (s.speculated) {
            const double verified_at = std::max(v, c) + s.true_us;
            c = s.correct ? c + s.surrogate_us : verified_at;
            v = verified_at;
        } else {
            c = c + s.true_us;  // true compute in the forward lane
        }
    }
    r.draft_completion_us = c;

    const SpecStep& last = steps.back();
    const double final_us = (last.speculated && last.correct) ? last.surrogate_us : last.true_us;
    r.verified_completion_us = std::max(v_prev, c_prev) + final_us;

    r.draft_reduction_us = r.no_speculation_us - r.draft_completion_us;
    r.verified_reduction_us = r.no_speculation_us - r.verified_completion_us;
    return r;
}

}  // namespace blocksim

#include "blocksim/engine.hpp"

namespace blocksim {

const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::kRequestArrival: return "request_arrival";
        case EventKind::kBatchStart: return "batch_start";
        case EventKind::kBatchFinish: return "batch_finish";
        case EventKind::kTransferComplete: return "transfer_complete";
        case EventKind::kMigrationStep: return "migration_step";
        case EventKind::kSpeculationVerify: return "speculation_verify";
        case EventKind::kScaleCheck: return "scale_check";
        case EventKind::kPlacementReview: return "placement_review";
        case EventKind::kMetricsTick: return "metrics_tick";
        case EventKind::kKvReview: return "kv_review";
        case EventKind::kLoadComplete: return "load_complete";
        case EventKind::kRetry: return "retry";
        case EventKind::kGeneric: return "generic";
    }
    return "unknown";
}

}  // namespace blocksim

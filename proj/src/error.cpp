#include "lissm/error.hpp"

namespace lissm {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::RankDeficiency: return "rank-deficiency";
    case ErrorKind::DegenerateCurve: return "degenerate-curve";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Data: return "data";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numerical: return "numerical";
    }
    return "unknown";
}

} // namespace lissm

#include "rclarc/log.hpp"
#include "rclarc/errors.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace rclarc {

namespace {
std::atomic<bool> g_warnings_enabled{true};
std::mutex g_log_mutex;
}  // namespace

void log_warning(std::string_view message) {
    if (!g_warnings_enabled.load(std::memory_order_relaxed)) return;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled); }

bool warnings_enabled() { return g_warnings_enabled.load(); }

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::NotSymmetric: return "NotSymmetric";
        case ErrorCode::SingularSystem: return "SingularSystem";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DegenerateConcept: return "DegenerateConcept";
        case ErrorCode::EmptyIntersection: return "EmptyIntersection";
        case ErrorCode::ConceptUnknown: return "ConceptUnknown";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::EmptyTestSet: return "EmptyTestSet";
        case ErrorCode::ZeroRelevance: return "ZeroRelevance";
        case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace rclarc

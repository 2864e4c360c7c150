#include "rclarc/metrics.hpp"
#include "rclarc/core_math.hpp"
#include "rclarc/errors.hpp"

#include <map>

namespace rclarc {

double accuracy_score(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
    require_same_dim(truth.size(), predicted.size(), "accuracy");
    if (truth.empty()) throw Error(ErrorCode::EmptyTestSet, "accuracy of an empty set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
    require_same_dim(truth.size(), predicted.size(), "macro_f1");
    if (truth.empty()) throw Error(ErrorCode::EmptyTestSet, "F1 of an empty set");
    struct Counts {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::size_t, Counts> per_label;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == predicted[i]) {
            ++per_label[truth[i]].tp;
        } else {
            ++per_label[truth[i]].fn;
            ++per_label[predicted[i]].fp;
        }
    }
    double sum = 0.0;
    for (const auto& [label, c] : per_label) {
        const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(c.tp) / denom : 0.0;
    }
    return sum / static_cast<double>(per_label.size());
}

}  // namespace rclarc

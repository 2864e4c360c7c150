#pragma once

#include <cstddef>
#include <span>

namespace rclarc {

// Sample-weighted accuracy. Throws EmptyTestSet on empty input.
double accuracy_score(std::span<const std::size_t> truth, std::span<const std::size_t> predicted);

// Macro-averaged F1 over every label that occurs in `truth` or `predicted`.
// A label that is never predicted (or never true) contributes F1 = 0.
double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted);

}  // namespace rclarc

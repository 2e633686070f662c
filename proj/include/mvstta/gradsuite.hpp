#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvstta::gradsuite {

struct CaseResult {
    std::string name;
    double err = 0;  // max relative error against central differences
};

// Randomized finite-difference checks covering every differentiable tape
// operation, the composites, and the two end-to-end loss compositions.
// per_op instances of each elementary check, two of each composition.
std::vector<CaseResult> run(std::uint64_t seed, int per_op = 4);

double max_error(const std::vector<CaseResult>& results);

}  // namespace mvstta::gradsuite

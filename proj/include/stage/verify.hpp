#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stage/data.hpp"
#include "stage/model.hpp"
#include "stage/rng.hpp"

namespace stage {

/// A randomized small model configuration plus one window of synthetic clips
/// for end-to-end gradient verification (dropout forced to keep = 1).
struct GradCheckCase {
  StageConfig config;
  std::vector<ClipRecord> clips;
};

GradCheckCase random_gradcheck_case(Rng& rng);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t n_params = 0;
  int n_cases = 0;
  std::string worst_case;
};

/// Analytic full-loss gradients against central finite differences
/// (step 1e-5) for one case.
GradCheckResult gradcheck_case(const GradCheckCase& cc, std::uint64_t init_seed);

/// Worst relative error over `n_cases` randomized cases.
GradCheckResult run_gradcheck(std::uint64_t seed, int n_cases);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace stage

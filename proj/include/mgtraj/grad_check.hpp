#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mgtraj/params.hpp"

namespace mgtraj::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  std::size_t n_coords_checked = 0;
};

// Central finite-difference check. `loss` must evaluate the objective at the
// current parameter values and, as a side effect, leave analytic gradients in
// each Param::grad (zeroing them first). Relative error per coordinate is
// |g_ad - g_fd| / max(1, |g_fd|).
//
// max_coords_per_param == 0 checks every coordinate; otherwise a seeded
// subsample of that many coordinates per parameter is used.
GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<Param*>& params,
                           double fd_step = 1e-5, std::size_t max_coords_per_param = 0,
                           std::uint64_t seed = 0);

}  // namespace mgtraj::nn

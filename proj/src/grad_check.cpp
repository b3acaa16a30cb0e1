#include "mgtraj/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mgtraj/common.hpp"
#include "mgtraj/rng.hpp"

namespace mgtraj::nn {

GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<Param*>& params,
                           double fd_step, std::size_t max_coords_per_param, std::uint64_t seed) {
  // One analytic pass; snapshot gradients before finite differencing mutates
  // anything.
  loss();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  Rng rng(seed ^ 0x517cc1b727220a95ULL);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> coords;
    if (max_coords_per_param == 0 || n <= max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      // sample without replacement
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        std::swap(all[i], all[i + rng.uniform_int(n - i)]);
      }
      coords.assign(all.begin(), all.begin() + static_cast<long>(max_coords_per_param));
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double saved = p->value[c];
      p->value[c] = saved + fd_step;
      const double up = loss();
      p->value[c] = saved - fd_step;
      const double dn = loss();
      p->value[c] = saved;
      const double g_fd = (up - dn) / (2.0 * fd_step);
      const double g_ad = analytic[pi][c];
      if (!std::isfinite(g_fd) || !std::isfinite(g_ad)) {
        throw NumericError("grad_check: non-finite gradient at parameter '" + p->name + "'");
      }
      const double rel = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
      ++report.n_coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_coord = c;
      }
    }
  }
  return report;
}

}  // namespace mgtraj::nn

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rkdl/networks.hpp"

namespace rkdl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central finite differences over every scalar in the given stores against
// precomputed analytic gradients (one Tensor per parameter, same order).
// loss_value() must evaluate the loss from the stores' current values.
// Relative error uses max(|fd|, |an|) with a floor so zero gradients stay zero.
template <class F>
GradCheckReport check_gradients(const std::vector<ParamStore*>& stores,
                                const std::vector<std::vector<Tensor>>& analytic, F&& loss_value,
                                double step = 1e-6, double denom_floor = 1e-12) {
  detail::require(stores.size() == analytic.size(), "check_gradients",
                  "store/gradient group count mismatch");
  GradCheckReport rep;
  for (std::size_t g = 0; g < stores.size(); ++g) {
    auto& params = stores[g]->params();
    detail::require(params.size() == analytic[g].size(), "check_gradients",
                    "parameter/gradient count mismatch in group " + std::to_string(g));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& th = params[p].value;
      const Tensor& an = analytic[g][p];
      detail::require(an.same_shape(th), "check_gradients",
                      "gradient shape mismatch for " + params[p].name);
      for (std::size_t k = 0; k < th.numel(); ++k) {
        const double saved = th[k];
        th[k] = saved + step;
        const double up = loss_value();
        th[k] = saved - step;
        const double dn = loss_value();
        th[k] = saved;
        const double fd = (up - dn) / (2.0 * step);
        const double abs_err = std::abs(fd - an[k]);
        const double rel = abs_err / std::max({denom_floor, std::abs(fd), std::abs(an[k])});
        ++rep.checked;
        rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_param = params[p].name;
          rep.worst_index = k;
        }
      }
    }
  }
  return rep;
}

}  // namespace rkdl

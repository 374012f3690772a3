#include "disperse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace disperse::ad {

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  if (!x.requires_grad())
    throw std::invalid_argument("grad_check: x must require grad");

  x.zero_grad();
  backward(f(x));
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  auto vals = x.value_mut();
  double worst = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double up = f(x).item();
    vals[i] = keep - h;
    const double down = f(x).item();
    vals[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace disperse::ad

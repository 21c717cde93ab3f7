#include "intake/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace intake {

double finite_difference_check(const std::function<double()>& loss, std::span<double> coords,
                               std::span<const double> analytic, double h, double floor) {
  if (coords.size() != analytic.size()) throw std::invalid_argument("finite_difference_check: size mismatch");
  if (h < 1e-7 || h > 1e-4) throw std::invalid_argument("finite_difference_check: h must be in [1e-7, 1e-4]");
  double worst = 0.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double saved = coords[i];
    coords[i] = saved + h;
    const double plus = loss();
    coords[i] = saved - h;
    const double minus = loss();
    coords[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace intake

#pragma once

#include <functional>
#include <span>

namespace intake {

/// Compares `analytic` with central differences of `loss` taken by perturbing
/// each entry of `coords` in place (restored afterwards). Returns
/// max_i |a_i - n_i| / max(|n_i|, floor).
double finite_difference_check(const std::function<double()>& loss, std::span<double> coords,
                               std::span<const double> analytic, double h = 1e-6, double floor = 1e-8);

}  // namespace intake

#pragma once

#include <cmath>
#include <functional>

// Central finite-difference check for a.e.-differentiable losses. The blend
// skips contributors below 1/255, so the loss has measure-zero jump points;
// a sample whose FD brackets disagree across step sizes sits on one and is
// skipped (callers cap the skip fraction).
struct FdCheck {
  double rel_tol = 1e-3;
  double abs_floor = 0.0;
  int checked = 0;
  int skipped = 0;
  int failed = 0;
  double worst = 0.0;

  // loss_at(h) evaluates the loss with the parameter perturbed by h.
  void check(double analytic, const std::function<double(double)>& loss_at,
             double h) {
    const double fd1 = (loss_at(h) - loss_at(-h)) / (2 * h);
    const double fd2 = (loss_at(h / 4) - loss_at(-h / 4)) / (h / 2);
    if (std::abs(fd1 - fd2) > 0.05 * std::max({std::abs(fd1), std::abs(fd2), 1.0})) {
      ++skipped;  // discontinuity inside the bracket
      return;
    }
    ++checked;
    const double err = std::abs(analytic - fd2);
    const double tol =
        rel_tol * std::max({std::abs(analytic), std::abs(fd2), 1.0}) + abs_floor;
    if (err > tol) ++failed;
    worst = std::max(worst, err / std::max({std::abs(analytic),
                                            std::abs(fd2), 1.0}));
  }

  double skip_fraction() const {
    const int total = checked + skipped;
    return total > 0 ? static_cast<double>(skipped) / total : 0.0;
  }
};

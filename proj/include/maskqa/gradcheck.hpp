#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskqa {

struct GradcheckOptions {
  double h = 1e-3;
  double tolerance = 1e-4;
  int random_shapes = 10;        // per primitive
  int samples_per_tensor = 24;   // end-to-end networks; primitives check every coordinate
  std::uint64_t seed = 7;
};

/// Worst case over every checked coordinate of one primitive or network.
struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t kinks_skipped = 0;  // perturbation crossed a PReLU kink even at h/100
  int shapes = 0;

  bool passed(double tolerance) const { return checked > 0 && max_rel_error <= tolerance; }
};

/// Relative error used throughout: |a - n| / max(|a|, |n|, 1e-3 * scale, 1e-8)
/// where scale is the largest analytic magnitude over the checked model.
double gradcheck_relative_error(double analytic, double numeric, double scale);

/// conv, transpose-conv, instance norm, PReLU, sigmoid, dense, soft Dice, KL,
/// a conv-norm-PReLU chain and a residual unit, each on random shapes.
std::vector<GradcheckResult> gradcheck_primitives(const GradcheckOptions& opt);

/// Desk U-Net (channels 8,16,32; strides 2,2) on an 8^3 input and the desk
/// VAE on a 16^3 input, soft Dice loss (plus KL) against a random target.
std::vector<GradcheckResult> gradcheck_networks(const GradcheckOptions& opt);

}  // namespace maskqa

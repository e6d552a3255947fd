#pragma once

#include <string>
#include <vector>

#include "svmixer/tensor.hpp"

namespace svmixer::eval {

struct TrialScore {
  std::string enroll_id;
  std::string test_id;
  double score = 0.0;
  bool target = false;
};

// dot(a, b) / (|a| |b|); DataError on a zero vector or a length mismatch.
double cosine_score(const Tensor& a, const Tensor& b);

// A trial is accepted when score >= threshold.
struct OperatingPoint {
  double threshold;
  double p_fa;
  double p_miss;
};

// One point per distinct score (ascending) plus +inf (reject everything).
std::vector<OperatingPoint> operating_points(const std::vector<TrialScore>& trials);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate on the convex hull of the ROC: where the hull crosses
// p_fa == p_miss, interpolated linearly between adjacent hull vertices.
EerResult eer(const std::vector<TrialScore>& trials);

// Normalized minimum detection cost.
double min_dcf(const std::vector<TrialScore>& trials, double p_target = 0.05, double c_miss = 1.0,
               double c_fa = 1.0);

}  // namespace svmixer::eval

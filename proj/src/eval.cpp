#include "svmixer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "svmixer/errors.hpp"

namespace svmixer::eval {

double cosine_score(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError("cosine_score: lengths differ (" + std::to_string(a.numel()) + " vs " +
                         std::to_string(b.numel()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine_score: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

void check_trials(const std::vector<TrialScore>& trials, const char* who) {
  std::size_t nt = 0;
  for (const auto& t : trials) {
    if (!std::isfinite(t.score)) throw DataError(std::string(who) + ": non-finite score");
    nt += t.target ? 1 : 0;
  }
  if (nt == 0 || nt == trials.size()) {
    throw DataError(std::string(who) + ": need at least one target and one impostor trial");
  }
}

}  // namespace

std::vector<OperatingPoint> operating_points(const std::vector<TrialScore>& trials) {
  check_trials(trials, "operating_points");
  std::vector<std::pair<double, bool>> s;
  s.reserve(trials.size());
  std::size_t n_tar = 0;
  for (const auto& t : trials) {
    s.emplace_back(t.score, t.target);
    n_tar += t.target ? 1 : 0;
  }
  const std::size_t n_imp = trials.size() - n_tar;
  std::sort(s.begin(), s.end());

  // Walking thresholds upward: everything below the threshold is rejected.
  std::vector<OperatingPoint> out;
  std::size_t tar_below = 0, imp_below = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const double thr = s[i].first;
    out.push_back({thr, double(n_imp - imp_below) / double(n_imp), double(tar_below) / double(n_tar)});
    while (i < s.size() && s[i].first == thr) {
      (s[i].second ? tar_below : imp_below) += 1;
      ++i;
    }
  }
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return out;
}

EerResult eer(const std::vector<TrialScore>& trials) {
  std::vector<OperatingPoint> pts = operating_points(trials);
  // Order by p_fa ascending (p_miss descending): reverse threshold order.
  std::reverse(pts.begin(), pts.end());

  // Lower convex hull, monotone chain.
  std::vector<OperatingPoint> hull;
  auto cross = [](const OperatingPoint& o, const OperatingPoint& a, const OperatingPoint& b) {
    return (a.p_fa - o.p_fa) * (b.p_miss - o.p_miss) - (a.p_miss - o.p_miss) * (b.p_fa - o.p_fa);
  };
  for (const auto& p : pts) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), p) <= 0.0) hull.pop_back();
    hull.push_back(p);
  }

  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    const double d0 = hull[i].p_miss - hull[i].p_fa;
    const double d1 = hull[i + 1].p_miss - hull[i + 1].p_fa;
    if (d0 >= 0.0 && d1 <= 0.0) {
      const double t = d0 == d1 ? 0.0 : d0 / (d0 - d1);
      const double e = hull[i].p_fa + t * (hull[i + 1].p_fa - hull[i].p_fa);
      return {e, t < 0.5 ? hull[i].threshold : hull[i + 1].threshold};
    }
  }
  // The hull always runs from (0, 1) to (1, 0), so a crossing exists.
  throw Error("eer: no crossing found");
}

double min_dcf(const std::vector<TrialScore>& trials, double p_target, double c_miss, double c_fa) {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ConfigError("min_dcf: p_target must lie in (0, 1)");
  const std::vector<OperatingPoint> pts = operating_points(trials);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    best = std::min(best, c_miss * p_target * p.p_miss + c_fa * (1.0 - p_target) * p.p_fa);
  }
  return best / std::min(c_miss * p_target, c_fa * (1.0 - p_target));
}

}  // namespace svmixer::eval

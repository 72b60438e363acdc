#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace ctxprof {

// Streaming count/sum/min/mean/variance over a sample multiset (Welford).
// Standard deviation is the population form, sqrt(m2 / count).
class MetricAggregate {
 public:
  MetricAggregate() = default;
  static MetricAggregate from_summary(std::uint64_t count, double sum, double min, double mean,
                                      double stddev);

  void add(double value) {
    ++count_;
    sum_ += value;
    if (count_ == 1 || value < min_) min_ = value;
    const double delta = value - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (value - mean_);
  }

  // Chan et al. pairwise combination.
  void merge(const MetricAggregate& other);

  std::uint64_t count() const noexcept { return count_; }
  double sum() const noexcept { return sum_; }
  double min() const noexcept { return count_ == 0 ? 0.0 : min_; }
  double mean() const noexcept { return mean_; }
  double m2() const noexcept { return m2_; }
  double variance() const noexcept { return count_ == 0 ? 0.0 : m2_ / static_cast<double>(count_); }
  double stddev() const noexcept { return std::sqrt(variance()); }
  bool empty() const noexcept { return count_ == 0; }

 private:
  std::uint64_t count_ = 0;
  double sum_ = 0.0;
  double min_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace ctxprof

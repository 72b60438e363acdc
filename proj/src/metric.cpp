#include "ctxprof/metric.hpp"

#include <algorithm>

namespace ctxprof {

MetricAggregate MetricAggregate::from_summary(std::uint64_t count, double sum, double min, double mean,
                                              double stddev) {
  MetricAggregate agg;
  agg.count_ = count;
  agg.sum_ = sum;
  agg.min_ = min;
  agg.mean_ = mean;
  agg.m2_ = stddev * stddev * static_cast<double>(count);
  return agg;
}

void MetricAggregate::merge(const MetricAggregate& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double n_a = static_cast<double>(count_);
  const double n_b = static_cast<double>(other.count_);
  const double n = n_a + n_b;
  const double delta = other.mean_ - mean_;
  mean_ += delta * n_b / n;
  m2_ += other.m2_ + delta * delta * n_a * n_b / n;
  count_ += other.count_;
  sum_ += other.sum_;
  min_ = std::min(min_, other.min_);
}

}  // namespace ctxprof

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctxprof/cct.hpp"
#include "ctxprof/profiler.hpp"
#include "ctxprof/synth.hpp"

namespace ctxprof::test {

inline std::unique_ptr<Profiler> profile(std::span<const TraceEvent> events, ProfilerOptions options = {}) {
  auto profiler = std::make_unique<Profiler>(options);
  profiler->ingest(events);
  profiler->finish();
  return profiler;
}

inline std::unique_ptr<Profiler> profile(Scenario scenario, std::uint64_t seed = 1, std::uint32_t scale = 1,
                                         ProfilerOptions options = {}) {
  const auto events = generate_synthetic_trace(scenario, seed, scale);
  return profile(events, options);
}

inline std::vector<NodeId> nodes_where(const CallingContextTree& tree,
                                       const std::function<bool(const CctNode&)>& predicate) {
  std::vector<NodeId> out;
  for (NodeId n = 0; n < tree.size(); ++n) {
    if (predicate(tree.node(n))) out.push_back(n);
  }
  return out;
}

inline std::vector<NodeId> nodes_named(const CallingContextTree& tree, std::string_view name) {
  return nodes_where(tree, [&](const CctNode& n) { return n.frame.name == name; });
}

// A random tree plus the raw samples that were attributed to it, so tests can
// recompute every aggregate independently.
struct RandomTree {
  CallingContextTree tree;
  std::vector<std::pair<NodeId, std::int64_t>> samples;  // (node, value) in attribution order
};

inline Frame random_frame(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<int> small(0, 5);
  const std::string id = std::to_string(small(rng));
  switch (kind(rng)) {
    case 0:
      return Frame::python("f" + id, "m" + id + ".py", static_cast<std::uint32_t>(1 + small(rng)));
    case 1:
      return Frame::op("aten::op" + id);
    case 2:
      return Frame::native("sym" + id, "lib" + id + ".so", 0x1000 + static_cast<std::uint64_t>(small(rng)));
    default:
      return Frame::kernel("k" + id, "lib.cubin", 0x10 * static_cast<std::uint64_t>(1 + small(rng)));
  }
}

inline RandomTree random_tree(std::uint64_t seed, std::string_view metric = "gpu_time_ns") {
  std::mt19937_64 rng(seed);
  RandomTree out;
  std::uniform_int_distribution<int> paths(1, 60);
  std::uniform_int_distribution<int> depth(1, 7);
  std::uniform_int_distribution<std::int64_t> value(0, 5'000'000);
  const int n_paths = paths(rng);
  for (int p = 0; p < n_paths; ++p) {
    CallPath path;
    const int d = depth(rng);
    for (int i = 0; i < d; ++i) path.push_back(random_frame(rng));
    const NodeId leaf = out.tree.insert_path(path);
    // Samples land on the leaf or on an interior node of the path.
    const auto nodes = out.tree.path_nodes(leaf);
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    const int n_samples = 1 + static_cast<int>(rng() % 4);
    for (int s = 0; s < n_samples; ++s) {
      const NodeId target = nodes[pick(rng)];
      const std::int64_t v = value(rng);
      out.tree.attribute_sample(target, metric, static_cast<double>(v));
      out.samples.emplace_back(target, v);
    }
  }
  return out;
}

// Two-pass statistics over raw values, independent of MetricAggregate.
struct NaiveStats {
  std::size_t count = 0;
  double sum = 0.0;
  double min = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
};

inline NaiveStats naive_stats(const std::vector<double>& values) {
  NaiveStats s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.sum += v;
  s.min = *std::min_element(values.begin(), values.end());
  s.mean = s.sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

// Every value attributed inside each node's subtree, found by walking parents.
inline std::map<NodeId, std::vector<double>> naive_inclusive(const RandomTree& t) {
  std::map<NodeId, std::vector<double>> out;
  for (const auto& [node, value] : t.samples) {
    for (NodeId n = node;; n = t.tree.node(n).parent) {
      out[n].push_back(static_cast<double>(value));
      if (n == kRootNode) break;
    }
  }
  return out;
}

inline bool close_relative(double actual, double expected, double tolerance) {
  const double scale = std::max({std::abs(actual), std::abs(expected), 1.0});
  return std::abs(actual - expected) <= tolerance * scale;
}

}  // namespace ctxprof::test

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "ctxprof/cct.hpp"
#include "ctxprof/metric.hpp"
#include "support.hpp"

using namespace ctxprof;

namespace {

const Frame kA = Frame::python("main", "main.py", 1);
const Frame kB = Frame::op("aten::mm");
const Frame kC = Frame::op("aten::add");
const Frame kK = Frame::kernel("gemm", "lib.cubin", 0x40);

}  // namespace

TEST_CASE("aggregate statistics") {
  MetricAggregate a;
  for (double v : {2.0, 4.0, 6.0}) a.add(v);
  CHECK(a.count() == 3);
  CHECK(a.sum() == 12.0);
  CHECK(a.min() == 2.0);
  CHECK(a.mean() == doctest::Approx(4.0));
  CHECK(a.stddev() == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));

  MetricAggregate single;
  single.add(5.0);
  CHECK(single.stddev() == 0.0);
  CHECK(MetricAggregate{}.min() == 0.0);
}

TEST_CASE("merging aggregates matches sequential accumulation") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> value(0.0, 1e6);
  for (int round = 0; round < 50; ++round) {
    MetricAggregate left, right, all;
    const int n = 1 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      const double v = value(rng);
      (i % 3 == 0 ? left : right).add(v);
      all.add(v);
    }
    left.merge(right);
    CHECK(left.count() == all.count());
    CHECK(test::close_relative(left.sum(), all.sum(), 1e-12));
    CHECK(left.min() == all.min());
    CHECK(test::close_relative(left.mean(), all.mean(), 1e-12));
    CHECK(test::close_relative(left.stddev(), all.stddev(), 1e-9));
  }
  const auto restored = MetricAggregate::from_summary(3, 12.0, 2.0, 4.0, std::sqrt(8.0 / 3.0));
  CHECK(restored.m2() == doctest::Approx(8.0));
}

TEST_CASE("non-finite samples are rejected") {
  CallingContextTree tree;
  const NodeId leaf = tree.insert_path(CallPath{kA});
  CHECK_THROWS_AS(tree.attribute_sample(leaf, "gpu_time_ns", std::nan("")), NonFiniteValue);
  CHECK_THROWS_AS(tree.attribute_sample(leaf, "gpu_time_ns", std::numeric_limits<double>::infinity()),
                  NonFiniteValue);
  CHECK(tree.inclusive(leaf, "gpu_time_ns") == nullptr);
}

TEST_CASE("insert_path collapses shared prefixes") {
  CallingContextTree tree;
  const NodeId leaf = tree.insert_path(CallPath{kA, kB, kK});
  CHECK(tree.size() == 4);  // root plus three frames
  CHECK(tree.node(leaf).depth == 3);
  CHECK(tree.insert_path(CallPath{kA, kB, kK}) == leaf);
  CHECK(tree.size() == 4);

  CallingContextTree branching;
  branching.insert_path(CallPath{kA, kB});
  branching.insert_path(CallPath{kA, kC});
  const auto a = branching.find_child(kRootNode, frame_identity_key(kA));
  REQUIRE(a.has_value());
  CHECK(branching.node(*a).children.size() == 2);
  CHECK_THROWS_AS(branching.insert_path(CallPath{}), EmptyPath);
}

TEST_CASE("node count equals distinct key prefixes") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = test::random_tree(seed);
    std::set<std::vector<IdentityKey>> prefixes;
    for (NodeId n = 1; n < t.tree.size(); ++n) {
      const auto keys = t.tree.key_path(n);
      for (std::size_t len = 1; len <= keys.size(); ++len) prefixes.emplace(keys.begin(), keys.begin() + len);
      CHECK(t.tree.resolve(keys) == n);
    }
    CHECK(prefixes.size() == t.tree.size() - 1);
  }
}

TEST_CASE("samples propagate to every ancestor") {
  CallingContextTree tree;
  const NodeId leaf = tree.insert_path(CallPath{kA, kB, kK});
  tree.attribute_sample(leaf, "gpu_time_ns", 10);
  for (NodeId n : tree.path_nodes(leaf)) {
    CHECK(tree.inclusive(n, "gpu_time_ns")->sum() == 10);
    CHECK(tree.inclusive(n, "gpu_time_ns")->count() == 1);
  }

  CallingContextTree two;
  const NodeId x = two.insert_path(CallPath{kA, kB});
  const NodeId y = two.insert_path(CallPath{kA, kC});
  two.attribute_sample(x, "gpu_time_ns", 3);
  two.attribute_sample(y, "gpu_time_ns", 7);
  const NodeId parent = two.node(x).parent;
  CHECK(two.inclusive(parent, "gpu_time_ns")->sum() == 10);
  CHECK(two.inclusive(parent, "gpu_time_ns")->count() == 2);
  CHECK(two.inclusive(parent, "gpu_time_ns")->min() == 3);
  CHECK(two.exclusive_metric(parent, "gpu_time_ns") == 0);
  CHECK(two.exclusive_metric(x, "gpu_time_ns") == two.inclusive_sum(x, "gpu_time_ns"));
}

TEST_CASE("aggregates match a naive recompute on random trees") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto t = test::random_tree(seed);
    const auto expected = test::naive_inclusive(t);
    std::int64_t total = 0;
    for (const auto& [node, v] : t.samples) total += v;
    CHECK(t.tree.inclusive_sum(kRootNode, "gpu_time_ns") == static_cast<double>(total));

    double exclusive_total = 0;
    for (NodeId n = 0; n < t.tree.size(); ++n) {
      exclusive_total += t.tree.exclusive_metric(n, "gpu_time_ns");
      const auto it = expected.find(n);
      const MetricAggregate* agg = t.tree.inclusive(n, "gpu_time_ns");
      if (it == expected.end()) {
        CHECK((agg == nullptr || agg->count() == 0));
        continue;
      }
      REQUIRE(agg != nullptr);
      const auto naive = test::naive_stats(it->second);
      CHECK(agg->count() == naive.count);
      CHECK(test::close_relative(agg->sum(), naive.sum, 1e-9));
      CHECK(test::close_relative(agg->min(), naive.min, 1e-9));
      CHECK(test::close_relative(agg->mean(), naive.mean, 1e-9));
      CHECK(test::close_relative(agg->stddev(), naive.stddev, 1e-9));

      double children = 0;
      for (NodeId c : t.tree.node(n).children) children += t.tree.inclusive_sum(c, "gpu_time_ns");
      CHECK(agg->sum() == t.tree.direct_sum(n, "gpu_time_ns") + children);
    }
    CHECK(exclusive_total == static_cast<double>(total));
  }
}

TEST_CASE("bottom-up view groups a frame across contexts") {
  CallingContextTree tree;
  const NodeId k1 = tree.insert_path(CallPath{kA, kB, kK});
  const NodeId k2 = tree.insert_path(CallPath{kA, kC, kK});
  tree.attribute_sample(k1, "gpu_time_ns", 20.5e9);
  tree.attribute_sample(k2, "gpu_time_ns", 10.0e9);
  const auto view = tree.bottom_up_view("gpu_time_ns");
  REQUIRE_FALSE(view.empty());
  CHECK(view.front().frame == kK);
  CHECK(view.front().self.sum() == doctest::Approx(30.5e9));
  CHECK(view.front().contributing == std::vector<NodeId>{k1, k2});
  CHECK(view.size() == 1);
  CHECK(CallingContextTree{}.bottom_up_view("gpu_time_ns").empty());
}

TEST_CASE("bottom-up view conserves direct mass") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto t = test::random_tree(seed);
    double grouped = 0;
    std::set<IdentityKey> keys;
    for (const auto& entry : t.tree.bottom_up_view("gpu_time_ns")) {
      grouped += entry.self.sum();
      CHECK(keys.insert(entry.key).second);
    }
    CHECK(grouped == t.tree.inclusive_sum(kRootNode, "gpu_time_ns"));
  }
}

TEST_CASE("tree navigation") {
  CallingContextTree tree;
  const NodeId leaf = tree.insert_path(CallPath{kA, kB, kK});
  const auto path = tree.path_nodes(leaf);
  REQUIRE(path.size() == 3);
  CHECK(tree.ancestor_at_depth(leaf, 1) == path[0]);
  CHECK(tree.ancestor_at_depth(leaf, 3) == leaf);
  CHECK(tree.is_ancestor(path[0], leaf));
  CHECK_FALSE(tree.is_ancestor(leaf, path[0]));
  CHECK(tree.frame_path(leaf) == CallPath{kA, kB, kK});
}

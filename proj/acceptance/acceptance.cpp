// Acceptance harness: one PASS/FAIL line per criterion; exits nonzero on any
// failure.
#include <fcntl.h>
#include <spawn.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fmt/core.h>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "../tests/fuzz_states.hpp"
#include "../tests/support.hpp"
#include "ctxprof/analyzer.hpp"
#include "ctxprof/export.hpp"
#include <spdlog/spdlog.h>

extern char** environ;

using namespace ctxprof;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kFuzzStates = 1000;
constexpr double kFuzzSeconds = 10.0;
constexpr int kRandomTrees = 100;
constexpr double kAggregateRelTol = 1e-9;
constexpr double kDlrmHotspot = 0.396;
constexpr double kDlrmHotspotTol = 0.005;
constexpr double kDlrmRatio = 49.9;
constexpr double kDlrmRatioTol = 1.0;
constexpr double kLossShare = 0.239;
constexpr double kLossShareTol = 0.005;
constexpr double kCpuShare = 0.69;
constexpr double kCpuShareTol = 0.01;
constexpr double kUnetGpuNs = 1.3e9;
constexpr double kUnetGpuRelTol = 0.01;
constexpr std::uint32_t kThroughputScale = 1000;  // about 1,000,000 events
constexpr double kThroughputSeconds = 60.0;
constexpr long kThroughputMaxRssKb = 1024L * 1024L;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const Issue* find_issue(const IssueReport& report, std::string_view rule, const CallingContextTree& tree,
                        std::string_view frame_name) {
  for (const auto& issue : report.issues) {
    if (issue.rule_id == rule && tree.node(issue.node).frame.name == frame_name) return &issue;
  }
  return nullptr;
}

Outcome cache_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(17);
  int mismatches = 0;
  for (int i = 0; i < kFuzzStates; ++i) {
    const auto s = test::fuzz_replay_state(rng);
    PathCache cache;
    cache.open(s.python, s.shadow.front(), s.enter_native, s.module_map);
    if (cached_callpath(cache, CacheMode::Native, s.native, s.python, s.shadow, s.module_map, s.kernel, s.mask) !=
        integrate(s.native, s.python, s.shadow, s.module_map, s.kernel, s.mask)) {
      ++mismatches;
    }
    PathCache python_cache;
    python_cache.open(s.python, s.shadow.front(), std::nullopt, s.module_map);
    const CallPath gpu_only = test::gpu_api_frames(s.native);
    if (cached_callpath(python_cache, CacheMode::NoNative, gpu_only, s.python, s.shadow, s.module_map, s.kernel,
                        s.mask) != integrate(gpu_only, s.python, s.shadow, s.module_map, s.kernel,
                                             s.mask.without_native())) {
      ++mismatches;
    }
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && elapsed < kFuzzSeconds,
          fmt::format("{} states x 2 modes, {} mismatches, {:.2f} s (limit {} s)", kFuzzStates, mismatches, elapsed,
                      kFuzzSeconds)};
}

Outcome aggregation_oracle() {
  int stat_failures = 0;
  int conservation_failures = 0;
  for (int seed = 0; seed < kRandomTrees; ++seed) {
    const auto t = test::random_tree(static_cast<std::uint64_t>(seed));
    const auto expected = test::naive_inclusive(t);
    for (NodeId n = 0; n < t.tree.size(); ++n) {
      const MetricAggregate* agg = t.tree.inclusive(n, "gpu_time_ns");
      const auto it = expected.find(n);
      if (it == expected.end()) {
        if (agg != nullptr && agg->count() != 0) ++stat_failures;
        continue;
      }
      const auto naive = test::naive_stats(it->second);
      if (agg == nullptr || agg->count() != naive.count ||
          !test::close_relative(agg->sum(), naive.sum, kAggregateRelTol) ||
          !test::close_relative(agg->min(), naive.min, kAggregateRelTol) ||
          !test::close_relative(agg->mean(), naive.mean, kAggregateRelTol) ||
          !test::close_relative(agg->stddev(), naive.stddev, kAggregateRelTol)) {
        ++stat_failures;
      }
      double children = 0;
      for (NodeId c : t.tree.node(n).children) children += t.tree.inclusive_sum(c, "gpu_time_ns");
      if (t.tree.inclusive_sum(n, "gpu_time_ns") != t.tree.direct_sum(n, "gpu_time_ns") + children) {
        ++conservation_failures;
      }
    }
  }
  return {stat_failures == 0 && conservation_failures == 0,
          fmt::format("{} trees, {} statistic mismatches (rel tol {:g}), {} conservation violations", kRandomTrees,
                      stat_failures, kAggregateRelTol, conservation_failures)};
}

Outcome dlrm_index() {
  auto p = test::profile(Scenario::DlrmIndex);
  const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
  const Issue* hot = find_issue(report, "hotspot", p->tree(), fixture::kDlrmHotKernel);
  const Issue* bwd = find_issue(report, "backward-abnormality", p->tree(), fixture::kDlrmIndexOp);
  const double fraction = hot ? hot->values.at("fraction") : NAN;
  const double ratio = bwd ? bwd->values.at("ratio") : NAN;
  const bool pass = hot && bwd && std::abs(fraction - kDlrmHotspot) <= kDlrmHotspotTol &&
                    std::abs(ratio - kDlrmRatio) <= kDlrmRatioTol;
  return {pass, fmt::format("hotspot fraction {:.4f} (want {}±{}), backward ratio {:.3f} (want {}±{})", fraction,
                            kDlrmHotspot, kDlrmHotspotTol, ratio, kDlrmRatio, kDlrmRatioTol)};
}

Outcome transformer_loss() {
  auto p = test::profile(Scenario::TransformerLoss);
  const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
  const auto& tree = p->tree();
  const auto loss_nodes = test::nodes_named(tree, fixture::kTransformerLossFrame);
  double loss = 0;
  for (NodeId n : loss_nodes) loss += tree.inclusive_sum(n, "gpu_time_ns");
  const double share = loss / tree.inclusive_sum(kRootNode, "gpu_time_ns");
  const Issue* fusion = find_issue(report, "small-kernels", tree, fixture::kTransformerLossFrame);
  return {loss_nodes.size() == 1 && fusion && std::abs(share - kLossShare) <= kLossShareTol,
          fmt::format("loss share {:.4f} (want {}±{}), kernel-fusion flagged: {}", share, kLossShare,
                      kLossShareTol, fusion != nullptr)};
}

Outcome unet_cpu() {
  auto p = test::profile(Scenario::UnetCpu);
  const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
  const auto& tree = p->tree();
  const Issue* issue = find_issue(report, "cpu-latency", tree, fixture::kUnetDataFrame);
  const double share = issue ? tree.inclusive_sum(issue->node, "cpu_time_ns") / tree.inclusive_sum(kRootNode, "cpu_time_ns") : NAN;
  const double gpu = issue ? tree.inclusive_sum(issue->node, "gpu_time_ns") : NAN;
  const bool pass = issue && std::abs(share - kCpuShare) <= kCpuShareTol &&
                    std::abs(gpu - kUnetGpuNs) <= kUnetGpuRelTol * kUnetGpuNs;
  return {pass, fmt::format("data_selection cpu share {:.4f} (want {}±{}), gpu {:.3f} s (want {} s ±{}%)", share,
                            kCpuShare, kCpuShareTol, gpu / 1e9, kUnetGpuNs / 1e9, kUnetGpuRelTol * 100)};
}

Outcome folded_conservation() {
  const std::regex line_grammar(R"(^[^;\n]+(;[^;\n]+)* -?[0-9]+$)");
  int checked = 0;
  int failures = 0;
  for (const auto scenario : {Scenario::DlrmIndex, Scenario::UnetLayout, Scenario::TransformerLoss,
                              Scenario::UnetCpu, Scenario::StallDemo}) {
    const auto p = test::profile(scenario);
    for (const auto& metric : p->tree().metric_names()) {
      const std::string text = export_folded(p->tree(), metric);
      std::istringstream in(text);
      std::string line;
      double total = 0;
      bool grammar = text.empty() || text.back() == '\n';
      while (std::getline(in, line)) {
        grammar = grammar && std::regex_match(line, line_grammar);
        total += std::stod(line.substr(line.rfind(' ') + 1));
      }
      ++checked;
      if (!grammar || total != p->tree().inclusive_sum(kRootNode, metric)) ++failures;
    }
  }
  return {failures == 0, fmt::format("{} fixture metrics, {} failing", checked, failures)};
}

Outcome backward_association() {
  const auto p = test::profile(Scenario::DlrmIndex);
  const auto& tree = p->tree();
  std::map<NodeId, NodeId> forward_of;
  for (const auto& link : p->metadata().backward_links) forward_of[link.backward_root] = link.forward_op;

  auto python_frames = [&](NodeId n) {
    CallPath out;
    for (const Frame& f : tree.frame_path(n)) {
      if (f.kind == FrameKind::Python) out.push_back(f);
    }
    return out;
  };
  std::size_t checked = 0;
  std::size_t failures = 0;
  for (NodeId n = 1; n < tree.size(); ++n) {
    NodeId root = n;
    while (root != kRootNode && !forward_of.contains(root)) root = tree.node(root).parent;
    if (root == kRootNode) continue;
    const NodeId forward = forward_of.at(root);
    const CallPath forward_path = tree.frame_path(forward);
    const CallPath path = tree.frame_path(n);
    ++checked;
    const bool prefix = path.size() > forward_path.size() &&
                        std::equal(forward_path.begin(), forward_path.end(), path.begin());
    if (!prefix || python_frames(n) != python_frames(forward)) ++failures;
  }
  const bool pass = !forward_of.empty() && checked > 0 && failures == 0 && p->diagnostics().unknown_sequence_ids == 0;
  return {pass, fmt::format("{} backward roots, {} backward nodes checked, {} mismatches, {} unknown sequence ids",
                            forward_of.size(), checked, failures, p->diagnostics().unknown_sequence_ids)};
}

struct ChildResult {
  int exit_code = -1;
  double seconds = 0;
  long max_rss_kb = 0;
};

ChildResult run_child(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  const auto start = Clock::now();
  pid_t pid = 0;
  ChildResult out;
  if (posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ) == 0) {
    int status = 0;
    rusage usage{};
    if (wait4(pid, &status, 0, &usage) == pid && WIFEXITED(status)) out.exit_code = WEXITSTATUS(status);
    out.max_rss_kb = usage.ru_maxrss;
  }
  out.seconds = seconds_since(start);
  posix_spawn_file_actions_destroy(&actions);
  return out;
}

Outcome throughput() {
  const auto dir = std::filesystem::temp_directory_path() / fmt::format("ctxprof_accept_{}", ::getpid());
  std::filesystem::create_directories(dir);
  const std::string trace = (dir / "random_tree.jsonl").string();
  const ChildResult gen = run_child({CTXPROF_CLI, "gen", "--scenario", "random-tree", "--seed", "1", "--scale",
                                     std::to_string(kThroughputScale), "-o", trace});
  std::size_t events = 0;
  {
    std::ifstream in(trace);
    std::string line;
    while (std::getline(in, line)) ++events;
    if (events > 0) --events;  // header
  }
  const ChildResult analyze = run_child({CTXPROF_CLI, "analyze", trace});
  std::filesystem::remove_all(dir);
  const bool pass = gen.exit_code == 0 && analyze.exit_code == 0 && events >= 1'000'000 &&
                    analyze.seconds < kThroughputSeconds && analyze.max_rss_kb < kThroughputMaxRssKb;
  return {pass, fmt::format("{} events, analyze {:.1f} s (limit {} s), peak {} MiB (limit {} MiB)", events,
                            analyze.seconds, kThroughputSeconds, analyze.max_rss_kb / 1024,
                            kThroughputMaxRssKb / 1024)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::off);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"cache-equivalence", cache_equivalence},
      {"aggregation-oracle", aggregation_oracle},
      {"dlrm-index", dlrm_index},
      {"transformer-loss", transformer_loss},
      {"unet-cpu", unet_cpu},
      {"folded-conservation", folded_conservation},
      {"backward-association", backward_association},
      {"throughput", throughput},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failed += outcome.pass ? 0 : 1;
    fmt::print("{} {}: {}\n", outcome.pass ? "PASS" : "FAIL", name, outcome.detail);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}

#include "ctxprof/analyzer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <deque>
#include <future>
#include <set>

namespace ctxprof {

namespace {

constexpr double kCpuFloorNs = 1'000'000.0;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

Issue make_issue(const CallingContextTree& tree, std::string rule, Severity severity, std::string message,
                 NodeId node) {
  Issue issue;
  issue.rule_id = std::move(rule);
  issue.severity = severity;
  issue.message = std::move(message);
  issue.node = node;
  issue.node_path = tree.key_path(node);
  return issue;
}

// Top-down walk below the root; visit returns true to stop descending.
template <typename Visit>
void breadth_first(const CallingContextTree& tree, Visit&& visit) {
  std::deque<NodeId> queue(tree.node(kRootNode).children.begin(), tree.node(kRootNode).children.end());
  while (!queue.empty()) {
    NodeId n = queue.front();
    queue.pop_front();
    if (visit(n)) continue;
    const auto& children = tree.node(n).children;
    queue.insert(queue.end(), children.begin(), children.end());
  }
}

std::vector<NodeId> hotspot_kernels(const AnalysisContext& ctx, double* total_out) {
  std::vector<NodeId> out;
  const double total = ctx.tree.inclusive_sum(kRootNode, kGpuTimeMetric);
  if (total_out != nullptr) *total_out = total;
  if (total <= 0.0) return out;
  for (NodeId n = 1; n < ctx.tree.size(); ++n) {
    if (ctx.tree.node(n).frame.kind != FrameKind::Kernel) continue;
    if (ctx.tree.inclusive_sum(n, kGpuTimeMetric) / total > ctx.config.hotspot_threshold) out.push_back(n);
  }
  return out;
}

}  // namespace

void AnalyzerConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  auto fraction = [](double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must be in (0, 1]");
  };
  fraction(hotspot_threshold, "hotspot_threshold");
  fraction(stall_threshold, "stall_threshold");
  positive(gpu_threshold_ns, "gpu_threshold_ns");
  positive(cpu_threshold, "cpu_threshold");
  positive(bwd_fwd_ratio, "bwd_fwd_ratio");
  positive(fwd_epsilon_ns, "fwd_epsilon_ns");
  if (topk < 1) throw std::invalid_argument("topk must be at least 1");
}

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::Info:
      return "info";
    case Severity::Warning:
      return "warning";
    case Severity::Critical:
      return "critical";
  }
  return "unknown";
}

void classify_semantics(CallingContextTree& tree, const TraceMetadata& metadata,
                        const AnalyzerConfig& config) {
  for (NodeId n = 0; n < tree.size(); ++n) tree.node(n).semantic_tags = 0;

  std::set<NodeId> backward_roots;
  for (const auto& link : metadata.backward_links) {
    if (tree.node(link.forward_op).frame.kind == FrameKind::FrameworkOp) {
      tree.node(link.forward_op).add_tag(SemanticTag::Forward);
    }
    backward_roots.insert(link.backward_root);
  }
  for (NodeId root : backward_roots) {
    tree.node(root).add_tag(SemanticTag::Backward);
    std::vector<NodeId> stack(tree.node(root).children.begin(), tree.node(root).children.end());
    while (!stack.empty()) {
      NodeId n = stack.back();
      stack.pop_back();
      if (tree.node(n).frame.kind == FrameKind::FrameworkOp) tree.node(n).add_tag(SemanticTag::Backward);
      stack.insert(stack.end(), tree.node(n).children.begin(), tree.node(n).children.end());
    }
  }

  std::vector<std::string> patterns;
  for (const auto& p : config.loss_name_patterns) patterns.push_back(lower(p));
  for (NodeId n = 1; n < tree.size(); ++n) {
    const Frame& f = tree.node(n).frame;
    if (f.kind != FrameKind::Python || f.name.empty()) continue;
    const std::string name = lower(f.name);
    for (const auto& p : patterns) {
      if (!p.empty() && name.find(p) != std::string::npos) {
        tree.node(n).add_tag(SemanticTag::Loss);
        break;
      }
    }
  }
  for (NodeId n : metadata.memcpy_nodes) tree.node(n).add_tag(SemanticTag::Memcpy);
}

std::vector<Issue> analyze_hotspots(const AnalysisContext& ctx) {
  std::vector<Issue> issues;
  double total = 0.0;
  std::vector<NodeId> hot = hotspot_kernels(ctx, &total);
  if (total <= 0.0) {
    ctx.diagnostics.emplace_back("hotspot: NoGpuTime (no gpu_time_ns attributed)");
    return issues;
  }
  for (NodeId n : hot) {
    const double time = ctx.tree.inclusive_sum(n, kGpuTimeMetric);
    const double fraction = time / total;
    Issue issue = make_issue(ctx.tree, "hotspot", Severity::Warning,
                             fmt::format("GPU hotspot: {} takes {:.1f}% of GPU kernel time",
                                         frame_display_name(ctx.tree.node(n).frame), fraction * 100.0),
                             n);
    issue.values = {{"fraction", fraction}, {"gpu_time_ns", time}, {"total_gpu_time_ns", total}};
    issues.push_back(std::move(issue));
  }
  return issues;
}

std::vector<Issue> analyze_kernel_fusion(const AnalysisContext& ctx) {
  std::vector<Issue> issues;
  breadth_first(ctx.tree, [&](NodeId n) {
    const CctNode& node = ctx.tree.node(n);
    if (node.frame.kind == FrameKind::Kernel || node.frame.kind == FrameKind::Instruction) return true;
    const MetricAggregate* gpu = ctx.tree.inclusive(n, kGpuTimeMetric);
    if (gpu == nullptr || gpu->count() == 0) return true;
    const double average = gpu->sum() / static_cast<double>(gpu->count());
    if (average >= ctx.config.gpu_threshold_ns) return false;
    Issue issue = make_issue(ctx.tree, "small-kernels", Severity::Warning, "Small GPU kernels", n);
    issue.values = {{"avg_kernel_time_ns", average},
                    {"kernel_launches", static_cast<double>(gpu->count())},
                    {"gpu_time_ns", gpu->sum()}};
    issues.push_back(std::move(issue));
    return true;
  });
  return issues;
}

std::vector<Issue> analyze_fwd_bwd(const AnalysisContext& ctx) {
  std::map<NodeId, std::set<NodeId>> backward_of;
  for (const auto& link : ctx.metadata.backward_links) {
    if (!ctx.tree.node(link.forward_op).has_tag(SemanticTag::Forward)) continue;
    backward_of[link.forward_op].insert(link.backward_root);
  }
  std::vector<Issue> issues;
  for (const auto& [forward, roots] : backward_of) {
    double backward_time = 0.0;
    for (NodeId r : roots) backward_time += ctx.tree.inclusive_sum(r, kGpuTimeMetric);
    const double forward_time = ctx.tree.inclusive_sum(forward, kGpuTimeMetric) - backward_time;
    if (forward_time < ctx.config.fwd_epsilon_ns) continue;
    const double ratio = backward_time / forward_time;
    if (!(ratio > ctx.config.bwd_fwd_ratio)) continue;
    Issue issue = make_issue(ctx.tree, "backward-abnormality", Severity::Warning, "Backward abnormality", forward);
    issue.values = {{"forward_gpu_time_ns", forward_time},
                    {"backward_gpu_time_ns", backward_time},
                    {"ratio", ratio}};
    issues.push_back(std::move(issue));
  }
  return issues;
}

std::vector<Issue> analyze_stalls(const AnalysisContext& ctx) {
  std::vector<Issue> issues;
  for (NodeId kernel : hotspot_kernels(ctx, nullptr)) {
    const double total = ctx.tree.inclusive_sum(kernel, kSamplesMetric);
    if (total <= 0.0) continue;
    std::map<std::string, double> by_reason;
    for (NodeId c : ctx.tree.node(kernel).children) {
      const CctNode& child = ctx.tree.node(c);
      if (child.frame.kind != FrameKind::Instruction) continue;
      if (!(ctx.tree.inclusive_sum(c, kSamplesMetric) / total > ctx.config.stall_threshold)) continue;
      for (const auto& slot : child.metrics) {
        const std::string& name = ctx.tree.metric_name(slot.metric);
        if (!name.starts_with(kStallMetricPrefix)) continue;
        by_reason[name.substr(kStallMetricPrefix.size())] += slot.inclusive.sum();
      }
    }
    if (by_reason.empty()) continue;
    std::vector<std::pair<std::string, double>> ranked(by_reason.begin(), by_reason.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > static_cast<std::size_t>(ctx.config.topk)) ranked.resize(static_cast<std::size_t>(ctx.config.topk));

    std::vector<std::string> reasons;
    for (const auto& [reason, count] : ranked) reasons.push_back(reason);
    Issue issue = make_issue(ctx.tree, "stall", Severity::Info,
                             fmt::format("Kernel is mainly stalled by {}", fmt::join(reasons, ", ")), kernel);
    issue.values["kernel_samples"] = total;
    for (const auto& [reason, count] : ranked) issue.values[std::string(kStallMetricPrefix) + reason] = count;
    issue.details = std::move(reasons);
    issues.push_back(std::move(issue));
  }
  return issues;
}

std::vector<Issue> analyze_cpu_latency(const AnalysisContext& ctx) {
  std::vector<Issue> issues;
  const double total_cpu = ctx.tree.inclusive_sum(kRootNode, kCpuTimeMetric);
  if (total_cpu <= 0.0) {
    ctx.diagnostics.emplace_back("cpu-latency: no cpu_time_ns attributed");
    return issues;
  }
  breadth_first(ctx.tree, [&](NodeId n) {
    const double cpu = ctx.tree.inclusive_sum(n, kCpuTimeMetric);
    if (cpu <= 0.0) return true;
    const double gpu = ctx.tree.inclusive_sum(n, kGpuTimeMetric);
    const double ratio = cpu / std::max(gpu, 1.0);
    if (!(ratio > ctx.config.cpu_threshold && cpu > kCpuFloorNs)) return false;
    Issue issue = make_issue(ctx.tree, "cpu-latency", Severity::Warning, "CPU time abnormality", n);
    issue.values = {{"cpu_time_ns", cpu},
                    {"gpu_time_ns", gpu},
                    {"ratio", ratio},
                    {"cpu_fraction", cpu / total_cpu}};
    issues.push_back(std::move(issue));
    return true;
  });
  return issues;
}

std::vector<Rule> builtin_rules() {
  return {{"hotspot", analyze_hotspots},
          {"small-kernels", analyze_kernel_fusion},
          {"backward-abnormality", analyze_fwd_bwd},
          {"stall", analyze_stalls},
          {"cpu-latency", analyze_cpu_latency}};
}

std::vector<Rule> select_rules(std::span<const std::string> ids) {
  std::vector<Rule> all = builtin_rules();
  for (const auto& id : ids) {
    if (std::none_of(all.begin(), all.end(), [&](const Rule& r) { return r.id == id; })) {
      throw std::invalid_argument("unknown rule '" + id + "'");
    }
  }
  if (ids.empty()) return all;
  std::vector<Rule> out;
  for (auto& rule : all) {
    if (std::find(ids.begin(), ids.end(), rule.id) != ids.end()) out.push_back(std::move(rule));
  }
  return out;
}

IssueReport run_rules(CallingContextTree& tree, const TraceMetadata& metadata, std::span<const Rule> rules,
                      const AnalyzerConfig& config, bool parallel) {
  config.validate();
  classify_semantics(tree, metadata, config);
  for (NodeId n = 0; n < tree.size(); ++n) tree.node(n).issue_ids.clear();

  struct Outcome {
    std::vector<Issue> issues;
    std::vector<std::string> diagnostics;
  };
  auto run_one = [&](const Rule& rule) {
    Outcome out;
    AnalysisContext ctx{tree, metadata, config, out.diagnostics};
    try {
      out.issues = rule.run(ctx);
    } catch (const std::exception& err) {
      out.issues.clear();
      out.issues.push_back(make_issue(tree, std::string(kRuleFailureId), Severity::Critical,
                                      fmt::format("rule '{}' failed: {}", rule.id, err.what()), kRootNode));
      out.issues.back().details = {rule.id};
    }
    return out;
  };

  std::vector<Outcome> outcomes;
  if (parallel) {
    std::vector<std::future<Outcome>> futures;
    for (const auto& rule : rules) futures.push_back(std::async(std::launch::async, run_one, std::cref(rule)));
    for (auto& f : futures) outcomes.push_back(f.get());
  } else {
    for (const auto& rule : rules) outcomes.push_back(run_one(rule));
  }

  IssueReport report;
  std::set<std::pair<std::string, std::vector<IdentityKey>>> seen;
  for (auto& outcome : outcomes) {
    for (auto& issue : outcome.issues) {
      if (!seen.emplace(issue.rule_id, issue.node_path).second) continue;
      report.issues.push_back(std::move(issue));
    }
    for (auto& d : outcome.diagnostics) report.diagnostics.push_back(std::move(d));
  }
  for (const auto& issue : report.issues) {
    if (issue.rule_id == kRuleFailureId) continue;
    CctNode& node = tree.node(issue.node);
    if (std::find(node.issue_ids.begin(), node.issue_ids.end(), issue.rule_id) == node.issue_ids.end()) {
      node.issue_ids.push_back(issue.rule_id);
    }
    if (issue.rule_id == "hotspot") node.add_tag(SemanticTag::Hotspot);
  }
  return report;
}

}  // namespace ctxprof

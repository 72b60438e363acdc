#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxprof/cct.hpp"
#include "ctxprof/profiler.hpp"

namespace ctxprof {

struct AnalyzerConfig {
  double hotspot_threshold = 0.10;
  double gpu_threshold_ns = 20'000.0;
  double cpu_threshold = 5.0;
  double stall_threshold = 0.20;
  double bwd_fwd_ratio = 2.0;
  int topk = 3;
  double fwd_epsilon_ns = 1'000.0;
  std::vector<std::string> loss_name_patterns{"loss", "nll", "cross_entropy"};

  // Throws std::invalid_argument when a threshold is out of range.
  void validate() const;
};

enum class Severity { Info, Warning, Critical };
std::string_view to_string(Severity severity);

struct Issue {
  std::string rule_id;
  Severity severity = Severity::Warning;
  std::string message;
  NodeId node = kRootNode;
  std::vector<IdentityKey> node_path;
  std::map<std::string, double> values;
  std::vector<std::string> details;  // ordered evidence, e.g. ranked stall reasons
};

struct IssueReport {
  std::vector<Issue> issues;
  std::vector<std::string> diagnostics;
};

inline constexpr std::string_view kRuleFailureId = "rule-failure";

struct AnalysisContext {
  const CallingContextTree& tree;
  const TraceMetadata& metadata;
  const AnalyzerConfig& config;
  std::vector<std::string>& diagnostics;
};

struct Rule {
  std::string id;
  std::function<std::vector<Issue>(const AnalysisContext&)> run;
};

// Tags forward/backward operator pairs, loss frames and memcpy call sites.
void classify_semantics(CallingContextTree& tree, const TraceMetadata& metadata,
                        const AnalyzerConfig& config);

std::vector<Issue> analyze_hotspots(const AnalysisContext& ctx);
std::vector<Issue> analyze_kernel_fusion(const AnalysisContext& ctx);
std::vector<Issue> analyze_fwd_bwd(const AnalysisContext& ctx);
std::vector<Issue> analyze_stalls(const AnalysisContext& ctx);
std::vector<Issue> analyze_cpu_latency(const AnalysisContext& ctx);

// hotspot, small-kernels, backward-abnormality, stall, cpu-latency.
std::vector<Rule> builtin_rules();
// Built-in rules restricted to ids, in registration order. Throws
// std::invalid_argument for an unknown id.
std::vector<Rule> select_rules(std::span<const std::string> ids);

// Classifies, runs the rules in order, drops duplicate (rule, node) issues and
// records issue ids on the flagged nodes. A throwing rule is reported as a
// rule-failure issue and the remaining rules still run.
IssueReport run_rules(CallingContextTree& tree, const TraceMetadata& metadata,
                      std::span<const Rule> rules, const AnalyzerConfig& config, bool parallel = false);

}  // namespace ctxprof

#pragma once

#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ctxprof/analyzer.hpp"
#include "ctxprof/cct.hpp"
#include "ctxprof/profiler.hpp"

namespace ctxprof {

inline constexpr int kViewerSchemaVersion = 1;

class UnknownMetric : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ProfileFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Folded stacks: one "frame;frame;... <exclusive>" line per node with a
// nonzero exclusive value, depth-first in insertion order, LF-terminated.
std::string export_folded(const CallingContextTree& tree, std::string_view metric);

// Document ids are preorder positions (root = 0).
std::vector<std::uint32_t> preorder_ids(const CallingContextTree& tree);

std::string export_viewer_json(const CallingContextTree& tree, const TraceMetadata& metadata,
                               const IssueReport& report, int indent = -1);

// Profile rebuilt from a viewer document.
struct LoadedProfile {
  CallingContextTree tree;
  TraceMetadata metadata;
  IssueReport report;
};

LoadedProfile load_viewer_json(std::string_view text);

enum class ReportFormat { Text, Structured };

std::string export_issue_report(const CallingContextTree& tree, const IssueReport& report,
                                ReportFormat format);

// "a > b > c" using display names.
std::string human_path(const CallingContextTree& tree, NodeId node);

}  // namespace ctxprof

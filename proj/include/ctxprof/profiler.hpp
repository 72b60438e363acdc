#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ctxprof/cct.hpp"
#include "ctxprof/monitor.hpp"

namespace ctxprof {

inline constexpr std::string_view kGpuTimeMetric = "gpu_time_ns";
inline constexpr std::string_view kCpuTimeMetric = "cpu_time_ns";
inline constexpr std::string_view kRealTimeMetric = "real_time_ns";
inline constexpr std::string_view kSamplesMetric = "samples";
inline constexpr std::string_view kStallMetricPrefix = "stall:";

class UnknownCorrelationId : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DuplicateConsume : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric name under which an activity metric is recorded. Kernel metrics keep
// their names; other activities are prefixed with the activity kind
// ("memcpy.gpu_time_ns", "alloc.bytes").
std::string activity_metric_name(ActivityKind kind, std::string_view metric);

// Pending GPU activity keyed by correlation id.
class CorrelationTable {
 public:
  explicit CorrelationTable(bool strict = false) : strict_(strict) {}

  void register_correlation(std::uint64_t correlation_id, NodeId node);
  // Attributes every metric of the activity to the registered node and
  // forgets the id. Returns the node, or nullopt when the id was unknown
  // (lenient mode only).
  std::optional<NodeId> consume_activity(CallingContextTree& tree, const GpuActivity& activity);

  std::size_t pending() const noexcept { return pending_.size(); }
  std::uint64_t unknown_ids() const noexcept { return unknown_; }
  std::uint64_t duplicate_consumes() const noexcept { return duplicates_; }

 private:
  bool strict_;
  std::unordered_map<std::uint64_t, NodeId> pending_;
  std::unordered_set<std::uint64_t> consumed_;
  std::uint64_t unknown_ = 0;
  std::uint64_t duplicates_ = 0;
};

// Previous sample time per (thread, sample kind).
class CpuSampleClock {
 public:
  // Interval since the previous sample of the same kind on the thread; the
  // first sample only sets the baseline.
  std::optional<std::uint64_t> interval(std::uint64_t thread_id, SampleKind kind, std::uint64_t timestamp_ns);

 private:
  std::map<std::pair<std::uint64_t, SampleKind>, std::uint64_t> previous_;
};

// Returns true when an interval was attributed to leaf.
bool attribute_cpu_sample(CallingContextTree& tree, CpuSampleClock& clock, std::uint64_t thread_id,
                          SampleKind kind, std::uint64_t timestamp_ns, NodeId leaf);

void extend_with_instructions(CallingContextTree& tree, NodeId kernel_node,
                              const InstructionSampleBatch& batch);

struct BackwardLink {
  NodeId forward_op = kRootNode;  // last frame of the forward prefix
  NodeId backward_root = kRootNode;  // first frame contributed by the backward thread
  std::int64_t sequence_id = -1;

  auto operator<=>(const BackwardLink&) const = default;
};

struct TraceMetadata {
  std::set<BackwardLink> backward_links;
  std::set<NodeId> memcpy_nodes;
};

struct ProfileDiagnostics {
  std::uint64_t unknown_correlation_ids = 0;
  std::uint64_t duplicate_consumes = 0;
  std::uint64_t unknown_sequence_ids = 0;
  std::uint64_t shadow_residue = 0;
  std::uint64_t orphan_instruction_batches = 0;
  std::uint64_t pending_correlations = 0;
};

struct ProfilerOptions {
  SourceMask mask = SourceMask::all();
  bool strict_correlation = false;
  bool use_cache = true;
};

// Drives a MonitorSession over a trace and builds the calling context tree:
// GPU launches register their call path under a correlation id, activities
// and instruction samples attach through it, CPU samples attribute the time
// since the previous sample to their own path.
class Profiler {
 public:
  explicit Profiler(ProfilerOptions options = {});
  Profiler(const Profiler&) = delete;
  Profiler& operator=(const Profiler&) = delete;

  void ingest(std::span<const TraceEvent> events);
  // Streams, validating each record.
  void ingest(std::istream& trace);
  void dispatch(const TraceEvent& event);
  // Attaches fused-operator annotations and collects diagnostics.
  void finish();

  CallingContextTree& tree() noexcept { return tree_; }
  const CallingContextTree& tree() const noexcept { return tree_; }
  const TraceMetadata& metadata() const noexcept { return metadata_; }
  const ProfileDiagnostics& diagnostics() const noexcept { return diagnostics_; }
  MonitorSession& session() noexcept { return session_; }
  const CorrelationTable& correlations() const noexcept { return correlations_; }

 private:
  void on_gpu_api(const CallbackContext& ctx);
  ReplaySinks make_sinks();

  ProfilerOptions options_;
  MonitorSession session_;
  ReplaySinks sinks_;
  CallingContextTree tree_;
  CorrelationTable correlations_;
  CpuSampleClock clock_;
  std::unordered_map<std::uint64_t, NodeId> launch_nodes_;
  TraceMetadata metadata_;
  ProfileDiagnostics diagnostics_;
};

}  // namespace ctxprof

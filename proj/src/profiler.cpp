#include "ctxprof/profiler.hpp"

#include <spdlog/spdlog.h>

#include "ctxprof/trace_io.hpp"

namespace ctxprof {

std::string activity_metric_name(ActivityKind kind, std::string_view metric) {
  if (kind == ActivityKind::KernelExec) return std::string(metric);
  return std::string(to_string(kind)) + "." + std::string(metric);
}

void CorrelationTable::register_correlation(std::uint64_t correlation_id, NodeId node) {
  pending_[correlation_id] = node;
}

std::optional<NodeId> CorrelationTable::consume_activity(CallingContextTree& tree,
                                                         const GpuActivity& activity) {
  auto it = pending_.find(activity.correlation_id);
  if (it == pending_.end()) {
    const bool duplicate = consumed_.contains(activity.correlation_id);
    if (strict_) {
      if (duplicate) throw DuplicateConsume("correlation id " + std::to_string(activity.correlation_id) + " consumed twice");
      throw UnknownCorrelationId("no call path registered for correlation id " +
                                 std::to_string(activity.correlation_id));
    }
    ++(duplicate ? duplicates_ : unknown_);
    return std::nullopt;
  }
  const NodeId node = it->second;
  pending_.erase(it);
  consumed_.insert(activity.correlation_id);

  bool has_time = false;
  for (const auto& [name, value] : activity.metrics) {
    has_time = has_time || name == kGpuTimeMetric;
    tree.attribute_sample(node, activity_metric_name(activity.activity_kind, name), static_cast<double>(value));
  }
  if (!has_time) {
    tree.attribute_sample(node, activity_metric_name(activity.activity_kind, kGpuTimeMetric),
                          static_cast<double>(activity.end_ns - activity.start_ns));
  }
  return node;
}

std::optional<std::uint64_t> CpuSampleClock::interval(std::uint64_t thread_id, SampleKind kind,
                                                      std::uint64_t timestamp_ns) {
  auto [it, first] = previous_.try_emplace({thread_id, kind}, timestamp_ns);
  if (first) return std::nullopt;
  const std::uint64_t delta = timestamp_ns - it->second;
  it->second = timestamp_ns;
  return delta;
}

bool attribute_cpu_sample(CallingContextTree& tree, CpuSampleClock& clock, std::uint64_t thread_id,
                          SampleKind kind, std::uint64_t timestamp_ns, NodeId leaf) {
  auto delta = clock.interval(thread_id, kind, timestamp_ns);
  if (!delta) return false;
  tree.attribute_sample(leaf, kind == SampleKind::CpuTime ? kCpuTimeMetric : kRealTimeMetric,
                        static_cast<double>(*delta));
  return true;
}

void extend_with_instructions(CallingContextTree& tree, NodeId kernel_node,
                              const InstructionSampleBatch& batch) {
  const MetricId samples = tree.metric_id(kSamplesMetric);
  for (const auto& sample : batch.samples) {
    NodeId inst = tree.child(kernel_node, Frame::instruction(sample.module_path, sample.pc));
    const auto count = static_cast<double>(sample.count);
    tree.attribute_sample(inst, std::string(kStallMetricPrefix) + sample.stall_reason, count);
    tree.attribute_sample(inst, samples, count);
  }
}

Profiler::Profiler(ProfilerOptions options)
    : options_(options),
      session_(ModuleMap{}, options.mask),
      correlations_(options.strict_correlation) {
  session_.set_use_cache(options.use_cache);
  session_.callback_register(Domain::Gpu, Phase::Before,
                             [this](const CallbackContext& ctx) { on_gpu_api(ctx); });
  sinks_ = make_sinks();
  session_.begin_replay();
}

void Profiler::on_gpu_api(const CallbackContext& ctx) {
  const auto& call = *ctx.event.get<GpuApiCall>();
  const std::uint64_t tid = ctx.event.thread_id;
  CallPath path = session_.callpath_get(tid);
  const NodeId leaf = tree_.insert_path(path);
  correlations_.register_correlation(call.correlation_id, leaf);
  if (!call.kernel_name.empty()) launch_nodes_[call.correlation_id] = leaf;

  auto seq = session_.active_backward_sequence(tid);
  if (!seq) return;
  const ForwardRecord* forward = session_.forward_registry().find(*seq);
  if (forward == nullptr) return;
  std::uint32_t prefix = 0;
  if (forward->context.empty()) {
    for (const auto& f : forward->python_stack) prefix += options_.mask.keeps(f.kind) ? 1 : 0;
    if (options_.mask.framework) prefix += static_cast<std::uint32_t>(forward->framework_prefix.size());
  } else {
    for (const auto& f : forward->context) prefix += options_.mask.keeps(f.kind) ? 1 : 0;
  }
  if (prefix == 0 || tree_.node(leaf).depth <= prefix) return;
  metadata_.backward_links.insert(BackwardLink{tree_.ancestor_at_depth(leaf, prefix),
                                               tree_.ancestor_at_depth(leaf, prefix + 1), *seq});
}

ReplaySinks Profiler::make_sinks() {
  ReplaySinks sinks;
  sinks.on_activity = [this](const TraceEvent&, const GpuActivity& activity) {
    auto node = correlations_.consume_activity(tree_, activity);
    if (node && activity.activity_kind == ActivityKind::Memcpy) metadata_.memcpy_nodes.insert(*node);
  };
  sinks.on_cpu_sample = [this](const TraceEvent& event, const CpuSample& sample) {
    CallPath path = session_.callpath_get(event.thread_id);
    if (path.empty()) {
      // Still advances the baseline for the thread.
      clock_.interval(event.thread_id, sample.sample_kind, event.timestamp_ns);
      return;
    }
    attribute_cpu_sample(tree_, clock_, event.thread_id, sample.sample_kind, event.timestamp_ns,
                         tree_.insert_path(path));
  };
  sinks.on_instructions = [this](const TraceEvent&, const InstructionSampleBatch& batch) {
    auto it = launch_nodes_.find(batch.correlation_id);
    if (it == launch_nodes_.end()) {
      ++diagnostics_.orphan_instruction_batches;
      return;
    }
    extend_with_instructions(tree_, it->second, batch);
  };
  return sinks;
}

void Profiler::dispatch(const TraceEvent& event) { session_.dispatch(event, sinks_); }

void Profiler::ingest(std::span<const TraceEvent> events) {
  for (const auto& event : events) dispatch(event);
}

void Profiler::ingest(std::istream& trace) {
  TraceReader reader(trace);
  TraceEvent event;
  while (reader.next(event)) dispatch(event);
}

void Profiler::finish() {
  const auto& mappings = session_.fusion_mappings();
  if (!mappings.empty()) {
    for (NodeId n = 1; n < tree_.size(); ++n) {
      CctNode& node = tree_.node(n);
      if (node.frame.kind != FrameKind::FrameworkOp || !node.annotations.empty()) continue;
      node.annotations = resolve_fused(node.frame.name, mappings);
    }
  }
  const IntegrationDiagnostics& integration = session_.diagnostics();
  diagnostics_.unknown_correlation_ids = correlations_.unknown_ids();
  diagnostics_.duplicate_consumes = correlations_.duplicate_consumes();
  diagnostics_.unknown_sequence_ids = integration.unknown_sequence_ids;
  diagnostics_.shadow_residue = integration.shadow_residue;
  diagnostics_.pending_correlations = correlations_.pending();
  if (diagnostics_.unknown_correlation_ids + diagnostics_.unknown_sequence_ids +
          diagnostics_.orphan_instruction_batches >
      0) {
    spdlog::warn("profile diagnostics: {} unknown correlation ids, {} unknown sequence ids, {} orphan "
                 "instruction batches",
                 diagnostics_.unknown_correlation_ids, diagnostics_.unknown_sequence_ids,
                 diagnostics_.orphan_instruction_batches);
  }
}

}  // namespace ctxprof

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctxprof/frame.hpp"

namespace ctxprof {

inline constexpr int kTraceSchemaVersion = 1;

struct OperatorEnter {
  std::string op_name;
  std::uint64_t op_address = 0;
  std::int64_t sequence_id = -1;
  CallPath python_stack;
  std::optional<CallPath> native_stack;

  bool operator==(const OperatorEnter&) const = default;
};

struct OperatorExit {
  std::string op_name;
  std::uint64_t op_address = 0;
  std::int64_t sequence_id = -1;

  bool operator==(const OperatorExit&) const = default;
};

struct GpuApiCall {
  std::string api_name;
  std::uint64_t correlation_id = 0;
  std::string kernel_name;  // empty unless this call launches a kernel
  // Kernel symbol location; when pc is 0 a synthetic one is derived from the name.
  std::string kernel_module_path;
  std::uint64_t kernel_pc = 0;
  std::optional<CallPath> native_stack;
  std::uint64_t stream_id = 0;
  std::uint64_t device_id = 0;

  bool operator==(const GpuApiCall&) const = default;
};

enum class ActivityKind : std::uint8_t { KernelExec, Memcpy, Memset, Alloc, Free };

struct GpuActivity {
  std::uint64_t correlation_id = 0;
  ActivityKind activity_kind = ActivityKind::KernelExec;
  std::uint64_t start_ns = 0;
  std::uint64_t end_ns = 0;
  std::map<std::string, std::int64_t> metrics;

  bool operator==(const GpuActivity&) const = default;
};

enum class SampleKind : std::uint8_t { CpuTime, RealTime };

// The sample time is the enclosing event's timestamp.
struct CpuSample {
  SampleKind sample_kind = SampleKind::CpuTime;
  std::optional<CallPath> python_stack;
  std::optional<CallPath> native_stack;

  bool operator==(const CpuSample&) const = default;
};

struct InstructionSample {
  std::uint64_t pc = 0;
  std::string module_path;
  std::string stall_reason;
  std::uint64_t count = 0;

  bool operator==(const InstructionSample&) const = default;
};

struct InstructionSampleBatch {
  std::uint64_t correlation_id = 0;
  std::vector<InstructionSample> samples;

  bool operator==(const InstructionSampleBatch&) const = default;
};

struct FusionMapping {
  std::string fused_op_name;
  std::vector<CallPath> original_call_paths;

  bool operator==(const FusionMapping&) const = default;
};

struct ModuleRange {
  std::string module_path;
  std::uint64_t base_pc = 0;
  std::uint64_t end_pc = 0;  // exclusive
  bool is_python_runtime = false;

  bool operator==(const ModuleRange&) const = default;
};

struct ModuleMap {
  std::vector<ModuleRange> entries;

  bool operator==(const ModuleMap&) const = default;

  const ModuleRange* find(std::uint64_t pc) const;
  bool is_python_runtime(std::uint64_t pc) const;
  // Entries from other are appended; throws std::invalid_argument on overlap.
  void merge(const ModuleMap& other);
};

enum class ThreadRoleKind : std::uint8_t { Forward, Backward, Worker };

struct ThreadRole {
  std::uint64_t thread_id = 0;
  ThreadRoleKind role = ThreadRoleKind::Worker;
  std::uint64_t device_id = 0;

  bool operator==(const ThreadRole&) const = default;
};

using EventPayload = std::variant<OperatorEnter, OperatorExit, GpuApiCall, GpuActivity,
                                  CpuSample, InstructionSampleBatch, FusionMapping,
                                  ModuleMap, ThreadRole>;

struct TraceEvent {
  std::uint64_t seq_no = 0;
  std::uint64_t timestamp_ns = 0;
  std::uint64_t thread_id = 0;
  EventPayload payload;

  bool operator==(const TraceEvent&) const = default;

  template <typename T>
  const T* get() const {
    return std::get_if<T>(&payload);
  }
};

std::string_view event_tag(const EventPayload& payload);

std::string_view to_string(ActivityKind kind);
std::optional<ActivityKind> activity_kind_from_string(std::string_view text);
std::string_view to_string(SampleKind kind);
std::optional<SampleKind> sample_kind_from_string(std::string_view text);
std::string_view to_string(ThreadRoleKind kind);
std::optional<ThreadRoleKind> thread_role_from_string(std::string_view text);

}  // namespace ctxprof

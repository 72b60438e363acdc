#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "ctxprof/callpath.hpp"
#include "ctxprof/events.hpp"

namespace ctxprof {

enum class Domain { Framework, Gpu };
enum class Phase { Before, After };

class MonitorSession;

struct CallbackContext {
  Domain domain;
  Phase phase;
  const TraceEvent& event;
  MonitorSession& session;
};

using Callback = std::function<void(const CallbackContext&)>;
using RegistrationId = std::uint64_t;

// Consumers for records that are not interception points. Each one runs with
// an active context, so callpath_get() works inside them.
struct ReplaySinks {
  std::function<void(const TraceEvent&, const GpuActivity&)> on_activity;
  std::function<void(const TraceEvent&, const CpuSample&)> on_cpu_sample;
  std::function<void(const TraceEvent&, const InstructionSampleBatch&)> on_instructions;
  std::function<void(const TraceEvent&, const FusionMapping&)> on_fusion;
};

struct ReplayStats {
  std::uint64_t events = 0;
  std::uint64_t callbacks_fired = 0;
  std::uint64_t errors = 0;

  bool operator==(const ReplayStats&) const = default;
};

class SessionFinalized : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NoActiveCallback : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Replays a recorded event stream through the same interception surface a
// live monitor exposes: callbacks per (domain, phase), a per-thread shadow
// stack of open operators, cached stack snapshots and call-path construction.
class MonitorSession {
 public:
  struct ThreadState {
    std::vector<ShadowEntry> shadow;
    CallPath python;
    ThreadRoleKind role = ThreadRoleKind::Worker;
    std::uint64_t device_id = 0;
    PathCache cache;
  };

  explicit MonitorSession(ModuleMap module_map = {}, SourceMask mask = SourceMask::all());

  RegistrationId callback_register(Domain domain, Phase phase, Callback callback);
  void finalize();

  // Feeds events in order. Each call to replay() starts from an empty
  // forward registry. Throws the first TraceError from validation when
  // validate is set.
  ReplayStats replay(std::span<const TraceEvent> events, const ReplaySinks& sinks = {},
                     bool validate = false);
  // Incremental form used for streaming input.
  void begin_replay();
  void dispatch(const TraceEvent& event, const ReplaySinks& sinks = {});
  const ReplayStats& stats() const noexcept { return stats_; }

  // Multi-layer call path at the event currently being dispatched.
  CallPath callpath_get(std::uint64_t thread_id);
  CallPath callpath_get() { return callpath_get(current_thread()); }

  // Reference path built without the cache, for checking cached results.
  CallPath callpath_get_uncached(std::uint64_t thread_id);

  // Sequence id whose forward context applies to the active event, if the
  // thread is a backward thread inside an associated operator.
  std::optional<std::int64_t> active_backward_sequence(std::uint64_t thread_id) const;

  bool finalized() const noexcept { return finalized_; }
  std::size_t registration_count() const noexcept;
  std::size_t shadow_depth(std::uint64_t thread_id) const;
  const ThreadState* thread(std::uint64_t thread_id) const;
  const ForwardRegistry& forward_registry() const noexcept { return registry_; }
  const ModuleMap& module_map() const noexcept { return module_map_; }
  const std::vector<FusionMapping>& fusion_mappings() const noexcept { return fusion_; }
  SourceMask source_mask() const noexcept { return mask_; }
  const IntegrationDiagnostics& diagnostics() const noexcept { return diagnostics_; }

  void set_use_cache(bool enabled) { use_cache_ = enabled; }
  bool use_cache() const noexcept { return use_cache_; }

 private:
  struct Registration {
    RegistrationId id;
    Domain domain;
    Phase phase;
    Callback callback;
  };

  std::uint64_t current_thread() const;
  void fire(Domain domain, const TraceEvent& event);
  CallPath build_path(std::uint64_t thread_id, bool allow_cache);
  std::optional<KernelRef> active_kernel() const;
  std::span<const Frame> active_native(std::vector<Frame>& scratch, const ThreadState& state) const;

  ModuleMap module_map_;
  SourceMask mask_;
  std::vector<Registration> registrations_;
  RegistrationId next_id_ = 1;
  bool finalized_ = false;
  bool use_cache_ = true;
  std::unordered_map<std::uint64_t, ThreadState> threads_;
  ForwardRegistry registry_;
  std::vector<FusionMapping> fusion_;
  IntegrationDiagnostics diagnostics_;
  ReplayStats stats_;
  const TraceEvent* active_ = nullptr;
};

}  // namespace ctxprof

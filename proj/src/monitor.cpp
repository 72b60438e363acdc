#include "ctxprof/monitor.hpp"

#include "ctxprof/trace_error.hpp"
#include "ctxprof/trace_io.hpp"

namespace ctxprof {

namespace {

class ActiveEventGuard {
 public:
  ActiveEventGuard(const TraceEvent*& slot, const TraceEvent& event) : slot_(slot) { slot_ = &event; }
  ~ActiveEventGuard() { slot_ = nullptr; }
  ActiveEventGuard(const ActiveEventGuard&) = delete;
  ActiveEventGuard& operator=(const ActiveEventGuard&) = delete;

 private:
  const TraceEvent*& slot_;
};

}  // namespace

MonitorSession::MonitorSession(ModuleMap module_map, SourceMask mask)
    : module_map_(std::move(module_map)), mask_(mask) {}

RegistrationId MonitorSession::callback_register(Domain domain, Phase phase, Callback callback) {
  if (finalized_) throw SessionFinalized("callback_register after monitor_finalize");
  RegistrationId id = next_id_++;
  registrations_.push_back({id, domain, phase, std::move(callback)});
  return id;
}

void MonitorSession::finalize() {
  if (finalized_) return;
  finalized_ = true;
  registrations_.clear();
}

std::size_t MonitorSession::registration_count() const noexcept { return registrations_.size(); }

std::size_t MonitorSession::shadow_depth(std::uint64_t thread_id) const {
  auto it = threads_.find(thread_id);
  return it == threads_.end() ? 0 : it->second.shadow.size();
}

const MonitorSession::ThreadState* MonitorSession::thread(std::uint64_t thread_id) const {
  auto it = threads_.find(thread_id);
  return it == threads_.end() ? nullptr : &it->second;
}

void MonitorSession::begin_replay() {
  registry_.clear();
  stats_ = {};
}

ReplayStats MonitorSession::replay(std::span<const TraceEvent> events, const ReplaySinks& sinks,
                                   bool validate) {
  begin_replay();
  EventValidator validator;
  for (const auto& event : events) {
    if (validate) {
      try {
        validator.validate(event);
      } catch (const TraceError&) {
        ++stats_.errors;
        throw;
      }
    }
    dispatch(event, sinks);
  }
  return stats_;
}

void MonitorSession::fire(Domain domain, const TraceEvent& event) {
  for (Phase phase : {Phase::Before, Phase::After}) {
    for (const auto& reg : registrations_) {
      if (reg.domain != domain || reg.phase != phase) continue;
      ++stats_.callbacks_fired;
      reg.callback(CallbackContext{domain, phase, event, *this});
    }
  }
}

void MonitorSession::dispatch(const TraceEvent& event, const ReplaySinks& sinks) {
  ++stats_.events;
  if (finalized_) return;
  ActiveEventGuard guard(active_, event);
  ThreadState& state = threads_[event.thread_id];

  std::visit(
      [&](const auto& payload) {
        using T = std::decay_t<decltype(payload)>;
        if constexpr (std::is_same_v<T, OperatorEnter>) {
          state.shadow.push_back({payload.op_name, payload.op_address, payload.sequence_id});
          state.python = payload.python_stack;
          if (state.shadow.size() == 1) {
            state.cache.open(state.python, state.shadow.front(),
                             mask_.native ? payload.native_stack : std::nullopt, module_map_);
          }
          if (payload.sequence_id >= 0 && state.role == ThreadRoleKind::Forward) {
            registry_.record(payload.sequence_id,
                             {event.thread_id, state.python, state.shadow,
                              forward_context(state.python, state.shadow,
                                              mask_.native ? payload.native_stack : std::nullopt, module_map_)});
          }
          fire(Domain::Framework, event);
        } else if constexpr (std::is_same_v<T, OperatorExit>) {
          fire(Domain::Framework, event);
          if (!state.shadow.empty()) state.shadow.pop_back();
          if (state.shadow.empty()) state.cache.invalidate();
        } else if constexpr (std::is_same_v<T, GpuApiCall>) {
          fire(Domain::Gpu, event);
        } else if constexpr (std::is_same_v<T, GpuActivity>) {
          if (sinks.on_activity) sinks.on_activity(event, payload);
        } else if constexpr (std::is_same_v<T, CpuSample>) {
          if (sinks.on_cpu_sample) sinks.on_cpu_sample(event, payload);
        } else if constexpr (std::is_same_v<T, InstructionSampleBatch>) {
          if (sinks.on_instructions) sinks.on_instructions(event, payload);
        } else if constexpr (std::is_same_v<T, FusionMapping>) {
          fusion_.push_back(payload);
          if (sinks.on_fusion) sinks.on_fusion(event, payload);
        } else if constexpr (std::is_same_v<T, ModuleMap>) {
          try {
            module_map_.merge(payload);
          } catch (const std::invalid_argument&) {
            ++stats_.errors;
          }
        } else if constexpr (std::is_same_v<T, ThreadRole>) {
          ThreadState& target = threads_[payload.thread_id];
          target.role = payload.role;
          target.device_id = payload.device_id;
        }
      },
      event.payload);
}

std::uint64_t MonitorSession::current_thread() const {
  if (active_ == nullptr) throw NoActiveCallback("callpath_get called outside a callback");
  return active_->thread_id;
}

std::optional<KernelRef> MonitorSession::active_kernel() const {
  const auto* call = active_->get<GpuApiCall>();
  if (call == nullptr || call->kernel_name.empty()) return std::nullopt;
  return KernelRef{call->kernel_name, call->kernel_module_path, call->kernel_pc};
}

std::span<const Frame> MonitorSession::active_native(std::vector<Frame>& scratch,
                                                     const ThreadState&) const {
  const std::optional<CallPath>* source = nullptr;
  const GpuApiCall* call = active_->get<GpuApiCall>();
  if (const auto* enter = active_->get<OperatorEnter>()) source = &enter->native_stack;
  if (call != nullptr) source = &call->native_stack;
  if (const auto* sample = active_->get<CpuSample>()) source = &sample->native_stack;

  const bool needs_copy = call != nullptr || !mask_.native;
  if (!needs_copy) {
    if (source == nullptr || !source->has_value()) return {};
    return **source;
  }

  scratch.clear();
  if (source != nullptr && source->has_value()) {
    for (const auto& f : **source) {
      if (mask_.native || f.kind == FrameKind::GpuApi) scratch.push_back(f);
    }
  }
  if (call != nullptr) {
    bool has_api = false;
    for (const auto& f : scratch) has_api = has_api || f.kind == FrameKind::GpuApi;
    if (!has_api) scratch.push_back(Frame::gpu_api(call->api_name, "<gpu_api>", stable_hash(call->api_name)));
  }
  return scratch;
}

std::optional<std::int64_t> MonitorSession::active_backward_sequence(std::uint64_t thread_id) const {
  auto it = threads_.find(thread_id);
  if (it == threads_.end() || it->second.role != ThreadRoleKind::Backward) return std::nullopt;
  for (const auto& entry : it->second.shadow) {
    if (entry.sequence_id >= 0) return entry.sequence_id;
  }
  return std::nullopt;
}

CallPath MonitorSession::build_path(std::uint64_t thread_id, bool allow_cache) {
  if (active_ == nullptr) throw NoActiveCallback("callpath_get called outside a callback");
  static const ThreadState kEmpty;
  auto it = threads_.find(thread_id);
  const ThreadState& state = it == threads_.end() ? kEmpty : it->second;
  const bool own_thread = thread_id == active_->thread_id;

  std::vector<Frame> scratch;
  std::span<const Frame> native = own_thread ? active_native(scratch, state) : std::span<const Frame>{};
  std::optional<KernelRef> kernel = own_thread ? active_kernel() : std::nullopt;

  std::span<const Frame> python = state.python;
  const auto* sample = own_thread ? active_->get<CpuSample>() : nullptr;
  if (sample != nullptr && sample->python_stack) python = *sample->python_stack;

  if (auto seq = active_backward_sequence(thread_id)) {
    return associate_backward(native, python, *seq, registry_, state.shadow, module_map_, kernel, mask_,
                              &diagnostics_);
  }
  if (allow_cache && use_cache_ && sample == nullptr && state.cache.valid) {
    return cached_callpath(state.cache, mask_.native ? CacheMode::Native : CacheMode::NoNative, native,
                           python, state.shadow, module_map_, kernel, mask_, &diagnostics_);
  }
  return integrate(native, python, state.shadow, module_map_, kernel, mask_, &diagnostics_);
}

CallPath MonitorSession::callpath_get(std::uint64_t thread_id) { return build_path(thread_id, true); }

CallPath MonitorSession::callpath_get_uncached(std::uint64_t thread_id) {
  return build_path(thread_id, false);
}

}  // namespace ctxprof

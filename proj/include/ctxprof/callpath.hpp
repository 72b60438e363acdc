#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxprof/events.hpp"
#include "ctxprof/frame.hpp"

namespace ctxprof {

// Which call-path sources take part in integration. GPU API, kernel and
// instruction frames come from GPU interception and are never masked.
struct SourceMask {
  bool python = true;
  bool framework = true;
  bool native = true;

  static SourceMask all() { return {}; }
  static SourceMask python_only() { return {true, false, false}; }
  SourceMask without_native() const { return {python, framework, false}; }

  bool keeps(FrameKind kind) const;
  bool operator==(const SourceMask&) const = default;
};

// One open framework operator on a thread's shadow stack.
struct ShadowEntry {
  std::string op_name;
  std::uint64_t op_address = 0;
  std::int64_t sequence_id = -1;

  bool operator==(const ShadowEntry&) const = default;
};

struct KernelRef {
  std::string name;
  std::string module_path;
  std::uint64_t pc = 0;
};

// Kernel frame for a launch; anonymous symbols get module "<kernel>" and a
// pc derived from the kernel name.
Frame kernel_frame(const KernelRef& kernel);

struct IntegrationDiagnostics {
  std::size_t shadow_residue = 0;
  std::size_t unknown_sequence_ids = 0;
  std::size_t cache_fallbacks = 0;
};

// Merges native, Python and framework call paths into one root-to-leaf path.
//
// The native path is walked leaf to root. A frame whose pc equals the address
// of the innermost unmatched shadow entry gets that operator inserted directly
// root-ward of it. The leaf-most frame inside a Python runtime module, and
// everything root-ward of it, is replaced by the Python path. Shadow entries
// that never match are placed right below the Python frames. A kernel, when
// given, becomes the new leaf. Masked-out sources are dropped last.
CallPath integrate(std::span<const Frame> native, std::span<const Frame> python,
                   std::span<const ShadowEntry> shadow, const ModuleMap& module_map,
                   const std::optional<KernelRef>& kernel, SourceMask mask,
                   IntegrationDiagnostics* diagnostics = nullptr);

struct ForwardRecord {
  std::uint64_t thread_id = 0;
  CallPath python_stack;
  std::vector<ShadowEntry> framework_prefix;  // outermost first, ends with the forward op
  CallPath context;                            // unmasked integrated path ending at the forward op
};

// Integrated path of the innermost shadow operator at its enter event, ending
// with that operator's frame. Without native frames this is python ++ shadow.
CallPath forward_context(std::span<const Frame> python, std::span<const ShadowEntry> shadow,
                         const std::optional<CallPath>& enter_native, const ModuleMap& module_map);

// Forward operator contexts keyed by autograd sequence id.
class ForwardRegistry {
 public:
  // The first record for a sequence id wins.
  void record(std::int64_t sequence_id, ForwardRecord record);
  const ForwardRecord* find(std::int64_t sequence_id) const;
  std::size_t size() const noexcept { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::map<std::int64_t, ForwardRecord> records_;
};

// Call path for work done on a backward thread: the forward operator's Python
// and framework context sits root-ward of the backward thread's own
// native/kernel frames. Unknown sequence ids fall back to plain integration
// and bump diagnostics->unknown_sequence_ids.
CallPath associate_backward(std::span<const Frame> backward_native,
                            std::span<const Frame> backward_python, std::int64_t sequence_id,
                            const ForwardRegistry& registry,
                            std::span<const ShadowEntry> shadow_backward,
                            const ModuleMap& module_map, const std::optional<KernelRef>& kernel,
                            SourceMask mask, IntegrationDiagnostics* diagnostics = nullptr);

class CacheInvalid : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class CacheMode { NoNative, Native };

// Thread-local snapshot taken when the outermost operator is entered.
struct PathCache {
  CallPath cached_python;
  ShadowEntry cached_op;
  // Integrated frames from the root through the cached operator's frame,
  // present when the entry native stack located the operator.
  std::optional<CallPath> cached_prefix;
  std::size_t op_native_index = 0;  // position of the operator's frame in the enter native stack
  bool valid = false;

  void open(CallPath python, ShadowEntry op, const std::optional<CallPath>& enter_native,
            const ModuleMap& module_map);
  void invalidate();
};

// Produces the same path as integrate() without re-walking the part of the
// native stack above the cached operator. NoNative mode matches integrate()
// with the native source masked out. Throws CacheInvalid on a stale cache.
CallPath cached_callpath(const PathCache& cache, CacheMode mode, std::span<const Frame> native,
                         std::span<const Frame> python, std::span<const ShadowEntry> shadow,
                         const ModuleMap& module_map, const std::optional<KernelRef>& kernel,
                         SourceMask mask, IntegrationDiagnostics* diagnostics = nullptr);

// Every original call path recorded for a fused operator, in trace order.
std::vector<CallPath> resolve_fused(std::string_view fused_op_name,
                                    std::span<const FusionMapping> mappings);

}  // namespace ctxprof

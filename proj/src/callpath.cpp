#include "ctxprof/callpath.hpp"

#include <algorithm>

namespace ctxprof {

namespace {

void apply_mask(CallPath& path, SourceMask mask) {
  std::erase_if(path, [mask](const Frame& f) { return !mask.keeps(f.kind); });
}

// Index of the leaf-most native frame inside a Python runtime module.
std::optional<std::size_t> python_boundary(std::span<const Frame> native, const ModuleMap& module_map) {
  for (std::size_t i = native.size(); i-- > 0;) {
    if (module_map.is_python_runtime(native[i].pc)) return i;
  }
  return std::nullopt;
}

bool has_native_frames(std::span<const Frame> native) {
  return std::any_of(native.begin(), native.end(),
                     [](const Frame& f) { return f.kind == FrameKind::Native; });
}

CallPath integrate_unmasked(std::span<const Frame> native, std::span<const Frame> python,
                            std::span<const ShadowEntry> shadow, const ModuleMap& module_map,
                            const std::optional<KernelRef>& kernel, std::size_t* residue) {
  std::span<const Frame> tail = native;
  if (auto boundary = python_boundary(native, module_map)) tail = native.subspan(*boundary + 1);

  // matched[i] holds the shadow index inserted above tail[i].
  std::vector<std::ptrdiff_t> matched(tail.size(), -1);
  std::ptrdiff_t next = static_cast<std::ptrdiff_t>(shadow.size()) - 1;
  for (std::size_t i = tail.size(); i-- > 0 && next >= 0;) {
    if (tail[i].pc == shadow[static_cast<std::size_t>(next)].op_address) matched[i] = next--;
  }

  CallPath out;
  out.reserve(python.size() + shadow.size() + tail.size() + 1);
  out.insert(out.end(), python.begin(), python.end());
  for (std::ptrdiff_t j = 0; j <= next; ++j) out.push_back(Frame::op(shadow[static_cast<std::size_t>(j)].op_name));
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (matched[i] >= 0) out.push_back(Frame::op(shadow[static_cast<std::size_t>(matched[i])].op_name));
    out.push_back(tail[i]);
  }
  if (kernel) out.push_back(kernel_frame(*kernel));
  if (residue != nullptr) *residue = static_cast<std::size_t>(next + 1);
  return out;
}

CallPath shadow_frames(std::span<const ShadowEntry> shadow) {
  CallPath out;
  out.reserve(shadow.size());
  for (const auto& entry : shadow) out.push_back(Frame::op(entry.op_name));
  return out;
}

}  // namespace

bool SourceMask::keeps(FrameKind kind) const {
  switch (kind) {
    case FrameKind::Python:
      return python;
    case FrameKind::FrameworkOp:
      return framework;
    case FrameKind::Native:
      return native;
    default:
      return true;
  }
}

Frame kernel_frame(const KernelRef& kernel) {
  if (kernel.pc != 0 && !kernel.module_path.empty()) {
    return Frame::kernel(kernel.name, kernel.module_path, kernel.pc);
  }
  return Frame::kernel(kernel.name, "<kernel>", stable_hash(kernel.name));
}

CallPath integrate(std::span<const Frame> native, std::span<const Frame> python,
                   std::span<const ShadowEntry> shadow, const ModuleMap& module_map,
                   const std::optional<KernelRef>& kernel, SourceMask mask,
                   IntegrationDiagnostics* diagnostics) {
  std::size_t residue = 0;
  CallPath out = integrate_unmasked(native, python, shadow, module_map, kernel, &residue);
  if (diagnostics != nullptr && mask.native && has_native_frames(native)) {
    diagnostics->shadow_residue += residue;
  }
  apply_mask(out, mask);
  return out;
}

void ForwardRegistry::record(std::int64_t sequence_id, ForwardRecord record) {
  records_.try_emplace(sequence_id, std::move(record));
}

const ForwardRecord* ForwardRegistry::find(std::int64_t sequence_id) const {
  auto it = records_.find(sequence_id);
  return it == records_.end() ? nullptr : &it->second;
}

CallPath forward_context(std::span<const Frame> python, std::span<const ShadowEntry> shadow,
                         const std::optional<CallPath>& enter_native, const ModuleMap& module_map) {
  if (enter_native && !shadow.empty()) {
    CallPath path = integrate(*enter_native, python, shadow, module_map, std::nullopt, SourceMask::all());
    for (std::size_t i = path.size(); i-- > 0;) {
      if (path[i].kind == FrameKind::FrameworkOp && path[i].name == shadow.back().op_name) {
        path.resize(i + 1);
        return path;
      }
    }
  }
  CallPath out(python.begin(), python.end());
  CallPath ops = shadow_frames(shadow);
  out.insert(out.end(), ops.begin(), ops.end());
  return out;
}

CallPath associate_backward(std::span<const Frame> backward_native,
                            std::span<const Frame> backward_python, std::int64_t sequence_id,
                            const ForwardRegistry& registry,
                            std::span<const ShadowEntry> shadow_backward,
                            const ModuleMap& module_map, const std::optional<KernelRef>& kernel,
                            SourceMask mask, IntegrationDiagnostics* diagnostics) {
  const ForwardRecord* forward = registry.find(sequence_id);
  if (forward == nullptr) {
    if (diagnostics != nullptr) ++diagnostics->unknown_sequence_ids;
    return integrate(backward_native, backward_python, shadow_backward, module_map, kernel, mask,
                     diagnostics);
  }
  std::size_t residue = 0;
  CallPath tail = integrate_unmasked(backward_native, {}, shadow_backward, module_map, kernel, &residue);
  if (diagnostics != nullptr && mask.native && has_native_frames(backward_native)) {
    diagnostics->shadow_residue += residue;
  }
  CallPath out = forward->context;
  if (out.empty()) {
    out = forward->python_stack;
    CallPath ops = shadow_frames(forward->framework_prefix);
    out.insert(out.end(), ops.begin(), ops.end());
  }
  out.insert(out.end(), tail.begin(), tail.end());
  apply_mask(out, mask);
  return out;
}

void PathCache::open(CallPath python, ShadowEntry op, const std::optional<CallPath>& enter_native,
                     const ModuleMap& module_map) {
  cached_python = std::move(python);
  cached_op = std::move(op);
  cached_prefix.reset();
  valid = true;
  if (!enter_native) return;

  // The prefix is what integrate() would emit root-ward of the operator's own
  // implementation frame, with the operator as its last element.
  const std::span<const Frame> native(*enter_native);
  std::span<const Frame> tail = native;
  std::size_t offset = 0;
  if (auto boundary = python_boundary(native, module_map)) {
    offset = *boundary + 1;
    tail = native.subspan(offset);
  }
  for (std::size_t i = tail.size(); i-- > 0;) {
    if (tail[i].pc != cached_op.op_address) continue;
    op_native_index = offset + i;
    CallPath prefix = cached_python;
    prefix.insert(prefix.end(), tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(i));
    prefix.push_back(Frame::op(cached_op.op_name));
    cached_prefix = std::move(prefix);
    return;
  }
}

void PathCache::invalidate() {
  valid = false;
  cached_prefix.reset();
  cached_python.clear();
}

CallPath cached_callpath(const PathCache& cache, CacheMode mode, std::span<const Frame> native,
                         std::span<const Frame> python, std::span<const ShadowEntry> shadow,
                         const ModuleMap& module_map, const std::optional<KernelRef>& kernel,
                         SourceMask mask, IntegrationDiagnostics* diagnostics) {
  if (!cache.valid) throw CacheInvalid("call-path cache used outside an open operator");

  const bool same_python = std::ranges::equal(python, cache.cached_python);
  if (mode == CacheMode::NoNative) {
    if (!same_python) {
      if (diagnostics != nullptr) ++diagnostics->cache_fallbacks;
      return integrate(native, python, shadow, module_map, kernel, mask.without_native(), diagnostics);
    }
    CallPath out = cache.cached_python;
    CallPath ops = shadow_frames(shadow);
    out.insert(out.end(), ops.begin(), ops.end());
    for (const auto& f : native) {
      if (f.kind == FrameKind::GpuApi) out.push_back(f);
    }
    if (kernel) out.push_back(kernel_frame(*kernel));
    apply_mask(out, mask.without_native());
    return out;
  }

  auto fallback = [&] {
    if (diagnostics != nullptr) ++diagnostics->cache_fallbacks;
    return integrate(native, python, shadow, module_map, kernel, mask, diagnostics);
  };
  if (!same_python || !cache.cached_prefix || shadow.empty() ||
      shadow.front().op_address != cache.cached_op.op_address) {
    return fallback();
  }

  // Unwind leaf to root until the cached operator's frame, matching nested
  // operators on the way exactly as integrate() would.
  std::vector<std::ptrdiff_t> matched;
  std::ptrdiff_t next = static_cast<std::ptrdiff_t>(shadow.size()) - 1;
  std::optional<std::size_t> stop;
  for (std::size_t i = native.size(); i-- > 0;) {
    const Frame& f = native[i];
    if (module_map.is_python_runtime(f.pc)) return fallback();
    if (next >= 0 && f.pc == shadow[static_cast<std::size_t>(next)].op_address) {
      if (next == 0) {
        stop = i;
        break;
      }
      matched.push_back(next--);
    } else {
      matched.push_back(-1);
    }
  }
  if (!stop || *stop != cache.op_native_index) return fallback();

  CallPath out = *cache.cached_prefix;
  out.reserve(out.size() + matched.size() + shadow.size() + 2);
  out.push_back(native[*stop]);
  for (std::size_t k = matched.size(); k-- > 0;) {
    const std::size_t native_index = native.size() - 1 - k;
    if (matched[k] >= 0) out.push_back(Frame::op(shadow[static_cast<std::size_t>(matched[k])].op_name));
    out.push_back(native[native_index]);
  }
  if (kernel) out.push_back(kernel_frame(*kernel));
  apply_mask(out, mask);
  return out;
}

std::vector<CallPath> resolve_fused(std::string_view fused_op_name,
                                    std::span<const FusionMapping> mappings) {
  std::vector<CallPath> out;
  for (const auto& mapping : mappings) {
    if (mapping.fused_op_name != fused_op_name) continue;
    out.insert(out.end(), mapping.original_call_paths.begin(), mapping.original_call_paths.end());
  }
  return out;
}

}  // namespace ctxprof

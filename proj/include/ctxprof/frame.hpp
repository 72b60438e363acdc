#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctxprof {

enum class FrameKind : std::uint8_t {
  Python,
  FrameworkOp,
  Native,
  GpuApi,
  Kernel,
  Instruction,
};

std::string_view to_string(FrameKind kind);
std::optional<FrameKind> frame_kind_from_string(std::string_view text);

// One level of a cross-layer call path. Which fields are meaningful depends on
// the kind: Python frames use file/line, framework operators use name, and
// everything that lives in a binary uses module_path/pc.
struct Frame {
  FrameKind kind = FrameKind::Native;
  std::string name;
  std::string module_path;
  std::uint64_t pc = 0;
  std::string file;
  std::uint32_t line = 0;

  bool operator==(const Frame&) const = default;

  static Frame python(std::string function, std::string file, std::uint32_t line);
  static Frame op(std::string name);
  static Frame native(std::string name, std::string module_path, std::uint64_t pc);
  static Frame gpu_api(std::string name, std::string module_path, std::uint64_t pc);
  static Frame kernel(std::string name, std::string module_path, std::uint64_t pc);
  static Frame instruction(std::string module_path, std::uint64_t pc);
};

using CallPath = std::vector<Frame>;

// Returns an empty string when the frame is well formed, otherwise a short
// description of the violated invariant.
std::string frame_invariant_violation(const Frame& frame);

// Frame identity used to merge calling-context-tree nodes. Binary frames
// compare by (module, pc), Python frames by (file, line) and framework
// operators by name. The kind participates so different layers never collide.
struct IdentityKey {
  FrameKind kind = FrameKind::Native;
  std::string text;
  std::uint64_t number = 0;

  bool operator==(const IdentityKey&) const = default;
  auto operator<=>(const IdentityKey&) const = default;
};

IdentityKey frame_identity_key(const Frame& frame);

struct IdentityKeyHash {
  std::size_t operator()(const IdentityKey& key) const noexcept;
};

// Human-readable label: "file:line" for Python, the symbol name otherwise,
// falling back to "module@0xpc" for anonymous binary frames.
std::string frame_label(const Frame& frame);

// Like frame_label but prefers the Python function name when one is recorded.
std::string frame_display_name(const Frame& frame);

// 64-bit FNV-1a; used for synthetic program counters of named entities.
std::uint64_t stable_hash(std::string_view text);

}  // namespace ctxprof

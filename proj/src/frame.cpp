#include "ctxprof/frame.hpp"

#include <array>
#include <cstdio>

namespace ctxprof {

namespace {

constexpr std::array<std::string_view, 6> kKindNames = {
    "python", "op", "native", "gpu_api", "kernel", "instruction"};

std::string hex_pc(std::uint64_t pc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(pc));
  return buf;
}

}  // namespace

std::string_view to_string(FrameKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<FrameKind> frame_kind_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == text) return static_cast<FrameKind>(i);
  }
  return std::nullopt;
}

Frame Frame::python(std::string function, std::string file, std::uint32_t line) {
  return Frame{FrameKind::Python, std::move(function), {}, 0, std::move(file), line};
}

Frame Frame::op(std::string name) {
  return Frame{FrameKind::FrameworkOp, std::move(name), {}, 0, {}, 0};
}

Frame Frame::native(std::string name, std::string module_path, std::uint64_t pc) {
  return Frame{FrameKind::Native, std::move(name), std::move(module_path), pc, {}, 0};
}

Frame Frame::gpu_api(std::string name, std::string module_path, std::uint64_t pc) {
  return Frame{FrameKind::GpuApi, std::move(name), std::move(module_path), pc, {}, 0};
}

Frame Frame::kernel(std::string name, std::string module_path, std::uint64_t pc) {
  return Frame{FrameKind::Kernel, std::move(name), std::move(module_path), pc, {}, 0};
}

Frame Frame::instruction(std::string module_path, std::uint64_t pc) {
  return Frame{FrameKind::Instruction, {}, std::move(module_path), pc, {}, 0};
}

std::string frame_invariant_violation(const Frame& frame) {
  switch (frame.kind) {
    case FrameKind::Python:
      if (frame.file.empty()) return "python frame without file";
      if (frame.line == 0) return "python frame without line";
      return {};
    case FrameKind::FrameworkOp:
      if (frame.name.empty()) return "framework operator frame without name";
      return {};
    case FrameKind::Native:
    case FrameKind::GpuApi:
    case FrameKind::Kernel:
    case FrameKind::Instruction:
      if (frame.module_path.empty()) return std::string(to_string(frame.kind)) + " frame without module_path";
      if (frame.pc == 0) return std::string(to_string(frame.kind)) + " frame without pc";
      return {};
  }
  return "unknown frame kind";
}

IdentityKey frame_identity_key(const Frame& frame) {
  switch (frame.kind) {
    case FrameKind::Python:
      return {frame.kind, frame.file, frame.line};
    case FrameKind::FrameworkOp:
      return {frame.kind, frame.name, 0};
    default:
      return {frame.kind, frame.module_path, frame.pc};
  }
}

std::size_t IdentityKeyHash::operator()(const IdentityKey& key) const noexcept {
  std::size_t h = std::hash<std::string>{}(key.text);
  h ^= std::hash<std::uint64_t>{}(key.number) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= static_cast<std::size_t>(key.kind) * 0x100000001b3ULL;
  return h;
}

std::string frame_label(const Frame& frame) {
  switch (frame.kind) {
    case FrameKind::Python:
      return frame.file + ":" + std::to_string(frame.line);
    case FrameKind::FrameworkOp:
      return frame.name;
    default:
      if (!frame.name.empty()) return frame.name;
      return frame.module_path + "@" + hex_pc(frame.pc);
  }
}

std::string frame_display_name(const Frame& frame) {
  if (frame.kind == FrameKind::Python && !frame.name.empty()) return frame.name;
  return frame_label(frame);
}

std::uint64_t stable_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h == 0 ? 1 : h;
}

}  // namespace ctxprof

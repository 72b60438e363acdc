#include "ctxprof/events.hpp"

#include <array>
#include <stdexcept>

namespace ctxprof {

namespace {

constexpr std::array<std::string_view, 5> kActivityNames = {"kernel", "memcpy", "memset", "alloc",
                                                            "free"};
constexpr std::array<std::string_view, 2> kSampleNames = {"cpu_time", "real_time"};
constexpr std::array<std::string_view, 3> kRoleNames = {"forward", "backward", "worker"};

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names, std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

}  // namespace

const ModuleRange* ModuleMap::find(std::uint64_t pc) const {
  for (const auto& entry : entries) {
    if (pc >= entry.base_pc && pc < entry.end_pc) return &entry;
  }
  return nullptr;
}

bool ModuleMap::is_python_runtime(std::uint64_t pc) const {
  const ModuleRange* range = find(pc);
  return range != nullptr && range->is_python_runtime;
}

void ModuleMap::merge(const ModuleMap& other) {
  for (const auto& incoming : other.entries) {
    if (incoming.end_pc < incoming.base_pc) {
      throw std::invalid_argument("module range for " + incoming.module_path + " is inverted");
    }
    for (const auto& existing : entries) {
      if (incoming.base_pc < existing.end_pc && existing.base_pc < incoming.end_pc) {
        throw std::invalid_argument("module range for " + incoming.module_path +
                                    " overlaps " + existing.module_path);
      }
    }
    entries.push_back(incoming);
  }
}

std::string_view event_tag(const EventPayload& payload) {
  static constexpr std::array<std::string_view, 9> kTags = {
      "op_enter",     "op_exit", "gpu_api",    "gpu_activity", "cpu_sample",
      "inst_samples", "fusion",  "module_map", "thread_role"};
  return kTags[payload.index()];
}

std::string_view to_string(ActivityKind kind) { return kActivityNames[static_cast<std::size_t>(kind)]; }

std::optional<ActivityKind> activity_kind_from_string(std::string_view text) {
  return lookup<ActivityKind>(kActivityNames, text);
}

std::string_view to_string(SampleKind kind) { return kSampleNames[static_cast<std::size_t>(kind)]; }

std::optional<SampleKind> sample_kind_from_string(std::string_view text) {
  return lookup<SampleKind>(kSampleNames, text);
}

std::string_view to_string(ThreadRoleKind kind) { return kRoleNames[static_cast<std::size_t>(kind)]; }

std::optional<ThreadRoleKind> thread_role_from_string(std::string_view text) {
  return lookup<ThreadRoleKind>(kRoleNames, text);
}

}  // namespace ctxprof

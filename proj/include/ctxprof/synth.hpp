#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "ctxprof/events.hpp"

namespace ctxprof {

enum class Scenario { DlrmIndex, UnetLayout, TransformerLoss, UnetCpu, StallDemo, RandomTree };

std::string_view to_string(Scenario scenario);
std::optional<Scenario> scenario_from_string(std::string_view text);

using EventSink = std::function<void(const TraceEvent&)>;

// Deterministic for (scenario, seed, scale); scale must be at least 1.
// RandomTree emits roughly 1000 * scale events and is produced incrementally;
// the fixture scenarios repeat their iteration pattern scale times.
void generate_synthetic_trace(Scenario scenario, std::uint64_t seed, std::uint32_t scale, const EventSink& sink);
std::vector<TraceEvent> generate_synthetic_trace(Scenario scenario, std::uint64_t seed, std::uint32_t scale);

// Reference numbers the fixture scenarios are built to reproduce.
namespace fixture {
inline constexpr std::string_view kDlrmHotKernel = "indexing_backward_kernel";
inline constexpr std::string_view kDlrmIndexOp = "aten::index";
inline constexpr std::string_view kTransformerLossFrame = "loss_fn";
inline constexpr std::string_view kUnetDataFrame = "data_selection";
inline constexpr std::string_view kStallKernel = "unrolled_elementwise_kernel<copy_half_to_float>";
}  // namespace fixture

}  // namespace ctxprof

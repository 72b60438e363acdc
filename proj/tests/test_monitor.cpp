#include <doctest.h>

#include <algorithm>

#include "ctxprof/monitor.hpp"
#include "ctxprof/synth.hpp"

using namespace ctxprof;

namespace {

TraceEvent at(std::uint64_t ts, std::uint64_t tid, EventPayload payload) {
  return TraceEvent{0, ts, tid, std::move(payload)};
}

ModuleMap conv_map() {
  return ModuleMap{{{"app", 0x0, 0x100, false}, {"libpython.so", 0x800, 0xA00, true},
                    {"libfw.so", 0x4000, 0x5000, false}, {"libcuda.so", 0x6000, 0x7000, false}}};
}

// One conv2d launch with a full native stack.
std::vector<TraceEvent> conv_trace() {
  const CallPath python = {Frame::python("train", "train.py", 10), Frame::python("forward", "model.py", 42)};
  const CallPath enter_native = {Frame::native("main", "app", 0x10), Frame::native("pyeval", "libpython.so", 0x900),
                                 Frame::native("conv2d::call", "libfw.so", 0x4F10)};
  CallPath launch_native = enter_native;
  launch_native.push_back(Frame::native("conv_impl", "libfw.so", 0x4F80));
  launch_native.push_back(Frame::gpu_api("cudaLaunchKernel", "libcuda.so", 0x6010));
  GpuApiCall call;
  call.api_name = "cudaLaunchKernel";
  call.correlation_id = 1;
  call.kernel_name = "conv_kern";
  call.kernel_module_path = "libcudnn.so";
  call.kernel_pc = 0x9;
  call.native_stack = launch_native;
  return {at(0, 0, conv_map()),
          at(1, 1, OperatorEnter{"aten::conv2d", 0x4F10, -1, python, enter_native}),
          at(2, 1, call),
          at(3, 1, OperatorExit{"aten::conv2d", 0x4F10, -1})};
}

std::vector<CallPath> launch_paths(MonitorSession& session, std::span<const TraceEvent> events) {
  std::vector<CallPath> paths;
  session.callback_register(Domain::Gpu, Phase::Before,
                            [&](const CallbackContext& ctx) { paths.push_back(ctx.session.callpath_get()); });
  session.replay(events);
  return paths;
}

}  // namespace

TEST_CASE("session lifecycle") {
  MonitorSession session;
  CHECK(session.registration_count() == 0);
  int fired = 0;
  session.callback_register(Domain::Framework, Phase::Before, [&](const CallbackContext&) { ++fired; });
  CHECK(session.registration_count() == 1);
  session.finalize();
  CHECK(fired == 0);
  CHECK(session.registration_count() == 0);
  CHECK_NOTHROW(session.finalize());
  CHECK_THROWS_AS(session.callback_register(Domain::Gpu, Phase::Before, [](const CallbackContext&) {}),
                  SessionFinalized);
  session.replay(conv_trace());
  CHECK(fired == 0);
}

TEST_CASE("empty replay yields zero stats") {
  MonitorSession session;
  CHECK(session.replay({}) == ReplayStats{});
}

TEST_CASE("framework callback sees the operator") {
  MonitorSession session;
  std::vector<std::string> seen;
  session.callback_register(Domain::Framework, Phase::Before, [&](const CallbackContext& ctx) {
    if (const auto* enter = ctx.event.get<OperatorEnter>()) seen.push_back(enter->op_name);
  });
  const std::vector<TraceEvent> events = {at(1, 1, OperatorEnter{"aten::matmul", 0x10, -1, {}, std::nullopt})};
  const auto stats = session.replay(events);
  CHECK(seen == std::vector<std::string>{"aten::matmul"});
  CHECK(stats.callbacks_fired == 1);
  CHECK(session.shadow_depth(1) == 1);
}

TEST_CASE("enter then exit restores the shadow stack") {
  MonitorSession session;
  session.replay(std::vector<TraceEvent>{at(1, 1, OperatorEnter{"aten::matmul", 0x10, -1, {}, std::nullopt}),
                                         at(2, 1, OperatorExit{"aten::matmul", 0x10, -1})});
  CHECK(session.shadow_depth(1) == 0);
}

TEST_CASE("gpu callbacks fire once per api call") {
  const auto events = generate_synthetic_trace(Scenario::StallDemo, 1, 1);
  const auto expected = std::count_if(events.begin(), events.end(),
                                      [](const TraceEvent& e) { return e.get<GpuApiCall>() != nullptr; });
  MonitorSession session;
  std::int64_t fired = 0;
  session.callback_register(Domain::Gpu, Phase::Before, [&](const CallbackContext&) { ++fired; });
  session.replay(events);
  CHECK(expected > 0);
  CHECK(fired == expected);
}

TEST_CASE("forward registry snapshots the forward thread") {
  const CallPath python = {Frame::python("forward", "model.py", 5)};
  const std::vector<TraceEvent> events = {
      at(0, 0, ThreadRole{1, ThreadRoleKind::Forward, 0}),
      at(0, 0, ThreadRole{2, ThreadRoleKind::Backward, 0}),
      at(1, 1, OperatorEnter{"aten::index", 0x10, 7, python, std::nullopt}),
      at(2, 1, OperatorExit{"aten::index", 0x10, 7}),
      at(3, 2, OperatorEnter{"IndexBackward0", 0x20, 7, {}, std::nullopt}),
      at(4, 2, OperatorExit{"IndexBackward0", 0x20, 7}),
  };
  MonitorSession session;
  session.replay(events);
  const ForwardRecord* record = session.forward_registry().find(7);
  REQUIRE(record != nullptr);
  CHECK(record->thread_id == 1);
  CHECK(record->python_stack == python);
  CHECK(session.forward_registry().size() == 1);
}

TEST_CASE("call path at a conv2d launch is ordered by source") {
  MonitorSession session(ModuleMap{}, SourceMask::all());
  const auto paths = launch_paths(session, conv_trace());
  REQUIRE(paths.size() == 1);
  std::vector<FrameKind> kinds;
  for (const auto& f : paths[0]) kinds.push_back(f.kind);
  CHECK(kinds == std::vector<FrameKind>{FrameKind::Python, FrameKind::Python, FrameKind::FrameworkOp,
                                        FrameKind::Native, FrameKind::Native, FrameKind::GpuApi, FrameKind::Kernel});
  CHECK(paths[0][2].name == "aten::conv2d");
  CHECK(paths[0].back().name == "conv_kern");
}

TEST_CASE("source masks filter call paths") {
  {
    MonitorSession session(ModuleMap{}, SourceMask::all().without_native());
    const auto paths = launch_paths(session, conv_trace());
    REQUIRE(paths.size() == 1);
    for (const auto& f : paths[0]) CHECK(f.kind != FrameKind::Native);
  }
  {
    MonitorSession session(ModuleMap{}, SourceMask::python_only());
    std::vector<CallPath> paths;
    session.callback_register(Domain::Framework, Phase::Before,
                              [&](const CallbackContext& ctx) { paths.push_back(ctx.session.callpath_get()); });
    session.replay(conv_trace());
    REQUIRE(paths.size() == 2);
    CHECK(paths[0] == CallPath{Frame::python("train", "train.py", 10), Frame::python("forward", "model.py", 42)});
  }
  {
    MonitorSession session(ModuleMap{}, SourceMask::all().without_native());
    const auto events = generate_synthetic_trace(Scenario::DlrmIndex, 1, 1);
    const auto paths = launch_paths(session, std::span(events).first(2000));
    REQUIRE_FALSE(paths.empty());
    for (const auto& p : paths) {
      CHECK(std::none_of(p.begin(), p.end(), [](const Frame& f) { return f.kind == FrameKind::Native; }));
    }
  }
}

TEST_CASE("callpath_get outside a callback throws") {
  MonitorSession session;
  CHECK_THROWS_AS(session.callpath_get(1), NoActiveCallback);
  session.replay(conv_trace());
  CHECK_THROWS_AS(session.callpath_get(1), NoActiveCallback);
}

TEST_CASE("cached and uncached call paths agree during replay") {
  std::size_t compared = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto events = generate_synthetic_trace(Scenario::RandomTree, seed, 1);
    for (SourceMask mask : {SourceMask::all(), SourceMask::all().without_native()}) {
      MonitorSession session(ModuleMap{}, mask);
      session.callback_register(Domain::Gpu, Phase::Before, [&](const CallbackContext& ctx) {
        const auto tid = ctx.event.thread_id;
        REQUIRE(ctx.session.callpath_get(tid) == ctx.session.callpath_get_uncached(tid));
        ++compared;
      });
      session.replay(events);
    }
  }
  CHECK(compared > 1000);
}

TEST_CASE("replay restarts from a clean registry") {
  const auto events = generate_synthetic_trace(Scenario::DlrmIndex, 1, 1);
  MonitorSession session;
  session.replay(std::span(events).first(500));
  const auto first = session.forward_registry().size();
  session.replay(std::span(events).first(500));
  CHECK(session.forward_registry().size() == first);
}

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctxprof/callpath.hpp"

namespace ctxprof::test {

// One logical replay state at a GPU API call: the thread's python stack,
// shadow stack, the native stack seen when the outermost operator entered
// and the native stack at the call itself.
struct ReplayState {
  ModuleMap module_map;
  CallPath python;
  std::vector<ShadowEntry> shadow;
  CallPath enter_native;
  CallPath native;
  std::optional<KernelRef> kernel;
  SourceMask mask;
};

inline ModuleMap fuzz_module_map() {
  return ModuleMap{{{"app", 0x100, 0x1000, false},
                    {"libpython.so", 0x1000, 0x2000, true},
                    {"libtorch.so", 0x10000, 0x20000, false},
                    {"libcudart.so", 0x30000, 0x31000, false}}};
}

inline ReplayState fuzz_replay_state(std::mt19937_64& rng) {
  auto chance = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
  auto upto = [&](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };

  ReplayState s;
  s.module_map = fuzz_module_map();
  const int python_depth = upto(5);
  for (int i = 0; i < python_depth; ++i) {
    s.python.push_back(Frame::python("f" + std::to_string(upto(4)), "m" + std::to_string(upto(3)) + ".py",
                                     static_cast<std::uint32_t>(1 + upto(50))));
  }

  // A small address pool so recursive and repeated operators occur.
  auto op_address = [&](int id) { return 0x10000 + 0x100 * static_cast<std::uint64_t>(id); };
  const int depth = 1 + upto(4);
  for (int i = 0; i < depth; ++i) {
    const int id = upto(5);
    s.shadow.push_back({"aten::op" + std::to_string(id), op_address(id), chance(0.3) ? upto(100) : -1});
  }

  s.enter_native.push_back(Frame::native("main", "app", 0x110));
  if (chance(0.85)) {
    s.enter_native.push_back(Frame::native("_PyEval_EvalFrameDefault", "libpython.so", 0x1100 + 0x10 * upto(4)));
  }
  const int bindings = upto(3);
  for (int i = 0; i < bindings; ++i) {
    s.enter_native.push_back(Frame::native("binding" + std::to_string(i), "libtorch.so", 0x18000 + 0x10 * upto(8)));
  }
  if (chance(0.92)) {
    s.enter_native.push_back(Frame::native("op_call", "libtorch.so", s.shadow.front().op_address));
  }

  s.native = s.enter_native;
  for (std::size_t j = 1; j < s.shadow.size(); ++j) {
    const int impl = upto(3);
    for (int i = 0; i < impl; ++i) {
      s.native.push_back(Frame::native("impl", "libtorch.so", 0x19000 + 0x10 * upto(8)));
    }
    if (chance(0.05)) s.native.push_back(Frame::native("PyObject_Call", "libpython.so", 0x1800));
    if (chance(0.85)) s.native.push_back(Frame::native("op_call", "libtorch.so", s.shadow[j].op_address));
  }
  const int leaf_impl = upto(3);
  for (int i = 0; i < leaf_impl; ++i) {
    s.native.push_back(Frame::native("kernel_impl", "libtorch.so", 0x1A000 + 0x10 * upto(8)));
  }
  if (chance(0.9)) s.native.push_back(Frame::gpu_api("cudaLaunchKernel", "libcudart.so", 0x30010));

  if (chance(0.8)) {
    const int k = upto(6);
    s.kernel = chance(0.5) ? KernelRef{"kern" + std::to_string(k), "lib.cubin", 0x40 + static_cast<std::uint64_t>(k)}
                           : KernelRef{"kern" + std::to_string(k), "", 0};
  }
  s.mask = SourceMask{chance(0.8), chance(0.8), chance(0.8)};
  return s;
}

inline CallPath gpu_api_frames(const CallPath& native) {
  CallPath out;
  for (const auto& f : native) {
    if (f.kind == FrameKind::GpuApi) out.push_back(f);
  }
  return out;
}

}  // namespace ctxprof::test

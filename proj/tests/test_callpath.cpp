#include <doctest.h>

#include <random>

#include "ctxprof/callpath.hpp"
#include "fuzz_states.hpp"

using namespace ctxprof;

namespace {

ModuleMap example_map() { return ModuleMap{{{"libpython.so", 0x800, 0xA00, true}}}; }

const CallPath kExampleNative = {Frame::native("main", "app", 0x10), Frame::native("pyeval", "libpython.so", 0x900),
                                 Frame::native("op_impl", "libfw.so", 0x4F10),
                                 Frame::gpu_api("cudaLaunch", "libcuda.so", 0x77)};
const CallPath kExamplePython = {Frame::python("train", "train.py", 10), Frame::python("forward", "model.py", 42)};
const std::vector<ShadowEntry> kExampleShadow = {{"aten::conv2d", 0x4F10, -1}};
const KernelRef kConvKernel{"conv_kern", "libcudnn.so", 0x9};

}  // namespace

TEST_CASE("integrate merges python, operator, native and kernel frames") {
  const CallPath out =
      integrate(kExampleNative, kExamplePython, kExampleShadow, example_map(), kConvKernel, SourceMask::all());
  const CallPath expected = {kExamplePython[0],
                             kExamplePython[1],
                             Frame::op("aten::conv2d"),
                             Frame::native("op_impl", "libfw.so", 0x4F10),
                             Frame::gpu_api("cudaLaunch", "libcuda.so", 0x77),
                             Frame::kernel("conv_kern", "libcudnn.so", 0x9)};
  CHECK(out == expected);
}

TEST_CASE("integrate degenerates to single sources") {
  CHECK(integrate({}, kExamplePython, {}, example_map(), std::nullopt, SourceMask::python_only()) == kExamplePython);
  CHECK(integrate(kExampleNative, kExamplePython, kExampleShadow, example_map(), std::nullopt,
                  SourceMask::python_only()) ==
        CallPath{kExamplePython[0], kExamplePython[1], kExampleNative[3]});

  const CallPath plain = {Frame::native("main", "app", 0x10), Frame::native("work", "app", 0x20)};
  CHECK(integrate(plain, {}, {}, example_map(), std::nullopt, SourceMask::all()) == plain);
}

TEST_CASE("masking native frames keeps gpu frames") {
  const CallPath out = integrate(kExampleNative, kExamplePython, kExampleShadow, example_map(), kConvKernel,
                                 SourceMask::all().without_native());
  for (const auto& f : out) CHECK(f.kind != FrameKind::Native);
  CHECK(out.size() == 5);
  CHECK(out.back().kind == FrameKind::Kernel);
}

TEST_CASE("unmatched shadow entries follow the python frames") {
  const std::vector<ShadowEntry> shadow = {{"aten::linear", 0x5000, -1}, {"aten::conv2d", 0x4F10, -1}};
  IntegrationDiagnostics diag;
  const CallPath out = integrate(kExampleNative, kExamplePython, shadow, example_map(), std::nullopt,
                                 SourceMask::all(), &diag);
  REQUIRE(out.size() == 6);
  CHECK(out[2] == Frame::op("aten::linear"));
  CHECK(out[3] == Frame::op("aten::conv2d"));
  CHECK(diag.shadow_residue == 1);
}

TEST_CASE("recursive operators match the innermost frame first") {
  const std::vector<ShadowEntry> shadow = {{"aten::to", 0x4000, -1}, {"aten::to", 0x4000, -1}};
  const CallPath native = {Frame::native("a", "lib", 0x4000), Frame::native("b", "lib", 0x4100),
                           Frame::native("c", "lib", 0x4000)};
  const CallPath out = integrate(native, {}, shadow, {}, std::nullopt, SourceMask::all());
  const CallPath expected = {Frame::op("aten::to"), native[0], native[1], Frame::op("aten::to"), native[2]};
  CHECK(out == expected);
}

TEST_CASE("backward paths reuse the forward context") {
  ForwardRegistry registry;
  const CallPath forward_python = {Frame::python("train", "train.py", 10), Frame::python("forward", "model.py", 7)};
  const std::vector<ShadowEntry> forward_shadow = {{"aten::index", 0x4F10, 7}};
  registry.record(7, {1, forward_python, forward_shadow, {}});
  // The first record wins.
  registry.record(7, {3, {}, {}, {}});
  REQUIRE(registry.find(7) != nullptr);
  CHECK(registry.find(7)->thread_id == 1);

  const CallPath grad_a = {Frame::native("thread_main", "libtorch.so", 0x100),
                           Frame::native("IndexBackward0::apply", "libtorch.so", 0x200)};
  const CallPath grad_b = {Frame::native("thread_main", "libtorch.so", 0x100),
                           Frame::native("IndexPutBackward::apply", "libtorch.so", 0x300)};
  IntegrationDiagnostics diag;
  const CallPath a = associate_backward(grad_a, {}, 7, registry, {}, {}, KernelRef{"k1", "", 0}, SourceMask::all(),
                                        &diag);
  const CallPath b = associate_backward(grad_b, {}, 7, registry, {}, {}, KernelRef{"k2", "", 0}, SourceMask::all(),
                                        &diag);
  const CallPath prefix = {forward_python[0], forward_python[1], Frame::op("aten::index")};
  REQUIRE(a.size() > prefix.size());
  CHECK(CallPath(a.begin(), a.begin() + 3) == prefix);
  CHECK(CallPath(b.begin(), b.begin() + 3) == prefix);
  CHECK(a[3] == grad_a[0]);
  CHECK(diag.unknown_sequence_ids == 0);

  const CallPath own_python = {Frame::python("engine", "autograd.py", 1)};
  const CallPath fallback = associate_backward(grad_a, own_python, 99, registry, {}, {}, std::nullopt,
                                               SourceMask::all(), &diag);
  CHECK(diag.unknown_sequence_ids == 1);
  CHECK(fallback == integrate(grad_a, own_python, {}, {}, std::nullopt, SourceMask::all()));
}

TEST_CASE("forward context keeps native frames between python and the operator") {
  const CallPath enter = {Frame::native("main", "app", 0x10), Frame::native("pyeval", "libpython.so", 0x900),
                          Frame::native("THPVariable_getitem", "libtp.so", 0x3000),
                          Frame::native("index::call", "libfw.so", 0x4F10)};
  const std::vector<ShadowEntry> shadow = {{"aten::index", 0x4F10, 3}};
  const CallPath context = forward_context(kExamplePython, shadow, enter, example_map());
  const CallPath expected = {kExamplePython[0], kExamplePython[1], enter[2], Frame::op("aten::index")};
  CHECK(context == expected);
  CHECK(forward_context(kExamplePython, shadow, std::nullopt, example_map()) ==
        CallPath{kExamplePython[0], kExamplePython[1], Frame::op("aten::index")});
}

TEST_CASE("cached call paths equal integrate on fuzzed replay states") {
  std::mt19937_64 rng(2024);
  std::size_t native_hits = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = test::fuzz_replay_state(rng);
    PathCache cache;
    cache.open(s.python, s.shadow.front(), s.enter_native, s.module_map);
    IntegrationDiagnostics diag;
    const CallPath expected = integrate(s.native, s.python, s.shadow, s.module_map, s.kernel, s.mask);
    const CallPath cached =
        cached_callpath(cache, CacheMode::Native, s.native, s.python, s.shadow, s.module_map, s.kernel, s.mask, &diag);
    REQUIRE(cached == expected);
    native_hits += diag.cache_fallbacks == 0 ? 1 : 0;

    PathCache python_cache;
    python_cache.open(s.python, s.shadow.front(), std::nullopt, s.module_map);
    const CallPath gpu_only = test::gpu_api_frames(s.native);
    const CallPath no_native = cached_callpath(python_cache, CacheMode::NoNative, gpu_only, s.python, s.shadow,
                                               s.module_map, s.kernel, s.mask);
    REQUIRE(no_native ==
            integrate(gpu_only, s.python, s.shadow, s.module_map, s.kernel, s.mask.without_native()));
  }
  // Most states take the cached route rather than the fallback.
  CHECK(native_hits > 1000);
}

TEST_CASE("cache lifecycle") {
  PathCache cache;
  cache.open(kExamplePython, kExampleShadow.front(), std::nullopt, example_map());
  CHECK(cached_callpath(cache, CacheMode::NoNative, {}, kExamplePython, {}, example_map(), std::nullopt,
                        SourceMask::all()) == kExamplePython);
  cache.invalidate();
  CHECK_THROWS_AS(cached_callpath(cache, CacheMode::Native, kExampleNative, kExamplePython, kExampleShadow,
                                  example_map(), std::nullopt, SourceMask::all()),
                  CacheInvalid);
}

TEST_CASE("resolve_fused returns original paths in trace order") {
  const CallPath a = {Frame::python("f", "a.py", 1)};
  const CallPath b = {Frame::python("g", "b.py", 2)};
  const CallPath c = {Frame::python("h", "c.py", 3)};
  const std::vector<FusionMapping> mappings = {{"mul_add_1", {a, b}}, {"other", {c}}, {"mul_add_1", {c}}};
  CHECK(resolve_fused("mul_add_1", std::span(mappings).first(1)) == std::vector<CallPath>{a, b});
  CHECK(resolve_fused("mul_add_1", mappings) == std::vector<CallPath>{a, b, c});
  CHECK(resolve_fused("absent", mappings).empty());
}

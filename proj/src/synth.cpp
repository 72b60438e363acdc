#include "ctxprof/synth.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

namespace ctxprof {

namespace {

// ---------------------------------------------------------------------------
// Address space shared by every scenario.

enum Lib : std::size_t {
  kPythonBin,
  kLibPython,
  kTorchPython,
  kTorchCpu,
  kTorchCuda,
  kCudart,
  kLibc,
  kCudnn,
  kTorchCubin,
  kCudnnCubin,
  kLibCount,
};

struct LibInfo {
  std::string_view path;
  std::uint64_t base;
  bool python_runtime;
};

constexpr std::uint64_t kLibSpan = 0x1000000;

constexpr std::array<LibInfo, kLibCount> kLibs = {{
    {"/usr/bin/python3.10", 0x400000, false},
    {"/usr/lib/libpython3.10.so.1.0", 0x7f0000000000, true},
    {"torch/lib/libtorch_python.so", 0x7f1000000000, false},
    {"torch/lib/libtorch_cpu.so", 0x7f2000000000, false},
    {"torch/lib/libtorch_cuda.so", 0x7f3000000000, false},
    {"/usr/local/cuda/lib64/libcudart.so.12", 0x7f4000000000, false},
    {"/lib/x86_64-linux-gnu/libc.so.6", 0x7f5000000000, false},
    {"/usr/lib/libcudnn_cnn_infer.so.8", 0x7f6000000000, false},
    {"torch/lib/libtorch_cuda.so[cubin]", 0x7f7000000000, false},
    {"/usr/lib/libcudnn_cnn_infer.so.8[cubin]", 0x7f8000000000, false},
}};

ModuleMap standard_module_map() {
  ModuleMap map;
  for (const auto& lib : kLibs) {
    map.entries.push_back({std::string(lib.path), lib.base, lib.base + kLibSpan, lib.python_runtime});
  }
  return map;
}

std::uint64_t symbol_pc(Lib lib, std::string_view symbol) {
  const std::uint64_t slots = (kLibSpan - 0x1000) / 0x100;
  return kLibs[lib].base + 0x100 + (stable_hash(symbol) % slots) * 0x100;
}

Frame nat(Lib lib, std::string_view symbol) {
  return Frame::native(std::string(symbol), std::string(kLibs[lib].path), symbol_pc(lib, symbol));
}

Frame launch_api() { return Frame::gpu_api("cudaLaunchKernel", std::string(kLibs[kCudart].path), symbol_pc(kCudart, "cudaLaunchKernel")); }

Frame memcpy_api() {
  return Frame::gpu_api("cudaMemcpyAsync", std::string(kLibs[kCudart].path), symbol_pc(kCudart, "cudaMemcpyAsync"));
}

// "aten::index" dispatches through "at::_ops::index::call".
std::string op_symbol(std::string_view op) {
  if (op.starts_with("aten::")) op.remove_prefix(6);
  return "at::_ops::" + std::string(op) + "::call";
}

std::uint64_t op_address(std::string_view op) { return symbol_pc(kTorchCpu, op_symbol(op)); }

Frame op_call_frame(std::string_view op) { return nat(kTorchCpu, op_symbol(op)); }

CallPath python_native_base(std::string_view binding) {
  return {nat(kPythonBin, "_start"), nat(kLibPython, "Py_RunMain"), nat(kLibPython, "_PyEval_EvalFrameDefault"),
          nat(kTorchPython, binding)};
}

Frame py(std::string_view function, std::string_view file, std::uint32_t line) {
  return Frame::python(std::string(function), std::string(file), line);
}

CallPath concat(CallPath a, const CallPath& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// ---------------------------------------------------------------------------
// In-memory builder for the fixture scenarios. Threads keep their own clock;
// events are merged by timestamp at the end.

class FixtureWriter {
 public:
  static constexpr std::uint64_t kFlushThread = 0;
  static constexpr std::uint64_t kEventCostNs = 2'000;

  explicit FixtureWriter(std::uint64_t seed) : rng_(seed) {
    add(kFlushThread, standard_module_map(), /*cost=*/0);
  }

  std::uint64_t now(std::uint64_t tid) { return clocks_[tid]; }
  void set_clock(std::uint64_t tid, std::uint64_t ts) { clocks_[tid] = std::max(clocks_[tid], ts); }
  void sync(std::uint64_t tid, std::uint64_t other) { set_clock(tid, now(other)); }

  // Small deterministic CPU-side jitter; GPU durations are never jittered.
  void jitter(std::uint64_t tid) { clocks_[tid] += std::uniform_int_distribution<std::uint64_t>(0, 500)(rng_); }

  void role(std::uint64_t tid, ThreadRoleKind role) { add(kFlushThread, ThreadRole{tid, role, 0}, /*cost=*/0); }

  void enter(std::uint64_t tid, std::string_view op, std::uint64_t address, std::int64_t seq, CallPath python,
             std::optional<CallPath> native) {
    add(tid, OperatorEnter{std::string(op), address, seq, std::move(python), std::move(native)});
  }

  void exit(std::uint64_t tid, std::string_view op, std::uint64_t address, std::int64_t seq) {
    add(tid, OperatorExit{std::string(op), address, seq});
  }

  std::uint64_t launch(std::uint64_t tid, std::optional<CallPath> native, std::string_view kernel, Lib cubin,
                       std::uint64_t duration_ns, std::map<std::string, std::int64_t> extra = {}) {
    const std::uint64_t corr = next_corr_++;
    GpuApiCall call;
    call.api_name = "cudaLaunchKernel";
    call.correlation_id = corr;
    call.kernel_name = std::string(kernel);
    call.kernel_module_path = std::string(kLibs[cubin].path);
    call.kernel_pc = symbol_pc(cubin, kernel);
    call.native_stack = std::move(native);
    call.stream_id = 7;
    const std::uint64_t ts = now(tid);
    add(tid, std::move(call));
    queue_activity(corr, ActivityKind::KernelExec, ts, duration_ns, std::move(extra));
    return corr;
  }

  std::uint64_t memcpy(std::uint64_t tid, std::optional<CallPath> native, std::uint64_t bytes,
                       std::uint64_t duration_ns) {
    const std::uint64_t corr = next_corr_++;
    GpuApiCall call;
    call.api_name = "cudaMemcpyAsync";
    call.correlation_id = corr;
    call.native_stack = std::move(native);
    call.stream_id = 7;
    const std::uint64_t ts = now(tid);
    add(tid, std::move(call));
    queue_activity(corr, ActivityKind::Memcpy, ts, duration_ns, {{"bytes", static_cast<std::int64_t>(bytes)}});
    return corr;
  }

  void cpu_sample(std::uint64_t tid, std::uint64_t ts, CallPath python) {
    set_clock(tid, ts);
    CpuSample sample;
    sample.sample_kind = SampleKind::CpuTime;
    sample.python_stack = std::move(python);
    add(tid, std::move(sample), /*cost=*/0);
  }

  void instructions(std::uint64_t corr, std::vector<InstructionSample> samples) {
    pending_batches_.push_back(InstructionSampleBatch{corr, std::move(samples)});
  }

  // Emits every queued activity record from the flush thread. With sync set,
  // all thread clocks move past the flush, like a device synchronize.
  void flush(bool sync = true) {
    std::uint64_t ts = std::max(last_flush_, gpu_clock_);
    for (const auto& [tid, clock] : clocks_) ts = std::max(ts, clock);
    for (auto& activity : pending_activities_) add_at(kFlushThread, ts, std::move(activity));
    for (auto& batch : pending_batches_) add_at(kFlushThread, ts, std::move(batch));
    pending_activities_.clear();
    pending_batches_.clear();
    last_flush_ = ts;
    if (sync) {
      for (auto& [tid, clock] : clocks_) clock = ts;
    }
  }

  std::vector<TraceEvent> finish() {
    flush();
    std::stable_sort(events_.begin(), events_.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.timestamp_ns < b.timestamp_ns; });
    for (std::size_t i = 0; i < events_.size(); ++i) events_[i].seq_no = i;
    return std::move(events_);
  }

 private:
  void queue_activity(std::uint64_t corr, ActivityKind kind, std::uint64_t launch_ts, std::uint64_t duration,
                      std::map<std::string, std::int64_t> metrics) {
    GpuActivity activity;
    activity.correlation_id = corr;
    activity.activity_kind = kind;
    activity.start_ns = std::max(gpu_clock_, launch_ts);
    activity.end_ns = activity.start_ns + duration;
    gpu_clock_ = activity.end_ns;
    metrics["gpu_time_ns"] = static_cast<std::int64_t>(duration);
    activity.metrics = std::move(metrics);
    pending_activities_.push_back(std::move(activity));
  }

  void add(std::uint64_t tid, EventPayload payload, std::uint64_t cost = kEventCostNs) {
    add_at(tid, clocks_[tid], std::move(payload));
    clocks_[tid] += cost;
  }

  void add_at(std::uint64_t tid, std::uint64_t ts, EventPayload payload) {
    events_.push_back(TraceEvent{0, ts, tid, std::move(payload)});
  }

  std::mt19937_64 rng_;
  std::vector<TraceEvent> events_;
  std::map<std::uint64_t, std::uint64_t> clocks_;
  std::uint64_t gpu_clock_ = 0;
  std::uint64_t last_flush_ = 0;
  std::uint64_t next_corr_ = 1;
  std::vector<GpuActivity> pending_activities_;
  std::vector<InstructionSampleBatch> pending_batches_;
};

struct KernelSpec {
  std::string_view name;
  std::uint64_t duration_ns;
};

// Runs one framework operator on a thread with native collection: enter,
// one launch per kernel from the operator's implementation frame, exit.
void run_op(FixtureWriter& w, std::uint64_t tid, std::string_view op, std::int64_t seq, const CallPath& python,
            const CallPath& native_base, std::string_view impl, std::span<const KernelSpec> kernels,
            Lib cubin = kTorchCubin) {
  const CallPath enter_native = concat(native_base, {op_call_frame(op)});
  w.enter(tid, op, op_address(op), seq, python, enter_native);
  const CallPath launch_native = concat(enter_native, {nat(kTorchCuda, impl), launch_api()});
  for (const auto& k : kernels) w.launch(tid, launch_native, k.name, cubin, k.duration_ns);
  w.exit(tid, op, op_address(op), seq);
}

// ---------------------------------------------------------------------------
// DLRM: the embedding lookup's backward kernel dominates while its forward
// is tiny. Per iteration the GPU spends 77.0 ms; indexing_backward_kernel
// alone is 30.5 ms and the whole aten::index backward 30.723 ms against a
// 0.616 ms forward.

struct DlrmOp {
  std::string_view op;
  CallPath python;
  std::string_view binding;
  std::string_view impl;
  std::vector<KernelSpec> forward;
  std::string_view backward_node;  // empty when there is no backward
  std::string_view backward_op;
  std::string_view backward_impl;
  std::vector<KernelSpec> backward;
};

std::vector<TraceEvent> dlrm_index(std::uint64_t seed, std::uint32_t scale) {
  FixtureWriter w(seed);
  constexpr std::uint64_t kMain = 1;
  constexpr std::uint64_t kBackward = 2;
  w.role(kMain, ThreadRoleKind::Forward);
  w.role(kBackward, ThreadRoleKind::Backward);

  const CallPath top = {py("<module>", "dlrm_main.py", 880), py("main", "dlrm_main.py", 870)};
  const CallPath model = concat(top, {py("train", "dlrm_main.py", 640)});
  auto at = [&](const CallPath& base, std::string_view fn, std::string_view file, std::uint32_t line,
                std::string_view fn2 = {}, std::uint32_t line2 = 0) {
    CallPath p = concat(base, {py(fn, file, line)});
    if (!fn2.empty()) p.push_back(py(fn2, file, line2));
    return p;
  };

  const std::vector<DlrmOp> ops = {
      {"aten::linear", at(model, "forward", "dlrm_model.py", 355, "apply_mlp", 211), "THPVariable_linear",
       "at::native::addmm_out_cuda", {{"ampere_sgemm_128x64_tn", 2'900'000}}, "AddmmBackward0", "aten::mm",
       "at::native::mm_out_cuda", {{"ampere_sgemm_128x64_nt", 4'400'000}}},
      {"aten::linear", at(model, "forward", "dlrm_model.py", 355, "apply_mlp", 212), "THPVariable_linear",
       "at::native::addmm_out_cuda", {{"ampere_sgemm_64x64_tn", 2'900'000}}, "AddmmBackward0", "aten::mm",
       "at::native::mm_out_cuda", {{"ampere_sgemm_64x64_nt", 4'400'000}}},
      {"aten::index", at(model, "forward", "dlrm_model.py", 356, "apply_emb", 248), "THPVariable_getitem",
       "at::native::index_cuda", {{"index_elementwise_kernel", 616'000}}, "IndexBackward0", "aten::index_put_",
       "at::native::index_put_with_sort_kernel",
       {{"radixSortKVInPlace", 223'000}, {fixture::kDlrmHotKernel, 30'500'000}}},
      {"aten::bmm", at(model, "forward", "dlrm_model.py", 357, "interact_features", 280), "THPVariable_bmm",
       "at::native::bmm_out_cuda", {{"ampere_sgemm_128x32_batched_tn", 3'200'000}}, "BmmBackward0", "aten::bmm",
       "at::native::bmm_out_cuda", {{"ampere_sgemm_128x32_batched_nt", 5'000'000}}},
      {"aten::linear", at(model, "forward", "dlrm_model.py", 358, "apply_mlp", 211), "THPVariable_linear",
       "at::native::addmm_out_cuda", {{"ampere_sgemm_128x128_tn", 3'300'000}}, "AddmmBackward0", "aten::mm",
       "at::native::mm_out_cuda", {{"ampere_sgemm_128x128_nt", 5'500'000}}},
      {"aten::linear", at(model, "forward", "dlrm_model.py", 358, "apply_mlp", 212), "THPVariable_linear",
       "at::native::addmm_out_cuda", {{"ampere_sgemm_32x128_tn", 3'300'000}}, "AddmmBackward0", "aten::mm",
       "at::native::mm_out_cuda", {{"ampere_sgemm_32x128_nt", 5'500'000}}},
      {"aten::binary_cross_entropy", at(top, "train", "dlrm_main.py", 641, "loss_fn", 120),
       "THPVariable_binary_cross_entropy", "at::native::binary_cross_entropy_out_cuda",
       {{"binary_cross_entropy_kernel", 1'500'000}}, "BinaryCrossEntropyBackward0",
       "aten::binary_cross_entropy_backward", "at::native::binary_cross_entropy_backward_out_cuda",
       {{"binary_cross_entropy_backward_kernel", 1'461'000}}},
  };
  const CallPath optimizer_python = at(top, "train", "dlrm_main.py", 645);
  const CallPath optimizer_frames = concat(optimizer_python, {py("step", "torch/optim/sgd.py", 80)});
  const CallPath backward_base = {nat(kLibc, "start_thread"), nat(kTorchCpu, "torch::autograd::Engine::thread_main")};

  std::int64_t next_seq = 0;
  const std::uint32_t iterations = 1000 * scale;
  for (std::uint32_t it = 0; it < iterations; ++it) {
    std::vector<std::int64_t> seqs;
    for (const auto& op : ops) {
      const std::int64_t seq = op.backward_node.empty() ? -1 : next_seq++;
      seqs.push_back(seq);
      w.jitter(kMain);
      run_op(w, kMain, op.op, seq, op.python, python_native_base(op.binding), op.impl, op.forward);
    }

    w.sync(kBackward, kMain);
    for (std::size_t i = ops.size(); i-- > 0;) {
      const DlrmOp& op = ops[i];
      if (op.backward_node.empty()) continue;
      const std::string node_symbol = "torch::autograd::generated::" + std::string(op.backward_node) + "::apply";
      const std::string node_name = "autograd::engine::evaluate_function: " + std::string(op.backward_node);
      const std::uint64_t node_address = symbol_pc(kTorchCpu, node_symbol);
      const CallPath node_native = concat(backward_base, {nat(kTorchCpu, node_symbol)});
      w.jitter(kBackward);
      w.enter(kBackward, node_name, node_address, seqs[i], {}, node_native);
      run_op(w, kBackward, op.backward_op, -1, {}, node_native, op.backward_impl, op.backward);
      w.exit(kBackward, node_name, node_address, seqs[i]);
    }

    w.sync(kMain, kBackward);
    const KernelSpec step_kernel{"multi_tensor_apply_kernel", 2'300'000};
    run_op(w, kMain, "aten::_foreach_add_", -1, optimizer_frames, python_native_base("THPVariable__foreach_add_"),
           "at::native::foreach_tensor_add_cuda", std::span(&step_kernel, 1));
    w.flush();
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// U-Net layout conversions: every convolution converts NCHW to NHWC and back;
// nchwToNhwcKernel ends up at 15.4% of GPU time spread over many call sites.

std::vector<TraceEvent> unet_layout(std::uint64_t seed, std::uint32_t scale) {
  FixtureWriter w(seed);
  constexpr std::uint64_t kMain = 1;
  w.role(kMain, ThreadRoleKind::Forward);
  const CallPath base = {py("<module>", "train_unet.py", 300), py("main", "train_unet.py", 280),
                         py("train", "train_unet.py", 200), py("train_step", "train_unet.py", 150),
                         py("forward", "unet.py", 60)};
  const std::array<KernelSpec, 3> conv = {{{"cudnn::nchwToNhwcKernel", 154'000},
                                           {"implicit_convolve_sgemm", 600'000},
                                           {"cudnn::nhwcToNchwKernel", 120'000}}};
  const KernelSpec norm{"instance_norm_kernel", 126'000};
  for (std::uint32_t it = 0; it < 10 * scale; ++it) {
    for (std::uint32_t block = 0; block < 8; ++block) {
      const CallPath conv_python = concat(base, {py("forward", "unet.py", 30 + 2 * block)});
      const CallPath norm_python = concat(base, {py("forward", "unet.py", 31 + 2 * block)});
      w.jitter(kMain);
      run_op(w, kMain, "aten::cudnn_convolution", -1, conv_python, python_native_base("THPVariable_conv2d"),
             "at::native::cudnn_convolution", conv, kCudnnCubin);
      run_op(w, kMain, "aten::instance_norm", -1, norm_python, python_native_base("THPVariable_instance_norm"),
             "at::native::instance_norm_cuda", std::span(&norm, 1));
    }
    w.flush();
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// Transformer: loss_fn launches three tiny kernels with equal counts and
// holds 23.9% of GPU time; native collection is off.

std::vector<TraceEvent> transformer_loss(std::uint64_t seed, std::uint32_t scale) {
  FixtureWriter w(seed);
  constexpr std::uint64_t kMain = 1;
  w.role(kMain, ThreadRoleKind::Forward);
  const CallPath step = {py("<module>", "train.py", 200), py("main", "train.py", 190),
                         py("train_step", "train.py", 150)};
  const CallPath api_only = {launch_api()};

  const std::array<std::pair<std::string_view, std::string_view>, 5> model_ops = {{
      {"aten::linear", "ampere_fp16_s16816gemm_qkv"},
      {"aten::bmm", "ampere_fp16_s16816gemm_attn"},
      {"aten::_scaled_dot_product_efficient_attention", "fmha_cutlassF_f16_aligned_64x64"},
      {"aten::linear", "ampere_fp16_s16816gemm_ffn1"},
      {"aten::linear", "ampere_fp16_s16816gemm_ffn2"},
  }};
  const CallPath loss_python = concat(step, {py(fixture::kTransformerLossFrame, "transformer.py", 120)});

  auto simple = [&](std::string_view op, const CallPath& python, std::string_view kernel, std::uint64_t ns) {
    w.enter(kMain, op, op_address(op), -1, python, std::nullopt);
    w.launch(kMain, api_only, kernel, kTorchCubin, ns);
    w.exit(kMain, op, op_address(op), -1);
  };

  for (std::uint32_t it = 0; it < 20 * scale; ++it) {
    for (std::size_t i = 0; i < model_ops.size(); ++i) {
      const CallPath python = concat(step, {py("forward", "transformer.py", static_cast<std::uint32_t>(88 + i))});
      w.jitter(kMain);
      simple(model_ops[i].first, python, model_ops[i].second, 229'250);
    }
    for (int chunk = 0; chunk < 10; ++chunk) {
      w.jitter(kMain);
      const std::string_view ce = "aten::cross_entropy_loss";
      w.enter(kMain, ce, op_address(ce), -1, loss_python, std::nullopt);
      simple("aten::log_softmax", loss_python, "softmax_warp_forward", 14'000);
      w.enter(kMain, "aten::_to_copy", op_address("aten::_to_copy"), -1, loss_python, std::nullopt);
      simple("aten::copy_", loss_python, "copy_kernel", 8'000);
      w.exit(kMain, "aten::_to_copy", op_address("aten::_to_copy"), -1);
      simple("aten::nll_loss", loss_python, "nll_loss_forward_reduce_cuda_kernel_2d", 14'000);
      w.exit(kMain, ce, op_address(ce), -1);
    }
    w.flush();
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// U-Net CPU latency: sixteen loader threads spend 69% of all sampled CPU time
// in data_selection, whose kernels add up to only 1.3 s of GPU time.

std::vector<TraceEvent> unet_cpu(std::uint64_t seed, std::uint32_t scale) {
  FixtureWriter w(seed);
  constexpr std::uint64_t kMain = 1;
  constexpr std::uint64_t kFirstLoader = 10;
  constexpr std::uint64_t kLoaders = 16;
  constexpr std::uint64_t kInterval = 10'000'000;
  w.role(kMain, ThreadRoleKind::Forward);
  for (std::uint64_t t = 0; t < kLoaders; ++t) w.role(kFirstLoader + t, ThreadRoleKind::Worker);

  const CallPath loop = {py("<module>", "train_unet.py", 300), py("main", "train_unet.py", 280),
                         py("train", "train_unet.py", 200)};
  const CallPath step_python = concat(loop, {py("train_step", "train_unet.py", 150), py("forward", "unet.py", 60)});
  const CallPath data_python = concat(loop, {py(fixture::kUnetDataFrame, "data.py", 95)});
  const CallPath load_python = concat(data_python, {py("load_volume", "data.py", 40)});
  const CallPath api_only = {launch_api()};
  const std::array<std::string_view, 4> model_kernels = {"implicit_convolve_sgemm", "cudnn::nchwToNhwcKernel",
                                                         "instance_norm_kernel", "leaky_relu_kernel"};

  std::uint64_t t = 1'000'000;
  w.cpu_sample(kMain, t, step_python);
  for (std::uint32_t it = 0; it < 100 * scale; ++it) {
    for (int s = 1; s <= 31; ++s) {
      t += kInterval;
      w.cpu_sample(kMain, t, step_python);
      if (s % 8 == 0) {
        const std::string_view kernel = model_kernels[static_cast<std::size_t>(s / 8 - 1)];
        w.enter(kMain, "aten::conv2d", op_address("aten::conv2d"), -1, step_python, std::nullopt);
        w.launch(kMain, api_only, kernel, kTorchCubin, 100'000'000);
        w.exit(kMain, "aten::conv2d", op_address("aten::conv2d"), -1);
      }
    }
    w.flush(/*sync=*/false);
  }

  for (std::uint64_t l = 0; l < kLoaders; ++l) {
    const std::uint64_t tid = kFirstLoader + l;
    std::uint64_t lt = 1'000'000 + l * 1'000;
    w.cpu_sample(tid, lt, load_python);
    for (std::uint32_t s = 1; s <= 432 * scale; ++s) {
      lt += kInterval;
      w.cpu_sample(tid, lt, load_python);
      if (s % 43 == 0 && s / 43 <= 10 * scale) {
        w.enter(tid, "aten::to", op_address("aten::to"), -1, data_python, std::nullopt);
        w.enter(tid, "aten::copy_", op_address("aten::copy_"), -1, data_python, std::nullopt);
        w.launch(tid, api_only, "vectorized_elementwise_kernel<float_to_half>", kTorchCubin, 8'125'000);
        w.exit(tid, "aten::copy_", op_address("aten::copy_"), -1);
        w.exit(tid, "aten::to", op_address("aten::to"), -1);
      }
    }
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// Llama RMSNorm: the fp16->fp32 conversion kernel is a hotspot whose sampled
// instructions mostly stall on constant-memory misses and math dependencies.

std::vector<TraceEvent> stall_demo(std::uint64_t seed, std::uint32_t scale) {
  FixtureWriter w(seed);
  std::mt19937_64 rng(seed ^ 0x5a5a5a5aULL);
  constexpr std::uint64_t kMain = 1;
  w.role(kMain, ThreadRoleKind::Forward);
  const CallPath layer = {py("<module>", "generate.py", 50), py("generate", "generate.py", 31),
                          py("forward", "modeling_llama.py", 1180), py("forward", "modeling_llama.py", 740)};
  const CallPath norm_python = concat(layer, {py("forward", "modeling_llama.py", 73)});
  const CallPath attn_python = concat(layer, {py("forward", "modeling_llama.py", 745)});
  const CallPath mlp_python = concat(layer, {py("forward", "modeling_llama.py", 748)});

  auto jitter = [&](std::uint64_t base) { return base + std::uniform_int_distribution<std::uint64_t>(0, 3)(rng); };
  auto batch = [&](std::string_view kernel, Lib cubin,
                   std::initializer_list<std::pair<std::string_view, std::uint64_t>> stalls) {
    std::vector<InstructionSample> samples;
    std::uint64_t offset = 0x10;
    for (const auto& [reason, count] : stalls) {
      samples.push_back({symbol_pc(cubin, kernel) + offset, std::string(kLibs[cubin].path), std::string(reason),
                         jitter(count)});
      offset += 0x30;
    }
    return samples;
  };

  for (std::uint32_t it = 0; it < 20 * scale; ++it) {
    const CallPath base_native = python_native_base("THPVariable_to");
    const CallPath enter_to = concat(base_native, {op_call_frame("aten::to")});
    const CallPath enter_copy = concat(enter_to, {op_call_frame("aten::_to_copy"), op_call_frame("aten::copy_")});
    w.jitter(kMain);
    w.enter(kMain, "aten::to", op_address("aten::to"), -1, norm_python, enter_to);
    w.enter(kMain, "aten::_to_copy", op_address("aten::_to_copy"), -1, norm_python,
            concat(enter_to, {op_call_frame("aten::_to_copy")}));
    w.enter(kMain, "aten::copy_", op_address("aten::copy_"), -1, norm_python, enter_copy);
    const std::uint64_t corr = w.launch(kMain, concat(enter_copy, {nat(kTorchCuda, "at::native::copy_kernel_cuda"), launch_api()}),
                                        fixture::kStallKernel, kTorchCubin, 400'000,
                                        {{"blocks", 512}, {"warps", 4096}, {"registers", 16}});
    w.instructions(corr, batch(fixture::kStallKernel, kTorchCubin,
                               {{"const_mem_miss", 45}, {"math_dep", 35}, {"memory_throttle", 8},
                                {"not_selected", 4}, {"selected", 8}}));
    w.exit(kMain, "aten::copy_", op_address("aten::copy_"), -1);
    w.exit(kMain, "aten::_to_copy", op_address("aten::_to_copy"), -1);
    w.exit(kMain, "aten::to", op_address("aten::to"), -1);

    for (const auto& [python, kernel] : {std::pair{attn_python, std::string_view("ampere_fp16_s16816gemm_attn")},
                                         std::pair{mlp_python, std::string_view("ampere_fp16_s16816gemm_mlp")}}) {
      const CallPath enter = concat(python_native_base("THPVariable_linear"), {op_call_frame("aten::linear")});
      w.enter(kMain, "aten::linear", op_address("aten::linear"), -1, python, enter);
      const std::uint64_t gemm = w.launch(
          kMain, concat(enter, {nat(kTorchCuda, "at::native::addmm_out_cuda"), launch_api()}), kernel, kTorchCubin,
          300'000, {{"blocks", 128}, {"warps", 1024}, {"registers", 168}, {"shared_mem_bytes", 49'152}});
      w.instructions(gemm, batch(kernel, kTorchCubin, {{"mio_throttle", 50}, {"long_scoreboard", 30}, {"selected", 20}}));
      w.exit(kMain, "aten::linear", op_address("aten::linear"), -1);
    }
    w.flush();
  }
  return w.finish();
}

// ---------------------------------------------------------------------------
// Random but structurally valid traces, generated incrementally so large
// traces never sit in memory.

class RandomTraceGenerator {
 public:
  RandomTraceGenerator(std::uint64_t seed, std::uint32_t scale, const EventSink& sink)
      : rng_(seed), target_(1000ULL * scale), sink_(sink) {
    native_enabled_ = pick(5) != 0;
    for (int i = 0; i < 48; ++i) {
      CallPath stack;
      const int depth = 1 + static_cast<int>(pick(5));
      for (int d = 0; d < depth; ++d) {
        const std::string file = "mod" + std::to_string(pick(8)) + ".py";
        stack.push_back(py("fn" + std::to_string(pick(20)), file, static_cast<std::uint32_t>(1 + pick(200))));
      }
      python_pool_.push_back(std::move(stack));
    }
    for (int i = 0; i < 16; ++i) ops_.push_back("aten::op" + std::to_string(i));
    for (int i = 0; i < 24; ++i) kernels_.push_back("kernel_" + std::to_string(i));
  }

  void run() {
    emit(kFlushThread, standard_module_map());
    emit(kFlushThread, ThreadRole{1, ThreadRoleKind::Forward, 0});
    emit(kFlushThread, ThreadRole{2, ThreadRoleKind::Forward, 0});
    emit(kFlushThread, ThreadRole{3, ThreadRoleKind::Worker, 0});
    emit(kFlushThread, ThreadRole{4, ThreadRoleKind::Backward, 0});
    for (std::uint64_t tid = 1; tid <= 4; ++tid) threads_[tid] = ThreadState{};
    if (pick(2) == 0) {
      emit(kFlushThread, FusionMapping{ops_[0], {python_pool_[0], python_pool_[1]}});
    }

    while (count_ + closing_cost() < target_) step();
    for (std::uint64_t tid = 1; tid <= 4; ++tid) {
      while (!threads_[tid].open.empty()) exit_op(tid);
    }
    flush_all();
  }

 private:
  static constexpr std::uint64_t kFlushThread = 0;

  struct OpenOp {
    std::size_t op;
    std::int64_t seq;
  };
  struct ThreadState {
    std::vector<OpenOp> open;
    CallPath python;
    std::string binding;
  };

  std::uint64_t pick(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng_); }

  std::uint64_t closing_cost() const {
    std::uint64_t cost = pending_.size() + pending_batches_.size();
    for (const auto& [tid, state] : threads_) cost += state.open.size();
    return cost;
  }

  void emit(std::uint64_t tid, EventPayload payload) {
    clock_ += 1 + pick(1000);
    sink_(TraceEvent{count_++, clock_, tid, std::move(payload)});
  }

  CallPath native_base(std::uint64_t tid) const {
    const ThreadState& s = threads_.at(tid);
    if (tid == 4) return {nat(kLibc, "start_thread"), nat(kTorchCpu, "torch::autograd::Engine::thread_main")};
    if (tid == 3) return {nat(kLibc, "start_thread"), nat(kTorchCpu, "c10::ThreadPool::main_loop")};
    return python_native_base(s.binding);
  }

  // Native stack with every open operator's dispatch and implementation frames.
  CallPath current_native(std::uint64_t tid) const {
    CallPath out = native_base(tid);
    for (const auto& open : threads_.at(tid).open) {
      out.push_back(op_call_frame(ops_[open.op]));
      out.push_back(nat(kTorchCuda, "at::native::" + ops_[open.op].substr(6) + "_impl"));
    }
    return out;
  }

  void enter_op(std::uint64_t tid) {
    ThreadState& s = threads_[tid];
    const std::size_t op = pick(ops_.size());
    std::int64_t seq = -1;
    if (tid == 4) {
      if (s.open.empty()) {
        if (forward_seqs_.empty() || pick(10) == 0) {
          seq = 1'000'000 + static_cast<std::int64_t>(pick(1000));
        } else {
          seq = forward_seqs_[pick(forward_seqs_.size())];
        }
      }
    } else if (pick(3) == 0) {
      seq = next_seq_++;
      if (forward_seqs_.size() < 4096) forward_seqs_.push_back(seq);
    }
    if (s.open.empty()) {
      s.python = tid == 4 ? CallPath{} : python_pool_[pick(python_pool_.size())];
      s.binding = "THPVariable_binding" + std::to_string(pick(4));
    }
    std::optional<CallPath> native;
    if (native_enabled_) {
      native = current_native(tid);
      native->push_back(op_call_frame(ops_[op]));
    }
    s.open.push_back({op, seq});
    emit(tid, OperatorEnter{ops_[op], op_address(ops_[op]), seq, s.python, std::move(native)});
  }

  void exit_op(std::uint64_t tid) {
    ThreadState& s = threads_[tid];
    const OpenOp open = s.open.back();
    s.open.pop_back();
    emit(tid, OperatorExit{ops_[open.op], op_address(ops_[open.op]), open.seq});
  }

  void launch(std::uint64_t tid, bool copy) {
    GpuApiCall call;
    call.correlation_id = next_corr_++;
    call.stream_id = pick(4);
    const int native_mode = native_enabled_ ? 2 : static_cast<int>(pick(2));
    if (native_mode == 2) {
      call.native_stack = current_native(tid);
      call.native_stack->push_back(copy ? memcpy_api() : launch_api());
    } else if (native_mode == 1) {
      call.native_stack = CallPath{copy ? memcpy_api() : launch_api()};
    }
    GpuActivity activity;
    activity.correlation_id = call.correlation_id;
    const std::uint64_t duration = pick(8) == 0 ? 1 + pick(15'000) : 20'000 + pick(2'000'000);
    activity.start_ns = clock_ + pick(10'000);
    activity.end_ns = activity.start_ns + duration;
    if (copy) {
      call.api_name = "cudaMemcpyAsync";
      activity.activity_kind = ActivityKind::Memcpy;
      activity.metrics["bytes"] = static_cast<std::int64_t>(1 + pick(1 << 20));
    } else {
      call.api_name = "cudaLaunchKernel";
      const std::string& kernel = kernels_[pick(kernels_.size())];
      call.kernel_name = kernel;
      if (pick(4) != 0) {
        call.kernel_module_path = std::string(kLibs[kTorchCubin].path);
        call.kernel_pc = symbol_pc(kTorchCubin, kernel);
      }
      activity.activity_kind = ActivityKind::KernelExec;
      activity.metrics["blocks"] = static_cast<std::int64_t>(1 + pick(1024));
      activity.metrics["warps"] = static_cast<std::int64_t>(1 + pick(8192));
      if (pick(3) == 0) {
        std::vector<InstructionSample> samples;
        const std::uint64_t base = call.kernel_pc != 0 ? call.kernel_pc : symbol_pc(kTorchCubin, kernel);
        static constexpr std::array<std::string_view, 5> kReasons = {"math_dep", "const_mem_miss", "mio_throttle",
                                                                    "long_scoreboard", "selected"};
        const std::uint64_t n = 1 + pick(4);
        for (std::uint64_t i = 0; i < n; ++i) {
          samples.push_back({base + 0x10 * (1 + pick(16)), std::string(kLibs[kTorchCubin].path),
                             std::string(kReasons[pick(kReasons.size())]), 1 + pick(50)});
        }
        pending_batches_.push_back(InstructionSampleBatch{call.correlation_id, std::move(samples)});
      }
    }
    activity.metrics["gpu_time_ns"] = static_cast<std::int64_t>(duration);
    pending_.push_back(std::move(activity));
    emit(tid, std::move(call));
  }

  void cpu_sample(std::uint64_t tid) {
    const ThreadState& s = threads_[tid];
    CpuSample sample;
    sample.sample_kind = pick(4) == 0 ? SampleKind::RealTime : SampleKind::CpuTime;
    if (!s.python.empty()) sample.python_stack = s.python;
    if (native_enabled_) sample.native_stack = current_native(tid);
    emit(tid, std::move(sample));
  }

  void flush_some() {
    const std::size_t n = std::min<std::size_t>(pending_.size(), 1 + pick(16));
    for (std::size_t i = 0; i < n; ++i) {
      emit(kFlushThread, std::move(pending_.front()));
      pending_.pop_front();
    }
    const std::size_t b = std::min<std::size_t>(pending_batches_.size(), pick(4));
    for (std::size_t i = 0; i < b; ++i) {
      emit(kFlushThread, std::move(pending_batches_.front()));
      pending_batches_.pop_front();
    }
  }

  void flush_all() {
    while (!pending_.empty() || !pending_batches_.empty()) flush_some();
  }

  void step() {
    const std::uint64_t tid = 1 + pick(4);
    ThreadState& s = threads_[tid];
    const std::uint64_t roll = pick(100);
    if (roll < 22 && s.open.size() < 3) {
      enter_op(tid);
    } else if (roll < 44 && !s.open.empty()) {
      exit_op(tid);
    } else if (roll < 70) {
      launch(tid, pick(6) == 0);
    } else if (roll < 85) {
      cpu_sample(tid);
    } else {
      flush_some();
    }
  }

  std::mt19937_64 rng_;
  std::uint64_t target_;
  const EventSink& sink_;
  bool native_enabled_ = true;
  std::uint64_t count_ = 0;
  std::uint64_t clock_ = 0;
  std::uint64_t next_corr_ = 1;
  std::int64_t next_seq_ = 0;
  std::vector<CallPath> python_pool_;
  std::vector<std::string> ops_;
  std::vector<std::string> kernels_;
  std::map<std::uint64_t, ThreadState> threads_;
  std::vector<std::int64_t> forward_seqs_;
  std::deque<GpuActivity> pending_;
  std::deque<InstructionSampleBatch> pending_batches_;
};

constexpr std::array<std::string_view, 6> kScenarioNames = {"dlrm-index", "unet-layout", "transformer-loss",
                                                            "unet-cpu",   "stall-demo",  "random-tree"};

}  // namespace

std::string_view to_string(Scenario scenario) { return kScenarioNames[static_cast<std::size_t>(scenario)]; }

std::optional<Scenario> scenario_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kScenarioNames.size(); ++i) {
    if (kScenarioNames[i] == text) return static_cast<Scenario>(i);
  }
  static constexpr std::array<std::string_view, 6> kAliases = {"DlrmIndex", "UnetLayout", "TransformerLoss",
                                                               "UnetCpu",   "StallDemo",  "RandomTree"};
  for (std::size_t i = 0; i < kAliases.size(); ++i) {
    if (kAliases[i] == text) return static_cast<Scenario>(i);
  }
  return std::nullopt;
}

void generate_synthetic_trace(Scenario scenario, std::uint64_t seed, std::uint32_t scale, const EventSink& sink) {
  if (scale < 1) throw std::invalid_argument("scale must be at least 1");
  if (scenario == Scenario::RandomTree) {
    RandomTraceGenerator(seed, scale, sink).run();
    return;
  }
  std::vector<TraceEvent> events;
  switch (scenario) {
    case Scenario::DlrmIndex:
      events = dlrm_index(seed, scale);
      break;
    case Scenario::UnetLayout:
      events = unet_layout(seed, scale);
      break;
    case Scenario::TransformerLoss:
      events = transformer_loss(seed, scale);
      break;
    case Scenario::UnetCpu:
      events = unet_cpu(seed, scale);
      break;
    case Scenario::StallDemo:
      events = stall_demo(seed, scale);
      break;
    case Scenario::RandomTree:
      break;
  }
  for (const auto& event : events) sink(event);
}

std::vector<TraceEvent> generate_synthetic_trace(Scenario scenario, std::uint64_t seed, std::uint32_t scale) {
  std::vector<TraceEvent> out;
  generate_synthetic_trace(scenario, seed, scale, [&](const TraceEvent& e) { out.push_back(e); });
  return out;
}

}  // namespace ctxprof

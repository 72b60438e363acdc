#include "ctxprof/trace_io.hpp"

#include <json.hpp>
#include <sstream>

#include "ctxprof/trace_error.hpp"

namespace ctxprof {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kErrorNames = {
    "MalformedRecord",      "UnknownEventKind",       "SchemaVersionMismatch",
    "NonMonotonicTimestamp", "UnbalancedOperatorExit", "DuplicateCorrelationId"};

class RecordDecoder {
 public:
  explicit RecordDecoder(std::uint64_t line_no) : line_no_(line_no) {}

  [[noreturn]] void fail(const std::string& cause) const {
    throw TraceError(TraceErrorCode::MalformedRecord, line_no_, cause);
  }

  const json& field(const json& obj, const char* name) const {
    auto it = obj.find(name);
    if (it == obj.end()) fail(std::string("missing field '") + name + "'");
    return *it;
  }

  std::uint64_t u64(const json& value, const char* what) const {
    if (!value.is_number_integer() || (!value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
      fail(std::string("field '") + what + "' must be a non-negative integer");
    }
    return value.get<std::uint64_t>();
  }

  std::int64_t i64(const json& value, const char* what) const {
    if (!value.is_number_integer()) fail(std::string("field '") + what + "' must be an integer");
    if (value.is_number_unsigned() &&
        value.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
      fail(std::string("field '") + what + "' out of range");
    }
    return value.get<std::int64_t>();
  }

  std::string str(const json& value, const char* what) const {
    if (!value.is_string()) fail(std::string("field '") + what + "' must be a string");
    return value.get<std::string>();
  }

  std::uint64_t u64_field(const json& obj, const char* name) const { return u64(field(obj, name), name); }
  std::int64_t i64_field(const json& obj, const char* name) const { return i64(field(obj, name), name); }
  std::string str_field(const json& obj, const char* name) const { return str(field(obj, name), name); }

  bool bool_field(const json& obj, const char* name) const {
    const json& value = field(obj, name);
    if (!value.is_boolean()) fail(std::string("field '") + name + "' must be a boolean");
    return value.get<bool>();
  }

  Frame frame(const json& value) const {
    if (!value.is_array() || value.size() != 6) fail("frame must be a 6-element array");
    auto kind = value[0].is_string() ? frame_kind_from_string(value[0].get_ref<const std::string&>())
                                     : std::nullopt;
    if (!kind) fail("unknown frame kind");
    Frame f;
    f.kind = *kind;
    f.name = str(value[1], "frame.name");
    f.module_path = str(value[2], "frame.module_path");
    f.pc = u64(value[3], "frame.pc");
    f.file = str(value[4], "frame.file");
    std::uint64_t line = u64(value[5], "frame.line");
    if (line > UINT32_MAX) fail("frame line out of range");
    f.line = static_cast<std::uint32_t>(line);
    if (std::string why = frame_invariant_violation(f); !why.empty()) fail(why);
    return f;
  }

  CallPath frames(const json& value, const char* what) const {
    if (!value.is_array()) fail(std::string("field '") + what + "' must be an array of frames");
    CallPath path;
    path.reserve(value.size());
    for (const auto& item : value) path.push_back(frame(item));
    return path;
  }

  std::optional<CallPath> optional_frames(const json& obj, const char* name) const {
    auto it = obj.find(name);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return frames(*it, name);
  }

 private:
  std::uint64_t line_no_;
};

json frame_to_json(const Frame& f) {
  return json::array({to_string(f.kind), f.name, f.module_path, f.pc, f.file, f.line});
}

json frames_to_json(const CallPath& path) {
  json arr = json::array();
  for (const auto& f : path) arr.push_back(frame_to_json(f));
  return arr;
}

EventPayload decode_payload(const RecordDecoder& d, const json& obj, std::string_view tag,
                            std::uint64_t line_no) {
  if (tag == "op_enter") {
    OperatorEnter e;
    e.op_name = d.str_field(obj, "op_name");
    e.op_address = d.u64_field(obj, "op_address");
    e.sequence_id = d.i64_field(obj, "sequence_id");
    e.python_stack = d.frames(d.field(obj, "python_stack"), "python_stack");
    e.native_stack = d.optional_frames(obj, "native_stack");
    if (e.op_name.empty()) d.fail("empty op_name");
    return e;
  }
  if (tag == "op_exit") {
    OperatorExit e;
    e.op_name = d.str_field(obj, "op_name");
    e.op_address = d.u64_field(obj, "op_address");
    e.sequence_id = d.i64_field(obj, "sequence_id");
    return e;
  }
  if (tag == "gpu_api") {
    GpuApiCall e;
    e.api_name = d.str_field(obj, "api_name");
    e.correlation_id = d.u64_field(obj, "correlation_id");
    e.kernel_name = d.str_field(obj, "kernel_name");
    if (obj.contains("kernel_module_path")) e.kernel_module_path = d.str_field(obj, "kernel_module_path");
    if (obj.contains("kernel_pc")) e.kernel_pc = d.u64_field(obj, "kernel_pc");
    e.native_stack = d.optional_frames(obj, "native_stack");
    e.stream_id = d.u64_field(obj, "stream_id");
    e.device_id = d.u64_field(obj, "device_id");
    return e;
  }
  if (tag == "gpu_activity") {
    GpuActivity e;
    e.correlation_id = d.u64_field(obj, "correlation_id");
    auto kind = activity_kind_from_string(d.str_field(obj, "activity_kind"));
    if (!kind) d.fail("unknown activity_kind");
    e.activity_kind = *kind;
    e.start_ns = d.u64_field(obj, "start_ns");
    e.end_ns = d.u64_field(obj, "end_ns");
    if (e.end_ns < e.start_ns) d.fail("end_ns precedes start_ns");
    const json& metrics = d.field(obj, "metrics");
    if (!metrics.is_object()) d.fail("metrics must be an object");
    for (auto it = metrics.begin(); it != metrics.end(); ++it) {
      e.metrics.emplace(it.key(), d.i64(it.value(), "metrics"));
    }
    if (auto it = e.metrics.find("gpu_time_ns");
        it != e.metrics.end() && it->second != static_cast<std::int64_t>(e.end_ns - e.start_ns)) {
      d.fail("gpu_time_ns disagrees with end_ns - start_ns");
    }
    return e;
  }
  if (tag == "cpu_sample") {
    CpuSample e;
    auto kind = sample_kind_from_string(d.str_field(obj, "sample_kind"));
    if (!kind) d.fail("unknown sample_kind");
    e.sample_kind = *kind;
    e.python_stack = d.optional_frames(obj, "python_stack");
    e.native_stack = d.optional_frames(obj, "native_stack");
    return e;
  }
  if (tag == "inst_samples") {
    InstructionSampleBatch e;
    e.correlation_id = d.u64_field(obj, "correlation_id");
    const json& samples = d.field(obj, "samples");
    if (!samples.is_array()) d.fail("samples must be an array");
    for (const auto& s : samples) {
      if (!s.is_object()) d.fail("instruction sample must be an object");
      InstructionSample sample;
      sample.pc = d.u64_field(s, "pc");
      sample.module_path = d.str_field(s, "module_path");
      sample.stall_reason = d.str_field(s, "stall_reason");
      sample.count = d.u64_field(s, "count");
      if (sample.pc == 0 || sample.module_path.empty()) d.fail("instruction sample needs module_path and pc");
      e.samples.push_back(std::move(sample));
    }
    return e;
  }
  if (tag == "fusion") {
    FusionMapping e;
    e.fused_op_name = d.str_field(obj, "fused_op_name");
    const json& paths = d.field(obj, "original_call_paths");
    if (!paths.is_array()) d.fail("original_call_paths must be an array");
    for (const auto& p : paths) e.original_call_paths.push_back(d.frames(p, "original_call_paths"));
    return e;
  }
  if (tag == "module_map") {
    ModuleMap incoming;
    const json& entries = d.field(obj, "entries");
    if (!entries.is_array()) d.fail("entries must be an array");
    for (const auto& m : entries) {
      if (!m.is_object()) d.fail("module entry must be an object");
      ModuleRange r;
      r.module_path = d.str_field(m, "module_path");
      r.base_pc = d.u64_field(m, "base_pc");
      r.end_pc = d.u64_field(m, "end_pc");
      r.is_python_runtime = d.bool_field(m, "is_python_runtime");
      incoming.entries.push_back(std::move(r));
    }
    ModuleMap checked;
    try {
      checked.merge(incoming);
    } catch (const std::invalid_argument& err) {
      d.fail(err.what());
    }
    return checked;
  }
  if (tag == "thread_role") {
    ThreadRole e;
    e.thread_id = d.u64_field(obj, "thread_id");
    auto role = thread_role_from_string(d.str_field(obj, "role"));
    if (!role) d.fail("unknown role");
    e.role = *role;
    e.device_id = d.u64_field(obj, "device_id");
    return e;
  }
  throw TraceError(TraceErrorCode::UnknownEventKind, line_no, "unknown event kind '" + std::string(tag) + "'");
}

struct PayloadEncoder {
  json& obj;

  void operator()(const OperatorEnter& e) const {
    obj["op_name"] = e.op_name;
    obj["op_address"] = e.op_address;
    obj["sequence_id"] = e.sequence_id;
    obj["python_stack"] = frames_to_json(e.python_stack);
    if (e.native_stack) obj["native_stack"] = frames_to_json(*e.native_stack);
  }
  void operator()(const OperatorExit& e) const {
    obj["op_name"] = e.op_name;
    obj["op_address"] = e.op_address;
    obj["sequence_id"] = e.sequence_id;
  }
  void operator()(const GpuApiCall& e) const {
    obj["api_name"] = e.api_name;
    obj["correlation_id"] = e.correlation_id;
    obj["kernel_name"] = e.kernel_name;
    if (!e.kernel_module_path.empty()) obj["kernel_module_path"] = e.kernel_module_path;
    if (e.kernel_pc != 0) obj["kernel_pc"] = e.kernel_pc;
    if (e.native_stack) obj["native_stack"] = frames_to_json(*e.native_stack);
    obj["stream_id"] = e.stream_id;
    obj["device_id"] = e.device_id;
  }
  void operator()(const GpuActivity& e) const {
    obj["correlation_id"] = e.correlation_id;
    obj["activity_kind"] = to_string(e.activity_kind);
    obj["start_ns"] = e.start_ns;
    obj["end_ns"] = e.end_ns;
    json metrics = json::object();
    for (const auto& [name, value] : e.metrics) metrics[name] = value;
    obj["metrics"] = std::move(metrics);
  }
  void operator()(const CpuSample& e) const {
    obj["sample_kind"] = to_string(e.sample_kind);
    if (e.python_stack) obj["python_stack"] = frames_to_json(*e.python_stack);
    if (e.native_stack) obj["native_stack"] = frames_to_json(*e.native_stack);
  }
  void operator()(const InstructionSampleBatch& e) const {
    obj["correlation_id"] = e.correlation_id;
    json samples = json::array();
    for (const auto& s : e.samples) {
      samples.push_back({{"pc", s.pc},
                         {"module_path", s.module_path},
                         {"stall_reason", s.stall_reason},
                         {"count", s.count}});
    }
    obj["samples"] = std::move(samples);
  }
  void operator()(const FusionMapping& e) const {
    obj["fused_op_name"] = e.fused_op_name;
    json paths = json::array();
    for (const auto& p : e.original_call_paths) paths.push_back(frames_to_json(p));
    obj["original_call_paths"] = std::move(paths);
  }
  void operator()(const ModuleMap& e) const {
    json entries = json::array();
    for (const auto& r : e.entries) {
      entries.push_back({{"module_path", r.module_path},
                         {"base_pc", r.base_pc},
                         {"end_pc", r.end_pc},
                         {"is_python_runtime", r.is_python_runtime}});
    }
    obj["entries"] = std::move(entries);
  }
  void operator()(const ThreadRole& e) const {
    obj["thread_id"] = e.thread_id;
    obj["role"] = to_string(e.role);
    obj["device_id"] = e.device_id;
  }
};

}  // namespace

std::string_view to_string(TraceErrorCode code) { return kErrorNames[static_cast<std::size_t>(code)]; }

TraceError::TraceError(TraceErrorCode code, std::uint64_t line, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) +
                         (line != 0 ? " at line " + std::to_string(line) : std::string()) + ": " + detail),
      code_(code),
      line_(line) {}

std::optional<TraceEvent> parse_record(std::string_view line, std::uint64_t line_no) {
  RecordDecoder d(line_no);
  json obj = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded()) d.fail("not valid JSON");
  if (!obj.is_object()) d.fail("record must be an object");

  const json& version = d.field(obj, "v");
  if (!version.is_number_integer()) d.fail("field 'v' must be an integer");
  if (version.get<std::int64_t>() != kTraceSchemaVersion) {
    throw TraceError(TraceErrorCode::SchemaVersionMismatch, line_no,
                     "expected schema version " + std::to_string(kTraceSchemaVersion) + ", got " +
                         version.dump());
  }
  std::string tag = d.str_field(obj, "t");
  if (tag == "header") return std::nullopt;

  TraceEvent event;
  event.timestamp_ns = d.u64_field(obj, "ts");
  event.thread_id = d.u64_field(obj, "tid");
  event.payload = decode_payload(d, obj, tag, line_no);
  return event;
}

std::string serialize_event(const TraceEvent& event) {
  json obj = json::object();
  obj["v"] = kTraceSchemaVersion;
  obj["t"] = event_tag(event.payload);
  obj["ts"] = event.timestamp_ns;
  obj["tid"] = event.thread_id;
  std::visit(PayloadEncoder{obj}, event.payload);
  return obj.dump();
}

std::string trace_header_line() {
  json obj = json::object();
  obj["v"] = kTraceSchemaVersion;
  obj["t"] = "header";
  return obj.dump();
}

void EventValidator::validate(const TraceEvent& event, std::uint64_t line) {
  ThreadState& state = threads_[event.thread_id];
  if (state.seen && event.timestamp_ns < state.last_timestamp) {
    throw TraceError(TraceErrorCode::NonMonotonicTimestamp, line,
                     "thread " + std::to_string(event.thread_id) + " went back from " +
                         std::to_string(state.last_timestamp) + " to " + std::to_string(event.timestamp_ns));
  }
  if (const auto* exit = event.get<OperatorExit>()) {
    if (state.open_ops.empty()) {
      throw TraceError(TraceErrorCode::UnbalancedOperatorExit, line,
                       "exit of " + exit->op_name + " with no open operator on thread " +
                           std::to_string(event.thread_id));
    }
    if (state.open_ops.back() != exit->op_address) {
      throw TraceError(TraceErrorCode::UnbalancedOperatorExit, line,
                       "exit of " + exit->op_name + " does not match the innermost open operator");
    }
  }
  if (const auto* call = event.get<GpuApiCall>()) {
    if (!correlation_ids_.insert(call->correlation_id).second) {
      throw TraceError(TraceErrorCode::DuplicateCorrelationId, line,
                       "correlation id " + std::to_string(call->correlation_id) + " repeats");
    }
  }

  state.seen = true;
  state.last_timestamp = event.timestamp_ns;
  if (const auto* enter = event.get<OperatorEnter>()) {
    state.open_ops.push_back(enter->op_address);
  } else if (event.get<OperatorExit>() != nullptr) {
    state.open_ops.pop_back();
  }
}

std::size_t EventValidator::open_operators(std::uint64_t thread_id) const {
  auto it = threads_.find(thread_id);
  return it == threads_.end() ? 0 : it->second.open_ops.size();
}

TraceReader::TraceReader(std::istream& in, bool validate) : in_(in), validate_(validate) {}

bool TraceReader::next(TraceEvent& event) {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    if (line_.find_first_not_of(" \t") == std::string::npos) continue;
    std::optional<TraceEvent> parsed = parse_record(line_, line_no_);
    if (!parsed) continue;
    parsed->seq_no = next_seq_;
    if (validate_) validator_.validate(*parsed, line_no_);
    ++next_seq_;
    event = std::move(*parsed);
    return true;
  }
  return false;
}

std::vector<TraceEvent> parse_trace(std::istream& in, bool validate) {
  TraceReader reader(in, validate);
  std::vector<TraceEvent> events;
  TraceEvent event;
  while (reader.next(event)) events.push_back(std::move(event));
  return events;
}

std::vector<TraceEvent> parse_trace_text(std::string_view text, bool validate) {
  std::istringstream in{std::string(text)};
  return parse_trace(in, validate);
}

void write_trace(std::ostream& out, const std::vector<TraceEvent>& events) {
  out << trace_header_line() << '\n';
  for (const auto& event : events) out << serialize_event(event) << '\n';
}

std::string serialize_trace(const std::vector<TraceEvent>& events) {
  std::ostringstream out;
  write_trace(out, events);
  return out.str();
}

}  // namespace ctxprof

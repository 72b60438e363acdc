#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ctxprof/analyzer.hpp"
#include "ctxprof/config.hpp"
#include "ctxprof/export.hpp"
#include "ctxprof/profiler.hpp"
#include "ctxprof/synth.hpp"
#include "ctxprof/trace_error.hpp"
#include "ctxprof/trace_io.hpp"

namespace {

using namespace ctxprof;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitTrace = 2;
constexpr int kExitInternal = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigOptions {
  std::string config_path;
  std::optional<double> hotspot_threshold;
  std::optional<double> gpu_threshold_ns;
  std::optional<double> cpu_threshold;
  std::optional<double> stall_threshold;
  std::optional<double> bwd_fwd_ratio;
  std::optional<int> topk;
  std::optional<double> fwd_epsilon_ns;
  std::optional<bool> native;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON engine configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--hotspot-threshold", hotspot_threshold);
    cmd->add_option("--gpu-threshold-ns", gpu_threshold_ns);
    cmd->add_option("--cpu-threshold", cpu_threshold);
    cmd->add_option("--stall-threshold", stall_threshold);
    cmd->add_option("--bwd-fwd-ratio", bwd_fwd_ratio);
    cmd->add_option("--topk", topk);
    cmd->add_option("--fwd-epsilon-ns", fwd_epsilon_ns);
    cmd->add_flag("--native,!--no-native", native, "Keep native frames when building call paths");
  }

  EngineConfig resolve() const {
    EngineConfig config;
    try {
      if (!config_path.empty()) config = load_engine_config(config_path);
      AnalyzerConfig& a = config.analyzer;
      if (hotspot_threshold) a.hotspot_threshold = *hotspot_threshold;
      if (gpu_threshold_ns) a.gpu_threshold_ns = *gpu_threshold_ns;
      if (cpu_threshold) a.cpu_threshold = *cpu_threshold;
      if (stall_threshold) a.stall_threshold = *stall_threshold;
      if (bwd_fwd_ratio) a.bwd_fwd_ratio = *bwd_fwd_ratio;
      if (topk) a.topk = *topk;
      if (fwd_epsilon_ns) a.fwd_epsilon_ns = *fwd_epsilon_ns;
      if (native) config.source_mask.native = *native;
      a.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return config;
  }
};

struct Profile {
  CallingContextTree tree;
  TraceMetadata metadata;
  IssueReport report;
};

// A profile is a viewer document; anything else is read as a trace.
bool looks_like_profile(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    in.clear();
    in.seekg(0);
    const auto parsed = nlohmann::json::parse(line, nullptr, false);
    return !(parsed.is_object() && parsed.contains("t"));
  }
  in.clear();
  in.seekg(0);
  return false;
}

Profile load_input(const std::string& path, const EngineConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  if (looks_like_profile(in)) {
    std::ostringstream text;
    text << in.rdbuf();
    LoadedProfile loaded = load_viewer_json(text.str());
    spdlog::debug("loaded profile {} with {} nodes", path, loaded.tree.size());
    return {std::move(loaded.tree), std::move(loaded.metadata), std::move(loaded.report)};
  }
  ProfilerOptions options;
  options.mask = config.source_mask;
  Profiler profiler(options);
  profiler.ingest(in);
  profiler.finish();
  spdlog::debug("ingested {} into {} nodes", path, profiler.tree().size());
  return {std::move(profiler.tree()), profiler.metadata(), {}};
}

void analyze_profile(Profile& profile, const EngineConfig& config, const std::vector<std::string>& rule_ids) {
  std::vector<Rule> rules;
  try {
    rules = rule_ids.empty() ? builtin_rules() : select_rules(rule_ids);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  profile.report = run_rules(profile.tree, profile.metadata, rules, config.analyzer, /*parallel=*/true);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("failed writing " + path);
}

void configure_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ctxprof"));
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("CTXPROF_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"Context-unified deep learning profiler"};
  app.require_subcommand(1);

  std::string input;
  std::string output;
  ConfigOptions config_options;
  std::vector<std::string> rule_ids;
  std::string format = "folded";
  std::string metric = "gpu_time_ns";
  std::string report_format = "text";
  std::string scenario_name;
  std::uint64_t seed = 1;
  std::uint32_t scale = 1;

  auto* ingest = app.add_subcommand("ingest", "Build a profile from a trace");
  ingest->add_option("trace", input, "Trace file")->required();
  ingest->add_option("-o,--output", output, "Profile output (default stdout)");
  config_options.attach(ingest);

  auto* analyze = app.add_subcommand("analyze", "Run performance rules and print the issue report");
  analyze->add_option("input", input, "Profile or trace")->required();
  analyze->add_option("--rule", rule_ids, "Rule id to run (repeatable; default all)");
  analyze->add_option("--report-format", report_format, "text or json")
      ->check(CLI::IsMember({"text", "json"}));
  analyze->add_option("-o,--output", output, "Report output (default stdout)");
  config_options.attach(analyze);

  auto* exporter = app.add_subcommand("export", "Export folded stacks, a viewer document or an issue report");
  exporter->add_option("input", input, "Profile or trace")->required();
  exporter->add_option("--format", format, "folded, viewer or report")
      ->check(CLI::IsMember({"folded", "viewer", "report"}));
  exporter->add_option("--metric", metric, "Metric for folded output");
  exporter->add_option("--rule", rule_ids, "Rule id to run (repeatable; default all)");
  exporter->add_option("-o,--output", output, "Output file (default stdout)");
  config_options.attach(exporter);

  auto* gen = app.add_subcommand("gen", "Generate a deterministic synthetic trace");
  gen->add_option("--scenario", scenario_name, "dlrm-index, unet-layout, transformer-loss, unet-cpu, stall-demo, random-tree")
      ->required();
  gen->add_option("--seed", seed);
  gen->add_option("--scale", scale)->check(CLI::PositiveNumber);
  gen->add_option("-o,--output", output, "Trace output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const auto scenario = scenario_from_string(scenario_name);
      if (!scenario) throw UsageError("unknown scenario " + scenario_name);
      std::ofstream file;
      std::ostream* out = &std::cout;
      if (!output.empty() && output != "-") {
        file.open(output, std::ios::binary);
        if (!file) throw InputError("cannot write " + output);
        out = &file;
      }
      *out << trace_header_line() << '\n';
      generate_synthetic_trace(*scenario, seed, scale,
                               [&](const TraceEvent& e) { *out << serialize_event(e) << '\n'; });
      out->flush();
      if (!*out) throw InputError("failed writing trace");
      return kExitOk;
    }

    const EngineConfig config = config_options.resolve();
    Profile profile = load_input(input, config);

    if (ingest->parsed()) {
      write_output(output, export_viewer_json(profile.tree, profile.metadata, profile.report) + "\n");
    } else if (analyze->parsed()) {
      analyze_profile(profile, config, rule_ids);
      const auto mode = report_format == "json" ? ReportFormat::Structured : ReportFormat::Text;
      write_output(output, export_issue_report(profile.tree, profile.report, mode));
    } else if (exporter->parsed()) {
      if (format == "folded") {
        write_output(output, export_folded(profile.tree, metric));
      } else {
        analyze_profile(profile, config, rule_ids);
        if (format == "viewer") {
          write_output(output, export_viewer_json(profile.tree, profile.metadata, profile.report) + "\n");
        } else {
          write_output(output, export_issue_report(profile.tree, profile.report, ReportFormat::Structured));
        }
      }
    }
    return kExitOk;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const UnknownMetric& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const TraceError& e) {
    spdlog::error("{}", e.what());
    return kExitTrace;
  } catch (const ProfileFormatError& e) {
    spdlog::error("{}", e.what());
    return kExitTrace;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitTrace;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kExitInternal;
  }
}

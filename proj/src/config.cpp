#include "ctxprof/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ctxprof {

namespace {

using nlohmann::json;

double number(const json& value, std::string_view key) {
  if (!value.is_number()) throw std::invalid_argument("config key " + std::string(key) + " must be a number");
  return value.get<double>();
}

bool boolean(const json& value, std::string_view key) {
  if (!value.is_boolean()) throw std::invalid_argument("config key " + std::string(key) + " must be a boolean");
  return value.get<bool>();
}

}  // namespace

EngineConfig parse_engine_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");

  EngineConfig config;
  AnalyzerConfig& a = config.analyzer;
  for (const auto& [key, value] : doc.items()) {
    if (key == "hotspot_threshold") {
      a.hotspot_threshold = number(value, key);
    } else if (key == "gpu_threshold_ns") {
      a.gpu_threshold_ns = number(value, key);
    } else if (key == "cpu_threshold") {
      a.cpu_threshold = number(value, key);
    } else if (key == "stall_threshold") {
      a.stall_threshold = number(value, key);
    } else if (key == "bwd_fwd_ratio") {
      a.bwd_fwd_ratio = number(value, key);
    } else if (key == "topk") {
      if (!value.is_number_integer()) throw std::invalid_argument("config key topk must be an integer");
      a.topk = value.get<int>();
    } else if (key == "fwd_epsilon_ns") {
      a.fwd_epsilon_ns = number(value, key);
    } else if (key == "loss_name_patterns") {
      if (!value.is_array()) throw std::invalid_argument("config key loss_name_patterns must be a list");
      a.loss_name_patterns.clear();
      for (const auto& p : value) {
        if (!p.is_string()) throw std::invalid_argument("loss_name_patterns entries must be strings");
        a.loss_name_patterns.push_back(p.get<std::string>());
      }
    } else if (key == "source_mask") {
      if (!value.is_object()) throw std::invalid_argument("config key source_mask must be an object");
      for (const auto& [source, flag] : value.items()) {
        if (source == "python") {
          config.source_mask.python = boolean(flag, source);
        } else if (source == "framework") {
          config.source_mask.framework = boolean(flag, source);
        } else if (source == "native") {
          config.source_mask.native = boolean(flag, source);
        } else {
          throw std::invalid_argument("unknown source_mask key " + source);
        }
      }
    } else {
      throw std::invalid_argument("unknown config key " + key);
    }
  }
  a.validate();
  return config;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_engine_config(text.str());
}

}  // namespace ctxprof

#pragma once

#include <filesystem>
#include <string_view>

#include "ctxprof/analyzer.hpp"
#include "ctxprof/callpath.hpp"

namespace ctxprof {

struct EngineConfig {
  AnalyzerConfig analyzer;
  SourceMask source_mask;
};

// JSON object whose keys are AnalyzerConfig field names plus "source_mask"
// ({"python": bool, "framework": bool, "native": bool}). Unknown keys and
// wrongly typed values throw std::invalid_argument.
EngineConfig parse_engine_config(std::string_view json_text);
EngineConfig load_engine_config(const std::filesystem::path& path);

}  // namespace ctxprof

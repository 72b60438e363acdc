#include <doctest.h>

#include <json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "ctxprof/export.hpp"
#include "support.hpp"

using namespace ctxprof;
using nlohmann::json;

namespace {

const std::regex kFoldedLine(R"(^[^;\n]+(;[^;\n]+)* -?[0-9]+$)");

// Checks the grammar of every line and returns the sum of emitted values.
double folded_total(const std::string& text) {
  REQUIRE((text.empty() || text.back() == '\n'));
  std::istringstream in(text);
  std::string line;
  double total = 0;
  while (std::getline(in, line)) {
    CHECK_MESSAGE(std::regex_match(line, kFoldedLine), line);
    total += std::stod(line.substr(line.rfind(' ') + 1));
  }
  return total;
}

const std::vector<Scenario> kFixtures = {Scenario::DlrmIndex, Scenario::UnetLayout, Scenario::TransformerLoss,
                                         Scenario::UnetCpu, Scenario::StallDemo};

void check_document_invariants(const json& node, const std::set<std::string>& indexed, std::size_t& count) {
  ++count;
  for (const auto& rule : node.at("issues")) CHECK(indexed.contains(rule.get<std::string>()));
  for (const auto& [name, agg] : node.at("metrics").items()) {
    double children = 0;
    for (const auto& child : node.at("children")) {
      if (child.at("metrics").contains(name)) children += child.at("metrics").at(name).at("sum").get<double>();
    }
    const double self = node.at("self_sum").value(name, 0.0);
    CHECK(agg.at("sum").get<double>() == doctest::Approx(self + children).epsilon(1e-12));
  }
  for (const auto& child : node.at("children")) check_document_invariants(child, indexed, count);
}

void check_issue_schema(const json& issue) {
  REQUIRE(issue.is_object());
  CHECK(issue.at("id").is_number_unsigned());
  CHECK(issue.at("rule_id").is_string());
  const auto severity = issue.at("severity").get<std::string>();
  CHECK((severity == "info" || severity == "warning" || severity == "critical"));
  CHECK(issue.at("message").is_string());
  CHECK(issue.at("node_id").is_number_unsigned());
  CHECK(issue.at("path").is_array());
  CHECK(issue.at("values").is_object());
  for (const auto& [name, value] : issue.at("values").items()) CHECK(value.is_number());
  CHECK(issue.at("details").is_array());
}

}  // namespace

TEST_CASE("folded line format") {
  CallingContextTree tree;
  const NodeId k = tree.insert_path(CallPath{Frame::native("main", "app", 0x10), Frame::python("train", "train.py", 10),
                                             Frame::kernel("conv_kern", "lib.cubin", 0x20)});
  tree.attribute_sample(k, "gpu_time_ns", 3050);
  CHECK(export_folded(tree, "gpu_time_ns") == "main;train.py:10;conv_kern 3050\n");
  CHECK_THROWS_AS(export_folded(tree, "nope"), UnknownMetric);
}

TEST_CASE("folded edge cases") {
  CallingContextTree empty;
  CHECK(export_folded(empty, "gpu_time_ns").empty());

  CallingContextTree tree;
  const NodeId n = tree.insert_path(CallPath{Frame::op("a;b"), Frame::kernel("k", "lib.cubin", 1)});
  tree.attribute_sample(n, "gpu_time_ns", 7);
  tree.attribute_sample(tree.node(n).parent, "gpu_time_ns", 0);
  CHECK(export_folded(tree, "gpu_time_ns") == "a,b;k 7\n");
}

TEST_CASE("folded output conserves mass on fixtures") {
  for (const auto scenario : kFixtures) {
    const auto p = test::profile(scenario);
    for (const auto* metric : {"gpu_time_ns", "cpu_time_ns"}) {
      if (!p->tree().find_metric(metric)) continue;
      CHECK(folded_total(export_folded(p->tree(), metric)) == p->tree().inclusive_sum(kRootNode, metric));
    }
  }
}

TEST_CASE("folded output conserves mass on random trees") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto rt = test::random_tree(seed);
    CHECK(folded_total(export_folded(rt.tree, "gpu_time_ns")) == rt.tree.inclusive_sum(kRootNode, "gpu_time_ns"));
  }
}

TEST_CASE("viewer document carries issues and conserves sums") {
  auto p = test::profile(Scenario::DlrmIndex);
  const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
  const json doc = json::parse(export_viewer_json(p->tree(), p->metadata(), report));
  CHECK(doc.at("schema_version") == kViewerSchemaVersion);

  std::set<std::string> indexed;
  for (const auto& issue : doc.at("issues")) {
    check_issue_schema(issue);
    indexed.insert(issue.at("rule_id").get<std::string>());
  }
  std::size_t count = 0;
  check_document_invariants(doc.at("root"), indexed, count);
  CHECK(count == p->tree().size());

  const auto hotspot = std::ranges::find_if(doc.at("issues"), [](const json& i) { return i.at("rule_id") == "hotspot"; });
  REQUIRE(hotspot != doc.at("issues").end());
  CHECK(hotspot->at("values").at("fraction").get<double>() == doctest::Approx(0.396).epsilon(0.005 / 0.396));
}

TEST_CASE("viewer document of an empty tree") {
  CallingContextTree tree;
  const json doc = json::parse(export_viewer_json(tree, {}, {}));
  CHECK(doc.at("root").at("children").empty());
  CHECK(doc.at("root").at("metrics").empty());
  CHECK(doc.at("issues").empty());
}

TEST_CASE("viewer document round trip") {
  for (const auto scenario : {Scenario::DlrmIndex, Scenario::UnetCpu, Scenario::StallDemo}) {
    auto p = test::profile(scenario);
    const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
    const std::string text = export_viewer_json(p->tree(), p->metadata(), report);
    const LoadedProfile loaded = load_viewer_json(text);
    CHECK(loaded.tree.size() == p->tree().size());
    CHECK(loaded.report.issues.size() == report.issues.size());
    CHECK(loaded.metadata.backward_links.size() == p->metadata().backward_links.size());
    for (const auto& name : p->tree().metric_names()) {
      CHECK(loaded.tree.inclusive_sum(kRootNode, name) == p->tree().inclusive_sum(kRootNode, name));
    }
    CHECK(export_viewer_json(loaded.tree, loaded.metadata, loaded.report) == text);
  }
  CHECK_THROWS_AS(load_viewer_json("{\"schema_version\": 99}"), ProfileFormatError);
  CHECK_THROWS_AS(load_viewer_json("not json"), ProfileFormatError);
}

TEST_CASE("issue reports") {
  CallingContextTree empty;
  CHECK(export_issue_report(empty, {}, ReportFormat::Text) == "0 issues\n");

  auto p = test::profile(Scenario::DlrmIndex);
  const auto report = run_rules(p->tree(), p->metadata(), builtin_rules(), AnalyzerConfig{});
  const std::string text = export_issue_report(p->tree(), report, ReportFormat::Text);
  CHECK(text.starts_with("2 issues\n"));
  CHECK(text.find("hotspot") != std::string::npos);
  CHECK(text.find("39.6") != std::string::npos);

  const json doc = json::parse(export_issue_report(p->tree(), report, ReportFormat::Structured));
  CHECK(doc.at("issue_count") == 2);
  REQUIRE(doc.at("issues").size() == 2);
  for (const auto& issue : doc.at("issues")) check_issue_schema(issue);
  CHECK(doc.at("diagnostics").is_array());
}

TEST_CASE("human paths") {
  CallingContextTree tree;
  const NodeId n = tree.insert_path(CallPath{Frame::python("main", "main.py", 1), Frame::op("aten::add")});
  CHECK(human_path(tree, n) == "main > aten::add");
  CHECK(human_path(tree, kRootNode) == "<root>");
}

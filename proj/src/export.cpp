#include "ctxprof/export.hpp"

#include <fmt/format.h>

#include <cmath>
#include <json.hpp>

namespace ctxprof {

using nlohmann::json;

namespace {

std::string folded_label(const Frame& frame) {
  std::string label = frame_label(frame);
  for (char& c : label) {
    if (c == ';') c = ',';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return label;
}

json frame_json(const Frame& f) {
  return json::array({to_string(f.kind), f.name, f.module_path, f.pc, f.file, f.line});
}

Frame frame_from_json(const json& j) {
  if (!j.is_array() || j.size() != 6) throw ProfileFormatError("frame must be a 6-element array");
  auto kind = frame_kind_from_string(j[0].get<std::string>());
  if (!kind) throw ProfileFormatError("unknown frame kind " + j[0].dump());
  return Frame{*kind, j[1].get<std::string>(), j[2].get<std::string>(), j[3].get<std::uint64_t>(),
               j[4].get<std::string>(), j[5].get<std::uint32_t>()};
}

json aggregate_json(const MetricAggregate& agg) {
  return json{{"count", agg.count()}, {"sum", agg.sum()}, {"min", agg.min()}, {"mean", agg.mean()},
              {"std", agg.stddev()}};
}

MetricAggregate aggregate_from_json(const json& j) {
  return MetricAggregate::from_summary(j.at("count").get<std::uint64_t>(), j.at("sum").get<double>(),
                                       j.at("min").get<double>(), j.at("mean").get<double>(),
                                       j.at("std").get<double>());
}

json issue_json(const CallingContextTree& tree, const Issue& issue, std::size_t index,
                const std::vector<std::uint32_t>& ids) {
  json path = json::array();
  for (NodeId n : tree.path_nodes(issue.node)) path.push_back(frame_display_name(tree.node(n).frame));
  json values = json::object();
  for (const auto& [name, value] : issue.values) values[name] = value;
  return json{{"id", index},
              {"rule_id", issue.rule_id},
              {"severity", to_string(issue.severity)},
              {"message", issue.message},
              {"node_id", ids.at(issue.node)},
              {"path", std::move(path)},
              {"values", std::move(values)},
              {"details", issue.details}};
}

json issue_index(const CallingContextTree& tree, const IssueReport& report,
                 const std::vector<std::uint32_t>& ids) {
  json out = json::array();
  for (std::size_t i = 0; i < report.issues.size(); ++i) out.push_back(issue_json(tree, report.issues[i], i, ids));
  return out;
}

json node_json(const CallingContextTree& tree, NodeId id, const std::vector<std::uint32_t>& ids) {
  const CctNode& node = tree.node(id);
  json j;
  j["id"] = ids[id];
  if (id == kRootNode) {
    j["name"] = "<root>";
    j["kind"] = "root";
    j["frame"] = nullptr;
  } else {
    j["name"] = frame_display_name(node.frame);
    j["kind"] = to_string(node.frame.kind);
    j["frame"] = frame_json(node.frame);
  }
  json metrics = json::object();
  json self = json::object();
  json self_sum = json::object();
  for (const auto& slot : node.metrics) {
    const std::string& name = tree.metric_name(slot.metric);
    metrics[name] = aggregate_json(slot.inclusive);
    self[name] = aggregate_json(slot.direct);
    self_sum[name] = slot.direct.sum();
  }
  j["metrics"] = std::move(metrics);
  j["self"] = std::move(self);
  j["self_sum"] = std::move(self_sum);
  j["issues"] = node.issue_ids;
  json tags = json::array();
  for (SemanticTag tag : kAllSemanticTags) {
    if (node.has_tag(tag)) tags.push_back(to_string(tag));
  }
  j["tags"] = std::move(tags);
  if (id != kRootNode && !node.frame.file.empty()) {
    j["source"] = json{{"file", node.frame.file}, {"line", node.frame.line}};
  } else {
    j["source"] = nullptr;
  }
  json annotations = json::array();
  for (const auto& path : node.annotations) {
    json p = json::array();
    for (const auto& f : path) p.push_back(frame_json(f));
    annotations.push_back(std::move(p));
  }
  j["annotations"] = std::move(annotations);
  json children = json::array();
  for (NodeId c : node.children) children.push_back(node_json(tree, c, ids));
  j["children"] = std::move(children);
  return j;
}

void load_node(const json& j, NodeId id, LoadedProfile& out) {
  CallingContextTree& tree = out.tree;
  if (j.at("id").get<std::uint32_t>() != id) throw ProfileFormatError("node ids are not in preorder");
  for (const auto& [name, agg] : j.at("metrics").items()) {
    MetricAggregate direct;
    if (auto it = j.find("self"); it != j.end() && it->contains(name)) direct = aggregate_from_json(it->at(name));
    tree.restore_metric(id, name, aggregate_from_json(agg), direct);
  }
  CctNode& node = tree.node(id);
  node.issue_ids = j.at("issues").get<std::vector<std::string>>();
  for (const auto& tag : j.at("tags")) {
    for (SemanticTag t : kAllSemanticTags) {
      if (to_string(t) == tag.get<std::string>()) node.add_tag(t);
    }
  }
  for (const auto& path : j.at("annotations")) {
    CallPath p;
    for (const auto& f : path) p.push_back(frame_from_json(f));
    tree.node(id).annotations.push_back(std::move(p));
  }
  for (const auto& child : j.at("children")) {
    const NodeId expected = static_cast<NodeId>(tree.size());
    const NodeId created = tree.child(id, frame_from_json(child.at("frame")));
    if (created != expected) throw ProfileFormatError("duplicate child frame in document");
    load_node(child, created, out);
  }
}

}  // namespace

std::vector<std::uint32_t> preorder_ids(const CallingContextTree& tree) {
  std::vector<std::uint32_t> ids(tree.size(), 0);
  std::uint32_t next = 0;
  std::vector<NodeId> stack{kRootNode};
  while (!stack.empty()) {
    NodeId n = stack.back();
    stack.pop_back();
    ids[n] = next++;
    const auto& children = tree.node(n).children;
    for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back(*it);
  }
  return ids;
}

std::string export_folded(const CallingContextTree& tree, std::string_view metric) {
  if (!tree.find_metric(metric)) {
    if (tree.size() <= 1) return {};
    throw UnknownMetric("metric '" + std::string(metric) + "' is not present in the profile");
  }
  std::string out;
  struct Item {
    NodeId node;
    std::size_t prefix_len;
  };
  std::string prefix;
  std::vector<Item> stack;
  const auto& top = tree.node(kRootNode).children;
  for (auto it = top.rbegin(); it != top.rend(); ++it) stack.push_back({*it, 0});
  while (!stack.empty()) {
    Item item = stack.back();
    stack.pop_back();
    prefix.resize(item.prefix_len);
    if (!prefix.empty()) prefix += ';';
    prefix += folded_label(tree.node(item.node).frame);
    const long long value = std::llround(tree.exclusive_metric(item.node, metric));
    if (value != 0) {
      out += prefix;
      out += ' ';
      out += std::to_string(value);
      out += '\n';
    }
    const auto& children = tree.node(item.node).children;
    for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back({*it, prefix.size()});
  }
  return out;
}

std::string export_viewer_json(const CallingContextTree& tree, const TraceMetadata& metadata,
                               const IssueReport& report, int indent) {
  const std::vector<std::uint32_t> ids = preorder_ids(tree);
  json doc;
  doc["schema_version"] = kViewerSchemaVersion;
  doc["metric_names"] = tree.metric_names();
  doc["root"] = node_json(tree, kRootNode, ids);
  doc["issues"] = issue_index(tree, report, ids);
  json links = json::array();
  for (const auto& link : metadata.backward_links) {
    links.push_back(json{{"forward", ids.at(link.forward_op)},
                         {"backward", ids.at(link.backward_root)},
                         {"sequence_id", link.sequence_id}});
  }
  doc["backward_links"] = std::move(links);
  json memcpy_nodes = json::array();
  for (NodeId n : metadata.memcpy_nodes) memcpy_nodes.push_back(ids.at(n));
  doc["memcpy_nodes"] = std::move(memcpy_nodes);
  doc["diagnostics"] = report.diagnostics;
  return doc.dump(indent);
}

LoadedProfile load_viewer_json(std::string_view text) {
  json doc = json::parse(text.begin(), text.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ProfileFormatError("profile is not a JSON object");
  if (doc.value("schema_version", 0) != kViewerSchemaVersion) {
    throw ProfileFormatError("unsupported profile schema version");
  }
  LoadedProfile out;
  try {
    for (const auto& name : doc.at("metric_names")) out.tree.metric_id(name.get<std::string>());
    load_node(doc.at("root"), kRootNode, out);
    for (const auto& link : doc.at("backward_links")) {
      out.metadata.backward_links.insert(BackwardLink{link.at("forward").get<NodeId>(),
                                                      link.at("backward").get<NodeId>(),
                                                      link.at("sequence_id").get<std::int64_t>()});
    }
    for (const auto& n : doc.at("memcpy_nodes")) out.metadata.memcpy_nodes.insert(n.get<NodeId>());
    for (const auto& j : doc.at("issues")) {
      Issue issue;
      issue.rule_id = j.at("rule_id").get<std::string>();
      const std::string severity = j.at("severity").get<std::string>();
      issue.severity = severity == "info" ? Severity::Info
                       : severity == "critical" ? Severity::Critical
                                                : Severity::Warning;
      issue.message = j.at("message").get<std::string>();
      issue.node = j.at("node_id").get<NodeId>();
      if (issue.node >= out.tree.size()) throw ProfileFormatError("issue refers to a missing node");
      issue.node_path = out.tree.key_path(issue.node);
      for (const auto& [name, value] : j.at("values").items()) issue.values[name] = value.get<double>();
      issue.details = j.at("details").get<std::vector<std::string>>();
      out.report.issues.push_back(std::move(issue));
    }
    out.report.diagnostics = doc.at("diagnostics").get<std::vector<std::string>>();
  } catch (const json::exception& err) {
    throw ProfileFormatError(std::string("malformed profile: ") + err.what());
  }
  return out;
}

std::string human_path(const CallingContextTree& tree, NodeId node) {
  std::string out;
  for (NodeId n : tree.path_nodes(node)) {
    if (!out.empty()) out += " > ";
    out += frame_display_name(tree.node(n).frame);
  }
  return out.empty() ? "<root>" : out;
}

std::string export_issue_report(const CallingContextTree& tree, const IssueReport& report,
                                ReportFormat format) {
  if (format == ReportFormat::Structured) {
    const std::vector<std::uint32_t> ids = preorder_ids(tree);
    json doc;
    doc["schema_version"] = kViewerSchemaVersion;
    doc["issue_count"] = report.issues.size();
    doc["issues"] = issue_index(tree, report, ids);
    doc["diagnostics"] = report.diagnostics;
    return doc.dump(2) + "\n";
  }
  std::string out = fmt::format("{} issue{}\n", report.issues.size(), report.issues.size() == 1 ? "" : "s");
  for (const auto& issue : report.issues) {
    std::string evidence;
    for (const auto& [name, value] : issue.values) {
      if (!evidence.empty()) evidence += ' ';
      evidence += fmt::format("{}={:.6g}", name, value);
    }
    out += fmt::format("[{}] {} | {} | {} | {}\n", to_string(issue.severity), issue.rule_id,
                       human_path(tree, issue.node), issue.message, evidence);
  }
  return out;
}

}  // namespace ctxprof

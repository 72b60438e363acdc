#include "ctxprof/cct.hpp"

#include <algorithm>
#include <cmath>

namespace ctxprof {

std::string_view to_string(SemanticTag tag) {
  switch (tag) {
    case SemanticTag::Forward:
      return "forward";
    case SemanticTag::Backward:
      return "backward";
    case SemanticTag::Loss:
      return "loss";
    case SemanticTag::Memcpy:
      return "memcpy";
    case SemanticTag::Hotspot:
      return "hotspot";
  }
  return "unknown";
}

const MetricSlot* CctNode::slot(MetricId metric) const {
  for (const auto& s : metrics) {
    if (s.metric == metric) return &s;
  }
  return nullptr;
}

CallingContextTree::CallingContextTree() {
  CctNode root;
  root.frame = Frame::native("<root>", "", 0);
  root.key = IdentityKey{FrameKind::Native, "<root>", 0};
  nodes_.push_back(std::move(root));
}

NodeId CallingContextTree::child(NodeId parent, const Frame& frame) {
  IdentityKey key = frame_identity_key(frame);
  auto [it, inserted] = index_.try_emplace(ChildKey{parent, key}, static_cast<NodeId>(nodes_.size()));
  if (!inserted) return it->second;
  CctNode node;
  node.key = std::move(key);
  node.frame = frame;
  node.parent = parent;
  node.depth = nodes_[parent].depth + 1;
  nodes_.push_back(std::move(node));
  nodes_[parent].children.push_back(it->second);
  return it->second;
}

std::optional<NodeId> CallingContextTree::find_child(NodeId parent, const IdentityKey& key) const {
  auto it = index_.find(ChildKey{parent, key});
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

NodeId CallingContextTree::insert_path(std::span<const Frame> path) {
  if (path.empty()) throw EmptyPath("cannot insert an empty call path");
  NodeId current = kRootNode;
  for (const auto& frame : path) current = child(current, frame);
  return current;
}

MetricId CallingContextTree::metric_id(std::string_view name) {
  auto it = metric_ids_.find(std::string(name));
  if (it != metric_ids_.end()) return it->second;
  MetricId id = static_cast<MetricId>(metric_names_.size());
  metric_names_.emplace_back(name);
  metric_ids_.emplace(std::string(name), id);
  return id;
}

std::optional<MetricId> CallingContextTree::find_metric(std::string_view name) const {
  auto it = metric_ids_.find(std::string(name));
  if (it == metric_ids_.end()) return std::nullopt;
  return it->second;
}

MetricSlot& CallingContextTree::slot(NodeId node, MetricId metric) {
  auto& slots = nodes_[node].metrics;
  for (auto& s : slots) {
    if (s.metric == metric) return s;
  }
  slots.push_back(MetricSlot{metric, {}, {}});
  return slots.back();
}

void CallingContextTree::attribute_sample(NodeId node, std::string_view metric, double value) {
  attribute_sample(node, metric_id(metric), value);
}

void CallingContextTree::attribute_sample(NodeId node, MetricId metric, double value) {
  if (!std::isfinite(value)) throw NonFiniteValue("metric " + metric_names_.at(metric) + " got a non-finite value");
  MetricSlot& s = slot(node, metric);
  s.direct.add(value);
  s.inclusive.add(value);
  propagate(node, metric, value);
}

void CallingContextTree::propagate(NodeId node, MetricId metric, double value) {
  while (node != kRootNode) {
    node = nodes_[node].parent;
    slot(node, metric).inclusive.add(value);
  }
}

void CallingContextTree::restore_metric(NodeId node, std::string_view metric,
                                        const MetricAggregate& inclusive, const MetricAggregate& direct) {
  MetricSlot& s = slot(node, metric_id(metric));
  s.inclusive = inclusive;
  s.direct = direct;
}

const MetricAggregate* CallingContextTree::inclusive(NodeId node, std::string_view metric) const {
  auto id = find_metric(metric);
  if (!id) return nullptr;
  const MetricSlot* s = nodes_.at(node).slot(*id);
  return s == nullptr ? nullptr : &s->inclusive;
}

const MetricAggregate* CallingContextTree::direct(NodeId node, std::string_view metric) const {
  auto id = find_metric(metric);
  if (!id) return nullptr;
  const MetricSlot* s = nodes_.at(node).slot(*id);
  return s == nullptr ? nullptr : &s->direct;
}

double CallingContextTree::inclusive_sum(NodeId node, std::string_view metric) const {
  const MetricAggregate* agg = inclusive(node, metric);
  return agg == nullptr ? 0.0 : agg->sum();
}

double CallingContextTree::direct_sum(NodeId node, std::string_view metric) const {
  const MetricAggregate* agg = direct(node, metric);
  return agg == nullptr ? 0.0 : agg->sum();
}

double CallingContextTree::exclusive_metric(NodeId node, std::string_view metric) const {
  double value = inclusive_sum(node, metric);
  for (NodeId c : nodes_.at(node).children) value -= inclusive_sum(c, metric);
  return value;
}

std::vector<BottomUpEntry> CallingContextTree::bottom_up_view(std::string_view metric) const {
  std::vector<BottomUpEntry> entries;
  auto id = find_metric(metric);
  if (!id) return entries;
  std::unordered_map<IdentityKey, std::size_t, IdentityKeyHash> by_key;
  for (NodeId n = 1; n < nodes_.size(); ++n) {
    const MetricSlot* s = nodes_[n].slot(*id);
    if (s == nullptr || s->direct.empty()) continue;
    auto [it, inserted] = by_key.try_emplace(nodes_[n].key, entries.size());
    if (inserted) entries.push_back(BottomUpEntry{nodes_[n].key, nodes_[n].frame, {}, {}});
    BottomUpEntry& entry = entries[it->second];
    entry.self.merge(s->direct);
    entry.contributing.push_back(n);
  }
  std::sort(entries.begin(), entries.end(), [](const BottomUpEntry& a, const BottomUpEntry& b) {
    if (a.self.sum() != b.self.sum()) return a.self.sum() > b.self.sum();
    return a.key < b.key;
  });
  return entries;
}

std::vector<NodeId> CallingContextTree::path_nodes(NodeId node) const {
  std::vector<NodeId> out;
  while (node != kRootNode) {
    out.push_back(node);
    node = nodes_.at(node).parent;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<IdentityKey> CallingContextTree::key_path(NodeId node) const {
  std::vector<IdentityKey> out;
  for (NodeId n : path_nodes(node)) out.push_back(nodes_[n].key);
  return out;
}

CallPath CallingContextTree::frame_path(NodeId node) const {
  CallPath out;
  for (NodeId n : path_nodes(node)) out.push_back(nodes_[n].frame);
  return out;
}

NodeId CallingContextTree::ancestor_at_depth(NodeId node, std::uint32_t depth) const {
  while (nodes_.at(node).depth > depth) node = nodes_[node].parent;
  return node;
}

bool CallingContextTree::is_ancestor(NodeId ancestor, NodeId node) const {
  if (nodes_.at(ancestor).depth >= nodes_.at(node).depth) return false;
  return ancestor_at_depth(node, nodes_[ancestor].depth) == ancestor;
}

std::optional<NodeId> CallingContextTree::resolve(std::span<const IdentityKey> keys) const {
  NodeId current = kRootNode;
  for (const auto& key : keys) {
    auto next = find_child(current, key);
    if (!next) return std::nullopt;
    current = *next;
  }
  return current;
}

}  // namespace ctxprof

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxprof/frame.hpp"
#include "ctxprof/metric.hpp"

namespace ctxprof {

using NodeId = std::uint32_t;
using MetricId = std::uint32_t;
inline constexpr NodeId kRootNode = 0;

enum class SemanticTag : std::uint8_t {
  Forward = 1 << 0,
  Backward = 1 << 1,
  Loss = 1 << 2,
  Memcpy = 1 << 3,
  Hotspot = 1 << 4,
};

std::string_view to_string(SemanticTag tag);
inline constexpr SemanticTag kAllSemanticTags[] = {SemanticTag::Forward, SemanticTag::Backward,
                                                   SemanticTag::Loss, SemanticTag::Memcpy,
                                                   SemanticTag::Hotspot};

class EmptyPath : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteValue : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MetricSlot {
  MetricId metric = 0;
  MetricAggregate inclusive;  // every sample attributed in the subtree
  MetricAggregate direct;     // samples attributed to this node itself
};

struct CctNode {
  IdentityKey key;
  Frame frame;
  NodeId parent = kRootNode;
  std::uint32_t depth = 0;
  std::vector<NodeId> children;  // insertion order
  std::vector<MetricSlot> metrics;
  std::uint8_t semantic_tags = 0;
  std::vector<std::string> issue_ids;
  std::vector<CallPath> annotations;

  bool has_tag(SemanticTag tag) const { return (semantic_tags & static_cast<std::uint8_t>(tag)) != 0; }
  void add_tag(SemanticTag tag) { semantic_tags |= static_cast<std::uint8_t>(tag); }
  const MetricSlot* slot(MetricId metric) const;
};

struct BottomUpEntry {
  IdentityKey key;
  Frame frame;
  MetricAggregate self;
  std::vector<NodeId> contributing;  // nodes with direct samples, in id order
};

// Calling context tree. Node 0 is a synthetic root without a frame; all
// other nodes are unique per (parent, frame identity).
class CallingContextTree {
 public:
  CallingContextTree();

  NodeId insert_path(std::span<const Frame> path);
  NodeId child(NodeId parent, const Frame& frame);
  std::optional<NodeId> find_child(NodeId parent, const IdentityKey& key) const;

  // Records a sample on node and propagates it to every ancestor.
  void attribute_sample(NodeId node, std::string_view metric, double value);
  void attribute_sample(NodeId node, MetricId metric, double value);
  // Adds value to the inclusive aggregate of every strict ancestor of node.
  void propagate(NodeId node, MetricId metric, double value);

  MetricId metric_id(std::string_view name);
  std::optional<MetricId> find_metric(std::string_view name) const;
  const std::vector<std::string>& metric_names() const noexcept { return metric_names_; }
  const std::string& metric_name(MetricId id) const { return metric_names_.at(id); }

  const MetricAggregate* inclusive(NodeId node, std::string_view metric) const;
  const MetricAggregate* direct(NodeId node, std::string_view metric) const;
  double inclusive_sum(NodeId node, std::string_view metric) const;
  double direct_sum(NodeId node, std::string_view metric) const;
  // inclusive(node) minus the inclusive sums of its children.
  double exclusive_metric(NodeId node, std::string_view metric) const;

  std::vector<BottomUpEntry> bottom_up_view(std::string_view metric) const;

  // Node ids from the first real frame down to node (root excluded).
  std::vector<NodeId> path_nodes(NodeId node) const;
  std::vector<IdentityKey> key_path(NodeId node) const;
  CallPath frame_path(NodeId node) const;
  NodeId ancestor_at_depth(NodeId node, std::uint32_t depth) const;
  bool is_ancestor(NodeId ancestor, NodeId node) const;
  std::optional<NodeId> resolve(std::span<const IdentityKey> keys) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const CctNode& node(NodeId id) const { return nodes_.at(id); }
  CctNode& node(NodeId id) { return nodes_.at(id); }
  const std::vector<CctNode>& nodes() const noexcept { return nodes_; }

  // Used when rebuilding a tree from an exported document.
  void restore_metric(NodeId node, std::string_view metric, const MetricAggregate& inclusive,
                      const MetricAggregate& direct);

 private:
  struct ChildKey {
    NodeId parent;
    IdentityKey key;
    bool operator==(const ChildKey&) const = default;
  };
  struct ChildKeyHash {
    std::size_t operator()(const ChildKey& k) const noexcept {
      return IdentityKeyHash{}(k.key) ^ (static_cast<std::size_t>(k.parent) * 0x9e3779b97f4a7c15ULL);
    }
  };

  MetricSlot& slot(NodeId node, MetricId metric);

  std::vector<CctNode> nodes_;
  std::unordered_map<ChildKey, NodeId, ChildKeyHash> index_;
  std::vector<std::string> metric_names_;
  std::unordered_map<std::string, MetricId> metric_ids_;
};

}  // namespace ctxprof

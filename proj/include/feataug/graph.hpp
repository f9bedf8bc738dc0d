#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "feataug/augment.hpp"
#include "feataug/nn.hpp"
#include "feataug/tensor.hpp"

namespace feataug {

/// Append-only reverse-mode tape.
///
/// Every builder method evaluates its op immediately and appends a node whose
/// inputs already exist, so append order is a topological order. `backward`
/// walks the tape once in reverse and accumulates into Parameter::grad.
/// Parameters are referenced, not owned: they must outlive the graph.
class Graph {
 public:
  using NodeId = std::size_t;
  using Value = std::variant<std::monostate, Tensor4, Tensor2, double>;

  /// Leaf node. Without `requires_grad` no gradient is propagated into it.
  NodeId input(Tensor4 x, bool requires_grad = true);
  NodeId conv2d(NodeId x, nn::Parameter& weight, nn::Parameter& bias);
  NodeId relu(NodeId x);
  NodeId maxpool(NodeId x);
  /// Runs the augmentation layer; train-mode calls are counted and recorded.
  NodeId augment(NodeId x, const augment::AugmentationLayerConfig& cfg, augment::Mode mode, const RngStream& rng);
  /// Replays a recorded augmentation with all draws frozen.
  NodeId augment_replay(NodeId x, const augment::AugmentRecord& record);
  NodeId global_avg_pool(NodeId x);
  NodeId linear(NodeId x, nn::Parameter& weight, nn::Parameter& bias);
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  /// Scalar sum of every element.
  NodeId sum(NodeId x);

  const Tensor4& tensor4(NodeId id) const;
  const Tensor2& tensor2(NodeId id) const;
  double scalar(NodeId id) const;
  /// Gradient w.r.t. a rank-4 node, available after backward.
  const Tensor4& grad4(NodeId id) const;

  /// Throws StateError when `loss` is not a scalar node of this graph or
  /// when backward already ran on this tape.
  void backward(NodeId loss);

  std::size_t size() const { return nodes_.size(); }
  /// Records of the train-mode augmentation calls, in forward order.
  const std::vector<augment::AugmentRecord>& augment_records() const { return records_; }
  std::size_t train_augment_calls() const { return records_.size(); }

 private:
  enum class Op : std::uint8_t { Input, Conv, Relu, MaxPool, Augment, GlobalAvgPool, Linear, SoftmaxCE, Sum };

  struct Node {
    Node(Op o, std::vector<NodeId> in, Value v) : op(o), inputs(std::move(in)), value(std::move(v)) {}

    Op op;
    std::vector<NodeId> inputs;
    Value value;
    Value grad;
    nn::Parameter* weight = nullptr;
    nn::Parameter* bias = nullptr;
    std::vector<std::uint32_t> argmax;
    std::size_t record = SIZE_MAX;  // index into records_ or replay_
    bool replayed = false;
    bool requires_grad = true;
    Tensor2 loss_grad;
  };

  NodeId push(Node node);
  const Node& at(NodeId id) const;
  void accumulate(NodeId id, Tensor4 g);
  void accumulate(NodeId id, Tensor2 g);

  std::vector<Node> nodes_;
  std::vector<augment::AugmentRecord> records_;
  std::vector<augment::AugmentRecord> replays_;
  bool backward_done_ = false;
};

}  // namespace feataug

#include "feataug/graph.hpp"

#include <string>

namespace feataug {

Graph::NodeId Graph::push(Node node) {
  if (backward_done_) throw StateError("graph: cannot extend a tape after backward");
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id >= nodes_.size()) throw StateError("graph: unknown node " + std::to_string(id));
  return nodes_[id];
}

const Tensor4& Graph::tensor4(NodeId id) const {
  const auto* v = std::get_if<Tensor4>(&at(id).value);
  if (!v) throw ShapeError("graph: node " + std::to_string(id) + " is not rank 4");
  return *v;
}

const Tensor2& Graph::tensor2(NodeId id) const {
  const auto* v = std::get_if<Tensor2>(&at(id).value);
  if (!v) throw ShapeError("graph: node " + std::to_string(id) + " is not rank 2");
  return *v;
}

double Graph::scalar(NodeId id) const {
  const auto* v = std::get_if<double>(&at(id).value);
  if (!v) throw ShapeError("graph: node " + std::to_string(id) + " is not a scalar");
  return *v;
}

const Tensor4& Graph::grad4(NodeId id) const {
  const auto* g = std::get_if<Tensor4>(&at(id).grad);
  if (!g) throw StateError("graph: no gradient for node " + std::to_string(id));
  return *g;
}

Graph::NodeId Graph::input(Tensor4 x, bool requires_grad) {
  Node n(Op::Input, {}, std::move(x));
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Graph::NodeId Graph::conv2d(NodeId x, nn::Parameter& weight, nn::Parameter& bias) {
  if (weight.shape.size() != 4) throw ShapeError("conv2d: weight must be rank 4");
  Tensor4 y = nn::conv2d_forward(tensor4(x), weight.value, bias.value, weight.shape[0]);
  Node n(Op::Conv, {x}, std::move(y));
  n.weight = &weight;
  n.bias = &bias;
  return push(std::move(n));
}

Graph::NodeId Graph::relu(NodeId x) { return push(Node(Op::Relu, {x}, nn::relu(tensor4(x)))); }

Graph::NodeId Graph::maxpool(NodeId x) {
  auto r = nn::maxpool2d(tensor4(x));
  Node n(Op::MaxPool, {x}, std::move(r.output));
  n.argmax = std::move(r.argmax);
  return push(std::move(n));
}

Graph::NodeId Graph::augment(NodeId x, const augment::AugmentationLayerConfig& cfg, augment::Mode mode,
                             const RngStream& rng) {
  auto r = augment::augment_batch(tensor4(x), cfg, mode, rng);
  Node n(Op::Augment, {x}, std::move(r.output));
  if (mode == augment::Mode::train) {
    n.record = records_.size();
    records_.push_back(std::move(r.record));
  }
  return push(std::move(n));
}

Graph::NodeId Graph::augment_replay(NodeId x, const augment::AugmentRecord& record) {
  Node n(Op::Augment, {x}, augment::replay(tensor4(x), record));
  n.record = replays_.size();
  n.replayed = true;
  replays_.push_back(record);
  return push(std::move(n));
}

Graph::NodeId Graph::global_avg_pool(NodeId x) {
  return push(Node(Op::GlobalAvgPool, {x}, nn::global_avg_pool(tensor4(x))));
}

Graph::NodeId Graph::linear(NodeId x, nn::Parameter& weight, nn::Parameter& bias) {
  if (weight.shape.size() != 2) throw ShapeError("linear: weight must be rank 2");
  Tensor2 y = nn::linear(tensor2(x), weight.value, bias.value, weight.shape[0]);
  Node n(Op::Linear, {x}, std::move(y));
  n.weight = &weight;
  n.bias = &bias;
  return push(std::move(n));
}

Graph::NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  auto r = nn::softmax_cross_entropy(tensor2(logits), labels);
  Node n(Op::SoftmaxCE, {logits}, r.loss);
  n.loss_grad = std::move(r.grad);
  return push(std::move(n));
}

Graph::NodeId Graph::sum(NodeId x) {
  double s = 0.0;
  const Value& v = at(x).value;
  if (const auto* t = std::get_if<Tensor4>(&v)) {
    for (float e : t->data()) s += e;
  } else if (const auto* m = std::get_if<Tensor2>(&v)) {
    for (float e : m->data()) s += e;
  } else {
    throw ShapeError("graph: sum expects a tensor node");
  }
  return push(Node(Op::Sum, {x}, s));
}

void Graph::accumulate(NodeId id, Tensor4 g) {
  Node& n = nodes_[id];
  if (auto* cur = std::get_if<Tensor4>(&n.grad)) {
    auto dst = cur->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  } else {
    n.grad = std::move(g);
  }
}

void Graph::accumulate(NodeId id, Tensor2 g) {
  Node& n = nodes_[id];
  if (auto* cur = std::get_if<Tensor2>(&n.grad)) {
    auto dst = cur->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  } else {
    n.grad = std::move(g);
  }
}

void Graph::backward(NodeId loss) {
  if (backward_done_) throw StateError("graph: backward already ran; run a new forward pass first");
  if (loss >= nodes_.size()) throw StateError("graph: backward before forward (unknown loss node)");
  if (!std::holds_alternative<double>(nodes_[loss].value)) throw StateError("graph: loss node is not a scalar");
  backward_done_ = true;

  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    const bool is_root = id == loss;
    if (!is_root && std::holds_alternative<std::monostate>(n.grad)) continue;
    auto wants = [&](NodeId in) {
      const Node& src = nodes_[in];
      return src.op != Op::Input || src.requires_grad;
    };

    switch (n.op) {
      case Op::Input:
        break;
      case Op::Sum: {
        const double g = is_root ? 1.0 : std::get<double>(n.grad);
        const Value& v = nodes_[n.inputs[0]].value;
        if (const auto* t = std::get_if<Tensor4>(&v)) {
          accumulate(n.inputs[0], Tensor4(t->dims(), static_cast<float>(g)));
        } else {
          const auto& m = std::get<Tensor2>(v);
          accumulate(n.inputs[0], Tensor2(m.rows(), m.cols(), static_cast<float>(g)));
        }
        break;
      }
      case Op::SoftmaxCE: {
        const double g = is_root ? 1.0 : std::get<double>(n.grad);
        Tensor2 gl = n.loss_grad;
        if (g != 1.0)
          for (float& e : gl.data()) e = static_cast<float>(e * g);
        accumulate(n.inputs[0], std::move(gl));
        break;
      }
      case Op::Linear: {
        const auto& x = std::get<Tensor2>(nodes_[n.inputs[0]].value);
        auto g = nn::linear_backward(x, n.weight->value, std::get<Tensor2>(n.grad));
        for (std::size_t i = 0; i < g.weight.size(); ++i) n.weight->grad[i] += g.weight[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) n.bias->grad[i] += g.bias[i];
        if (wants(n.inputs[0])) accumulate(n.inputs[0], std::move(g.input));
        break;
      }
      case Op::GlobalAvgPool: {
        const auto& x = std::get<Tensor4>(nodes_[n.inputs[0]].value);
        accumulate(n.inputs[0], nn::global_avg_pool_backward(std::get<Tensor2>(n.grad), x.dims()));
        break;
      }
      case Op::Relu:
        accumulate(n.inputs[0], nn::relu_backward(std::get<Tensor4>(n.grad), std::get<Tensor4>(n.value)));
        break;
      case Op::MaxPool: {
        const auto& x = std::get<Tensor4>(nodes_[n.inputs[0]].value);
        accumulate(n.inputs[0], nn::maxpool2d_backward(std::get<Tensor4>(n.grad), n.argmax, x.dims()));
        break;
      }
      case Op::Augment: {
        const auto& g = std::get<Tensor4>(n.grad);
        if (n.record == SIZE_MAX) {
          accumulate(n.inputs[0], g);
        } else {
          const auto& rec = n.replayed ? replays_[n.record] : records_[n.record];
          accumulate(n.inputs[0], augment::augment_backward(g, rec));
        }
        break;
      }
      case Op::Conv: {
        const auto& x = std::get<Tensor4>(nodes_[n.inputs[0]].value);
        const bool need_input = wants(n.inputs[0]);
        auto g = nn::conv2d_backward(x, n.weight->value, std::get<Tensor4>(n.grad), need_input);
        for (std::size_t i = 0; i < g.weight.size(); ++i) n.weight->grad[i] += g.weight[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) n.bias->grad[i] += g.bias[i];
        if (need_input) accumulate(n.inputs[0], std::move(g.input));
        break;
      }
    }
    // Free intermediate gradients of interior nodes once consumed.
    if (n.op != Op::Input && !is_root) n.grad = std::monostate{};
  }
}

}  // namespace feataug

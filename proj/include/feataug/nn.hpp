#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "feataug/tensor.hpp"

namespace feataug::nn {

/// Trainable tensor of rank 1..4 stored flat, with gradient and momentum buffers.
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> velocity;

  Parameter() = default;
  Parameter(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

void zero_grads(std::span<Parameter> params);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;

  void validate() const;
  /// Desk-scale defaults for the from-scratch MiniCNN.
  static SgdConfig desk();
  /// lr 0.001, batch 128 as used for the pretrained ResNet-50 setting.
  static SgdConfig paper();
  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

/// velocity <- momentum * velocity + grad; value <- value - lr * velocity.
void sgd_step(std::span<Parameter> params, const SgdConfig& cfg);

// ---- 3x3 convolution, stride 1, zero padding 1 ---------------------------------

/// weight is (c_out, c_in, 3, 3); c_in is taken from x.
Tensor4 conv2d_forward(const Tensor4& x, std::span<const float> weight, std::span<const float> bias,
                       std::size_t c_out);

struct ConvGrads {
  Tensor4 input;
  std::vector<float> weight;
  std::vector<float> bias;
};

/// Gradients of conv2d_forward. `need_input` skips the input gradient when false.
ConvGrads conv2d_backward(const Tensor4& x, std::span<const float> weight, const Tensor4& grad_out,
                          bool need_input = true);

// ---- pooling and activations ----------------------------------------------------

struct MaxPoolResult {
  Tensor4 output;
  std::vector<std::uint32_t> argmax;  // flat input offset of each output's maximum
};

/// 2x2 window, stride 2. Ties resolve to the first element in row-major order.
MaxPoolResult maxpool2d(const Tensor4& x);
Tensor4 maxpool2d_backward(const Tensor4& grad_out, std::span<const std::uint32_t> argmax, const Dims4& in_dims);

Tensor4 relu(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& output);

Tensor2 global_avg_pool(const Tensor4& x);
Tensor4 global_avg_pool_backward(const Tensor2& grad_out, const Dims4& in_dims);

/// y = x W^T + b with W stored (out, in).
Tensor2 linear(const Tensor2& x, std::span<const float> weight, std::span<const float> bias, std::size_t out_features);

struct LinearGrads {
  Tensor2 input;
  std::vector<float> weight;
  std::vector<float> bias;
};
LinearGrads linear_backward(const Tensor2& x, std::span<const float> weight, const Tensor2& grad_out);

struct LossResult {
  double loss = 0.0;
  Tensor2 grad;  // d loss / d logits
};

/// Mean over the batch of -log softmax(logits)[label].
LossResult softmax_cross_entropy(const Tensor2& logits, std::span<const int> labels);

/// Row-wise argmax; ties pick the lowest index.
std::vector<int> argmax_rows(const Tensor2& logits);

}  // namespace feataug::nn

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "patternid/tensor.hpp"

namespace patternid {

/// Network layout: `channels.size()` blocks of 3x3 stride-2 convolution (zero
/// padding 1) + ReLU, global average pooling, then a dense layer producing
/// `embedding_dim` outputs, optionally l2-normalized.
struct ModelConfig {
  std::vector<int> channels{16, 32, 64, 128};
  int embedding_dim = 256;
  bool l2_normalize = false;
  int input_channels = 1;
  std::string preprocessing = "scale_pm1";

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr int kKernelSize = 3;
inline constexpr int kStride = 2;
inline constexpr int kPadding = 1;

/// Spatial extent after one block.
constexpr Index conv_output_extent(Index input) { return (input + 2 * kPadding - kKernelSize) / kStride + 1; }

/// Total scalar parameter count; a pure function of the config.
Index parameter_count(const ModelConfig& config);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered layer-name -> tensor map: block{i}.kernel (out,in,3,3),
/// block{i}.bias (out), dense.weight (embedding_dim, C), dense.bias (embedding_dim).
template <typename Scalar>
struct Parameters {
  std::vector<NamedTensor<Scalar>> tensors;

  Tensor<Scalar>& at(std::string_view name);
  const Tensor<Scalar>& at(std::string_view name) const;
  Index scalar_count() const;
  bool congruent_with(const Parameters& other) const;
  void set_zero();

  template <typename Other>
  Parameters<Other> cast() const {
    Parameters<Other> out;
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<Other>()});
    return out;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

template <typename Scalar>
using Gradients = Parameters<Scalar>;

/// Zero-valued parameters laid out for `config`.
template <typename Scalar>
Parameters<Scalar> zero_parameters(const ModelConfig& config);

/// He-normal conv kernels, N(0, 1/fan_in) dense weight, zero biases.
Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename Scalar>
struct ForwardCache {
  Index batch = 0;
  Index input_height = 0;
  Index input_width = 0;
  std::vector<Index> out_heights;
  std::vector<Index> out_widths;
  // Per block: im2col of its input, (C_in*9) x (B*Ho*Wo).
  std::vector<RowMatrix<Scalar>> columns;
  // Per block: post-ReLU output, C_out x (B*Ho*Wo) (channel-major over the batch).
  std::vector<RowMatrix<Scalar>> activations;
  RowMatrix<Scalar> pooled;  // B x C_last
  RowMatrix<Scalar> raw;     // B x E, before normalization
  Vector<Scalar> norms;      // B, only when normalizing
  RowMatrix<Scalar> embeddings;
};

/// Forward pass for a B x C x H x W batch. Returns B x embedding_dim
/// embeddings; `cache` receives the intermediates backward() needs.
template <typename Scalar>
RowMatrix<Scalar> forward(const Parameters<Scalar>& params, const ModelConfig& config, const Tensor<Scalar>& batch,
                          ForwardCache<Scalar>* cache = nullptr);

/// Exact reverse-mode gradients of the forward pass given dL/d embeddings.
template <typename Scalar>
Gradients<Scalar> backward(const Parameters<Scalar>& params, const ModelConfig& config,
                           const ForwardCache<Scalar>& cache, const RowMatrix<Scalar>& upstream);

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  Parameters<float> first_moment;
  Parameters<float> second_moment;
};

OptimizerState make_optimizer_state(const Parameters<float>& params, const AdamConfig& config = {});

/// One bias-corrected Adam update. Throws NumericError (leaving params and
/// state untouched) when any gradient is non-finite.
void adam_step(Parameters<float>& params, const Gradients<float>& grads, OptimizerState& state);

}  // namespace patternid

#include "patternid/embednet.hpp"

#include <cmath>
#include <random>

#include "patternid/random.hpp"

namespace patternid {

void ModelConfig::validate() const {
  if (channels.empty()) throw ConfigError("model.channels: at least one conv block is required");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] <= 0) throw ConfigError("model.channels[" + std::to_string(i) + "] must be positive");
  }
  if (embedding_dim <= 0) throw ConfigError("model.embedding_dim must be positive");
  if (input_channels <= 0) throw ConfigError("model.input_channels must be positive");
  if (preprocessing != "scale_pm1") throw ConfigError("model.preprocessing: only 'scale_pm1' is supported");
}

Index parameter_count(const ModelConfig& config) {
  Index count = 0;
  Index in = config.input_channels;
  for (int out : config.channels) {
    count += out * in * kKernelSize * kKernelSize + out;
    in = out;
  }
  return count + config.embedding_dim * in + config.embedding_dim;
}

template <typename Scalar>
Tensor<Scalar>& Parameters<Scalar>::at(std::string_view name) {
  for (auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ShapeError("no parameter named '" + std::string(name) + "'");
}

template <typename Scalar>
const Tensor<Scalar>& Parameters<Scalar>::at(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ShapeError("no parameter named '" + std::string(name) + "'");
}

template <typename Scalar>
Index Parameters<Scalar>::scalar_count() const {
  Index n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

template <typename Scalar>
bool Parameters<Scalar>::congruent_with(const Parameters& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || tensors[i].value.shape() != other.tensors[i].value.shape()) {
      return false;
    }
  }
  return true;
}

template <typename Scalar>
void Parameters<Scalar>::set_zero() {
  for (auto& t : tensors) t.value.set_zero();
}

template <typename Scalar>
Parameters<Scalar> zero_parameters(const ModelConfig& config) {
  config.validate();
  Parameters<Scalar> p;
  Index in = config.input_channels;
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    const Index out = config.channels[i];
    const std::string prefix = "block" + std::to_string(i);
    p.tensors.push_back({prefix + ".kernel", Tensor<Scalar>({out, in, kKernelSize, kKernelSize})});
    p.tensors.push_back({prefix + ".bias", Tensor<Scalar>({out})});
    in = out;
  }
  p.tensors.push_back({"dense.weight", Tensor<Scalar>({config.embedding_dim, in})});
  p.tensors.push_back({"dense.bias", Tensor<Scalar>({config.embedding_dim})});
  return p;
}

Parameters<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  auto params = zero_parameters<float>(config);
  Rng rng(derive_seed(seed, kStreamInit));
  for (auto& [name, value] : params.tensors) {
    if (name.ends_with(".bias")) continue;
    // Fan-in is the product of every axis except the leading output axis.
    const double fan_in = static_cast<double>(value.size() / value.dim(0));
    const double stddev = name.ends_with(".kernel") ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
    std::normal_distribution<double> normal(0.0, stddev);
    for (Index i = 0; i < value.size(); ++i) value[i] = static_cast<float>(normal(rng));
  }
  return params;
}

namespace {

// `input` is laid out channel-major over the batch: (C, B, H, W).
template <typename Scalar>
void im2col(const Scalar* input, Index channels, Index batch, Index h, Index w, Index ho, Index wo,
            RowMatrix<Scalar>& cols) {
  const Index plane = ho * wo;
  cols.setZero(channels * kKernelSize * kKernelSize, batch * plane);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kKernelSize; ++ky) {
      for (Index kx = 0; kx < kKernelSize; ++kx) {
        Scalar* dst = cols.row((c * kKernelSize + ky) * kKernelSize + kx).data();
        for (Index b = 0; b < batch; ++b) {
          const Scalar* src = input + (c * batch + b) * h * w;
          Scalar* out = dst + b * plane;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * kStride + ky - kPadding;
            if (iy < 0 || iy >= h) continue;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * kStride + kx - kPadding;
              if (ix < 0 || ix >= w) continue;
              out[oy * wo + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, Index channels, Index batch, Index h, Index w, Index ho, Index wo,
            Scalar* grad_input) {
  const Index plane = ho * wo;
  std::fill(grad_input, grad_input + channels * batch * h * w, Scalar(0));
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kKernelSize; ++ky) {
      for (Index kx = 0; kx < kKernelSize; ++kx) {
        const Scalar* src = cols.row((c * kKernelSize + ky) * kKernelSize + kx).data();
        for (Index b = 0; b < batch; ++b) {
          Scalar* dst = grad_input + (c * batch + b) * h * w;
          const Scalar* in = src + b * plane;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * kStride + ky - kPadding;
            if (iy < 0 || iy >= h) continue;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * kStride + kx - kPadding;
              if (ix < 0 || ix >= w) continue;
              dst[iy * w + ix] += in[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

std::string block_name(std::size_t i) { return "block" + std::to_string(i); }

}  // namespace

template <typename Scalar>
RowMatrix<Scalar> forward(const Parameters<Scalar>& params, const ModelConfig& config, const Tensor<Scalar>& batch,
                          ForwardCache<Scalar>* cache) {
  if (batch.rank() != 4 || batch.dim(1) != config.input_channels) {
    throw ShapeError("forward expects a B x " + std::to_string(config.input_channels) + " x H x W batch, got " +
                     shape_string(batch.shape()));
  }
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  const Index nb = batch.dim(0);
  Index channels = batch.dim(1);
  Index h = batch.dim(2);
  Index w = batch.dim(3);
  c = ForwardCache<Scalar>{};
  c.batch = nb;
  c.input_height = h;
  c.input_width = w;

  // B x C x H x W -> C x B x H x W.
  RowMatrix<Scalar> current(channels, nb * h * w);
  for (Index b = 0; b < nb; ++b) {
    for (Index ch = 0; ch < channels; ++ch) {
      current.row(ch).segment(b * h * w, h * w) =
          Eigen::Map<const Vector<Scalar>>(batch.data() + (b * channels + ch) * h * w, h * w).transpose();
    }
  }

  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    // A stride-2 block needs at least a 2x2 input to see anything but padding.
    if (h < 2 || w < 2) {
      throw ShapeError(block_name(i) + ": input spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                       " is below the 2x2 minimum");
    }
    const Index ho = conv_output_extent(h);
    const Index wo = conv_output_extent(w);
    const Index out_channels = config.channels[i];
    RowMatrix<Scalar> cols;
    im2col(current.data(), channels, nb, h, w, ho, wo, cols);
    const auto kernel = params.at(block_name(i) + ".kernel").matrix(out_channels, channels * kKernelSize * kKernelSize);
    const auto& bias = params.at(block_name(i) + ".bias").flat();
    RowMatrix<Scalar> act = kernel * cols;
    act.colwise() += bias;
    act = act.cwiseMax(Scalar(0));
    c.out_heights.push_back(ho);
    c.out_widths.push_back(wo);
    if (cache) c.columns.push_back(std::move(cols));
    current = act;
    if (cache) c.activations.push_back(std::move(act));
    channels = out_channels;
    h = ho;
    w = wo;
  }

  const Index plane = h * w;
  c.pooled.resize(nb, channels);
  for (Index b = 0; b < nb; ++b) {
    for (Index ch = 0; ch < channels; ++ch) c.pooled(b, ch) = current.row(ch).segment(b * plane, plane).mean();
  }

  const auto weight = params.at("dense.weight").matrix(config.embedding_dim, channels);
  const auto& dense_bias = params.at("dense.bias").flat();
  c.raw = c.pooled * weight.transpose();
  c.raw.rowwise() += dense_bias.transpose();
  if (config.l2_normalize) {
    c.norms = c.raw.rowwise().norm();
    if ((c.norms.array() <= Scalar(0)).any()) throw NumericError("l2 normalization of a zero embedding");
    c.embeddings = c.norms.cwiseInverse().asDiagonal() * c.raw;
  } else {
    c.embeddings = c.raw;
  }
  if (!c.embeddings.allFinite()) throw NumericError("forward produced non-finite embeddings");
  return c.embeddings;
}

template <typename Scalar>
Gradients<Scalar> backward(const Parameters<Scalar>& params, const ModelConfig& config,
                           const ForwardCache<Scalar>& cache, const RowMatrix<Scalar>& upstream) {
  const Index nb = cache.batch;
  if (upstream.rows() != nb || upstream.cols() != config.embedding_dim) {
    throw ShapeError("backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", expected " + std::to_string(nb) + "x" +
                     std::to_string(config.embedding_dim));
  }
  if (cache.activations.size() != config.channels.size() || cache.columns.size() != config.channels.size()) {
    throw ShapeError("backward: cache does not match the model config");
  }
  auto grads = zero_parameters<Scalar>(config);

  RowMatrix<Scalar> d_raw;
  if (config.l2_normalize) {
    // y = x / |x|  =>  dx = (dy - y (y . dy)) / |x|
    const Vector<Scalar> proj = cache.embeddings.cwiseProduct(upstream).rowwise().sum();
    d_raw = cache.norms.cwiseInverse().asDiagonal() * (upstream - proj.asDiagonal() * cache.embeddings);
  } else {
    d_raw = upstream;
  }

  const Index last = static_cast<Index>(config.channels.size()) - 1;
  const Index channels = config.channels.back();
  grads.at("dense.weight").matrix(config.embedding_dim, channels) = d_raw.transpose() * cache.pooled;
  grads.at("dense.bias").flat() = d_raw.colwise().sum().transpose();
  const RowMatrix<Scalar> d_pooled = d_raw * params.at("dense.weight").matrix(config.embedding_dim, channels);

  const Index plane = cache.out_heights[last] * cache.out_widths[last];
  RowMatrix<Scalar> d_act(channels, nb * plane);
  for (Index b = 0; b < nb; ++b) {
    for (Index ch = 0; ch < channels; ++ch) {
      d_act.row(ch).segment(b * plane, plane).setConstant(d_pooled(b, ch) / static_cast<Scalar>(plane));
    }
  }

  for (Index i = last; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const Index in_channels = i == 0 ? config.input_channels : config.channels[ui - 1];
    const Index out_channels = config.channels[ui];
    const RowMatrix<Scalar> d_pre =
        (cache.activations[ui].array() > Scalar(0)).select(d_act, RowMatrix<Scalar>::Zero(d_act.rows(), d_act.cols()));
    const Index k = in_channels * kKernelSize * kKernelSize;
    grads.at(block_name(ui) + ".kernel").matrix(out_channels, k) = d_pre * cache.columns[ui].transpose();
    grads.at(block_name(ui) + ".bias").flat() = d_pre.rowwise().sum();
    if (i == 0) break;
    const RowMatrix<Scalar> d_cols = params.at(block_name(ui) + ".kernel").matrix(out_channels, k).transpose() * d_pre;
    const Index h = cache.out_heights[ui - 1];
    const Index w = cache.out_widths[ui - 1];
    d_act.resize(in_channels, nb * h * w);
    col2im(d_cols, in_channels, nb, h, w, cache.out_heights[ui], cache.out_widths[ui], d_act.data());
  }
  return grads;
}

OptimizerState make_optimizer_state(const Parameters<float>& params, const AdamConfig& config) {
  OptimizerState state;
  state.config = config;
  state.first_moment = params;
  state.first_moment.set_zero();
  state.second_moment = state.first_moment;
  return state;
}

void adam_step(Parameters<float>& params, const Gradients<float>& grads, OptimizerState& state) {
  if (!params.congruent_with(grads) || !params.congruent_with(state.first_moment) ||
      !params.congruent_with(state.second_moment)) {
    throw ShapeError("adam_step: parameters, gradients and moments are not shape-congruent");
  }
  for (const auto& g : grads.tensors) {
    if (!g.value.all_finite()) throw NumericError("adam_step: non-finite gradient in '" + g.name + "'");
  }
  const auto& cfg = state.config;
  const std::int64_t t = state.step + 1;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i].value;
    const auto& g = grads.tensors[i].value;
    auto& m = state.first_moment.tensors[i].value;
    auto& v = state.second_moment.tensors[i].value;
    for (Index j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      p[j] = static_cast<float>(p[j] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
  state.step = t;
}

template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<float> zero_parameters<float>(const ModelConfig&);
template Parameters<double> zero_parameters<double>(const ModelConfig&);
template RowMatrix<float> forward(const Parameters<float>&, const ModelConfig&, const Tensor<float>&,
                                  ForwardCache<float>*);
template RowMatrix<double> forward(const Parameters<double>&, const ModelConfig&, const Tensor<double>&,
                                   ForwardCache<double>*);
template Gradients<float> backward(const Parameters<float>&, const ModelConfig&, const ForwardCache<float>&,
                                   const RowMatrix<float>&);
template Gradients<double> backward(const Parameters<double>&, const ModelConfig&, const ForwardCache<double>&,
                                    const RowMatrix<double>&);

}  // namespace patternid

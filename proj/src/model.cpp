#include "rddpm/model.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rddpm {

ImageTensor predict(const NoisePredictor& model, const ImageTensor& x_t, int t) {
  ImageTensor out(model.shape());
  model.forward(x_t, t, out.data(), nullptr);
  return out;
}

TimeEmbedding::TimeEmbedding(int dim, int steps) : dim_(dim), steps_(steps) {
  if (dim < 2) throw std::invalid_argument("TimeEmbedding: dim must be >= 2");
  if (steps < 1) throw std::invalid_argument("TimeEmbedding: steps must be >= 1");
}

std::vector<double> TimeEmbedding::operator()(int t) const {
  const double u = static_cast<double>(t) / steps_;
  const int pairs = dim_ / 2;
  std::vector<double> out(dim_);
  for (int k = 0; k < pairs; ++k) {
    // The lowest frequency maps (0, 1] into a quarter turn, which keeps the
    // embedding injective on its own.
    const double exponent = pairs == 1 ? 0.0 : static_cast<double>(k) / (pairs - 1);
    const double omega = 0.5 * std::numbers::pi * std::pow(100.0, exponent);
    out[2 * k] = std::sin(omega * u);
    out[2 * k + 1] = std::cos(omega * u);
  }
  if (dim_ % 2 == 1) out[dim_ - 1] = u;
  return out;
}

void ConvNetConfig::validate() const {
  if (!input.valid()) throw std::invalid_argument("ConvNet: invalid input shape");
  if (width < 1) throw std::invalid_argument("ConvNet: width must be >= 1");
  if (depth < 2) throw std::invalid_argument("ConvNet: depth must be >= 2");
  if (time_dim < 2) throw std::invalid_argument("ConvNet: time_dim must be >= 2");
  if (steps < 1) throw std::invalid_argument("ConvNet: steps must be >= 1");
}

void to_json(nlohmann::json& j, const ConvNetConfig& c) {
  j = nlohmann::json{{"channels", c.input.channels}, {"height", c.input.height},
                     {"width_px", c.input.width},    {"width", c.width},
                     {"depth", c.depth},             {"time_dim", c.time_dim},
                     {"steps", c.steps},             {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ConvNetConfig& c) {
  c.input = Shape{j.at("channels").get<int>(), j.at("height").get<int>(),
                  j.at("width_px").get<int>()};
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.steps = j.at("steps").get<int>();
  c.init_seed = j.value("init_seed", std::uint64_t{0});
}

namespace {

template <class Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <class Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <class Scalar>
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <class Scalar>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

// Patch matrix for a 3x3, pad-1 convolution: row (c*9 + ky*3 + kx), column y*W + x.
template <class Scalar>
void im2col(const Scalar* in, int channels, int height, int width, RowMatrix<Scalar>& cols) {
  const int plane = height * width;
  cols.resize(static_cast<Eigen::Index>(channels) * 9, plane);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = in + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          Scalar* row = dst + static_cast<std::size_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, Scalar(0));
            continue;
          }
          const Scalar* srow = src + static_cast<std::size_t>(sy) * width;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            row[x] = (sx < 0 || sx >= width) ? Scalar(0) : srow[sx];
          }
        }
      }
    }
  }
}

template <class Scalar>
void col2im(const RowMatrix<Scalar>& cols, int channels, int height, int width, Scalar* out) {
  const int plane = height * width;
  std::fill(out, out + static_cast<std::size_t>(channels) * plane, Scalar(0));
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = out + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * plane;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          const Scalar* row = src + static_cast<std::size_t>(y) * width;
          Scalar* drow = dst + static_cast<std::size_t>(sy) * width;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            if (sx >= 0 && sx < width) drow[sx] += row[x];
          }
        }
      }
    }
  }
}

template <class Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <class Scalar>
struct ConvCache final : ActivationCache {
  std::vector<Scalar> input;
  std::vector<Scalar> embedding;
  std::vector<RowMatrix<Scalar>> cols;  // im2col of each layer's input
  std::vector<RowMatrix<Scalar>> pre;   // pre-activation of each hidden layer
  RowMatrix<Scalar> act;                // scratch for the current activation
};

// Backward scratch, reused across calls on the same thread.
template <class Scalar>
struct BackwardScratch {
  RowMatrix<Scalar> delta;
  RowMatrix<Scalar> dcols;
  std::vector<Scalar> dact;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> channel_sum;
};

template <class Scalar>
void uniform_fill(std::span<Scalar> dst, double bound, Rng& rng) {
  for (Scalar& v : dst) v = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
}

}  // namespace

template <class Scalar>
ConvNet<Scalar>::ConvNet(const ConvNetConfig& config)
    : config_(config), embedding_(config.time_dim, config.steps) {
  config.validate();
  const int c = config.input.channels;
  const int w = config.width;
  std::size_t offset = 0;
  auto add_layer = [&](int in, int out) {
    Layer layer{offset, offset + static_cast<std::size_t>(out) * in * 9, in, out};
    offset = layer.bias + out;
    layers_.push_back(layer);
  };
  add_layer(c, w);
  time_weight_ = offset;
  time_bias_ = time_weight_ + static_cast<std::size_t>(w) * config.time_dim;
  offset = time_bias_ + w;
  for (int k = 1; k + 1 < config.depth; ++k) add_layer(w, w);
  add_layer(w, c);
  params_.assign(offset, Scalar(0));

  Rng rng = Rng(config.init_seed).split("conv-init");
  std::span<Scalar> all(params_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    double bound = std::sqrt(1.0 / (layer.in * 9.0));
    if (i + 1 == layers_.size()) bound *= 0.1;
    uniform_fill(all.subspan(layer.weight, layer.bias - layer.weight), bound, rng);
    uniform_fill(all.subspan(layer.bias, layer.out), bound, rng);
    if (i == 0) {
      const double tb = std::sqrt(1.0 / config.time_dim);
      uniform_fill(all.subspan(time_weight_, time_bias_ - time_weight_), tb, rng);
      uniform_fill(all.subspan(time_bias_, w), tb, rng);
    }
  }
}

template <class Scalar>
std::size_t ConvNet<Scalar>::count_parameters(const ConvNetConfig& config) {
  const std::size_t c = config.input.channels;
  const std::size_t w = config.width;
  const std::size_t hidden = static_cast<std::size_t>(config.depth - 2);
  return (c * 9 * w + w) + (config.time_dim * w + w) + hidden * (w * 9 * w + w) + (w * 9 * c + c);
}

template <class Scalar>
std::unique_ptr<ActivationCache> ConvNet<Scalar>::make_cache() const {
  return std::make_unique<ConvCache<Scalar>>();
}

template <class Scalar>
void ConvNet<Scalar>::forward(const ImageTensor& x_t, int t, std::span<Scalar> out,
                              ActivationCache* cache) const {
  const Shape& s = config_.input;
  if (x_t.shape() != s) throw std::invalid_argument("ConvNet::forward: input shape mismatch");
  if (out.size() != s.size()) throw std::invalid_argument("ConvNet::forward: output size mismatch");
  if (t < 1 || t > config_.steps) throw std::out_of_range("ConvNet::forward: timestep out of range");

  thread_local ConvCache<Scalar> local;
  ConvCache<Scalar>& st = cache ? static_cast<ConvCache<Scalar>&>(*cache) : local;
  const int plane = static_cast<int>(s.plane());
  const std::size_t n_layers = layers_.size();

  st.input.assign(x_t.data().begin(), x_t.data().end());
  const std::vector<double> emb = embedding_(t);
  st.embedding.assign(emb.begin(), emb.end());
  st.cols.resize(n_layers);
  st.pre.resize(n_layers - 1);

  // Time conditioning vector, added per channel after the first convolution.
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> time_bias =
      ConstMatrixMap<Scalar>(params_.data() + time_weight_, config_.width, config_.time_dim) *
          ConstVectorMap<Scalar>(st.embedding.data(), config_.time_dim) +
      ConstVectorMap<Scalar>(params_.data() + time_bias_, config_.width);

  const Scalar* layer_input = st.input.data();
  for (std::size_t i = 0; i < n_layers; ++i) {
    const Layer& layer = layers_[i];
    im2col(layer_input, layer.in, s.height, s.width, st.cols[i]);
    ConstMatrixMap<Scalar> weight(params_.data() + layer.weight, layer.out, layer.in * 9);
    ConstVectorMap<Scalar> bias(params_.data() + layer.bias, layer.out);
    if (i + 1 == n_layers) {
      MatrixMap<Scalar> result(out.data(), layer.out, plane);
      result.noalias() = weight * st.cols[i];
      result.colwise() += bias;
      result += ConstMatrixMap<Scalar>(st.input.data(), s.channels, plane);
      break;
    }
    RowMatrix<Scalar>& z = st.pre[i];
    z.resize(layer.out, plane);
    z.noalias() = weight * st.cols[i];
    z.colwise() += bias;
    if (i == 0) z.colwise() += time_bias;
    st.act.resize(layer.out, plane);
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      const Scalar v = z.data()[k];
      st.act.data()[k] = v * sigmoid(v);
    }
    layer_input = st.act.data();
  }
}

template <class Scalar>
void ConvNet<Scalar>::backward(const ActivationCache& cache, std::span<const Scalar> upstream,
                               std::span<Scalar> param_grad) const {
  const auto& st = static_cast<const ConvCache<Scalar>&>(cache);
  const Shape& s = config_.input;
  const int plane = static_cast<int>(s.plane());
  if (upstream.size() != s.size()) throw std::invalid_argument("ConvNet::backward: upstream size");
  if (param_grad.size() != params_.size()) {
    throw std::invalid_argument("ConvNet::backward: gradient size mismatch");
  }
  if (st.cols.size() != layers_.size()) throw std::logic_error("ConvNet::backward: empty cache");

  thread_local BackwardScratch<Scalar> scratch;
  RowMatrix<Scalar>& delta = scratch.delta;
  delta = ConstMatrixMap<Scalar>(upstream.data(), s.channels, plane);
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& layer = layers_[k];
    if (k + 1 < layers_.size()) {
      // delta currently holds d/d(activation); push through SiLU.
      const RowMatrix<Scalar>& pre = st.pre[k];
      for (Eigen::Index i = 0; i < delta.size(); ++i) {
        const Scalar z = pre.data()[i];
        const Scalar sg = sigmoid(z);
        delta.data()[i] *= sg * (Scalar(1) + z * (Scalar(1) - sg));
      }
    }
    MatrixMap<Scalar> dweight(param_grad.data() + layer.weight, layer.out, layer.in * 9);
    VectorMap<Scalar> dbias(param_grad.data() + layer.bias, layer.out);
    dweight.noalias() += delta * st.cols[k].transpose();
    scratch.channel_sum = delta.rowwise().sum();
    dbias += scratch.channel_sum;
    if (k == 0) {
      MatrixMap<Scalar> dtime(param_grad.data() + time_weight_, config_.width, config_.time_dim);
      dtime.noalias() +=
          scratch.channel_sum * ConstVectorMap<Scalar>(st.embedding.data(), config_.time_dim).transpose();
      VectorMap<Scalar>(param_grad.data() + time_bias_, config_.width) += scratch.channel_sum;
      break;
    }
    ConstMatrixMap<Scalar> weight(params_.data() + layer.weight, layer.out, layer.in * 9);
    scratch.dcols.resize(layer.in * 9, plane);
    scratch.dcols.noalias() = weight.transpose() * delta;
    scratch.dact.resize(static_cast<std::size_t>(layer.in) * plane);
    col2im(scratch.dcols, layer.in, s.height, s.width, scratch.dact.data());
    delta = ConstMatrixMap<Scalar>(scratch.dact.data(), layer.in, plane);
  }
}

template <class Scalar>
nlohmann::json ConvNet<Scalar>::describe() const {
  nlohmann::json j = config_;
  j["type"] = "conv";
  j["parameter_count"] = params_.size();
  return j;
}

namespace {
template <class Scalar>
struct LinearCache final : ActivationCache {
  std::vector<Scalar> input;
  Scalar time = 0;
};
}  // namespace

template <class Scalar>
LinearPredictor<Scalar>::LinearPredictor(Shape shape, int steps, std::uint64_t init_seed)
    : shape_(shape), steps_(steps) {
  if (!shape.valid()) throw std::invalid_argument("LinearPredictor: invalid shape");
  const std::size_t n = shape.size();
  params_.resize(n * n + 2 * n);
  Rng rng = Rng(init_seed).split("linear-init");
  uniform_fill<Scalar>(params_, std::sqrt(1.0 / n), rng);
}

template <class Scalar>
std::unique_ptr<ActivationCache> LinearPredictor<Scalar>::make_cache() const {
  return std::make_unique<LinearCache<Scalar>>();
}

template <class Scalar>
void LinearPredictor<Scalar>::forward(const ImageTensor& x_t, int t, std::span<Scalar> out,
                                      ActivationCache* cache) const {
  if (x_t.shape() != shape_) throw std::invalid_argument("LinearPredictor: input shape mismatch");
  if (t < 1 || t > steps_) throw std::out_of_range("LinearPredictor: timestep out of range");
  const Eigen::Index n = static_cast<Eigen::Index>(shape_.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = static_cast<Scalar>(x_t[i]);
  const Scalar time = static_cast<Scalar>(static_cast<double>(t) / steps_);
  VectorMap<Scalar>(out.data(), n) = ConstMatrixMap<Scalar>(params_.data(), n, n) * x +
                                     ConstVectorMap<Scalar>(params_.data() + n * n, n) +
                                     time * ConstVectorMap<Scalar>(params_.data() + n * n + n, n);
  if (cache) {
    auto& st = static_cast<LinearCache<Scalar>&>(*cache);
    st.input.assign(x.data(), x.data() + n);
    st.time = time;
  }
}

template <class Scalar>
void LinearPredictor<Scalar>::backward(const ActivationCache& cache, std::span<const Scalar> upstream,
                                       std::span<Scalar> param_grad) const {
  const auto& st = static_cast<const LinearCache<Scalar>&>(cache);
  const Eigen::Index n = static_cast<Eigen::Index>(shape_.size());
  if (param_grad.size() != params_.size()) throw std::invalid_argument("LinearPredictor: grad size");
  ConstVectorMap<Scalar> g(upstream.data(), n);
  MatrixMap<Scalar>(param_grad.data(), n, n).noalias() +=
      g * ConstVectorMap<Scalar>(st.input.data(), n).transpose();
  VectorMap<Scalar>(param_grad.data() + n * n, n) += g;
  VectorMap<Scalar>(param_grad.data() + n * n + n, n) += st.time * g;
}

template <class Scalar>
nlohmann::json LinearPredictor<Scalar>::describe() const {
  return {{"type", "linear"},
          {"channels", shape_.channels},
          {"height", shape_.height},
          {"width_px", shape_.width},
          {"steps", steps_},
          {"parameter_count", params_.size()}};
}

template class ConvNet<float>;
template class ConvNet<double>;
template class LinearPredictor<float>;
template class LinearPredictor<double>;

std::unique_ptr<NoisePredictor> reference_net(const ConvNetConfig& config) {
  return std::make_unique<ConvNet<float>>(config);
}

std::unique_ptr<NoisePredictor> make_predictor(const nlohmann::json& description) {
  const std::string type = description.at("type").get<std::string>();
  if (type == "conv") return reference_net(description.get<ConvNetConfig>());
  if (type == "linear") {
    Shape shape{description.at("channels").get<int>(), description.at("height").get<int>(),
                description.at("width_px").get<int>()};
    return std::make_unique<LinearPredictor<float>>(shape, description.at("steps").get<int>());
  }
  throw std::invalid_argument("unknown predictor type: " + type);
}

}  // namespace rddpm

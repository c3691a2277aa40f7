#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "rddpm/core.hpp"

namespace rddpm {

/// Opaque per-call forward state kept for the backward pass. Each predictor
/// defines its own subclass; one cache per in-flight sample.
class ActivationCache {
 public:
  virtual ~ActivationCache() = default;
};

/// Trainable noise predictor eps_theta(x_t, t). Inputs are float images;
/// parameters, outputs and gradients use `Scalar` so the same network can be
/// evaluated in double for gradient checking.
///
/// forward() is const and reentrant: all per-call state goes into the cache.
template <class Scalar>
class BasicNoisePredictor {
 public:
  using scalar_type = Scalar;

  virtual ~BasicNoisePredictor() = default;

  virtual Shape shape() const = 0;
  virtual std::span<Scalar> parameters() = 0;
  virtual std::span<const Scalar> parameters() const = 0;
  std::size_t parameter_count() const { return parameters().size(); }

  virtual std::unique_ptr<ActivationCache> make_cache() const = 0;

  /// Writes eps_theta(x_t, t) into `out` (length shape().size()). When
  /// `cache` is non-null it records what backward() needs.
  virtual void forward(const ImageTensor& x_t, int t, std::span<Scalar> out,
                       ActivationCache* cache) const = 0;

  /// Accumulates d(loss)/d(theta) into `param_grad`, given d(loss)/d(output).
  virtual void backward(const ActivationCache& cache, std::span<const Scalar> upstream,
                        std::span<Scalar> param_grad) const = 0;

  /// Architecture description sufficient to rebuild the predictor.
  virtual nlohmann::json describe() const = 0;
};

using NoisePredictor = BasicNoisePredictor<float>;

/// Convenience single-sample forward for the float predictor.
ImageTensor predict(const NoisePredictor& model, const ImageTensor& x_t, int t);

/// Fixed sinusoidal features of t / T.
class TimeEmbedding {
 public:
  TimeEmbedding(int dim, int steps);
  int dim() const { return dim_; }
  std::vector<double> operator()(int t) const;

 private:
  int dim_;
  int steps_;
};

struct ConvNetConfig {
  Shape input{1, 28, 28};
  int width = 32;
  int depth = 4;  // number of 3x3 conv layers, >= 2
  int time_dim = 32;
  int steps = 200;
  std::uint64_t init_seed = 0;

  void validate() const;
  bool operator==(const ConvNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const ConvNetConfig& c);
void from_json(const nlohmann::json& j, ConvNetConfig& c);

/// Small residual convolutional noise predictor:
///   h0 = SiLU(conv(x) + Linear(emb(t)))
///   hk = SiLU(conv(h_{k-1}))            for k = 1 .. depth-2
///   out = conv(h_{depth-2}) + x
/// All convolutions are 3x3, stride 1, zero padding 1.
template <class Scalar>
class ConvNet final : public BasicNoisePredictor<Scalar> {
 public:
  explicit ConvNet(const ConvNetConfig& config);

  /// Same architecture with parameters copied and converted from `other`.
  template <class From>
  static ConvNet from(const ConvNet<From>& other) {
    ConvNet net(other.config());
    auto src = other.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) net.params_[i] = static_cast<Scalar>(src[i]);
    return net;
  }

  static std::size_t count_parameters(const ConvNetConfig& config);

  const ConvNetConfig& config() const { return config_; }

  Shape shape() const override { return config_.input; }
  std::span<Scalar> parameters() override { return params_; }
  std::span<const Scalar> parameters() const override { return params_; }
  std::unique_ptr<ActivationCache> make_cache() const override;
  void forward(const ImageTensor& x_t, int t, std::span<Scalar> out,
               ActivationCache* cache) const override;
  void backward(const ActivationCache& cache, std::span<const Scalar> upstream,
                std::span<Scalar> param_grad) const override;
  nlohmann::json describe() const override;

 private:
  struct Layer {
    std::size_t weight;  // offset of the (out x in*9) row-major weight block
    std::size_t bias;
    int in;
    int out;
  };

  ConvNetConfig config_;
  TimeEmbedding embedding_;
  std::vector<Layer> layers_;
  std::size_t time_weight_ = 0;  // (width x time_dim)
  std::size_t time_bias_ = 0;
  std::vector<Scalar> params_;
};

using ReferenceNet = ConvNet<float>;

/// Affine predictor out = A x + b + c (t / T); used for closed-form checks.
template <class Scalar>
class LinearPredictor final : public BasicNoisePredictor<Scalar> {
 public:
  LinearPredictor(Shape shape, int steps, std::uint64_t init_seed = 0);

  Shape shape() const override { return shape_; }
  std::span<Scalar> parameters() override { return params_; }
  std::span<const Scalar> parameters() const override { return params_; }
  std::unique_ptr<ActivationCache> make_cache() const override;
  void forward(const ImageTensor& x_t, int t, std::span<Scalar> out,
               ActivationCache* cache) const override;
  void backward(const ActivationCache& cache, std::span<const Scalar> upstream,
                std::span<Scalar> param_grad) const override;
  nlohmann::json describe() const override;

 private:
  Shape shape_;
  int steps_;
  std::vector<Scalar> params_;
};

/// Builds the float reference network.
std::unique_ptr<NoisePredictor> reference_net(const ConvNetConfig& config);

/// Rebuilds a float predictor from describe() output (parameters freshly
/// initialised; callers copy saved parameters in).
std::unique_ptr<NoisePredictor> make_predictor(const nlohmann::json& description);

}  // namespace rddpm

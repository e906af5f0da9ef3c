#pragma once

// Small dense feed-forward networks with exact backpropagation. Hidden
// layers use tanh; the output layer is linear or logistic.

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wsfc/rng.hpp"

namespace wsfc {

enum class OutputActivation { kLinear, kSigmoid };

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  bool operator==(const DenseLayer& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           weights == o.weights && bias.size() == o.bias.size() && bias == o.bias;
  }
};

/// Parameter-shaped buffer: gradients, momentum.
struct Gradients {
  std::vector<DenseLayer> layers;
  void set_zero();
  Gradients& operator+=(const Gradients& o);
  Gradients& operator*=(double s);
  bool all_finite() const;
};

class DenseNet {
 public:
  DenseNet() = default;
  /// All parameters zero.
  DenseNet(std::vector<std::size_t> sizes, OutputActivation output);

  /// Parameters uniform in [-scale, scale].
  static DenseNet random(std::vector<std::size_t> sizes, OutputActivation output, Rng& rng,
                         double scale = 0.1);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  OutputActivation output_activation() const { return output_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Gradients zero_gradients() const;
  std::size_t parameter_count() const;
  /// Flat parameter access, layer by layer, weights (column-major) then bias.
  double& parameter(std::size_t i);
  double parameter(std::size_t i) const;

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  /// Column-wise forward over a batch.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;

  bool operator==(const DenseNet& o) const {
    return sizes_ == o.sizes_ && output_ == o.output_ && layers_ == o.layers_;
  }

 private:
  std::vector<std::size_t> sizes_;
  OutputActivation output_ = OutputActivation::kLinear;
  std::vector<DenseLayer> layers_;
};

struct BackwardResult {
  Gradients grads;
  Eigen::VectorXd input_grad;
};

/// Gradient of dot(forward(input), upstream) with respect to every parameter
/// and to the input.
BackwardResult backward(const DenseNet& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& upstream);

/// Activations of every layer for a batch; activations.front() is the input
/// and activations.back() the output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardCache forward_cached(const DenseNet& net, const Eigen::MatrixXd& inputs);

/// Reverse sweep over a cached forward pass. Adds the parameter gradients
/// into `accum` and returns the input gradient.
Eigen::MatrixXd backward_cached(const DenseNet& net, const ForwardCache& cache,
                                const Eigen::MatrixXd& upstream, Gradients& accum);

/// Batched backward: columns of `inputs` and `upstream` are samples; the
/// parameter gradients of all samples are added into `accum`.
void backward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs,
                    const Eigen::MatrixXd& upstream, Gradients& accum);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
};

struct OptimizerState {
  Gradients velocity;
  std::size_t steps = 0;
};

OptimizerState make_optimizer_state(const DenseNet& net);

/// velocity = momentum * velocity + grad; param -= learning_rate * velocity.
/// Throws NumericError on non-finite gradient components.
void apply_update(DenseNet& net, const Gradients& grads, OptimizerState& state,
                  const SgdConfig& config);

using BackwardFn = std::function<BackwardResult(const DenseNet&, const Eigen::VectorXd&,
                                                const Eigen::VectorXd&)>;

/// Compares `analytic` (default: backward) with central differences of
/// sum(forward(input)) and returns the maximum relative error over all
/// parameters: |a - n| / max(|a|, |n|, 1e-12).
double gradient_check(const DenseNet& net, const Eigen::VectorXd& input, double eps,
                      const BackwardFn& analytic = backward);

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& j);

}  // namespace wsfc

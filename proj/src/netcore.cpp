#include "wsfc/netcore.hpp"

#include <algorithm>
#include <cmath>

#include "wsfc/errors.hpp"

namespace wsfc {

namespace {

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const char* activation_name(OutputActivation a) {
  return a == OutputActivation::kSigmoid ? "sigmoid" : "linear";
}

void check_input(const DenseNet& net, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != net.input_size())
    throw DimensionError("net expects input of size " + std::to_string(net.input_size()) +
                         ", got " + std::to_string(rows));
}

}  // namespace

void Gradients::set_zero() {
  for (auto& l : layers) {
    l.weights.setZero();
    l.bias.setZero();
  }
}

Gradients& Gradients::operator+=(const Gradients& o) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weights += o.layers[i].weights;
    layers[i].bias += o.layers[i].bias;
  }
  return *this;
}

Gradients& Gradients::operator*=(double s) {
  for (auto& l : layers) {
    l.weights *= s;
    l.bias *= s;
  }
  return *this;
}

bool Gradients::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weights.allFinite() && l.bias.allFinite(); });
}

DenseNet::DenseNet(std::vector<std::size_t> sizes, OutputActivation output)
    : sizes_(std::move(sizes)), output_(output) {
  if (sizes_.size() < 2) throw DimensionError("a net needs at least an input and an output layer");
  for (auto s : sizes_)
    if (s == 0) throw DimensionError("layer sizes must be positive");
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(sizes_[i]);
    const auto out = static_cast<Eigen::Index>(sizes_[i + 1]);
    layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
}

DenseNet DenseNet::random(std::vector<std::size_t> sizes, OutputActivation output, Rng& rng,
                          double scale) {
  DenseNet net(std::move(sizes), output);
  for (std::size_t i = 0; i < net.parameter_count(); ++i) net.parameter(i) = rng.uniform(-scale, scale);
  return net;
}

Gradients DenseNet::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  return g;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

double& DenseNet::parameter(std::size_t i) {
  for (auto& l : layers_) {
    const auto nw = static_cast<std::size_t>(l.weights.size());
    if (i < nw) return l.weights.data()[i];
    i -= nw;
    const auto nb = static_cast<std::size_t>(l.bias.size());
    if (i < nb) return l.bias.data()[i];
    i -= nb;
  }
  throw DimensionError("parameter index out of range");
}

double DenseNet::parameter(std::size_t i) const {
  return const_cast<DenseNet*>(this)->parameter(i);
}

Eigen::VectorXd DenseNet::forward(const Eigen::VectorXd& input) const {
  return forward_batch(input);
}

Eigen::MatrixXd DenseNet::forward_batch(const Eigen::MatrixXd& inputs) const {
  return forward_cached(*this, inputs).activations.back();
}

ForwardCache forward_cached(const DenseNet& net, const Eigen::MatrixXd& inputs) {
  check_input(net, inputs.rows());
  const auto& layers = net.layers();
  ForwardCache cache;
  cache.activations.reserve(layers.size() + 1);
  cache.activations.push_back(inputs);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Eigen::MatrixXd z = layers[i].weights * cache.activations.back();
    z.colwise() += layers[i].bias;
    if (i + 1 < layers.size())
      cache.activations.push_back(z.array().tanh());
    else if (net.output_activation() == OutputActivation::kSigmoid)
      cache.activations.push_back(z.unaryExpr([](double v) { return logistic(v); }));
    else
      cache.activations.push_back(std::move(z));
  }
  return cache;
}

Eigen::MatrixXd backward_cached(const DenseNet& net, const ForwardCache& cache,
                                const Eigen::MatrixXd& upstream, Gradients& accum) {
  const auto& layers = net.layers();
  const auto& acts = cache.activations;
  if (static_cast<std::size_t>(upstream.rows()) != net.output_size() ||
      upstream.cols() != acts.front().cols())
    throw DimensionError("upstream gradient shape does not match net output");
  if (accum.layers.size() != layers.size()) throw DimensionError("gradient buffer does not match net");

  Eigen::MatrixXd delta = upstream;
  if (net.output_activation() == OutputActivation::kSigmoid) {
    const auto& s = acts.back();
    delta = delta.array() * s.array() * (1.0 - s.array());
  }
  for (std::size_t i = layers.size(); i-- > 0;) {
    accum.layers[i].weights.noalias() += delta * acts[i].transpose();
    accum.layers[i].bias += delta.rowwise().sum();
    Eigen::MatrixXd below = layers[i].weights.transpose() * delta;
    if (i > 0) below = below.array() * (1.0 - acts[i].array().square());
    delta = std::move(below);
  }
  return delta;
}

BackwardResult backward(const DenseNet& net, const Eigen::VectorXd& input,
                        const Eigen::VectorXd& upstream) {
  BackwardResult r{net.zero_gradients(), {}};
  r.input_grad = backward_cached(net, forward_cached(net, input), upstream, r.grads);
  return r;
}

void backward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs,
                    const Eigen::MatrixXd& upstream, Gradients& accum) {
  backward_cached(net, forward_cached(net, inputs), upstream, accum);
}

OptimizerState make_optimizer_state(const DenseNet& net) {
  return OptimizerState{net.zero_gradients(), 0};
}

void apply_update(DenseNet& net, const Gradients& grads, OptimizerState& state,
                  const SgdConfig& config) {
  auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || state.velocity.layers.size() != layers.size())
    throw DimensionError("gradient shape does not match net");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads.layers[i].weights.rows() != layers[i].weights.rows() ||
        grads.layers[i].weights.cols() != layers[i].weights.cols() ||
        grads.layers[i].bias.size() != layers[i].bias.size())
      throw DimensionError("gradient shape does not match net");
  }
  if (!grads.all_finite()) throw NumericError("non-finite gradient component");

  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& v = state.velocity.layers[i];
    v.weights = config.momentum * v.weights + grads.layers[i].weights;
    v.bias = config.momentum * v.bias + grads.layers[i].bias;
    layers[i].weights -= config.learning_rate * v.weights;
    layers[i].bias -= config.learning_rate * v.bias;
  }
  ++state.steps;
}

double gradient_check(const DenseNet& net, const Eigen::VectorXd& input, double eps,
                      const BackwardFn& analytic) {
  const Eigen::VectorXd upstream = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(net.output_size()));
  const BackwardResult r = analytic(net, input, upstream);

  DenseNet probe = net;
  std::size_t flat = 0;
  double worst = 0.0;
  for (std::size_t li = 0; li < r.grads.layers.size(); ++li) {
    const auto& gl = r.grads.layers[li];
    std::vector<double> analytic_flat(gl.weights.data(), gl.weights.data() + gl.weights.size());
    analytic_flat.insert(analytic_flat.end(), gl.bias.data(), gl.bias.data() + gl.bias.size());
    for (double a : analytic_flat) {
      const double saved = probe.parameter(flat);
      probe.parameter(flat) = saved + eps;
      const double up = probe.forward(input).sum();
      probe.parameter(flat) = saved - eps;
      const double down = probe.forward(input).sum();
      probe.parameter(flat) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
      ++flat;
    }
  }
  return worst;
}

nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w(l.weights.data(), l.weights.data() + l.weights.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"weights", w}, {"bias", b}});
  }
  return {{"sizes", net.sizes()},
          {"output", activation_name(net.output_activation())},
          {"layers", layers}};
}

DenseNet dense_net_from_json(const nlohmann::json& j) {
  const auto sizes = j.at("sizes").get<std::vector<std::size_t>>();
  const auto out = j.at("output").get<std::string>();
  OutputActivation act;
  if (out == "linear")
    act = OutputActivation::kLinear;
  else if (out == "sigmoid")
    act = OutputActivation::kSigmoid;
  else
    throw ParseError("unknown output activation '" + out + "'", 0);
  DenseNet net(sizes, act);
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers().size()) throw ParseError("layer count does not match sizes", 0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = net.layers()[i];
    const auto w = layers[i].at("weights").get<std::vector<double>>();
    const auto b = layers[i].at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(l.weights.size()) ||
        b.size() != static_cast<std::size_t>(l.bias.size()))
      throw ParseError("parameter count does not match layer shape", 0);
    std::copy(w.begin(), w.end(), l.weights.data());
    std::copy(b.begin(), b.end(), l.bias.data());
  }
  return net;
}

}  // namespace wsfc

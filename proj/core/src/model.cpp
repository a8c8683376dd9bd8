#include "robust/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace robust {

namespace {

void require_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("layer_dims needs at least input and output");
  for (auto d : dims) {
    if (d == 0) throw std::invalid_argument("layer widths must be positive");
  }
  if (dims.back() < 2) throw std::invalid_argument("classifier needs at least two classes");
}

void require_input(const MlpClassifier& model, const Tensor& x) {
  if (x.rank() != 1 || x.size() != model.input_dim()) {
    throw std::invalid_argument(fmt::format("input has shape {}, model expects [{}]",
                                            to_string(x.shape()), model.input_dim()));
  }
}

}  // namespace

Var BoundModel::logits(const Var& x) const {
  graph_->note_forward();
  Var a = x;
  const std::size_t depth = params_.size() / 2;
  for (std::size_t l = 0; l < depth; ++l) {
    a = add(matvec(params_[2 * l], a), params_[2 * l + 1]);
    if (l + 1 < depth) a = tanh(a);
  }
  return a;
}

std::vector<double> BoundModel::flat_gradient(const Gradients& grads) const {
  std::vector<double> out;
  for (const Var& p : params_) {
    const Tensor g = grads(p);
    out.insert(out.end(), g.values().begin(), g.values().end());
  }
  return out;
}

MlpClassifier::MlpClassifier(std::vector<std::size_t> layer_dims, Rng& init)
    : dims_(std::move(layer_dims)) {
  require_dims(dims_);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::size_t in = dims_[l];
    const std::size_t out = dims_[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (double& v : w) v = init.uniform(-bound, bound);
    layers_.push_back({Tensor::matrix(out, in, std::move(w)), Tensor::zeros({out})});
  }
}

MlpClassifier::MlpClassifier(std::vector<std::size_t> layer_dims, std::vector<DenseLayer> layers)
    : dims_(std::move(layer_dims)), layers_(std::move(layers)) {
  require_dims(dims_);
  if (layers_.size() + 1 != dims_.size()) throw std::invalid_argument("layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Shape w_shape{dims_[l + 1], dims_[l]};
    const Shape b_shape{dims_[l + 1]};
    if (layers_[l].weight.shape() != w_shape || layers_[l].bias.shape() != b_shape) {
      throw std::invalid_argument(fmt::format("layer {} does not conform to dims", l));
    }
  }
}

MlpClassifier MlpClassifier::from_flat(std::vector<std::size_t> layer_dims,
                                       std::span<const double> params) {
  require_dims(layer_dims);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    layers.push_back({Tensor::zeros({layer_dims[l + 1], layer_dims[l]}),
                      Tensor::zeros({layer_dims[l + 1]})});
  }
  MlpClassifier model(std::move(layer_dims), std::move(layers));
  model.set_flat_parameters(params);
  return model;
}

std::size_t MlpClassifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::vector<double> MlpClassifier::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers_) {
    out.insert(out.end(), layer.weight.values().begin(), layer.weight.values().end());
    out.insert(out.end(), layer.bias.values().begin(), layer.bias.values().end());
  }
  return out;
}

void MlpClassifier::set_flat_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw std::invalid_argument(fmt::format("expected {} parameters, got {}", parameter_count(),
                                            params.size()));
  }
  require_finite(params, "parameters");
  std::size_t k = 0;
  for (auto& layer : layers_) {
    for (double& v : layer.weight.mutable_values()) v = params[k++];
    for (double& v : layer.bias.mutable_values()) v = params[k++];
  }
}

Tensor MlpClassifier::logits(const Tensor& x) const {
  require_input(*this, x);
  std::vector<double> a(x.values().begin(), x.values().end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Tensor& w = layers_[l].weight;
    const Tensor& b = layers_[l].bias;
    next.assign(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < w.cols(); ++c) acc += w.at(r, c) * a[c];
      acc += b[r];
      next[r] = l + 1 < layers_.size() ? std::tanh(acc) : acc;
    }
    a.swap(next);
  }
  return Tensor::vector(std::move(a));
}

BoundModel MlpClassifier::bind_as(Graph& graph, bool trainable) const {
  BoundModel bound;
  bound.graph_ = &graph;
  for (const auto& layer : layers_) {
    bound.params_.push_back(trainable ? graph.parameter(layer.weight) : graph.constant(layer.weight));
    bound.params_.push_back(trainable ? graph.parameter(layer.bias) : graph.constant(layer.bias));
  }
  return bound;
}

BoundModel MlpClassifier::bind(Graph& graph) const { return bind_as(graph, true); }
BoundModel MlpClassifier::bind_frozen(Graph& graph) const { return bind_as(graph, false); }

Tensor perturb_input(const Tensor& x, const NoiseSpec& noise, Rng& rng) {
  if (noise.scale < 0.0) throw std::invalid_argument("noise scale must be nonnegative");
  if (noise.scale == 0.0) return x;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += noise.scale * rng.normal();
  return Tensor(x.shape(), std::move(out));
}

double JacobianMatrix::frobenius_sq() const { return norm_sq(values).item(); }

double JacobianMatrix::max_abs_column_sum() const {
  double worst = 0.0;
  for (std::size_t j = 0; j < cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows(); ++i) s += at(i, j);
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

std::vector<Var> jacobian_rows(const BoundModel& bound, const Var& x, GradMode mode) {
  Graph& g = bound.graph();
  const Var p = bound.posterior(x);
  const std::size_t m = p.value().size();
  std::vector<Var> rows;
  rows.reserve(m);
  const Var wrt[] = {x};
  for (std::size_t i = 0; i < m; ++i) {
    const Gradients grads = g.gradient(pick(p, i), wrt, mode);
    rows.push_back(mode == GradMode::kRecord ? grads.var(x) : g.constant(grads(x)));
  }
  return rows;
}

JacobianMatrix input_output_jacobian(const MlpClassifier& model, const Tensor& x) {
  require_input(model, x);
  Graph g;
  const BoundModel bound = model.bind_frozen(g);
  const Var xv = g.input(x);
  const std::vector<Var> rows = jacobian_rows(bound, xv, GradMode::kValues);
  std::vector<double> values;
  values.reserve(rows.size() * x.size());
  for (const Var& r : rows) values.insert(values.end(), r.value().values().begin(), r.value().values().end());
  return {Tensor::matrix(rows.size(), x.size(), std::move(values)), x};
}

Tensor input_gradient(const MlpClassifier& model, const Tensor& x, const LossFunctional& loss) {
  require_input(model, x);
  Graph g;
  const BoundModel bound = model.bind_frozen(g);
  const Var xv = g.input(x);
  const Var l = loss(bound.posterior(xv));
  const Var wrt[] = {xv};
  return g.gradient(l, wrt)(xv);
}

void save_checkpoint(const MlpClassifier& model, std::ostream& out) {
  out << "robust-mlp 1\n";
  out << "layers " << model.layer_dims().size();
  for (auto d : model.layer_dims()) out << ' ' << d;
  out << '\n';
  const auto params = model.flat_parameters();
  out << "params " << params.size() << '\n';
  for (double v : params) out << fmt::format("{:.17g}\n", v);
}

void save_checkpoint(const MlpClassifier& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  save_checkpoint(model, out);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

MlpClassifier load_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "robust-mlp") {
    throw std::runtime_error("not a robust-mlp checkpoint");
  }
  if (version != 1) throw std::runtime_error(fmt::format("unsupported checkpoint version {}", version));
  std::string tag;
  std::size_t k = 0;
  if (!(in >> tag >> k) || tag != "layers") throw std::runtime_error("checkpoint: missing layers line");
  std::vector<std::size_t> dims(k);
  for (auto& d : dims) {
    if (!(in >> d)) throw std::runtime_error("checkpoint: truncated layers line");
  }
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "params") throw std::runtime_error("checkpoint: missing params line");
  std::vector<double> params(count);
  for (auto& v : params) {
    std::string token;
    if (!(in >> token)) throw std::runtime_error("checkpoint: truncated parameter list");
    v = std::stod(token);
  }
  return MlpClassifier::from_flat(std::move(dims), params);
}

MlpClassifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  return load_checkpoint(in);
}

}  // namespace robust

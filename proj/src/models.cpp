#include <fedaia/errors.hpp>
#include <fedaia/models.hpp>

#include <algorithm>
#include <cmath>

namespace fedaia {

namespace {

Index mlp_param_count(const MlpShape& s) { return s.inputs * s.hidden + s.hidden + s.hidden + 1; }

void check_input(const ModelParams& params, Index width) {
  if (width != params.shape().input_dim()) {
    throw ShapeError("feature width " + std::to_string(width) + " does not match model " +
                     params.shape().describe());
  }
}

}  // namespace

Index ModelShape::input_dim() const {
  return is_linear() ? as_linear().dim : as_mlp().inputs;
}

Index ModelShape::num_params() const {
  return is_linear() ? as_linear().dim : mlp_param_count(as_mlp());
}

std::string ModelShape::describe() const {
  if (is_linear()) return "Linear(" + std::to_string(as_linear().dim) + ")";
  return "Mlp(" + std::to_string(as_mlp().inputs) + ", " + std::to_string(as_mlp().hidden) +
         ", 1)";
}

ModelParams::ModelParams(ModelShape shape, Vector values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_.num_params()) {
    throw ShapeError("parameter vector of length " + std::to_string(values_.size()) +
                     " does not match " + shape_.describe());
  }
  if (!values_.allFinite()) throw NumericError("model parameters must be finite");
}

ModelParams ModelParams::zeros(const ModelShape& shape) {
  return ModelParams(shape, Vector::Zero(shape.num_params()));
}

void ModelParams::assign(const Eigen::Ref<const Vector>& values) {
  if (values.size() != values_.size()) {
    throw ShapeError("cannot assign " + std::to_string(values.size()) + " values to " +
                     shape_.describe());
  }
  if (!values.allFinite()) throw NumericError("model parameters must be finite");
  values_ = values;
}

MlpLayers unflatten(const ModelParams& params) {
  const MlpShape& s = params.shape().as_mlp();
  const Vector& v = params.values();
  MlpLayers layers;
  layers.w1 = Eigen::Map<const Matrix>(v.data(), s.hidden, s.inputs);
  Index offset = s.hidden * s.inputs;
  layers.b1 = v.segment(offset, s.hidden);
  offset += s.hidden;
  layers.w2 = v.segment(offset, s.hidden);
  offset += s.hidden;
  layers.b2 = v(offset);
  return layers;
}

ModelParams flatten(const MlpShape& shape, const MlpLayers& layers) {
  if (layers.w1.rows() != shape.hidden || layers.w1.cols() != shape.inputs ||
      layers.b1.size() != shape.hidden || layers.w2.size() != shape.hidden) {
    throw ShapeError("layer dimensions do not match " + ModelShape(shape).describe());
  }
  Vector v(mlp_param_count(shape));
  Index offset = 0;
  Eigen::Map<Matrix>(v.data(), shape.hidden, shape.inputs) = layers.w1;
  offset += shape.hidden * shape.inputs;
  v.segment(offset, shape.hidden) = layers.b1;
  offset += shape.hidden;
  v.segment(offset, shape.hidden) = layers.w2;
  offset += shape.hidden;
  v(offset) = layers.b2;
  return ModelParams(shape, std::move(v));
}

namespace {

// Forward pass of the MLP directly on the flat vector; fills the hidden
// pre-activations when requested.
double mlp_forward(const MlpShape& s, const Vector& v, const Eigen::Ref<const Vector>& x,
                   Vector* pre = nullptr) {
  const Eigen::Map<const Matrix> w1(v.data(), s.hidden, s.inputs);
  const Index off_b1 = s.hidden * s.inputs;
  const Index off_w2 = off_b1 + s.hidden;
  const Index off_b2 = off_w2 + s.hidden;
  Vector z = w1 * x + v.segment(off_b1, s.hidden);
  const double out = v.segment(off_w2, s.hidden).dot(z.cwiseMax(0.0)) + v(off_b2);
  if (pre != nullptr) *pre = std::move(z);
  return out;
}

}  // namespace

double predict(const ModelParams& params, const Eigen::Ref<const Vector>& x) {
  check_input(params, x.size());
  if (params.shape().is_linear()) return params.values().dot(x);
  return mlp_forward(params.shape().as_mlp(), params.values(), x);
}

double sample_loss(const ModelParams& params, const Eigen::Ref<const Vector>& x, double y,
                   LossKind loss) {
  switch (loss) {
    case LossKind::SquaredError: {
      const double r = predict(params, x) - y;
      return r * r;
    }
  }
  return 0.0;
}

double mean_loss(const ModelParams& params, const Matrix& x, const Vector& y, LossKind loss) {
  if (x.rows() == 0) throw ArgumentError("mean_loss over an empty dataset");
  if (y.size() != x.rows()) throw ShapeError("targets and design matrix disagree in length");
  check_input(params, x.cols());
  if (params.shape().is_linear() && loss == LossKind::SquaredError) {
    return (x * params.values() - y).squaredNorm() / static_cast<double>(x.rows());
  }
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += sample_loss(params, x.row(i).transpose(), y(i), loss);
  return total / static_cast<double>(x.rows());
}

void per_sample_gradient_into(const ModelParams& params, const Eigen::Ref<const Vector>& x,
                              double y, Eigen::Ref<Vector> out, LossKind loss) {
  check_input(params, x.size());
  if (out.size() != params.size()) throw ShapeError("gradient buffer has the wrong length");
  (void)loss;  // SquaredError is the only loss.
  const Vector& v = params.values();
  if (params.shape().is_linear()) {
    out = (2.0 * (v.dot(x) - y)) * x;
    return;
  }
  const MlpShape& s = params.shape().as_mlp();
  Vector pre;
  const double r = mlp_forward(s, v, x, &pre);
  const double dout = 2.0 * (r - y);
  const Index off_b1 = s.hidden * s.inputs;
  const Index off_w2 = off_b1 + s.hidden;
  const Index off_b2 = off_w2 + s.hidden;
  // ReLU'(0) is taken as 0.
  Vector dpre(s.hidden);
  for (Index j = 0; j < s.hidden; ++j) {
    dpre(j) = pre(j) > 0.0 ? dout * v(off_w2 + j) : 0.0;
  }
  Eigen::Map<Matrix>(out.data(), s.hidden, s.inputs).noalias() = dpre * x.transpose();
  out.segment(off_b1, s.hidden) = dpre;
  out.segment(off_w2, s.hidden) = dout * pre.cwiseMax(0.0);
  out(off_b2) = dout;
}

Vector per_sample_gradient(const ModelParams& params, const Eigen::Ref<const Vector>& x, double y,
                           LossKind loss) {
  Vector g(params.size());
  per_sample_gradient_into(params, x, y, g, loss);
  return g;
}

Vector grad_batch(const ModelParams& params, const Matrix& x, const Vector& y,
                  std::span<const Index> rows, LossKind loss) {
  if (rows.empty()) throw ArgumentError("grad_batch needs a non-empty batch");
  check_input(params, x.cols());
  Vector sum = Vector::Zero(params.size());
  Vector g(params.size());
  for (Index r : rows) {
    per_sample_gradient_into(params, x.row(r).transpose(), y(r), g, loss);
    sum += g;
  }
  return sum / static_cast<double>(rows.size());
}

Vector grad_batch(const ModelParams& params, const Matrix& x, const Vector& y, LossKind loss) {
  std::vector<Index> rows(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return grad_batch(params, x, y, rows, loss);
}

ModelParams init_mlp(const MlpShape& shape, Rng& rng) {
  if (shape.inputs < 1 || shape.hidden < 1) throw ShapeError("MLP needs positive layer sizes");
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(shape.inputs));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  std::uniform_real_distribution<double> layer1(-bound1, bound1);
  std::uniform_real_distribution<double> layer2(-bound2, bound2);
  MlpLayers layers;
  layers.w1.resize(shape.hidden, shape.inputs);
  for (Index c = 0; c < shape.inputs; ++c)
    for (Index r = 0; r < shape.hidden; ++r) layers.w1(r, c) = layer1(rng);
  layers.b1.resize(shape.hidden);
  for (Index r = 0; r < shape.hidden; ++r) layers.b1(r) = layer1(rng);
  layers.w2.resize(shape.hidden);
  for (Index r = 0; r < shape.hidden; ++r) layers.w2(r) = layer2(rng);
  layers.b2 = layer2(rng);
  return flatten(shape, layers);
}

ModelParams solve_least_squares(const Matrix& x, const Vector& y) {
  if (y.size() != x.rows()) throw ShapeError("targets and design matrix disagree in length");
  Vector theta = linalg::min_norm_solve(x, y);
  return ModelParams(ModelShape::linear(x.cols()), std::move(theta));
}

AdamState::AdamState(const AdamConfig& cfg, Index dim)
    : config(cfg), m(Vector::Zero(dim)), v(Vector::Zero(dim)), t(0) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ArgumentError("Adam betas must lie in [0, 1)");
  }
  if (cfg.eps < 0.0 || cfg.lr < 0.0) throw ArgumentError("Adam lr and eps must be non-negative");
}

void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& gradient) {
  if (gradient.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("Adam state, parameters and gradient must have equal length");
  }
  if (!gradient.allFinite()) throw NumericError("non-finite gradient passed to Adam");
  const AdamConfig& c = state.config;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * gradient;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * gradient.cwiseAbs2();
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (Index i = 0; i < params.size(); ++i) {
    const double m_hat = state.m(i) / bc1;
    const double v_hat = state.v(i) / bc2;
    const double denom = std::sqrt(v_hat) + c.eps;
    if (denom > 0.0) params(i) -= c.lr * m_hat / denom;
  }
}

void adam_step(AdamState& state, ModelParams& params, const Eigen::Ref<const Vector>& gradient) {
  Vector values = params.values();
  adam_step(state, values, gradient);
  params.assign(values);
}

void optimizer_step(OptimizerState& state, ModelParams& params,
                    const Eigen::Ref<const Vector>& gradient) {
  if (auto* sgd = std::get_if<SgdState>(&state)) {
    if (!gradient.allFinite()) throw NumericError("non-finite gradient passed to SGD");
    params.assign(params.values() - sgd->lr * gradient);
    return;
  }
  adam_step(std::get<AdamState>(state), params, gradient);
}

}  // namespace fedaia

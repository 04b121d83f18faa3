#pragma once

#include <fedaia/linalg.hpp>
#include <fedaia/rng.hpp>

#include <span>
#include <string>
#include <variant>

namespace fedaia {

struct LinearShape {
  Index dim = 0;
  bool operator==(const LinearShape&) const = default;
};

// One hidden ReLU layer with a scalar identity output.
struct MlpShape {
  Index inputs = 0;
  Index hidden = 0;
  bool operator==(const MlpShape&) const = default;
};

class ModelShape {
 public:
  ModelShape() = default;
  ModelShape(LinearShape s) : shape_(s) {}  // NOLINT(google-explicit-constructor)
  ModelShape(MlpShape s) : shape_(s) {}     // NOLINT(google-explicit-constructor)

  static ModelShape linear(Index dim) { return LinearShape{dim}; }
  static ModelShape mlp(Index inputs, Index hidden) { return MlpShape{inputs, hidden}; }

  bool is_linear() const { return std::holds_alternative<LinearShape>(shape_); }
  bool is_mlp() const { return std::holds_alternative<MlpShape>(shape_); }
  const LinearShape& as_linear() const { return std::get<LinearShape>(shape_); }
  const MlpShape& as_mlp() const { return std::get<MlpShape>(shape_); }

  // Width of the feature vector the model consumes.
  Index input_dim() const;
  // Length of the flat parameter vector.
  Index num_params() const;
  std::string describe() const;

  bool operator==(const ModelShape&) const = default;

 private:
  std::variant<LinearShape, MlpShape> shape_{LinearShape{}};
};

// Flat parameter vector tagged with its shape. Entries are always finite.
//
// Mlp layout: W1 (hidden x inputs, column-major), b1 (hidden), w2 (hidden), b2.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelShape shape, Vector values);

  static ModelParams zeros(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  const Vector& values() const { return values_; }
  Index size() const { return values_.size(); }

  // Replaces the values keeping the shape; validates length and finiteness.
  void assign(const Eigen::Ref<const Vector>& values);

  bool operator==(const ModelParams& other) const {
    return shape_ == other.shape_ && values_.size() == other.values_.size() &&
           values_ == other.values_;
  }

 private:
  ModelShape shape_;
  Vector values_;
};

// Unpacked MLP parameters.
struct MlpLayers {
  Matrix w1;  // hidden x inputs
  Vector b1;  // hidden
  Vector w2;  // hidden
  double b2 = 0.0;
};

MlpLayers unflatten(const ModelParams& params);
ModelParams flatten(const MlpShape& shape, const MlpLayers& layers);

enum class LossKind { SquaredError };

double predict(const ModelParams& params, const Eigen::Ref<const Vector>& x);

// Per-sample loss l(theta, x, y).
double sample_loss(const ModelParams& params, const Eigen::Ref<const Vector>& x, double y,
                   LossKind loss = LossKind::SquaredError);

// Mean loss over all rows of x.
double mean_loss(const ModelParams& params, const Matrix& x, const Vector& y,
                 LossKind loss = LossKind::SquaredError);

// Gradient of l(theta, x, y) with respect to theta.
Vector per_sample_gradient(const ModelParams& params, const Eigen::Ref<const Vector>& x, double y,
                           LossKind loss = LossKind::SquaredError);

// Writes the per-sample gradient into `out` (resized by the caller to num_params).
void per_sample_gradient_into(const ModelParams& params, const Eigen::Ref<const Vector>& x,
                              double y, Eigen::Ref<Vector> out,
                              LossKind loss = LossKind::SquaredError);

// Mean of per-sample gradients over the selected rows. The reduction is a
// sequential sum in row order followed by division by the batch size.
Vector grad_batch(const ModelParams& params, const Matrix& x, const Vector& y,
                  std::span<const Index> rows, LossKind loss = LossKind::SquaredError);

// Mean of per-sample gradients over every row.
Vector grad_batch(const ModelParams& params, const Matrix& x, const Vector& y,
                  LossKind loss = LossKind::SquaredError);

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
ModelParams init_mlp(const MlpShape& shape, Rng& rng);

// Minimum-norm least-squares fit of a linear model (SVD pseudo-inverse).
ModelParams solve_least_squares(const Matrix& x, const Vector& y);

// ---------------------------------------------------------------------------
// Optimizers

struct SgdState {
  double lr = 0.01;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Vector m;
  Vector v;
  long t = 0;

  AdamState() = default;
  AdamState(const AdamConfig& cfg, Index dim);
};

using OptimizerState = std::variant<SgdState, AdamState>;

// One Adam update with bias-corrected moments.
// Throws NumericError on a non-finite gradient.
void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& gradient);
void adam_step(AdamState& state, ModelParams& params, const Eigen::Ref<const Vector>& gradient);

// Applies whichever optimizer `state` holds.
void optimizer_step(OptimizerState& state, ModelParams& params,
                    const Eigen::Ref<const Vector>& gradient);

}  // namespace fedaia

#include <fedaia/errors.hpp>
#include <fedaia/io.hpp>
#include <fedaia/reconstruction.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedaia {

void ReconstructionReport::set_oracle(const ModelParams& oracle) {
  if (!(oracle.shape() == estimate.shape())) throw ShapeError("oracle and estimate differ in shape");
  l2_error = (estimate.values() - oracle.values()).norm();
}

nlohmann::json to_json(const ReconstructionReport& report) {
  nlohmann::json j;
  j["shape"] = shape_to_json(report.estimate.shape());
  j["estimate"] = std::vector<double>(report.estimate.values().data(),
                                      report.estimate.values().data() + report.estimate.size());
  j["l2_error"] = report.l2_error ? nlohmann::json(*report.l2_error) : nlohmann::json(nullptr);
  j["num_messages"] = report.num_messages;
  j["rounds"] = report.rounds;
  j["lambda_min"] = report.lambda_min;
  j["condition_number"] = std::isfinite(report.condition_number)
                              ? nlohmann::json(report.condition_number)
                              : nlohmann::json("inf");
  j["rank_deficient"] = report.rank_deficient;
  return j;
}

Matrix assemble_theta_in(const MessageLog& log, std::span<const int> rounds) {
  if (rounds.empty()) throw ArgumentError("at least one round is required");
  const Index d = log.at_round(rounds.front()).theta_in.size();
  Matrix theta_in(static_cast<Index>(rounds.size()), d);
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    theta_in.row(static_cast<Index>(i)) = log.at_round(rounds[i]).theta_in.values().transpose();
  }
  return theta_in;
}

Matrix assemble_theta_out(const MessageLog& log, std::span<const int> rounds) {
  if (rounds.empty()) throw ArgumentError("at least one round is required");
  const Index d = log.at_round(rounds.front()).theta_in.size();
  Matrix theta_out(static_cast<Index>(rounds.size()), d + 1);
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const MessageEntry& e = log.at_round(rounds[i]);
    const auto r = static_cast<Index>(i);
    theta_out.row(r).head(d) = (e.theta_in.values() - e.theta_out.values()).transpose();
    theta_out(r, d) = 1.0;
  }
  return theta_out;
}

ConditioningDiagnostics theta_out_diagnostics(const Matrix& theta_out) {
  ConditioningDiagnostics diag;
  diag.num_messages = static_cast<int>(theta_out.rows());
  diag.lambda_min = linalg::min_gram_eigenvalue(theta_out);
  diag.condition_number = linalg::condition_number(theta_out);
  return diag;
}

ConditioningDiagnostics conditioning_diagnostics(const MessageLog& log, std::span<const int> rounds) {
  return theta_out_diagnostics(assemble_theta_out(log, rounds));
}

ReconstructionReport passive_reconstruct_linear(const MessageLog& log, std::span<const int> rounds) {
  if (rounds.empty()) throw ArgumentError("passive reconstruction needs at least one round");
  const ModelShape shape = log.at_round(rounds.front()).theta_in.shape();
  if (!shape.is_linear()) throw ShapeError("passive reconstruction requires a linear model");

  const Matrix theta_in = assemble_theta_in(log, rounds);
  const Matrix theta_out = assemble_theta_out(log, rounds);
  // (Theta_out^T Theta_out)^+ Theta_out^T equals Theta_out^+; solving with the
  // SVD of Theta_out avoids squaring its condition number.
  const auto svd = linalg::thin_svd(theta_out);
  const Index rank = linalg::numerical_rank(svd.singularValues(), kPinvCutoff);
  const Matrix coefficients = linalg::min_norm_solve(theta_out, theta_in);

  ReconstructionReport report;
  report.estimate = ModelParams(shape, coefficients.row(coefficients.rows() - 1).transpose());
  report.num_messages = static_cast<int>(rounds.size());
  report.rounds.assign(rounds.begin(), rounds.end());
  const ConditioningDiagnostics diag = theta_out_diagnostics(theta_out);
  report.lambda_min = diag.lambda_min;
  report.condition_number = diag.condition_number;
  report.rank_deficient = rank < theta_out.cols();
  return report;
}

std::vector<int> evenly_spaced_rounds(const MessageLog& log, int count) {
  const auto all = log.rounds();
  if (count < 1) throw ArgumentError("count must be positive");
  if (static_cast<std::size_t>(count) > all.size()) {
    throw ArgumentError("log holds fewer than " + std::to_string(count) + " messages");
  }
  const std::size_t stride = all.size() / static_cast<std::size_t>(count);
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(all[static_cast<std::size_t>(i) * stride]);
  return out;
}

std::vector<int> select_message_rounds(const MessageLog& log, int n_select, long n_trials, Rng& rng) {
  const auto all = log.rounds();
  if (n_select < 1) throw ArgumentError("n_select must be positive");
  if (static_cast<std::size_t>(n_select) > all.size()) {
    throw ArgumentError("log holds fewer than n_select messages");
  }
  if (n_trials < 1) throw ArgumentError("n_trials must be positive");
  if (static_cast<std::size_t>(n_select) == all.size()) return all;

  const Matrix full_out = assemble_theta_out(log, all);
  std::vector<Index> pool(all.size());
  std::iota(pool.begin(), pool.end(), Index{0});
  const auto k = static_cast<std::size_t>(n_select);

  std::vector<int> best;
  double best_cond = std::numeric_limits<double>::infinity();
  Matrix sub(static_cast<Index>(k), full_out.cols());
  for (long trial = 0; trial < n_trials; ++trial) {
    // Partial Fisher-Yates: the first k entries of `pool` are a uniform subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<Index> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i = 0; i < k; ++i) sub.row(static_cast<Index>(i)) = full_out.row(chosen[i]);
    const double cond = linalg::condition_number(sub);
    if (best.empty() || cond < best_cond) {
      best_cond = cond;
      best.clear();
      for (Index c : chosen) best.push_back(all[static_cast<std::size_t>(c)]);
    }
  }
  return best;
}

double reconstruction_error_scale(double eta, double sigma, Index d, long local_steps,
                                  int num_messages, double lambda_min, double delta) {
  if (num_messages < 1 || !(lambda_min > 0.0) || !(delta > 0.0 && delta < 1.0)) {
    return std::numeric_limits<double>::infinity();
  }
  const double dd = static_cast<double>(d);
  const double inner = dd * static_cast<double>(local_steps) *
                       (dd + 1.0 + std::log(2.0 * dd / delta)) /
                       (static_cast<double>(num_messages) * lambda_min);
  return eta * sigma * dd * std::sqrt(inner);
}

double estimate_gradient_noise(const ModelParams& params, const ClientDataset& data,
                               int batch_size, int num_batches, Rng& rng) {
  if (num_batches < 2) throw ArgumentError("need at least two batches to estimate a spread");
  if (batch_size < 1) throw ArgumentError("batch_size must be positive");
  const auto n = static_cast<std::size_t>(data.size());
  const std::size_t b = std::min(n, static_cast<std::size_t>(batch_size));
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  Vector mean = Vector::Zero(params.size());
  Vector m2 = Vector::Zero(params.size());
  for (int k = 0; k < num_batches; ++k) {
    for (std::size_t i = 0; i < b; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    const Vector g = grad_batch(params, data.x, data.y, std::span<const Index>(order.data(), b));
    // Welford update.
    const Vector delta = g - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta.cwiseProduct(g - mean);
  }
  return (m2 / static_cast<double>(num_batches - 1)).cwiseSqrt().maxCoeff();
}

Vector contraction_complement_spectrum(const Matrix& gram, double eta, Index num_samples, long steps) {
  const Index d = gram.rows();
  const Matrix step = Matrix::Identity(d, d) - (2.0 * eta / static_cast<double>(num_samples)) * gram;
  Matrix power = Matrix::Identity(d, d);
  for (long k = 0; k < steps; ++k) power = power * step;
  const Matrix w = Matrix::Identity(d, d) - power;
  return linalg::symmetric_eigenvalues(0.5 * (w + w.transpose()));
}

ActiveReconstruction::ActiveReconstruction(int target, std::set<int> attack_rounds,
                                           const AdamConfig& adam)
    : target_(target), attack_rounds_(std::move(attack_rounds)), adam_config_(adam) {}

std::optional<ModelParams> ActiveReconstruction::intercept(int round, const ModelParams& /*broadcast*/,
                                                           int client) {
  if (client != target_ || !attack_rounds_.contains(round)) return std::nullopt;
  if (!estimate_) {
    if (!last_reply_) {
      throw ProtocolError("no model was received from client " + std::to_string(target_) +
                          " before the active attack started");
    }
    estimate_ = *last_reply_;
    adam_.emplace(adam_config_, estimate_->size());
  }
  pending_round_ = round;
  return *estimate_;
}

void ActiveReconstruction::observe_reply(int round, int client, const ModelParams& reply) {
  if (client != target_) return;
  last_reply_ = reply;
  if (!pending_round_ || *pending_round_ != round) return;
  const Vector pseudo_gradient = estimate_->values() - reply.values();
  adam_step(*adam_, *estimate_, pseudo_gradient);
  pending_round_.reset();
  completed_.push_back(round);
}

const ModelParams& ActiveReconstruction::estimate() const {
  if (!estimate_ || completed_.empty()) {
    throw ProtocolError("client " + std::to_string(target_) + " never answered an attack round");
  }
  return *estimate_;
}

ReconstructionReport ActiveReconstruction::report() const {
  ReconstructionReport r;
  r.estimate = estimate();
  r.num_messages = static_cast<int>(completed_.size());
  r.rounds = completed_;
  return r;
}

EchoAdversary::EchoAdversary(int target, std::set<int> attack_rounds)
    : target_(target), attack_rounds_(std::move(attack_rounds)) {}

std::optional<ModelParams> EchoAdversary::intercept(int round, const ModelParams& /*broadcast*/,
                                                    int client) {
  if (client != target_ || !attack_rounds_.contains(round)) return std::nullopt;
  if (!last_reply_) {
    throw ProtocolError("no model was received from client " + std::to_string(target_) +
                        " before the echo attack started");
  }
  return *last_reply_;
}

void EchoAdversary::observe_reply(int /*round*/, int client, const ModelParams& reply) {
  if (client == target_) last_reply_ = reply;
}

ModelParams oracle_local_model(const ClientDataset& data, const ModelParams& start, int budget,
                               const AdamConfig& adam) {
  if (budget < 1) throw ArgumentError("oracle budget must be at least one iteration");
  if (start.shape().input_dim() != data.width()) {
    throw ShapeError("start model does not match the dataset width");
  }
  if (start.shape().is_linear()) return solve_least_squares(data.x, data.y);

  AdamState state(adam, start.size());
  ModelParams current = start;
  ModelParams best = start;
  double best_loss = mean_loss(start, data.x, data.y);
  for (int it = 0; it < budget; ++it) {
    const Vector g = grad_batch(current, data.x, data.y);
    adam_step(state, current, g);
    const double loss = mean_loss(current, data.x, data.y);
    if (loss < best_loss) {
      best_loss = loss;
      best = current;
    }
  }
  return best;
}

}  // namespace fedaia

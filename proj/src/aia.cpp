#include <fedaia/aia.hpp>
#include <fedaia/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedaia {

nlohmann::json to_json(const AttackOutcome& outcome) {
  nlohmann::json j;
  j["method"] = outcome.method;
  j["accuracy"] = outcome.accuracy;
  j["predictions"] = outcome.predictions;
  j["aux"] = outcome.aux;
  return j;
}

AttackOutcome outcome_from_json(const nlohmann::json& j) {
  AttackOutcome o;
  o.method = j.at("method").get<std::string>();
  o.accuracy = j.at("accuracy").get<double>();
  o.predictions = j.at("predictions").get<std::vector<int>>();
  if (j.contains("aux")) o.aux = j.at("aux").get<std::map<std::string, double>>();
  return o;
}

double attack_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
  if (predictions.size() != truth.size()) throw ShapeError("prediction and truth lengths differ");
  if (truth.empty()) throw ArgumentError("accuracy over zero samples");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predictions[i] != truth[i] ? 1 : 0;
  return 1.0 - static_cast<double>(wrong) / static_cast<double>(truth.size());
}

PublicView public_view(const ClientDataset& data) {
  if (!data.has_sensitive()) throw DataError("dataset has no sensitive attribute to infer");
  PublicView v{data.x, data.y, data.sensitive_col};
  v.x.col(data.sensitive_col).setZero();
  return v;
}

namespace {

void check_view(const ModelParams& params, const PublicView& view) {
  if (params.shape().input_dim() != view.x.cols()) {
    throw ShapeError("model " + params.shape().describe() + " does not match feature width " +
                     std::to_string(view.x.cols()));
  }
}

AttackOutcome make_outcome(std::string method, std::vector<int> predictions,
                           const ClientDataset& data) {
  AttackOutcome o;
  o.method = std::move(method);
  o.accuracy = attack_accuracy(predictions, data.sensitive());
  o.predictions = std::move(predictions);
  return o;
}

}  // namespace

std::vector<int> infer_model_based(const ModelParams& params, const PublicView& view) {
  check_view(params, view);
  std::vector<int> out(static_cast<std::size_t>(view.size()));
  Vector x(view.x.cols());
  for (Index i = 0; i < view.size(); ++i) {
    x = view.x.row(i).transpose();
    x(view.sensitive_col) = 0.0;
    const double loss0 = sample_loss(params, x, view.y(i));
    x(view.sensitive_col) = 1.0;
    const double loss1 = sample_loss(params, x, view.y(i));
    out[static_cast<std::size_t>(i)] = loss0 < loss1 ? 0 : 1;
  }
  return out;
}

AttackOutcome model_based_aia(const ModelParams& params, const ClientDataset& data) {
  return make_outcome("model-based", infer_model_based(params, public_view(data)), data);
}

Vector relaxed_sensitive(const ModelParams& params, const PublicView& view) {
  check_view(params, view);
  if (!params.shape().is_linear()) throw ShapeError("closed-form AIA requires a linear model");
  const double theta_s = params.values()(view.sensitive_col);
  if (theta_s == 0.0) throw DegenerateAttributeError("sensitive coefficient is zero");
  // The view's sensitive column is zero, so x * theta is P * theta_p.
  return (view.y - view.x * params.values()) / theta_s;
}

AttackOutcome model_based_aia_linear_closed_form(const ModelParams& params, const ClientDataset& data) {
  const Vector s = relaxed_sensitive(params, public_view(data));
  std::vector<int> predictions(static_cast<std::size_t>(s.size()));
  for (Index i = 0; i < s.size(); ++i) predictions[static_cast<std::size_t>(i)] = s(i) < 0.5 ? 0 : 1;
  return make_outcome("model-based-closed-form", std::move(predictions), data);
}

AccuracyBound residual_accuracy_bound(const ModelParams& params, const ClientDataset& data) {
  if (!params.shape().is_linear()) throw ShapeError("the accuracy bound applies to linear models");
  const double theta_s = params.values()(data.sensitive_col);
  if (theta_s == 0.0) return AccuracyBound{0.0, true};
  const double mse = mean_loss(params, data.x, data.y);
  return AccuracyBound{std::max(0.0, 1.0 - 4.0 * mse / (theta_s * theta_s)), false};
}

void GumbelAiaConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("Gumbel temperature must be positive");
  if (iterations < 1) throw ConfigError("Gumbel attack needs at least one iteration");
  if (learning_rates.empty()) throw ConfigError("learning-rate grid is empty");
  if (fractions.empty()) throw ConfigError("round-fraction grid is empty");
  if (!(fd_step > 0.0)) throw ConfigError("finite-difference step must be positive");
}

namespace {

struct RoundTerm {
  Vector theta;
  ModelParams params;
  Vector delta;  // theta_t - theta_out_t
  double delta_norm = 0.0;
};

std::vector<RoundTerm> collect_rounds(const MessageLog& log, std::span<const int> rounds) {
  std::vector<RoundTerm> terms;
  for (int t : rounds) {
    const MessageEntry& e = log.at_round(t);
    RoundTerm r;
    r.theta = e.theta_in.values();
    r.params = e.theta_in;
    r.delta = e.theta_in.values() - e.theta_out.values();
    r.delta_norm = r.delta.norm();
    terms.push_back(std::move(r));
  }
  return terms;
}

double cosine(const Vector& a, const Vector& b, double b_norm) {
  const double an = a.norm();
  if (an == 0.0 || b_norm == 0.0) return 0.0;
  return a.dot(b) / (an * b_norm);
}

// Summed per-sample gradient at one round, with s~ substituted.
Vector summed_gradient(const RoundTerm& r, const PublicView& view, const Eigen::Ref<const Vector>& s) {
  if (r.params.shape().is_linear()) {
    Matrix xs = view.x;
    xs.col(view.sensitive_col) = s;
    const Vector residual = xs * r.theta - view.y;
    return 2.0 * xs.transpose() * residual;
  }
  Vector sum = Vector::Zero(r.params.size());
  Vector g(r.params.size());
  Vector x(view.x.cols());
  for (Index i = 0; i < view.size(); ++i) {
    x = view.x.row(i).transpose();
    x(view.sensitive_col) = s(i);
    per_sample_gradient_into(r.params, x, view.y(i), g);
    sum += g;
  }
  return sum;
}

// Objective and its gradient with respect to every s~_i.
double objective_and_gradient(const std::vector<RoundTerm>& terms, const PublicView& view,
                              const Vector& s, double fd_step, Vector* grad_s) {
  double total = 0.0;
  if (grad_s != nullptr) grad_s->setZero(s.size());
  const Index k = view.sensitive_col;
  for (const RoundTerm& r : terms) {
    const Vector big_g = summed_gradient(r, view, s);
    const double gn = big_g.norm();
    const double cos = cosine(big_g, r.delta, r.delta_norm);
    total += cos;
    if (grad_s == nullptr || gn == 0.0 || r.delta_norm == 0.0) continue;
    // d cos / d G
    const Vector u = r.delta / (gn * r.delta_norm) - (cos / (gn * gn)) * big_g;
    if (r.params.shape().is_linear()) {
      // d g_i / d s_i = 2 theta_k x_i + 2 r_i e_k
      Matrix xs = view.x;
      xs.col(k) = s;
      const Vector residual = xs * r.theta - view.y;
      *grad_s += 2.0 * r.theta(k) * (xs * u) + 2.0 * u(k) * residual;
    } else {
      Vector x(view.x.cols());
      for (Index i = 0; i < view.size(); ++i) {
        x = view.x.row(i).transpose();
        x(k) = s(i) + fd_step;
        const Vector plus = per_sample_gradient(r.params, x, view.y(i));
        x(k) = s(i) - fd_step;
        const Vector minus = per_sample_gradient(r.params, x, view.y(i));
        (*grad_s)(i) += u.dot(plus - minus) / (2.0 * fd_step);
      }
    }
  }
  return total;
}

double standard_gumbel(Rng& rng) {
  std::uniform_real_distribution<double> uni(std::numeric_limits<double>::min(), 1.0);
  return -std::log(-std::log(uni(rng)));
}

}  // namespace

double gradient_objective(const MessageLog& log, std::span<const int> rounds,
                          const PublicView& view, const Eigen::Ref<const Vector>& s,
                          Vector* grad, double fd_step) {
  if (s.size() != view.size()) throw ShapeError("one relaxed attribute per sample is required");
  const auto terms = collect_rounds(log, rounds);
  if (!terms.empty()) check_view(terms.front().params, view);
  return objective_and_gradient(terms, view, s, fd_step, grad);
}

GumbelRun gumbel_attack(const MessageLog& log, std::span<const int> rounds, const PublicView& view,
                        const GumbelAiaConfig& cfg, double learning_rate, Rng& rng) {
  cfg.validate();
  if (rounds.empty()) throw ArgumentError("gradient-based AIA needs at least one round");
  const auto terms = collect_rounds(log, rounds);
  check_view(terms.front().params, view);

  const Index n = view.size();
  Matrix logits = Matrix::Zero(n, 2);
  Vector s(n);
  Vector grad_s(n);
  const double tau = cfg.temperature;

  GumbelRun run;
  run.rounds.assign(rounds.begin(), rounds.end());
  run.learning_rate = learning_rate;
  run.initial_objective = objective_and_gradient(terms, view, Vector::Constant(n, 0.5), cfg.fd_step, nullptr);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (Index i = 0; i < n; ++i) {
      const double z1 = (logits(i, 1) + standard_gumbel(rng)) / tau;
      const double z0 = (logits(i, 0) + standard_gumbel(rng)) / tau;
      s(i) = 1.0 / (1.0 + std::exp(z0 - z1));
    }
    objective_and_gradient(terms, view, s, cfg.fd_step, &grad_s);
    for (Index i = 0; i < n; ++i) {
      const double ds = s(i) * (1.0 - s(i)) / tau;
      const double step = learning_rate * grad_s(i) * ds;
      logits(i, 1) += step;
      logits(i, 0) -= step;
    }
  }

  run.predictions.resize(static_cast<std::size_t>(n));
  run.logits_gap = logits.col(1) - logits.col(0);
  Vector discrete(n);
  for (Index i = 0; i < n; ++i) {
    const int v = logits(i, 1) >= logits(i, 0) ? 1 : 0;
    run.predictions[static_cast<std::size_t>(i)] = v;
    discrete(i) = v;
  }
  run.final_objective = objective_and_gradient(terms, view, discrete, cfg.fd_step, nullptr);
  return run;
}

std::vector<std::vector<int>> candidate_round_sets(const MessageLog& log,
                                                   const std::vector<double>& fractions) {
  std::vector<std::vector<int>> sets;
  auto add_prefixes = [&](const std::vector<int>& rounds) {
    if (rounds.empty()) return;
    for (double f : fractions) {
      const auto count = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(f * static_cast<double>(rounds.size()))));
      std::vector<int> prefix(rounds.begin(),
                              rounds.begin() + static_cast<std::ptrdiff_t>(std::min(count, rounds.size())));
      if (std::find(sets.begin(), sets.end(), prefix) == sets.end()) sets.push_back(std::move(prefix));
    }
  };
  add_prefixes(log.inspected_rounds());
  add_prefixes(log.active_rounds());
  return sets;
}

AttackOutcome gradient_based_aia(const MessageLog& log, const ClientDataset& data,
                                 const GumbelAiaConfig& cfg, Rng& rng) {
  cfg.validate();
  if (log.empty()) throw ArgumentError("gradient-based AIA needs a non-empty message log");
  const PublicView view = public_view(data);
  const std::vector<int> truth = data.sensitive();
  const auto sets = candidate_round_sets(log, cfg.fractions);

  std::optional<GumbelRun> best;
  double best_score = -std::numeric_limits<double>::infinity();
  double best_accuracy = 0.0;
  double best_cos = 0.0;
  for (const auto& rounds : sets) {
    for (double lr : cfg.learning_rates) {
      GumbelRun run = gumbel_attack(log, rounds, view, cfg, lr, rng);
      const double mean_cos = run.final_objective / static_cast<double>(rounds.size());
      const double accuracy = attack_accuracy(run.predictions, truth);
      const double score = cfg.criterion == SelectionCriterion::kHighestCosSim ? mean_cos : accuracy;
      if (!best || score > best_score) {
        best_score = score;
        best_accuracy = accuracy;
        best_cos = mean_cos;
        best = std::move(run);
      }
    }
  }

  AttackOutcome o;
  o.method = cfg.criterion == SelectionCriterion::kHighestCosSim ? "Grad" : "Grad-w-O";
  o.predictions = best->predictions;
  o.accuracy = best_accuracy;
  o.aux["cos_sim"] = best_cos;
  o.aux["learning_rate"] = best->learning_rate;
  o.aux["num_rounds"] = static_cast<double>(best->rounds.size());
  return o;
}

}  // namespace fedaia

#pragma once

#include <fedaia/federated.hpp>

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace fedaia {

// Inferred binary sensitive attributes for one client and how well they match.
struct AttackOutcome {
  std::string method;
  std::vector<int> predictions;
  double accuracy = 0.0;
  std::map<std::string, double> aux;

  bool operator==(const AttackOutcome&) const = default;
};

nlohmann::json to_json(const AttackOutcome& outcome);
AttackOutcome outcome_from_json(const nlohmann::json& j);

// Fraction of positions where predictions equal truth: 1 - Hamming / S_c.
double attack_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth);

// What the adversary knows about a client's samples: public features and
// targets. The sensitive column is present but zeroed.
struct PublicView {
  Matrix x;
  Vector y;
  Index sensitive_col = 0;

  Index size() const { return x.rows(); }
};

PublicView public_view(const ClientDataset& data);

// Model-based AIA: per sample, the value in {0,1} minimising the loss.
// Exact ties predict 1.
std::vector<int> infer_model_based(const ModelParams& params, const PublicView& view);
AttackOutcome model_based_aia(const ModelParams& params, const ClientDataset& data);

// Real-valued least-squares estimate s~ = (y - P theta_p) / theta_s for a linear model.
// Throws DegenerateAttributeError when theta_s == 0.
Vector relaxed_sensitive(const ModelParams& params, const PublicView& view);

// Closed form of the linear model-based attack: threshold s~ at 1/2.
AttackOutcome model_based_aia_linear_closed_form(const ModelParams& params, const ClientDataset& data);

struct AccuracyBound {
  double value = 0.0;
  // theta_s == 0: the bound is vacuous.
  bool degenerate = false;
};

// max(0, 1 - 4 E_c / theta_s^2) where E_c is the mean squared residual of
// `params` on the client's full dataset.
AccuracyBound residual_accuracy_bound(const ModelParams& params, const ClientDataset& data);

enum class SelectionCriterion {
  kHighestCosSim,   // "Grad"
  kOracleAccuracy,  // "Grad-w-O"
};

struct GumbelAiaConfig {
  double temperature = 1.0;
  std::vector<double> learning_rates{1e2, 1e3, 1e4, 1e5, 1e6};
  int iterations = 500;
  // Candidate inspected sets: the first max(1, floor(f * |rounds|)) rounds.
  std::vector<double> fractions{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  SelectionCriterion criterion = SelectionCriterion::kHighestCosSim;
  // Central-difference step on s~ for the MLP second-order term.
  double fd_step = 1e-4;

  void validate() const;
};

// Sum over rounds of CosSim(sum_i grad l(theta_t; x_i(s_i), y_i), theta_t - theta_out_t),
// with s_i allowed in [0, 1]. When `grad` is given it receives d objective / d s_i;
// `fd_step` is only used for Mlp models.
double gradient_objective(const MessageLog& log, std::span<const int> rounds,
                          const PublicView& view, const Eigen::Ref<const Vector>& s,
                          Vector* grad = nullptr, double fd_step = 1e-4);

struct GumbelRun {
  std::vector<int> predictions;
  std::vector<int> rounds;
  double learning_rate = 0.0;
  // Objective at s~ = 1/2 everywhere (uniform logits).
  double initial_objective = 0.0;
  // Objective at the final discrete predictions.
  double final_objective = 0.0;
  Vector logits_gap;  // logit(1) - logit(0) per sample
};

// Gumbel-softmax relaxation of the gradient-matching problem, optimised by
// gradient ascent on per-sample logits.
GumbelRun gumbel_attack(const MessageLog& log, std::span<const int> rounds, const PublicView& view,
                        const GumbelAiaConfig& cfg, double learning_rate, Rng& rng);

// Candidate inspected-round sets for the passive adversary and, when the log
// contains active rounds, the active ones as well. Duplicates are removed.
std::vector<std::vector<int>> candidate_round_sets(const MessageLog& log,
                                                   const std::vector<double>& fractions);

// Gradient-based AIA. Runs gumbel_attack over every candidate round set and
// learning rate and keeps the run preferred by cfg.criterion. Ground truth is
// read from `data` only for scoring and for kOracleAccuracy selection.
AttackOutcome gradient_based_aia(const MessageLog& log, const ClientDataset& data,
                                 const GumbelAiaConfig& cfg, Rng& rng);

}  // namespace fedaia

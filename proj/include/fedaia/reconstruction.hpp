#pragma once

#include <fedaia/federated.hpp>

#include <json.hpp>

#include <optional>
#include <set>

namespace fedaia {

struct ReconstructionReport {
  ModelParams estimate;
  // ||estimate - oracle||_2 when an oracle model was supplied.
  std::optional<double> l2_error;
  int num_messages = 0;
  std::vector<int> rounds;
  // lambda_min(Theta_out^T Theta_out / n_c).
  double lambda_min = 0.0;
  // 2-norm condition number of Theta_out.
  double condition_number = 0.0;
  // Numerical rank of Theta_out fell below d + 1.
  bool rank_deficient = false;

  void set_oracle(const ModelParams& oracle);
};

nlohmann::json to_json(const ReconstructionReport& report);

// Theta_in (n_c x d): the delivered models at the given rounds.
Matrix assemble_theta_in(const MessageLog& log, std::span<const int> rounds);
// Theta_out (n_c x (d+1)): pseudo-gradients theta_in - theta_out with a ones column.
Matrix assemble_theta_out(const MessageLog& log, std::span<const int> rounds);

// Passive reconstruction of a linear client's optimal local model from
// eavesdropped messages: the last row of the minimum-norm OLS solution of
// Theta_out * B = Theta_in.
ReconstructionReport passive_reconstruct_linear(const MessageLog& log, std::span<const int> rounds);

// `count` rounds evenly spaced through the log: entries i * floor(n / count).
std::vector<int> evenly_spaced_rounds(const MessageLog& log, int count);

// Among `n_trials` random subsets of size `n_select`, the one whose Theta_out
// has the smallest condition number (first encountered on ties).
std::vector<int> select_message_rounds(const MessageLog& log, int n_select, long n_trials, Rng& rng);

struct ConditioningDiagnostics {
  double lambda_min = 0.0;
  double condition_number = 0.0;
  int num_messages = 0;
};

ConditioningDiagnostics conditioning_diagnostics(const MessageLog& log, std::span<const int> rounds);

// Same quantities for an already assembled Theta_out.
ConditioningDiagnostics theta_out_diagnostics(const Matrix& theta_out);

// eta * sigma * d * sqrt(d * K * (d + 1 + ln(2d/delta)) / (n_c * lambda_min)),
// the reconstruction-error scale with the hidden constant set to one.
double reconstruction_error_scale(double eta, double sigma, Index d, long local_steps,
                                  int num_messages, double lambda_min, double delta);

// Largest per-coordinate standard deviation of mini-batch gradients at
// `params`, estimated from `num_batches` random batches of `batch_size` rows.
double estimate_gradient_noise(const ModelParams& params, const ClientDataset& data,
                               int batch_size, int num_batches, Rng& rng);

// Eigenvalues of I - (I - (2 eta / S) H)^K, in increasing order.
Vector contraction_complement_spectrum(const Matrix& gram, double eta, Index num_samples, long steps);

// Active reconstruction: replaces the broadcast to `target` at the scheduled
// rounds with its own estimate, and moves the estimate by Adam on the
// pseudo-gradient (sent - returned).
class ActiveReconstruction : public Adversary {
 public:
  ActiveReconstruction(int target, std::set<int> attack_rounds, const AdamConfig& adam);

  std::optional<ModelParams> intercept(int round, const ModelParams& broadcast, int client) override;
  void observe_reply(int round, int client, const ModelParams& reply) override;

  // Throws ProtocolError when no attack round completed.
  ReconstructionReport report() const;
  const ModelParams& estimate() const;
  int completed_rounds() const { return static_cast<int>(completed_.size()); }
  int target() const { return target_; }

 private:
  int target_;
  std::set<int> attack_rounds_;
  AdamConfig adam_config_;
  std::optional<AdamState> adam_;
  std::optional<ModelParams> last_reply_;
  std::optional<ModelParams> estimate_;
  std::optional<int> pending_round_;
  std::vector<int> completed_;
};

// Echoes the target's previous reply back to it during the attack rounds.
class EchoAdversary : public Adversary {
 public:
  EchoAdversary(int target, std::set<int> attack_rounds);
  std::optional<ModelParams> intercept(int round, const ModelParams& broadcast, int client) override;
  void observe_reply(int round, int client, const ModelParams& reply) override;

 private:
  int target_;
  std::set<int> attack_rounds_;
  std::optional<ModelParams> last_reply_;
};

// The optimal local model (Model-w-O). Linear: exact least squares, the budget
// is only validated. Mlp: full-batch Adam for `budget` iterations from `start`,
// returning the iterate with the lowest training loss.
ModelParams oracle_local_model(const ClientDataset& data, const ModelParams& start, int budget,
                               const AdamConfig& adam = AdamConfig{1e-3, 0.9, 0.999, 1e-8});

}  // namespace fedaia

#pragma once

#include <fedaia/models.hpp>
#include <fedaia/rng.hpp>

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace fedaia {

// One client's local data. The sensitive attribute is a {0,1} column of x,
// or kNoSensitive for datasets that carry none.
struct ClientDataset {
  static constexpr Index kNoSensitive = -1;

  Matrix x;
  Vector y;
  Index sensitive_col = 0;
  std::vector<std::string> feature_names;  // optional, empty or x.cols() long

  Index size() const { return x.rows(); }
  Index width() const { return x.cols(); }
  std::vector<Index> public_cols() const;
  bool has_sensitive() const { return sensitive_col != kNoSensitive; }
  // Ground-truth sensitive attribute per sample; throws DataError when absent.
  std::vector<int> sensitive() const;
  // Throws DataError when an invariant is violated.
  void validate() const;
};

// Rows of `source` selected by `rows`, same columns and sensitive index.
ClientDataset subset_rows(const ClientDataset& source, std::span<const Index> rows);

enum class WeightScheme { kUniform, kSizeProportional };

struct FLConfig {
  int num_rounds = 1;
  int local_epochs = 1;
  int batch_size = 32;
  double learning_rate = 0.01;
  WeightScheme weights = WeightScheme::kUniform;
  // Fraction of clients sampled each round; 1.0 means every client every round.
  double participation = 1.0;
  std::uint64_t seed = 0;
  // Record the weighted global training loss after each round.
  bool track_loss = false;

  void validate() const;
  // K = E * ceil(S_c / B).
  long local_steps(Index dataset_size) const;
};

struct NoDefense {};

struct DpSgd {
  double clip_norm = std::numeric_limits<double>::infinity();
  double noise_std = 0.0;
};

using DefenseConfig = std::variant<NoDefense, DpSgd>;

void validate_defense(const DefenseConfig& defense);

struct MessageEntry {
  int round = 0;
  ModelParams theta_in;
  ModelParams theta_out;
  bool operator==(const MessageEntry&) const = default;
};

// Messages exchanged with one client as seen on the wire.
class MessageLog {
 public:
  MessageLog() = default;
  explicit MessageLog(int client_id) : client_id_(client_id) {}

  int client_id() const { return client_id_; }
  const std::vector<MessageEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Rounds must be strictly increasing and shapes identical.
  void append(int round, ModelParams theta_in, ModelParams theta_out, bool active = false);

  const MessageEntry& at_round(int round) const;
  bool has_round(int round) const;

  std::vector<int> rounds() const;
  // Rounds where the message reaching the client was the genuine broadcast.
  std::vector<int> inspected_rounds() const;
  // Rounds where an adversary replaced the broadcast.
  const std::vector<int>& active_rounds() const { return active_rounds_; }

  bool operator==(const MessageLog&) const = default;

 private:
  int client_id_ = 0;
  std::vector<MessageEntry> entries_;
  std::vector<int> active_rounds_;
};

// Server-side man in the middle. `intercept` may replace the broadcast sent to
// one client; `observe_reply` sees the model the client sends back.
class Adversary {
 public:
  virtual ~Adversary() = default;
  virtual std::optional<ModelParams> intercept(int round, const ModelParams& broadcast,
                                               int client) = 0;
  virtual void observe_reply(int /*round*/, int /*client*/, const ModelParams& /*reply*/) {}
};

// FedAvg local update: E epochs of mini-batch SGD, batches reshuffled every
// epoch, last batch averaged over its actual size.
ModelParams local_update_fedavg(const ModelParams& params, const ClientDataset& data,
                                const FLConfig& cfg, Rng& batch_rng);

// Per-sample gradient rescaled to norm at most clip_norm.
void clip_gradient(Eigen::Ref<Vector> gradient, double clip_norm);

// (sum of clipped per-sample gradients + N(0, noise_std^2 clip_norm^2 I)) / |rows|.
// When `clipped_norms` is given, the norm of every clipped gradient is appended.
Vector dp_batch_gradient(const ModelParams& params, const ClientDataset& data,
                         std::span<const Index> rows, const DpSgd& dp, Rng& noise_rng,
                         std::vector<double>* clipped_norms = nullptr);

ModelParams local_update_dpsgd(const ModelParams& params, const ClientDataset& data,
                               const FLConfig& cfg, const DpSgd& dp, Rng& batch_rng,
                               Rng& noise_rng);

// Weighted average; weights are renormalized to sum to one.
ModelParams aggregate(std::span<const std::pair<double, ModelParams>> updates);

struct TrainingResult {
  ModelParams global;
  std::map<int, MessageLog> logs;
  // Per-round participating clients, in order.
  std::vector<std::vector<int>> participants;
  // Weighted global loss after each round (only when FLConfig::track_loss).
  std::vector<double> loss_history;
};

// Runs the server loop for cfg.num_rounds rounds starting from `initial`.
// Clients listed in `taps` have their (delivered, returned) pairs logged.
TrainingResult run_training(const std::vector<ClientDataset>& clients, const ModelParams& initial,
                            const FLConfig& cfg, const DefenseConfig& defense,
                            const std::set<int>& taps, Adversary* adversary = nullptr);

// Client weights p_c (sum to one) for the given scheme.
std::vector<double> client_weights(const std::vector<ClientDataset>& clients, WeightScheme scheme);

// sum_c p_c L_c(theta).
double global_loss(const std::vector<ClientDataset>& clients, const std::vector<double>& weights,
                   const ModelParams& params);

// Largest stable learning rate S_c / (2 lambda_max(X^T X)) for a linear client.
double linear_stability_bound(const ClientDataset& data);

}  // namespace fedaia

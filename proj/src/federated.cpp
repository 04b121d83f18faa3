#include <fedaia/errors.hpp>
#include <fedaia/federated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedaia {

std::vector<Index> ClientDataset::public_cols() const {
  std::vector<Index> cols;
  for (Index c = 0; c < x.cols(); ++c) {
    if (c != sensitive_col) cols.push_back(c);
  }
  return cols;
}

std::vector<int> ClientDataset::sensitive() const {
  if (!has_sensitive()) throw DataError("dataset has no sensitive attribute");
  std::vector<int> s(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) s[static_cast<std::size_t>(i)] = x(i, sensitive_col) != 0.0 ? 1 : 0;
  return s;
}

void ClientDataset::validate() const {
  if (x.rows() < 1) throw DataError("client dataset must hold at least one sample");
  if (y.size() != x.rows()) throw DataError("targets and design matrix disagree in length");
  if (has_sensitive() && (sensitive_col < 0 || sensitive_col >= x.cols())) {
    throw DataError("sensitive column index out of range");
  }
  if (!x.allFinite() || !y.allFinite()) throw DataError("dataset contains NaN or Inf");
  if (!feature_names.empty() && static_cast<Index>(feature_names.size()) != x.cols()) {
    throw DataError("feature name count does not match column count");
  }
  if (!has_sensitive()) return;
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = x(i, sensitive_col);
    if (s != 0.0 && s != 1.0) {
      throw DataError("sensitive attribute must be 0 or 1 (row " + std::to_string(i) + ")");
    }
  }
}

ClientDataset subset_rows(const ClientDataset& source, std::span<const Index> rows) {
  ClientDataset out;
  out.x.resize(static_cast<Index>(rows.size()), source.x.cols());
  out.y.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Index>(i)) = source.x.row(rows[i]);
    out.y(static_cast<Index>(i)) = source.y(rows[i]);
  }
  out.sensitive_col = source.sensitive_col;
  out.feature_names = source.feature_names;
  return out;
}

void FLConfig::validate() const {
  if (num_rounds < 1) throw ConfigError("num_rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ConfigError("participation must lie in (0, 1]");
  }
}

long FLConfig::local_steps(Index dataset_size) const {
  const long batches = (static_cast<long>(dataset_size) + batch_size - 1) / batch_size;
  return static_cast<long>(local_epochs) * batches;
}

void validate_defense(const DefenseConfig& defense) {
  if (const auto* dp = std::get_if<DpSgd>(&defense)) {
    if (!(dp->clip_norm > 0.0)) throw ConfigError("DP-SGD clip norm must be positive");
    if (!(dp->noise_std >= 0.0) || !std::isfinite(dp->noise_std)) {
      throw ConfigError("DP-SGD noise std must be finite and non-negative");
    }
  }
}

namespace {

void check_width(const ModelParams& params, const ClientDataset& data) {
  if (params.shape().input_dim() != data.width()) {
    throw ShapeError("model " + params.shape().describe() + " does not match dataset width " +
                     std::to_string(data.width()));
  }
}

// Runs E epochs over freshly shuffled batches and hands each batch to `step`.
template <typename BatchGradient>
ModelParams run_local_epochs(const ModelParams& params, const ClientDataset& data,
                             const FLConfig& cfg, Rng& batch_rng, BatchGradient&& batch_gradient) {
  check_width(params, data);
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto n = order.size();
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  Vector theta = params.values();
  ModelParams current = params;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), batch_rng);
    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t len = std::min(b, n - start);
      const std::span<const Index> rows(order.data() + start, len);
      const Vector g = batch_gradient(current, rows);
      theta -= cfg.learning_rate * g;
      current.assign(theta);
    }
  }
  return current;
}

}  // namespace

ModelParams local_update_fedavg(const ModelParams& params, const ClientDataset& data,
                                const FLConfig& cfg, Rng& batch_rng) {
  return run_local_epochs(params, data, cfg, batch_rng,
                          [&](const ModelParams& p, std::span<const Index> rows) {
                            return grad_batch(p, data.x, data.y, rows);
                          });
}

void clip_gradient(Eigen::Ref<Vector> gradient, double clip_norm) {
  const double norm = gradient.norm();
  if (norm > clip_norm) gradient *= clip_norm / norm;
}

Vector dp_batch_gradient(const ModelParams& params, const ClientDataset& data,
                         std::span<const Index> rows, const DpSgd& dp, Rng& noise_rng,
                         std::vector<double>* clipped_norms) {
  if (rows.empty()) throw ArgumentError("dp_batch_gradient needs a non-empty batch");
  check_width(params, data);
  Vector sum = Vector::Zero(params.size());
  Vector g(params.size());
  for (Index r : rows) {
    per_sample_gradient_into(params, data.x.row(r).transpose(), data.y(r), g);
    clip_gradient(g, dp.clip_norm);
    if (clipped_norms != nullptr) clipped_norms->push_back(g.norm());
    sum += g;
  }
  if (dp.noise_std > 0.0) {
    if (!std::isfinite(dp.clip_norm)) {
      throw ConfigError("DP-SGD noise requires a finite clip norm");
    }
    std::normal_distribution<double> gauss(0.0, dp.noise_std * dp.clip_norm);
    for (Index i = 0; i < sum.size(); ++i) sum(i) += gauss(noise_rng);
  }
  return sum / static_cast<double>(rows.size());
}

ModelParams local_update_dpsgd(const ModelParams& params, const ClientDataset& data,
                               const FLConfig& cfg, const DpSgd& dp, Rng& batch_rng,
                               Rng& noise_rng) {
  return run_local_epochs(params, data, cfg, batch_rng,
                          [&](const ModelParams& p, std::span<const Index> rows) {
                            return dp_batch_gradient(p, data, rows, dp, noise_rng);
                          });
}

ModelParams aggregate(std::span<const std::pair<double, ModelParams>> updates) {
  if (updates.empty()) throw ArgumentError("aggregate needs at least one update");
  double total = 0.0;
  for (const auto& [w, p] : updates) {
    if (!(w >= 0.0)) throw ArgumentError("aggregation weights must be non-negative");
    if (!(p.shape() == updates.front().second.shape())) {
      throw ShapeError("aggregate received models of different shapes");
    }
    total += w;
  }
  if (!(total > 0.0)) throw ArgumentError("aggregation weights must have a positive sum");
  Vector acc = Vector::Zero(updates.front().second.size());
  for (const auto& [w, p] : updates) acc += (w / total) * p.values();
  return ModelParams(updates.front().second.shape(), std::move(acc));
}

std::vector<double> client_weights(const std::vector<ClientDataset>& clients, WeightScheme scheme) {
  std::vector<double> w(clients.size(), 0.0);
  if (clients.empty()) return w;
  if (scheme == WeightScheme::kUniform) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(clients.size()));
    return w;
  }
  double total = 0.0;
  for (const auto& c : clients) total += static_cast<double>(c.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    w[i] = static_cast<double>(clients[i].size()) / total;
  }
  return w;
}

double global_loss(const std::vector<ClientDataset>& clients, const std::vector<double>& weights,
                   const ModelParams& params) {
  double total = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    total += weights[i] * mean_loss(params, clients[i].x, clients[i].y);
  }
  return total;
}

double linear_stability_bound(const ClientDataset& data) {
  const Matrix gram = data.x.transpose() * data.x;
  const double lambda_max = linalg::symmetric_eigenvalues(gram).maxCoeff();
  return static_cast<double>(data.size()) / (2.0 * lambda_max);
}

TrainingResult run_training(const std::vector<ClientDataset>& clients, const ModelParams& initial,
                            const FLConfig& cfg, const DefenseConfig& defense,
                            const std::set<int>& taps, Adversary* adversary) {
  if (clients.empty()) throw ConfigError("run_training needs at least one client");
  cfg.validate();
  validate_defense(defense);
  for (const auto& c : clients) {
    c.validate();
    check_width(initial, c);
  }
  const int n = static_cast<int>(clients.size());
  for (int id : taps) {
    if (id < 0 || id >= n) throw ConfigError("tapped client " + std::to_string(id) + " does not exist");
  }

  const std::vector<double> weights = client_weights(clients, cfg.weights);
  std::vector<Rng> batch_rngs;
  std::vector<Rng> noise_rngs;
  for (int c = 0; c < n; ++c) {
    batch_rngs.push_back(derive_stream(cfg.seed, StreamPurpose::kClientBatches, static_cast<std::uint64_t>(c)));
    noise_rngs.push_back(derive_stream(cfg.seed, StreamPurpose::kDpNoise, static_cast<std::uint64_t>(c)));
  }
  Rng server_rng = derive_stream(cfg.seed, StreamPurpose::kServerSampling);

  TrainingResult result;
  for (int id : taps) result.logs.emplace(id, MessageLog(id));
  ModelParams global = initial;

  std::vector<int> everyone(static_cast<std::size_t>(n));
  std::iota(everyone.begin(), everyone.end(), 0);
  const int per_round =
      std::max(1, static_cast<int>(std::lround(cfg.participation * static_cast<double>(n))));

  for (int round = 0; round < cfg.num_rounds; ++round) {
    std::vector<int> selected = everyone;
    if (per_round < n) {
      std::shuffle(selected.begin(), selected.end(), server_rng);
      selected.resize(static_cast<std::size_t>(per_round));
      std::sort(selected.begin(), selected.end());
    }

    std::vector<std::pair<double, ModelParams>> updates;
    updates.reserve(selected.size());
    for (int c : selected) {
      const auto ci = static_cast<std::size_t>(c);
      std::optional<ModelParams> replaced;
      if (adversary != nullptr) replaced = adversary->intercept(round, global, c);
      const ModelParams& delivered = replaced ? *replaced : global;

      ModelParams reply = std::visit(
          [&](const auto& d) -> ModelParams {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, DpSgd>) {
              return local_update_dpsgd(delivered, clients[ci], cfg, d, batch_rngs[ci], noise_rngs[ci]);
            } else {
              return local_update_fedavg(delivered, clients[ci], cfg, batch_rngs[ci]);
            }
          },
          defense);

      if (adversary != nullptr) adversary->observe_reply(round, c, reply);
      if (auto it = result.logs.find(c); it != result.logs.end()) {
        it->second.append(round, delivered, reply, replaced.has_value());
      }
      updates.emplace_back(weights[ci], std::move(reply));
    }
    global = aggregate(updates);
    result.participants.push_back(std::move(selected));
    if (cfg.track_loss) result.loss_history.push_back(global_loss(clients, weights, global));
  }
  result.global = std::move(global);
  return result;
}

}  // namespace fedaia

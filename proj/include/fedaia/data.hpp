#pragma once

#include <fedaia/federated.hpp>

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace fedaia {

// Toy federated regression: d - 2 uniform [0,1) features, an intercept
// column, and a Bernoulli(1/2) sensitive column last. All clients share one
// standard-normal true model.
struct ToyData {
  std::vector<ClientDataset> clients;
  Vector theta_star;
};

ToyData generate_toy(int num_clients, Index samples_per_client, Index dim, double noise_std, Rng& rng);

// Regression clients that disagree on the sensitive attribute's effect:
// client c uses +sensitive_coef when c is even and -sensitive_coef when odd,
// so the federated model is nearly blind to it while every local optimum is
// not. Layout matches generate_toy; public coefficients are N(0,1) scaled by
// public_scale and shared.
struct SyntheticRegression {
  int num_clients = 4;
  Index samples_per_client = 256;
  Index dim = 11;
  double public_scale = 5.0;
  double sensitive_coef = 1.0;
  double noise_std = 0.1;
};

ToyData generate_synthetic_regression(const SyntheticRegression& recipe, Rng& rng);

// Local data of the target client in the stalling construction.
//  kFactor: square upper-bidiagonal X with X^T X = H (Cholesky factor of H).
//  kDyadic: 2d + 2 rows with entries in {0, +-1/2}; gradients are computed
//           without rounding, so untouched coordinates stay exactly zero.
enum class HardLayout { kFactor, kDyadic };

// H: unit diagonal, -1/2 on both off-diagonals.
Matrix hard_instance_hessian(Index dim);
// Closed-form optimum: entry i (0-based) equals 1 - (i + 1) / (d + 1).
Vector hard_instance_optimum(Index dim);

// Client 0 is the target; the remaining clients have X = I and y = 0.
// None of these datasets carries a sensitive attribute.
std::vector<ClientDataset> generate_hard_instance(Index dim, int num_other_clients,
                                                  HardLayout layout = HardLayout::kDyadic);

struct SplitConfig {
  double heterogeneity = 0.5;  // h in [0, 0.5]
  int num_clients = 10;
  double train_fraction = 0.9;

  void validate() const;
};

// Two-cluster split with a controlled amount of swapping. Clients
// [0, n/2) come from the low-correlation cluster, [n/2, n) from the high one.
std::vector<ClientDataset> split_heterogeneous(const ClientDataset& pool, const SplitConfig& cfg, Rng& rng);

// Pool median of y, as used by the split.
double target_median(const Vector& y);

// 1 when a sample belongs to the "high" cluster: (s = 1 and y > med) or (s = 0 and y <= med).
bool in_high_cluster(int sensitive, double target, double median);

struct TrainValidation {
  ClientDataset train;
  ClientDataset validation;
};

// Random split keeping round(train_fraction * n) rows (at least one) for training.
TrainValidation train_validation_split(const ClientDataset& data, double train_fraction, Rng& rng);

// Synthetic census-like pool for the heterogeneity sweep: a handful of
// standardized numeric features, a binary sensitive attribute correlated
// with the target, and an intercept.
ClientDataset generate_income_like(Index num_samples, Rng& rng);

// JSON-lines persistence: a header line, then one {"x": [...], "y": v} line per row.
void write_dataset(std::ostream& out, const ClientDataset& data);
void write_dataset(const std::filesystem::path& path, const ClientDataset& data);
ClientDataset read_dataset(std::istream& in);
ClientDataset read_dataset(const std::filesystem::path& path);

}  // namespace fedaia

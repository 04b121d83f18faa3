#include <fedaia/data.hpp>
#include <fedaia/errors.hpp>
#include <fedaia/io.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fedaia {

ToyData generate_toy(int num_clients, Index samples_per_client, Index dim, double noise_std, Rng& rng) {
  if (num_clients < 1) throw ArgumentError("toy data needs at least one client");
  if (dim < 3) throw ArgumentError("toy dimension must leave room for intercept and sensitive columns");
  if (samples_per_client < dim) throw ArgumentError("toy clients need at least d samples");
  if (!(noise_std >= 0.0)) throw ArgumentError("noise_std must be non-negative");

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  ToyData out;
  out.theta_star.resize(dim);
  for (Index j = 0; j < dim; ++j) out.theta_star(j) = normal(rng);

  std::vector<std::string> names;
  for (Index j = 0; j + 2 < dim; ++j) names.push_back("u" + std::to_string(j));
  names.push_back("intercept");
  names.push_back("sensitive");

  for (int c = 0; c < num_clients; ++c) {
    ClientDataset data;
    data.x.resize(samples_per_client, dim);
    data.y.resize(samples_per_client);
    for (Index i = 0; i < samples_per_client; ++i) {
      for (Index j = 0; j + 2 < dim; ++j) data.x(i, j) = uniform(rng);
      data.x(i, dim - 2) = 1.0;
      data.x(i, dim - 1) = coin(rng) ? 1.0 : 0.0;
    }
    data.y = data.x * out.theta_star;
    if (noise_std > 0.0) {
      for (Index i = 0; i < samples_per_client; ++i) data.y(i) += noise_std * normal(rng);
    }
    data.sensitive_col = dim - 1;
    data.feature_names = names;
    out.clients.push_back(std::move(data));
  }
  return out;
}

ToyData generate_synthetic_regression(const SyntheticRegression& recipe, Rng& rng) {
  ToyData out = generate_toy(recipe.num_clients, recipe.samples_per_client, recipe.dim, 0.0, rng);
  const Index dim = recipe.dim;
  out.theta_star.head(dim - 2) *= recipe.public_scale;
  out.theta_star(dim - 1) = recipe.sensitive_coef;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < out.clients.size(); ++c) {
    ClientDataset& data = out.clients[c];
    Vector theta = out.theta_star;
    if (c % 2 == 1) theta(dim - 1) = -recipe.sensitive_coef;
    data.y = data.x * theta;
    if (recipe.noise_std > 0.0) {
      for (Index i = 0; i < data.size(); ++i) data.y(i) += recipe.noise_std * normal(rng);
    }
  }
  return out;
}

Matrix hard_instance_hessian(Index dim) {
  if (dim < 2) throw ArgumentError("hard instance needs d >= 2");
  Matrix h = Matrix::Identity(dim, dim);
  for (Index i = 0; i + 1 < dim; ++i) {
    h(i, i + 1) = -0.5;
    h(i + 1, i) = -0.5;
  }
  return h;
}

Vector hard_instance_optimum(Index dim) {
  if (dim < 2) throw ArgumentError("hard instance needs d >= 2");
  Vector theta(dim);
  const double denom = static_cast<double>(dim + 1);
  for (Index i = 0; i < dim; ++i) theta(i) = 1.0 - static_cast<double>(i + 1) / denom;
  return theta;
}

namespace {

ClientDataset hard_target_factor(Index dim) {
  // H = L L^T with L lower bidiagonal; X = L^T and L y = [1/2, 0, ...].
  const Matrix h = hard_instance_hessian(dim);
  const Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw NumericError("hard-instance Hessian is not positive definite");
  const Matrix lower = llt.matrixL();
  Vector rhs = Vector::Zero(dim);
  rhs(0) = 0.5;
  ClientDataset data;
  data.x = lower.transpose();
  data.y = lower.triangularView<Eigen::Lower>().solve(rhs);
  data.sensitive_col = ClientDataset::kNoSensitive;
  return data;
}

ClientDataset hard_target_dyadic(Index dim) {
  const Index rows = 2 * (dim - 1) + 4;
  ClientDataset data;
  data.x = Matrix::Zero(rows, dim);
  data.y = Vector::Zero(rows);
  Index r = 0;
  for (Index i = 0; i + 1 < dim; ++i) {
    for (int copy = 0; copy < 2; ++copy, ++r) {
      data.x(r, i) = 0.5;
      data.x(r, i + 1) = -0.5;
    }
  }
  for (int copy = 0; copy < 2; ++copy, ++r) {
    data.x(r, 0) = 0.5;
    data.y(r) = 0.5;
  }
  for (int copy = 0; copy < 2; ++copy, ++r) data.x(r, dim - 1) = 0.5;
  data.sensitive_col = ClientDataset::kNoSensitive;
  return data;
}

}  // namespace

std::vector<ClientDataset> generate_hard_instance(Index dim, int num_other_clients, HardLayout layout) {
  if (dim < 2) throw ArgumentError("hard instance needs d >= 2");
  if (num_other_clients < 0) throw ArgumentError("num_other_clients must be non-negative");
  std::vector<ClientDataset> clients;
  clients.push_back(layout == HardLayout::kFactor ? hard_target_factor(dim) : hard_target_dyadic(dim));
  for (int c = 0; c < num_other_clients; ++c) {
    ClientDataset other;
    other.x = Matrix::Identity(dim, dim);
    other.y = Vector::Zero(dim);
    other.sensitive_col = ClientDataset::kNoSensitive;
    clients.push_back(std::move(other));
  }
  return clients;
}

void SplitConfig::validate() const {
  if (!(heterogeneity >= 0.0 && heterogeneity <= 0.5)) throw ConfigError("heterogeneity must lie in [0, 0.5]");
  if (num_clients < 2 || num_clients % 2 != 0) throw ConfigError("num_clients must be even and >= 2");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
}

double target_median(const Vector& y) {
  if (y.size() == 0) throw DataError("median of an empty target vector");
  std::vector<double> v(y.data(), y.data() + y.size());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

bool in_high_cluster(int sensitive, double target, double median) {
  return (sensitive == 1 && target > median) || (sensitive == 0 && target <= median);
}

std::vector<ClientDataset> split_heterogeneous(const ClientDataset& pool, const SplitConfig& cfg, Rng& rng) {
  cfg.validate();
  pool.validate();
  const double med = target_median(pool.y);
  const std::vector<int> s = pool.sensitive();

  std::vector<Index> high;
  std::vector<Index> low;
  for (Index i = 0; i < pool.size(); ++i) {
    (in_high_cluster(s[static_cast<std::size_t>(i)], pool.y(i), med) ? high : low).push_back(i);
  }
  const std::size_t k = std::min(high.size(), low.size());
  if (k == 0) throw DataError("one of the two correlation clusters is empty");
  const auto per_cluster = static_cast<std::size_t>(cfg.num_clients / 2);
  if (k < per_cluster) throw DataError("clusters are too small to give every client a sample");

  std::shuffle(high.begin(), high.end(), rng);
  std::shuffle(low.begin(), low.end(), rng);
  high.resize(k);
  low.resize(k);

  // After shuffling, the leading entries are a uniform random subset.
  const auto swaps = static_cast<std::size_t>(std::floor((0.5 - cfg.heterogeneity) * static_cast<double>(k) + 1e-9));
  for (std::size_t i = 0; i < swaps; ++i) std::swap(high[i], low[i]);

  std::vector<ClientDataset> clients;
  auto carve = [&](const std::vector<Index>& cluster) {
    const std::size_t base = cluster.size() / per_cluster;
    const std::size_t extra = cluster.size() % per_cluster;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < per_cluster; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      std::vector<Index> rows(cluster.begin() + static_cast<std::ptrdiff_t>(begin),
                              cluster.begin() + static_cast<std::ptrdiff_t>(begin + len));
      std::sort(rows.begin(), rows.end());
      clients.push_back(subset_rows(pool, rows));
      begin += len;
    }
  };
  carve(low);
  carve(high);
  return clients;
}

TrainValidation train_validation_split(const ClientDataset& data, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ArgumentError("train_fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(data.size());
  if (n == 0) throw DataError("cannot split an empty dataset");
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n);
  std::vector<Index> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Index> validation(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());
  return TrainValidation{subset_rows(data, train), subset_rows(data, validation)};
}

ClientDataset generate_income_like(Index num_samples, Rng& rng) {
  if (num_samples < 2) throw ArgumentError("pool needs at least two samples");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  ClientDataset pool;
  pool.x.resize(num_samples, 5);
  pool.y.resize(num_samples);
  pool.feature_names = {"age", "education", "hours", "sex", "intercept"};
  for (Index i = 0; i < num_samples; ++i) {
    const double age = normal(rng);
    const double education = normal(rng);
    const double hours = normal(rng);
    const double sex = coin(rng) ? 1.0 : 0.0;
    pool.x.row(i) << age, education, hours, sex, 1.0;
    pool.y(i) = 0.3 * age + 0.6 * education + 0.4 * hours + 0.8 * sex + 0.5 * normal(rng);
  }
  pool.sensitive_col = 3;
  return pool;
}

void write_dataset(std::ostream& out, const ClientDataset& data) {
  nlohmann::json header;
  header["rows"] = data.size();
  header["cols"] = data.width();
  header["sensitive_col"] = data.sensitive_col;
  header["feature_names"] = data.feature_names;
  out << header.dump() << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out << "{\"x\":" << format_vector(data.x.row(i).transpose()) << ",\"y\":" << format_double(data.y(i))
        << "}\n";
  }
  if (!out) throw IoError("failed to write dataset");
}

void write_dataset(const std::filesystem::path& path, const ClientDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, data);
}

ClientDataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset file is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset header: ") + e.what());
  }
  ClientDataset data;
  const Index rows = header.at("rows").get<Index>();
  const Index cols = header.at("cols").get<Index>();
  data.sensitive_col = header.at("sensitive_col").get<Index>();
  data.feature_names = header.value("feature_names", std::vector<std::string>{});
  data.x.resize(rows, cols);
  data.y.resize(rows);
  Index r = 0;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (r >= rows) throw IoError("dataset has more rows than its header declares");
    try {
      const auto j = nlohmann::json::parse(line);
      const auto xs = j.at("x").get<std::vector<double>>();
      if (static_cast<Index>(xs.size()) != cols) {
        throw IoError("dataset line " + std::to_string(line_no) + " has the wrong width");
      }
      for (Index c = 0; c < cols; ++c) data.x(r, c) = xs[static_cast<std::size_t>(c)];
      data.y(r) = j.at("y").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    ++r;
  }
  if (r != rows) throw IoError("dataset has fewer rows than its header declares");
  data.validate();
  return data;
}

ClientDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace fedaia

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace icc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Immutable observational sample: outcome Y, treatments A, instruments Z,
// proxies W, exogenous covariates X.  Columns keep schema order.
class Dataset {
 public:
  Dataset(VectorXd y, MatrixXd a, MatrixXd z, MatrixXd w, MatrixXd x = {},
          std::vector<std::string> a_names = {}, std::vector<std::string> z_names = {},
          std::vector<std::string> w_names = {}, std::vector<std::string> x_names = {},
          std::string y_name = "y");

  Eigen::Index n() const { return y_.size(); }
  Eigen::Index d_a() const { return a_.cols(); }
  Eigen::Index d_z() const { return z_.cols(); }
  Eigen::Index d_w() const { return w_.cols(); }
  Eigen::Index d_x() const { return x_.cols(); }

  const VectorXd& y() const { return y_; }
  const MatrixXd& a() const { return a_; }
  const MatrixXd& z() const { return z_; }
  const MatrixXd& w() const { return w_; }
  const MatrixXd& x() const { return x_; }

  const std::string& y_name() const { return y_name_; }
  const std::vector<std::string>& a_names() const { return a_names_; }
  const std::vector<std::string>& z_names() const { return z_names_; }
  const std::vector<std::string>& w_names() const { return w_names_; }
  const std::vector<std::string>& x_names() const { return x_names_; }

  // Row subset (with repetition), used by resampling schemes.
  Dataset rows(const std::vector<Eigen::Index>& idx) const;
  Dataset with_w(MatrixXd w) const;
  Dataset with_a(MatrixXd a) const;

 private:
  VectorXd y_;
  MatrixXd a_, z_, w_, x_;
  std::vector<std::string> a_names_, z_names_, w_names_, x_names_;
  std::string y_name_;
};

// Reproducibility handle.  Replicate b of a resampling scheme driven by seed s
// draws from SeedSpec{s.master_seed, b}.
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  SeedSpec stream(std::uint64_t id) const { return {master_seed, id}; }
  // Independent master for a nested purpose (e.g. per Monte Carlo replicate).
  SeedSpec child(std::uint64_t tag) const;
  bool operator==(const SeedSpec&) const = default;
};

class Rng {
 public:
  explicit Rng(const SeedSpec& s);
  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Eigen::Index index(Eigen::Index n) {
    return std::uniform_int_distribution<Eigen::Index>(0, n - 1)(engine_);
  }
  MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::vector<Eigen::Index> bootstrap_indices(Eigen::Index n, Rng& rng);

// Worker count from ICC_WORKERS (default 1).
int default_workers();
// Runs fn(i) for i in [0, n) on up to `workers` threads.  Callers write into
// preallocated slots so results do not depend on scheduling.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct LoadResult {
  Dataset data;
  std::size_t dropped_rows = 0;
};

// Schema: JSON object mapping column name -> role ("Y","A","Z","W","X" or
// "ignore").  Rows with blank or NA cells in a used column are dropped.
LoadResult load_csv(const std::string& path, const std::string& schema_path);
LoadResult load_csv_text(const std::string& csv, const std::string& schema_json);

void write_csv(const Dataset& data, const std::string& path);
std::string to_csv(const Dataset& data);
std::string schema_json(const Dataset& data);

}  // namespace icc

#include "icc/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "icc/errors.hpp"

namespace icc {

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows_if_empty) {
  if (!j.is_array()) throw PreconditionError("expected a matrix (array of rows)");
  if (j.empty()) return Eigen::MatrixXd(rows_if_empty, 0);
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols)
      throw PreconditionError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  if (j.is_number()) return Eigen::VectorXd::Constant(1, j.get<double>());
  if (!j.is_array()) throw PreconditionError("expected a numeric array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

json to_json(const SeedSpec& s) {
  return {{"master_seed", s.master_seed}, {"stream_id", s.stream_id}};
}

SeedSpec seed_from_json(const json& j) {
  return {j.at("master_seed").get<std::uint64_t>(), j.at("stream_id").get<std::uint64_t>()};
}

namespace {
void check_finite(const json& j) {
  if (j.is_number_float() && !std::isfinite(j.get<double>()))
    throw NumericalError("report contains a non-finite number");
  if (j.is_structured())
    for (const auto& v : j) check_finite(v);
}
}  // namespace

std::string dump_report(const json& report) {
  check_finite(report);
  return report.dump(2) + "\n";
}

void write_report(const json& report, const std::string& path) {
  const std::string text = dump_report(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write report: " + path);
  out << text;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const std::exception& e) {
    throw PreconditionError(path + ": invalid JSON: " + e.what());
  }
}

}  // namespace icc

#pragma once

#include <Eigen/Dense>
#include <string>

#include <json.hpp>

#include "icc/data.hpp"

namespace icc {

using json = nlohmann::json;

json to_json(const Eigen::MatrixXd& m);  // array of rows
json to_json(const Eigen::VectorXd& v);  // flat array
Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows_if_empty = 0);
Eigen::VectorXd vector_from_json(const json& j);
json to_json(const SeedSpec& s);
SeedSpec seed_from_json(const json& j);

// Serialises a report: sorted keys, two-space indent, shortest round-trip
// doubles.  Parsing and re-serialising the output reproduces it byte for byte.
std::string dump_report(const json& report);
void write_report(const json& report, const std::string& path);
json read_json_file(const std::string& path);

}  // namespace icc

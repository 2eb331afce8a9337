#include "icc/data.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "icc/errors.hpp"

namespace icc {
namespace {

std::vector<std::string> default_names(const std::string& prefix, Eigen::Index k) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < k; ++j) out.push_back(prefix + std::to_string(j + 1));
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// RFC 4180 record splitter; handles quoted fields with embedded commas,
// doubled quotes and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw PreconditionError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == ".";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

Dataset::Dataset(VectorXd y, MatrixXd a, MatrixXd z, MatrixXd w, MatrixXd x,
                 std::vector<std::string> a_names, std::vector<std::string> z_names,
                 std::vector<std::string> w_names, std::vector<std::string> x_names,
                 std::string y_name)
    : y_(std::move(y)), a_(std::move(a)), z_(std::move(z)), w_(std::move(w)), x_(std::move(x)),
      a_names_(std::move(a_names)), z_names_(std::move(z_names)), w_names_(std::move(w_names)),
      x_names_(std::move(x_names)), y_name_(std::move(y_name)) {
  const Eigen::Index n = y_.size();
  if (x_.size() == 0) x_.resize(n, 0);
  if (w_.size() == 0) w_.resize(n, 0);
  if (a_.cols() == 0) throw PreconditionError("missing treatment");
  if (z_.cols() == 0) throw PreconditionError("missing instruments");
  if (a_.rows() != n || z_.rows() != n || w_.rows() != n || x_.rows() != n)
    throw PreconditionError("dataset blocks have different row counts");
  if (n <= d_a() + d_z() + d_w() + d_x() + 1)
    throw PreconditionError("too few rows for the number of columns");
  auto finite = [](const MatrixXd& m) { return m.allFinite(); };
  if (!y_.allFinite() || !finite(a_) || !finite(z_) || !finite(w_) || !finite(x_))
    throw PreconditionError("dataset contains non-finite values");
  if (a_names_.empty()) a_names_ = default_names("a", d_a());
  if (z_names_.empty()) z_names_ = default_names("z", d_z());
  if (w_names_.empty()) w_names_ = default_names("w", d_w());
  if (x_names_.empty()) x_names_ = default_names("x", d_x());
}

Dataset Dataset::rows(const std::vector<Eigen::Index>& idx) const {
  const auto m = static_cast<Eigen::Index>(idx.size());
  VectorXd y(m);
  MatrixXd a(m, d_a()), z(m, d_z()), w(m, d_w()), x(m, d_x());
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index r = idx[i];
    y(i) = y_(r);
    a.row(i) = a_.row(r);
    z.row(i) = z_.row(r);
    w.row(i) = w_.row(r);
    x.row(i) = x_.row(r);
  }
  return Dataset(y, a, z, w, x, a_names_, z_names_, w_names_, x_names_, y_name_);
}

Dataset Dataset::with_w(MatrixXd w) const {
  return Dataset(y_, a_, z_, std::move(w), x_, a_names_, z_names_, w_names_, x_names_, y_name_);
}

Dataset Dataset::with_a(MatrixXd a) const {
  return Dataset(y_, std::move(a), z_, w_, x_, a_names_, z_names_, w_names_, x_names_, y_name_);
}

SeedSpec SeedSpec::child(std::uint64_t tag) const {
  return {splitmix64(master_seed ^ splitmix64(stream_id * 0x9E3779B97F4A7C15ULL + tag + 1)), 0};
}

Rng::Rng(const SeedSpec& s) {
  std::seed_seq seq{static_cast<std::uint32_t>(s.master_seed),
                    static_cast<std::uint32_t>(s.master_seed >> 32),
                    static_cast<std::uint32_t>(s.stream_id),
                    static_cast<std::uint32_t>(s.stream_id >> 32)};
  engine_.seed(seq);
}

MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
  return m;
}

std::vector<Eigen::Index> bootstrap_indices(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> idx(n);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

int default_workers() {
  if (const char* env = std::getenv("ICC_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t k = std::min<std::size_t>(workers, n);
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex mu;
  for (std::size_t t = 0; t < k; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += k) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

LoadResult load_csv(const std::string& path, const std::string& schema_path) {
  return load_csv_text(read_file(path), read_file(schema_path));
}

LoadResult load_csv_text(const std::string& csv, const std::string& schema_text) {
  nlohmann::ordered_json schema;
  try {
    schema = nlohmann::ordered_json::parse(schema_text);
  } catch (const std::exception& e) {
    throw PreconditionError(std::string("schema is not valid JSON: ") + e.what());
  }
  if (!schema.is_object()) throw PreconditionError("schema must map column names to roles");

  std::map<std::string, std::vector<std::string>> roles;
  for (const auto& [col, role] : schema.items()) {
    if (!role.is_string()) throw PreconditionError("role for column '" + col + "' must be a string");
    const std::string r = role.get<std::string>();
    if (r != "Y" && r != "A" && r != "Z" && r != "W" && r != "X" && r != "ignore")
      throw PreconditionError("unknown role '" + r + "' for column '" + col + "'");
    roles[r].push_back(col);
  }
  if (roles["Y"].empty()) throw PreconditionError("missing outcome");
  if (roles["Y"].size() > 1) throw PreconditionError("schema assigns more than one outcome column");
  if (roles["A"].empty()) throw PreconditionError("missing treatment");
  if (roles["Z"].empty()) throw PreconditionError("missing instruments");

  const auto table = parse_csv(csv);
  if (table.empty()) throw PreconditionError("csv has no header");
  std::map<std::string, std::size_t> pos;
  for (std::size_t j = 0; j < table[0].size(); ++j) pos[trim(table[0][j])] = j;
  auto column_index = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw PreconditionError("schema column '" + name + "' not in csv header");
    return it->second;
  };

  const char* order[] = {"Y", "A", "Z", "W", "X"};
  std::vector<std::vector<std::size_t>> cols;
  for (const char* r : order) {
    std::vector<std::size_t> c;
    for (const auto& name : roles[r]) c.push_back(column_index(name));
    cols.push_back(std::move(c));
  }

  std::vector<std::vector<double>> kept;
  std::size_t dropped = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto& rec = table[i];
    std::vector<double> vals;
    bool missing = false;
    for (const auto& block : cols) {
      for (std::size_t j : block) {
        const std::string cell = j < rec.size() ? trim(rec[j]) : "";
        if (is_missing(cell)) {
          missing = true;
          break;
        }
        double v = 0;
        auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
          throw PreconditionError("non-numeric value '" + cell + "' in column '" +
                                  trim(table[0][j]) + "' at data row " + std::to_string(i));
        vals.push_back(v);
      }
      if (missing) break;
    }
    if (missing) {
      ++dropped;
      continue;
    }
    kept.push_back(std::move(vals));
  }

  const auto n = static_cast<Eigen::Index>(kept.size());
  std::vector<MatrixXd> blocks;
  std::size_t offset = 0;
  for (const auto& block : cols) {
    MatrixXd m(n, static_cast<Eigen::Index>(block.size()));
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < block.size(); ++j) m(i, j) = kept[i][offset + j];
    offset += block.size();
    blocks.push_back(std::move(m));
  }
  return {Dataset(blocks[0].col(0), blocks[1], blocks[2], blocks[3], blocks[4], roles["A"],
                  roles["Z"], roles["W"], roles["X"], roles["Y"][0]),
          dropped};
}

std::string to_csv(const Dataset& d) {
  std::string out;
  std::vector<std::string> header{d.y_name()};
  for (const auto* names : {&d.a_names(), &d.z_names(), &d.w_names(), &d.x_names()})
    header.insert(header.end(), names->begin(), names->end());
  for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
  out += '\n';
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out += fmt(d.y()(i));
    for (const MatrixXd* m : {&d.a(), &d.z(), &d.w(), &d.x()})
      for (Eigen::Index j = 0; j < m->cols(); ++j) out += "," + fmt((*m)(i, j));
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write file: " + path);
  out << to_csv(d);
}

std::string schema_json(const Dataset& d) {
  nlohmann::ordered_json s;
  s[d.y_name()] = "Y";
  for (const auto& n : d.a_names()) s[n] = "A";
  for (const auto& n : d.z_names()) s[n] = "Z";
  for (const auto& n : d.w_names()) s[n] = "W";
  for (const auto& n : d.x_names()) s[n] = "X";
  return s.dump(2) + "\n";
}

}  // namespace icc

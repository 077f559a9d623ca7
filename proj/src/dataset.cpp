#include "semintk/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "semintk/errors.hpp"

namespace semintk {

void Dataset::validate() const {
  if (z.rows() != n() || x.rows() != n())
    throw DataError("dataset: y, z, x row counts disagree");
  if (n() < 1) throw DataError("dataset: empty");
  if (!y.allFinite() || !z.allFinite() || !x.allFinite())
    throw DataError("dataset: non-finite entries");
  if (kind == TaskKind::Classification) {
    for (Eigen::Index i = 0; i < n(); ++i)
      if (y(i) != 0.0 && y(i) != 1.0)
        throw DataError("dataset: classification labels must be 0 or 1 (row " +
                        std::to_string(i + 1) + ")");
  }
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.precision(17);
  out << "y";
  for (Eigen::Index j = 0; j < data.p(); ++j) out << ",z" << (j + 1);
  for (Eigen::Index j = 0; j < data.d(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << data.y(i);
    for (Eigen::Index j = 0; j < data.p(); ++j) out << ',' << data.z(i, j);
    for (Eigen::Index j = 0; j < data.d(); ++j) out << ',' << data.x(i, j);
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::string& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");

  // header: y,z1..zp,x1..xd
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  if (header.empty() || header[0] != "y")
    throw DataError(path + ": header must start with 'y'");
  int p = 0, d = 0;
  size_t k = 1;
  while (k < header.size() && header[k] == "z" + std::to_string(p + 1)) ++p, ++k;
  while (k < header.size() && header[k] == "x" + std::to_string(d + 1)) ++d, ++k;
  if (k != header.size() || p < 1 || d < 1)
    throw DataError(path + ": header must be y,z1..zp,x1..xd");

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        size_t used = 0;
        double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        vals.push_back(v);
      } catch (const std::exception&) {
        throw DataError(path + ": row " + std::to_string(lineno) +
                        ": cannot parse value '" + field + "'");
      }
    }
    if (static_cast<int>(vals.size()) != 1 + p + d)
      throw DataError(path + ": row " + std::to_string(lineno) + ": expected " +
                      std::to_string(1 + p + d) + " fields, got " +
                      std::to_string(vals.size()));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  Dataset data;
  data.kind = kind;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  data.y.resize(n);
  data.z.resize(n, p);
  data.x.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    data.y(i) = rows[i][0];
    for (int j = 0; j < p; ++j) data.z(i, j) = rows[i][1 + j];
    for (int j = 0; j < d; ++j) data.x(i, j) = rows[i][1 + p + j];
  }
  data.validate();
  return data;
}

}  // namespace semintk

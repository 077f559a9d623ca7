#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>

namespace semintk {

enum class TaskKind { Regression, Classification };

// Ground truth carried by simulated datasets, for metric computation.
struct DatasetTruth {
  Eigen::VectorXd beta0;
  int case_id = 0;
  std::uint64_t seed = 0;
};

struct Dataset {
  Eigen::VectorXd y;  // n
  Eigen::MatrixXd z;  // n x p
  Eigen::MatrixXd x;  // n x d
  TaskKind kind = TaskKind::Regression;
  std::optional<DatasetTruth> truth;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return z.cols(); }
  Eigen::Index d() const { return x.cols(); }

  // Throws DataError when shapes disagree or labels are invalid.
  void validate() const;
};

// CSV with header y,z1..zp,x1..xd; 17 significant digits on write.
void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path, TaskKind kind);

}  // namespace semintk

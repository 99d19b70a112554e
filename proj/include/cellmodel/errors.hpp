#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cellmodel {

/// A model equation was evaluated at a pole or outside its log domain.
class ModelDomainError : public std::domain_error {
 public:
  explicit ModelDomainError(const std::string& what) : std::domain_error(what) {}
  ModelDomainError(const std::string& what, std::size_t sample_index)
      : std::domain_error(what + " (sample " + std::to_string(sample_index) + ")"),
        sample_index_(sample_index),
        has_index_(true) {}

  bool has_sample_index() const { return has_index_; }
  std::size_t sample_index() const { return sample_index_; }

 private:
  std::size_t sample_index_ = 0;
  bool has_index_ = false;
};

class RankDeficiencyError : public std::runtime_error {
 public:
  RankDeficiencyError(const std::string& what, std::vector<std::string> columns)
      : std::runtime_error(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class EmptyRegressorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Some error-covariance diagonal exceeded the blow-up threshold.
class CovarianceBlowUpError : public std::runtime_error {
 public:
  CovarianceBlowUpError(const std::string& what, std::size_t step, double max_diagonal)
      : std::runtime_error(what), step_(step), max_diagonal_(max_diagonal) {}
  std::size_t step() const { return step_; }
  double max_diagonal() const { return max_diagonal_; }

 private:
  std::size_t step_;
  double max_diagonal_;
};

class EmptyBinError : public std::runtime_error {
 public:
  EmptyBinError(const std::string& what, std::vector<std::size_t> bins)
      : std::runtime_error(what), bins_(std::move(bins)) {}
  const std::vector<std::size_t>& bins() const { return bins_; }

 private:
  std::vector<std::size_t> bins_;
};

}  // namespace cellmodel

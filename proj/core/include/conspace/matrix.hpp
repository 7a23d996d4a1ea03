#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "conspace/error.hpp"

namespace conspace {

// Dense matrix with string row/column labels (units x amenities).
class LabeledMatrix {
public:
    LabeledMatrix() = default;
    LabeledMatrix(std::vector<std::string> row_labels,
                  std::vector<std::string> col_labels);

    Eigen::MatrixXd& values() { return values_; }
    const Eigen::MatrixXd& values() const { return values_; }

    const std::vector<std::string>& row_labels() const { return row_labels_; }
    const std::vector<std::string>& col_labels() const { return col_labels_; }

    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index cols() const { return values_.cols(); }

    Eigen::Index row_of(const std::string& label) const;
    Eigen::Index col_of(const std::string& label) const;
    bool has_row(const std::string& label) const { return row_index_.count(label) > 0; }

    void add(const std::string& row, const std::string& col, double v);

private:
    std::vector<std::string> row_labels_;
    std::vector<std::string> col_labels_;
    std::unordered_map<std::string, Eigen::Index> row_index_;
    std::unordered_map<std::string, Eigen::Index> col_index_;
    Eigen::MatrixXd values_;
};

}  // namespace conspace

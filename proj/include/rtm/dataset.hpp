#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtm/errors.hpp"

namespace rtm {

/// Column-oriented table of named real-valued columns. Missing cells are NaN.
class Dataset {
 public:
  Dataset() = default;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  bool has(const std::string& name) const { return index_.contains(name); }

  const std::vector<double>& column(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw SpecError("unknown column '" + name + "'");
    return data_[it->second];
  }

  void add_column(std::string name, std::vector<double> values) {
    if (has(name)) throw SpecError("duplicate column '" + name + "'");
    if (!names_.empty() && values.size() != rows_)
      throw DataError("column '" + name + "' has " + std::to_string(values.size()) + " rows, expected " +
                      std::to_string(rows_));
    if (names_.empty()) rows_ = values.size();
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    data_.push_back(std::move(values));
  }

  /// Adds the column, or replaces it if a column of that name already exists.
  void set_column(const std::string& name, std::vector<double> values) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      add_column(name, std::move(values));
      return;
    }
    if (values.size() != rows_) throw DataError("column '" + name + "' length mismatch");
    data_[it->second] = std::move(values);
  }

  Dataset select_rows(std::span<const std::size_t> rows) const {
    Dataset out;
    for (std::size_t c = 0; c < names_.size(); ++c) {
      std::vector<double> v;
      v.reserve(rows.size());
      for (std::size_t r : rows) v.push_back(data_[c].at(r));
      out.add_column(names_[c], std::move(v));
    }
    if (names_.empty()) out.rows_ = rows.size();
    return out;
  }

  /// Rows with no NaN among `columns` (listwise deletion).
  Dataset drop_incomplete(std::span<const std::string> columns, std::size_t* dropped = nullptr) const {
    std::vector<const std::vector<double>*> used;
    for (const auto& c : columns) used.push_back(&column(c));
    std::vector<std::size_t> keep;
    keep.reserve(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
      bool ok = true;
      for (const auto* col : used) ok = ok && !std::isnan((*col)[r]);
      if (ok) keep.push_back(r);
    }
    if (dropped) *dropped = rows_ - keep.size();
    return select_rows(keep);
  }

 private:
  std::size_t rows_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace rtm

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cyclewalk/common.hpp"

namespace cyclewalk {

// Named parameter tensors with stable (insertion) iteration order.
template <class Scalar>
class ParamSet {
 public:
  using Mat = Matrix<Scalar>;

  int add(const std::string& name, Mat value) {
    if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
    return static_cast<int>(names_.size()) - 1;
  }

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }
  Mat& value(int i) { return values_.at(static_cast<std::size_t>(i)); }
  const Mat& value(int i) const { return values_.at(static_cast<std::size_t>(i)); }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Mat& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return values_[static_cast<std::size_t>(it->second)];
  }
  const Mat& operator[](const std::string& name) const {
    return const_cast<ParamSet*>(this)->operator[](name);
  }

  long total_coefficients() const {
    long n = 0;
    for (const Mat& v : values_) n += static_cast<long>(v.size());
    return n;
  }

  template <class Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (int i = 0; i < count(); ++i) {
      out.add(name(i), value(i).template cast<Other>());
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::map<std::string, int> index_;
};

}  // namespace cyclewalk

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "calma/core/types.hpp"

namespace calma {

// Source of labeled samples. Stateful; confine one instance to one algorithm run.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual Dataset draw(std::size_t m) = 0;
  virtual std::size_t available() const { return static_cast<std::size_t>(-1); }
};

// iid draws (x ~ mass, y ~ Ber(p*(x))) from a finite distribution
class DistributionSampler : public Sampler {
 public:
  DistributionSampler(FiniteDistribution dist, std::uint64_t seed)
      : dist_(std::move(dist)), rng_(seed), pick_(dist_.mass.begin(), dist_.mass.end()) {
    dist_.validate();
  }

  Dataset draw(std::size_t m) override {
    if (m == 0) throw ValidationError("sampler: cannot draw zero rows");
    Dataset out;
    out.x.reserve(m);
    out.y.reserve(m);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t k = pick_(rng_);
      out.append(dist_.points[k], u(rng_) < dist_.bayes[k] ? 1 : 0);
    }
    return out;
  }

  const FiniteDistribution& distribution() const { return dist_; }

 private:
  FiniteDistribution dist_;
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> pick_;
};

// Serves rows of a fixed dataset.
//   sequential: disjoint consecutive batches, fails once the data is exhausted
//   bootstrap : rows drawn with replacement
//   whole     : every draw returns the whole dataset (sample reuse)
class DatasetSampler : public Sampler {
 public:
  enum class Mode { sequential, bootstrap, whole };

  DatasetSampler(Dataset data, Mode mode, std::uint64_t seed = 0) : data_(std::move(data)), mode_(mode), rng_(seed) {
    data_.validate();
  }

  Dataset draw(std::size_t m) override {
    switch (mode_) {
      case Mode::whole: return data_;
      case Mode::sequential: {
        if (m == 0) throw ValidationError("sampler: cannot draw zero rows");
        if (cursor_ + m > data_.size())
          throw InsufficientSamplesError("sampler: requested " + std::to_string(m) + " rows but only " +
                                         std::to_string(data_.size() - cursor_) + " remain");
        Dataset out;
        for (std::size_t i = cursor_; i < cursor_ + m; ++i) out.append(data_.x[i], data_.y[i]);
        cursor_ += m;
        return out;
      }
      case Mode::bootstrap: {
        if (m == 0) throw ValidationError("sampler: cannot draw zero rows");
        std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
        Dataset out;
        for (std::size_t i = 0; i < m; ++i) {
          std::size_t k = pick(rng_);
          out.append(data_.x[k], data_.y[k]);
        }
        return out;
      }
    }
    throw ValidationError("sampler: bad mode");
  }

  std::size_t available() const override {
    return mode_ == Mode::sequential ? data_.size() - cursor_ : static_cast<std::size_t>(-1);
  }
  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
  Mode mode_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

}  // namespace calma

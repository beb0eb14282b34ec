#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "copo/rng.hpp"

namespace copo {

// Fixed-capacity ring buffer with uniform with-replacement sampling.
template <class T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay: capacity must be positive");
  }

  void push(T item) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(item));
    } else {
      storage_[cursor_] = std::move(item);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::vector<T> sample(std::size_t k, Rng& rng) const {
    if (storage_.empty()) throw std::runtime_error("replay: sample from empty buffer");
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
      out.push_back(storage_[static_cast<std::size_t>(rng() % storage_.size())]);
    return out;
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  const T& at(std::size_t i) const { return storage_.at(i); }
  std::size_t cursor() const { return cursor_; }
  void restore(std::vector<T> items, std::size_t cursor) {
    if (items.size() > capacity_) throw std::invalid_argument("replay: restore exceeds capacity");
    storage_ = std::move(items);
    cursor_ = cursor;
  }
  void clear() {
    storage_.clear();
    cursor_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<T> storage_;
};

}  // namespace copo

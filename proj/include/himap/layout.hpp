#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "himap/errors.hpp"
#include "himap/numerics/types.hpp"

namespace himap {

enum class Segment { system, image, instruction };

/// Partition of a sequence into contiguous system, image and instruction
/// segments, in that order.
class TokenLayout {
 public:
  TokenLayout() = default;
  TokenLayout(Index sys_len, Index img_len, Index ins_len)
      : sys_len_(sys_len), img_len_(img_len), ins_len_(ins_len) {
    if (sys_len < 0 || img_len < 0 || ins_len < 0) {
      throw ConfigError("TokenLayout: segment lengths must be non-negative");
    }
  }

  /// Validates explicit index sets: disjoint, contiguous, ordered, covering 0..n-1.
  static TokenLayout from_index_sets(const std::vector<Index>& sys, const std::vector<Index>& img,
                                     const std::vector<Index>& ins) {
    Index next = 0;
    auto expect_run = [&next](const std::vector<Index>& set, const char* name) {
      for (Index v : set) {
        if (v != next) {
          throw ConfigError(std::string("TokenLayout: ") + name +
                            " indices must be contiguous and follow the previous segment");
        }
        ++next;
      }
    };
    expect_run(sys, "system");
    expect_run(img, "image");
    expect_run(ins, "instruction");
    return TokenLayout(static_cast<Index>(sys.size()), static_cast<Index>(img.size()),
                       static_cast<Index>(ins.size()));
  }

  Index size() const { return sys_len_ + img_len_ + ins_len_; }
  Index sys_len() const { return sys_len_; }
  Index img_len() const { return img_len_; }
  Index ins_len() const { return ins_len_; }

  Index img_begin() const { return sys_len_; }
  Index ins_begin() const { return sys_len_ + img_len_; }

  bool is_sys(Index i) const { return i >= 0 && i < sys_len_; }
  bool is_img(Index i) const { return i >= img_begin() && i < ins_begin(); }
  bool is_ins(Index i) const { return i >= ins_begin() && i < size(); }

  Segment segment_of(Index i) const {
    if (i < 0 || i >= size()) throw IndexError("TokenLayout: index " + std::to_string(i) + " out of range");
    if (is_sys(i)) return Segment::system;
    if (is_img(i)) return Segment::image;
    return Segment::instruction;
  }

  std::vector<Index> sys() const { return range(0, sys_len_); }
  std::vector<Index> img() const { return range(img_begin(), img_len_); }
  std::vector<Index> ins() const { return range(ins_begin(), ins_len_); }

  bool operator==(const TokenLayout&) const = default;

 private:
  static std::vector<Index> range(Index begin, Index count) {
    std::vector<Index> out(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = begin + k;
    return out;
  }

  Index sys_len_ = 0;
  Index img_len_ = 0;
  Index ins_len_ = 0;
};

}  // namespace himap

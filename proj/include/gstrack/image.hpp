// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace gstrack {

/// Row-major H×W×C image with interleaved channels.
template <typename T> class Image {
  public:
    Image() = default;
    Image(int height, int width, int channels, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, fill) {
        if (height < 0 || width < 0 || channels <= 0) {
            throw std::invalid_argument("Image: invalid shape");
        }
    }

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T &operator()(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    const T &operator()(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T> &storage() { return data_; }
    void fill(T v) { data_.assign(data_.size(), v); }

    bool same_shape(const Image &o) const {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }
    template <typename U> bool same_extent(const Image<U> &o) const {
        return height_ == o.height() && width_ == o.width();
    }

    bool operator==(const Image &o) const = default;

  private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;

} // namespace gstrack

#include "segprobe/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace segprobe {

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
void BasicTensor<T>::require_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::domain_error(std::string(what) + ": non-finite value at flat index " +
                              std::to_string(i));
    }
  }
}

std::vector<AxisTap> align_corners_taps(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw std::invalid_argument("align_corners_taps: zero extent");
  std::vector<AxisTap> taps(out);
  const double scale = (out > 1) ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    const double pos = static_cast<double>(o) * scale;
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= in - 1) {
      taps[o] = {in - 1, in - 1, 0.0};
    } else {
      taps[o] = {lo, lo + 1, pos - static_cast<double>(lo)};
    }
  }
  return taps;
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& t, std::size_t out_h, std::size_t out_w) {
  if (t.rank() != 3) throw std::invalid_argument("bilinear_resize: expected rank-3 tensor");
  if (out_h == 0 || out_w == 0) {
    throw std::invalid_argument("bilinear_resize: target size must be positive");
  }
  const std::size_t in_h = t.extent(0), in_w = t.extent(1), ch = t.extent(2);
  if (in_h == 0 || in_w == 0) throw std::invalid_argument("bilinear_resize: empty input grid");
  if (in_h == out_h && in_w == out_w) return t;

  const auto ty = align_corners_taps(in_h, out_h);
  const auto tx = align_corners_taps(in_w, out_w);
  BasicTensor<T> out({out_h, out_w, ch});
  for (std::size_t y = 0; y < out_h; ++y) {
    const T fy = static_cast<T>(ty[y].frac);
    for (std::size_t x = 0; x < out_w; ++x) {
      const T fx = static_cast<T>(tx[x].frac);
      const auto a = t.row(ty[y].lo, tx[x].lo);
      const auto b = t.row(ty[y].lo, tx[x].hi);
      const auto c = t.row(ty[y].hi, tx[x].lo);
      const auto d = t.row(ty[y].hi, tx[x].hi);
      auto dst = out.row(y, x);
      for (std::size_t k = 0; k < ch; ++k) {
        const T top = (T{1} - fx) * a[k] + fx * b[k];
        const T bottom = (T{1} - fx) * c[k] + fx * d[k];
        dst[k] = (T{1} - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bilinear_resize_transpose(const BasicTensor<T>& grad, std::size_t in_h,
                                         std::size_t in_w) {
  if (grad.rank() != 3) throw std::invalid_argument("bilinear_resize_transpose: expected rank 3");
  if (in_h == 0 || in_w == 0) throw std::invalid_argument("bilinear_resize_transpose: zero grid");
  const std::size_t out_h = grad.extent(0), out_w = grad.extent(1), ch = grad.extent(2);
  if (in_h == out_h && in_w == out_w) return grad;

  const auto ty = align_corners_taps(in_h, out_h);
  const auto tx = align_corners_taps(in_w, out_w);
  BasicTensor<T> src({in_h, in_w, ch});
  for (std::size_t y = 0; y < out_h; ++y) {
    const T fy = static_cast<T>(ty[y].frac);
    for (std::size_t x = 0; x < out_w; ++x) {
      const T fx = static_cast<T>(tx[x].frac);
      const auto g = grad.row(y, x);
      const T wa = (T{1} - fy) * (T{1} - fx), wb = (T{1} - fy) * fx;
      const T wc = fy * (T{1} - fx), wd = fy * fx;
      auto a = src.row(ty[y].lo, tx[x].lo);
      auto b = src.row(ty[y].lo, tx[x].hi);
      auto c = src.row(ty[y].hi, tx[x].lo);
      auto d = src.row(ty[y].hi, tx[x].hi);
      for (std::size_t k = 0; k < ch; ++k) {
        a[k] += wa * g[k];
        b[k] += wb * g[k];
        c[k] += wc * g[k];
        d[k] += wd * g[k];
      }
    }
  }
  return src;
}

template <typename T>
void softmax_inplace(std::span<T> v) {
  if (v.empty()) return;
  const T m = *std::max_element(v.begin(), v.end());
  T sum{0};
  for (auto& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

template <typename T>
std::vector<T> softmax(std::span<const T> v) {
  std::vector<T> out(v.begin(), v.end());
  softmax_inplace(std::span<T>(out));
  return out;
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> bilinear_resize(const BasicTensor<float>&, std::size_t, std::size_t);
template BasicTensor<double> bilinear_resize(const BasicTensor<double>&, std::size_t, std::size_t);
template BasicTensor<float> bilinear_resize_transpose(const BasicTensor<float>&, std::size_t,
                                                      std::size_t);
template BasicTensor<double> bilinear_resize_transpose(const BasicTensor<double>&, std::size_t,
                                                       std::size_t);
template std::vector<float> softmax(std::span<const float>);
template std::vector<double> softmax(std::span<const double>);
template void softmax_inplace(std::span<float>);
template void softmax_inplace(std::span<double>);
template std::size_t argmax(std::span<const float>);
template std::size_t argmax(std::span<const double>);

}  // namespace segprobe

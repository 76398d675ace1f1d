#include "segprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace segprobe {

std::string_view to_string(Normalization n) {
  return n == Normalization::LabeledCount ? "labeled-count" : "eq1-literal";
}

std::string_view to_string(LossHead h) {
  return h == LossHead::Softmax ? "softmax" : "per-class-sigmoid";
}

std::optional<Normalization> parse_normalization(std::string_view s) {
  if (s == "labeled-count") return Normalization::LabeledCount;
  if (s == "eq1-literal") return Normalization::Eq1Literal;
  return std::nullopt;
}

std::optional<LossHead> parse_loss_head(std::string_view s) {
  if (s == "softmax") return LossHead::Softmax;
  if (s == "per-class-sigmoid") return LossHead::PerClassSigmoid;
  return std::nullopt;
}

FeatureMap FeatureStandardizer::apply(const FeatureMap& f) const {
  if (mean.size() != f.dim() || inv_std.size() != f.dim()) {
    throw std::invalid_argument("standardizer width differs from feature dim");
  }
  FeatureMap out = f;
  auto data = out.data.data();
  const std::size_t z = f.dim();
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = (data[i] - mean[i % z]) * inv_std[i % z];
  }
  return out;
}

namespace {

template <typename T>
T softplus(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Loss of one supervised pixel; writes dL/dlogit into `grad` when non-null.
template <typename T>
T pixel_loss(const T* logits, std::size_t c, std::size_t target, LossHead head, T* grad) {
  if (head == LossHead::Softmax) {
    const T m = *std::max_element(logits, logits + c);
    T sum{0};
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) sum += (grad[k] = std::exp(logits[k] - m));
      const T inv = T{1} / sum;
      for (std::size_t k = 0; k < c; ++k) grad[k] *= inv;
      grad[target] -= T{1};
    } else {
      for (std::size_t k = 0; k < c; ++k) sum += std::exp(logits[k] - m);
    }
    return m + std::log(sum) - logits[target];
  }
  // -log σ(l_y) - Σ_{c≠y} log(1 - σ(l_c)) = Σ_c softplus(l_c) - l_y
  T loss = -logits[target];
  for (std::size_t k = 0; k < c; ++k) {
    loss += softplus(logits[k]);
    if (grad) grad[k] = sigmoid(logits[k]) - (k == target ? T{1} : T{0});
  }
  return loss;
}

void check_dims(const FeatureMap& f, std::size_t dim) {
  if (f.data.rank() != 3) throw std::invalid_argument("forward: features must be rank 3");
  if (f.dim() != dim) {
    throw std::invalid_argument("forward: feature dim " + std::to_string(f.dim()) +
                                " != probe input dim " + std::to_string(dim));
  }
  if (f.image_h == 0 || f.image_w == 0) throw std::invalid_argument("forward: zero image size");
}

// Ignores params.standardizer; callers pass already-standardized features.
template <typename T>
BasicTensor<T> affine(const FeatureMap& f, const BasicProbeParams<T>& params) {
  check_dims(f, params.dim());
  const std::size_t gh = f.grid_h(), gw = f.grid_w(), z = f.dim();
  const std::size_t c = params.num_classes();
  BasicTensor<T> out({gh, gw, c});
  for (std::size_t y = 0; y < gh; ++y) {
    for (std::size_t x = 0; x < gw; ++x) {
      const auto token = f.data.row(y, x);
      auto dst = out.row(y, x);
      for (std::size_t k = 0; k < c; ++k) dst[k] = params.bias[k];
      for (std::size_t d = 0; d < z; ++d) {
        const T v = static_cast<T>(token[d]);
        if (v == T{0}) continue;
        const T* w = &params.weight(d, 0);
        for (std::size_t k = 0; k < c; ++k) dst[k] += v * w[k];
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> patch_logits(const FeatureMap& features, const BasicProbeParams<T>& params) {
  if (params.standardizer) return affine(params.standardizer->apply(features), params);
  return affine(features, params);
}

template <typename T>
BasicSegmentationOutput<T> forward(const FeatureMap& features, const BasicProbeParams<T>& params) {
  BasicTensor<T> logits =
      bilinear_resize(patch_logits(features, params), features.image_h, features.image_w);
  const std::size_t c = params.num_classes();
  std::vector<std::uint8_t> classes(features.image_h * features.image_w);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    classes[i] = static_cast<std::uint8_t>(
        argmax(std::span<const T>(logits.data().subspan(i * c, c))));
  }
  LabelMask map(features.image_h, features.image_w, static_cast<int>(c), std::move(classes));
  return {std::move(logits), std::move(map)};
}

template <typename T>
LossValue masked_ce_loss(const BasicTensor<T>& logits, const LabelMask& labels,
                         const LossOptions& options) {
  if (logits.rank() != 3 || logits.extent(0) != labels.h() || logits.extent(1) != labels.w()) {
    throw std::invalid_argument("masked_ce_loss: logits and labels differ in size");
  }
  const std::size_t c = logits.extent(2);
  LossValue out;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels.is_labeled(i)) continue;
    if (labels[i] >= c) throw std::invalid_argument("masked_ce_loss: label exceeds class count");
    ++out.labeled_pixels;
    sum += static_cast<double>(
        pixel_loss<T>(logits.data().data() + i * c, c, labels[i], options.head, nullptr));
  }
  if (out.labeled_pixels == 0) {
    out.unsupervised = true;
    return out;
  }
  const double n = options.normalization == Normalization::LabeledCount
                       ? static_cast<double>(out.labeled_pixels)
                       : static_cast<double>(labels.size());
  out.value = sum / n;
  return out;
}

template <typename T>
BasicGradient<T> loss_and_grad(const BasicProbeParams<T>& params,
                               std::span<const ImageSample> batch, const LossOptions& options) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const std::size_t z = params.dim(), c = params.num_classes();
  BasicGradient<T> g;
  g.weight = BasicTensor<T>({z, c});
  g.bias.assign(c, T{0});
  const T inv_batch = T{1} / static_cast<T>(batch.size());
  double loss_sum = 0.0;
  std::vector<T> logit(c), dlogit(c);

  for (const auto& sample : batch) {
    if (!sample.labels) {
      throw std::invalid_argument("loss_and_grad: sample '" + sample.features.image_id +
                                  "' has no labels");
    }
    const LabelMask& labels = *sample.labels;
    const FeatureMap standardized =
        params.standardizer ? params.standardizer->apply(sample.features) : FeatureMap{};
    const FeatureMap& f = params.standardizer ? standardized : sample.features;
    check_dims(f, z);
    if (labels.h() != f.image_h || labels.w() != f.image_w) {
      throw std::invalid_argument("loss_and_grad: label dims differ from image dims");
    }
    const std::size_t labeled = labels.labeled_count();
    if (labeled == 0) {
      ++g.unsupervised_samples;
      continue;
    }
    const T n = options.normalization == Normalization::LabeledCount
                    ? static_cast<T>(labeled)
                    : static_cast<T>(labels.size());
    const T scale = inv_batch / n;

    const BasicTensor<T> pl = affine(f, params);
    const std::size_t gh = f.grid_h(), gw = f.grid_w(), width = f.image_w;
    BasicTensor<T> dpl({gh, gw, c});
    const auto ty = align_corners_taps(gh, f.image_h);
    const auto tx = align_corners_taps(gw, width);
    const T* src = pl.data().data();
    T* dst = dpl.data().data();
    const std::uint8_t* lab = labels.values().data();
    const std::uint8_t ignore = static_cast<std::uint8_t>(labels.ignore_index());

    double sample_loss = 0.0;
    for (std::size_t y = 0; y < f.image_h; ++y) {
      const auto& ay = ty[y];
      const std::size_t row_lo = ay.lo * gw * c, row_hi = ay.hi * gw * c;
      const T fy = static_cast<T>(ay.frac);
      for (std::size_t x = 0; x < width; ++x) {
        const std::uint8_t target = lab[y * width + x];
        if (target == ignore) continue;
        if (target >= c) throw std::invalid_argument("loss_and_grad: label exceeds class count");
        const auto& ax = tx[x];
        const T fx = static_cast<T>(ax.frac);
        const std::size_t off[4] = {row_lo + ax.lo * c, row_lo + ax.hi * c, row_hi + ax.lo * c,
                                    row_hi + ax.hi * c};
        const T wt[4] = {(T{1} - fy) * (T{1} - fx), (T{1} - fy) * fx, fy * (T{1} - fx), fy * fx};
        for (std::size_t k = 0; k < c; ++k) {
          logit[k] = wt[0] * src[off[0] + k] + wt[1] * src[off[1] + k] +
                     wt[2] * src[off[2] + k] + wt[3] * src[off[3] + k];
        }
        sample_loss +=
            static_cast<double>(pixel_loss<T>(logit.data(), c, target, options.head, dlogit.data()));
        for (int t = 0; t < 4; ++t) {
          const T w = wt[t] * scale;
          T* d = dst + off[t];
          for (std::size_t k = 0; k < c; ++k) d[k] += w * dlogit[k];
        }
      }
    }
    loss_sum += sample_loss / static_cast<double>(n);

    for (std::size_t y = 0; y < gh; ++y) {
      for (std::size_t x = 0; x < gw; ++x) {
        const auto token = f.data.row(y, x);
        const auto d = dpl.row(y, x);
        for (std::size_t k = 0; k < c; ++k) g.bias[k] += d[k];
        for (std::size_t j = 0; j < z; ++j) {
          const T v = static_cast<T>(token[j]);
          if (v == T{0}) continue;
          T* gw_row = &g.weight(j, 0);
          for (std::size_t k = 0; k < c; ++k) gw_row[k] += v * d[k];
        }
      }
    }
  }
  g.loss = loss_sum / static_cast<double>(batch.size());
  return g;
}

template BasicTensor<float> patch_logits(const FeatureMap&, const BasicProbeParams<float>&);
template BasicTensor<double> patch_logits(const FeatureMap&, const BasicProbeParams<double>&);
template BasicSegmentationOutput<float> forward(const FeatureMap&, const BasicProbeParams<float>&);
template BasicSegmentationOutput<double> forward(const FeatureMap&,
                                                 const BasicProbeParams<double>&);
template LossValue masked_ce_loss(const BasicTensor<float>&, const LabelMask&, const LossOptions&);
template LossValue masked_ce_loss(const BasicTensor<double>&, const LabelMask&,
                                  const LossOptions&);
template BasicGradient<float> loss_and_grad(const BasicProbeParams<float>&,
                                            std::span<const ImageSample>, const LossOptions&);
template BasicGradient<double> loss_and_grad(const BasicProbeParams<double>&,
                                             std::span<const ImageSample>, const LossOptions&);

}  // namespace segprobe

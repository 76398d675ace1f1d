#include "oracles.hpp"

#include <map>
#include <set>
#include <unistd.h>

namespace oracle {

std::vector<std::optional<double>> set_iou(const segprobe::LabelMask& pred,
                                           const segprobe::LabelMask& gt) {
  const int c = gt.num_classes();
  std::vector<std::optional<double>> out(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    std::set<std::size_t> p, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!gt.is_labeled(i)) continue;  // ignore pixels leave both sets
      if (pred[i] == k) p.insert(i);
      if (gt[i] == k) g.insert(i);
    }
    std::set<std::size_t> inter, uni = p;
    for (auto i : g) {
      if (p.count(i)) inter.insert(i);
      uni.insert(i);
    }
    if (!uni.empty()) out[static_cast<std::size_t>(k)] = double(inter.size()) / double(uni.size());
  }
  return out;
}

double set_miou(const segprobe::LabelMask& pred, const segprobe::LabelMask& gt) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : set_iou(pred, gt)) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

double adjusted_rand_index(const std::vector<std::uint32_t>& a,
                           const std::vector<std::uint32_t>& b) {
  auto choose2 = [](double x) { return x * (x - 1) / 2; };
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
  std::map<std::uint32_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double index = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) index += choose2(v);
  for (const auto& [k, v] : ra) sa += choose2(v);
  for (const auto& [k, v] : rb) sb += choose2(v);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  const double max = 0.5 * (sa + sb);
  if (max == expected) return 1.0;
  return (index - expected) / (max - expected);
}

std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("segprobe_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle

#include <algorithm>
#include <cmath>

namespace oracle {

segprobe::ImageSample random_sample(segprobe::Rng& rng, std::size_t grid_h, std::size_t grid_w,
                                    std::size_t dim, int classes, std::size_t image_h,
                                    std::size_t image_w, double ignore_prob) {
  segprobe::ImageSample s;
  s.features.image_id = "rand";
  s.features.image_h = image_h;
  s.features.image_w = image_w;
  s.features.data = segprobe::Tensor({grid_h, grid_w, dim});
  for (auto& v : s.features.data.data()) v = static_cast<float>(rng.normal());
  std::vector<std::uint8_t> values(image_h * image_w);
  for (auto& v : values) {
    v = rng.bernoulli(ignore_prob) ? 255
                                   : static_cast<std::uint8_t>(rng.below(static_cast<unsigned>(classes)));
  }
  s.labels = segprobe::LabelMask(image_h, image_w, classes, std::move(values));
  return s;
}

double dense_batch_loss(const segprobe::ProbeParamsD& params,
                        std::span<const segprobe::ImageSample> batch,
                        const segprobe::LossOptions& options) {
  double sum = 0.0;
  for (const auto& s : batch) {
    const auto out = segprobe::forward(s.features, params);
    sum += segprobe::masked_ce_loss(out, *s.labels, options).value;
  }
  return sum / static_cast<double>(batch.size());
}

FdReport finite_difference_check(const segprobe::ProbeParamsD& params,
                                 std::span<const segprobe::ImageSample> batch,
                                 const segprobe::LossOptions& options, double step,
                                 double floor) {
  const auto g = segprobe::loss_and_grad(params, batch, options);
  FdReport r;
  auto probe = [&](double analytic, auto&& nudge) {
    segprobe::ProbeParamsD p = params;
    nudge(p, step);
    const double up = dense_batch_loss(p, batch, options);
    p = params;
    nudge(p, -step);
    const double down = dense_batch_loss(p, batch, options);
    const double numeric = (up - down) / (2 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
    ++r.coordinates;
  };
  for (std::size_t i = 0; i < params.weight.size(); ++i) {
    probe(g.weight[i], [i](segprobe::ProbeParamsD& p, double h) { p.weight[i] += h; });
  }
  for (std::size_t k = 0; k < params.bias.size(); ++k) {
    probe(g.bias[k], [k](segprobe::ProbeParamsD& p, double h) { p.bias[k] += h; });
  }
  return r;
}

}  // namespace oracle

#include "segprobe/config_file.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <stdexcept>

namespace segprobe {
namespace {

std::string clean_value(std::string v) {
  auto trim = [](std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
  };
  trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  if (const auto hash = v.find('#'); hash != std::string::npos) {
    v.resize(hash);
    trim(v);
  }
  return v;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw std::invalid_argument("config: key '" + key + "' has invalid value '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("config: key '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument("config: file not found: " + path.string());
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  std::map<std::string, std::string> out;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      out[key] = clean_value(node.data());
    } else if (key == "train") {
      for (const auto& [sub, leaf] : node) out[sub] = clean_value(leaf.data());
    } else {
      throw std::invalid_argument("config: unknown table [" + key + "]");
    }
  }
  return out;
}

void apply_config(TrainConfig& c, const std::map<std::string, std::string>& values) {
  for (const auto& [key, v] : values) {
    if (key == "learning_rate" || key == "lr") {
      c.learning_rate = parse_number<double>(key, v);
    } else if (key == "iterations") {
      c.iterations = parse_number<int>(key, v);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<int>(key, v);
    } else if (key == "momentum") {
      c.momentum = parse_number<double>(key, v);
    } else if (key == "weight_decay") {
      c.weight_decay = parse_number<double>(key, v);
    } else if (key == "crop_pixels") {
      c.crop_pixels = parse_number<int>(key, v);
    } else if (key == "flip_prob") {
      c.flip_prob = parse_number<double>(key, v);
    } else if (key == "normalization") {
      const auto n = parse_normalization(v);
      if (!n) throw std::invalid_argument("config: unknown normalization '" + v + "'");
      c.normalization = *n;
    } else if (key == "loss_head") {
      const auto h = parse_loss_head(v);
      if (!h) throw std::invalid_argument("config: unknown loss_head '" + v + "'");
      c.loss_head = *h;
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, v);
    } else if (key == "workers") {
      c.workers = parse_number<int>(key, v);
    } else if (key == "standardize") {
      c.standardize = parse_bool(key, v);
    } else if (key == "cache_mb") {
      c.cache_mb = parse_number<std::size_t>(key, v);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
}

}  // namespace segprobe

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/evaluation.hpp"
#include "fmital/pipeline.hpp"

namespace fmital {

struct DataConfig {
  std::size_t episodes = 50;
  double test_fraction = 0.2;
  SynthSpec synth;
};

/// Everything a CLI run needs. Shared extents (patches, channels, t_max)
/// live in `pipeline` and are copied into `data.synth` by sync().
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  PipelineConfig pipeline;
  EvalConfig eval;
  std::size_t episodes_per_class = 5;

  void sync() {
    data.synth.n = pipeline.scr.n;
    data.synth.d = pipeline.scr.d;
    data.synth.t_max = pipeline.t_max;
    data.synth.shot = eval.shot;
  }

  void validate() const {
    pipeline.scr.validate();
    pipeline.label.validate();
    pipeline.train.weights.validate();
    eval.validate();
    if (data.episodes < 1) throw UsageError("data.episodes must be >= 1");
    if (!(data.test_fraction >= 0 && data.test_fraction <= 1)) throw UsageError("data.test_fraction must lie in [0, 1]");
    if (data.synth.max_query_length > pipeline.t_max) throw UsageError("data.max_query_length exceeds t_max");
    if (data.synth.min_query_length > data.synth.max_query_length) {
      throw UsageError("data.min_query_length exceeds data.max_query_length");
    }
    if (data.synth.min_instances < 1 || data.synth.min_instances > data.synth.max_instances) {
      throw UsageError("data instances: need 1 <= min_instances <= max_instances");
    }
    if (pipeline.train.steps < 1) throw UsageError("train.steps must be >= 1");
    if (!(pipeline.train.lr >= 0)) throw UsageError("train.lr must be >= 0");
    if (pipeline.localizer.top_k < 1) throw UsageError("localizer.top_k must be >= 1");
    if (!(pipeline.localizer.cluster.eps > 0) || pipeline.localizer.cluster.min_samples < 1) {
      throw UsageError("localizer: need eps > 0 and min_samples >= 1");
    }
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) throw UsageError("config: bad value '" + text + "' for " + key);
  return value;
}

inline bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw UsageError("config: bad boolean '" + text + "' for " + key);
}

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

class Bindings {
 public:
  std::vector<Binding> items;

  template <class T>
  void number(const char* section, const char* key, T& field) {
    const std::string name = std::string(section) + "." + key;
    items.push_back({section, key,
                     [&field] {
                       if constexpr (std::is_floating_point_v<T>) return format_double(field);
                       else return std::to_string(field);
                     },
                     [&field, name](const std::string& s) { field = parse_number<T>(s, name); }});
  }

  void flag(const char* section, const char* key, bool& field) {
    const std::string name = std::string(section) + "." + key;
    items.push_back({section, key, [&field] { return std::string(field ? "true" : "false"); },
                     [&field, name](const std::string& s) { field = parse_bool(s, name); }});
  }

  template <class E>
  void choice(const char* section, const char* key, E& field, std::vector<std::pair<std::string, E>> names) {
    const std::string name = std::string(section) + "." + key;
    items.push_back({section, key,
                     [&field, names] {
                       for (const auto& [n, v] : names) {
                         if (v == field) return n;
                       }
                       return std::string("?");
                     },
                     [&field, names, name](const std::string& s) {
                       for (const auto& [n, v] : names) {
                         if (n == s) {
                           field = v;
                           return;
                         }
                       }
                       throw UsageError("config: bad choice '" + s + "' for " + name);
                     }});
  }

  void list(const char* section, const char* key, std::vector<double>& field) {
    const std::string name = std::string(section) + "." + key;
    items.push_back({section, key,
                     [&field] {
                       std::string out;
                       for (std::size_t i = 0; i < field.size(); ++i) out += (i ? "," : "") + format_double(field[i]);
                       return out;
                     },
                     [&field, name](const std::string& s) {
                       std::vector<double> values;
                       std::stringstream ss(s);
                       std::string item;
                       while (std::getline(ss, item, ',')) {
                         item.erase(0, item.find_first_not_of(" \t"));
                         item.erase(item.find_last_not_of(" \t") + 1);
                         values.push_back(parse_number<double>(item, name));
                       }
                       field = std::move(values);
                     }});
  }
};

inline Bindings bind(RunConfig& c) {
  Bindings b;
  auto& p = c.pipeline;
  auto& s = c.data.synth;
  b.number("general", "seed", c.seed);

  b.number("data", "episodes", c.data.episodes);
  b.number("data", "test_fraction", c.data.test_fraction);
  b.number("data", "t_max", p.t_max);
  b.number("data", "n_patches", p.scr.n);
  b.number("data", "channels", p.scr.d);
  b.number("data", "min_query_length", s.min_query_length);
  b.number("data", "max_query_length", s.max_query_length);
  b.number("data", "min_instances", s.min_instances);
  b.number("data", "max_instances", s.max_instances);
  b.number("data", "min_segment_length", s.min_segment_length);
  b.number("data", "max_segment_length", s.max_segment_length);
  b.number("data", "min_gap", s.min_gap);
  b.number("data", "support_length", s.support_length);
  b.number("data", "num_classes", s.num_classes);
  b.number("data", "class_id", s.class_id);
  b.number("data", "snr", s.snr);
  b.number("data", "pattern_seed", s.pattern_seed);

  b.number("model", "d_model", p.scr.d_model);
  b.number("model", "heads", p.scr.heads);
  b.number("model", "layers", p.scr.layers);
  b.number("model", "ffn_mult", p.scr.ffn_mult);
  b.number("model", "reduce_kernel", p.scr.reduce_kernel);
  b.flag("model", "positional_encoding", p.scr.positional_encoding);
  b.flag("model", "shared_streams", p.scr.shared_streams);

  b.flag("stages", "sca", p.scr.use_sca);
  b.flag("stages", "icd", p.scr.use_icd);
  b.flag("stages", "scp", p.use_scp);
  b.flag("stages", "ic", p.localizer.interval_clustering);

  b.number("label", "sigma_pct", p.label.sigma_pct);
  b.number("label", "noise_level", p.label.noise_level);
  b.number("label", "noise_threshold", p.label.noise_threshold);
  b.number("label", "epsilon", p.label.epsilon);
  b.number("label", "smooth_window", p.label.smooth_window);

  b.number("loss", "alpha", p.train.weights.alpha);
  b.number("loss", "beta", p.train.weights.beta);
  b.number("loss", "gamma", p.train.weights.gamma);
  b.number("loss", "focal_gamma", p.train.focal.gamma);
  b.number("loss", "focal_alpha", p.train.focal.alpha);
  b.number("loss", "epsilon", p.train.epsilon);

  b.number("train", "steps", p.train.steps);
  b.number("train", "lr", p.train.lr);

  b.number("localizer", "top_k", p.localizer.top_k);
  b.number("localizer", "nms_threshold", p.localizer.nms.iou_threshold);
  b.number("localizer", "nms_sigma", p.localizer.nms.sigma);
  b.number("localizer", "score_floor", p.localizer.nms.score_floor);
  b.number("localizer", "relative_floor", p.localizer.nms.relative_floor);
  b.choice("localizer", "nms_mode", p.localizer.nms.mode,
           {{"gaussian", NmsMode::kGaussian}, {"hard", NmsMode::kHard}});
  b.number("localizer", "cluster_eps", p.localizer.cluster.eps);
  b.number("localizer", "cluster_min_samples", p.localizer.cluster.min_samples);
  b.choice("localizer", "cluster_score", p.localizer.cluster_score,
           {{"max", ClusterScore::kMax}, {"mean", ClusterScore::kMean}});
  b.number("localizer", "scp_offset", p.scp.offset);
  b.number("localizer", "scp_top_m", p.scp.top_m);

  b.list("eval", "thresholds", c.eval.thresholds);
  b.number("eval", "primary", c.eval.primary);
  b.number("eval", "shot", c.eval.shot);
  b.number("eval", "split_seed", c.eval.split_seed);
  b.number("eval", "episodes_per_class", c.episodes_per_class);
  return b;
}

}  // namespace detail

/// INI text with every key, in binding order.
inline std::string config_to_ini(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const auto b = detail::bind(copy);
  std::ostringstream os;
  std::string section;
  for (const auto& item : b.items) {
    if (item.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << item.section << "]\n";
      section = item.section;
    }
    os << item.key << " = " << item.get() << '\n';
  }
  return os.str();
}

/// Overlays the keys present in `text` on the defaults. Unknown sections or
/// keys are rejected.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  auto b = detail::bind(cfg);
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw UsageError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw UsageError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : keys) {
      auto it = std::find_if(b.items.begin(), b.items.end(),
                             [&](const detail::Binding& x) { return x.section == section && x.key == key; });
      if (it == b.items.end()) throw UsageError("config: unknown key " + section + "." + key);
      it->set(value.get_value<std::string>());
    }
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline RunConfig default_config() {
  RunConfig cfg;
  cfg.sync();
  return cfg;
}

}  // namespace fmital

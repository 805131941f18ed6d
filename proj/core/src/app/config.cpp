#include "pkws/app/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pkws/error.hpp"

namespace pkws::app {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ValidationError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const AppConfig&)> get;
  std::function<void(AppConfig&, const std::string&)> set;
};

#define PKWS_NUM(sec, name, member)                                                                 \
  Field {                                                                                           \
    sec, name, [](const AppConfig& c) { return num_text(c.member); },                               \
        [](AppConfig& c, const std::string& v) {                                                    \
          c.member = parse_number<std::decay_t<decltype(c.member)>>(std::string(sec) + "." + name, v); \
        }                                                                                           \
  }

#define PKWS_STR(sec, name, member)                                                     \
  Field {                                                                               \
    sec, name, [](const AppConfig& c) { return std::string(c.member); },                \
        [](AppConfig& c, const std::string& v) { c.member = trim(v); }                  \
  }

#define PKWS_LIST(sec, name, member)                                                    \
  Field {                                                                               \
    sec, name, [](const AppConfig& c) { return join(c.member); },                       \
        [](AppConfig& c, const std::string& v) { c.member = parse_list(v); }            \
  }

std::string num_text(double v) { return nn::format_double(v); }
std::string num_text(int v) { return std::to_string(v); }
std::string num_text(std::uint64_t v) { return std::to_string(v); }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PKWS_NUM("frontend", "sample_rate", frontend.sample_rate),
      PKWS_NUM("frontend", "window_ms", frontend.window_ms),
      PKWS_NUM("frontend", "hop_fraction", frontend.hop_fraction),
      PKWS_NUM("frontend", "n_mels", frontend.n_mels),
      PKWS_NUM("frontend", "n_mfcc", frontend.n_mfcc),
      PKWS_NUM("frontend", "log_floor", frontend.log_floor),
      PKWS_NUM("frontend", "f_min", frontend.f_min),
      PKWS_NUM("frontend", "f_max", frontend.f_max),

      Field{"encoder", "size", [](const AppConfig& c) { return nn::to_string(c.encoder.size); },
            [](AppConfig& c, const std::string& v) { c.encoder.size = nn::parse_size_variant(trim(v)); }},
      Field{"encoder", "head", [](const AppConfig& c) { return nn::to_string(c.encoder.head); },
            [](AppConfig& c, const std::string& v) { c.encoder.head = nn::parse_head(trim(v)); }},

      Field{"train", "loss", [](const AppConfig& c) { return train::to_string(c.train.loss.kind); },
            [](AppConfig& c, const std::string& v) { c.train.loss.kind = train::parse_loss_kind(trim(v)); }},
      PKWS_NUM("train", "margin", train.loss.margin),
      PKWS_NUM("train", "ap_w_init", train.loss.ap_w_init),
      PKWS_NUM("train", "ap_b_init", train.loss.ap_b_init),
      PKWS_NUM("train", "dproto_unknown_classes", train.loss.dproto_unknown_classes),
      PKWS_NUM("train", "dproto_dummies", train.loss.dproto_dummies),
      PKWS_NUM("train", "epochs", train.schedule.epochs),
      PKWS_NUM("train", "episodes_per_epoch", train.schedule.episodes_per_epoch),
      PKWS_NUM("train", "learning_rate", train.schedule.learning_rate),
      PKWS_NUM("train", "decay_after_epochs", train.schedule.decay_after_epochs),
      PKWS_NUM("train", "decay_factor", train.schedule.decay_factor),
      PKWS_NUM("train", "seed", train.schedule.seed),
      PKWS_NUM("train", "episode_classes", train.episode_classes),
      PKWS_NUM("train", "episode_support", train.episode_support),
      PKWS_NUM("train", "episode_query", train.episode_query),
      PKWS_NUM("train", "augment_probability", train.augment_probability),
      PKWS_NUM("train", "snr_low_db", train.snr_low_db),
      PKWS_NUM("train", "snr_high_db", train.snr_high_db),
      PKWS_STR("train", "noise_dir", train.noise_dir),
      Field{"train", "precision",
            [](const AppConfig& c) { return std::string(c.train.precision == nn::Precision::kFloat32 ? "f32" : "f64"); },
            [](AppConfig& c, const std::string& v) {
              const std::string t = trim(v);
              if (t == "f32") c.train.precision = nn::Precision::kFloat32;
              else if (t == "f64") c.train.precision = nn::Precision::kFloat64;
              else throw ValidationError("config key 'train.precision': expected f32 or f64, got '" + v + "'");
            }},

      Field{"eval", "classifier", [](const AppConfig& c) { return openset::to_string(c.eval.classifier); },
            [](AppConfig& c, const std::string& v) { c.eval.classifier = openset::parse_classifier_kind(trim(v)); }},
      PKWS_NUM("eval", "shots", eval.protocol.shots),
      PKWS_NUM("eval", "repetitions", eval.protocol.repetitions),
      PKWS_NUM("eval", "far_target", eval.protocol.far_target),
      PKWS_NUM("eval", "seed", eval.protocol.seed),
      PKWS_NUM("eval", "tail_size", eval.protocol.tail_size),
      PKWS_LIST("eval", "positive", eval.protocol.positive),
      PKWS_LIST("eval", "negative", eval.protocol.negative),
      PKWS_LIST("eval", "filler", eval.protocol.filler),
      PKWS_NUM("eval", "gamma", eval.gamma),

      PKWS_STR("paths", "data_root", paths.data_root),
      PKWS_STR("paths", "manifest_dir", paths.manifest_dir),
      PKWS_STR("paths", "checkpoint_dir", paths.checkpoint_dir),
      PKWS_STR("paths", "report_dir", paths.report_dir),
  };
  return table;
}

#undef PKWS_NUM
#undef PKWS_STR
#undef PKWS_LIST

}  // namespace

nn::EncoderConfig EncoderSection::build() const {
  switch (size) {
    case nn::SizeVariant::kSmall: return nn::EncoderConfig::small(head);
    case nn::SizeVariant::kLarge: return nn::EncoderConfig::large(head);
    case nn::SizeVariant::kCustom: break;
  }
  throw ValidationError("config key 'encoder.size': expected S or L");
}

train::EpisodeLayout TrainSection::layout() const {
  if (episode_classes == 0) return train::EpisodeLayout::standard(loss.kind);
  return {episode_classes, episode_support, episode_query};
}

void AppConfig::validate() const {
  // Sub-validators know the setting but not where it came from.
  auto in_section = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("config section [") + section + "]: " + e.what());
    }
  };
  in_section("frontend", [&] { frontend.validate(); });
  in_section("encoder", [&] { encoder.build().validate(); });
  in_section("train", [&] {
    const train::EpisodeLayout l = train.layout();
    l.validate(train.loss.kind);
    train.loss.validate(l);
    train.schedule.validate();
    if (train.episode_classes < 0 || train.episode_support < 0 || train.episode_query < 0) {
      throw ValidationError("keys 'episode_*' must be >= 0");
    }
    dsp::AugmentationPolicy policy;
    policy.apply_probability = train.augment_probability;
    policy.snr_low_db = train.snr_low_db;
    policy.snr_high_db = train.snr_high_db;
    policy.validate();
  });
  in_section("eval", [&] {
    eval.protocol.validate();
    if (!(eval.gamma >= 0.0 && eval.gamma <= 1.0)) throw ValidationError("key 'gamma' must lie in [0, 1]");
  });
}

AppConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  AppConfig cfg;
  std::set<std::string> sections;
  for (const auto& f : fields()) sections.insert(f.section);
  for (const auto& [section, body] : tree) {
    if (!sections.contains(section)) {
      throw ValidationError(body.empty() && !body.data().empty() ? "config key '" + section + "' is outside any section"
                                                                 : "unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const Field* field = nullptr;
      for (const auto& f : fields()) {
        if (f.section == section && f.key == key) field = &f;
      }
      if (field == nullptr) throw ValidationError("unknown config key '" + section + "." + key + "'");
      field->set(cfg, value.data());
    }
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const AppConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      os << (current.empty() ? "" : "\n") << "[" << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << f.get(cfg) << "\n";
  }
  return os.str();
}

}  // namespace pkws::app

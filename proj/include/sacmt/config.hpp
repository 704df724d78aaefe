#pragma once

// key = value run configuration. One key per line, '#' starts a comment.
// Later assignments win, so command-line overrides are applied by feeding
// them through the same parser after the file.

#include "sacmt/trainer.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace sacmt {

struct RunConfig {
  TrainConfig train;
  std::string train_source, train_target;
  std::string valid_source, valid_target;
  std::size_t min_freq = 1;
  std::size_t max_vocab = 0;  // 0 keeps every token

  // gen-synth: pairs = train + valid; the test split is drawn after them
  SynthTaskSpec synth;
  std::size_t synth_valid = 200;
  std::size_t synth_test = 0;
  std::uint64_t synth_seed = 1;
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::vector<std::string>& problems)
      : std::invalid_argument(join_problems(problems)), problems_(problems) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join_problems(const std::vector<std::string>& p) {
    std::string s = "configuration error";
    if (p.size() > 1) s += "s";
    s += ":";
    for (const auto& x : p) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  if constexpr (std::is_same_v<T, double>) {
    try {
      std::size_t pos = 0;
      out = std::stod(s, &pos);
      return pos == s.size();
    } catch (const std::exception&) {
      return false;
    }
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct ConfigKey {
  std::string name;
  std::string help;
  // third argument: directory that relative paths are resolved against
  std::function<bool(RunConfig&, const std::string&, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
auto plain(F f) {
  return [f](RunConfig& c, const std::string& v, const std::filesystem::path&) { return f(c, v); };
}

template <class T>
ConfigKey size_key(std::string name, std::string help, T RunConfig::*field) {
  return {std::move(name), std::move(help),
          plain([field](RunConfig& c, const std::string& v) { return parse_number(v, c.*field); }),
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

template <class T>
ConfigKey synth_key(std::string name, std::string help, T SynthTaskSpec::*field) {
  return {std::move(name), std::move(help),
          plain([field](RunConfig& c, const std::string& v) { return parse_number(v, c.synth.*field); }),
          [field](const RunConfig& c) { return std::to_string(c.synth.*field); }};
}

template <class T>
ConfigKey number_key(std::string name, std::string help, T TrainConfig::*field) {
  return {std::move(name), std::move(help),
          plain([field](RunConfig& c, const std::string& v) { return parse_number(v, c.train.*field); }),
          [field](const RunConfig& c) {
            if constexpr (std::is_same_v<T, double>) return format_double(c.train.*field);
            else return std::to_string(c.train.*field);
          }};
}

inline ConfigKey path_key(std::string name, std::string help, std::string RunConfig::*field) {
  return {std::move(name), std::move(help),
          [field](RunConfig& c, const std::string& v, const std::filesystem::path& base) {
            std::filesystem::path p(v);
            c.*field = !v.empty() && p.is_relative() && !base.empty() ? (base / p).lexically_normal().string() : v;
            return true;
          },
          [field](const RunConfig& c) { return c.*field; }};
}

}  // namespace detail

/// Every recognised key, in the order they are written back out.
inline const std::vector<detail::ConfigKey>& config_schema() {
  using detail::number_key;
  using detail::path_key;
  using detail::plain;
  using detail::size_key;
  using detail::synth_key;
  static const std::vector<detail::ConfigKey> keys = [] {
    std::vector<detail::ConfigKey> k{
        path_key("train_source", "training source sentences, one per line", &RunConfig::train_source),
        path_key("train_target", "training target sentences", &RunConfig::train_target),
        path_key("valid_source", "validation source sentences", &RunConfig::valid_source),
        path_key("valid_target", "validation target sentences", &RunConfig::valid_target),
        {"min_freq", "drop tokens seen fewer times from the vocabularies",
         plain([](RunConfig& c, const std::string& v) { return detail::parse_number(v, c.min_freq) && c.min_freq > 0; }),
         [](const RunConfig& c) { return std::to_string(c.min_freq); }},
        size_key("max_vocab", "vocabulary size cap per side, 0 for none", &RunConfig::max_vocab),
        number_key("seed", "seed of the single training RNG", &TrainConfig::seed),
        number_key("embed", "embedding width", &TrainConfig::embed),
        number_key("hidden", "GRU hidden width", &TrainConfig::hidden),
        number_key("alpha", "entropy temperature", &TrainConfig::alpha),
        number_key("reward_scale_alpha", "rewards are divided by this", &TrainConfig::reward_scale_alpha),
        number_key("gamma", "discount", &TrainConfig::gamma),
        number_key("tau", "target EMA rate", &TrainConfig::tau),
        number_key("lambda_mle", "weight of the MLE term in the actor loss", &TrainConfig::lambda_mle),
        number_key("lr_mle", "actor pretraining learning rate", &TrainConfig::lr_mle),
        number_key("lr_actor", "actor learning rate during joint training", &TrainConfig::lr_actor),
        number_key("lr_critic", "critic learning rate during joint training", &TrainConfig::lr_critic),
        number_key("lr_critic_pretrain", "critic pretraining learning rate", &TrainConfig::lr_critic_pretrain),
        number_key("lr_discriminator", "skill discriminator learning rate", &TrainConfig::lr_discriminator),
        number_key("weight_decay", "decoupled Adam weight decay", &TrainConfig::weight_decay),
        number_key("clip_norm", "global gradient-norm clip", &TrainConfig::clip_norm),
        number_key("length_penalty", "per-step length penalty coefficient", &TrainConfig::length_penalty),
        number_key("batch_size", "sentences per batch and transitions per critic sample", &TrainConfig::batch_size),
        number_key("buffer_capacity", "replay buffer size in transitions", &TrainConfig::buffer_capacity),
        number_key("gradient_steps", "updates per collected batch", &TrainConfig::gradient_steps),
        number_key("actor_patience", "pretraining epochs without validation-loss gain before stopping",
                   &TrainConfig::actor_patience),
        number_key("actor_max_epochs", "pretraining epoch cap", &TrainConfig::actor_max_epochs),
        number_key("critic_epochs", "critic pretraining epochs", &TrainConfig::critic_epochs),
        number_key("sac_patience", "joint epochs without validation-BLEU gain before stopping",
                   &TrainConfig::sac_patience),
        number_key("sac_max_epochs", "joint training epoch cap", &TrainConfig::sac_max_epochs),
        number_key("lr_patience", "epochs without gain before learning rates halve", &TrainConfig::lr_patience),
        number_key("skills", "number of skill labels", &TrainConfig::skills),
        number_key("discriminator_hidden", "discriminator hidden width", &TrainConfig::discriminator_hidden),
        number_key("discriminator_embed", "discriminator action embedding width",
                   &TrainConfig::discriminator_embed),
        {"unsup_update", "oracle or policy-gradient",
         plain([](RunConfig& c, const std::string& v) {
           if (v == "oracle") c.train.unsup_update = UnsupUpdate::kOracle;
           else if (v == "policy-gradient") c.train.unsup_update = UnsupUpdate::kPolicyGradient;
           else return false;
           return true;
         }),
         [](const RunConfig& c) {
           return std::string(c.train.unsup_update == UnsupUpdate::kOracle ? "oracle" : "policy-gradient");
         }},
        {"auto_alpha", "tune alpha toward target_entropy (true/false)",
         plain([](RunConfig& c, const std::string& v) {
           if (v == "true" || v == "1") c.train.auto_alpha = true;
           else if (v == "false" || v == "0") c.train.auto_alpha = false;
           else return false;
           return true;
         }),
         [](const RunConfig& c) { return std::string(c.train.auto_alpha ? "true" : "false"); }},
        number_key("target_entropy", "entropy target for auto_alpha", &TrainConfig::target_entropy),
        number_key("lr_alpha", "step size on log alpha", &TrainConfig::lr_alpha),
        number_key("max_skipped_updates", "consecutive non-finite updates tolerated",
                   &TrainConfig::max_skipped_updates),
        {"synth_task", "copy, reverse or ambiguous-lexicon",
         plain([](RunConfig& c, const std::string& v) {
           try {
             c.synth.kind = parse_task_kind(v);
             return true;
           } catch (const std::invalid_argument&) {
             return false;
           }
         }),
         [](const RunConfig& c) { return to_string(c.synth.kind); }},
        synth_key("synth_vocab", "source vocabulary size of the generated task", &SynthTaskSpec::vocab_size),
        synth_key("synth_min_length", "shortest plain-word sentence", &SynthTaskSpec::min_length),
        synth_key("synth_max_length", "longest plain-word sentence", &SynthTaskSpec::max_length),
        synth_key("synth_pairs", "training plus validation pairs", &SynthTaskSpec::pairs),
        size_key("synth_valid", "pairs held out for validation", &RunConfig::synth_valid),
        size_key("synth_test", "extra pairs generated as a test split", &RunConfig::synth_test),
        synth_key("synth_ambiguous_words", "ambiguous source words", &SynthTaskSpec::ambiguous_words),
        synth_key("synth_senses", "senses per ambiguous word", &SynthTaskSpec::senses),
        {"synth_skew", "comma-separated sense frequencies",
         plain([](RunConfig& c, const std::string& v) {
           std::vector<double> skew;
           std::stringstream ss(v);
           std::string part;
           while (std::getline(ss, part, ',')) {
             double x = 0;
             if (!detail::parse_number(detail::trim(part), x)) return false;
             skew.push_back(x);
           }
           if (skew.empty()) return false;
           c.synth.sense_skew = std::move(skew);
           return true;
         }),
         [](const RunConfig& c) {
           std::string s;
           for (std::size_t i = 0; i < c.synth.sense_skew.size(); ++i)
             s += (i ? "," : "") + detail::format_double(c.synth.sense_skew[i]);
           return s;
         }},
        size_key("synth_seed", "seed of the corpus generator", &RunConfig::synth_seed),
    };
    return k;
  }();
  return keys;
}

/// Applies `key = value` assignments; `origin` labels error messages.
/// Problems are appended to `errors` rather than thrown.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin,
                              std::vector<std::string>& errors, const std::filesystem::path& base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  const auto& schema = config_schema();
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + ": expected key = value, got '" + line + "'");
      continue;
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& k) { return k.name == key; });
    if (it == schema.end()) {
      errors.push_back(where + ": unknown key '" + key + "'");
      continue;
    }
    if (!it->set(cfg, value, base)) errors.push_back(where + ": bad value '" + value + "' for " + key);
  }
}

/// File first, then overrides. Relative paths in the file are taken from
/// the file's directory, those in overrides from the working directory.
/// Throws a ConfigError listing every problem found.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  std::vector<std::string> errors;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError({"cannot read config file " + path});
    std::stringstream ss;
    ss << is.rdbuf();
    apply_config_text(cfg, ss.str(), path, errors, std::filesystem::path(path).parent_path());
  }
  for (const auto& o : overrides) apply_config_text(cfg, o, "override", errors);
  for (auto& e : config_errors(cfg.train)) errors.push_back(e);
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

/// Problems that only matter to the train command.
inline std::vector<std::string> data_errors(const RunConfig& cfg) {
  std::vector<std::string> e;
  for (const auto& [name, value] : {std::pair{"train_source", &cfg.train_source}, {"train_target", &cfg.train_target},
                                    {"valid_source", &cfg.valid_source}, {"valid_target", &cfg.valid_target}}) {
    if (value->empty()) e.push_back(std::string("missing required key ") + name);
    else if (!std::filesystem::is_regular_file(*value)) e.push_back(std::string(name) + ": no such file " + *value);
  }
  return e;
}

/// Canonical text: every key in schema order. Reparses to the same config.
inline std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_schema()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace sacmt

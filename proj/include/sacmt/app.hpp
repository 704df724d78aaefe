#pragma once

// Command-line front end: gen-synth, train, translate, evaluate. Everything
// runs through run_cli so the commands can also be driven in-process.
//
// Needs CLI11.hpp and json.hpp on the include path and links OpenSSL's
// libcrypto for content hashes.

#include "sacmt/config.hpp"
#include "sacmt/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sacmt {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitValidation = 3, kExitRuntime = 4 };

/// Bad input detected before any computation; maps to exit code 3.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kEvalHeader =
    "system,sentences,bleu,ter,lta,ali,rare_lta,bleu_p_value,ter_p_value,significant";
inline constexpr const char* kFrequencyHeader = "percentile,training_frequency";
inline constexpr const char* kUnkHeader = "lines,unk_lines";
inline constexpr int kManifestVersion = 1;
/// Bumped whenever a column of report.csv, the evaluation CSV, the frequency
/// CSV or the unk sidecar changes.
inline constexpr int kCsvSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Files, hashes, manifest, lock

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Writes through a temporary file and a rename, so readers never see a
/// partial file.
inline void write_file_atomic(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << text;
    if (!os.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline void save_checkpoint_atomic(const fs::path& p, const Checkpoint& ck) {
  const fs::path tmp = p.string() + ".tmp";
  save_checkpoint(tmp.string(), ck);
  fs::rename(tmp, p);
}

/// SHA-1 of "blob <size>\0<content>", the hash git gives the same file.
inline std::string git_blob_sha1(const fs::path& p) {
  const std::string content = read_file(p);
  const std::string data = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Provenance record written next to a command's outputs. Paths are stored as
/// given; hashes are taken when the manifest is written.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    doc_["manifest_version"] = kManifestVersion;
    doc_["csv_schema_version"] = kCsvSchemaVersion;
    doc_["command"] = std::move(command);
    doc_["argv"] = argv;
    doc_["started"] = utc_timestamp();
  }

  void config(const RunConfig& cfg, std::uint64_t seed) {
    doc_["config"] = config_text(cfg);
    doc_["seed"] = seed;
  }
  void input(const std::string& name, const fs::path& p) { inputs_.emplace_back(name, p); }
  void artifact(const std::string& name, const fs::path& p) { artifacts_.emplace_back(name, p); }
  nlohmann::json& operator[](const std::string& key) { return doc_[key]; }

  void write(const fs::path& p) {
    auto files = [](const std::vector<std::pair<std::string, fs::path>>& v) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [name, path] : v) {
        nlohmann::json e{{"path", path.string()}};
        if (fs::is_regular_file(path)) e["sha1"] = git_blob_sha1(path);
        j[name] = e;
      }
      return j;
    };
    doc_["inputs"] = files(inputs_);
    doc_["artifacts"] = files(artifacts_);
    doc_["finished"] = utc_timestamp();
    write_file_atomic(p, doc_.dump(2) + "\n");
  }

 private:
  nlohmann::json doc_;
  std::vector<std::pair<std::string, fs::path>> inputs_, artifacts_;
};

/// Exclusive advisory lock on <dir>/.lock, released on destruction or when
/// the process dies.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot create lock file " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw std::runtime_error("another training run holds " + path_.string());
    }
  }
  ~DirectoryLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Model files

/// Translation-ready model: agent parameters, dimensions and vocabularies.
inline Checkpoint model_checkpoint(const Seq2Seq& agent, const VocabPair& vocab,
                                   const std::vector<std::vector<double>>& values) {
  Checkpoint ck;
  ck.meta["vocab.source"] = vocab.source.serialize();
  ck.meta["vocab.target"] = vocab.target.serialize();
  ck.meta["model.embed"] = std::to_string(agent.dims().embed);
  ck.meta["model.hidden"] = std::to_string(agent.dims().hidden);
  const auto& entries = agent.params().entries();
  if (values.size() != entries.size()) throw std::logic_error("model_checkpoint: snapshot does not match the agent");
  for (std::size_t i = 0; i < entries.size(); ++i)
    ck.arrays["agent." + entries[i].first] = NamedArray{entries[i].second.shape(), values[i]};
  return ck;
}

struct LoadedModel {
  VocabPair vocab;
  std::unique_ptr<Seq2Seq> agent;
  Checkpoint checkpoint;
};

inline LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  try {
    m.checkpoint = load_checkpoint(path.string());
  } catch (const std::runtime_error& e) {
    throw ValidationError("cannot load model " + path.string() + ": " + e.what());
  }
  const auto& meta = m.checkpoint.meta;
  for (const char* k : {"vocab.source", "vocab.target", "model.embed", "model.hidden"})
    if (!meta.count(k)) throw ValidationError(path.string() + " is not a model checkpoint (missing " + k + ")");
  m.vocab.source = Vocabulary::deserialize(meta.at("vocab.source"));
  m.vocab.target = Vocabulary::deserialize(meta.at("vocab.target"));
  const ModelDims dims{std::stoul(meta.at("model.embed")), std::stoul(meta.at("model.hidden"))};
  const auto& src = m.checkpoint.arrays.find("agent.src_embed");
  const auto& tgt = m.checkpoint.arrays.find("agent.tgt_embed");
  if (src == m.checkpoint.arrays.end() || tgt == m.checkpoint.arrays.end() ||
      src->second.shape.at(0) != m.vocab.source.size() || tgt->second.shape.at(0) != m.vocab.target.size())
    throw ValidationError("vocabulary mismatch in " + path.string() +
                          ": embedding tables do not match the stored vocabularies");
  Rng rng(0);
  m.agent = std::make_unique<Seq2Seq>(m.vocab.source.size(), m.vocab.target.size(), dims, rng);
  try {
    m.checkpoint.take("agent.", m.agent->params());
  } catch (const std::runtime_error& e) {
    throw ValidationError(std::string("incompatible model checkpoint: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Commands

struct Console {
  std::ostream& out;
  std::ostream& err;
  bool quiet = false;
};

inline std::vector<Sentence> read_lines_checked(const std::string& path, bool allow_empty) {
  if (!fs::is_regular_file(path)) throw ValidationError("no such file " + path);
  try {
    return read_sentences(path, allow_empty);
  } catch (const std::runtime_error& e) {
    throw ValidationError(e.what());
  }
}

inline ParallelCorpus load_parallel_checked(const std::string& src, const std::string& tgt, const std::string& split) {
  ParallelCorpus c;
  c.source = read_lines_checked(src, false);
  c.target = read_lines_checked(tgt, false);
  c.split = split;
  if (c.source.size() != c.target.size())
    throw ValidationError(split + " files differ in length: " + src + " has " + std::to_string(c.source.size()) +
                          " lines, " + tgt + " has " + std::to_string(c.target.size()));
  if (c.size() == 0) throw ValidationError(split + " corpus " + src + " is empty");
  return c;
}

struct GenSynthOptions {
  RunConfig config;
  fs::path out_dir;
};

inline void cmd_gen_synth(const GenSynthOptions& o, const std::vector<std::string>& argv, Console& con) {
  const auto& cfg = o.config;
  validate(cfg.synth);
  if (cfg.synth_valid >= cfg.synth.pairs)
    throw ValidationError("synth_valid (" + std::to_string(cfg.synth_valid) + ") must be below synth_pairs (" +
                          std::to_string(cfg.synth.pairs) + ")");
  SynthTaskSpec spec = cfg.synth;
  spec.pairs += cfg.synth_test;
  Rng rng(cfg.synth_seed);
  auto all = synth_corpus(spec, rng);

  fs::create_directories(o.out_dir);
  Manifest manifest("gen-synth", argv);
  const std::size_t train_n = cfg.synth.pairs - cfg.synth_valid;
  struct Part {
    const char* name;
    std::size_t begin, end;
  };
  const Part parts[] = {{"train", 0, train_n}, {"valid", train_n, cfg.synth.pairs}, {"test", cfg.synth.pairs, spec.pairs}};
  const bool ambiguous = cfg.synth.kind == TaskKind::kAmbiguousLexicon;
  for (const auto& part : parts) {
    if (part.begin == part.end) continue;
    ParallelCorpus c;
    std::vector<MltRecord> records;
    for (std::size_t i = part.begin; i < part.end; ++i) {
      c.source.push_back(all.corpus.source[i]);
      c.target.push_back(all.corpus.target[i]);
      if (ambiguous) {
        auto r = all.records[i];
        r.sentence_id = i - part.begin;
        records.push_back(std::move(r));
      }
    }
    const auto base = o.out_dir / part.name;
    write_parallel(c, base.string() + ".src", base.string() + ".tgt");
    manifest.artifact(std::string(part.name) + ".src", base.string() + ".src");
    manifest.artifact(std::string(part.name) + ".tgt", base.string() + ".tgt");
    if (ambiguous) {
      save_mlt(base.string() + ".mlt.tsv", records);
      manifest.artifact(std::string(part.name) + ".mlt", base.string() + ".mlt.tsv");
    }
  }
  RunConfig starter = cfg;
  starter.train_source = "train.src";
  starter.train_target = "train.tgt";
  starter.valid_source = "valid.src";
  starter.valid_target = "valid.tgt";
  write_file_atomic(o.out_dir / "config.ini", config_text(starter));
  manifest.artifact("config", o.out_dir / "config.ini");
  manifest.config(starter, cfg.synth_seed);
  manifest.write(o.out_dir / "manifest.json");
  if (!con.quiet)
    con.out << "wrote " << to_string(cfg.synth.kind) << " task: " << train_n << " train, " << cfg.synth_valid
            << " valid, " << cfg.synth_test << " test pairs to " << o.out_dir.string() << "\n";
}

struct TrainOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<TrainMode> mode;
  fs::path out_dir;
  bool resume = false;
  std::string init_model;   // start from this model and skip actor pretraining
  std::size_t stop_after = 0;  // epochs to run in this invocation, 0 for no limit
};

inline VocabPair build_vocabularies(const ParallelCorpus& train, const RunConfig& cfg) {
  std::optional<std::size_t> cap;
  if (cfg.max_vocab > 0) cap = cfg.max_vocab;
  return {build_vocab(train.source, cfg.min_freq, cap), build_vocab(train.target, cfg.min_freq, cap)};
}

inline std::string config_difference(const std::string& a, const std::string& b) {
  std::istringstream sa(a), sb(b);
  std::string la, lb, diff;
  while (std::getline(sa, la) && std::getline(sb, lb))
    if (la != lb) diff += "\n  checkpoint: " + la + "\n  requested:  " + lb;
  return diff;
}

inline void cmd_train(const TrainOptions& o, const std::vector<std::string>& argv, Console& con) {
  const fs::path state_path = o.out_dir / "state.ckpt";
  const bool explicit_config = !o.config_path.empty() || !o.overrides.empty();
  std::optional<Checkpoint> saved;
  RunConfig cfg;
  TrainMode mode;
  if (o.resume) {
    if (!fs::is_regular_file(state_path)) throw ValidationError("nothing to resume: " + state_path.string() + " not found");
    saved = load_checkpoint(state_path.string());
    cfg = load_run_config("", {});
    std::vector<std::string> errors;
    apply_config_text(cfg, saved->meta.at("run.config"), state_path.string(), errors);
    if (!errors.empty()) throw ConfigError(errors);
    mode = parse_train_mode(saved->meta.at("trainer.mode"));
    if (o.mode && *o.mode != mode)
      throw ValidationError("--mode " + to_string(*o.mode) + " does not match the checkpointed run (" +
                            to_string(mode) + ")");
    if (explicit_config) {
      const auto requested = config_text(load_run_config(o.config_path, o.overrides));
      if (requested != config_text(cfg))
        throw ValidationError("configuration differs from the checkpointed run:" +
                              config_difference(config_text(cfg), requested));
    }
  } else {
    if (!o.mode) throw ValidationError("--mode is required unless resuming");
    if (o.config_path.empty()) throw ValidationError("--config is required unless resuming");
    mode = *o.mode;
    cfg = load_run_config(o.config_path, o.overrides);
    if (fs::exists(state_path))
      throw ValidationError(o.out_dir.string() + " already holds a run; pass --resume or choose another --out");
  }
  if (auto e = data_errors(cfg); !e.empty()) throw ConfigError(e);

  auto train_text = load_parallel_checked(cfg.train_source, cfg.train_target, "train");
  auto valid_text = load_parallel_checked(cfg.valid_source, cfg.valid_target, "valid");
  VocabPair vocab;
  if (saved) {
    vocab.source = Vocabulary::deserialize(saved->meta.at("vocab.source"));
    vocab.target = Vocabulary::deserialize(saved->meta.at("vocab.target"));
    if (!(vocab.source == build_vocabularies(train_text, cfg).source) ||
        !(vocab.target == build_vocabularies(train_text, cfg).target))
      throw ValidationError("training data changed since the checkpoint was written (vocabularies differ)");
  } else {
    vocab = build_vocabularies(train_text, cfg);
  }
  TrainingData data{encode_corpus(train_text, vocab), encode_corpus(valid_text, vocab)};

  Trainer trainer(cfg.train, mode, vocab.source.size(), vocab.target.size());
  if (saved) {
    trainer.restore(*saved);
  } else if (!o.init_model.empty()) {
    auto pre = load_model(o.init_model);
    if (!(pre.vocab.source == vocab.source) || !(pre.vocab.target == vocab.target))
      throw ValidationError("vocabulary mismatch between " + o.init_model + " and the training data");
    const auto d = pre.agent->dims();
    if (d.embed != cfg.train.embed || d.hidden != cfg.train.hidden)
      throw ValidationError("model dimensions of " + o.init_model + " differ from the configuration");
    trainer.start_from_pretrained(pre.checkpoint);
  }

  fs::create_directories(o.out_dir);
  DirectoryLock lock(o.out_dir);
  Manifest manifest("train", argv);
  manifest.config(cfg, cfg.train.seed);
  manifest["mode"] = to_string(mode);
  for (const auto& [name, path] : {std::pair{"train_source", cfg.train_source}, {"train_target", cfg.train_target},
                                   {"valid_source", cfg.valid_source}, {"valid_target", cfg.valid_target}})
    manifest.input(name, path);
  if (!o.init_model.empty()) manifest.input("init_model", o.init_model);
  const fs::path report_path = o.out_dir / "report.csv", best_path = o.out_dir / "best.ckpt",
                 config_path = o.out_dir / "config.ini";
  write_file_atomic(config_path, config_text(cfg));
  manifest.artifact("config", config_path);
  manifest.artifact("report", report_path);
  manifest.artifact("state", state_path);
  manifest.artifact("best_model", best_path);

  auto persist = [&](const Trainer& t) {
    write_file_atomic(report_path, report_csv(t.report()));
    Checkpoint st = t.state();
    st.meta["run.config"] = config_text(cfg);
    st.meta["vocab.source"] = vocab.source.serialize();
    st.meta["vocab.target"] = vocab.target.serialize();
    save_checkpoint_atomic(state_path, st);
    const auto& best = t.stage() == Stage::kDone || t.best_parameters().empty() ? t.agent().params().snapshot()
                                                                                : t.best_parameters();
    save_checkpoint_atomic(best_path, model_checkpoint(t.agent(), vocab, best));
    manifest["stage"] = to_string(t.stage());
    manifest["epochs_completed"] = t.report().size();
    manifest.write(o.out_dir / "manifest.json");
  };

  std::size_t ran = 0;
  persist(trainer);
  trainer.run(data, [&](const Trainer& t) {
    const auto& r = t.report().back();
    if (!con.quiet) {
      char line[256];
      std::snprintf(line, sizeof line, "%-15s epoch %3zu", to_string(r.stage).c_str(), r.epoch);
      std::string text = line;
      for (const auto& [name, v] : {std::pair{"valid_bleu", r.valid_bleu}, {"valid_loss", r.valid_loss},
                                    {"critic_loss", r.critic_loss}, {"reward", r.mean_reward},
                                    {"entropy", r.mean_entropy}}) {
        if (std::isnan(v)) continue;
        std::snprintf(line, sizeof line, "  %s %.4f", name, v);
        text += line;
      }
      con.out << text << "\n" << std::flush;
    }
    persist(t);
    return !(o.stop_after > 0 && ++ran >= o.stop_after);
  });
  persist(trainer);
  if (!con.quiet)
    con.out << (trainer.stage() == Stage::kDone ? "training finished" : "training paused") << "; report at "
            << report_path.string() << "\n";
}

struct TranslateOptions {
  std::string model, input, output;
  std::size_t batch = 64;
};

inline void cmd_translate(const TranslateOptions& o, const std::vector<std::string>& argv, Console& con) {
  if (o.batch == 0) throw ValidationError("--batch must be positive");
  auto model = load_model(o.model);
  auto lines = read_lines_checked(o.input, true);
  std::vector<std::vector<Id>> sources;
  for (const auto& s : lines) sources.push_back(encode_with_eos(model.vocab.source, s));
  auto outputs = greedy_decode_all(*model.agent, sources, o.batch);
  std::string text;
  std::size_t unk = 0;
  for (const auto& ids : outputs) {
    const auto words = model.vocab.target.decode(ids);
    if (std::find(ids.begin(), ids.end(), Vocabulary::kUnk) != ids.end()) ++unk;
    text += join_tokens(words) + "\n";
  }
  if (fs::path(o.output).has_parent_path()) fs::create_directories(fs::path(o.output).parent_path());
  write_file_atomic(o.output, text);
  const std::string sidecar = o.output + ".unk.csv";
  write_file_atomic(sidecar, std::string(kUnkHeader) + "\n" + std::to_string(outputs.size()) + "," +
                                 std::to_string(unk) + "\n");
  Manifest manifest("translate", argv);
  manifest.input("model", o.model);
  manifest.input("input", o.input);
  manifest.artifact("output", o.output);
  manifest.artifact("unk_count", sidecar);
  manifest.write(o.output + ".manifest.json");
  if (!con.quiet) con.out << outputs.size() << " lines translated, " << unk << " containing <unk>\n";
}

struct EvaluateOptions {
  std::string hyp, ref, mlt, baseline, freq_report, out, freq_out;
  std::size_t resamples = 1000;
  std::uint64_t seed = 1;
};

struct EvalRow {
  std::string system;
  std::size_t sentences = 0;
  double bleu = kNotApplicable, ter = kNotApplicable, lta = kNotApplicable, ali = kNotApplicable,
         rare_lta = kNotApplicable, bleu_p = kNotApplicable, ter_p = kNotApplicable;
  std::string significant;
};

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& r : rows) {
    out += r.system + "," + std::to_string(r.sentences);
    for (double v : {r.bleu, r.ter, r.lta, r.ali, r.rare_lta, r.bleu_p, r.ter_p}) out += "," + format_field(v);
    out += "," + r.significant + "\n";
  }
  return out;
}

inline void cmd_evaluate(const EvaluateOptions& o, const std::vector<std::string>& argv, Console& con) {
  const auto refs = read_lines_checked(o.ref, false);
  const auto hyps = read_lines_checked(o.hyp, true);
  auto aligned = [&](const std::vector<Sentence>& h, const std::string& path) {
    if (h.size() != refs.size())
      throw ValidationError(path + " has " + std::to_string(h.size()) + " lines but " + o.ref + " has " +
                            std::to_string(refs.size()));
  };
  aligned(hyps, o.hyp);
  std::vector<MltRecord> records, rare;
  if (!o.mlt.empty()) {
    if (!fs::is_regular_file(o.mlt)) throw ValidationError("no such file " + o.mlt);
    try {
      records = load_mlt(o.mlt);
    } catch (const std::runtime_error& e) {
      throw ValidationError(e.what());
    }
    for (const auto& r : records)
      if (r.sentence_id >= refs.size())
        throw ValidationError("MLT record for sentence " + std::to_string(r.sentence_id) + " outside the " +
                              std::to_string(refs.size()) + "-line test set");
  }
  std::vector<Sentence> training;
  if (!o.freq_report.empty()) {
    training = read_lines_checked(o.freq_report, false);
    if (!records.empty()) rare = rare_records(records, training);
  }
  std::optional<std::vector<Sentence>> base;
  if (!o.baseline.empty()) {
    base = read_lines_checked(o.baseline, true);
    aligned(*base, o.baseline);
  }

  auto score = [&](const std::string& name, const std::vector<Sentence>& h) {
    EvalRow r;
    r.system = name;
    r.sentences = h.size();
    r.bleu = corpus_bleu(h, refs);
    r.ter = 100.0 * corpus_ter(h, refs);
    if (!records.empty()) {
      r.lta = 100.0 * lta(h, records);
      r.ali = 100.0 * ali(h, records);
      if (!rare.empty()) r.rare_lta = 100.0 * lta(h, rare);
    }
    return r;
  };
  std::vector<EvalRow> rows{score("hypothesis", hyps)};
  if (base) {
    rows.push_back(score("baseline", *base));
    auto b = bootstrap_significance(hyps, *base, refs, SignificanceMetric::kBleu, o.resamples, o.seed);
    auto t = bootstrap_significance(hyps, *base, refs, SignificanceMetric::kTer, o.resamples, o.seed);
    rows[0].bleu_p = b.p_value;
    rows[0].ter_p = t.p_value;
    rows[0].significant = b.significant(0.05) ? "yes" : "no";
  }
  const std::string csv = eval_csv(rows);

  std::string freq_csv;
  if (!training.empty()) {
    auto rep = frequency_report(hyps, training);
    freq_csv = std::string(kFrequencyHeader) + "\n";
    for (const auto& [p, v] : rep.percentiles) freq_csv += std::to_string(p) + "," + format_field(v) + "\n";
  }

  if (!con.quiet) {
    con.out << csv;
    if (!freq_csv.empty()) con.out << freq_csv;
  }
  if (!o.out.empty()) {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    write_file_atomic(o.out, csv);
    Manifest manifest("evaluate", argv);
    manifest["seed"] = o.seed;
    manifest.input("hypothesis", o.hyp);
    manifest.input("reference", o.ref);
    if (!o.mlt.empty()) manifest.input("mlt", o.mlt);
    if (base) manifest.input("baseline", o.baseline);
    if (!o.freq_report.empty()) manifest.input("training_corpus", o.freq_report);
    manifest.artifact("report", o.out);
    if (!freq_csv.empty()) {
      const std::string fpath = o.freq_out.empty() ? o.out + ".freq.csv" : o.freq_out;
      write_file_atomic(fpath, freq_csv);
      manifest.artifact("frequency_report", fpath);
    }
    manifest.write(o.out + ".manifest.json");
  }
}

// ---------------------------------------------------------------------------
// Argument parsing

inline std::string assignment(const std::string& key, const std::string& value) { return key + " = " + value; }

/// Parses `args` (without the program name) and runs one subcommand.
/// Returns the process exit code; messages go to `out` and `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Soft actor-critic training for sequence-to-sequence translation", "sacmt"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic parallel task");
  std::string gen_config, gen_out;
  std::vector<std::string> gen_sets;
  std::map<std::string, std::string> gen_flags;
  gen->add_option("--config", gen_config, "config file supplying synth_* keys")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();
  for (const auto& [flag, key, help] :
       std::vector<std::tuple<std::string, std::string, std::string>>{
           {"--task", "synth_task", "copy, reverse or ambiguous-lexicon"},
           {"--vocab", "synth_vocab", "source vocabulary size"},
           {"--min-length", "synth_min_length", "shortest plain-word sentence"},
           {"--max-length", "synth_max_length", "longest plain-word sentence"},
           {"--pairs", "synth_pairs", "training plus validation pairs"},
           {"--valid", "synth_valid", "validation pairs"},
           {"--test", "synth_test", "additional test pairs"},
           {"--ambiguous", "synth_ambiguous_words", "ambiguous source words"},
           {"--senses", "synth_senses", "senses per ambiguous word"},
           {"--skew", "synth_skew", "comma-separated sense frequencies"},
           {"--seed", "synth_seed", "generator seed"}})
    gen->add_option(flag, gen_flags[key], help);
  gen->add_option("--set", gen_sets, "extra key=value override (repeatable)");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  TrainOptions topt;
  std::string mode_text, train_out, seed_text;
  train->add_option("--config", topt.config_path, "run configuration file")->check(CLI::ExistingFile);
  train->add_option("--mode", mode_text, "mle, sac-bleu or sac-unsup")
      ->check(CLI::IsMember({"mle", "sac-bleu", "sac-unsup"}));
  train->add_option("--out", train_out, "run directory")->required();
  train->add_flag("--resume", topt.resume, "continue the run in --out from its last checkpoint");
  train->add_option("--init", topt.init_model, "start from this model and skip actor pretraining")
      ->check(CLI::ExistingFile);
  train->add_option("--seed", seed_text, "training seed (overrides the config)");
  train->add_option("--set", topt.overrides, "key=value override (repeatable)");
  train->add_option("--stop-after", topt.stop_after, "pause after this many epochs");

  // translate
  auto* tr = app.add_subcommand("translate", "greedy-decode a file with a trained model");
  TranslateOptions xopt;
  tr->add_option("--model", xopt.model, "model checkpoint (best.ckpt of a run)")->required();
  tr->add_option("--input", xopt.input, "source sentences, one per line")->required();
  tr->add_option("--output", xopt.output, "output file")->required();
  tr->add_option("--batch", xopt.batch, "sentences decoded together");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score hypotheses against references");
  EvaluateOptions eopt;
  ev->add_option("--hyp", eopt.hyp, "system output")->required();
  ev->add_option("--ref", eopt.ref, "references")->required();
  ev->add_option("--mlt", eopt.mlt, "ambiguous-word records (TSV) for LTA and ALI");
  ev->add_option("--baseline", eopt.baseline, "second system for paired bootstrap tests");
  ev->add_option("--freq-report", eopt.freq_report, "training targets for the output-frequency report");
  ev->add_option("--out", eopt.out, "CSV report path");
  ev->add_option("--freq-out", eopt.freq_out, "frequency CSV path (default <out>.freq.csv)");
  ev->add_option("--resamples", eopt.resamples, "bootstrap resamples")->check(CLI::PositiveNumber);
  ev->add_option("--seed", eopt.seed, "bootstrap seed");

  std::vector<std::string> argv{"sacmt"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<char*> cargv;
  for (auto& a : argv) cargv.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Console con{out, err, quiet};
  auto overrides_from = [](const std::vector<std::string>& sets) {
    std::vector<std::string> o;
    for (const auto& s : sets) {
      if (s.find('=') == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      o.push_back(s);
    }
    return o;
  };
  try {
    if (*gen) {
      auto sets = overrides_from(gen_sets);
      for (const auto& [key, value] : gen_flags)
        if (!value.empty()) sets.push_back(assignment(key, value));
      GenSynthOptions g;
      g.config = load_run_config(gen_config, sets);
      g.out_dir = gen_out;
      cmd_gen_synth(g, argv, con);
    } else if (*train) {
      topt.overrides = overrides_from(topt.overrides);
      if (!seed_text.empty()) topt.overrides.push_back(assignment("seed", seed_text));
      if (!mode_text.empty()) topt.mode = parse_train_mode(mode_text);
      topt.out_dir = train_out;
      cmd_train(topt, argv, con);
    } else if (*tr) {
      cmd_translate(xopt, argv, con);
    } else if (*ev) {
      cmd_evaluate(eopt, argv, con);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace sacmt

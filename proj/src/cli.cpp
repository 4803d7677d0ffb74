// SPDX-License-Identifier: Apache-2.0
#include "dcr/cli.hpp"

#include "dcr/checkpoint.hpp"
#include "dcr/errors.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace dcr::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Setting {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Setting int_setting(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_int(k, v); },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Setting double_setting(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
          [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Setting bool_setting(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_bool(k, v); },
          [member](const RunConfig& c) { return from_bool(member(const_cast<RunConfig&>(c))); }};
}

const std::map<std::string, Setting>& settings() {
  static const std::map<std::string, Setting> table = [] {
    std::map<std::string, Setting> t;
    t["preset"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                     if (v == "desk") {
                       c.train = lifelong::TrainConfig::desk();
                     } else if (v == "full") {
                       c.train = lifelong::TrainConfig::full();
                     } else {
                       throw ConfigError(k, "expected desk or full, got '" + v + "'");
                     }
                     c.preset = v;
                   },
                   [](const RunConfig& c) { return c.preset; }};
    t["seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }};
    t["task_stream"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.task_stream = v; },
                        [](const RunConfig& c) { return c.task_stream.generic_string(); }};
    t["output_dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
                       [](const RunConfig& c) { return c.output_dir.generic_string(); }};

    t["train.batch_identities"] = int_setting([](RunConfig& c) -> int& { return c.train.batch_identities; });
    t["train.instances_per_identity"] = int_setting([](RunConfig& c) -> int& { return c.train.instances_per_identity; });
    t["train.epochs"] = int_setting([](RunConfig& c) -> int& { return c.train.epochs; });
    t["train.lr"] = double_setting([](RunConfig& c) -> double& { return c.train.lr; });
    t["train.lr_decay"] = double_setting([](RunConfig& c) -> double& { return c.train.lr_decay; });
    t["train.lr_decay_every"] = int_setting([](RunConfig& c) -> int& { return c.train.lr_decay_every; });
    t["train.adam_beta1"] = double_setting([](RunConfig& c) -> double& { return c.train.adam_beta1; });
    t["train.adam_beta2"] = double_setting([](RunConfig& c) -> double& { return c.train.adam_beta2; });
    t["train.adam_eps"] = double_setting([](RunConfig& c) -> double& { return c.train.adam_eps; });
    t["train.weight_decay"] = double_setting([](RunConfig& c) -> double& { return c.train.weight_decay; });
    t["train.tau"] = double_setting([](RunConfig& c) -> double& { return c.train.tau; });
    t["train.margin"] = double_setting([](RunConfig& c) -> double& { return c.train.margin; });
    t["train.use_af"] = bool_setting([](RunConfig& c) -> bool& { return c.train.use_af; });
    t["train.use_kc"] = bool_setting([](RunConfig& c) -> bool& { return c.train.use_kc; });
    t["train.buffer_capacity"] = int_setting([](RunConfig& c) -> int& { return c.train.buffer_capacity; });
    t["train.exemplars_per_identity"] = int_setting([](RunConfig& c) -> int& { return c.train.exemplars_per_identity; });
    t["train.weight.ce"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.ce; });
    t["train.weight.tri_global"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.tri_global; });
    t["train.weight.tri_local"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.tri_local; });
    t["train.weight.ort"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.ort; });
    t["train.weight.af"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.af; });
    t["train.weight.al"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.al; });
    t["train.weight.ld"] = double_setting([](RunConfig& c) -> double& { return c.train.weights.ld; });
    t["train.af_rows"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                            if (v == "mean") {
                              c.train.af_rows = lifelong::AfRows::Mean;
                            } else if (v == "last") {
                              c.train.af_rows = lifelong::AfRows::Last;
                            } else {
                              throw ConfigError(k, "expected mean or last, got '" + v + "'");
                            }
                          },
                          [](const RunConfig& c) {
                            return std::string(c.train.af_rows == lifelong::AfRows::Mean ? "mean" : "last");
                          }};
    t["train.triplet_distance"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "euclidean") {
            c.train.triplet_distance = tga::TripletDistance::Euclidean;
          } else if (v == "cosine") {
            c.train.triplet_distance = tga::TripletDistance::Cosine;
          } else {
            throw ConfigError(k, "expected euclidean or cosine, got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          return std::string(c.train.triplet_distance == tga::TripletDistance::Euclidean ? "euclidean" : "cosine");
        }};

    t["model.n_views"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.n_views; });
    t["model.embed_dim"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.embed_dim; });
    t["model.patch_size"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.patch_size; });
    t["model.image_depth"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.image_depth; });
    t["model.text_depth"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.text_depth; });
    t["model.n_heads"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.n_heads; });
    t["model.mlp_hidden"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.mlp_hidden; });
    t["model.max_text_len"] = int_setting([](RunConfig& c) -> int& { return c.model.backbone.max_text_len; });
    t["model.shared_class_position"] =
        bool_setting([](RunConfig& c) -> bool& { return c.model.backbone.shared_class_position; });
    t["model.pfm_heads"] = int_setting([](RunConfig& c) -> int& { return c.model.pfm.n_heads; });
    t["model.pfm_dropout"] = double_setting([](RunConfig& c) -> double& { return c.model.pfm.dropout_rate; });
    t["model.pfm_mlp_hidden"] = int_setting([](RunConfig& c) -> int& { return c.model.pfm.mlp_hidden; });
    t["model.decoder_blocks"] = int_setting([](RunConfig& c) -> int& { return c.model.decoder.n_blocks; });
    t["model.decoder_heads"] = int_setting([](RunConfig& c) -> int& { return c.model.decoder.n_heads; });
    t["model.decoder_mlp_hidden"] = int_setting([](RunConfig& c) -> int& { return c.model.decoder.mlp_hidden; });
    t["model.per_row_logits"] = bool_setting([](RunConfig& c) -> bool& { return c.model.per_row_logits; });
    t["model.use_pfm"] = bool_setting([](RunConfig& c) -> bool& { return c.model.use_pfm; });
    t["model.use_acn"] = bool_setting([](RunConfig& c) -> bool& { return c.model.use_acn; });
    t["model.fat_source"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                               if (v == "attribute_vector") {
                                 c.model.fat_source = acn::FatSource::AttributeVector;
                               } else if (v == "semantics") {
                                 c.model.fat_source = acn::FatSource::Semantics;
                               } else {
                                 throw ConfigError(k, "expected attribute_vector or semantics, got '" + v + "'");
                               }
                             },
                             [](const RunConfig& c) {
                               return std::string(c.model.fat_source == acn::FatSource::AttributeVector
                                                      ? "attribute_vector"
                                                      : "semantics");
                             }};
    t["atg.threshold"] = double_setting([](RunConfig& c) -> double& { return c.model.atg.threshold; });
    t["atg.lower_body_exclusive"] = bool_setting([](RunConfig& c) -> bool& { return c.model.atg.lower_body_exclusive; });
    t["atg.generic_text"] = bool_setting([](RunConfig& c) -> bool& { return c.model.atg.generic_text; });
    t["eval.feature"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "global") {
                             c.feature = eval::FeatureMode::GlobalMean;
                           } else if (v == "global+attribute") {
                             c.feature = eval::FeatureMode::GlobalAndAttribute;
                           } else {
                             throw ConfigError(k, "expected global or global+attribute, got '" + v + "'");
                           }
                         },
                         [](const RunConfig& c) {
                           return std::string(c.feature == eval::FeatureMode::GlobalMean ? "global"
                                                                                         : "global+attribute");
                         }};
    return t;
  }();
  return table;
}

void validate_config(const RunConfig& cfg) {
  auto wrap = [](const char* key, const auto& fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("train", [&] { cfg.train.validate(); });
  wrap("model", [&] { cfg.model.validate(); });
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, s] : settings()) out.push_back(k);
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = settings().find(key);
  if (it == settings().end()) throw ConfigError(key, "unknown key");
  it->second.set(cfg, key, value);
}

std::string get_setting(const RunConfig& cfg, const std::string& key) {
  const auto it = settings().find(key);
  if (it == settings().end()) throw ConfigError(key, "unknown key");
  return it->second.get(cfg);
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(source, lineno, "empty key");
    if (!settings().count(key)) throw ConfigError(key, "unknown key (" + source + ":" + std::to_string(lineno) + ")");
    if (!kv.emplace(key, value).second) throw ConfigError(key, "set twice (" + source + ":" + std::to_string(lineno) + ")");
  }
  RunConfig cfg;
  if (const auto it = kv.find("preset"); it != kv.end()) apply_setting(cfg, "preset", it->second);
  for (const auto& [k, v] : kv) {
    if (k != "preset") apply_setting(cfg, k, v);
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string canonical_text(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, s] : settings()) out << k << " = " << s.get(cfg) << '\n';
  return out.str();
}

std::string config_hash(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, s] : settings()) {
    if (k != "output_dir") out << k << " = " << s.get(cfg) << '\n';
  }
  return ckpt::sha256_hex(out.str());
}

fs::path output_path(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

namespace {

constexpr const char* kStreamFile = "stream.tsv";
constexpr const char* kCheckpointIndex = "checkpoints.txt";
constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kResolvedConfig = "config.txt";

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<fs::path> read_checkpoint_index(const fs::path& run_dir) {
  std::ifstream in(run_dir / kCheckpointIndex);
  if (!in) throw IoError("no checkpoint index in " + run_dir.string());
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) out.push_back(run_dir / line);
  }
  return out;
}

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_file.empty() ? RunConfig{} : load_run_config(c.config_file);
  std::map<std::string, std::string> overrides;
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
    overrides[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  if (const auto it = overrides.find("preset"); it != overrides.end()) apply_setting(cfg, "preset", it->second);
  for (const auto& [k, v] : overrides) {
    if (k != "preset") apply_setting(cfg, k, v);
  }
  return cfg;
}

std::vector<data::Dataset> load_datasets(std::span<const fs::path> dirs) {
  std::vector<data::Dataset> out;
  for (const fs::path& d : dirs) out.push_back(data::load_dataset(d));
  return out;
}

int cmd_make_synth(const fs::path& out_dir, int domains, int unseen, std::uint64_t seed, const data::SynthConfig& base,
                   double train_fraction, std::ostream& out, std::ostream& err) {
  if (domains < 1 || unseen < 0 || unseen >= domains) {
    err << "error: need at least one seen domain (domains=" << domains << ", unseen=" << unseen << ")\n";
    return kExitUsage;
  }
  const fs::path root = output_path(out_dir);
  data::TaskStream stream;
  for (int i = 0; i < domains; ++i) {
    data::SynthConfig cfg = data::SynthConfig::for_domain(i, seed);
    cfg.n_identities = base.n_identities;
    cfg.images_per_identity = base.images_per_identity;
    cfg.n_cameras = base.n_cameras;
    cfg.noise_level = base.noise_level;
    const fs::path dir = root / cfg.dataset_id;
    const data::GeneratedDomain gen = data::generate_domain(cfg, dir);
    const data::SplitResult split = data::split_domain(gen.manifest, train_fraction, cfg.seed);
    for (const std::string& w : split.warnings) err << "warning: " << cfg.dataset_id << ": " << w << '\n';
    data::write_split(dir, split);
    stream.entries.push_back({fs::path(cfg.dataset_id), i < domains - unseen});
    out << (dir / data::kFullManifest).generic_string() << '\n';
  }
  data::write_task_stream(root / kStreamFile, stream);
  out << (root / kStreamFile).generic_string() << '\n';
  return kExitOk;
}

int cmd_train(RunConfig cfg, std::ostream& out, std::ostream& err) {
  validate_config(cfg);
  if (cfg.task_stream.empty()) throw ConfigError("task_stream", "no task stream given");
  const data::TaskStream stream = data::load_task_stream(cfg.task_stream);
  const auto seen_dirs = stream.seen();
  const auto datasets = load_datasets(seen_dirs);
  std::vector<data::DatasetManifest> train_manifests;
  for (const data::Dataset& d : datasets) train_manifests.push_back(d.train);
  const attr::AnnotationPredictor predictor;
  const auto tasks = lifelong::make_tasks(train_manifests, predictor);

  const fs::path run_dir = output_path(cfg.output_dir);
  fs::create_directories(run_dir / "checkpoints");
  const std::string hash = config_hash(cfg);
  write_text(run_dir / kResolvedConfig, canonical_text(cfg));
  std::ofstream metrics(run_dir / kMetricsFile, std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (run_dir / kMetricsFile).string());
  std::ostringstream index;

  lifelong::RunHooks hooks;
  hooks.train.on_epoch = [&](const lifelong::EpochRecord& r) {
    metrics << lifelong::to_json_line(r) << '\n';
    metrics.flush();
  };
  hooks.on_task_end = [&](const lifelong::TaskSummary& s, const lifelong::ModelPair& pair,
                          const lifelong::MemoryBuffer& buffer) {
    const std::string name = ckpt::checkpoint_name(s.task, hash);
    ckpt::save_checkpoint(run_dir / "checkpoints" / name, pair.model, s.task, hash);
    index << "checkpoints/" << name << '\n';
    for (const std::string& w : s.warnings) err << "warning: " << w << '\n';
    out << "task " << s.task << " (" << s.dataset_id << "): classes " << s.head_rows_after << ", buffer "
        << buffer.entries().size() << ", checkpoint " << (run_dir / "checkpoints" / name).generic_string() << '\n';
  };
  lifelong::run_lifelong(cfg.model, cfg.train, tasks, hooks);
  write_text(run_dir / kCheckpointIndex, index.str());
  out << "config hash " << hash << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& stream_path, const fs::path& report_path,
             eval::FeatureMode mode, std::ostream& out) {
  if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  ckpt::Checkpoint ck = ckpt::load_checkpoint(checkpoint);
  const data::TaskStream stream = data::load_task_stream(stream_path);
  const attr::AnnotationPredictor predictor;
  std::map<std::string, eval::DatasetResult> results;
  std::vector<std::string> seen, unseen;
  for (const data::TaskStreamEntry& e : stream.entries) {
    const data::Dataset ds = data::load_dataset(e.dir);
    const eval::EvalSet set = eval::load_eval_set(ds, predictor);
    results[ds.id] = eval::evaluate_dataset(ck.model, ds.id, set.query, set.gallery, mode);
    (e.seen ? seen : unseen).push_back(ds.id);
  }
  const std::string text = eval::format_report(eval::aggregate_report(results, seen, unseen));
  if (!report_path.empty()) write_text(output_path(report_path), text);
  out << text;
  return kExitOk;
}

int cmd_curves(const fs::path& run_dir_arg, const fs::path& stream_path, const fs::path& out_dir_arg,
               eval::FeatureMode mode, std::ostream& out) {
  const fs::path run_dir = output_path(run_dir_arg);
  const auto checkpoints = read_checkpoint_index(run_dir);
  if (checkpoints.empty()) throw IoError("no checkpoints listed in " + (run_dir / kCheckpointIndex).string());
  const data::TaskStream stream = data::load_task_stream(stream_path);
  const attr::AnnotationPredictor predictor;
  const fs::path out_dir = out_dir_arg.empty() ? run_dir / "curves" : output_path(out_dir_arg);
  std::vector<eval::EvalSet> unseen;
  for (const data::TaskStreamEntry& e : stream.entries) {
    const data::Dataset ds = data::load_dataset(e.dir);
    eval::EvalSet set = eval::load_eval_set(ds, predictor);
    if (e.seen) {
      const auto rows = eval::forgetting_curve(checkpoints, set, mode);
      const fs::path p = out_dir / ("forgetting_" + ds.id + ".tsv");
      write_text(p, eval::format_curve(rows));
      out << p.generic_string() << '\n';
    } else {
      unseen.push_back(std::move(set));
    }
  }
  if (!unseen.empty()) {
    const auto rows = eval::generalization_curve(checkpoints, unseen, mode);
    const fs::path p = out_dir / "generalization.tsv";
    write_text(p, eval::format_curve(rows));
    out << p.generic_string() << '\n';
  }
  return kExitOk;
}

eval::FeatureMode parse_feature(const std::string& s) {
  RunConfig tmp;
  apply_setting(tmp, "eval.feature", s);
  return tmp.feature;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lifelong person re-identification with attribute-text guidance"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // make-synth
  auto* synth = app.add_subcommand("make-synth", "Generate synthetic identity domains and a task stream");
  std::string synth_out = "synth";
  int synth_domains = 5, synth_unseen = 0;
  std::uint64_t synth_seed = 1;
  data::SynthConfig synth_base;
  double train_fraction = 0.5;
  synth->add_option("--out", synth_out, "Output directory (relative paths resolve under $DCR_OUTPUT_ROOT)");
  synth->add_option("--domains", synth_domains, "Number of domains");
  synth->add_option("--unseen", synth_unseen, "How many of the last domains are held out as unseen");
  synth->add_option("--seed", synth_seed, "Generation seed");
  synth->add_option("--identities", synth_base.n_identities, "Identities per domain");
  synth->add_option("--images", synth_base.images_per_identity, "Images per identity");
  synth->add_option("--cameras", synth_base.n_cameras, "Cameras per domain");
  synth->add_option("--noise", synth_base.noise_level, "Pixel noise standard deviation");
  synth->add_option("--train-fraction", train_fraction, "Fraction of identities used for training");

  // train
  auto* train = app.add_subcommand("train", "Train sequentially over the seen datasets of a task stream");
  Common train_common;
  std::string train_stream, train_out;
  std::vector<std::string> ablations;
  int n_views = 0, epochs = 0;
  double threshold = -1.0;
  std::uint64_t train_seed = 0;
  train->add_option("--config", train_common.config_file, "Run configuration file (key = value)");
  train->add_option("--set", train_common.sets, "Override a configuration key, key=value (repeatable)");
  train->add_option("--stream", train_stream, "Task stream file (overrides task_stream)");
  train->add_option("--out", train_out, "Run output directory (overrides output_dir)");
  train->add_option("--ablate", ablations, "Disable a component: no-pfm, no-acn, no-atg, no-af, no-kc (repeatable)")
      ->check(CLI::IsMember({"no-pfm", "no-acn", "no-atg", "no-af", "no-kc"}));
  train->add_option("--n-views", n_views, "Number of global / attribute-wise representations (0 keeps the config)");
  train->add_option("--threshold", threshold, "Attribute confidence threshold (negative keeps the config)");
  train->add_option("--epochs", epochs, "Epochs per task (0 keeps the config)");
  train->add_option("--seed", train_seed, "Seed (0 keeps the config)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on every dataset of a task stream");
  std::string eval_ckpt, eval_stream, eval_report, eval_feature = "global";
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--stream", eval_stream, "Task stream file")->required();
  ev->add_option("--report", eval_report, "Write the report to this file as well");
  ev->add_option("--feature", eval_feature, "Retrieval feature: global or global+attribute")
      ->check(CLI::IsMember({"global", "global+attribute"}));

  // curves
  auto* curves = app.add_subcommand("curves", "Emit forgetting and generalization curves over a run's checkpoints");
  std::string curves_run, curves_stream, curves_out, curves_feature = "global";
  curves->add_option("--run", curves_run, "Run directory written by train")->required();
  curves->add_option("--stream", curves_stream, "Task stream file")->required();
  curves->add_option("--out", curves_out, "Output directory (default <run>/curves)");
  curves->add_option("--feature", curves_feature, "Retrieval feature: global or global+attribute")
      ->check(CLI::IsMember({"global", "global+attribute"}));

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      return cmd_make_synth(synth_out, synth_domains, synth_unseen, synth_seed, synth_base, train_fraction, out, err);
    }
    if (train->parsed()) {
      RunConfig cfg;
      try {
        cfg = resolve_config(train_common);
      } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      if (!train_stream.empty()) cfg.task_stream = train_stream;
      if (!train_out.empty()) cfg.output_dir = train_out;
      for (const std::string& a : ablations) {
        if (a == "no-pfm") cfg.model.use_pfm = false;
        if (a == "no-acn") cfg.model.use_acn = false;
        if (a == "no-atg") cfg.model.atg.generic_text = true;
        if (a == "no-af") cfg.train.use_af = false;
        if (a == "no-kc") cfg.train.use_kc = false;
      }
      if (n_views > 0) cfg.model.backbone.n_views = n_views;
      if (threshold >= 0.0) cfg.model.atg.threshold = threshold;
      if (epochs > 0) cfg.train.epochs = epochs;
      if (train_seed > 0) cfg.train.seed = train_seed;
      return cmd_train(cfg, out, err);
    }
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_stream, eval_report, parse_feature(eval_feature), out);
    if (curves->parsed()) return cmd_curves(curves_run, curves_stream, curves_out, parse_feature(curves_feature), out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace dcr::cli

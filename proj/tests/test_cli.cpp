// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "support.hpp"

#include "dcr/checkpoint.hpp"
#include "dcr/cli.hpp"
#include "dcr/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace dcr;
using namespace dcr::cli;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "dcr");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string l;
  while (std::getline(in, l)) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

// A model small enough for a few seconds of training.
std::vector<std::string> small_model() {
  return {"--set", "model.embed_dim=16",       "--set", "model.patch_size=32",     "--set", "model.image_depth=1",
          "--set", "model.text_depth=1",       "--set", "model.n_heads=2",         "--set", "model.mlp_hidden=32",
          "--set", "model.pfm_heads=2",        "--set", "model.pfm_mlp_hidden=32", "--set", "model.decoder_blocks=1",
          "--set", "model.decoder_heads=2",    "--set", "model.decoder_mlp_hidden=32",
          "--set", "train.batch_identities=2", "--set", "train.instances_per_identity=2", "--epochs", "1"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::filesystem::path make_synth(const test::TempDir& dir, int domains, int unseen) {
  const Run r = run({"make-synth", "--out", (dir / "synth").string(), "--domains", std::to_string(domains), "--unseen",
                     std::to_string(unseen), "--identities", "4", "--images", "8"});
  REQUIRE(r.code == kExitOk);
  return dir / "synth" / "stream.tsv";
}

}  // namespace

TEST_CASE("run configuration parsing") {
  const RunConfig d = parse_run_config("");
  CHECK(d.model.backbone.n_views == 3);
  CHECK(d.model.atg.threshold == 0.8);
  CHECK(get_setting(d, "model.n_views") == "3");

  const RunConfig c = parse_run_config("# comment\ntrain.epochs = 7  # trailing\n\nmodel.n_views=4\n");
  CHECK(c.train.epochs == 7);
  CHECK(c.model.backbone.n_views == 4);

  try {
    parse_run_config("train.epochz = 3\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.epochz");
    CHECK(std::string(e.what()).find("train.epochz") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config("train.epochs = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.epochs = 1\ntrain.epochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("no equals sign\n"), ParseError);

  // The preset applies first whatever its position.
  const RunConfig a = parse_run_config("train.epochs = 2\npreset = full\n");
  const RunConfig b = parse_run_config("preset = full\ntrain.epochs = 2\n");
  CHECK(a.train.epochs == 2);
  CHECK(canonical_text(a) == canonical_text(b));
  CHECK(config_hash(a) == config_hash(b));

  RunConfig other = a;
  other.output_dir = "elsewhere";
  CHECK(config_hash(other) == config_hash(a));
  CHECK(canonical_text(other) != canonical_text(a));
  apply_setting(other, "train.epochs", "3");
  CHECK(config_hash(other) != config_hash(a));

  for (const std::string& k : config_keys()) {
    RunConfig round = parse_run_config(k + " = " + get_setting(d, k) + "\n");
    CHECK(canonical_text(round) == canonical_text(d));
  }
}

TEST_CASE("exit codes and help") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"eval"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  const std::map<std::string, std::vector<std::string>> flags{
      {"make-synth", {"--out", "--domains", "--unseen", "--seed", "--identities", "--images"}},
      {"train", {"--config", "--set", "--stream", "--out", "--ablate", "--n-views", "--threshold"}},
      {"eval", {"--checkpoint", "--stream", "--report", "--feature"}},
      {"curves", {"--run", "--stream", "--out", "--feature"}},
  };
  for (const auto& [cmd, fl] : flags) {
    const Run r = run({cmd, "--help"});
    CAPTURE(cmd);
    CHECK(r.code == kExitOk);
    for (const std::string& f : fl) CHECK(r.out.find(f) != std::string::npos);
  }
  test::TempDir dir("dcr_cli_codes");
  CHECK(run({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--stream", (dir / "s.tsv").string()}).code ==
        kExitRuntime);
  CHECK(run({"train", "--set", "bogus.key=1"}).code == kExitUsage);
  CHECK(run({"train", "--stream", (dir / "missing.tsv").string()}).code == kExitRuntime);
}

TEST_CASE("make-synth writes every domain and is repeatable") {
  test::TempDir dir("dcr_cli_synth");
  const Run r = run({"make-synth", "--out", (dir / "a").string(), "--domains", "3", "--unseen", "1", "--identities",
                     "4", "--images", "8"});
  REQUIRE(r.code == kExitOk);
  for (const char* d : {"synth0", "synth1", "synth2"}) {
    for (const char* f : {"manifest.tsv", "train.tsv", "query.tsv", "gallery.tsv"}) {
      CHECK(std::filesystem::exists(dir / "a" / d / f));
    }
  }
  const data::TaskStream s = data::load_task_stream(dir / "a" / "stream.tsv");
  CHECK(s.seen().size() == 2);
  CHECK(s.unseen().size() == 1);

  REQUIRE(run({"make-synth", "--out", (dir / "b").string(), "--domains", "3", "--unseen", "1", "--identities", "4",
               "--images", "8"})
              .code == kExitOk);
  CHECK(read_file(dir / "a" / "synth1" / "gallery.tsv") == read_file(dir / "b" / "synth1" / "gallery.tsv"));
  CHECK(read_file(dir / "a" / "synth1" / "images" / "0000_c0_00.ppm") ==
        read_file(dir / "b" / "synth1" / "images" / "0000_c0_00.ppm"));

  CHECK(run({"make-synth", "--out", (dir / "c").string(), "--domains", "2", "--unseen", "2"}).code == kExitUsage);
  {
    std::ofstream blocker(dir / "file");
    blocker << "x";
  }
  CHECK(run({"make-synth", "--out", (dir / "file" / "sub").string(), "--domains", "1"}).code != kExitOk);
}

TEST_CASE("train, eval and curves end to end") {
  test::TempDir dir("dcr_cli_train");
  const auto stream = make_synth(dir, 3, 1);
  const auto run_dir = dir / "run";
  const Run t = run(concat({"train", "--stream", stream.string(), "--out", run_dir.string()}, small_model()));
  INFO(t.err);
  REQUIRE(t.code == kExitOk);
  const auto index = lines(read_file(run_dir / "checkpoints.txt"));
  REQUIRE(index.size() == 2);
  for (const auto& l : index) CHECK(std::filesystem::exists(run_dir / l));
  const ckpt::Checkpoint last = ckpt::load_checkpoint(run_dir / index[1]);
  CHECK(last.task == 2);
  CHECK(last.model.num_classes() == 4);  // two training identities per domain
  CHECK(std::filesystem::exists(run_dir / "config.txt"));

  const auto metrics = lines(read_file(run_dir / "metrics.jsonl"));
  REQUIRE(metrics.size() == 2);
  const auto first = nlohmann::json::parse(metrics[0]);
  CHECK(first["task"] == 1);
  CHECK(first["loss"]["af"] == 0.0);

  const Run e = run({"eval", "--checkpoint", (run_dir / index[1]).string(), "--stream", stream.string(), "--report",
                     (dir / "report.txt").string()});
  REQUIRE(e.code == kExitOk);
  CHECK(e.out == read_file(dir / "report.txt"));
  for (const char* id : {"synth0", "synth1", "synth2"}) CHECK(e.out.find(id) != std::string::npos);
  CHECK(e.out.find("seen_avg_map") != std::string::npos);
  CHECK(e.out.find("unseen_avg_map") != std::string::npos);

  const Run c = run({"curves", "--run", run_dir.string(), "--stream", stream.string()});
  REQUIRE(c.code == kExitOk);
  for (const char* f : {"forgetting_synth0.tsv", "forgetting_synth1.tsv", "generalization.tsv"}) {
    const auto rows = lines(read_file(run_dir / "curves" / f));
    CHECK(rows.size() == 3);  // header and one row per checkpoint
  }
  // The last forgetting row of a dataset equals a direct evaluation.
  const auto rows = lines(read_file(run_dir / "curves" / "forgetting_synth0.tsv"));
  std::istringstream last_row(rows.back());
  int step = 0;
  double map = 0.0;
  last_row >> step >> map;
  const data::Dataset ds = data::load_dataset(dir / "synth" / "synth0");
  const eval::EvalSet set = eval::load_eval_set(ds, attr::AnnotationPredictor{});
  ckpt::Checkpoint ck = ckpt::load_checkpoint(run_dir / index[1]);
  CHECK(map == doctest::Approx(eval::evaluate_dataset(ck.model, "synth0", set.query, set.gallery).map).epsilon(1e-5));

  SUBCASE("ablating AF zeroes its loss") {
    const auto ab = dir / "ablate";
    REQUIRE(run(concat({"train", "--stream", stream.string(), "--out", ab.string(), "--ablate", "no-af"},
                       small_model()))
                .code == kExitOk);
    for (const auto& l : lines(read_file(ab / "metrics.jsonl"))) CHECK(nlohmann::json::parse(l)["loss"]["af"] == 0.0);
    CHECK(get_setting(load_run_config(ab / "config.txt"), "train.use_af") == "false");
  }
  SUBCASE("architecture ablations are recorded in the checkpoint") {
    const auto ab = dir / "ablate_arch";
    REQUIRE(run(concat({"train", "--stream", stream.string(), "--out", ab.string(), "--ablate", "no-pfm", "--ablate",
                        "no-acn"},
                       small_model()))
                .code == kExitOk);
    const auto idx = lines(read_file(ab / "checkpoints.txt"));
    REQUIRE_FALSE(idx.empty());
    const ckpt::Checkpoint ck = ckpt::load_checkpoint(ab / idx.back());
    CHECK_FALSE(ck.model.config().use_pfm);
    CHECK_FALSE(ck.model.config().use_acn);
  }
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "support.hpp"

#include "dcr/datakit.hpp"
#include "dcr/errors.hpp"

#include <fstream>
#include <set>

using namespace dcr;
using namespace dcr::data;

namespace {

double box_mean(const Image8& img, const Box& b, int c) {
  double s = 0.0;
  for (int y = b.y; y < b.y + b.h; ++y) {
    for (int x = b.x; x < b.x + b.w; ++x) s += img.at(y, x, c);
  }
  return s / (255.0 * b.h * b.w);
}

// Reads attribute bits back from the pixels: a set attribute's block departs
// from its reference box by the block contrast.
attr::AttributeBits decode_bits(const Image8& img) {
  const SynthLayout& l = synth_layout();
  attr::AttributeBits bits{};
  for (std::size_t a = 0; a < attr::kNumAttributes; ++a) {
    double diff = 0.0;
    for (int c = 0; c < 3; ++c) diff += std::abs(box_mean(img, l.attribute_blocks[a], c) - box_mean(img, l.reference_boxes[a], c));
    bits[a] = diff / 3.0 > l.block_contrast / 2.0;
  }
  return bits;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("synthetic generation writes one image and record per identity-image pair") {
  test::TempDir dir("dcr_synth");
  SynthConfig cfg;
  const GeneratedDomain gen = generate_domain(cfg, dir / "d");
  CHECK(gen.manifest.records.size() == 160);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "d" / "images")) files += e.is_regular_file();
  CHECK(files == 160);
  CHECK(gen.manifest.identities().size() == 20);
  for (const auto& r : gen.manifest.records) CHECK(std::filesystem::exists(gen.manifest.resolve(r)));
  const DatasetManifest back = load_manifest(dir / "d" / kFullManifest);
  CHECK(back.same_content(gen.manifest));

  const GeneratedDomain again = generate_domain(cfg, dir / "e");
  CHECK(again.manifest.same_content(gen.manifest));
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& r = gen.manifest.records[i];
    CHECK(read_file(gen.manifest.resolve(r)) == read_file(again.manifest.resolve(r)));
  }
  SynthConfig other = cfg;
  other.seed = 2;
  CHECK_FALSE(generate_domain(other, dir / "f").manifest.same_content(gen.manifest));
}

TEST_CASE("attribute bits can be read back from the rendered pixels") {
  test::TempDir dir("dcr_render");
  for (std::uint64_t seed : {1, 2, 3}) {
    for (int domain : {0, 1, 2, 3}) {
      for (double noise : {0.0, 0.05}) {
        SynthConfig cfg = SynthConfig::for_domain(domain, seed);
        cfg.n_identities = 10;
        cfg.images_per_identity = 4;
        cfg.noise_level = noise;
        const GeneratedDomain gen = generate_domain(cfg, dir / ("d" + std::to_string(seed) + std::to_string(domain)));
        int exact = 0;
        for (const auto& r : gen.manifest.records) exact += decode_bits(read_ppm(gen.manifest.resolve(r))) == r.attributes;
        const double rate = static_cast<double>(exact) / static_cast<double>(gen.manifest.records.size());
        CAPTURE(seed);
        CAPTURE(domain);
        CAPTURE(noise);
        if (noise == 0.0) {
          CHECK(rate == 1.0);
        } else {
          CHECK(rate >= 0.95);
        }
      }
    }
  }
}

TEST_CASE("domains differ by more than the spread within a domain") {
  test::TempDir dir("dcr_shift");
  auto background_means = [&](int index) {
    SynthConfig cfg = SynthConfig::for_domain(index, 1);
    cfg.n_identities = 8;
    cfg.images_per_identity = 4;
    const GeneratedDomain gen = generate_domain(cfg, dir / cfg.dataset_id);
    std::vector<std::array<double, 3>> out;
    const Box corner{0, 0, 12, 24};
    for (const auto& r : gen.manifest.records) {
      const Image8 img = read_ppm(gen.manifest.resolve(r));
      out.push_back({box_mean(img, corner, 0), box_mean(img, corner, 1), box_mean(img, corner, 2)});
    }
    return out;
  };
  const auto a = background_means(0), b = background_means(1);
  auto mean = [](const std::vector<std::array<double, 3>>& v) {
    std::array<double, 3> m{};
    for (const auto& x : v) {
      for (int c = 0; c < 3; ++c) m[c] += x[c] / static_cast<double>(v.size());
    }
    return m;
  };
  auto spread = [&](const std::vector<std::array<double, 3>>& v) {
    const auto m = mean(v);
    double s = 0.0;
    for (const auto& x : v) {
      for (int c = 0; c < 3; ++c) s += (x[c] - m[c]) * (x[c] - m[c]);
    }
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  const auto ma = mean(a), mb = mean(b);
  double shift = 0.0;
  for (int c = 0; c < 3; ++c) shift += (ma[c] - mb[c]) * (ma[c] - mb[c]);
  shift = std::sqrt(shift);
  CHECK(shift > spread(a));
  CHECK(shift > spread(b));
}

TEST_CASE("synthetic configuration validation") {
  SynthConfig cfg;
  cfg.n_cameras = 1;
  CHECK_THROWS_AS(generate_domain(cfg, "/nonexistent"), InvalidInput);
  cfg = SynthConfig{};
  cfg.dataset_id = "has space";
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  CHECK_THROWS_AS(SynthConfig::for_domain(-1, 1), InvalidInput);
  CHECK(SynthConfig::for_domain(0, 1).attribute_prototypes == 2);
  CHECK(SynthConfig::for_domain(1, 1).resample_colours);
  CHECK(SynthConfig::for_domain(7, 1).dataset_id == "synth7");
  CHECK_NOTHROW(SynthConfig::for_domain(7, 1).validate());
}

TEST_CASE("split is identity-disjoint with query identities inside the gallery") {
  test::TempDir dir("dcr_split");
  const GeneratedDomain gen = generate_domain(SynthConfig{}, dir / "d");
  const SplitResult s = split_domain(gen.manifest, 0.5, 3);
  CHECK(s.train.identities().size() == 10);
  std::set<int> test_ids;
  for (const auto* m : {&s.query, &s.gallery}) {
    for (int id : m->identities()) test_ids.insert(id);
  }
  CHECK(test_ids.size() == 10);
  for (int id : s.train.identities()) CHECK_FALSE(test_ids.count(id));
  const auto g = s.gallery.identities();
  for (int id : s.query.identities()) CHECK(std::binary_search(g.begin(), g.end(), id));
  CHECK(s.train.records.size() + s.query.records.size() + s.gallery.records.size() == gen.manifest.records.size());
  std::set<std::pair<int, int>> query_id_cam;
  for (const auto& r : s.query.records) CHECK(query_id_cam.insert({r.identity, r.camera}).second);
  CHECK(s.warnings.empty());

  write_split(dir / "d", s);
  const Dataset ds = load_dataset(dir / "d");
  CHECK(ds.id == "synth0");
  CHECK(ds.train.same_content(s.train));
  CHECK(ds.query.same_content(s.query));
  CHECK(ds.gallery.same_content(s.gallery));

  CHECK(split_domain(gen.manifest, 0.5, 3).train.same_content(s.train));
  CHECK_THROWS_AS(split_domain(gen.manifest, 1.0, 3), InvalidInput);
}

TEST_CASE("manifest parsing errors") {
  test::TempDir dir("dcr_manifest");
  const std::string header = "# dcr-manifest v1 dataset=x split=all\n";
  const std::string good = "a.ppm\t0\t0\t0,0,0,0,0,0,0,0,0,0,0,0\nb.ppm\t0\t1\t1,0,0,0,0,0,0,0,0,0,0,0\n";
  write_file(dir / "ok.tsv", header + good);
  const DatasetManifest m = load_manifest(dir / "ok.tsv");
  CHECK(m.records.size() == 2);
  CHECK(m.records[1].attributes[0]);
  CHECK(m.base_dir == dir.path());

  write_file(dir / "short.tsv", header + good + "c.ppm\t1\t0\t0,0,0,0,0,0,0,0,0,0,0\n");
  try {
    load_manifest(dir / "short.tsv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  write_file(dir / "flag.tsv", header + "a.ppm\t0\t0\t0,0,2,0,0,0,0,0,0,0,0,0\n");
  CHECK_THROWS_AS(load_manifest(dir / "flag.tsv"), ParseError);
  write_file(dir / "noid.tsv", header + "a.ppm\tx\t0\t0,0,0,0,0,0,0,0,0,0,0,0\n");
  CHECK_THROWS_AS(load_manifest(dir / "noid.tsv"), ParseError);
  write_file(dir / "nohdr.tsv", good);
  CHECK_THROWS_AS(load_manifest(dir / "nohdr.tsv"), ParseError);
  write_file(dir / "onecam.tsv", header + "a.ppm\t0\t0\t0,0,0,0,0,0,0,0,0,0,0,0\n");
  CHECK_THROWS_AS(load_manifest(dir / "onecam.tsv"), ValidationError);
  CHECK_THROWS_AS(load_manifest(dir / "absent.tsv"), IoError);
}

TEST_CASE("dataset validation rejects queries without gallery identities") {
  test::TempDir dir("dcr_ds");
  const std::string flags = "\t0,0,0,0,0,0,0,0,0,0,0,0\n";
  auto manifest = [&](const char* split, const std::string& body) {
    return std::string("# dcr-manifest v1 dataset=x split=") + split + "\n" + body;
  };
  write_file(dir / kTrainManifest, manifest("train", "t0.ppm\t0\t0" + flags + "t1.ppm\t0\t1" + flags));
  write_file(dir / kGalleryManifest, manifest("gallery", "g0.ppm\t1\t0" + flags + "g1.ppm\t1\t1" + flags));
  write_file(dir / kQueryManifest, manifest("query", "q0.ppm\t2\t0" + flags + "q1.ppm\t2\t1" + flags));
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  write_file(dir / kQueryManifest, manifest("query", "q0.ppm\t1\t0" + flags + "q1.ppm\t1\t1" + flags));
  CHECK_NOTHROW(load_dataset(dir.path()));
  write_file(dir / kTrainManifest, manifest("train", "t0.ppm\t1\t0" + flags + "t1.ppm\t1\t1" + flags));
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
}

TEST_CASE("task stream round trip and validation") {
  test::TempDir dir("dcr_stream");
  TaskStream s;
  s.entries = {{dir / "a", true}, {dir / "b", true}, {dir / "c", false}};
  write_task_stream(dir / "stream.tsv", s);
  const TaskStream back = load_task_stream(dir / "stream.tsv");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.seen() == std::vector<std::filesystem::path>{dir / "a", dir / "b"});
  CHECK(back.unseen() == std::vector<std::filesystem::path>{dir / "c"});
  CHECK(read_file(dir / "stream.tsv").find(dir.path().string()) == std::string::npos);

  TaskStream none;
  none.entries = {{dir / "a", false}};
  CHECK_THROWS_AS(write_task_stream(dir / "x.tsv", none), ValidationError);
  TaskStream twice;
  twice.entries = {{dir / "a", true}, {dir / "a", false}};
  CHECK_THROWS_AS(write_task_stream(dir / "x.tsv", twice), ValidationError);
  write_file(dir / "bad.tsv", read_file(dir / "stream.tsv") + "maybe\td\n");
  try {
    load_task_stream(dir / "bad.tsv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 5);
  }
  CHECK_THROWS_AS(load_task_stream(dir / "absent.tsv"), IoError);
}

// SPDX-License-Identifier: Apache-2.0
#include "dcr/datakit.hpp"

#include "dcr/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace dcr::data {

namespace {

constexpr const char* kManifestMagic = "# dcr-manifest";
constexpr const char* kStreamMagic = "# dcr-task-stream";

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) return std::nullopt;
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

fs::path normalized_dir(const fs::path& p) {
  std::error_code ec;
  fs::path abs = fs::absolute(p.empty() ? fs::path(".") : p, ec);
  return abs.lexically_normal();
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0)); }

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::All: return "all";
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "all";
}

Split split_from_string(const std::string& s) {
  if (s == "all") return Split::All;
  if (s == "train") return Split::Train;
  if (s == "query") return Split::Query;
  if (s == "gallery") return Split::Gallery;
  throw InvalidInput("unknown split '" + s + "'");
}

std::vector<int> DatasetManifest::identities() const {
  std::set<int> ids;
  for (const ManifestRecord& r : records) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

void DatasetManifest::validate() const {
  if (dataset_id.empty()) throw ValidationError("manifest has an empty dataset id");
  if (records.empty()) throw ValidationError("manifest " + dataset_id + " has no records");
  std::set<int> cameras;
  for (const ManifestRecord& r : records) {
    if (r.path.empty()) throw ValidationError("manifest " + dataset_id + " has an empty image path");
    if (r.identity < 0 || r.camera < 0) {
      throw ValidationError("manifest " + dataset_id + " has a negative identity or camera id");
    }
    cameras.insert(r.camera);
  }
  if (cameras.size() < 2) throw ValidationError("manifest " + dataset_id + " needs at least 2 cameras");
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  const fs::path target_dir = normalized_dir(path.parent_path());
  const fs::path source_dir = normalized_dir(manifest.base_dir.empty() ? path.parent_path() : manifest.base_dir);
  std::ostringstream out;
  out << kManifestMagic << " v1 dataset=" << manifest.dataset_id << " split=" << to_string(manifest.split)
      << '\n';
  for (const ManifestRecord& r : manifest.records) {
    std::string rel = r.path;
    if (source_dir != target_dir) rel = (source_dir / r.path).lexically_normal().lexically_relative(target_dir).generic_string();
    out << rel << '\t' << r.identity << '\t' << r.camera << '\t';
    for (std::size_t i = 0; i < r.attributes.size(); ++i) out << (i ? "," : "") << (r.attributes[i] ? 1 : 0);
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const std::string src = path.string();
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw ParseError(src, 1, "missing header line");
  {
    std::istringstream hs(strip_cr(line));
    std::string hash, magic, version;
    hs >> hash >> magic >> version;
    if (hash + " " + magic != kManifestMagic) throw ParseError(src, 1, "not a manifest header");
    if (version != "v1") throw ParseError(src, 1, "unsupported manifest version '" + version + "'");
    std::string kv;
    bool have_id = false, have_split = false;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError(src, 1, "malformed header field '" + kv + "'");
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      if (key == "dataset") {
        m.dataset_id = value;
        have_id = true;
      } else if (key == "split") {
        try {
          m.split = split_from_string(value);
        } catch (const InvalidInput& e) {
          throw ParseError(src, 1, e.what());
        }
        have_split = true;
      } else {
        throw ParseError(src, 1, "unknown header field '" + key + "'");
      }
    }
    if (!have_id || !have_split) throw ParseError(src, 1, "header needs dataset= and split=");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 4) throw ParseError(src, lineno, "expected 4 tab-separated fields");
    ManifestRecord r;
    r.path = fields[0];
    if (r.path.empty()) throw ParseError(src, lineno, "empty image path");
    const auto id = parse_int(fields[1]);
    const auto cam = parse_int(fields[2]);
    if (!id) throw ParseError(src, lineno, "identity is not an integer");
    if (!cam) throw ParseError(src, lineno, "camera is not an integer");
    r.identity = *id;
    r.camera = *cam;
    const auto flags = split_on(fields[3], ',');
    if (flags.size() != attr::kNumAttributes) {
      throw ParseError(src, lineno, "expected " + std::to_string(attr::kNumAttributes) + " attribute flags, got " +
                                        std::to_string(flags.size()));
    }
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i] != "0" && flags[i] != "1") throw ParseError(src, lineno, "attribute flag must be 0 or 1");
      r.attributes[i] = flags[i] == "1";
    }
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void validate_dataset(const Dataset& ds) {
  const std::vector<int> q = ds.query.identities();
  const std::vector<int> g = ds.gallery.identities();
  const std::vector<int> t = ds.train.identities();
  for (int id : q) {
    if (!std::binary_search(g.begin(), g.end(), id)) {
      throw ValidationError("dataset " + ds.id + ": query identity " + std::to_string(id) + " is absent from the gallery");
    }
  }
  for (int id : t) {
    if (std::binary_search(g.begin(), g.end(), id) || std::binary_search(q.begin(), q.end(), id)) {
      throw ValidationError("dataset " + ds.id + ": identity " + std::to_string(id) + " is in both train and test");
    }
  }
  if (ds.train.dataset_id != ds.id || ds.query.dataset_id != ds.id || ds.gallery.dataset_id != ds.id) {
    throw ValidationError("dataset " + ds.id + ": split manifests disagree on the dataset id");
  }
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.dir = dir;
  ds.train = load_manifest(dir / kTrainManifest);
  ds.query = load_manifest(dir / kQueryManifest);
  ds.gallery = load_manifest(dir / kGalleryManifest);
  ds.id = ds.train.dataset_id;
  validate_dataset(ds);
  return ds;
}

SynthConfig SynthConfig::for_domain(int index, std::uint64_t seed) {
  static constexpr std::array<std::array<double, 3>, 5> kBackgrounds{{
      {0.55, 0.55, 0.55},
      {0.30, 0.38, 0.62},
      {0.62, 0.48, 0.30},
      {0.32, 0.58, 0.36},
      {0.72, 0.70, 0.78},
  }};
  static constexpr std::array<std::array<double, 3>, 5> kBiases{{
      {0.00, 0.00, 0.00},
      {0.08, -0.04, 0.10},
      {-0.08, 0.06, -0.04},
      {0.05, 0.08, -0.08},
      {-0.05, -0.05, 0.06},
  }};
  if (index < 0) throw InvalidInput("domain index must be non-negative");
  SynthConfig cfg;
  cfg.dataset_id = "synth" + std::to_string(index);
  cfg.seed = seed * 1000003ULL + static_cast<std::uint64_t>(index) * 7919ULL + 17ULL;
  if (index < static_cast<int>(kBackgrounds.size())) {
    cfg.background = kBackgrounds[static_cast<std::size_t>(index)];
    cfg.color_bias = kBiases[static_cast<std::size_t>(index)];
  } else {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> bg(0.25, 0.75), bias(-0.1, 0.1);
    for (int c = 0; c < 3; ++c) {
      cfg.background[static_cast<std::size_t>(c)] = bg(rng);
      cfg.color_bias[static_cast<std::size_t>(c)] = bias(rng);
    }
  }
  cfg.camera_cast = 0.05;
  cfg.palette_size = 0;
  if (index % 2 == 0) {
    cfg.attribute_prototypes = 2;
  } else {
    cfg.resample_colours = true;
  }
  return cfg;
}

void SynthConfig::validate() const {
  if (dataset_id.empty() || dataset_id.find_first_of(" \t\n") != std::string::npos) {
    throw InvalidInput("dataset id must be non-empty without whitespace");
  }
  if (n_identities <= 0 || images_per_identity <= 0 || n_cameras <= 0) {
    throw InvalidInput("synthetic domain counts must be positive");
  }
  if (n_cameras < 2) throw InvalidInput("synthetic domains need at least 2 cameras");
  if (!(noise_level >= 0.0)) throw InvalidInput("noise level must be non-negative");
  if (palette_size < 0) throw InvalidInput("palette size must be non-negative");
  if (attribute_prototypes < 0) throw InvalidInput("attribute prototype count must be non-negative");
  if (!(camera_cast >= 0.0 && camera_cast <= 0.3)) throw InvalidInput("camera cast must lie in [0, 0.3]");
  for (double v : background) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("background colour must lie in [0, 1]");
  }
  for (double v : color_bias) {
    if (!(std::abs(v) <= 0.5)) throw InvalidInput("colour bias must lie in [-0.5, 0.5]");
  }
}

const SynthLayout& synth_layout() {
  static const SynthLayout layout = [] {
    SynthLayout l;
    l.head = {16, 40, 48, 48};
    l.torso = {64, 28, 80, 72};
    l.legs = {144, 36, 92, 56};
    const Box head_ref{44, 44, 12, 12};
    const Box torso_ref{112, 58, 12, 12};
    const Box legs_ref{204, 58, 12, 12};
    const Box side_ref{156, 6, 12, 12};  // background strip left of the body
    using namespace attr;
    l.attribute_blocks[kSex] = {20, 44, 12, 12};
    l.attribute_blocks[kHat] = {20, 72, 12, 12};
    l.attribute_blocks[kGlasses] = {44, 72, 12, 12};
    l.attribute_blocks[kShortSleevedTop] = {72, 34, 12, 12};
    l.attribute_blocks[kLongSleevedTop] = {72, 58, 12, 12};
    l.attribute_blocks[kLongCoat] = {72, 82, 12, 12};
    l.attribute_blocks[kTrousers] = {152, 42, 12, 12};
    l.attribute_blocks[kShorts] = {152, 74, 12, 12};
    l.attribute_blocks[kSkirt] = {178, 42, 12, 12};
    l.attribute_blocks[kHandbag] = {72, 6, 12, 12};
    l.attribute_blocks[kShoulderBag] = {98, 6, 12, 12};
    l.attribute_blocks[kBackpack] = {124, 6, 12, 12};
    for (std::size_t i : {kSex, kHat, kGlasses}) l.reference_boxes[i] = head_ref;
    for (std::size_t i : {kShortSleevedTop, kLongSleevedTop, kLongCoat}) l.reference_boxes[i] = torso_ref;
    for (std::size_t i : {kTrousers, kShorts, kSkirt}) l.reference_boxes[i] = legs_ref;
    for (std::size_t i : {kHandbag, kShoulderBag, kBackpack}) l.reference_boxes[i] = side_ref;
    return l;
  }();
  return layout;
}

GeneratedDomain generate_domain(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  using Rgb = std::array<double, 3>;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> colour(0.15, 0.85);
  std::bernoulli_distribution coin(0.5), accessory(0.4);
  std::uniform_int_distribution<int> lower(0, 2);

  struct Identity {
    Rgb head, torso, legs;
    attr::AttributeBits bits{};
  };
  std::vector<Rgb> palette(static_cast<std::size_t>(cfg.palette_size));
  for (Rgb& c : palette) {
    for (double& v : c) v = colour(rng);
  }
  std::uniform_int_distribution<std::size_t> pick_colour(0, palette.empty() ? 0 : palette.size() - 1);
  auto draw_colour = [&](Rgb& c) {
    if (palette.empty()) {
      for (double& v : c) v = colour(rng);
    } else {
      c = palette[pick_colour(rng)];
    }
  };
  auto draw_bits = [&] {
    attr::AttributeBits bits{};
    bits[attr::kSex] = coin(rng);
    bits[attr::kShortSleevedTop] = coin(rng);
    bits[attr::kLongSleevedTop] = coin(rng);
    bits[attr::kLongCoat] = coin(rng);
    bits[attr::kTrousers + static_cast<std::size_t>(lower(rng))] = true;
    for (std::size_t i : {attr::kHat, attr::kGlasses, attr::kHandbag, attr::kShoulderBag, attr::kBackpack}) {
      bits[i] = accessory(rng);
    }
    return bits;
  };
  std::vector<attr::AttributeBits> prototypes(static_cast<std::size_t>(cfg.attribute_prototypes));
  for (auto& b : prototypes) b = draw_bits();
  std::uniform_int_distribution<std::size_t> pick_prototype(0, prototypes.empty() ? 0 : prototypes.size() - 1);

  std::vector<Identity> people(static_cast<std::size_t>(cfg.n_identities));
  for (Identity& p : people) {
    for (Rgb* c : {&p.head, &p.torso, &p.legs}) draw_colour(*c);
    p.bits = prototypes.empty() ? draw_bits() : prototypes[pick_prototype(rng)];
  }
  std::vector<Rgb> camera_offset(static_cast<std::size_t>(cfg.n_cameras));
  std::uniform_real_distribution<double> cam(-0.08, 0.08), cast(-cfg.camera_cast, cfg.camera_cast);
  for (Rgb& o : camera_offset) {
    const double brightness = cam(rng);
    for (double& v : o) v = brightness + cast(rng);
  }

  const SynthLayout& layout = synth_layout();
  auto block_colour = [&](const Rgb& base) {
    Rgb out{};
    for (int c = 0; c < 3; ++c) {
      const double b = base[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(c)] = b < 0.5 ? b + layout.block_contrast : b - layout.block_contrast;
    }
    return out;
  };
  auto region_base = [&](const Identity& p, std::size_t attribute) -> Rgb {
    switch (attr::AttributeSchema::standard().categories[attribute].group) {
      case attr::Group::Overall: return p.head;
      case attr::Group::UpperBody: return p.torso;
      case attr::Group::LowerBody: return p.legs;
      case attr::Group::Decoration:
        return (attribute == attr::kHat || attribute == attr::kGlasses) ? p.head : cfg.background;
    }
    return cfg.background;
  };

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec || !fs::is_directory(out_dir / "images")) {
    throw IoError("cannot create output directory " + (out_dir / "images").string());
  }

  GeneratedDomain result;
  result.dir = out_dir;
  result.manifest.dataset_id = cfg.dataset_id;
  result.manifest.split = Split::All;
  result.manifest.base_dir = out_dir;

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  std::vector<Rgb> canvas(static_cast<std::size_t>(kImageHeight) * kImageWidth);
  auto fill = [&](const Box& b, const Rgb& c) {
    for (int y = b.y; y < b.y + b.h; ++y) {
      for (int x = b.x; x < b.x + b.w; ++x) canvas[static_cast<std::size_t>(y) * kImageWidth + x] = c;
    }
  };

  auto render = [&](const Identity& p) {
    std::fill(canvas.begin(), canvas.end(), cfg.background);
    fill(layout.head, p.head);
    fill(layout.torso, p.torso);
    fill(layout.legs, p.legs);
    for (std::size_t a = 0; a < attr::kNumAttributes; ++a) {
      if (p.bits[a]) fill(layout.attribute_blocks[a], block_colour(region_base(p, a)));
    }
  };

  for (int id = 0; id < cfg.n_identities; ++id) {
    Identity p = people[static_cast<std::size_t>(id)];
    render(p);
    for (int j = 0; j < cfg.images_per_identity; ++j) {
      if (cfg.resample_colours) {
        for (Rgb* c : {&p.head, &p.torso, &p.legs}) draw_colour(*c);
        render(p);
      }
      const int camera = j % cfg.n_cameras;
      const Rgb& cam_shift = camera_offset[static_cast<std::size_t>(camera)];
      const double shift = jitter(rng);
      Image8 img{kImageHeight, kImageWidth,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(kImageHeight) * kImageWidth * 3)};
      for (int y = 0; y < kImageHeight; ++y) {
        for (int x = 0; x < kImageWidth; ++x) {
          const Rgb& base = canvas[static_cast<std::size_t>(y) * kImageWidth + x];
          for (int c = 0; c < 3; ++c) {
            const auto ch = static_cast<std::size_t>(c);
            double v = base[ch] + cfg.color_bias[ch] + cam_shift[ch] + shift;
            if (cfg.noise_level > 0.0) v += cfg.noise_level * noise(rng);
            img.at(y, x, c) = to_u8(v);
          }
        }
      }
      char name[64];
      std::snprintf(name, sizeof(name), "images/%04d_c%d_%02d.ppm", id, camera, j);
      write_ppm(out_dir / name, img);
      result.manifest.records.push_back({name, id, camera, p.bits});
    }
  }
  write_manifest(out_dir / kFullManifest, result.manifest);
  return result;
}

SplitResult split_domain(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train fraction must lie in (0, 1)");
  std::vector<int> ids = manifest.identities();
  const int n = static_cast<int>(ids.size());
  const int n_train = static_cast<int>(std::lround(n * train_fraction));
  if (n_train < 1 || n - n_train < 1) {
    throw InvalidInput("split needs at least one train and one test identity, have " + std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::set<int> train_ids(ids.begin(), ids.begin() + n_train);

  enum class Dest { Train, Query, Gallery };
  std::vector<Dest> dest(manifest.records.size(), Dest::Gallery);
  std::map<int, std::vector<std::size_t>> test_records;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    if (train_ids.count(r.identity)) {
      dest[i] = Dest::Train;
    } else {
      test_records[r.identity].push_back(i);
    }
  }

  SplitResult out;
  for (const auto& [id, idx] : test_records) {
    std::map<int, std::size_t> first_per_camera;
    for (std::size_t i : idx) first_per_camera.emplace(manifest.records[i].camera, i);
    if (first_per_camera.size() < 2) {
      out.warnings.push_back("identity " + std::to_string(id) + " has a single camera; excluded from query");
      continue;
    }
    std::vector<std::size_t> picks;
    for (const auto& [cam, i] : first_per_camera) picks.push_back(i);
    // Keep one image in the gallery when every image would become a query.
    if (picks.size() == idx.size()) picks.pop_back();
    for (std::size_t i : picks) dest[i] = Dest::Query;
  }

  for (DatasetManifest* m : {&out.train, &out.query, &out.gallery}) {
    m->dataset_id = manifest.dataset_id;
    m->base_dir = manifest.base_dir;
  }
  out.train.split = Split::Train;
  out.query.split = Split::Query;
  out.gallery.split = Split::Gallery;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    switch (dest[i]) {
      case Dest::Train: out.train.records.push_back(manifest.records[i]); break;
      case Dest::Query: out.query.records.push_back(manifest.records[i]); break;
      case Dest::Gallery: out.gallery.records.push_back(manifest.records[i]); break;
    }
  }
  return out;
}

void write_split(const fs::path& dir, const SplitResult& split) {
  write_manifest(dir / kTrainManifest, split.train);
  write_manifest(dir / kQueryManifest, split.query);
  write_manifest(dir / kGalleryManifest, split.gallery);
}

std::vector<fs::path> TaskStream::seen() const {
  std::vector<fs::path> out;
  for (const TaskStreamEntry& e : entries) {
    if (e.seen) out.push_back(e.dir);
  }
  return out;
}

std::vector<fs::path> TaskStream::unseen() const {
  std::vector<fs::path> out;
  for (const TaskStreamEntry& e : entries) {
    if (!e.seen) out.push_back(e.dir);
  }
  return out;
}

namespace {

void validate_stream(const TaskStream& s, const std::string& src) {
  if (s.seen().empty()) throw ValidationError(src + ": task stream has no seen dataset");
  std::set<std::string> all_dirs;
  for (const TaskStreamEntry& e : s.entries) {
    const std::string key = e.dir.lexically_normal().generic_string();
    if (!all_dirs.insert(key).second) throw ValidationError(src + ": dataset listed twice: " + key);
  }
}

}  // namespace

void write_task_stream(const fs::path& path, const TaskStream& stream) {
  validate_stream(stream, path.string());
  const fs::path base = normalized_dir(path.parent_path());
  std::ostringstream out;
  out << kStreamMagic << " v" << stream.version << '\n';
  for (const TaskStreamEntry& e : stream.entries) {
    fs::path p = e.dir;
    if (p.is_absolute()) {
      const fs::path rel = p.lexically_normal().lexically_relative(base);
      if (!rel.empty()) p = rel;
    }
    out << (e.seen ? "seen" : "unseen") << '\t' << p.generic_string() << '\n';
  }
  write_file_atomic(path, out.str());
}

TaskStream load_task_stream(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task stream " + path.string());
  const std::string src = path.string();
  TaskStream s;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(src, 1, "missing header line");
  {
    std::istringstream hs(strip_cr(line));
    std::string hash, magic, version;
    hs >> hash >> magic >> version;
    if (hash + " " + magic != kStreamMagic) throw ParseError(src, 1, "not a task stream header");
    if (version != "v1") throw ParseError(src, 1, "unsupported task stream version '" + version + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2 || fields[1].empty()) throw ParseError(src, lineno, "expected '<seen|unseen><TAB><dir>'");
    TaskStreamEntry e;
    if (fields[0] == "seen") {
      e.seen = true;
    } else if (fields[0] == "unseen") {
      e.seen = false;
    } else {
      throw ParseError(src, lineno, "tag must be 'seen' or 'unseen'");
    }
    const fs::path p(fields[1]);
    e.dir = p.is_absolute() ? p : (path.parent_path() / p).lexically_normal();
    s.entries.push_back(std::move(e));
  }
  validate_stream(s, src);
  return s;
}

}  // namespace dcr::data

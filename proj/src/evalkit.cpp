// SPDX-License-Identifier: Apache-2.0
#include "dcr/evalkit.hpp"

#include "dcr/checkpoint.hpp"
#include "dcr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dcr::eval {

namespace {

RetrievalFeature normalized(Eigen::RowVectorXd v) {
  const double n = v.norm();
  if (!(n > 1e-12)) throw DegenerateInput("retrieval feature has zero norm");
  return {v / n};
}

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace

RetrievalFeature extract_feature(const ForwardValues& values, FeatureMode mode) {
  const Eigen::RowVectorXd g = values.g.colwise().mean();
  if (mode == FeatureMode::GlobalMean) return normalized(g);
  const Eigen::RowVectorXd a = values.ag.colwise().mean();
  Eigen::RowVectorXd both(g.size() + a.size());
  both << g, a;
  return normalized(both);
}

RetrievalFeature extract_feature(DcrModel& model, const ImageTensor& img, const TextInput& text, FeatureMode mode) {
  return extract_feature(model.evaluate(img, text), mode);
}

RetrievalFeature extract_feature(DcrModel& model, const lifelong::DataSample& sample, FeatureMode mode) {
  return extract_feature(model, preprocess(*sample.image), make_text_input(sample.prediction, model.config().atg),
                         mode);
}

std::vector<int> rank_gallery(const RetrievalFeature& query, std::span<const RetrievalFeature> gallery) {
  if (gallery.empty()) throw NoValidGallery("empty gallery");
  std::vector<double> sim(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].vec.size() != query.vec.size()) throw InvalidInput("rank_gallery: feature size mismatch");
    sim[i] = query.vec.dot(gallery[i].vec);
  }
  std::vector<int> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sim[static_cast<std::size_t>(a)] > sim[static_cast<std::size_t>(b)];
  });
  return order;
}

std::vector<int> rank_gallery(const EvalItem& query, std::span<const EvalItem> gallery) {
  std::vector<int> keep;
  std::vector<RetrievalFeature> feats;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const EvalItem& g = gallery[i];
    if (g.identity == query.identity && g.camera == query.camera) continue;
    keep.push_back(static_cast<int>(i));
    feats.push_back(g.feature);
  }
  if (keep.empty()) throw NoValidGallery("no gallery entry remains after same-camera exclusion");
  std::vector<int> order = rank_gallery(query.feature, feats);
  for (int& o : order) o = keep[static_cast<std::size_t>(o)];
  return order;
}

std::optional<double> average_precision(const std::vector<bool>& ranked_relevance) {
  double hits = 0.0, acc = 0.0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (!ranked_relevance[r]) continue;
    hits += 1.0;
    acc += hits / static_cast<double>(r + 1);
  }
  if (hits == 0.0) return std::nullopt;
  return acc / hits;
}

DatasetResult evaluate_features(const std::string& dataset_id, std::span<const EvalItem> query,
                                std::span<const EvalItem> gallery, int cmc_depth) {
  if (cmc_depth < 1) throw InvalidInput("cmc depth must be positive");
  DatasetResult res;
  res.dataset_id = dataset_id;
  res.cmc.assign(static_cast<std::size_t>(cmc_depth), 0.0);
  double ap_sum = 0.0;
  for (const EvalItem& q : query) {
    std::vector<int> order;
    try {
      order = rank_gallery(q, gallery);
    } catch (const NoValidGallery&) {
      ++res.skipped;
      continue;
    }
    std::vector<bool> rel(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rel[r] = gallery[static_cast<std::size_t>(order[r])].identity == q.identity;
    const auto ap = average_precision(rel);
    if (!ap) {
      ++res.skipped;
      continue;
    }
    ap_sum += *ap;
    ++res.n_queries;
    const auto first = static_cast<std::size_t>(std::find(rel.begin(), rel.end(), true) - rel.begin());
    for (std::size_t k = first; k < res.cmc.size(); ++k) res.cmc[k] += 1.0;
  }
  if (res.n_queries > 0) {
    res.map = ap_sum / res.n_queries;
    for (double& c : res.cmc) c /= res.n_queries;
  }
  res.rank1 = res.cmc[0];
  return res;
}

std::vector<EvalItem> featurize(DcrModel& model, std::span<const lifelong::DataSample> samples, FeatureMode mode) {
  std::vector<EvalItem> out;
  out.reserve(samples.size());
  for (const lifelong::DataSample& s : samples) out.push_back({extract_feature(model, s, mode), s.identity, s.camera});
  return out;
}

DatasetResult evaluate_dataset(DcrModel& model, const std::string& dataset_id,
                               std::span<const lifelong::DataSample> query,
                               std::span<const lifelong::DataSample> gallery, FeatureMode mode, int cmc_depth) {
  std::set<std::string> keys;
  for (const auto& s : gallery) keys.insert(s.key);
  for (const auto& s : query) {
    if (!s.key.empty() && keys.count(s.key)) throw InvalidInput("query image " + s.key + " is also in the gallery");
  }
  const auto q = featurize(model, query, mode);
  const auto g = featurize(model, gallery, mode);
  return evaluate_features(dataset_id, q, g, cmc_depth);
}

EvalSet load_eval_set(const data::Dataset& ds, const attr::AttributePredictor& predictor) {
  return {ds.id, lifelong::load_samples(ds.query, predictor), lifelong::load_samples(ds.gallery, predictor)};
}

EvalReport aggregate_report(const std::map<std::string, DatasetResult>& results, std::span<const std::string> seen,
                            std::span<const std::string> unseen) {
  EvalReport rep;
  auto group = [&](std::span<const std::string> ids, std::vector<std::string>& names) -> std::optional<Average> {
    if (ids.empty()) return std::nullopt;
    Average avg;
    for (const std::string& id : ids) {
      const auto it = results.find(id);
      if (it == results.end()) throw InvalidInput("no evaluation result for dataset " + id);
      avg.map += it->second.map;
      avg.rank1 += it->second.rank1;
      rep.rows.push_back(it->second);
      names.push_back(id);
    }
    avg.map /= static_cast<double>(ids.size());
    avg.rank1 /= static_cast<double>(ids.size());
    return avg;
  };
  rep.seen_avg = group(seen, rep.seen);
  rep.unseen_avg = group(unseen, rep.unseen);
  return rep;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  auto avg_line = [&](const char* name, const std::optional<Average>& a) {
    if (!a) return;
    out << name << "_map=" << fmt(a->map, 6) << '\n' << name << "_rank1=" << fmt(a->rank1, 6) << '\n';
  };
  out << "datasets=" << report.rows.size() << '\n';
  avg_line("seen_avg", report.seen_avg);
  avg_line("unseen_avg", report.unseen_avg);
  out << '\n' << "dataset\tgroup\tmap\trank1\tqueries\tskipped\n";
  for (const DatasetResult& r : report.rows) {
    const bool is_seen = std::find(report.seen.begin(), report.seen.end(), r.dataset_id) != report.seen.end();
    out << r.dataset_id << '\t' << (is_seen ? "seen" : "unseen") << '\t' << fmt(r.map, 6) << '\t' << fmt(r.rank1, 6)
        << '\t' << r.n_queries << '\t' << r.skipped << '\n';
  }
  if (report.seen_avg) out << "seen_avg\tseen\t" << fmt(report.seen_avg->map, 6) << '\t' << fmt(report.seen_avg->rank1, 6) << "\t-\t-\n";
  if (report.unseen_avg) {
    out << "unseen_avg\tunseen\t" << fmt(report.unseen_avg->map, 6) << '\t' << fmt(report.unseen_avg->rank1, 6)
        << "\t-\t-\n";
  }
  return out.str();
}

namespace {

ckpt::Checkpoint load_step(const std::filesystem::path& path, std::size_t step) {
  if (!std::filesystem::exists(path)) {
    throw IoError("checkpoint for step " + std::to_string(step) + " not found: " + path.string());
  }
  return ckpt::load_checkpoint(path);
}

}  // namespace

std::vector<CurveRow> forgetting_curve(std::span<const std::filesystem::path> checkpoints, const EvalSet& probe,
                                       FeatureMode mode) {
  if (checkpoints.empty()) throw InvalidInput("forgetting_curve needs at least one checkpoint");
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    ckpt::Checkpoint ck = load_step(checkpoints[i], i + 1);
    const DatasetResult r = evaluate_dataset(ck.model, probe.dataset_id, probe.query, probe.gallery, mode);
    rows.push_back({static_cast<int>(i) + 1, r.map, r.rank1});
  }
  return rows;
}

std::vector<CurveRow> generalization_curve(std::span<const std::filesystem::path> checkpoints,
                                           std::span<const EvalSet> probes, FeatureMode mode) {
  if (checkpoints.empty()) throw InvalidInput("generalization_curve needs at least one checkpoint");
  if (probes.empty()) throw InvalidInput("generalization_curve needs at least one probe dataset");
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    ckpt::Checkpoint ck = load_step(checkpoints[i], i + 1);
    CurveRow row{static_cast<int>(i) + 1, 0.0, 0.0};
    for (const EvalSet& p : probes) {
      const DatasetResult r = evaluate_dataset(ck.model, p.dataset_id, p.query, p.gallery, mode);
      row.map += r.map / static_cast<double>(probes.size());
      row.rank1 += r.rank1 / static_cast<double>(probes.size());
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_curve(std::span<const CurveRow> rows) {
  std::ostringstream out;
  out << "step\tmap\trank1\n";
  for (const CurveRow& r : rows) out << r.step << '\t' << fmt(r.map, 6) << '\t' << fmt(r.rank1, 6) << '\n';
  return out.str();
}

void dump_features(DcrModel& model, std::span<const lifelong::DataSample> samples, const std::filesystem::path& path,
                   FeatureMode mode) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write feature dump " + path.string());
  for (const lifelong::DataSample& s : samples) {
    const RetrievalFeature f = extract_feature(model, s, mode);
    out << s.dataset_id << '\t' << s.identity << '\t' << s.camera << '\t';
    for (Eigen::Index i = 0; i < f.vec.size(); ++i) out << (i ? "," : "") << fmt(f.vec(i), 6);
    out << '\n';
  }
  if (!out) throw IoError("write failed for feature dump " + path.string());
}

std::vector<FeatureRecord> read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature dump " + path.string());
  std::vector<FeatureRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    FeatureRecord r;
    std::string id, cam, vals;
    if (!std::getline(ls, r.dataset_id, '\t') || !std::getline(ls, id, '\t') || !std::getline(ls, cam, '\t') ||
        !std::getline(ls, vals)) {
      throw ParseError(path.string(), lineno, "expected 4 tab-separated fields");
    }
    try {
      r.identity = std::stoi(id);
      r.camera = std::stoi(cam);
      std::istringstream vs(vals);
      std::string tok;
      while (std::getline(vs, tok, ',')) r.values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "malformed number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dcr::eval

// SPDX-License-Identifier: Apache-2.0
#include "dcr/attribute_text.hpp"

#include "dcr/errors.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace dcr::attr {

namespace {

const char* const kGroupNames[kNumGroups] = {"overall", "upper body", "lower body", "decoration"};

std::string join_phrases(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
    out += items[i];
  }
  return out;
}

bool is_bag(std::size_t index) {
  return index == kHandbag || index == kShoulderBag || index == kBackpack;
}

}  // namespace

const AttributeSchema& AttributeSchema::standard() {
  static const AttributeSchema schema = [] {
    AttributeSchema s;
    s.version = 1;
    s.groups.assign(std::begin(kGroupNames), std::end(kGroupNames));
    s.categories = {
        {"Sex", Group::Overall, "man", "woman", "woman"},
        {"Short sleeved top", Group::UpperBody, "No", "Yes", "a short sleeved top"},
        {"Long sleeved top", Group::UpperBody, "No", "Yes", "a long sleeved top"},
        {"Long coat", Group::UpperBody, "No", "Yes", "a long coat"},
        {"Trousers", Group::LowerBody, "No", "Yes", "trousers"},
        {"Shorts", Group::LowerBody, "No", "Yes", "shorts"},
        {"Skirt", Group::LowerBody, "No", "Yes", "a skirt"},
        {"Hat", Group::Decoration, "No", "Yes", "a hat"},
        {"Glasses", Group::Decoration, "No", "Yes", "glasses"},
        {"Handbag", Group::Decoration, "No", "Yes", "a handbag"},
        {"Shoulder bag", Group::Decoration, "No", "Yes", "a shoulder bag"},
        {"Backpack", Group::Decoration, "No", "Yes", "a backpack"},
    };
    return s;
  }();
  return schema;
}

void AttributeSchema::validate() const {
  if (groups.size() != kNumGroups) throw SchemaMismatch("schema must have exactly 4 groups");
  if (categories.size() != kNumAttributes) {
    throw SchemaMismatch("schema must have exactly 12 categories");
  }
  std::set<std::string> names;
  int overall = 0;
  for (const CategoryDescriptor& c : categories) {
    const auto g = static_cast<std::size_t>(c.group);
    if (g >= kNumGroups) throw SchemaMismatch("category '" + c.name + "' has no valid group");
    if (!names.insert(c.name).second) throw SchemaMismatch("duplicate category '" + c.name + "'");
    if (c.group == Group::Overall) ++overall;
  }
  if (overall != 1 || categories[kSex].group != Group::Overall || categories[kSex].name != "Sex") {
    throw SchemaMismatch("'Sex' must be the only overall category");
  }
}

std::optional<std::size_t> AttributeSchema::index_of(const std::string& category) const {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i].name == category) return i;
  }
  return std::nullopt;
}

std::string serialize_schema(const AttributeSchema& schema) {
  std::ostringstream out;
  out << "attribute-schema\t" << schema.version << '\n';
  for (const std::string& g : schema.groups) out << "group\t" << g << '\n';
  for (const CategoryDescriptor& c : schema.categories) {
    out << "category\t" << c.name << '\t' << schema.groups[static_cast<std::size_t>(c.group)]
        << '\t' << c.label_no << '\t' << c.label_yes << '\t' << c.phrase << '\n';
  }
  return out.str();
}

AttributeSchema parse_schema(const std::string& text) {
  AttributeSchema schema;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, '\t');) fields.push_back(f);
    if (!header) {
      if (fields.size() != 2 || fields[0] != "attribute-schema") {
        throw ParseError("schema", line_no, "missing 'attribute-schema' header");
      }
      schema.version = std::stoi(fields[1]);
      header = true;
    } else if (fields[0] == "group" && fields.size() == 2) {
      schema.groups.push_back(fields[1]);
    } else if (fields[0] == "category" && fields.size() == 6) {
      std::size_t g = 0;
      while (g < schema.groups.size() && schema.groups[g] != fields[2]) ++g;
      if (g == schema.groups.size()) throw ParseError("schema", line_no, "unknown group '" + fields[2] + "'");
      schema.categories.push_back({fields[1], static_cast<Group>(g), fields[3], fields[4], fields[5]});
    } else {
      throw ParseError("schema", line_no, "unrecognised line");
    }
  }
  schema.validate();
  return schema;
}

AttributeVector AttributeVector::from_bits(const AttributeBits& bits) {
  AttributeVector av;
  av.values = bits;
  for (std::size_t i = 0; i < kNumAttributes; ++i) av.source_confidences[i] = bits[i] ? 1.0 : 0.5;
  return av;
}

std::array<double, kNumAttributes> AttributeVector::as_reals() const {
  std::array<double, kNumAttributes> out{};
  for (std::size_t i = 0; i < kNumAttributes; ++i) out[i] = values[i] ? 1.0 : 0.0;
  return out;
}

AttributeVector threshold_attributes(const AttributePrediction& pred, const ThresholdOptions& options,
                                     const AttributeSchema& schema) {
  if (!(options.threshold >= 0.0 && options.threshold <= 1.0)) {
    throw InvalidInput("threshold must lie in [0, 1]");
  }
  if (pred.scores.size() != schema.categories.size()) {
    throw SchemaMismatch("prediction does not cover exactly the schema categories");
  }
  AttributeVector av;
  av.threshold = options.threshold;
  for (std::size_t i = 0; i < schema.categories.size(); ++i) {
    const auto it = pred.scores.find(schema.categories[i].name);
    if (it == pred.scores.end()) {
      throw SchemaMismatch("prediction is missing category '" + schema.categories[i].name + "'");
    }
    const double s = it->second;
    if (std::isnan(s)) throw InvalidInput("NaN confidence for '" + it->first + "'");
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw InvalidInput("confidence out of [0, 1] for '" + it->first + "'");
    }
    av.source_confidences[i] = s;
    av.values[i] = s >= options.threshold;
  }
  if (options.lower_body_exclusive) {
    std::optional<std::size_t> keep;
    for (std::size_t i : {std::size_t{kTrousers}, std::size_t{kShorts}, std::size_t{kSkirt}}) {
      if (!av.values[i]) continue;
      if (!keep || av.source_confidences[i] > av.source_confidences[*keep]) keep = i;
    }
    for (std::size_t i : {std::size_t{kTrousers}, std::size_t{kShorts}, std::size_t{kSkirt}}) {
      av.values[i] = keep.has_value() && i == *keep;
    }
  }
  return av;
}

TextDescription render_text(const AttributeVector& av, const AttributeSchema& schema) {
  std::string subject = "a person";
  if (av.values[kSex]) {
    subject = "a " + schema.categories[kSex].label_yes;
  } else if (av.source_confidences[kSex] <= 1.0 - av.threshold) {
    subject = "a " + schema.categories[kSex].label_no;
  }

  std::vector<std::string> clothing;
  std::vector<std::string> decoration;
  bool only_bags = true;
  for (std::size_t i = 0; i < schema.categories.size(); ++i) {
    if (!av.values[i]) continue;
    const CategoryDescriptor& c = schema.categories[i];
    if (c.group == Group::UpperBody || c.group == Group::LowerBody) {
      clothing.push_back(c.phrase);
    } else if (c.group == Group::Decoration) {
      decoration.push_back(c.phrase);
      only_bags = only_bags && is_bag(i);
    }
  }

  std::string text = "A photo of " + subject + " wearing ";
  text += clothing.empty() ? std::string("clothes") : join_phrases(clothing);
  if (decoration.empty()) {
    text += " with no accessories";
  } else {
    text += only_bags ? ", carrying " : ", with ";
    text += join_phrases(decoration);
  }
  text += ".";
  return {text};
}

TextDescription generic_text() { return {"A photo of a person"}; }

AttributePrediction prediction_from_bits(const AttributeBits& bits, double yes, double no) {
  AttributePrediction pred;
  const AttributeSchema& schema = AttributeSchema::standard();
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    pred.scores[schema.categories[i].name] = bits[i] ? yes : no;
  }
  return pred;
}

AttributePrediction AnnotationPredictor::predict(std::span<const unsigned char>, int, int,
                                                 const std::optional<AttributeBits>& annotation) const {
  if (!annotation) throw InvalidInput("annotation predictor needs annotated attributes");
  return prediction_from_bits(*annotation);
}

}  // namespace dcr::attr

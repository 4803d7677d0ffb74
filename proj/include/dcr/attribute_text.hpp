// SPDX-License-Identifier: Apache-2.0
//
// Attribute-text generation: pedestrian attribute scores are thresholded into
// a 12-bit attribute vector and rendered into a fixed caption template.
#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcr::attr {

inline constexpr std::size_t kNumAttributes = 12;
inline constexpr std::size_t kNumGroups = 4;
inline constexpr int kTemplateVersion = 1;
inline constexpr double kDefaultThreshold = 0.8;

enum class Group { Overall = 0, UpperBody = 1, LowerBody = 2, Decoration = 3 };

/// Schema indices, in canonical order.
enum Category : std::size_t {
  kSex = 0,
  kShortSleevedTop,
  kLongSleevedTop,
  kLongCoat,
  kTrousers,
  kShorts,
  kSkirt,
  kHat,
  kGlasses,
  kHandbag,
  kShoulderBag,
  kBackpack,
};

struct CategoryDescriptor {
  std::string name;
  Group group;
  std::string label_no;   // value label for 0
  std::string label_yes;  // value label for 1
  std::string phrase;     // caption phrase when the category is active
};

struct AttributeSchema {
  int version = 1;
  std::vector<std::string> groups;
  std::vector<CategoryDescriptor> categories;

  /// The 4-group / 12-category pedestrian attribute table.
  static const AttributeSchema& standard();

  /// Throws SchemaMismatch when the structural invariants do not hold.
  void validate() const;
  std::optional<std::size_t> index_of(const std::string& category) const;
};

std::string serialize_schema(const AttributeSchema& schema);
AttributeSchema parse_schema(const std::string& text);

/// Predictor output: one confidence in [0,1] per schema category.
struct AttributePrediction {
  std::map<std::string, double> scores;
};

using AttributeBits = std::array<bool, kNumAttributes>;

struct AttributeVector {
  AttributeBits values{};
  std::array<double, kNumAttributes> source_confidences{};
  /// Threshold the vector was produced with; Sex renders "man" only when the
  /// woman-confidence is at or below 1 - threshold.
  double threshold = kDefaultThreshold;

  /// Vector from bits with no committed negatives (false entries carry 0.5).
  static AttributeVector from_bits(const AttributeBits& bits);

  std::array<double, kNumAttributes> as_reals() const;
  bool operator==(const AttributeVector&) const = default;
};

struct ThresholdOptions {
  double threshold = kDefaultThreshold;
  bool lower_body_exclusive = true;
};

AttributeVector threshold_attributes(const AttributePrediction& pred,
                                     const ThresholdOptions& options = {},
                                     const AttributeSchema& schema = AttributeSchema::standard());

struct TextDescription {
  std::string text;
  bool operator==(const TextDescription&) const = default;
};

TextDescription render_text(const AttributeVector& av,
                            const AttributeSchema& schema = AttributeSchema::standard());

/// Attribute-free caption used when attribute text generation is ablated.
TextDescription generic_text();

/// Source of attribute scores for an instance.
class AttributePredictor {
 public:
  virtual ~AttributePredictor() = default;
  /// `annotation` carries manifest attributes when the data provides them.
  virtual AttributePrediction predict(std::span<const unsigned char> rgb, int height, int width,
                                      const std::optional<AttributeBits>& annotation) const = 0;
};

/// Reads annotated attributes as certain predictions (1.0 / 0.0).
class AnnotationPredictor final : public AttributePredictor {
 public:
  AttributePrediction predict(std::span<const unsigned char> rgb, int height, int width,
                              const std::optional<AttributeBits>& annotation) const override;
};

AttributePrediction prediction_from_bits(const AttributeBits& bits, double yes = 1.0,
                                         double no = 0.0);

}  // namespace dcr::attr

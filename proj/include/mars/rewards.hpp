#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mars {

/// Axis-aligned box in pixel coordinates. Corners are reordered on
/// construction so that x1 <= x2 and y1 <= y2.
class BoundingBox {
 public:
  BoundingBox() = default;
  BoundingBox(double x1, double y1, double x2, double y2);

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double width() const { return x2_ - x1_; }
  double height() const { return y2_ - y1_; }
  double area() const { return width() * height(); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x1_ = 0.0, y1_ = 0.0, x2_ = 0.0, y2_ = 0.0;
};

/// Result of matching a raw completion against the think/answer template.
/// Both text fields are empty unless `well_formed`.
struct ParsedResponse {
  std::string think_text;
  std::string answer_text;
  bool well_formed = false;
};

struct RewardBreakdown {
  double task_reward = 0.0;
  double format_reward = 0.0;
  double total = 0.0;
};

struct RewardOptions {
  double format_weight = 1.0;
  // Salvage the answer region of malformed responses for the task term.
  bool lenient = false;
};

/// Largest ground-truth object count accepted by mean_iou.
inline constexpr std::size_t kMaxGroundTruthObjects = 8;

double iou(const BoundingBox& a, const BoundingBox& b);

/// Average IoU over the K gold boxes under the prediction-to-gold assignment
/// that maximizes total IoU. Unmatched gold boxes count as 0.
/// Throws std::invalid_argument on empty gold or K > kMaxGroundTruthObjects.
double mean_iou(std::span<const BoundingBox> pred, std::span<const BoundingBox> gold);

ParsedResponse parse_response(std::string_view raw);

/// Parses `[[x1,y1,x2,y2], ...]`. Anything else yields an empty list.
std::vector<BoundingBox> parse_boxes(std::string_view text);

/// Case-fold, trim and collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view text);

double accuracy_reward(const ParsedResponse& response, std::string_view ground_truth);
double format_reward(std::string_view raw, double format_weight = 1.0);

RewardBreakdown grounding_reward(std::string_view raw, std::span<const BoundingBox> gold,
                                 const RewardOptions& options = {});
RewardBreakdown vqa_reward(std::string_view raw, std::string_view ground_truth,
                           const RewardOptions& options = {});

}  // namespace mars

#include "mars/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace mars {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool contains_tag(std::string_view s) {
  for (std::string_view tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
    if (s.find(tag) != std::string_view::npos) return true;
  }
  return false;
}

// Content of the first <answer>...</answer> region anywhere in `raw`, or the
// whole text when there is none.
std::string_view salvage_answer(std::string_view raw) {
  const auto open = raw.find(kAnswerOpen);
  if (open == std::string_view::npos) return raw;
  const auto body = open + kAnswerOpen.size();
  const auto close = raw.find(kAnswerClose, body);
  if (close == std::string_view::npos) return raw.substr(body);
  return raw.substr(body, close - body);
}

std::string_view task_text(std::string_view raw, const ParsedResponse& parsed,
                           const RewardOptions& options) {
  if (parsed.well_formed) return parsed.answer_text;
  if (options.lenient) return salvage_answer(raw);
  return {};
}

RewardBreakdown combine(double task, double format) {
  return {task, format, task + format};
}

}  // namespace

BoundingBox::BoundingBox(double x1, double y1, double x2, double y2)
    : x1_(std::min(x1, x2)), y1_(std::min(y1, y2)), x2_(std::max(x1, x2)), y2_(std::max(y1, y2)) {}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double mean_iou(std::span<const BoundingBox> pred, std::span<const BoundingBox> gold) {
  if (gold.empty()) throw std::invalid_argument("no ground-truth objects");
  const std::size_t k = gold.size();
  if (k > kMaxGroundTruthObjects) {
    throw std::invalid_argument("too many ground-truth objects for exact matching: " +
                                std::to_string(k));
  }
  // best[mask]: largest total IoU using the predictions seen so far, with the
  // gold boxes in `mask` matched. Each prediction matches at most one gold box.
  const std::size_t masks = std::size_t{1} << k;
  constexpr double kUnreachable = -std::numeric_limits<double>::infinity();
  std::vector<double> best(masks, kUnreachable);
  best[0] = 0.0;
  for (const BoundingBox& p : pred) {
    std::vector<double> next = best;
    for (std::size_t mask = 0; mask < masks; ++mask) {
      if (best[mask] == kUnreachable) continue;
      for (std::size_t g = 0; g < k; ++g) {
        if (mask & (std::size_t{1} << g)) continue;
        const std::size_t to = mask | (std::size_t{1} << g);
        next[to] = std::max(next[to], best[mask] + iou(p, gold[g]));
      }
    }
    best = std::move(next);
  }
  const double total = *std::max_element(best.begin(), best.end());
  return total / static_cast<double>(k);
}

ParsedResponse parse_response(std::string_view raw) {
  std::string_view s = trim(raw);
  if (!s.starts_with(kThinkOpen)) return {};
  s.remove_prefix(kThinkOpen.size());
  const auto think_end = s.find(kThinkClose);
  if (think_end == std::string_view::npos) return {};
  const std::string_view think = s.substr(0, think_end);
  s = trim(s.substr(think_end + kThinkClose.size()));
  if (!s.starts_with(kAnswerOpen)) return {};
  s.remove_prefix(kAnswerOpen.size());
  const auto answer_end = s.find(kAnswerClose);
  if (answer_end == std::string_view::npos) return {};
  const std::string_view answer = s.substr(0, answer_end);
  if (!trim(s.substr(answer_end + kAnswerClose.size())).empty()) return {};
  if (contains_tag(think) || contains_tag(answer)) return {};
  return {std::string(think), std::string(answer), true};
}

std::vector<BoundingBox> parse_boxes(std::string_view text) {
  const auto doc = nlohmann::json::parse(text.begin(), text.end(), nullptr,
                                         /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_array()) return {};
  std::vector<BoundingBox> boxes;
  boxes.reserve(doc.size());
  for (const auto& item : doc) {
    if (!item.is_array() || item.size() != 4) return {};
    double c[4];
    for (int i = 0; i < 4; ++i) {
      if (!item[i].is_number()) return {};
      c[i] = item[i].get<double>();
      if (!std::isfinite(c[i])) return {};
    }
    boxes.emplace_back(c[0], c[1], c[2], c[3]);
  }
  return boxes;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : trim(text)) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

double accuracy_reward(const ParsedResponse& response, std::string_view ground_truth) {
  const std::string gt = normalize_answer(ground_truth);
  if (gt.empty()) return 0.0;
  return normalize_answer(response.answer_text).find(gt) != std::string::npos ? 1.0 : 0.0;
}

double format_reward(std::string_view raw, double format_weight) {
  return parse_response(raw).well_formed ? format_weight : 0.0;
}

RewardBreakdown grounding_reward(std::string_view raw, std::span<const BoundingBox> gold,
                                 const RewardOptions& options) {
  if (gold.empty()) throw std::invalid_argument("no ground-truth objects");
  const ParsedResponse parsed = parse_response(raw);
  const auto boxes = parse_boxes(task_text(raw, parsed, options));
  const double task = mean_iou(boxes, gold);
  return combine(task, parsed.well_formed ? options.format_weight : 0.0);
}

RewardBreakdown vqa_reward(std::string_view raw, std::string_view ground_truth,
                           const RewardOptions& options) {
  const ParsedResponse parsed = parse_response(raw);
  ParsedResponse view;
  view.answer_text = std::string(task_text(raw, parsed, options));
  const double task = accuracy_reward(view, ground_truth);
  return combine(task, parsed.well_formed ? options.format_weight : 0.0);
}

}  // namespace mars

#include "cmatch/metrics.hpp"

#include <numeric>
#include <sstream>

#include "cmatch/error.hpp"

namespace cmatch {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction and ground truth shapes differ");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const std::uint64_t uni = c.tp + c.fp + c.fn;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(uni);
}

double mean_iou(const std::vector<std::pair<std::string, double>>& per_class) {
  if (per_class.empty()) throw Error(ErrorKind::kEmptyInput, "mean IoU of no classes");
  double sum = 0.0;
  for (const auto& [name, value] : per_class) sum += value;
  return sum / static_cast<double>(per_class.size());
}

double fb_iou(const BinaryMask& pred, const BinaryMask& gt) {
  const double fg = iou(confusion_counts(pred, gt));
  const double bg = iou(confusion_counts(pred.inverted(), gt.inverted()));
  return 0.5 * (fg + bg);
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << "# per-class IoU is macro-averaged over episodes\n";
  os << "iou_fg = " << fmt(iou_fg) << "\n";
  os << "iou_bg = " << fmt(iou_bg) << "\n";
  os << "fbiou = " << fmt(fbiou) << "\n";
  os << "miou = " << fmt(miou) << "\n";
  for (const auto& [name, value] : per_class) os << "iou_" << name << " = " << fmt(value) << "\n";
  return os.str();
}

MetricReport evaluate_episode(const BinaryMask& pred, const BinaryMask& gt,
                              const std::string& class_id) {
  MetricReport r;
  r.iou_fg = iou(confusion_counts(pred, gt));
  r.iou_bg = iou(confusion_counts(pred.inverted(), gt.inverted()));
  r.fbiou = 0.5 * (r.iou_fg + r.iou_bg);
  r.per_class[class_id] = r.iou_fg;
  r.miou = r.iou_fg;
  return r;
}

void MetricAccumulator::add(const std::string& class_id, const BinaryMask& pred,
                            const BinaryMask& gt) {
  add(class_id, evaluate_episode(pred, gt, class_id));
}

void MetricAccumulator::add(const std::string& class_id, const MetricReport& episode) {
  class_iou_[class_id].push_back(episode.iou_fg);
  fbiou_.push_back(episode.fbiou);
}

std::map<std::string, double> MetricAccumulator::per_class_iou() const {
  std::map<std::string, double> out;
  for (const auto& [name, values] : class_iou_) {
    out[name] = std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(values.size());
  }
  return out;
}

double MetricAccumulator::miou() const {
  const auto per_class = per_class_iou();
  return mean_iou({per_class.begin(), per_class.end()});
}

}  // namespace cmatch

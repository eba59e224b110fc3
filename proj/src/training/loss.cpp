#include <cmath>
#include <sstream>

#include "fbd/ops.hpp"
#include "fbd/training.hpp"

namespace fbd {

const char* loss_variant_name(LossVariant v) { return v == LossVariant::Paper ? "paper" : "bounded"; }

LossVariant loss_variant_from_name(const std::string& name) {
  if (name == "paper") return LossVariant::Paper;
  if (name == "bounded") return LossVariant::Bounded;
  throw UsageError("unknown loss variant '" + name + "' (expected paper or bounded)");
}

template <typename T>
Tensor<T> soft_dice(const Tensor<T>& pred, const Tensor<T>& target, double epsilon) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("soft_dice: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  const T eps = static_cast<T>(epsilon);
  const Tensor<T> inter = ops::channel_sum(ops::mul(pred, target));
  const Tensor<T> denom = ops::add_scalar(ops::add(ops::channel_sum(pred), ops::channel_sum(target)), eps);
  return ops::div(ops::add_scalar(ops::mul_scalar(inter, T(2)), eps), denom);
}

double LossBreakdown::mean_dice(Task task) const {
  const std::vector<double>* d = task == Task::Tissue ? &dice_sg : task == Task::Tract ? &dice_tr : &dice_pc;
  double sum = 0;
  int n = 0;
  for (std::size_t i = (background && task != Task::Tract) ? 1 : 0; i < d->size(); ++i) {
    if (task == Task::Tract && i < m_tr.size() && !m_tr[i]) continue;
    sum += (*d)[i];
    ++n;
  }
  return n ? sum / n : std::nan("");
}

double LossBreakdown::parts_sum() const {
  double s = reg_sg + reg_tr + reg_pc;
  for (const auto* v : {&terms_sg, &terms_tr, &terms_pc})
    for (double t : *v) s += t;
  return s;
}

std::string LossBreakdown::describe() const {
  std::ostringstream out;
  out.precision(9);
  out << "total=" << total << "\n";
  auto dump = [&](const char* name, const std::vector<double>& dice, const std::vector<double>& terms, double reg) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      out << name << "[" << i << "] dsc=" << dice[i] << " term=" << terms[i] << "\n";
    }
    out << name << " regularizer=" << reg << "\n";
  };
  dump("sg", dice_sg, terms_sg, reg_sg);
  dump("tr", dice_tr, terms_tr, reg_tr);
  dump("pc", dice_pc, terms_pc, reg_pc);
  return out.str();
}

namespace {

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace

template <typename T>
LossResult<T> mtl_loss(const CascadeOutput<T>& output, const TrainingPatch<T>& targets, const Tensor<T>& w,
                       const ModelConfig& config, const LossOptions& options) {
  if (w.ndim() != 1 || w.size() != config.w_length()) {
    throw ShapeError("task weights have shape " + shape_str(w.shape()) + ", expected [" +
                     std::to_string(config.w_length()) + "]");
  }
  LossResult<T> result;
  result.breakdown.background = config.dice_background;
  std::vector<Tensor<T>> parts;
  for (Task task : config.tasks) {
    const Tensor<T>* pred = nullptr;
    const Tensor<T>* target = nullptr;
    switch (task) {
      case Task::Tissue: pred = &output.y_sg; target = &targets.y_sg; break;
      case Task::Tract: pred = &output.y_tr; target = &targets.y_tr; break;
      case Task::Parcellation: pred = &output.y_pc; target = &targets.y_pc; break;
    }
    if (!pred->defined() || !target->defined()) {
      throw ShapeError(std::string("missing prediction or target for task ") + task_name(task));
    }
    const int labels = config.dice_count(task);
    const bool softmax = task != Task::Tract;
    Tensor<T> dice = soft_dice(*pred, *target, options.epsilon);
    // Softmax outputs carry the background in channel 0.
    if (softmax && !config.dice_background) dice = ops::slice(dice, 1, labels);
    if (dice.size() != labels) {
      throw ShapeError(std::string("task ") + task_name(task) + ": " + std::to_string(dice.size()) +
                       " Dice labels but " + std::to_string(labels) + " task weights");
    }
    const Tensor<T> wt = ops::slice(w, config.w_offset(task), labels);
    const Tensor<T> scale = ops::exp(ops::neg(wt));
    Tensor<T> terms = options.variant == LossVariant::Paper
                          ? ops::neg(ops::mul(scale, dice))
                          : ops::mul(scale, ops::add_scalar(ops::neg(dice), T(1)));
    Tensor<T> reg = wt;
    std::vector<std::uint8_t> mask;
    if (task == Task::Tract) {
      if (targets.m_tr.size() != static_cast<std::size_t>(labels)) {
        throw ShapeError("tract annotation mask has " + std::to_string(targets.m_tr.size()) + " entries, expected " +
                         std::to_string(labels));
      }
      std::vector<T> m(targets.m_tr.begin(), targets.m_tr.end());
      const Tensor<T> mt(Shape{labels}, std::move(m));
      terms = ops::mul(terms, mt);
      reg = ops::mul(reg, mt);
      mask = targets.m_tr;
    }
    const Tensor<T> reg_sum = ops::sum(reg);
    parts.push_back(ops::sum(terms));
    parts.push_back(reg_sum);

    auto& b = result.breakdown;
    const auto d = to_doubles(dice);
    const auto t = to_doubles(terms);
    switch (task) {
      case Task::Tissue: b.dice_sg = d; b.terms_sg = t; b.reg_sg = reg_sum.item(); break;
      case Task::Tract: b.dice_tr = d; b.terms_tr = t; b.reg_tr = reg_sum.item(); b.m_tr = mask; break;
      case Task::Parcellation: b.dice_pc = d; b.terms_pc = t; b.reg_pc = reg_sum.item(); break;
    }
  }
  Tensor<T> total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = ops::add(total, parts[i]);
  result.total = total;
  result.breakdown.total = total.item();
  return result;
}

template Tensor<float> soft_dice(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> soft_dice(const Tensor<double>&, const Tensor<double>&, double);
template LossResult<float> mtl_loss(const CascadeOutput<float>&, const TrainingPatch<float>&, const Tensor<float>&,
                                    const ModelConfig&, const LossOptions&);
template LossResult<double> mtl_loss(const CascadeOutput<double>&, const TrainingPatch<double>&,
                                     const Tensor<double>&, const ModelConfig&, const LossOptions&);

}  // namespace fbd

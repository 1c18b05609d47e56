#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "seqground/grounder/training.hpp"

namespace seqground::grounder {

json TrainHyper::to_json() const {
  return {{"lr", lr},         {"beta1", beta1}, {"beta2", beta2},
          {"weight_decay", weight_decay}, {"adam_eps", adam_eps},
          {"epochs", epochs}, {"batch", batch}, {"teacher_forcing", teacher_forcing},
          {"mode", std::string(to_string(mode))}};
}

TrainHyper TrainHyper::from_json(const json& doc) {
  TrainHyper h;
  h.lr = doc.value("lr", h.lr);
  h.beta1 = doc.value("beta1", h.beta1);
  h.beta2 = doc.value("beta2", h.beta2);
  h.weight_decay = doc.value("weight_decay", h.weight_decay);
  h.adam_eps = doc.value("adam_eps", h.adam_eps);
  h.epochs = doc.value("epochs", h.epochs);
  h.batch = doc.value("batch", h.batch);
  h.teacher_forcing = doc.value("teacher_forcing", h.teacher_forcing);
  h.mode = doc.value("mode", std::string("full")) == "no-context" ? ContextMode::NoContext : ContextMode::Full;
  return h;
}

namespace {

bool decays(const std::string& name) {
  const auto leaf = name.substr(name.rfind('.') == std::string::npos ? 0 : name.rfind('.') + 1);
  static const std::vector<std::string> exempt = {"ln1_g", "ln1_b", "ln2_g", "ln2_b", "lnf_g", "lnf_b",
                                                  "bo",    "b1",    "b2",    "lm_bias", "gate"};
  return std::find(exempt.begin(), exempt.end(), leaf) == exempt.end();
}

}  // namespace

AdamW::AdamW(const ModelParams& shape, const TrainHyper& hyper)
    : hyper_(hyper), m_(shape.zeros_like()), v_(shape.zeros_like()) {
  shape.for_each([&](const std::string& name, const Matrix&) { decay_.push_back(decays(name)); });
}

void AdamW::step(ModelParams& params, const ModelParams& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  std::vector<Matrix*> ps, ms, vs;
  std::vector<const Matrix*> gs;
  params.for_each([&](const std::string&, Matrix& m) { ps.push_back(&m); });
  m_.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
  v_.for_each([&](const std::string&, Matrix& m) { vs.push_back(&m); });
  grads.for_each([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto& w = ps[t]->data();
    auto& m = ms[t]->data();
    auto& v = vs[t]->data();
    const auto& g = gs[t]->data();
    const double wd = decay_[t] ? hyper_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g[i];
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.adam_eps) + wd * w[i]);
    }
  }
}

std::vector<EpochReport> train_state(GroundingModelState& state, const std::vector<Example>& examples,
                                     const TrainHyper& hyper, const EpochCallback& on_epoch) {
  if (examples.empty()) throw GrounderError(GrounderErrc::EmptyCorpus, "no training examples");
  if (hyper.batch <= 0 || hyper.epochs < 0 || !(hyper.lr > 0.0)) {
    throw GrounderError(GrounderErrc::BadConfig, "batch and lr must be positive");
  }
  AdamW opt(state.params, hyper);
  std::vector<std::size_t> order(examples.size());
  std::vector<EpochReport> curve;
  ModelParams grads = state.params.zeros_like();
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(state.config.seed, 0x7a11000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    EpochReport report{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&examples[order[i]]);
      grads.for_each([](const std::string&, Matrix& m) { m.fill(0.0); });
      const auto l = loss_and_gradient(state, batch, hyper.teacher_forcing, grads);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(examples.size());
      report.mean_loss += w * l.total;
      report.grounding += w * l.grounding;
      report.instruction += w * l.instruction;
      opt.step(state.params, grads);
    }
    if (!std::isfinite(report.mean_loss)) throw GrounderError(GrounderErrc::Divergence, "non-finite epoch loss");
    curve.push_back(report);
    if (on_epoch && !on_epoch(report, state)) break;
  }
  return curve;
}

TrainResult train(const std::vector<scene::SceneGraph>& scenes, const std::vector<taskgen::Task>& tasks,
                  ModelConfig config, const TrainHyper& hyper, const EpochCallback& on_epoch) {
  if (scenes.empty() || tasks.empty()) throw GrounderError(GrounderErrc::EmptyCorpus, "no scenes or tasks to train on");
  std::map<std::string, const scene::SceneGraph*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id()] = &s;
  TrainResult result{GroundingModelState::create(config, Vocabulary::build(tasks), CategoryTable::build(scenes)), {}};
  std::vector<Example> examples;
  for (const auto& task : tasks) {
    auto it = by_id.find(task.scene_id);
    if (it == by_id.end()) {
      throw GrounderError(GrounderErrc::BadConfig, task.task_id + ": unknown scene " + task.scene_id);
    }
    examples.push_back(make_example(result.state, *it->second, task, hyper.mode));
  }
  result.curve = train_state(result.state, examples, hyper, on_epoch);
  return result;
}

}  // namespace seqground::grounder

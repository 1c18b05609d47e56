#include <algorithm>
#include <cmath>

#include "seqground/grounder/training.hpp"

namespace seqground::grounder {

namespace {

struct Beam {
  std::vector<int> tokens;
  double logp = 0.0;
};

std::vector<double> log_softmax(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double lse = 0.0;
  for (double v : row) lse += std::exp(v - peak);
  lse = peak + std::log(lse);
  std::vector<double> out(row.begin(), row.end());
  for (auto& v : out) v -= lse;
  return out;
}

void check_length(const TranscriptEncoding& tr, const GroundingModelState& state) {
  if (static_cast<int>(tr.length()) > state.config.max_seq_len) {
    throw GrounderError(GrounderErrc::StepBudgetExceeded, "decoder ran past max_seq_len without finishing the plan");
  }
}

// Beam search over the words of one step; a beam finishes when it emits GRD.
std::vector<int> decode_step(const GroundingModelState& state, const ObjectTokenSet& objects,
                             const std::vector<int>& prompt, const std::vector<std::vector<int>>& done,
                             const std::vector<int>& preds, int width) {
  std::vector<Beam> alive{Beam{}};
  std::vector<Beam> finished;
  const int V = state.config.vocab_size;
  while (!alive.empty()) {
    std::vector<Beam> next;
    for (const auto& beam : alive) {
      auto steps = done;
      steps.push_back(beam.tokens);
      const auto tr = layout_transcript(prompt, steps, ContextMode::Full, true, false);
      check_length(tr, state);
      const auto out = forward(state, objects, tr, preds, true);
      const auto lp = log_softmax(out.vocab_logits.row(tr.length() - 1));
      for (int t = 0; t < V; ++t) {
        const bool word = t >= Vocabulary::kNumSpecial;
        const bool grd = t == Vocabulary::kGrd && !beam.tokens.empty();
        if (!word && !grd) continue;
        Beam b{beam.tokens, beam.logp + lp[static_cast<std::size_t>(t)]};
        if (grd) {
          finished.push_back(std::move(b));
        } else {
          b.tokens.push_back(t);
          next.push_back(std::move(b));
        }
      }
    }
    auto by_score = [](const Beam& a, const Beam& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      return a.tokens < b.tokens;
    };
    std::sort(next.begin(), next.end(), by_score);
    if (next.size() > static_cast<std::size_t>(width)) next.resize(static_cast<std::size_t>(width));
    std::sort(finished.begin(), finished.end(), by_score);
    if (finished.size() > static_cast<std::size_t>(width)) finished.resize(static_cast<std::size_t>(width));
    // Scores only fall as beams grow, so no live beam can overtake a finished one it trails.
    if (!finished.empty() && (next.empty() || finished.front().logp >= next.front().logp)) break;
    alive = std::move(next);
  }
  if (finished.empty()) throw GrounderError(GrounderErrc::StepBudgetExceeded, "no step terminator decoded");
  return finished.front().tokens;
}

GroundingOutput plan_and_ground(const GroundingModelState& state, const ObjectTokenSet& objects,
                                const taskgen::Task& task, int width) {
  if (width <= 0) throw GrounderError(GrounderErrc::BadConfig, "beam width must be positive");
  const auto prompt = state.vocab.encode(task.description);
  std::vector<std::vector<int>> steps;
  std::vector<int> preds;
  GroundingOutput out;
  while (static_cast<int>(steps.size()) < state.config.max_steps) {
    steps.push_back(decode_step(state, objects, prompt, steps, preds, width));
    const auto tr = layout_transcript(prompt, steps, ContextMode::Full, false, false);
    check_length(tr, state);
    out = forward(state, objects, tr, preds, true);
    preds.push_back(out.predicted.back());
    const auto last = out.vocab_logits.row(tr.length() - 1);
    const auto next = std::max_element(last.begin(), last.end()) - last.begin();
    if (next == Vocabulary::kEos) break;
  }
  out.predicted = preds;
  for (const auto& s : steps) out.step_texts.push_back(state.vocab.decode(s));
  return out;
}

}  // namespace

GroundingOutput predict_sequence(const GroundingModelState& state, const scene::SceneGraph& scene,
                                 const taskgen::Task& task, const PredictOptions& options) {
  const auto objects = featurize_objects(state, scene);
  if (options.plan) {
    if (options.mode != ContextMode::Full) {
      throw GrounderError(GrounderErrc::BadConfig, "plan decoding needs the task description (full context)");
    }
    return plan_and_ground(state, objects, task, options.beam_width);
  }
  const auto tr = encode_transcript(task, state, options.mode);
  return forward(state, objects, tr, {}, false);
}

json StepPrediction::to_json() const {
  json doc{{"task_id", task_id},       {"scene_id", scene_id}, {"step_index", step_index},
           {"predicted_id", predicted_id.empty() ? json(nullptr) : json(predicted_id)},
           {"gold_id", gold_id},       {"correct", correct}};
  if (ambiguous) doc["ambiguous"] = true;
  return doc;
}

StepPrediction StepPrediction::from_json(const json& doc) {
  StepPrediction p;
  p.task_id = doc.at("task_id").get<std::string>();
  p.scene_id = doc.value("scene_id", "");
  p.step_index = doc.at("step_index").get<int>();
  if (doc.contains("predicted_id") && doc["predicted_id"].is_string()) p.predicted_id = doc["predicted_id"];
  p.gold_id = doc.at("gold_id").get<std::string>();
  p.correct = doc.at("correct").get<bool>();
  p.ambiguous = doc.value("ambiguous", false);
  return p;
}

std::vector<StepPrediction> to_step_predictions(const taskgen::Task& task, const std::vector<std::string>& predicted) {
  std::vector<StepPrediction> out;
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    StepPrediction p;
    p.task_id = task.task_id;
    p.scene_id = task.scene_id;
    p.step_index = task.steps[i].index;
    p.predicted_id = i < predicted.size() ? predicted[i] : "";
    p.gold_id = task.steps[i].target_id;
    p.correct = !p.predicted_id.empty() && p.predicted_id == p.gold_id;
    p.ambiguous = task.is_ambiguous(task.steps[i].index);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace seqground::grounder

#pragma once

#include <filesystem>
#include <functional>

#include "seqground/grounder/model.hpp"

namespace seqground::grounder {

struct TrainHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double adam_eps = 1e-8;
  int epochs = 50;
  int batch = 16;
  bool teacher_forcing = true;
  ContextMode mode = ContextMode::Full;

  json to_json() const;
  static TrainHyper from_json(const json& doc);
};

/// Decoupled weight decay; LayerNorm gains/biases, plain biases and gates are not decayed.
class AdamW {
 public:
  AdamW(const ModelParams& shape, const TrainHyper& hyper);
  void step(ModelParams& params, const ModelParams& grads);
  long steps_taken() const { return t_; }

 private:
  TrainHyper hyper_;
  ModelParams m_, v_;
  std::vector<bool> decay_;
  long t_ = 0;
};

struct EpochReport {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double grounding = 0.0;
  double instruction = 0.0;
};

/// Returning false stops training after the current epoch.
using EpochCallback = std::function<bool(const EpochReport&, const GroundingModelState&)>;

struct TrainResult {
  GroundingModelState state;
  std::vector<EpochReport> curve;
};

/// Vocabulary and category table come from the training data. Throws EmptyCorpus,
/// BadConfig (task refers to an unknown scene), Divergence.
TrainResult train(const std::vector<scene::SceneGraph>& scenes, const std::vector<taskgen::Task>& tasks,
                  ModelConfig config, const TrainHyper& hyper, const EpochCallback& on_epoch = {});

/// Trains an already-initialized state in place.
std::vector<EpochReport> train_state(GroundingModelState& state, const std::vector<Example>& examples,
                                     const TrainHyper& hyper, const EpochCallback& on_epoch = {});

void save_checkpoint(const GroundingModelState& state, const std::filesystem::path& path);
GroundingModelState load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const GroundingModelState& state);
GroundingModelState checkpoint_from_bytes(std::string_view bytes);

struct PredictOptions {
  ContextMode mode = ContextMode::Full;
  bool plan = false;
  int beam_width = 5;
};

/// Stepwise decoding; the adapter reads the model's own earlier predictions. With `plan`
/// the step texts are decoded from the description alone before each grounding.
GroundingOutput predict_sequence(const GroundingModelState& state, const scene::SceneGraph& scene,
                                 const taskgen::Task& task, const PredictOptions& options = {});

/// One line per step of the prediction output.
struct StepPrediction {
  std::string task_id;
  std::string scene_id;
  int step_index = 0;
  std::string predicted_id;  // empty when unanswered
  std::string gold_id;
  bool correct = false;
  bool ambiguous = false;

  json to_json() const;
  static StepPrediction from_json(const json& doc);
};

std::vector<StepPrediction> to_step_predictions(const taskgen::Task& task, const std::vector<std::string>& predicted);

}  // namespace seqground::grounder

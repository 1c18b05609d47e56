#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"
#include "seqground/grounder/tensor.hpp"
#include "seqground/scenegraph.hpp"
#include "seqground/taskgen.hpp"

namespace seqground::grounder {

enum class GrounderErrc {
  ShapeMismatch,
  NonFiniteActivation,
  NonFiniteGradient,
  TooManySteps,
  SequenceTooLong,
  Divergence,
  StepBudgetExceeded,
  BadCheckpoint,
  BadConfig,
  EmptyCorpus,
};
std::string_view to_string(GrounderErrc code);
constexpr std::string_view module_name(GrounderErrc) { return "grounder"; }
using GrounderError = ModuleError<GrounderErrc>;

enum class ContextMode { Full, NoContext };
std::string_view to_string(ContextMode mode);

struct ModelConfig {
  int embed_dim = 32;
  int n_layers = 2;
  int n_heads = 2;
  int max_steps = taskgen::kMaxStepsPerTask;
  int vocab_size = 0;  // filled from the vocabulary
  int max_seq_len = 160;
  int ffn_dim = 0;  // 0 means 4 * embed_dim
  int caption_buckets = 64;
  int n_categories = 0;  // filled from the category table
  std::uint64_t seed = 0;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * embed_dim; }
  int head_dim() const { return embed_dim / n_heads; }
  /// Throws BadConfig.
  void validate() const;
  json to_json() const;
  static ModelConfig from_json(const json& doc);
};

/// Word-level vocabulary with reserved specials.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kSep = 3;
  static constexpr int kGrd = 4;
  static constexpr int kEos = 5;
  static constexpr int kNumSpecial = 6;

  Vocabulary();
  static Vocabulary build(const std::vector<taskgen::Task>& tasks);
  static Vocabulary from_words(const std::vector<std::string>& words);

  /// kUnk for anything not seen at build time.
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  std::vector<int> encode(std::string_view text) const;
  /// Joins non-special tokens with spaces.
  std::string decode(const std::vector<int>& ids) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Object category table; index 0 is reserved for categories not seen in training.
class CategoryTable {
 public:
  CategoryTable();
  static CategoryTable build(const std::vector<scene::SceneGraph>& scenes);
  static CategoryTable from_names(const std::vector<std::string>& names);
  int id(std::string_view category) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct LayerParams {
  Matrix ln1_g, ln1_b;
  Matrix wq, wk, wv, wo, bo;
  Matrix ln2_g, ln2_b;
  Matrix w1, b1, w2, b2;
  Matrix bank;  // max_steps x D, one slot per earlier step
  Matrix gate;  // 1 x 1
};

struct ModelParams {
  Matrix tok_emb, pos_emb;
  Matrix cat_emb, cap_proj, box_proj;
  std::vector<LayerParams> layers;
  Matrix lnf_g, lnf_b;
  Matrix lm_head, lm_bias;
  Matrix head_q, head_k;

  /// Visits every tensor with a stable name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
};

struct GroundingModelState {
  ModelConfig config;
  Vocabulary vocab;
  CategoryTable categories;
  ModelParams params;

  /// Random init from config.seed; every gate starts at zero.
  static GroundingModelState create(ModelConfig config, Vocabulary vocab, CategoryTable categories);
  void set_gates(double value);
};

/// Raw per-object inputs to the featurizer.
struct ObjectInputs {
  std::vector<int> category;
  std::vector<std::vector<std::pair<int, double>>> caption_bag;  // (bucket, weight)
  std::vector<std::array<double, 6>> box;                        // center xyz, size xyz
  std::size_t size() const { return category.size(); }
};

struct ObjectTokenSet {
  std::vector<std::string> ids;  // order of rows in features
  ObjectInputs inputs;
  Matrix features;  // N_obj x D
  std::optional<int> index_of(std::string_view id) const;
};

ObjectInputs object_inputs(const GroundingModelState& state, const scene::SceneGraph& scene);
Matrix featurize(const ModelParams& params, const ObjectInputs& inputs, int embed_dim);
ObjectTokenSet featurize_objects(const GroundingModelState& state, const scene::SceneGraph& scene);

struct TranscriptEncoding {
  ContextMode mode = ContextMode::Full;
  std::vector<int> tokens;
  std::vector<int> positions;      // position embedding index
  std::vector<int> segment_start;  // first token this token may attend to
  std::vector<int> step_of_token;  // 1-based step whose segment holds the token
  std::vector<int> adapter_visible;  // number of adapter slots the token reads
  std::vector<int> grd_positions;    // M_1 < ... < M_n
  std::vector<int> vocab_targets;    // next-token target per position, -1 if none
  int n_steps() const { return static_cast<int>(grd_positions.size()); }
  std::size_t length() const { return tokens.size(); }
};

/// Lays out token ids. Steps without a trailing GRD are allowed only for the last step
/// (used while decoding). `with_eos` adds an EOS target after the final GRD.
TranscriptEncoding layout_transcript(const std::vector<int>& prompt, const std::vector<std::vector<int>>& steps,
                                     ContextMode mode, bool open_last_step, bool with_eos);
TranscriptEncoding encode_transcript(const taskgen::Task& task, const GroundingModelState& state, ContextMode mode);

struct GroundingOutput {
  Matrix step_logits;   // n x N_obj
  Matrix vocab_logits;  // L x V
  std::vector<int> predicted;
  std::vector<std::string> step_texts;  // filled by plan decoding
};

/// Records adapter attention weights: [layer][token] -> (head-major) weights over visible slots.
struct AdapterProbe {
  std::vector<std::vector<std::vector<double>>> weights;
};

struct ForwardOptions {
  bool use_adapter = true;
  AdapterProbe* probe = nullptr;
};

/// Runs the model. With teacher forcing the adapter slots hold the given prior targets
/// (at least n-1 entries); otherwise the model's own predictions feed the adapter.
GroundingOutput forward(const GroundingModelState& state, const ObjectTokenSet& objects,
                        const TranscriptEncoding& transcript, const std::vector<int>& prior_targets,
                        bool teacher_forcing, const ForwardOptions& options = {});

/// logit_j = (Wq h) . (Wk o_j) / sqrt(D)
std::vector<double> grounding_scores(std::span<const double> grd_hidden, const Matrix& objects,
                                     const Matrix& head_q, const Matrix& head_k);

struct LossBreakdown {
  double grounding = 0.0;
  double instruction = 0.0;
  double total = 0.0;
};
/// Mean cross-entropy over steps plus mean cross-entropy over token targets (-1 skipped).
LossBreakdown loss(const GroundingOutput& output, const std::vector<int>& gold_targets,
                   const std::vector<int>& gold_tokens);

struct Example {
  std::string task_id;
  ObjectInputs objects;
  TranscriptEncoding transcript;
  std::vector<int> gold;
};

/// Builds an example; throws TooManySteps/SequenceTooLong, BadConfig for unknown targets.
Example make_example(const GroundingModelState& state, const scene::SceneGraph& scene, const taskgen::Task& task,
                     ContextMode mode);

/// Mean loss over the batch and its gradient (accumulated into `grads`, which must be zeros_like).
LossBreakdown loss_and_gradient(const GroundingModelState& state, const std::vector<const Example*>& batch,
                                bool teacher_forcing, ModelParams& grads);
LossBreakdown batch_loss(const GroundingModelState& state, const std::vector<const Example*>& batch,
                         bool teacher_forcing);

struct GradProbe {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradProbe> probes;
  json to_json() const;
};
/// Central differences on n_probes coordinates, spread round-robin over tensors.
GradCheckReport grad_check(const GroundingModelState& state, const std::vector<const Example*>& batch, double eps,
                           int n_probes, std::uint64_t seed);

}  // namespace seqground::grounder

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "seqground/grounder/model.hpp"

namespace seqground::grounder {

std::string_view to_string(GrounderErrc code) {
  switch (code) {
    case GrounderErrc::ShapeMismatch: return "ShapeMismatch";
    case GrounderErrc::NonFiniteActivation: return "NonFiniteActivation";
    case GrounderErrc::NonFiniteGradient: return "NonFiniteGradient";
    case GrounderErrc::TooManySteps: return "TooManySteps";
    case GrounderErrc::SequenceTooLong: return "SequenceTooLong";
    case GrounderErrc::Divergence: return "Divergence";
    case GrounderErrc::StepBudgetExceeded: return "StepBudgetExceeded";
    case GrounderErrc::BadCheckpoint: return "BadCheckpoint";
    case GrounderErrc::BadConfig: return "BadConfig";
    case GrounderErrc::EmptyCorpus: return "EmptyCorpus";
  }
  return "Unknown";
}

std::string_view to_string(ContextMode mode) { return mode == ContextMode::Full ? "full" : "no-context"; }

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw GrounderError(GrounderErrc::BadConfig, what); };
  if (embed_dim <= 0 || n_heads <= 0 || embed_dim % n_heads != 0) bad("embed_dim must be a positive multiple of n_heads");
  if (n_layers <= 0) bad("n_layers must be positive");
  if (max_steps <= 0) bad("max_steps must be positive");
  if (vocab_size < Vocabulary::kNumSpecial) bad("vocab_size smaller than the special tokens");
  if (max_seq_len < 4) bad("max_seq_len too small");
  if (caption_buckets <= 0) bad("caption_buckets must be positive");
  if (n_categories <= 0) bad("n_categories must be positive");
}

json ModelConfig::to_json() const {
  return json{{"embed_dim", embed_dim},   {"n_layers", n_layers},         {"n_heads", n_heads},
              {"max_steps", max_steps},   {"vocab_size", vocab_size},     {"max_seq_len", max_seq_len},
              {"ffn_dim", ffn_dim},       {"caption_buckets", caption_buckets},
              {"n_categories", n_categories}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
  ModelConfig c;
  c.embed_dim = doc.value("embed_dim", c.embed_dim);
  c.n_layers = doc.value("n_layers", c.n_layers);
  c.n_heads = doc.value("n_heads", c.n_heads);
  c.max_steps = doc.value("max_steps", c.max_steps);
  c.vocab_size = doc.value("vocab_size", c.vocab_size);
  c.max_seq_len = doc.value("max_seq_len", c.max_seq_len);
  c.ffn_dim = doc.value("ffn_dim", c.ffn_dim);
  c.caption_buckets = doc.value("caption_buckets", c.caption_buckets);
  c.n_categories = doc.value("n_categories", c.n_categories);
  c.seed = doc.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------- vocabularies

Vocabulary::Vocabulary() : words_{"<pad>", "<unk>", "<bos>", "<sep>", "<grd>", "<eos>"} {
  for (int i = 0; i < kNumSpecial; ++i) index_.emplace(words_[static_cast<std::size_t>(i)], i);
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) {
    if (v.index_.count(w)) continue;
    v.index_.emplace(w, v.size());
    v.words_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<taskgen::Task>& tasks) {
  std::set<std::string> seen;
  for (const auto& task : tasks) {
    for (auto& w : word_tokens(task.description)) seen.insert(std::move(w));
    for (const auto& step : task.steps) {
      for (auto& w : word_tokens(step.instruction)) seen.insert(std::move(w));
    }
  }
  return from_words({seen.begin(), seen.end()});
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) return words_[kUnk];
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : word_tokens(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecial && id != kUnk) continue;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

CategoryTable::CategoryTable() : names_{"<unknown>"} { index_.emplace(names_[0], 0); }

CategoryTable CategoryTable::from_names(const std::vector<std::string>& names) {
  CategoryTable t;
  for (const auto& n : names) {
    if (t.index_.count(n)) continue;
    t.index_.emplace(n, t.size());
    t.names_.push_back(n);
  }
  return t;
}

CategoryTable CategoryTable::build(const std::vector<scene::SceneGraph>& scenes) {
  std::set<std::string> seen;
  for (const auto& s : scenes) {
    for (const auto& [id, node] : s.objects()) seen.insert(node.category);
  }
  return from_names({seen.begin(), seen.end()});
}

int CategoryTable::id(std::string_view category) const {
  auto it = index_.find(std::string(category));
  return it == index_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------- parameters

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  fn("cat_emb", cat_emb);
  fn("cap_proj", cap_proj);
  fn("box_proj", box_proj);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "ln1_g", L.ln1_g);
    fn(p + "ln1_b", L.ln1_b);
    fn(p + "wq", L.wq);
    fn(p + "wk", L.wk);
    fn(p + "wv", L.wv);
    fn(p + "wo", L.wo);
    fn(p + "bo", L.bo);
    fn(p + "ln2_g", L.ln2_g);
    fn(p + "ln2_b", L.ln2_b);
    fn(p + "w1", L.w1);
    fn(p + "b1", L.b1);
    fn(p + "w2", L.w2);
    fn(p + "b2", L.b2);
    fn(p + "bank", L.bank);
    fn(p + "gate", L.gate);
  }
  fn("lnf_g", lnf_g);
  fn("lnf_b", lnf_b);
  fn("lm_head", lm_head);
  fn("lm_bias", lm_bias);
  fn("head_q", head_q);
  fn("head_k", head_k);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  const_cast<ModelParams*>(this)->for_each([&](const std::string& name, Matrix& m) { fn(name, m); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  out.for_each([](const std::string&, Matrix& m) { m.fill(0.0); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

GroundingModelState GroundingModelState::create(ModelConfig config, Vocabulary vocab, CategoryTable categories) {
  config.vocab_size = vocab.size();
  config.n_categories = categories.size();
  config.validate();
  const auto D = static_cast<std::size_t>(config.embed_dim);
  const auto F = static_cast<std::size_t>(config.ffn());
  const auto V = static_cast<std::size_t>(config.vocab_size);

  std::mt19937_64 rng(mix_seed(config.seed, 0x9e11));
  auto randn = [&](std::size_t r, std::size_t c, double stddev) {
    Matrix m(r, c);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : m.data()) v = dist(rng);
    return m;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(D));

  ModelParams p;
  p.tok_emb = randn(V, D, 0.5);
  p.pos_emb = randn(static_cast<std::size_t>(config.max_seq_len), D, 0.1);
  p.cat_emb = randn(static_cast<std::size_t>(config.n_categories), D, 0.5);
  p.cap_proj = randn(static_cast<std::size_t>(config.caption_buckets), D, 0.5);
  p.box_proj = randn(6, D, 0.05);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerParams L;
    L.ln1_g = Matrix(1, D, 1.0);
    L.ln1_b = Matrix(1, D);
    L.wq = randn(D, D, s);
    L.wk = randn(D, D, s);
    L.wv = randn(D, D, s);
    L.wo = randn(D, D, s * 0.5);
    L.bo = Matrix(1, D);
    L.ln2_g = Matrix(1, D, 1.0);
    L.ln2_b = Matrix(1, D);
    L.w1 = randn(D, F, s);
    L.b1 = Matrix(1, F);
    L.w2 = randn(F, D, 0.5 / std::sqrt(static_cast<double>(F)));
    L.b2 = Matrix(1, D);
    L.bank = randn(static_cast<std::size_t>(config.max_steps), D, 0.02);
    L.gate = Matrix(1, 1, 0.0);
    p.layers.push_back(std::move(L));
  }
  p.lnf_g = Matrix(1, D, 1.0);
  p.lnf_b = Matrix(1, D);
  p.lm_head = randn(D, V, s);
  p.lm_bias = Matrix(1, V);
  p.head_q = randn(D, D, s);
  p.head_k = randn(D, D, s);

  return GroundingModelState{config, std::move(vocab), std::move(categories), std::move(p)};
}

void GroundingModelState::set_gates(double value) {
  for (auto& L : params.layers) L.gate(0, 0) = value;
}

// ---------------------------------------------------------------- objects

std::optional<int> ObjectTokenSet::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return static_cast<int>(i);
  }
  return std::nullopt;
}

ObjectInputs object_inputs(const GroundingModelState& state, const scene::SceneGraph& scene) {
  ObjectInputs in;
  const auto buckets = static_cast<std::uint64_t>(state.config.caption_buckets);
  for (const auto& [id, node] : scene.objects()) {
    in.category.push_back(state.categories.id(node.category));
    std::map<int, double> bag;
    const auto words = word_tokens(node.caption);
    for (const auto& w : words) {
      bag[static_cast<int>(fnv1a64(w) % buckets)] += 1.0 / static_cast<double>(words.size());
    }
    in.caption_bag.emplace_back(bag.begin(), bag.end());
    std::array<double, 6> box{};
    if (node.bbox) {
      box = {node.bbox->center.x, node.bbox->center.y, node.bbox->center.z,
             node.bbox->size.x,   node.bbox->size.y,   node.bbox->size.z};
    }
    in.box.push_back(box);
  }
  return in;
}

Matrix featurize(const ModelParams& params, const ObjectInputs& inputs, int embed_dim) {
  const auto D = static_cast<std::size_t>(embed_dim);
  Matrix out(inputs.size(), D);
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    auto row = out.row(j);
    const auto cat = params.cat_emb.row(static_cast<std::size_t>(inputs.category[j]));
    for (std::size_t d = 0; d < D; ++d) row[d] = cat[d];
    for (const auto& [bucket, weight] : inputs.caption_bag[j]) {
      const auto proj = params.cap_proj.row(static_cast<std::size_t>(bucket));
      for (std::size_t d = 0; d < D; ++d) row[d] += weight * proj[d];
    }
    for (std::size_t k = 0; k < 6; ++k) {
      const double x = inputs.box[j][k];
      if (x == 0.0) continue;
      const auto proj = params.box_proj.row(k);
      for (std::size_t d = 0; d < D; ++d) row[d] += x * proj[d];
    }
  }
  return out;
}

ObjectTokenSet featurize_objects(const GroundingModelState& state, const scene::SceneGraph& scene) {
  ObjectTokenSet set;
  for (const auto& [id, node] : scene.objects()) set.ids.push_back(id);
  set.inputs = object_inputs(state, scene);
  set.features = featurize(state.params, set.inputs, state.config.embed_dim);
  return set;
}

// ---------------------------------------------------------------- transcripts

TranscriptEncoding layout_transcript(const std::vector<int>& prompt, const std::vector<std::vector<int>>& steps,
                                     ContextMode mode, bool open_last_step, bool with_eos) {
  TranscriptEncoding enc;
  enc.mode = mode;
  auto push = [&](int token, int position, int seg_start, int step, int visible) {
    enc.tokens.push_back(token);
    enc.positions.push_back(position);
    enc.segment_start.push_back(seg_start);
    enc.step_of_token.push_back(step);
    enc.adapter_visible.push_back(visible);
    enc.vocab_targets.push_back(-1);
  };
  const int n = static_cast<int>(steps.size());

  if (mode == ContextMode::Full) {
    int pos = 0;
    push(Vocabulary::kBos, pos++, 0, 1, 0);
    for (int t : prompt) push(t, pos++, 0, 1, 0);
    push(Vocabulary::kSep, pos++, 0, 1, 0);
    const std::size_t first_target = enc.tokens.size() - 1;  // SEP predicts the first step word
    for (int i = 0; i < n; ++i) {
      for (int t : steps[static_cast<std::size_t>(i)]) push(t, pos++, 0, i + 1, i);
      const bool open = open_last_step && i == n - 1;
      if (!open) {
        enc.grd_positions.push_back(static_cast<int>(enc.tokens.size()));
        push(Vocabulary::kGrd, pos++, 0, i + 1, i);
      }
    }
    for (std::size_t p = first_target; p + 1 < enc.tokens.size(); ++p) enc.vocab_targets[p] = enc.tokens[p + 1];
    if (with_eos && !open_last_step && n > 0) enc.vocab_targets.back() = Vocabulary::kEos;
  } else {
    for (int i = 0; i < n; ++i) {
      const int start = static_cast<int>(enc.tokens.size());
      int pos = 0;
      push(Vocabulary::kSep, pos++, start, i + 1, 0);
      for (int t : steps[static_cast<std::size_t>(i)]) push(t, pos++, start, i + 1, 0);
      const bool open = open_last_step && i == n - 1;
      if (!open) {
        enc.grd_positions.push_back(static_cast<int>(enc.tokens.size()));
        push(Vocabulary::kGrd, pos++, start, i + 1, 0);
      }
      for (std::size_t p = static_cast<std::size_t>(start); p + 1 < enc.tokens.size(); ++p) {
        enc.vocab_targets[p] = enc.tokens[p + 1];
      }
    }
  }
  return enc;
}

TranscriptEncoding encode_transcript(const taskgen::Task& task, const GroundingModelState& state, ContextMode mode) {
  if (static_cast<int>(task.steps.size()) > state.config.max_steps) {
    throw GrounderError(GrounderErrc::TooManySteps, task.task_id + ": " + std::to_string(task.steps.size()) +
                                                         " steps exceed max_steps " +
                                                         std::to_string(state.config.max_steps));
  }
  std::vector<std::vector<int>> steps;
  for (const auto& s : task.steps) steps.push_back(state.vocab.encode(s.instruction));
  auto enc = layout_transcript(state.vocab.encode(task.description), steps, mode, false, true);
  const int longest = *std::max_element(enc.positions.begin(), enc.positions.end()) + 1;
  if (longest > state.config.max_seq_len) {
    throw GrounderError(GrounderErrc::SequenceTooLong,
                        task.task_id + ": transcript needs " + std::to_string(longest) + " positions");
  }
  return enc;
}

Example make_example(const GroundingModelState& state, const scene::SceneGraph& scene, const taskgen::Task& task,
                     ContextMode mode) {
  Example ex;
  ex.task_id = task.task_id;
  ex.objects = object_inputs(state, scene);
  ex.transcript = encode_transcript(task, state, mode);
  std::vector<std::string> ids;
  for (const auto& [id, node] : scene.objects()) ids.push_back(id);
  for (const auto& step : task.steps) {
    auto it = std::find(ids.begin(), ids.end(), step.target_id);
    if (it == ids.end()) {
      throw GrounderError(GrounderErrc::BadConfig,
                          task.task_id + ": target " + step.target_id + " not in scene " + scene.scene_id());
    }
    ex.gold.push_back(static_cast<int>(it - ids.begin()));
  }
  return ex;
}

}  // namespace seqground::grounder

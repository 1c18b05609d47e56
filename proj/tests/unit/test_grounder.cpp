#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <random>

#include "seqground/grounder/baseline.hpp"
#include "seqground/grounder/training.hpp"

using namespace seqground;
using namespace seqground::grounder;

namespace {

struct Toy {
  std::vector<scene::SceneGraph> scenes;
  std::vector<taskgen::Task> tasks;
  std::map<std::string, const scene::SceneGraph*> by_id;

  const scene::SceneGraph& scene_of(const taskgen::Task& t) const { return *by_id.at(t.scene_id); }
};

Toy toy_corpus(int n_scenes, int tasks_per_scene, int max_steps = 10) {
  taskgen::SynthConfig sc;
  sc.seed = 21;
  sc.n_scenes = n_scenes;
  sc.tasks_per_scene = tasks_per_scene;
  auto c = taskgen::synth_context_corpus(sc);
  Toy toy{std::move(c.scenes), std::move(c.tasks), {}};
  for (auto& t : toy.tasks) {
    if (static_cast<int>(t.steps.size()) > max_steps) t.steps.resize(static_cast<std::size_t>(max_steps));
    std::erase_if(t.ambiguous_steps, [&](int s) { return s > max_steps; });
  }
  for (const auto& s : toy.scenes) toy.by_id[s.scene_id()] = &s;
  return toy;
}

GroundingModelState model_for(const Toy& toy, int D, int layers, int heads, int K, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.embed_dim = D;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.max_steps = K;
  cfg.seed = seed;
  return GroundingModelState::create(cfg, Vocabulary::build(toy.tasks), CategoryTable::build(toy.scenes));
}

std::vector<int> gold_indices(const ObjectTokenSet& objects, const taskgen::Task& task) {
  std::vector<int> out;
  for (const auto& s : task.steps) out.push_back(*objects.index_of(s.target_id));
  return out;
}

scene::ObjectNode node(const std::string& id, const std::string& caption, scene::Vec3 center) {
  const auto parsed = scene::parse_object_id(id);
  return scene::ObjectNode{id, parsed->category, parsed->instance, caption, {}, scene::Aabb{center, {1, 1, 1}}};
}

}  // namespace

TEST_CASE("featurizer is deterministic, D-wide and position sensitive") {
  const auto toy = toy_corpus(2, 1);
  const auto state = model_for(toy, 16, 1, 2, 10, 5);
  std::map<std::string, scene::ObjectNode> nodes;
  nodes.emplace("cup-1", node("cup-1", "A red cup.", {1, 2, 0}));
  nodes.emplace("cup-2", node("cup-2", "A red cup.", {1, 2, 0}));
  nodes.emplace("cup-3", node("cup-3", "A red cup.", {2, 2, 0}));
  const scene::SceneGraph sc("t", "test", nodes);
  const auto objs = featurize_objects(state, sc);
  REQUIRE(objs.features.rows() == 3);
  CHECK(objs.features.cols() == 16);
  CHECK(objs.ids == std::vector<std::string>{"cup-1", "cup-2", "cup-3"});
  CHECK(std::equal(objs.features.row(0).begin(), objs.features.row(0).end(), objs.features.row(1).begin()));
  // The 1 m shift must match a recomputation through the positional projection.
  double moved = 0.0;
  for (std::size_t d = 0; d < 16; ++d) {
    const double expect = state.params.box_proj(0, d);
    CHECK(objs.features(2, d) - objs.features(0, d) == doctest::Approx(expect).epsilon(1e-9));
    moved += std::abs(objs.features(2, d) - objs.features(0, d));
  }
  CHECK(moved > 0.0);
  CHECK(objs.features.all_finite());
}

TEST_CASE("transcript layout") {
  const auto toy = toy_corpus(1, 1);
  const auto state = model_for(toy, 16, 1, 2, 10, 5);
  taskgen::Task task{"t0", "s", "Make coffee.", {{1, "Go to the desk.", "a-1"}, {2, "Take a cup.", "b-1"},
                                                 {3, "Fill it at the maker.", "c-1"}}, {}};
  SUBCASE("three steps give three increasing GRD positions") {
    const auto enc = encode_transcript(task, state, ContextMode::Full);
    REQUIRE(enc.n_steps() == 3);
    CHECK(enc.grd_positions[0] < enc.grd_positions[1]);
    CHECK(enc.grd_positions[1] < enc.grd_positions[2]);
    for (int m : enc.grd_positions) CHECK(enc.tokens[static_cast<std::size_t>(m)] == Vocabulary::kGrd);
    CHECK(enc.vocab_targets.back() == Vocabulary::kEos);
    CHECK(enc.tokens.front() == Vocabulary::kBos);
  }
  SUBCASE("no-context segments hide the description and earlier steps") {
    const auto iso = encode_transcript(task, state, ContextMode::NoContext);
    REQUIRE(iso.n_steps() == 3);
    CHECK(std::count(iso.tokens.begin(), iso.tokens.end(), Vocabulary::kBos) == 0);
    const int step2_grd = iso.grd_positions[1];
    const int seg = iso.segment_start[static_cast<std::size_t>(step2_grd)];
    CHECK(seg > iso.grd_positions[0]);
    for (std::size_t p = static_cast<std::size_t>(seg); p <= static_cast<std::size_t>(step2_grd); ++p) {
      CHECK(iso.step_of_token[p] == 2);
      CHECK(iso.segment_start[p] == seg);
      CHECK(iso.adapter_visible[p] == 0);
    }
    CHECK(iso.positions[static_cast<std::size_t>(seg)] == 0);
  }
  SUBCASE("later steps follow earlier ones in full mode") {
    taskgen::Task six = task;
    six.steps.push_back({4, "Go to the table.", "d-1"});
    six.steps.push_back({5, "Put it down.", "d-1"});
    six.steps.push_back({6, "Go back to the table.", "d-1"});
    const auto enc = encode_transcript(six, state, ContextMode::Full);
    int first6 = -1, last3 = -1;
    for (std::size_t p = 0; p < enc.length(); ++p) {
      if (enc.step_of_token[p] == 3) last3 = static_cast<int>(p);
      if (enc.step_of_token[p] == 6 && first6 < 0) first6 = static_cast<int>(p);
    }
    CHECK(first6 > last3);
    CHECK(enc.segment_start[static_cast<std::size_t>(enc.grd_positions[5])] == 0);
  }
  SUBCASE("too many steps") {
    taskgen::Task big = task;
    for (int i = 4; i <= 11; ++i) big.steps.push_back({i, "Go.", "a-1"});
    CHECK_THROWS_AS(encode_transcript(big, state, ContextMode::Full), GrounderError);
  }
  SUBCASE("unknown words map to the unknown token") {
    CHECK(state.vocab.encode("zyzzyva") == std::vector<int>{Vocabulary::kUnk});
  }
}

TEST_CASE("gates at zero reproduce the adapter-free forward exactly") {
  const auto toy = toy_corpus(4, 3);
  auto state = model_for(toy, 16, 2, 2, 10, 9);
  for (const auto& task : toy.tasks) {
    const auto objs = featurize_objects(state, toy.scene_of(task));
    const auto enc = encode_transcript(task, state, ContextMode::Full);
    const auto gold = gold_indices(objs, task);
    const auto with = forward(state, objs, enc, gold, true);
    const auto without = forward(state, objs, enc, gold, true, ForwardOptions{false, nullptr});
    CHECK(with.step_logits == without.step_logits);
    CHECK(with.vocab_logits == without.vocab_logits);
  }
  state.set_gates(0.5);
  const auto& task = toy.tasks[0];
  const auto objs = featurize_objects(state, toy.scene_of(task));
  const auto enc = encode_transcript(task, state, ContextMode::Full);
  const auto gold = gold_indices(objs, task);
  CHECK_FALSE(forward(state, objs, enc, gold, true).step_logits ==
              forward(state, objs, enc, gold, true, ForwardOptions{false, nullptr}).step_logits);
}

TEST_CASE("earlier step logits ignore later steps") {
  const auto toy = toy_corpus(3, 2);
  auto state = model_for(toy, 16, 2, 2, 10, 4);
  state.set_gates(0.8);
  std::mt19937_64 rng(5);
  for (const auto& task : toy.tasks) {
    if (task.steps.size() < 3) continue;
    const auto objs = featurize_objects(state, toy.scene_of(task));
    const auto base = forward(state, objs, encode_transcript(task, state, ContextMode::Full),
                              gold_indices(objs, task), true);
    auto edited = task;
    edited.steps[2].instruction = "Walk over to the shiny lamp near the door.";
    std::uniform_int_distribution<std::size_t> pick(0, objs.ids.size() - 1);
    edited.steps[2].target_id = objs.ids[pick(rng)];
    edited.steps.push_back({static_cast<int>(edited.steps.size()) + 1, "Grab the towel.", objs.ids[pick(rng)]});
    const auto after = forward(state, objs, encode_transcript(edited, state, ContextMode::Full),
                               gold_indices(objs, edited), true);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::equal(base.step_logits.row(i).begin(), base.step_logits.row(i).end(),
                       after.step_logits.row(i).begin()));
    }
  }
}

TEST_CASE("adapter reads exactly the slots of earlier steps") {
  const auto toy = toy_corpus(2, 2);
  auto state = model_for(toy, 16, 2, 2, 10, 4);
  state.set_gates(0.3);
  const auto& task = toy.tasks[0];
  const auto objs = featurize_objects(state, toy.scene_of(task));
  const auto enc = encode_transcript(task, state, ContextMode::Full);
  AdapterProbe probe;
  forward(state, objs, enc, gold_indices(objs, task), true, ForwardOptions{true, &probe});
  REQUIRE(probe.weights.size() == 2);
  for (const auto& layer : probe.weights) {
    for (std::size_t p = 0; p < enc.length(); ++p) {
      const auto expected = static_cast<std::size_t>(2 * (enc.step_of_token[p] - 1));
      CHECK(layer[p].size() == expected);
    }
  }
}

TEST_CASE("grounding scores") {
  Matrix objs(3, 4);
  for (std::size_t d = 0; d < 4; ++d) {
    objs(0, d) = 0.3 * static_cast<double>(d);
    objs(1, d) = 0.3 * static_cast<double>(d);
    objs(2, d) = -0.1 * static_cast<double>(d) + 1.0;
  }
  Matrix hq(4, 4), hk(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      hq(i, j) = std::sin(static_cast<double>(i * 4 + j));
      hk(i, j) = std::cos(static_cast<double>(i + 3 * j));
    }
  }
  const std::vector<double> h{0.5, -1.0, 2.0, 0.25};
  auto logits = grounding_scores(h, objs, hq, hk);
  CHECK(logits[0] == logits[1]);
  softmax_inplace(logits);
  double sum = 0.0;
  for (double p : logits) sum += p;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  Matrix single(1, 4, 0.7);
  auto one = grounding_scores(h, single, hq, hk);
  softmax_inplace(one);
  CHECK(one[0] == 1.0);
  CHECK_THROWS_AS(grounding_scores(std::vector<double>{1.0, 2.0}, objs, hq, hk), GrounderError);
}

TEST_CASE("loss terms") {
  GroundingOutput out;
  out.step_logits = Matrix(2, 4, 0.0);
  out.vocab_logits = Matrix(3, 5, 0.0);
  const auto uniform = loss(out, {0, 3}, {-1, 2, 4});
  CHECK(uniform.grounding == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(uniform.instruction == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(uniform.total == uniform.grounding + uniform.instruction);

  out.step_logits(0, 0) = 1e3;
  out.step_logits(1, 3) = 1e3;
  CHECK(loss(out, {0, 3}, {-1, 2, 4}).grounding < 1e-12);
  CHECK_THROWS_AS(loss(out, {0}, {-1, 2, 4}), GrounderError);
  CHECK_THROWS_AS(loss(out, {0, 3}, {2, 4}), GrounderError);
}

TEST_CASE("analytic gradients match central differences") {
  const auto toy = toy_corpus(3, 2, 4);
  auto state = model_for(toy, 16, 2, 2, 4, 17);
  std::vector<Example> examples;
  for (const auto& t : toy.tasks) examples.push_back(make_example(state, toy.scene_of(t), t, ContextMode::Full));
  std::vector<const Example*> batch;
  for (const auto& e : examples) batch.push_back(&e);

  SUBCASE("randomized gates") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> g(-1.0, 1.0);
    for (auto& L : state.params.layers) L.gate(0, 0) = g(rng);
    const auto report = grad_check(state, batch, 1e-4, 128, 99);
    CHECK(report.probes.size() == 128);
    CHECK(report.max_rel_error < 1e-4);
    bool saw_bank = false, saw_gate = false;
    for (const auto& p : report.probes) {
      saw_bank = saw_bank || p.tensor.ends_with("bank");
      saw_gate = saw_gate || p.tensor.ends_with("gate");
    }
    CHECK(saw_bank);
    CHECK(saw_gate);
  }
  SUBCASE("gate at zero still gets a gradient") {
    ModelParams grads = state.params.zeros_like();
    loss_and_gradient(state, batch, true, grads);
    const double analytic = grads.layers[0].gate(0, 0);
    auto probe = state;
    probe.params.layers[0].gate(0, 0) = 1e-4;
    const double up = batch_loss(probe, batch, true).total;
    probe.params.layers[0].gate(0, 0) = -1e-4;
    const double down = batch_loss(probe, batch, true).total;
    const double numeric = (up - down) / 2e-4;
    CHECK(analytic != 0.0);
    CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(analytic), 1e-6));
  }
  SUBCASE("slots no step reaches get zero gradient") {
    state.set_gates(0.4);
    std::size_t longest = 0;
    for (const auto& t : toy.tasks) longest = std::max(longest, t.steps.size());
    ModelParams grads = state.params.zeros_like();
    loss_and_gradient(state, batch, true, grads);
    for (const auto& L : grads.layers) {
      for (std::size_t j = longest - 1; j < L.bank.rows(); ++j) {
        for (double v : L.bank.row(j)) CHECK(v == 0.0);
      }
      double used = 0.0;
      for (double v : L.bank.row(0)) used += std::abs(v);
      CHECK(used > 0.0);
    }
  }
}

TEST_CASE("training is deterministic, lowers the loss and checkpoints exactly") {
  const auto toy = toy_corpus(6, 2);
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.seed = 3;
  TrainHyper hyper;
  hyper.lr = 3e-3;
  hyper.epochs = 4;
  hyper.batch = 4;
  const auto a = train(toy.scenes, toy.tasks, cfg, hyper);
  const auto b = train(toy.scenes, toy.tasks, cfg, hyper);
  REQUIRE(a.curve.size() == 4);
  CHECK(a.curve.back().mean_loss < a.curve.front().mean_loss);
  CHECK(a.curve.back().mean_loss == b.curve.back().mean_loss);
  bool same = true;
  std::vector<const Matrix*> pb;
  b.state.params.for_each([&](const std::string&, const Matrix& m) { pb.push_back(&m); });
  std::size_t k = 0;
  a.state.params.for_each([&](const std::string&, const Matrix& m) { same = same && m == *pb[k++]; });
  CHECK(same);

  const auto path = std::filesystem::temp_directory_path() / "sg_grounder_test.ckpt";
  save_checkpoint(a.state, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.config.to_json() == a.state.config.to_json());
  CHECK(loaded.vocab.words() == a.state.vocab.words());
  CHECK(loaded.categories.names() == a.state.categories.names());
  for (const auto& task : toy.tasks) {
    const auto x = predict_sequence(a.state, toy.scene_of(task), task);
    const auto y = predict_sequence(loaded, toy.scene_of(task), task);
    CHECK(x.step_logits == y.step_logits);
    CHECK(x.vocab_logits == y.vocab_logits);
  }

  auto bytes = checkpoint_bytes(a.state);
  CHECK_THROWS_AS(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 3)), GrounderError);
  CHECK_THROWS_AS(checkpoint_from_bytes("XXXX" + bytes.substr(4)), GrounderError);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(train({}, toy.tasks, cfg, hyper), GrounderError);
}

TEST_CASE("free-running decoding on a fitted toy corpus") {
  const auto toy = toy_corpus(8, 2);
  ModelConfig cfg;
  cfg.embed_dim = 24;
  cfg.seed = 8;
  TrainHyper hyper;
  hyper.lr = 3e-3;
  hyper.epochs = 40;
  hyper.batch = 4;
  const auto fitted = train(toy.scenes, toy.tasks, cfg, hyper).state;
  int perfect = 0;
  for (const auto& task : toy.tasks) {
    const auto objs = featurize_objects(fitted, toy.scene_of(task));
    const auto gold = gold_indices(objs, task);
    const auto enc = encode_transcript(task, fitted, ContextMode::Full);
    const auto forced = forward(fitted, objs, enc, gold, true);
    const auto free = predict_sequence(fitted, toy.scene_of(task), task);
    for (std::size_t i = 0; i < free.predicted.size(); ++i) {
      const auto row = free.step_logits.row(i);
      CHECK(free.predicted[i] == std::max_element(row.begin(), row.end()) - row.begin());
    }
    CHECK(free.predicted == predict_sequence(fitted, toy.scene_of(task), task).predicted);
    if (forced.predicted == gold) {
      ++perfect;
      CHECK(free.predicted == gold);
      CHECK(free.step_logits == forced.step_logits);
    }
  }
  CHECK(perfect > static_cast<int>(toy.tasks.size()) / 2);

  SUBCASE("plan decoding emits step texts and groundings") {
    const auto& task = toy.tasks[0];
    const auto plan = predict_sequence(fitted, toy.scene_of(task), task, PredictOptions{ContextMode::Full, true, 5});
    CHECK_FALSE(plan.step_texts.empty());
    CHECK(plan.step_texts.size() == plan.predicted.size());
    for (const auto& text : plan.step_texts) CHECK_FALSE(text.empty());
    const auto again = predict_sequence(fitted, toy.scene_of(task), task, PredictOptions{ContextMode::Full, true, 5});
    CHECK(again.step_texts == plan.step_texts);
  }
  SUBCASE("a decoder that never terminates a step runs out of budget") {
    auto stuck = fitted;
    stuck.params.lm_bias(0, Vocabulary::kGrd) = -1e4;
    const auto& task = toy.tasks[0];
    CHECK_THROWS_AS(predict_sequence(stuck, toy.scene_of(task), task, PredictOptions{ContextMode::Full, true, 2}),
                    GrounderError);
  }
}

TEST_CASE("prediction records") {
  taskgen::Task task{"t1", "s1", "d", {{1, "a", "x-1"}, {2, "b", "y-1"}, {3, "c", "x-1"}}, {3}};
  const auto recs = to_step_predictions(task, {"x-1", "z-9"});
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].correct);
  CHECK_FALSE(recs[1].correct);
  CHECK_FALSE(recs[2].correct);
  CHECK(recs[2].predicted_id.empty());
  CHECK(recs[2].ambiguous);
  const auto back = StepPrediction::from_json(recs[2].to_json());
  CHECK(back.predicted_id.empty());
  CHECK(back.gold_id == "x-1");
  CHECK(back.ambiguous);
}

TEST_CASE("chat-model grounding baseline") {
  const auto scene = scene::load_scene(read_text_file(std::string(SG_FIXTURE_DIR) + "/fig_a3_scene.json"));
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"Go to the long desk against the wall.", "desk-15"},
      {"Fetch a plate from a bunch of steel plates below the picture frame.", "plates-17"},
      {"Walk to the table close to a cabinet.", "table-23"},
      {"Put the plate on it.", "table-23"},
      {"Return to the long desk.", "desk-15"},
      {"Choose a cup from those white, plastic cups on the desk.", "cups-19"},
      {"Fill it with coffee at the coffee maker.", "coffee maker-16"},
      {"Go back to the table.", "table-23"},
      {"Put down the cup of coffee.", "table-23"}};
  taskgen::Task task{"coffee", scene.scene_id(), "Make me a cup of coffee and serve it on a plate.", {}, {}};
  for (const auto& [text, id] : steps) task.steps.push_back({static_cast<int>(task.steps.size()) + 1, text, id});
  const std::string example_answer =
      "1. desk-15\n2. plates-17\n3. table-23\n4. table-23\n5. desk-15\n6. cups-19\n7. coffee maker-16\n"
      "8. table-23\n9. table-23";

  SUBCASE("prompt carries the few-shot exchange and the scene boxes") {
    const auto msgs = build_baseline_prompt(scene, task);
    REQUIRE(msgs.size() == 6);
    CHECK(msgs[0].role == "system");
    CHECK(msgs[0].content.find("<label-id>") != std::string::npos);
    CHECK(msgs[3].role == "assistant");
    CHECK(msgs[3].content == example_answer);
    CHECK(msgs[4].content.find("9. Put down the cup of coffee.") != std::string::npos);
    const auto scene_doc = json::parse(msgs[5].content);
    CHECK(scene_doc.at("table-24").at("position") == json::array({-4.91, 2.25, -0.97}));
    CHECK(scene_doc.size() == scene.size());
  }
  SUBCASE("example answer parses step by step") {
    auto endpoint_ptr = llm::ScriptedChatEndpoint::always(example_answer);
    auto& endpoint = *endpoint_ptr;
    const auto ids = llm_baseline_ground(endpoint, scene, task);
    REQUIRE(ids.size() == 9);
    CHECK(ids[0] == "desk-15");
    CHECK(ids[8] == "table-23");
    const auto recs = to_step_predictions(task, ids);
    CHECK(std::all_of(recs.begin(), recs.end(), [](const StepPrediction& p) { return p.correct; }));
  }
  SUBCASE("a missing line leaves that step unanswered") {
    const auto ids = parse_baseline_response(example_answer.substr(0, example_answer.rfind('\n')), 9);
    CHECK(ids[7] == "table-23");
    CHECK(ids[8].empty());
    CHECK_FALSE(to_step_predictions(task, ids)[8].correct);
  }
  SUBCASE("ids outside the scene are kept and scored wrong") {
    const auto ids = parse_baseline_response("1. <ghost-99>\n2) plates-17\nnonsense\n3. ???", 3);
    CHECK(ids[0] == "ghost-99");
    CHECK(ids[1] == "plates-17");
    CHECK(ids[2].empty());
    CHECK_FALSE(to_step_predictions(task, ids)[0].correct);
  }
  SUBCASE("unreachable service") {
    auto endpoint_ptr = llm::ScriptedChatEndpoint::unreachable();
    auto& endpoint = *endpoint_ptr;
    llm::RetryPolicy policy;
    policy.sleep = [](std::chrono::milliseconds) {};
    CHECK_THROWS_AS(llm_baseline_ground(endpoint, scene, task, policy), llm::LlmError);
  }
  SUBCASE("offline mock matches categories and is deterministic") {
    llm::FunctionChatEndpoint endpoint(baseline_mock_reply);
    const auto ids = llm_baseline_ground(endpoint, scene, task);
    CHECK(ids[6] == "coffee maker-16");
    CHECK(ids == llm_baseline_ground(endpoint, scene, task));
    for (const auto& id : ids) CHECK(scene.contains(id));
  }
}

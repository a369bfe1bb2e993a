#pragma once

#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rhia/grad_check.hpp"
#include "rhia/network.hpp"
#include "rhia/synthetic.hpp"

namespace rhia {

// A two-bag problem for gradient checking.
struct ToyProblem {
  ModelConfig cfg;
  RelationHierarchy hierarchy;
  Vocabulary vocab;
  std::vector<Bag> bags;
};

inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.word_dim = 4;
  c.pos_dim = 2;
  c.input_dim = 6;
  c.filters = 5;
  c.levels = 3;
  c.max_len = 12;
  c.window = 3;
  return c;
}

// Six relations plus NA over three levels, two bags of two and three
// sentences with different gold relations. `default_dims` keeps the
// published layer sizes instead of the toy ones.
inline ToyProblem toy_problem(bool default_dims = false, std::uint64_t seed = 3) {
  SyntheticPlan plan;
  plan.relations = {"/business/company/founders", "/business/company/place_founded", "/business/person/company",
                    "/location/location/contains", "/people/person/nationality", "/people/person/place_lived"};
  plan.vocab_size = 20;
  plan.entities = 24;
  plan.bags = 40;
  plan.skew = "uniform";
  plan.test_fraction = 0;
  plan.min_sentences = 1;
  plan.max_sentences = 3;
  plan.min_gap = 1;
  plan.max_gap = 1;
  plan.noise_rate = 0;
  plan.seed = seed;
  const auto corpus = generate_synthetic(plan);

  ToyProblem t;
  t.cfg = default_dims ? ModelConfig{} : toy_model_config();
  t.vocab = vocabulary_from_records(corpus.train);
  t.hierarchy = RelationHierarchy::build(relation_names(corpus.train), t.cfg.levels);
  auto set = build_bags(corpus.train, t.vocab, t.hierarchy, BagMode::Train, t.cfg.max_len);
  const Bag* two = nullptr;
  const Bag* three = nullptr;
  for (const auto& b : set.bags) {
    if (!two && b.instances.size() == 2 && b.relation() != 0) two = &b;
    if (!three && b.instances.size() == 3 && b.relation() != 0 && (!two || b.relation() != two->relation())) three = &b;
  }
  if (!two || !three) throw DataError("toy problem: corpus lacks bags of two and three sentences");
  t.bags = {*two, *three};
  return t;
}

struct NamedCheck {
  std::string op;
  GradCheckReport report;
  std::set<std::string> recorded;  // op names the case put on the tape
};

namespace detail {

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

}  // namespace detail

// Gradient check of every primitive in isolation. Each case feeds random
// parameters through one primitive and reduces with sum((y * C)^2) for a
// fixed random C, so a failure names the primitive whose rule is wrong.
inline std::vector<NamedCheck> check_primitives(const GradCheckOptions& opt, std::uint64_t seed = 5) {
  using T = double;
  using namespace ops;
  std::mt19937_64 rng(seed);
  std::vector<NamedCheck> out;

  auto run = [&](const std::string& op, std::vector<Tensor<T>*> params,
                 std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)> body) {
    std::vector<NamedTensor<T>> named;
    for (std::size_t i = 0; i < params.size(); ++i) named.push_back({op + ".in" + std::to_string(i), params[i]});
    Tensor<T> proj;
    std::set<std::string> recorded;
    auto fn = [&](Tape<T>& tape) {
      std::vector<Var<T>> in;
      for (auto* p : params) in.push_back(tape.param(*p));
      Var<T> y = body(tape, in);
      if (proj.empty()) {
        std::mt19937_64 prng(0xC0FFEE);
        proj = rhia::detail::random_tensor<T>(y.value().shape(), prng);
      }
      for (std::uint32_t i = 0; i < tape.size(); ++i) recorded.insert(tape.op_name(i));
      return sum_squares(mul(y, tape.constant(proj)));
    };
    auto report = grad_check<T>(fn, named, opt);
    out.push_back({op, std::move(report), std::move(recorded)});
  };

  auto a = rhia::detail::random_tensor<T>({3, 4}, rng), b = rhia::detail::random_tensor<T>({4, 2}, rng);
  run("matmul", {&a, &b}, [](Tape<T>&, const auto& v) { return matmul(v[0], v[1]); });
  auto bt = rhia::detail::random_tensor<T>({2, 4}, rng);
  run("matmul_t", {&a, &bt}, [](Tape<T>&, const auto& v) { return matmul(v[0], v[1], false, true); });
  auto w = rhia::detail::random_tensor<T>({4, 3}, rng), bias = rhia::detail::random_tensor<T>({3}, rng);
  run("add_row", {&w, &bias}, [](Tape<T>&, const auto& v) { return add_row(v[0], v[1]); });
  auto x = rhia::detail::random_tensor<T>({3, 4}, rng), y = rhia::detail::random_tensor<T>({3, 4}, rng);
  run("add", {&x, &y}, [](Tape<T>&, const auto& v) { return add(v[0], v[1]); });
  run("mul", {&x, &y}, [](Tape<T>&, const auto& v) { return mul(v[0], v[1]); });
  run("scale", {&x}, [](Tape<T>&, const auto& v) { return scale(v[0], T(-1.7)); });
  run("sigmoid", {&x}, [](Tape<T>&, const auto& v) { return sigmoid(v[0]); });
  run("tanh", {&x}, [](Tape<T>&, const auto& v) { return tanh(v[0]); });
  run("relu", {&x}, [](Tape<T>&, const auto& v) { return relu(v[0]); });
  auto beta = rhia::detail::random_tensor<T>({3, 4}, rng, 0.05, 0.95);
  run("gate", {&beta, &x, &y}, [](Tape<T>&, const auto& v) { return gate(v[0], v[1], v[2]); });
  auto z = rhia::detail::random_tensor<T>({3, 2}, rng);
  run("concat_cols", {&x, &z}, [](Tape<T>&, const auto& v) { return concat_cols<T>({v[0], v[1]}); });
  auto table = rhia::detail::random_tensor<T>({5, 3}, rng);
  run("gather_rows", {&table}, [](Tape<T>&, const auto& v) { return gather_rows(v[0], {4, 0, 4, 2}); });
  auto h = rhia::detail::random_tensor<T>({4}, rng);
  run("broadcast_rows", {&h}, [](Tape<T>&, const auto& v) { return broadcast_rows(v[0], 3); });
  auto seq = rhia::detail::random_tensor<T>({7, 2}, rng);
  run("window_stack", {&seq}, [](Tape<T>&, const auto& v) { return window_stack(v[0], {0, 3, 7}, 3); });
  auto cw = rhia::detail::random_tensor<T>({6, 3}, rng), cb = rhia::detail::random_tensor<T>({3}, rng);
  run("conv1d", {&seq, &cw, &cb}, [](Tape<T>&, const auto& v) { return conv1d(v[0], v[1], v[2], {0, 3, 7}, 3); });
  auto fmap = rhia::detail::random_tensor<T>({7, 2}, rng);
  run("segment_max", {&fmap},
      [](Tape<T>&, const auto& v) { return segment_max(v[0], {0, 3, 7}, {{0, 1}, {1, 2}}); });
  run("softmax", {&x}, [](Tape<T>&, const auto& v) { return softmax_rows(v[0]); });
  run("log_softmax", {&x}, [](Tape<T>&, const auto& v) { return log_softmax_rows(v[0]); });
  auto gain = rhia::detail::random_tensor<T>({4}, rng), shift = rhia::detail::random_tensor<T>({4}, rng);
  run("layer_norm", {&x, &gain, &shift},
      [](Tape<T>&, const auto& v) { return layer_norm_rows(v[0], v[1], v[2], T(1e-5)); });
  auto scores = rhia::detail::random_tensor<T>({5, 1}, rng);
  run("segment_softmax", {&scores}, [](Tape<T>&, const auto& v) { return segment_softmax(v[0], {0, 2, 5}); });
  auto weights = rhia::detail::random_tensor<T>({5, 1}, rng), rows = rhia::detail::random_tensor<T>({5, 3}, rng);
  run("segment_weighted_sum", {&weights, &rows},
      [](Tape<T>&, const auto& v) { return segment_weighted_sum(v[0], v[1], {0, 2, 5}); });
  run("dropout", {&x}, [](Tape<T>&, const auto& v) {
    std::mt19937_64 r(17);
    return dropout(v[0], T(0.5), r);
  });
  auto logits = rhia::detail::random_tensor<T>({3, 4}, rng);
  run("nll", {&logits}, [](Tape<T>&, const auto& v) { return nll(v[0], {1, 3, 0}); });
  run("sum_squares", {&x}, [](Tape<T>&, const auto& v) { return sum_squares(v[0]); });
  auto s1 = rhia::detail::random_tensor<T>({1}, rng), s2 = rhia::detail::random_tensor<T>({1}, rng);
  run("weighted_sum", {&s1, &s2}, [](Tape<T>&, const auto& v) { return weighted_sum<T>({v[0], v[1]}, {0.3, -1.2}); });
  return out;
}

// Gradient check of the full objective on a toy problem, dropout off.
inline GradCheckReport check_composed(const ToyProblem& t, const GradCheckOptions& opt, std::uint64_t seed = 1) {
  auto params = init_params<double>(t.cfg, t.vocab, t.hierarchy, seed);
  const auto batch = make_batch(t.bags, t.hierarchy, t.cfg);
  LossWeights w;
  std::vector<NamedTensor<double>> named;
  params.for_each([&](const std::string& n, Tensor<double>& x, bool) { named.push_back({n, &x}); });
  return grad_check<double>(
      [&](Tape<double>& tape) {
        ForwardOptions fo;
        fo.loss = &w;
        return forward(tape, params, t.cfg, batch, fo).loss;
      },
      named, opt);
}

}  // namespace rhia

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "avs/scorer.hpp"
#include "oracles.hpp"

using namespace avs;

namespace {

ScorerConfig tiny_config() {
  ScorerConfig c;
  c.image_side = 16;
  c.patch = 8;
  c.dim = 8;
  c.heads = 2;
  c.blocks = 1;
  c.ffn_dim = 16;
  c.k_refs = 3;
  return c;
}

std::vector<ImageF> make_refs(int n, int side, uint64_t seed) {
  std::vector<ImageF> refs;
  for (int i = 0; i < n; ++i) refs.push_back(oracles::random_image(side, side, 3, seed + i));
  return refs;
}

std::vector<const ImageF*> ptrs(const std::vector<ImageF>& imgs) {
  std::vector<const ImageF*> p;
  for (const auto& i : imgs) p.push_back(&i);
  return p;
}

}  // namespace

TEST_CASE("fresh model predicts exactly 0.5 everywhere") {
  ScorerModel model = init_scorer(ScorerConfig{}, 3);
  ImageF query = oracles::random_image(64, 64, 3, 1);
  auto refs = make_refs(5, 64, 10);
  ImageF map = scorer_forward<float>(model, query, ptrs(refs));
  REQUIRE(map.height == 64);
  REQUIRE(map.width == 64);
  REQUIRE(map.channels == 1);
  for (float v : map.data) CHECK(v == 0.5f);
}

TEST_CASE("forward is deterministic and in (0,1)") {
  ScorerModel model = init_scorer(tiny_config(), 4);
  // nudge the head off zero so outputs move away from 0.5
  const auto& e = model.entry("head.w2");
  Rng rng(9);
  for (size_t i = 0; i < e.count; ++i)
    model.params[e.offset + i] = static_cast<float>(rng.uniform(-0.5, 0.5));

  ImageF query = oracles::random_image(16, 16, 3, 2);
  auto refs = make_refs(2, 16, 20);
  ImageF a = scorer_forward<float>(model, query, ptrs(refs));
  ImageF b = scorer_forward<float>(model, query, ptrs(refs));
  for (size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data[i] == b.data[i]);
    CHECK(a.data[i] > 0.0f);
    CHECK(a.data[i] < 1.0f);
  }
}

TEST_CASE("forward validates inputs") {
  ScorerModel model = init_scorer(tiny_config(), 4);
  ImageF query = oracles::random_image(16, 16, 3, 2);
  ImageF wrong = oracles::random_image(8, 16, 3, 2);
  auto refs = make_refs(2, 16, 20);
  std::vector<const ImageF*> none;
  CHECK_THROWS(scorer_forward<float>(model, query, none));
  auto too_many = make_refs(4, 16, 30);
  CHECK_THROWS(scorer_forward<float>(model, query, ptrs(too_many)));
  std::vector<const ImageF*> bad = {&wrong};
  CHECK_THROWS(scorer_forward<float>(model, query, bad));
}

TEST_CASE("reference order does not change the output") {
  ScorerModel model = init_scorer(ScorerConfig{}, 6);
  const auto& e = model.entry("head.w2");
  Rng rng(11);
  for (size_t i = 0; i < e.count; ++i)
    model.params[e.offset + i] = static_cast<float>(rng.uniform(-0.5, 0.5));

  ImageF query = oracles::random_image(64, 64, 3, 3);
  auto refs = make_refs(5, 64, 40);
  ImageF base = scorer_forward<float>(model, query, ptrs(refs));

  std::vector<const ImageF*> perm = {&refs[3], &refs[0], &refs[4], &refs[2], &refs[1]};
  ImageF shuffled = scorer_forward<float>(model, query, perm);
  for (size_t i = 0; i < base.data.size(); ++i)
    CHECK(std::abs(base.data[i] - shuffled.data[i]) < 1e-5f);
}

TEST_CASE("duplicating a reference perturbs less than replacing it") {
  ScorerModel model = init_scorer(ScorerConfig{}, 7);
  const auto& e = model.entry("head.w2");
  Rng rng(13);
  for (size_t i = 0; i < e.count; ++i)
    model.params[e.offset + i] = static_cast<float>(rng.uniform(-0.5, 0.5));

  int dup_wins = 0;
  const int cases = 50;
  for (int t = 0; t < cases; ++t) {
    ImageF query = oracles::random_image(64, 64, 3, 500 + t);
    auto refs = make_refs(3, 64, 1000 + 10 * t);
    ImageF unrelated = oracles::random_image(64, 64, 3, 9000 + t);

    ImageF base = scorer_forward<float>(model, query, ptrs(refs));
    std::vector<const ImageF*> dup = {&refs[0], &refs[1], &refs[2], &refs[2]};
    std::vector<const ImageF*> rep = {&refs[0], &refs[1], &refs[2], &unrelated};
    ImageF with_dup = scorer_forward<float>(model, query, dup);
    ImageF with_rep = scorer_forward<float>(model, query, rep);
    double d_dup = 0, d_rep = 0;
    for (size_t i = 0; i < base.data.size(); ++i) {
      d_dup += std::abs(static_cast<double>(with_dup.data[i]) - base.data[i]);
      d_rep += std::abs(static_cast<double>(with_rep.data[i]) - base.data[i]);
    }
    if (d_dup < d_rep) ++dup_wins;
  }
  CHECK(dup_wins > cases / 2);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  ScorerModel model = init_scorer(tiny_config(), 5);
  ImageF query = oracles::random_image(16, 16, 3, 4);
  auto refs = make_refs(2, 16, 50);
  std::shared_ptr<ScorerTape<float>> tape;
  scorer_forward<float>(model, query, ptrs(refs), &tape);
  std::vector<float> upstream(16 * 16, 0.0f);
  auto grads = scorer_backward<float>(model, *tape, upstream);
  for (float g : grads) CHECK(g == 0.0f);
}

TEST_CASE("model has no reference positional encoding parameter") {
  ScorerModel model = init_scorer(tiny_config(), 5);
  for (const auto& e : model.layout) CHECK(e.name.find("posenc") == std::string::npos);
}

TEST_CASE("backward matches central finite differences per parameter group") {
  ScorerConfig cfg = tiny_config();
  ScorerModel model = init_scorer(cfg, 8);
  // random head so every path carries signal
  const auto& head = model.entry("head.w2");
  Rng hrng(17);
  for (size_t i = 0; i < head.count; ++i)
    model.params[head.offset + i] = static_cast<float>(hrng.uniform(-0.4, 0.4));

  ImageF query = oracles::random_image(16, 16, 3, 5);
  auto refs = make_refs(2, 16, 60);
  auto refp = ptrs(refs);

  std::vector<float> upstream(16 * 16);
  Rng urng(19);
  for (auto& u : upstream) u = static_cast<float>(urng.uniform(-1.0, 1.0));

  auto loss_at = [&](const ScorerModel& m) {
    std::shared_ptr<ScorerTape<double>> t;
    scorer_forward<double>(m, query, refp, &t);
    const auto& map = scorer_map<double>(*t);
    double L = 0;
    for (size_t i = 0; i < map.size(); ++i)
      L += static_cast<double>(upstream[i]) * map[i];
    return L;
  };

  std::shared_ptr<ScorerTape<double>> tape;
  scorer_forward<double>(model, query, refp, &tape);
  auto grads = scorer_backward<double>(model, *tape, upstream);

  const double h = 1e-3;
  Rng pick(23);
  int checked = 0, bad = 0;
  // probe several entries from every parameter tensor
  for (const auto& e : model.layout) {
    for (int t = 0; t < 7; ++t) {
      size_t idx = e.offset + static_cast<size_t>(pick.below(e.count));
      float saved = model.params[idx];
      model.params[idx] = static_cast<float>(saved + h);
      double lp = loss_at(model);
      model.params[idx] = static_cast<float>(saved - h);
      double lm = loss_at(model);
      model.params[idx] = saved;
      double fd = (lp - lm) / (2 * h);
      double rel = std::abs(grads[idx] - fd) / std::max(std::abs(fd), 1e-6);
      if (rel >= 1e-2) ++bad;
      ++checked;
    }
  }
  CHECK(checked >= 200);
  CHECK(bad == 0);
}

TEST_CASE("training overfits a single triplet") {
  ScorerConfig cfg = tiny_config();
  auto query = std::make_shared<ImageF>(oracles::random_image(16, 16, 3, 6));
  auto target = std::make_shared<ImageF>(16, 16, 1);
  Rng trng(29);
  for (auto& v : target->data) v = static_cast<float>(trng.uniform(0.2, 0.9));
  TripletSample sample;
  sample.query = query;
  sample.target = target;
  for (int i = 0; i < 2; ++i)
    sample.refs.push_back(std::make_shared<ImageF>(oracles::random_image(16, 16, 3, 70 + i)));

  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 1;
  tc.seed = 1;
  tc.log_every = 500;
  TrainResult result = train_scorer({sample}, cfg, tc);

  std::vector<const ImageF*> refs;
  for (const auto& r : sample.refs) refs.push_back(r.get());
  ImageF pred = scorer_forward<float>(result.model, *query, refs);
  double mse = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    double d = static_cast<double>(pred.data[i]) - target->data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  CHECK(mse < 1e-3);
  CHECK(result.log.size() == 4);
}

TEST_CASE("training is deterministic for a fixed seed") {
  ScorerConfig cfg = tiny_config();
  std::vector<TripletSample> data;
  for (int i = 0; i < 3; ++i) {
    TripletSample s;
    s.query = std::make_shared<ImageF>(oracles::random_image(16, 16, 3, 80 + i));
    auto t = std::make_shared<ImageF>(16, 16, 1, 0.5f + 0.1f * i);
    s.target = t;
    s.refs.push_back(std::make_shared<ImageF>(oracles::random_image(16, 16, 3, 90 + i)));
    data.push_back(s);
  }
  TrainConfig tc;
  tc.steps = 50;
  tc.batch_size = 2;
  tc.seed = 33;
  tc.workers = 2;  // parallel members must not change the reduction order
  TrainResult a = train_scorer(data, cfg, tc);
  TrainResult b = train_scorer(data, cfg, tc);
  REQUIRE(a.model.params.size() == b.model.params.size());
  for (size_t i = 0; i < a.model.params.size(); ++i)
    CHECK(a.model.params[i] == b.model.params[i]);
}

TEST_CASE("predict_quality is the map mean inside (0,1)") {
  ScorerModel model = init_scorer(tiny_config(), 10);
  ImageF query = oracles::random_image(16, 16, 3, 7);
  auto refs = make_refs(2, 16, 100);
  double q = predict_quality(model, query, ptrs(refs));
  CHECK(q == doctest::Approx(0.5).epsilon(1e-7));  // fresh model: constant 0.5
  CHECK(q > 0.0);
  CHECK(q < 1.0);
}

TEST_CASE("select_refs picks nearest by camera position, excluding the query id") {
  auto make_view = [](int id, double x) {
    CameraView v;
    v.id = id;
    v.rotation = Mat3::identity();
    v.translation = {-x, 0, 0};  // camera position (x, 0, 0)
    return v;
  };
  std::vector<CameraView> views = {make_view(0, 0), make_view(1, 1), make_view(2, 2),
                                   make_view(3, 10)};
  std::vector<const CameraView*> avail;
  for (const auto& v : views) avail.push_back(&v);

  CameraView query = make_view(99, 0.4);
  auto out = select_refs(query, avail, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0]->id == 0);
  CHECK(out[1]->id == 1);

  // k larger than the pool returns everything (query id excluded)
  CameraView self = make_view(2, 2);
  auto all = select_refs(self, avail, 10);
  CHECK(all.size() == 3);
  for (const auto* v : all) CHECK(v->id != 2);
}

TEST_CASE("weights round-trip and config-mismatch rejection") {
  ScorerConfig cfg = tiny_config();
  ScorerModel model = init_scorer(cfg, 11);
  Rng rng(37);
  for (auto& p : model.params) p = static_cast<float>(rng.uniform(-0.3, 0.3));
  save_scorer(model, "test_tmp_scorer.avst", 11, 777);
  ScorerModel back = load_scorer("test_tmp_scorer.avst");
  CHECK(back.config == cfg);
  REQUIRE(back.params.size() == model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i) CHECK(back.params[i] == model.params[i]);

  // tamper with the sidecar config: shapes no longer match
  {
    std::ifstream in("test_tmp_scorer.avst.json");
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    size_t pos = s.find("\"dim\": 8");
    REQUIRE(pos != std::string::npos);
    s.replace(pos, 8, "\"dim\": 16");
    std::ofstream out("test_tmp_scorer.avst.json");
    out << s;
  }
  CHECK_THROWS(load_scorer("test_tmp_scorer.avst"));
}

TEST_CASE("scorer_prepare_input handles square and non-square inputs") {
  ImageF square = oracles::random_image(64, 64, 3, 8);
  ImageF same = scorer_prepare_input(square, 64);
  for (size_t i = 0; i < square.data.size(); ++i) CHECK(same.data[i] == square.data[i]);

  ImageF wide = oracles::random_image(48, 96, 3, 9);
  ImageF prepared = scorer_prepare_input(wide, 64);
  CHECK(prepared.height == 64);
  CHECK(prepared.width == 64);
}

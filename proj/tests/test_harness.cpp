#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cap/gradcheck.hpp"
#include "cap/plot.hpp"
#include "cap/tensor_io.hpp"
#include "cap/trainer.hpp"
#include "test_util.hpp"

using namespace cap;
using cap::test::TempDir;

namespace {

SynthConfig small_synth() {
  SynthConfig s;
  s.n_frames = 30;
  return s;
}

TrainConfig small_config(int window = 6) {
  TrainConfig c;
  c.window_len = window;
  c.epochs = 2;
  return c;
}

std::vector<ClipSample> clips_of(const Dataset& data, const TrainConfig& cfg) {
  SamplerConfig sc;
  sc.window_len = cfg.window_len;
  sc.seed = cfg.seed;
  const auto records = data.records();
  return sample_corpus(records, sc).clips;
}

// One clip per video keeps the runs short.
std::vector<ClipSample> one_per_video(const std::vector<ClipSample>& clips) {
  std::vector<ClipSample> out;
  for (const auto& c : clips)
    if (out.empty() || out.back().video_id != c.video_id) out.push_back(c);
  return out;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string log_text(const std::vector<UpdateRecord>& recs) {
  std::string s;
  for (const auto& r : recs) s += r.to_json_line() + "\n";
  return s;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config defaults, JSON round trip and rejection") {
  const TrainConfig d;
  CHECK(d.lr_self_attention == 1e-6);
  CHECK(d.lr_t2i == 1e-6);
  CHECK(d.lr_gru == 1e-5);
  CHECK(d.lr_decoder == 1e-4);
  CHECK(d.epochs == 10);
  CHECK(d.batch_size == 2);
  CHECK(d.t2i_layers == 3);
  CHECK(d.lambda == 5.0);
  CHECK(d.optimizer == "sgd");
  CHECK(d.lr(ParamGroup::kSelfAttention) == 1e-6);
  CHECK(d.lr(ParamGroup::kDecoder) == 1e-4);

  const auto c = TrainConfig::from_json(R"({"epochs": 3, "lambda": 2.5, "seed": 9, "placeholder_text_mode": true})");
  CHECK(c.epochs == 3);
  CHECK(c.lambda == 2.5);
  CHECK(c.seed == 9);
  CHECK(c.placeholder_text_mode);
  CHECK(c.lr_gru == 1e-5);
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());

  CHECK_THROWS_AS(TrainConfig::from_json(R"({"epoch": 3})"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"lr_gru": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"epochs": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"optimizer": "rmsprop"})"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json("[1, 2]"), std::invalid_argument);
}

TEST_CASE("every parameter sits in exactly one learning-rate group") {
  TrainConfig cfg;
  CapModel model(cfg.model_config(), 40);
  const ParamList ps = model.parameters();
  CHECK_NOTHROW(check_param_partition(ps));
  std::map<ParamGroup, int> count;
  for (const Param* p : ps) ++count[p->group];
  CHECK(count.size() == 4);
  for (const Param* p : ps) {
    if (p->name.rfind("decoder", 0) == 0) CHECK(p->group == ParamGroup::kDecoder);
    if (p->name.rfind("fusion", 0) == 0) CHECK(p->group == ParamGroup::kT2I);
    if (p->name.rfind("gru", 0) == 0) CHECK(p->group == ParamGroup::kGru);
    if (p->name.rfind("encoder", 0) == 0 || p->name.rfind("patch", 0) == 0) CHECK(p->group == ParamGroup::kSelfAttention);
  }
  ParamList dup = ps;
  dup.push_back(ps.front());
  CHECK_THROWS_AS(check_param_partition(dup), std::logic_error);
}

TEST_CASE("epoch order is a permutation fixed by seed and epoch") {
  const auto a = Trainer::epoch_order(3, 4, 17);
  CHECK(a == Trainer::epoch_order(3, 4, 17));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(a != Trainer::epoch_order(3, 5, 17));
  CHECK(a != Trainer::epoch_order(4, 4, 17));
}

TEST_CASE("one update per sample at batch size 1") {
  const Dataset data(generate(5, 2, 0.5, small_synth()));
  auto cfg = small_config();
  cfg.batch_size = 1;
  const auto clips = one_per_video(clips_of(data, cfg));
  REQUIRE(clips.size() == 2);
  Trainer t(cfg, corpus_vocabulary(data));
  std::ostringstream log;
  const auto recs = t.train(data, clips, 1, &log);
  CHECK(recs.size() == 2);
  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(recs[0].samples.size() == 1);

  cfg.batch_size = 2;
  Trainer t2(cfg, corpus_vocabulary(data));
  const auto batched = t2.train(data, clips, 1);
  CHECK(batched.size() == 1);
  CHECK(batched[0].samples.size() == 2);
  const auto& l = batched[0].loss;
  CHECK(std::abs(l.total - (l.attention + l.lambda * l.anticipation)) < 1e-9);
}

TEST_CASE("resumed training is bitwise identical to an uninterrupted run") {
  TempDir dir("resume");
  const Dataset data(generate(6, 3, 0.5, small_synth()));
  auto cfg = small_config(4);
  cfg.epochs = 4;
  cfg.batch_size = 1;
  const auto clips = one_per_video(clips_of(data, cfg));

  Trainer straight(cfg, corpus_vocabulary(data));
  const auto full = straight.train(data, clips, 4);
  straight.save_checkpoint(dir.path / "straight.capt");

  Trainer first(cfg, corpus_vocabulary(data));
  auto part = first.train(data, clips, 2);
  first.save_checkpoint(dir.path / "half.capt");
  Trainer resumed = Trainer::load_checkpoint(dir.path / "half.capt");
  CHECK(resumed.epoch() == 2);
  CHECK(resumed.vocab() == first.vocab());
  const auto rest = resumed.train(data, clips, 4);
  part.insert(part.end(), rest.begin(), rest.end());
  CHECK(log_text(part) == log_text(full));
  resumed.save_checkpoint(dir.path / "resumed.capt");
  CHECK(read_all(dir.path / "resumed.capt") == read_all(dir.path / "straight.capt"));
}

TEST_CASE("adam state survives a checkpoint") {
  TempDir dir("adam");
  const Dataset data(generate(7, 2, 0.5, small_synth()));
  auto cfg = small_config(4);
  cfg.optimizer = "adam";
  cfg.batch_size = 1;
  const auto clips = one_per_video(clips_of(data, cfg));
  Trainer a(cfg, corpus_vocabulary(data));
  const auto full = a.train(data, clips, 2);
  Trainer b(cfg, corpus_vocabulary(data));
  auto part = b.train(data, clips, 1);
  b.save_checkpoint(dir.path / "b.capt");
  Trainer c = Trainer::load_checkpoint(dir.path / "b.capt");
  const auto rest = c.train(data, clips, 2);
  part.insert(part.end(), rest.begin(), rest.end());
  CHECK(log_text(part) == log_text(full));
}

TEST_CASE("training loss falls over ten epochs on ten videos") {
  std::vector<double> drops;
  for (std::uint64_t seed : {1, 2, 3}) {
    const Dataset data(generate(100 + seed, 10, 0.5, small_synth()));
    auto cfg = small_config(5);
    cfg.seed = seed;
    cfg.batch_size = 1;
    const auto clips = one_per_video(clips_of(data, cfg));
    Trainer t(cfg, corpus_vocabulary(data));
    const auto recs = t.train(data, clips, 10);
    double first = 0, last = 0;
    int nf = 0, nl = 0;
    for (const auto& r : recs) {
      if (r.epoch == 0) first += r.loss.total, ++nf;
      if (r.epoch == 9) last += r.loss.total, ++nl;
    }
    drops.push_back(last / nl - first / nf);
    MESSAGE("seed " << seed << ": epoch 1 " << first / nf << " -> epoch 10 " << last / nl);
  }
  std::sort(drops.begin(), drops.end());
  CHECK(drops[1] < 0);
}

TEST_CASE("a non-finite frame aborts training with the sample id") {
  auto scen = generate(8, 1, 1.0, small_synth());
  auto cfg = small_config(4);
  Dataset clean(scen);
  const auto clips = one_per_video(clips_of(clean, cfg));
  REQUIRE(clips.size() == 1);
  scen[0].frames[static_cast<std::size_t>(clips[0].start + 1)][10] = std::nanf("");
  const Dataset data(scen);
  Trainer t(cfg, corpus_vocabulary(data));
  try {
    t.train(data, clips, 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.sample_id == clip_key(clips[0]));
    CHECK(std::string(e.what()).find(clip_key(clips[0])) != std::string::npos);
  }
}

TEST_CASE("placeholder text matches full text when the facts already are the placeholder") {
  auto scen = generate(9, 4, 0.5, small_synth());
  for (auto& s : scen) s.record.fact = std::string(kPlaceholderText);
  const Dataset data(scen);
  auto cfg = small_config(4);
  const auto clips = one_per_video(clips_of(data, cfg));
  Trainer t(cfg, corpus_vocabulary(data));
  EvalOptions full, ph;
  ph.placeholder_text = true;
  const auto a = evaluate(t.model(), t.vocab(), data, clips, full);
  const auto b = evaluate(t.model(), t.vocab(), data, clips, ph);
  REQUIRE(a.predictions.size() == b.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) CHECK(a.predictions[i].p_hat == b.predictions[i].p_hat);
  CHECK(report_to_json(a.report) == report_to_json(b.report));
}

TEST_CASE("placeholder mode needs no text annotations") {
  auto scen = generate(10, 4, 0.5, small_synth());
  auto cfg = small_config(4);
  // Sampling validates records (facts required), so pick clips first, then strip the text.
  const auto clips = one_per_video(clips_of(Dataset(scen), cfg));
  REQUIRE(clips.size() == 4);
  for (auto& s : scen) s.record.fact.clear();
  const Dataset data(scen);
  Trainer t(cfg, Vocabulary::build(template_sentences()));
  EvalOptions ph;
  ph.placeholder_text = true;
  const auto r = evaluate(t.model(), t.vocab(), data, clips, ph);
  CHECK(r.report.n_videos == 4);
  const auto in = make_clip_input(data.video(clips[0].video_id), clips[0], t.vocab(), true, false);
  CHECK(in.text_ids == t.vocab().encode(kPlaceholderText, 15));
  CHECK(in.gt_maps.empty());
}

TEST_CASE("evaluation report, groups and dumps") {
  TempDir dir("eval");
  const Dataset data(generate(11, 6, 0.5, small_synth()));
  auto cfg = small_config(4);
  const auto clips = one_per_video(clips_of(data, cfg));
  Trainer t(cfg, corpus_vocabulary(data));
  EvalOptions o;
  o.keep_maps = true;
  const auto r = evaluate(t.model(), t.vocab(), data, clips, o);
  const auto again = evaluate(t.model(), t.vocab(), data, clips, o);
  CHECK(report_to_json(r.report) == report_to_json(again.report));
  REQUIRE(r.report.saliency);
  CHECK(r.maps.size() == clips.size());

  const auto records = data.records();
  const auto groups = group_by_attribute(r.predictions, records, "road_type");
  std::set<std::string> present;
  for (const auto& rec : records) present.insert(attribute_value(rec, "road_type"));
  CHECK(groups.size() == present.size());

  write_eval_dumps(r, dir.path);
  const auto key = clip_key(clips[0]);
  CHECK(load_tensor(dir.path / "p_hat" / (key + ".capt")).numel() == r.predictions[0].p_hat.size());
  CHECK(std::filesystem::exists(dir.path / "p_hat" / (key + ".capt")));
  CHECK(std::filesystem::exists(dir.path / "maps" / (key + ".capt")));

  write_png(pr_curve(std::vector<double>{0.9, 0.2, 0.6}, std::vector<int>{1, 0, 1}), dir.path / "pr.png");
  write_png(score_curve(r.predictions[0].p_hat, 2), dir.path / "score.png");
  const std::string png = read_all(dir.path / "pr.png");
  REQUIRE(png.size() > 8);
  CHECK(png.substr(1, 3) == "PNG");

  EvalOptions quiet;
  quiet.saliency = false;
  CHECK_FALSE(evaluate(t.model(), t.vocab(), data, clips, quiet).report.saliency);
}

TEST_CASE("checkpoint round trip keeps every parameter") {
  TempDir dir("ckpt");
  const Dataset data(generate(12, 2, 0.5, small_synth()));
  Trainer t(small_config(), corpus_vocabulary(data));
  t.save_checkpoint(dir.path / "c.capt");
  Trainer back = Trainer::load_checkpoint(dir.path / "c.capt");
  const auto a = t.model().parameters(), b = back.model().parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
  CHECK(back.config().to_json() == t.config().to_json());
  CHECK_FALSE(back.model().scaler.fitted);
}

TEST_CASE("the context scaler is fitted before training and survives a checkpoint") {
  TempDir dir("scaler");
  const Dataset data(generate(13, 2, 0.5, small_synth()));
  const auto clips = clips_of(data, small_config());
  Trainer t(small_config(), corpus_vocabulary(data));
  CHECK_FALSE(t.model().scaler.fitted);
  t.train(data, clips, 1);
  REQUIRE(t.model().scaler.fitted);
  CHECK(t.model().scaler.mean.size() == 512);
  CHECK(t.model().scaler.scale.minCoeff() > 0.0);
  CHECK(t.model().scaler.scale.maxCoeff() <= 10.0 + 1e-9);
  t.save_checkpoint(dir.path / "s.capt");
  const Trainer back = Trainer::load_checkpoint(dir.path / "s.capt");
  REQUIRE(back.model().scaler.fitted);
  CHECK(back.model().scaler.mean == t.model().scaler.mean);
  CHECK(back.model().scaler.scale == t.model().scaler.scale);
}

TEST_CASE("gradcheck fault injection names the parameter; reports repeat per seed") {
  GradcheckOptions o;
  o.seed = 41;
  o.modules = {"context_head"};
  o.corrupt_param = "gru.w_hh";
  const auto bad = run_gradcheck(o);
  CHECK_FALSE(bad.passed());
  const auto f = bad.failures();
  REQUIRE(f.size() == 1);
  CHECK(f[0].find("gru.w_hh") != std::string::npos);

  o.corrupt_param.clear();
  CHECK(run_gradcheck(o).to_json() == run_gradcheck(o).to_json());
}

}

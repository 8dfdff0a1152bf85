// cap: generate | sample | train | eval | gradcheck | validate

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cap/annotations.hpp"
#include "cap/clip_sampler.hpp"
#include "cap/gradcheck.hpp"
#include "cap/metrics.hpp"
#include "cap/plot.hpp"
#include "cap/synthdata.hpp"
#include "cap/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Config file, then --set key=value pairs (values parsed as JSON, falling back
// to a plain string).
cap::TrainConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    j = json::parse(f);
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      j[key] = json::parse(value);
    } catch (const json::parse_error&) {
      j[key] = value;
    }
  }
  return cap::TrainConfig::from_json(j.dump());
}

std::vector<cap::ClipSample> clips_for(const cap::Dataset& data, const std::string& manifest,
                                       const cap::TrainConfig& cfg) {
  if (!manifest.empty()) return cap::load_manifest(manifest);
  cap::SamplerConfig sc;
  sc.window_len = cfg.window_len;
  sc.strategy = cap::parse_strategy(cfg.strategy);
  sc.horizon_s = cfg.horizon_s;
  sc.seed = cfg.seed;
  const auto records = data.records();
  auto result = cap::sample_corpus(records, sc);
  for (const auto& n : result.notices) std::cerr << "note: " << n << '\n';
  return result.clips;
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << s;
}

int run_generate(const fs::path& out, std::uint64_t seed, int n, double mix, const cap::SynthConfig& sc) {
  const auto scenarios = cap::generate(seed, n, mix, sc);
  cap::save_corpus_dir(scenarios, out);
  int positives = 0;
  for (const auto& s : scenarios) positives += s.kind == cap::ScenarioKind::kCollision;
  std::cout << "wrote " << scenarios.size() << " scenarios (" << positives << " collisions) to " << out << '\n';
  return 0;
}

int run_validate(const fs::path& corpus, int bins) {
  const fs::path file = fs::is_directory(corpus) ? corpus / "annotations.jsonl" : corpus;
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot read " + file.string());
  std::vector<cap::AnnotationRecord> good;
  std::string line;
  std::size_t n = 0, bad = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      auto r = cap::from_json_line(line);
      const auto v = cap::validate(r);
      if (!v.empty()) {
        ++bad;
        std::cout << "line " << n << " (" << r.video_id << "): " << cap::describe(v) << '\n';
        continue;
      }
      good.push_back(std::move(r));
    } catch (const std::exception& e) {
      ++bad;
      std::cout << "line " << n << ": " << e.what() << '\n';
    }
  }
  std::cout << good.size() << " valid, " << bad << " invalid\n";
  if (!good.empty()) {
    static const char* names[5] = {"pre", "ai_co", "ai_ae", "co_ae", "post"};
    const auto h = cap::ratio_histogram(good, bins);
    for (int k = 0; k < 5; ++k) {
      std::cout << names[k] << ':';
      for (int c : h[static_cast<std::size_t>(k)]) std::cout << ' ' << c;
      std::cout << '\n';
    }
  }
  return bad == 0 ? 0 : 1;
}

int run_sample(const fs::path& corpus, const fs::path& out, const cap::TrainConfig& cfg) {
  const auto data = cap::Dataset::load(corpus);
  const auto clips = clips_for(data, "", cfg);
  cap::save_manifest(clips, out);
  int pos = 0;
  for (const auto& c : clips) pos += c.positive();
  std::cout << clips.size() << " clips (" << pos << " positive) -> " << out << '\n';
  return 0;
}

struct TrainArgs {
  fs::path corpus, manifest, out = "checkpoint.capt", log, resume;
  int checkpoint_every = 0;
};

int run_train(const TrainArgs& a, const cap::TrainConfig& cfg, bool config_given) {
  const auto data = cap::Dataset::load(a.corpus);
  cap::Trainer trainer = a.resume.empty() ? cap::Trainer(cfg, cap::corpus_vocabulary(data)) : cap::Trainer::load_checkpoint(a.resume);
  if (!a.resume.empty() && config_given && !(trainer.config().to_json() == cfg.to_json()))
    std::cerr << "note: resuming with the checkpoint's own config; --config/--set only set the final epoch\n";
  const int until = config_given || a.resume.empty() ? cfg.epochs : trainer.config().epochs;
  const auto clips = clips_for(data, a.manifest.string(), trainer.config());
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot write " + a.log.string());
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.epoch() < until) {
    const int next = a.checkpoint_every > 0 ? std::min(until, trainer.epoch() + a.checkpoint_every) : until;
    const auto recs = trainer.train(data, clips, next, a.log.empty() ? nullptr : &log);
    double mean = 0;
    for (const auto& r : recs) mean += r.loss.total;
    std::cerr << "epoch " << trainer.epoch() << ": " << recs.size() << " updates, mean L_total "
              << (recs.empty() ? 0 : mean / static_cast<double>(recs.size())) << '\n';
    if (a.checkpoint_every > 0) trainer.save_checkpoint(a.out);
  }
  trainer.save_checkpoint(a.out);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained to epoch " << trainer.epoch() << " in " << s << " s -> " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  fs::path checkpoint, corpus, manifest, out;
  std::string group_by, video_score;
  bool placeholder = false, no_saliency = false, untrained = false, plots = false;
  int plot_clips = 4;
};

int run_eval(const EvalArgs& a, const cap::TrainConfig& cfg) {
  const auto data = cap::Dataset::load(a.corpus);
  std::unique_ptr<cap::Trainer> trainer;
  if (a.untrained)
    trainer = std::make_unique<cap::Trainer>(cfg, cap::corpus_vocabulary(data));
  else
    trainer = std::make_unique<cap::Trainer>(cap::Trainer::load_checkpoint(a.checkpoint));
  const auto clips = clips_for(data, a.manifest.string(), trainer->config());
  cap::EvalOptions opt;
  opt.placeholder_text = a.placeholder || trainer->config().placeholder_text_mode;
  opt.saliency = !a.no_saliency;
  opt.video_score = cap::parse_video_score(a.video_score.empty() ? trainer->config().video_score : a.video_score);
  opt.keep_maps = !a.out.empty();
  const auto result = cap::evaluate(trainer->model(), trainer->vocab(), data, clips, opt);

  std::vector<cap::MetricReport> reports{result.report};
  if (!a.group_by.empty()) {
    const auto records = data.records();
    auto groups = cap::group_by_attribute(result.predictions, records, a.group_by, opt.video_score);
    reports.insert(reports.end(), groups.begin(), groups.end());
  }
  std::cout << cap::report_table(reports);
  if (a.out.empty()) return 0;

  fs::create_directories(a.out);
  write_text(a.out / "report.json", cap::reports_to_json(reports) + "\n");
  cap::write_eval_dumps(result, a.out);
  if (a.plots) {
    fs::create_directories(a.out / "plots");
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : result.predictions) {
      scores.push_back(cap::video_score(p.p_hat, opt.video_score));
      labels.push_back(p.clip.positive() ? 1 : 0);
    }
    cap::write_png(cap::pr_curve(scores, labels), a.out / "plots" / "pr_curve.png");
    const int n = std::min<int>(a.plot_clips, static_cast<int>(result.predictions.size()));
    for (int i = 0; i < n; ++i) {
      const auto& p = result.predictions[static_cast<std::size_t>(i)];
      const std::string key = cap::clip_key(p.clip);
      cap::write_png(cap::score_curve(p.p_hat, p.clip.t_ai_local.value_or(-1)), a.out / "plots" / (key + ".score.png"));
      if (static_cast<std::size_t>(i) < result.maps.size() && !result.maps[static_cast<std::size_t>(i)].empty()) {
        const auto& maps = result.maps[static_cast<std::size_t>(i)];
        cap::write_png(cap::heat_map(maps.back()), a.out / "plots" / (key + ".attention.png"));
      }
    }
  }
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

int run_gradcheck(const cap::GradcheckOptions& o, const fs::path& json_out) {
  const auto report = cap::run_gradcheck(o);
  std::cout << report.to_text();
  std::cout << "time " << report.seconds << " s\n";
  if (!json_out.empty()) write_text(json_out, report.to_json() + "\n");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cap: accident anticipation training and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON training config");
    sub->add_option("--set", sets, "override a config key: key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus directory");
  fs::path gen_out = "corpus";
  std::uint64_t gen_seed = 0;
  int gen_n = 60;
  double gen_mix = 0.5;
  cap::SynthConfig synth;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed);
  gen->add_option("-n,--videos", gen_n)->check(CLI::PositiveNumber);
  gen->add_option("--collision-share", gen_mix)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--frames", synth.n_frames)->check(CLI::PositiveNumber);
  gen->add_option("--fps", synth.fps)->check(CLI::PositiveNumber);
  gen->add_option("--size", synth.size)->check(CLI::PositiveNumber);
  gen->add_option("--noise", synth.noise_sigma);

  auto* val = app.add_subcommand("validate", "check an annotation file or corpus directory");
  fs::path val_corpus;
  int val_bins = 10;
  val->add_option("corpus", val_corpus)->required();
  val->add_option("--bins", val_bins)->check(CLI::PositiveNumber);

  auto* smp = app.add_subcommand("sample", "draw positive/negative clips into a manifest");
  fs::path smp_corpus, smp_out = "clips.jsonl";
  smp->add_option("--corpus", smp_corpus)->required();
  smp->add_option("--out", smp_out);
  add_config(smp);

  auto* trn = app.add_subcommand("train", "train and write a checkpoint");
  TrainArgs ta;
  trn->add_option("--corpus", ta.corpus)->required();
  trn->add_option("--clips", ta.manifest, "clip manifest (default: sample from the corpus)");
  trn->add_option("--out", ta.out, "checkpoint path");
  trn->add_option("--log", ta.log, "line-delimited JSON training log");
  trn->add_option("--resume", ta.resume, "continue from a checkpoint");
  trn->add_option("--checkpoint-every", ta.checkpoint_every, "also checkpoint every N epochs");
  add_config(trn);

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  EvalArgs ea;
  evl->add_option("--checkpoint", ea.checkpoint);
  evl->add_flag("--untrained", ea.untrained, "evaluate a freshly initialized model built from the config");
  evl->add_option("--corpus", ea.corpus)->required();
  evl->add_option("--clips", ea.manifest);
  evl->add_option("--out", ea.out, "directory for report.json, dumps and plots");
  evl->add_option("--group-by", ea.group_by, "weather | light | occasion | road_type | category");
  evl->add_option("--video-score", ea.video_score, "max | mean");
  evl->add_flag("--placeholder", ea.placeholder, "replace every description with the fixed placeholder");
  evl->add_flag("--no-saliency", ea.no_saliency);
  evl->add_flag("--plots", ea.plots);
  evl->add_option("--plot-clips", ea.plot_clips);
  add_config(evl);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  cap::GradcheckOptions go;
  fs::path gc_json;
  gc->add_option("--seed", go.seed);
  gc->add_option("--module", go.modules, "restrict to a module (repeatable)");
  gc->add_option("--coords", go.coords_per_param);
  gc->add_option("--corrupt", go.corrupt_param, "perturb this parameter's analytic gradient");
  gc->add_option("--json", gc_json, "write the report as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_generate(gen_out, gen_seed, gen_n, gen_mix, synth);
    if (*val) return run_validate(val_corpus, val_bins);
    if (*gc) return run_gradcheck(go, gc_json);
    const cap::TrainConfig cfg = resolve_config(config_path, sets);
    if (*smp) return run_sample(smp_corpus, smp_out, cfg);
    if (*trn) return run_train(ta, cfg, !config_path.empty() || !sets.empty());
    if (*evl) {
      if (ea.checkpoint.empty() && !ea.untrained) throw std::invalid_argument("eval needs --checkpoint or --untrained");
      return run_eval(ea, cfg);
    }
  } catch (const cap::TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

#include "cap/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cap/attention_decoder.hpp"
#include "cap/tensor_io.hpp"

namespace cap {

using nlohmann::json;

void TrainConfig::validate() const {
  for (double r : {lr_self_attention, lr_t2i, lr_gru, lr_decoder})
    if (!(r > 0)) throw std::invalid_argument("learning rates must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (t2i_layers < 1) throw std::invalid_argument("t2i_layers must be at least 1");
  if (optimizer != "sgd" && optimizer != "adam") throw std::invalid_argument("optimizer must be sgd or adam");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (window_len < 1) throw std::invalid_argument("window_len must be positive");
  parse_strategy(strategy);
  parse_video_score(video_score);
}

double TrainConfig::lr(ParamGroup g) const {
  switch (g) {
    case ParamGroup::kSelfAttention: return lr_self_attention;
    case ParamGroup::kT2I: return lr_t2i;
    case ParamGroup::kGru: return lr_gru;
    case ParamGroup::kDecoder: return lr_decoder;
  }
  return 0;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.t2i_layers = t2i_layers;
  m.dropout = dropout;
  m.seed = seed;
  return m;
}

std::string TrainConfig::to_json() const {
  json j = {{"lr_self_attention", lr_self_attention},
            {"lr_t2i", lr_t2i},
            {"lr_gru", lr_gru},
            {"lr_decoder", lr_decoder},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"t2i_layers", t2i_layers},
            {"lambda", lambda},
            {"seed", seed},
            {"placeholder_text_mode", placeholder_text_mode},
            {"optimizer", optimizer},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"attention_loss", attention_loss},
            {"dropout", dropout},
            {"window_len", window_len},
            {"strategy", strategy},
            {"horizon_s", horizon_s},
            {"video_score", video_score}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  const json j = json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "lr_self_attention") c.lr_self_attention = v.get<double>();
    else if (key == "lr_t2i") c.lr_t2i = v.get<double>();
    else if (key == "lr_gru") c.lr_gru = v.get<double>();
    else if (key == "lr_decoder") c.lr_decoder = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "t2i_layers") c.t2i_layers = v.get<int>();
    else if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "placeholder_text_mode") c.placeholder_text_mode = v.get<bool>();
    else if (key == "optimizer") c.optimizer = v.get<std::string>();
    else if (key == "adam_beta1") c.adam_beta1 = v.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = v.get<double>();
    else if (key == "adam_eps") c.adam_eps = v.get<double>();
    else if (key == "attention_loss") c.attention_loss = v.get<bool>();
    else if (key == "dropout") c.dropout = v.get<double>();
    else if (key == "window_len") c.window_len = v.get<int>();
    else if (key == "strategy") c.strategy = v.get<std::string>();
    else if (key == "horizon_s") c.horizon_s = v.get<double>();
    else if (key == "video_score") c.video_score = v.get<std::string>();
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream s;
  s << f.rdbuf();
  return from_json(s.str());
}

Dataset::Dataset(std::vector<SyntheticScenario> scenarios) : scenarios_(std::move(scenarios)) {
  for (std::size_t i = 0; i < scenarios_.size(); ++i)
    if (!index_.emplace(scenarios_[i].record.video_id, i).second)
      throw std::invalid_argument("duplicate video id " + scenarios_[i].record.video_id);
}

const SyntheticScenario& Dataset::video(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown video " + id);
  return scenarios_[it->second];
}

std::vector<AnnotationRecord> Dataset::records() const {
  std::vector<AnnotationRecord> out;
  for (const auto& s : scenarios_) out.push_back(s.record);
  return out;
}

Vocabulary corpus_vocabulary(const Dataset& data) {
  auto sentences = template_sentences();
  for (const auto& r : data.records()) sentences.push_back(r.fact);
  return Vocabulary::build(sentences);
}

std::string clip_text(const AnnotationRecord& record, bool placeholder) {
  return placeholder ? std::string(kPlaceholderText) : record.fact;
}

ClipInput make_clip_input(const SyntheticScenario& video, const ClipSample& clip, const Vocabulary& vocab,
                          bool placeholder, bool with_gt, int n_text) {
  if (clip.start < 0 || clip.start + clip.length > video.n_frames())
    throw std::out_of_range("clip " + clip_key(clip) + " exceeds its video");
  ClipInput in;
  in.text_ids = vocab.encode(clip_text(video.record, placeholder), n_text);
  for (int t = clip.start; t < clip.start + clip.length; ++t) {
    in.pooled.push_back(PatchEmbed::pooled_patches(center_pixels(render_patchable(video, t))));
    if (with_gt) {
      const Mat gt = video.attention_matrix(t);
      in.gt_maps.push_back(gt.rows() == AttentionDecoder::kMap && gt.cols() == AttentionDecoder::kMap
                               ? normalize_map(gt)
                               : downsample_gt(gt, AttentionDecoder::kMap, AttentionDecoder::kMap));
    }
  }
  return in;
}

std::string clip_key(const ClipSample& clip) {
  return clip.video_id + "@" + std::to_string(clip.start) + (clip.positive() ? "+" : "-");
}

std::string UpdateRecord::to_json_line() const {
  json j = {{"epoch", epoch},
            {"update", update},
            {"samples", samples},
            {"L_d", loss.attention},
            {"L_a", loss.anticipation},
            {"lambda", loss.lambda},
            {"L_total", loss.total}};
  return j.dump();
}

namespace {
Rng seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(s);
}
}  // namespace

Trainer::Trainer(const TrainConfig& config, Vocabulary vocab)
    : config_(config),
      vocab_(std::move(vocab)),
      model_(std::make_unique<CapModel>(config.model_config(), vocab_.size())),
      dropout_rng_(seeded(config.seed, 7, 0)) {
  config_.validate();
}

std::vector<std::size_t> Trainer::epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = seeded(seed, 11, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

void Trainer::apply_update(int batch_count) {
  const double scale = 1.0 / batch_count;
  const bool adam = config_.optimizer == "adam";
  if (adam) ++adam_t_;
  for (Param* p : model_->parameters()) {
    const double lr = config_.lr(p->group);
    if (!adam) {
      p->value.noalias() -= (lr * scale) * p->grad;
      continue;
    }
    auto& [m, v] = adam_[p->name];
    if (m.size() == 0) {
      m = Mat::Zero(p->value.rows(), p->value.cols());
      v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    const Mat g = scale * p->grad;
    m = config_.adam_beta1 * m + (1 - config_.adam_beta1) * g;
    v = config_.adam_beta2 * v + (1 - config_.adam_beta2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(config_.adam_beta1, static_cast<double>(adam_t_));
    const double c2 = 1 - std::pow(config_.adam_beta2, static_cast<double>(adam_t_));
    p->value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.adam_eps);
  }
}

void Trainer::fit_scaler(const Dataset& data, std::span<const ClipSample> clips) {
  if (model_->scaler.fitted) return;
  std::vector<RowVec> samples;
  for (const ClipSample& clip : clips) {
    try {
      const ClipInput in = make_clip_input(data.video(clip.video_id), clip, vocab_, config_.placeholder_text_mode, false,
                                           model_->config.n_text);
      for (RowVec& x : model_->pooled_context(in)) samples.push_back(std::move(x));
    } catch (const std::domain_error& e) {
      throw TrainingError(clip_key(clip), std::string("non-finite value during training: ") + e.what());
    }
  }
  model_->scaler.fit(samples);
}

std::vector<UpdateRecord> Trainer::train(const Dataset& data, std::span<const ClipSample> clips, int until_epoch,
                                         std::ostream* log) {
  if (clips.empty()) throw std::invalid_argument("no training clips");
  fit_scaler(data, clips);
  std::vector<UpdateRecord> records;
  Objective obj;
  obj.lambda = config_.lambda;
  obj.attention_loss = config_.attention_loss;
  for (; epoch_ < until_epoch; ++epoch_) {
    const auto order = epoch_order(config_.seed, epoch_, clips.size());
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config_.batch_size));
      model_->zero_grad();
      UpdateRecord rec;
      rec.epoch = epoch_;
      rec.update = updates_;
      rec.loss.lambda = config_.lambda;
      for (std::size_t i = b; i < end; ++i) {
        const ClipSample& clip = clips[order[i]];
        const std::string key = clip_key(clip);
        rec.samples.push_back(key);
        LossBreakdown lb;
        try {
          const ClipInput in = make_clip_input(data.video(clip.video_id), clip, vocab_, config_.placeholder_text_mode,
                                               config_.attention_loss, model_->config.n_text);
          lb = model_->train_step(in, clip, obj, &dropout_rng_);
        } catch (const std::domain_error& e) {
          throw TrainingError(key, std::string("non-finite value during training: ") + e.what());
        }
        if (!std::isfinite(lb.total)) throw TrainingError(key, "non-finite loss");
        rec.loss.attention += lb.attention;
        rec.loss.anticipation += lb.anticipation;
        rec.loss.total += lb.total;
      }
      const double n = static_cast<double>(end - b);
      rec.loss.attention /= n;
      rec.loss.anticipation /= n;
      rec.loss.total /= n;
      apply_update(static_cast<int>(end - b));
      ++updates_;
      if (log) *log << rec.to_json_line() << '\n' << std::flush;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

namespace {
std::string rng_state(const Rng& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Tensor text_tensor(const std::string& s) {
  return Tensor::from_u8({s.size()}, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  NamedArrays a;
  for (const Param* p : const_cast<CapModel&>(*model_).parameters()) a[p->name] = Tensor::from_matrix(p->value);
  for (const auto& [name, mv] : adam_) {
    a["__adam_m__/" + name] = Tensor::from_matrix(mv.first);
    a["__adam_v__/" + name] = Tensor::from_matrix(mv.second);
  }
  const std::int64_t meta[3] = {epoch_, updates_, adam_t_};
  if (model_->scaler.fitted) {
    a["__context_mean__"] = Tensor::from_matrix(model_->scaler.mean);
    a["__context_scale__"] = Tensor::from_matrix(model_->scaler.scale);
  }
  a["__config__"] = text_tensor(config_.to_json());
  a["__epoch__"] = Tensor::from_i64({3}, meta);
  a["__rng__"] = text_tensor(rng_state(dropout_rng_));
  a["__vocab__"] = text_tensor(vocab_.serialize());
  save_named_arrays(path, a);
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path) {
  NamedArrays a = load_named_arrays(path);
  auto need = [&](const std::string& k) -> const Tensor& {
    auto it = a.find(k);
    if (it == a.end()) throw std::runtime_error("checkpoint is missing " + k);
    return it->second;
  };
  const TrainConfig cfg = TrainConfig::from_json(need("__config__").as_string());
  Vocabulary vocab = Vocabulary::parse(need("__vocab__").as_string());
  Trainer t(cfg, std::move(vocab));
  for (Param* p : t.model_->parameters()) {
    const Mat v = need(p->name).as_matrix();
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw ShapeError("checkpoint shape mismatch for " + p->name);
    p->value = v;
  }
  if (a.count("__context_mean__")) {
    const Mat mean = need("__context_mean__").as_matrix(), scale = need("__context_scale__").as_matrix();
    const Eigen::Index d = t.model_->config.context;
    if (mean.rows() != 1 || mean.cols() != d || scale.rows() != 1 || scale.cols() != d)
      throw ShapeError("checkpoint context scaler has the wrong shape");
    t.model_->scaler.mean = mean;
    t.model_->scaler.scale = scale;
    t.model_->scaler.fitted = true;
  }
  const auto meta = need("__epoch__").as_i64();
  t.epoch_ = static_cast<int>(meta.at(0));
  t.updates_ = static_cast<int>(meta.at(1));
  t.adam_t_ = meta.at(2);
  std::istringstream rs(need("__rng__").as_string());
  rs >> t.dropout_rng_;
  for (const auto& [name, tensor] : a) {
    if (name.rfind("__adam_m__/", 0) == 0) t.adam_[name.substr(11)].first = tensor.as_matrix();
    if (name.rfind("__adam_v__/", 0) == 0) t.adam_[name.substr(11)].second = tensor.as_matrix();
  }
  return t;
}

EvalResult evaluate(const CapModel& model, const Vocabulary& vocab, const Dataset& data,
                    std::span<const ClipSample> clips, const EvalOptions& opt) {
  EvalResult r;
  std::vector<std::vector<Mat>> gts;
  std::vector<std::vector<Mat>> maps;
  for (const ClipSample& clip : clips) {
    const ClipInput in = make_clip_input(data.video(clip.video_id), clip, vocab, opt.placeholder_text, opt.saliency,
                                         model.config.n_text);
    ClipOutput out = model.forward(in, nullptr, opt.saliency);
    r.predictions.push_back({clip, out.p_hat, std::nullopt});
    if (opt.saliency) {
      gts.push_back(in.gt_maps);
      maps.push_back(std::move(out.maps));
    }
  }
  if (opt.saliency && !clips.empty()) {
    const std::size_t n = clips.size();
    for (std::size_t i = 0; i < n; ++i) {
      SaliencyScores acc;
      const auto& clip_maps = maps[i];
      for (std::size_t t = 0; t < clip_maps.size(); ++t) {
        const Fixations fix = fixations_from_map(gts[i][t]);
        Fixations shuffled;
        for (int k = 1; k <= opt.shuffled_sources && static_cast<std::size_t>(k) < n; ++k) {
          const auto& other = gts[(i + static_cast<std::size_t>(k)) % n];
          const auto f = fixations_from_map(other[t % other.size()]);
          shuffled.insert(shuffled.end(), f.begin(), f.end());
        }
        if (shuffled.empty()) shuffled = fix;  // single-clip evaluation: s-AUC degenerates to 0.5
        const SaliencyScores s = saliency_metrics(gts[i][t], clip_maps[t], fix, shuffled);
        acc.kldiv += s.kldiv;
        acc.cc += s.cc;
        acc.sim += s.sim;
        acc.s_auc += s.s_auc;
      }
      const double k = static_cast<double>(clip_maps.size());
      r.predictions[i].saliency = SaliencyScores{acc.kldiv / k, acc.cc / k, acc.sim / k, acc.s_auc / k};
    }
    if (opt.keep_maps) r.maps = std::move(maps);
  }
  r.report = compute_report(r.predictions, opt.video_score);
  return r;
}

void write_eval_dumps(const EvalResult& result, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "p_hat");
  for (std::size_t i = 0; i < result.predictions.size(); ++i) {
    const auto& p = result.predictions[i];
    const std::string key = clip_key(p.clip);
    save_tensor(dir / "p_hat" / (key + ".capt"), Tensor::from_f64({p.p_hat.size()}, p.p_hat));
    if (i < result.maps.size()) {
      fs::create_directories(dir / "maps");
      std::vector<float> flat;
      for (const Mat& m : result.maps[i])
        for (Eigen::Index y = 0; y < m.rows(); ++y)
          for (Eigen::Index x = 0; x < m.cols(); ++x) flat.push_back(static_cast<float>(m(y, x)));
      save_tensor(dir / "maps" / (key + ".capt"),
                  Tensor::from_f32({result.maps[i].size(), 64, 64}, flat));
    }
  }
}

}  // namespace cap

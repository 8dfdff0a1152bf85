#pragma once

// Training and evaluation harness.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cap/clip_sampler.hpp"
#include "cap/encoders.hpp"
#include "cap/metrics.hpp"
#include "cap/model.hpp"
#include "cap/synthdata.hpp"

namespace cap {

inline constexpr std::string_view kPlaceholderText = "a frame of { }";

struct TrainConfig {
  double lr_self_attention = 1e-6;
  double lr_t2i = 1e-6;
  double lr_gru = 1e-5;
  double lr_decoder = 1e-4;
  int epochs = 10;
  int batch_size = 2;
  int t2i_layers = 3;
  double lambda = 5.0;
  std::uint64_t seed = 0;
  bool placeholder_text_mode = false;

  std::string optimizer = "sgd";  // sgd | adam
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool attention_loss = true;  // false: decoder-ablated training
  double dropout = 0.1;
  int window_len = 150;
  std::string strategy = "mini";
  double horizon_s = 5.0;
  std::string video_score = "max";

  void validate() const;
  double lr(ParamGroup g) const;
  ModelConfig model_config() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);  // unknown keys are errors
  static TrainConfig load(const std::filesystem::path& path);
};

class Dataset {
 public:
  explicit Dataset(std::vector<SyntheticScenario> scenarios);
  static Dataset load(const std::filesystem::path& dir) { return Dataset(load_corpus_dir(dir)); }

  const SyntheticScenario& video(const std::string& id) const;
  std::vector<AnnotationRecord> records() const;
  const std::vector<SyntheticScenario>& scenarios() const { return scenarios_; }

 private:
  std::vector<SyntheticScenario> scenarios_;
  std::map<std::string, std::size_t> index_;
};

// Template sentences plus every record's fact sentence.
Vocabulary corpus_vocabulary(const Dataset& data);

// Description text the model sees for a video.
std::string clip_text(const AnnotationRecord& record, bool placeholder);

ClipInput make_clip_input(const SyntheticScenario& video, const ClipSample& clip, const Vocabulary& vocab,
                          bool placeholder, bool with_gt, int n_text = 15);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::string sample, const std::string& what)
      : std::runtime_error("sample " + sample + ": " + what), sample_id(std::move(sample)) {}
  std::string sample_id;
};

struct UpdateRecord {
  int epoch = 0;
  int update = 0;
  std::vector<std::string> samples;
  LossBreakdown loss;  // mean over the batch
  std::string to_json_line() const;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, Vocabulary vocab);

  // Fits the model's context scaler on the given clips unless it is fitted.
  void fit_scaler(const Dataset& data, std::span<const ClipSample> clips);

  // Trains epochs [epoch(), until_epoch). Fits the context scaler first if needed. Each update record is also written
  // to *log as one JSON line.
  std::vector<UpdateRecord> train(const Dataset& data, std::span<const ClipSample> clips, int until_epoch,
                                  std::ostream* log = nullptr);

  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer load_checkpoint(const std::filesystem::path& path);

  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  CapModel& model() { return *model_; }
  const CapModel& model() const { return *model_; }

  // Sample order of an epoch; depends only on (seed, epoch).
  static std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n);

 private:
  void apply_update(int batch_count);

  TrainConfig config_;
  Vocabulary vocab_;
  std::unique_ptr<CapModel> model_;
  Rng dropout_rng_;
  int epoch_ = 0;
  int updates_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> adam_;
  std::int64_t adam_t_ = 0;
};

struct EvalOptions {
  bool placeholder_text = false;
  bool saliency = true;
  VideoScore video_score = VideoScore::kMax;
  int shuffled_sources = 3;  // other clips whose fixations form the s-AUC negatives
  bool keep_maps = false;
};

struct EvalResult {
  std::vector<VideoPrediction> predictions;
  std::vector<std::vector<Mat>> maps;  // per clip, when keep_maps
  MetricReport report;
};

EvalResult evaluate(const CapModel& model, const Vocabulary& vocab, const Dataset& data,
                    std::span<const ClipSample> clips, const EvalOptions& options);

// p_hat/<clip>.capt (f64 [T]) and, when maps were kept, maps/<clip>.capt (f32 [T, 64, 64]).
void write_eval_dumps(const EvalResult& result, const std::filesystem::path& dir);

std::string clip_key(const ClipSample& clip);

}  // namespace cap

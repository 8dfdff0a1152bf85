#include "cap/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cap/model.hpp"

namespace cap {

bool GradcheckEntry::passed() const { return max_rel_error <= tolerance && unresolved <= std::max(coords, 1); }

bool GradcheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

std::vector<std::string> GradcheckReport::modules() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (std::find(out.begin(), out.end(), e.module) == out.end()) out.push_back(e.module);
  return out;
}

double GradcheckReport::module_max_error(const std::string& module) const {
  double m = 0;
  for (const auto& e : entries)
    if (e.module == module) m = std::max(m, e.max_rel_error);
  return m;
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed()) out.push_back(e.module + "/" + e.param);
  return out;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream s;
  for (const auto& m : modules()) {
    double tol = 0;
    bool ok = true;
    int coords = 0, unresolved = 0;
    for (const auto& e : entries)
      if (e.module == m) {
        tol = e.tolerance;
        ok = ok && e.passed();
        coords += e.coords;
        unresolved += e.unresolved;
      }
    s << (ok ? "PASS " : "FAIL ") << m << "  max rel error " << module_max_error(m) << " (tol " << tol << ")  "
      << coords << " coords";
    if (unresolved) s << ", " << unresolved << " replaced (unstable reference)";
    s << "\n";
  }
  for (const auto& f : failures()) s << "  failed: " << f << "\n";
  s << "elapsed " << seconds << " s\n";
  return s.str();
}

std::string GradcheckReport::to_json() const {
  nlohmann::json j;
  j["passed"] = passed();
  j["modules"] = nlohmann::json::object();
  for (const auto& m : modules()) j["modules"][m] = module_max_error(m);
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"module", e.module},
                            {"param", e.param},
                            {"coords", e.coords},
                            {"max_rel_error", e.max_rel_error},
                            {"tolerance", e.tolerance},
                            {"unresolved", e.unresolved},
                            {"passed", e.passed()}});
  return j.dump(2);
}

void check_gradients(const std::string& module, const std::vector<Param*>& targets,
                     const std::function<double()>& loss_fn, const std::function<void()>& grad_fn,
                     double tolerance, const GradcheckOptions& opt, Rng& rng, GradcheckReport& report) {
  for (Param* p : targets) p->zero_grad();
  grad_fn();
  for (Param* p : targets) {
    Mat analytic = p->grad;
    if (!opt.corrupt_param.empty() && p->name == opt.corrupt_param) analytic = analytic * 1.5 + Mat::Constant(analytic.rows(), analytic.cols(), 1e-3);
    const Eigen::Index n = p->value.size();
    // Half the coordinates carry the largest analytic gradients, half are random.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto k_top = std::min<Eigen::Index>(n, opt.coords_per_param / 2);
    std::partial_sort(order.begin(), order.begin() + k_top, order.end(), [&](auto a, auto b) {
      return std::abs(analytic.data()[a]) > std::abs(analytic.data()[b]);
    });
    std::vector<Eigen::Index> queue(order.begin(), order.begin() + k_top);
    std::set<Eigen::Index> used(queue.begin(), queue.end());
    const auto want = std::min<Eigen::Index>(n, opt.coords_per_param);
    auto draw = [&] {
      for (int tries = 0; tries < 1000; ++tries) {
        const auto idx = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
        if (used.insert(idx).second) {
          queue.push_back(idx);
          return;
        }
      }
    };
    while (static_cast<Eigen::Index>(queue.size()) < want) {
      const auto before = queue.size();
      draw();
      if (queue.size() == before) break;
    }

    GradcheckEntry e{module, p->name, 0, 0.0, tolerance};
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const Eigen::Index idx = queue[qi];
      double& v = p->value.data()[idx];
      const double saved = v;
      auto at = [&](double dx) {
        v = saved + dx;
        const double f = loss_fn();
        v = saved;
        return f;
      };
      const double h = opt.step;
      const double fp = at(h), fm = at(-h);
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic.data()[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      if (rel > tolerance) {
        // Is the reference itself stable? A smooth f gives n(2h) - n(h) = 4 (n(h) - n(h/2))
        // and D2(2h) = 4 D2(h) up to roundoff; a relu/max switch inside the
        // stencil, or a difference below roundoff, breaks one of them. Only
        // finite differences enter this test, never the analytic value.
        const double f0 = at(0), fp2 = at(2 * h), fm2 = at(-2 * h), fph = at(h / 2), fmh = at(-h / 2);
        const double n_half = (fph - fmh) / h, n_two = (fp2 - fm2) / (4 * h);
        const double richardson = std::abs((n_two - numeric) - 4 * (numeric - n_half));
        const double curvature = std::abs((fp2 - 2 * f0 + fm2) - 4 * (fp - 2 * f0 + fm)) / h;
        if (std::max(richardson, curvature) >= 0.5 * std::abs(a - numeric)) {
          ++e.unresolved;
          if (e.unresolved <= opt.coords_per_param) draw();
          continue;
        }
      }
      ++e.coords;
      e.max_rel_error = std::max(e.max_rel_error, rel);
    }
    report.entries.push_back(e);
  }
}

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal(rng);
  return m;
}

Mat random_distribution(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = 0.1 + uniform01(rng);
  return m / m.sum();
}

Rng child(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(stream), 0x9c3u};
  return Rng(s);
}

Param as_input(const std::string& name, Mat value) {
  Param p(name, ParamGroup::kSelfAttention, value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

void suite_encoders(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 1);
  Encoders enc(EncoderConfig{}, 40, rng);
  Param pooled = as_input("input.pooled_patches", random_mat(49, PatchEmbed::kPatchDim, rng, 0.3));
  std::vector<int> ids = {5, 9, 2, 31, 5, 17, 3};
  const Mat wv = random_mat(49, enc.config.m, rng), wt = random_mat(enc.config.n_text, enc.config.m, rng);

  auto loss = [&] {
    const Mat tokens = enc.patch.forward_pooled(pooled.value, enc.patch.fold());
    return (wv.array() * enc.block_forward(tokens, nullptr).array()).sum() +
           (wt.array() * enc.encode_text(ids, nullptr).data.array()).sum();
  };
  auto grad = [&] {
    const auto folded = enc.patch.fold();
    Encoders::BlockCache vc, tc;
    enc.block_forward(enc.patch.forward_pooled(pooled.value, folded), &vc);
    enc.encode_text(ids, &tc);
    const Mat dtok = enc.block_backward(vc, wv);
    PatchEmbed::FoldGrad fg;
    fg.reset(PatchEmbed::kPatchDim, enc.config.m);
    enc.patch.accumulate(pooled.value, dtok, fg);
    enc.patch.apply_fold_grad(fg);
    pooled.grad += enc.patch.pooled_grad(dtok, folded);
    enc.text->backward(ids, enc.block_backward(tc, wt));
  };
  ParamList targets;
  enc.collect(targets);
  targets.push_back(&pooled);
  check_gradients("encoders", targets, loss, grad, opt.module_tolerance, opt, rng, report);
}

void suite_fusion(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 2);
  FusionConfig cfg;
  cfg.layers = 2;
  FusionStack stack(cfg, rng);
  Param text = as_input("input.text_tokens", random_mat(cfg.n_text, cfg.m, rng, 0.5));
  Param vision = as_input("input.vision_tokens", random_mat(cfg.n_vision, cfg.m, rng, 0.5));
  const Mat wt = random_mat(cfg.n_text, cfg.m, rng), wv = random_mat(cfg.n_vision, cfg.m, rng);
  const Rng dropout_state = child(opt.seed, 20);  // same masks on every evaluation

  auto loss = [&] {
    Rng d = dropout_state;
    const FusionState s = stack.forward({text.value, vision.value}, &d, false);
    return (wt.array() * s.final().text.array()).sum() + (wv.array() * s.final().vision.array()).sum();
  };
  auto grad = [&] {
    Rng d = dropout_state;
    const FusionState s = stack.forward({text.value, vision.value}, &d, true);
    const FusionPair din = stack.backward(s, {wt, wv});
    text.grad += din.text;
    vision.grad += din.vision;
  };
  ParamList targets;
  stack.collect(targets);
  targets.push_back(&text);
  targets.push_back(&vision);
  check_gradients("fusion", targets, loss, grad, opt.module_tolerance, opt, rng, report);
}

void suite_context_head(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 3);
  const Eigen::Index m = 120;
  const int steps = 5;
  GraphConv gcn(m, 512, rng);
  GruCell gru(512, 256, rng);
  AccidentHead head(256, 64, rng);
  std::vector<Param> tokens;
  for (int t = 0; t < steps; ++t) tokens.push_back(as_input("input.tokens" + std::to_string(t), random_mat(64, m, rng, 0.1)));
  std::vector<double> w(steps);
  for (auto& x : w) x = normal(rng);

  auto loss = [&] {
    RowVec h = RowVec::Zero(256);
    double s = 0;
    for (int t = 0; t < steps; ++t) {
      const Mat& x = tokens[static_cast<std::size_t>(t)].value;
      h = gru.forward(pool_max(gcn.forward(x, build_adjacency(x))), h);
      s += w[static_cast<std::size_t>(t)] * head.forward(h);
    }
    return s;
  };
  auto grad = [&] {
    std::vector<GraphConv::Cache> gc(steps);
    std::vector<std::vector<Eigen::Index>> am(steps);
    std::vector<GruCell::Cache> rc(steps);
    std::vector<AccidentHead::Cache> hc(steps);
    RowVec h = RowVec::Zero(256);
    for (int t = 0; t < steps; ++t) {
      const auto i = static_cast<std::size_t>(t);
      const Mat& x = tokens[i].value;
      h = gru.forward(pool_max(gcn.forward(x, build_adjacency(x), &gc[i]), &am[i]), h, &rc[i]);
      head.forward(h, &hc[i]);
    }
    RowVec carry = RowVec::Zero(256);
    for (int t = steps - 1; t >= 0; --t) {
      const auto i = static_cast<std::size_t>(t);
      RowVec dh = head.backward(hc[i], w[i]) + carry, dx;
      gru.backward_accumulate(rc[i], dh, dx, carry);
      tokens[i].grad += gcn.backward(gc[i], pool_max_backward(am[i], 64, dx));
    }
  };
  ParamList targets;
  gcn.collect(targets);
  gru.collect(targets);
  head.collect(targets);
  for (auto& p : tokens) targets.push_back(&p);
  check_gradients("context_head", targets, loss, grad, opt.module_tolerance, opt, rng, report);
}

void suite_decoder(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 4);
  AttentionDecoder dec(DecoderConfig{}, rng);
  Param s = as_input("input.context", random_mat(64, 512, rng, 0.5).cwiseMax(0.0));
  const Mat gt = random_distribution(64, 64, rng);

  auto loss = [&] { return kl_attention(gt, dec.forward(s.value)); };
  auto grad = [&] {
    AttentionDecoder::Cache c;
    const Mat pred = dec.forward(s.value, &c);
    s.grad += dec.backward(c, kl_attention_grad(gt, pred));
  };
  ParamList targets;
  dec.collect(targets);
  targets.push_back(&s);
  check_gradients("attention_decoder", targets, loss, grad, opt.module_tolerance, opt, rng, report);
}

void suite_losses(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 5);
  const int n = 12;
  Param p = as_input("input.p_hat", Mat(1, n));
  for (int t = 0; t < n; ++t) p.value(0, t) = uniform(rng, 0.05, 0.95);
  const double t_ai = 7, fps = 3;
  for (bool positive : {true, false}) {
    auto loss = [&] {
      return anticipation_loss(std::span<const double>(p.value.data(), n), positive, t_ai, fps);
    };
    auto grad = [&] {
      const auto g = anticipation_loss_grad(std::span<const double>(p.value.data(), n), positive, t_ai, fps);
      for (int t = 0; t < n; ++t) p.grad(0, t) += g[static_cast<std::size_t>(t)];
    };
    GradcheckOptions o = opt;
    o.coords_per_param = n;
    Param* target = &p;
    p.name = positive ? "anticipation.positive.p_hat" : "anticipation.negative.p_hat";
    check_gradients("losses", {target}, loss, grad, opt.loss_tolerance, o, rng, report);
  }
  // Map entries are ~4e-3, so a 1e-5 step is not small next to them.
  GradcheckOptions fine = opt;
  fine.step = 1e-7;
  const Mat gt = random_distribution(16, 16, rng);
  Param pred = as_input("attention.pred", random_distribution(16, 16, rng));
  auto loss = [&] { return (gt.array() * (kKlEpsilon + gt.array() / (kKlEpsilon + pred.value.array())).log()).sum(); };
  auto grad = [&] { pred.grad += kl_attention_grad(gt, pred.value); };
  check_gradients("losses", {&pred}, loss, grad, opt.loss_tolerance, fine, rng, report);
}

void suite_end_to_end(const GradcheckOptions& opt, GradcheckReport& report) {
  Rng rng = child(opt.seed, 6);
  ModelConfig cfg;
  cfg.seed = opt.seed;
  CapModel model(cfg, 40);
  model.scaler.mean = RowVec::NullaryExpr(cfg.context, [&] { return uniform(rng, 0.0, 1.0); });
  model.scaler.scale = RowVec::NullaryExpr(cfg.context, [&] { return uniform(rng, 0.5, 2.0); });
  model.scaler.fitted = true;
  const int frames = 2;
  Param pixels("input.frame_pixels", ParamGroup::kSelfAttention, frames, PatchEmbed::kImage * PatchEmbed::kImage * 3);
  for (Eigen::Index i = 0; i < pixels.value.size(); ++i) pixels.value.data()[i] = uniform01(rng);
  ClipInput in;
  in.text_ids = {4, 11, 7, 2, 25, 8};
  const Rng dropout_state = child(opt.seed, 60);

  // Param storage is column-major, so frames are copied row by row.
  auto set_frames = [&] {
    in.pooled.clear();
    for (int t = 0; t < frames; ++t) {
      Image img(PatchEmbed::kImage, PatchEmbed::kImage, 3);
      for (Eigen::Index i = 0; i < pixels.value.cols(); ++i) img.data[static_cast<std::size_t>(i)] = pixels.value(t, i);
      in.pooled.push_back(PatchEmbed::pooled_patches(img));
    }
  };

  // Probe: random-weighted sum of the per-frame accident probabilities.
  std::vector<double> w(frames);
  for (double& x : w) x = uniform(rng, 0.5, 1.5);
  auto loss = [&] {
    set_frames();
    Rng d = dropout_state;
    const ClipOutput out = model.forward(in, &d, false);
    double f = 0;
    for (int t = 0; t < frames; ++t) f += w[static_cast<std::size_t>(t)] * out.p_hat[static_cast<std::size_t>(t)];
    return f;
  };
  auto grad = [&] {
    set_frames();
    Rng d = dropout_state;
    ClipTrace trace;
    model.forward(in, &d, false, &trace);
    std::vector<Mat> dpooled;
    model.backward(trace, w, {}, &dpooled);
    for (int t = 0; t < frames; ++t) {
      const Image g = PatchEmbed::pooled_patches_adjoint(dpooled[static_cast<std::size_t>(t)]);
      for (Eigen::Index i = 0; i < pixels.value.cols(); ++i) pixels.grad(t, i) += g.data[static_cast<std::size_t>(i)];
    }
  };
  // The decoder does not feed p_hat; its own suite covers it.
  ParamList targets;
  for (Param* p : model.parameters())
    if (p->group != ParamGroup::kDecoder) targets.push_back(p);
  targets.push_back(&pixels);
  GradcheckOptions o = opt;
  o.coords_per_param = std::max(2, opt.coords_per_param / 2);
  check_gradients("end_to_end", targets, loss, grad, opt.end_to_end_tolerance, o, rng, report);
}

}  // namespace

std::vector<std::string> gradcheck_modules() {
  return {"encoders", "fusion", "context_head", "attention_decoder", "losses", "end_to_end"};
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  auto wanted = [&](const std::string& m) {
    return opt.modules.empty() || std::find(opt.modules.begin(), opt.modules.end(), m) != opt.modules.end();
  };
  const auto known = gradcheck_modules();
  for (const auto& m : opt.modules)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw std::invalid_argument("unknown gradcheck module '" + m + "'");
  if (wanted("encoders")) suite_encoders(opt, report);
  if (wanted("fusion")) suite_fusion(opt, report);
  if (wanted("context_head")) suite_context_head(opt, report);
  if (wanted("attention_decoder")) suite_decoder(opt, report);
  if (wanted("losses")) suite_losses(opt, report);
  if (wanted("end_to_end")) suite_end_to_end(opt, report);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cap

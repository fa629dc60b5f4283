// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any selected criterion fails.
//
//   acceptance                 all criteria
//   acceptance 1 2 3 4 7 8     a subset
//   acceptance --report DIR    where the trend experiment writes its report

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sharpen_focus/app/train.hpp"
#include "sharpen_focus/attention/attention.hpp"
#include "sharpen_focus/autodiff.hpp"
#include "sharpen_focus/data/synth.hpp"
#include "sharpen_focus/eval/evaluate.hpp"
#include "sharpen_focus/eval/metrics.hpp"
#include "sharpen_focus/icasc/loss.hpp"
#include "sharpen_focus/nn/model.hpp"
#include "sharpen_focus/util/format.hpp"

namespace sf = sharpen_focus;
namespace ad = sharpen_focus::ad;
namespace fs = std::filesystem;
using ad::Tensor;
using sf::icasc::IcascConfig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) { return sf::util::format_double(v); }

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor with_value(const Tensor& t, std::size_t i, double v) {
  std::vector<double> d = t.vec();
  d[i] = v;
  return Tensor(t.shape(), std::move(d));
}

// The tiny model of criteria 1 and 2.
sf::nn::ModelConfig tiny_model() { return {{4, 8}, 8, 1, 3, 3, false}; }

// A parameter seed and input whose base point has no skipped sample.
struct TinyProblem {
  sf::nn::ParameterSet params;
  Tensor x;
  sf::nn::LabelBatch labels = sf::nn::LabelBatch::single({0, 2});
};

TinyProblem tiny_problem(std::uint64_t seed) {
  for (std::uint64_t s = seed;; ++s) {
    TinyProblem p{sf::nn::build_model(tiny_model(), s), {}};
    std::mt19937_64 rng(s);
    p.x = random_tensor(rng, {2, 1, 8, 8}, 0, 1);
    ad::Tape tape;
    const auto rec = sf::nn::forward(tape, p.params, p.x);
    const auto out = sf::icasc::icasc_objective(rec, p.labels, IcascConfig{}, {false});
    if (std::none_of(out.skipped.begin(), out.skipped.end(), [](char c) { return c; })) return p;
  }
}

// ---------------------------------------------------------------------------
// 1. Full-objective gradient against central differences.

Outcome criterion1() {
  constexpr double kStep = 1e-3;
  constexpr double kTolerance = 1e-4;
  constexpr std::size_t kMinCoordinates = 200;
  // Relative error |a - f| / max(|a|, |f|, kFloor).
  constexpr double kFloor = 1e-6;

  const auto p = tiny_problem(1);
  const IcascConfig cfg;
  ad::Tape tape;
  const auto rec = sf::nn::forward(tape, p.params, p.x);
  const auto base = sf::icasc::icasc_objective(rec, p.labels, cfg);
  const auto grads = ad::backward(base.total, rec.params);

  auto probe = [&](const std::vector<Tensor>& values) {
    sf::nn::ParameterSet q = p.params;
    q.values = values;
    ad::Tape t;
    const auto r = sf::nn::forward(t, q, p.x);
    const double v =
        sf::icasc::icasc_objective(r, p.labels, cfg, {false}, &base.decisions).total.item();
    return std::make_pair(v, t.decision_hash());
  };
  const std::uint64_t base_hash = probe(p.params.values).second;

  std::size_t checked = 0, excluded = 0;
  double worst = 0.0;
  std::string worst_at;
  std::vector<std::string> excluded_at;
  for (std::size_t t = 0; t < p.params.values.size(); ++t) {
    const Tensor& v = p.params.values[t];
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto point = p.params.values;
      point[t] = with_value(v, i, v[i] + kStep);
      const auto [up, hu] = probe(point);
      point[t] = with_value(v, i, v[i] - kStep);
      const auto [down, hd] = probe(point);
      const std::string where = p.params.names[t] + "[" + std::to_string(i) + "]";
      if (hu != base_hash || hd != base_hash) {
        ++excluded;
        excluded_at.push_back(where);
        continue;
      }
      const double fd = (up - down) / (2 * kStep);
      const double a = grads[t][i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kFloor});
      if (rel > worst) {
        worst = rel;
        worst_at = where;
      }
      ++checked;
    }
  }
  std::string excl;
  for (std::size_t i = 0; i < excluded_at.size() && i < 8; ++i) excl += (i ? " " : "") + excluded_at[i];
  if (excluded_at.size() > 8) excl += " ...";
  return {checked >= kMinCoordinates && worst < kTolerance,
          "checked=" + std::to_string(checked) + " excluded=" + std::to_string(excluded) +
              (excluded ? " [" + excl + "]" : "") + " max_rel=" + fmt_short(worst) + " at " +
              worst_at + " (tol " + fmt_short(kTolerance) + ", h=" + fmt_short(kStep) + ")"};
}

// ---------------------------------------------------------------------------
// 2. Hessian-vector products of L_AS against differences of gradients.

Outcome criterion2() {
  constexpr double kTolerance = 1e-3;
  constexpr double kStep = 1e-5;
  constexpr int kDirections = 5;

  const auto p = tiny_problem(2);
  const IcascConfig cfg;
  sf::icasc::ObjectiveDecisions frozen;
  {
    ad::Tape tape;
    const auto rec = sf::nn::forward(tape, p.params, p.x);
    frozen = sf::icasc::icasc_objective(rec, p.labels, cfg, {false}).decisions;
  }
  // L_AS = L_AS^in + L_AS^la at the given parameters; gradient keeps its graph
  // when `create_graph`.
  struct Eval {
    std::vector<Tensor> grad;
    std::uint64_t hash;
  };
  auto las_grad = [&](const std::vector<Tensor>& values, ad::Tape& tape, bool create_graph,
                      std::vector<Tensor>* handles) {
    sf::nn::ParameterSet q = p.params;
    q.values = values;
    const auto rec = sf::nn::forward(tape, q, p.x);
    const auto out = sf::icasc::icasc_objective(rec, p.labels, cfg, {true}, &frozen);
    const Tensor las = ad::add(out.separation_inner, out.separation_last);
    if (handles) *handles = rec.params;
    return ad::backward(las, rec.params, create_graph);
  };

  std::mt19937_64 rng(2);
  double worst = 0.0;
  int used = 0, rejected = 0;
  while (used < kDirections && rejected < 50) {
    std::vector<Tensor> dir;
    for (const auto& v : p.params.values) dir.push_back(random_tensor(rng, v.shape(), -1, 1));

    ad::Tape tape;
    std::vector<Tensor> handles;
    const auto g = las_grad(p.params.values, tape, true, &handles);
    Tensor gv = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < g.size(); ++t) gv = ad::add(gv, ad::sum(ad::mul(g[t], dir[t])));
    const auto hv = ad::backward(gv, handles);

    auto shifted = [&](double s) {
      std::vector<Tensor> v;
      for (std::size_t t = 0; t < dir.size(); ++t) {
        std::vector<double> d = p.params.values[t].vec();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dir[t][i];
        v.emplace_back(dir[t].shape(), std::move(d));
      }
      ad::Tape t;
      Eval e{las_grad(v, t, false, nullptr), 0};
      e.hash = t.decision_hash();
      return e;
    };
    ad::Tape ref_tape;
    las_grad(p.params.values, ref_tape, false, nullptr);
    const auto up = shifted(kStep), down = shifted(-kStep);
    if (up.hash != ref_tape.decision_hash() || down.hash != ref_tape.decision_hash()) {
      ++rejected;  // the direction crosses a ReLU/min kink within one step
      continue;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < hv.size(); ++t)
      for (std::size_t i = 0; i < hv[t].size(); ++i) {
        const double fd = (up.grad[t][i] - down.grad[t][i]) / (2 * kStep);
        num += (hv[t][i] - fd) * (hv[t][i] - fd);
        den += hv[t][i] * hv[t][i];
      }
    worst = std::max(worst, std::sqrt(num / den));
    ++used;
  }
  return {used == kDirections && worst < kTolerance,
          "directions=" + std::to_string(used) + " rejected_at_kinks=" + std::to_string(rejected) +
              " max_rel=" + fmt_short(worst) + " (tol " + fmt_short(kTolerance) + ")"};
}

// ---------------------------------------------------------------------------
// 3. Hand-computation oracle over raw arrays.

namespace oracle {

using Map = std::vector<double>;  // [H*W]
using Stack = std::vector<Map>;   // [K][H*W]

double sigmoid(double x) { return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x)); }

Map grad_cam(const Stack& f, const Stack& g) {
  const std::size_t hw = f[0].size();
  Map out(hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      double alpha = 0;
      for (double v : g[k]) alpha += v;
      s += alpha / static_cast<double>(hw) * f[k][i];
    }
    out[i] = std::max(0.0, s);
  }
  return out;
}

Map a_ch(const Stack& f, const Stack& g) {
  const std::size_t hw = f[0].size();
  Map out(hw, 0.0);
  for (std::size_t i = 0; i < hw; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      double w = 0;
      for (double v : g[k]) w += std::max(0.0, v);
      s += w * f[k][i];
    }
    out[i] = std::max(0.0, s) / static_cast<double>(hw);
  }
  return out;
}

// Corner-aligned bilinear resize of an h x h map to n x n.
Map resize(const Map& a, std::size_t h, std::size_t n) {
  Map out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double y = static_cast<double>(i) * static_cast<double>(h - 1) / static_cast<double>(n - 1);
      const double x = static_cast<double>(j) * static_cast<double>(h - 1) / static_cast<double>(n - 1);
      const auto y0 = std::min(static_cast<std::size_t>(y), h - 1), x0 = std::min(static_cast<std::size_t>(x), h - 1);
      const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, h - 1);
      const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
      out[i * n + j] = a[y0 * h + x0] * (1 - fy) * (1 - fx) + a[y0 * h + x1] * (1 - fy) * fx +
                       a[y1 * h + x0] * fy * (1 - fx) + a[y1 * h + x1] * fy * fx;
    }
  return out;
}

Map mask(const Map& a, double omega, double factor) {
  const double sigma = factor * *std::max_element(a.begin(), a.end());
  Map m;
  for (double v : a) m.push_back(std::clamp(sigmoid(omega * (v - sigma)), 0x1p-1022, 1 - 0x1p-53));
  return m;
}

double separation(const Map& t, const Map& c, const Map& m, double eps) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    num += std::min(t[i], c[i]) * m[i];
    den += t[i] + c[i];
  }
  return 2 * num / (den + eps);
}

double consistency(const Map& a, const Map& m, double theta, double eps) {
  double in = 0, all = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    in += a[i] * m[i];
    all += a[i];
  }
  return theta - in / (all + eps);
}

}  // namespace oracle

Outcome criterion3() {
  constexpr double kTolerance = 1e-10;
  constexpr int kInstances = 50;
  std::mt19937_64 rng(3);
  const IcascConfig cfg;
  std::map<std::string, double> worst{{"grad-cam", 0}, {"a-ch", 0}, {"mask", 0}, {"l_as", 0}, {"l_ac", 0}};
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };

  for (int inst = 0; inst < kInstances; ++inst) {
    const std::size_t k = 2 + rng() % 4, h = 2 + rng() % 4, hin = 2 * h;
    // Features are post-ReLU (non-negative); gradients have either sign.
    auto stack = [&](std::size_t side, double lo) {
      oracle::Stack s(k, oracle::Map(side * side));
      for (auto& m : s)
        for (double& v : m) v = std::uniform_real_distribution<double>(lo, 1.0)(rng);
      return s;
    };
    auto to_tensor = [&](const oracle::Stack& s, std::size_t side) {
      std::vector<double> flat;
      for (const auto& m : s) flat.insert(flat.end(), m.begin(), m.end());
      return Tensor({1, k, side, side}, std::move(flat));
    };
    const auto f_last = stack(h, 0), f_in = stack(hin, 0);
    const auto g_t_last = stack(h, -1), g_c_last = stack(h, -1), g_t_in = stack(hin, -1);

    const Tensor F = to_tensor(f_last, h), Fi = to_tensor(f_in, hin);
    const Tensor Gt = to_tensor(g_t_last, h), Gc = to_tensor(g_c_last, h), Gti = to_tensor(g_t_in, hin);
    for (auto mech : {sf::attention::Mechanism::kGradCam, sf::attention::Mechanism::kACh}) {
      const bool cam = mech == sf::attention::Mechanism::kGradCam;
      const auto o_t = cam ? oracle::grad_cam(f_last, g_t_last) : oracle::a_ch(f_last, g_t_last);
      const auto o_c = cam ? oracle::grad_cam(f_last, g_c_last) : oracle::a_ch(f_last, g_c_last);
      const auto o_ti = cam ? oracle::grad_cam(f_in, g_t_in) : oracle::a_ch(f_in, g_t_in);
      const Tensor at = sf::attention::attention_values(mech, F, Gt);
      const Tensor ac = sf::attention::attention_values(mech, F, Gc);
      const Tensor ati = sf::attention::attention_values(mech, Fi, Gti);
      double& w = worst[cam ? "grad-cam" : "a-ch"];
      for (std::size_t i = 0; i < o_t.size(); ++i) w = std::max({w, rel(at[i], o_t[i]), rel(ac[i], o_c[i])});
      for (std::size_t i = 0; i < o_ti.size(); ++i) w = std::max(w, rel(ati[i], o_ti[i]));
      if (*std::max_element(o_t.begin(), o_t.end()) == 0.0) continue;  // degenerate target

      const auto o_m = oracle::mask(o_t, cfg.omega, cfg.sigma_factor);
      const auto o_mi = oracle::mask(oracle::resize(o_t, h, hin), cfg.omega, cfg.sigma_factor);
      const auto m = sf::icasc::region_mask(at, cfg);
      const auto mi = sf::icasc::region_mask_upsampled(at, hin, hin, cfg);
      for (std::size_t i = 0; i < o_m.size(); ++i) worst["mask"] = std::max(worst["mask"], rel(m.values[i], o_m[i]));
      for (std::size_t i = 0; i < o_mi.size(); ++i) worst["mask"] = std::max(worst["mask"], rel(mi.values[i], o_mi[i]));

      const double las = sf::icasc::attention_separation(at, ac, m, cfg).item();
      worst["l_as"] = std::max(worst["l_as"], rel(las, oracle::separation(o_t, o_c, o_m, cfg.epsilon)));
      const double lac = sf::icasc::attention_consistency(ati, mi, cfg).item();
      worst["l_ac"] = std::max(worst["l_ac"], rel(lac, oracle::consistency(o_ti, o_mi, cfg.theta, cfg.epsilon)));
    }
  }
  bool pass = true;
  std::string detail = "instances=" + std::to_string(kInstances);
  for (const auto& [name, w] : worst) {
    pass = pass && w < kTolerance;
    detail += " " + name + "=" + fmt_short(w);
  }
  return {pass, detail + " (tol " + fmt_short(kTolerance) + ")"};
}

// ---------------------------------------------------------------------------
// 4. Bounds and invariances over random inputs.

Outcome criterion4() {
  constexpr int kInputs = 1000;
  constexpr double kScaleTolerance = 1e-6;
  std::mt19937_64 rng(4);
  const IcascConfig cfg;
  std::size_t violations = 0;
  double worst_scale = 0.0;
  std::map<std::string, std::size_t> counts;

  for (int trial = 0; trial < kInputs; ++trial) {
    const std::size_t k = 2 + rng() % 4, h = 3 + rng() % 4;
    const double mag = std::pow(10.0, std::uniform_real_distribution<double>(-2, 2)(rng));
    const Tensor t = random_tensor(rng, {1, h, h}, 0, mag);
    const Tensor c = random_tensor(rng, {1, h, h}, 0, mag);
    const Tensor a_in = random_tensor(rng, {1, h, h}, 0, mag);
    const auto m = sf::icasc::region_mask(t, cfg);
    const double las = sf::icasc::attention_separation(t, c, m, cfg).item();
    const double lac = sf::icasc::attention_consistency(a_in, m, cfg).item();
    if (!(las >= 0 && las <= 1)) ++counts["l_as_bounds"];
    if (!(lac >= cfg.theta - 1 && lac <= cfg.theta)) ++counts["l_ac_bounds"];

    const double s = std::pow(10.0, std::uniform_real_distribution<double>(-1, 1)(rng));
    const double las_s = sf::icasc::attention_separation(ad::scale(t, s), ad::scale(c, s), m, cfg).item();
    const double lac_s = sf::icasc::attention_consistency(ad::scale(a_in, s), m, cfg).item();
    worst_scale = std::max({worst_scale, std::abs(las_s - las), std::abs(lac_s - lac)});

    const Tensor f = random_tensor(rng, {1, k, h, h}, 0, 1);
    const Tensor g = random_tensor(rng, {1, k, h, h}, -1, 1);
    std::vector<double> gp = g.vec();
    for (double& v : gp) v = std::max(v, 0.0);
    const Tensor ach = sf::attention::a_ch(f, g);
    const Tensor ach_pos = sf::attention::a_ch(f, Tensor(g.shape(), gp));
    for (std::size_t i = 0; i < ach.size(); ++i) {
      if (ach[i] < 0) ++counts["a_ch_negative"];
      if (ach[i] != ach_pos[i]) ++counts["a_ch_negative_grads"];
    }
  }
  if (worst_scale >= kScaleTolerance) ++counts["scale"];

  // Separation against a translated copy of a Gaussian bump, all-ones mask.
  std::size_t monotone = 0;
  const std::size_t h = 24;
  auto bump = [&](double cy, double cx) {
    std::vector<double> v(h * h);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        v[i * h + j] = std::exp(-(dx * dx + dy * dy) / 10.0);
      }
    return Tensor({1, h, h}, v);
  };
  const sf::icasc::RegionMask ones{Tensor({1, h, h}, std::vector<double>(h * h, 1.0)), {0}, {}};
  for (int trial = 0; trial < 20; ++trial) {
    const double cy = std::uniform_real_distribution<double>(6, 18)(rng);
    const double cx = std::uniform_real_distribution<double>(4, 8)(rng);
    const double dir_y = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const Tensor t = bump(cy, cx);
    double prev = 2.0;
    for (double d = 0; d <= 12; d += 0.25) {
      const double l = sf::icasc::attention_separation(t, bump(cy + dir_y * d, cx + d), ones, cfg).item();
      if (l > prev) ++monotone;
      prev = l;
    }
  }
  if (monotone) counts["monotonicity"] = monotone;

  for (const auto& [_, n] : counts) violations += n;
  std::string detail = "inputs=" + std::to_string(kInputs) + " violations=" + std::to_string(violations);
  for (const auto& [name, n] : counts) detail += " " + name + ":" + std::to_string(n);
  detail += " max_scale_drift=" + fmt_short(worst_scale) + " (tol " + fmt_short(kScaleTolerance) + ")";
  return {violations == 0, detail};
}

// ---------------------------------------------------------------------------
// 5 and 6. Trend experiment on the synthetic confusable dataset.

struct TrendSettings {
  std::size_t classes = 4;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t epochs = 25;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::vector<std::size_t> channels{8, 16};
};

struct ArmResult {
  double las_last = 0.0;
  double accuracy = 0.0;
  double ks = 0.0;
  double skip_rate = 0.0;
  double seconds = 0.0;
};

ArmResult train_arm(const TrendSettings& s, const sf::data::Dataset& train, const sf::data::Dataset& test,
                    std::uint64_t seed, bool baseline, sf::attention::Mechanism mech) {
  const auto start = std::chrono::steady_clock::now();
  sf::app::RunConfig cfg;
  cfg.model = {s.channels, train.samples.front().image.height, 1, s.classes, 3, false};
  cfg.optim.epochs = s.epochs;
  cfg.optim.lr = s.lr;
  cfg.optim.batch_size = s.batch_size;
  cfg.seed = seed;
  cfg.baseline = baseline;
  cfg.icasc.mechanism = mech;
  sf::app::Trainer trainer(cfg, train, nullptr);
  while (!trainer.done()) trainer.run_epoch();

  // Test-time attention is always measured with A_ch so the arms are compared
  // on one scale.
  sf::eval::EvalOptions eo;
  eo.icasc.mechanism = sf::attention::Mechanism::kACh;
  const auto ev = sf::eval::evaluate(trainer.state().params, test, eo);
  const auto [target, conf] = ev.ks_inputs();
  ArmResult r;
  r.las_last = ev.mean_las_last();
  r.accuracy = sf::eval::topk_accuracy(ev.probabilities, ev.classes, ev.labels, 1);
  r.ks = sf::eval::ks_statistic(target, conf).first;
  r.skip_rate = ev.skip_rate();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

struct TrendOutcome {
  Outcome c5, c6;
};

TrendOutcome criterion5and6(const fs::path& report_dir) {
  constexpr std::size_t kMajority = 4;
  constexpr double kAccuracyMargin = 0.02;
  constexpr double kBudgetSeconds = 30 * 60;
  const TrendSettings s;
  const auto start = std::chrono::steady_clock::now();

  sf::data::SynthSpec spec;
  spec.classes = s.classes;
  spec.seed = 1000;
  const auto train = sf::data::generate_synth(spec, s.train_per_class).data;
  spec.seed = 2000;
  const auto test = sf::data::generate_synth(spec, s.test_per_class).data;

  std::vector<ArmResult> base, ach, cam;
  for (auto seed : s.seeds) {
    base.push_back(train_arm(s, train, test, seed, true, sf::attention::Mechanism::kACh));
    ach.push_back(train_arm(s, train, test, seed, false, sf::attention::Mechanism::kACh));
    cam.push_back(train_arm(s, train, test, seed, false, sf::attention::Mechanism::kGradCam));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  auto mean = [](const std::vector<ArmResult>& v, double ArmResult::*f) {
    double t = 0;
    for (const auto& r : v) t += r.*f;
    return t / static_cast<double>(v.size());
  };
  auto wins = [&](const std::vector<ArmResult>& arm, double ArmResult::*f, bool lower) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < arm.size(); ++i) w += lower ? arm[i].*f < base[i].*f : arm[i].*f > base[i].*f;
    return w;
  };

  fs::create_directories(report_dir);
  std::ofstream csv(report_dir / "trend_report.csv");
  csv << "seed,arm,las_last,accuracy,ks,skip_rate,seconds\n";
  std::ostringstream table;
  table << "seed  arm                las_last   accuracy   ks       skip\n";
  auto row = [&](std::uint64_t seed, const char* arm, const ArmResult& r) {
    csv << seed << ',' << arm << ',' << fmt(r.las_last) << ',' << fmt(r.accuracy) << ',' << fmt(r.ks)
        << ',' << fmt(r.skip_rate) << ',' << fmt(r.seconds) << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "%-5llu %-18s %-10.4f %-10.4f %-8.4f %.3f\n",
                  static_cast<unsigned long long>(seed), arm, r.las_last, r.accuracy, r.ks, r.skip_rate);
    table << line;
  };
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    row(s.seeds[i], "baseline", base[i]);
    row(s.seeds[i], "icasc-a-ch", ach[i]);
    row(s.seeds[i], "icasc-grad-cam", cam[i]);
  }
  std::ofstream(report_dir / "trend_report.txt") << table.str();
  std::fputs(table.str().c_str(), stdout);

  const double acc_base = mean(base, &ArmResult::accuracy);
  auto verdict = [&](const std::vector<ArmResult>& arm, bool full) {
    const std::size_t las_wins = wins(arm, &ArmResult::las_last, true);
    const std::size_t ks_wins = wins(arm, &ArmResult::ks, false);
    const double acc = mean(arm, &ArmResult::accuracy);
    const bool acc_ok = acc >= acc_base - kAccuracyMargin;
    const bool pass = full ? las_wins >= kMajority && ks_wins >= kMajority && acc_ok && seconds < kBudgetSeconds
                           : acc_ok;
    return Outcome{pass, "las_lower=" + std::to_string(las_wins) + "/5 ks_higher=" +
                             std::to_string(ks_wins) + "/5 acc=" + fmt_short(acc) + " vs baseline " +
                             fmt_short(acc_base) + " (margin " + fmt_short(kAccuracyMargin) + ")"};
  };
  TrendOutcome out{verdict(ach, true), verdict(cam, false)};
  out.c5.detail += " runtime=" + fmt_short(seconds) + "s (budget " + fmt_short(kBudgetSeconds) + "s)";
  out.c6.detail += " report=" + (report_dir / "trend_report.txt").string();
  return out;
}

// ---------------------------------------------------------------------------
// 7. Exact KS statistic against a brute-force threshold sweep.

Outcome criterion7() {
  constexpr int kTrials = 20;
  constexpr std::size_t kSamples = 1000;
  std::mt19937_64 rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    // Mix continuous draws with a coarse grid so ties occur.
    std::vector<double> a(kSamples), b(kSamples);
    std::uniform_real_distribution<double> u(0, 1);
    const double shift = 0.02 * trial;
    for (std::size_t i = 0; i < kSamples; ++i) {
      a[i] = trial % 2 ? std::round(u(rng) * 50) / 50 : u(rng);
      b[i] = std::min(1.0, (trial % 2 ? std::round(u(rng) * 50) / 50 : u(rng)) + shift);
    }
    double brute = 0.0;
    std::vector<double> points = a;
    points.insert(points.end(), b.begin(), b.end());
    for (double t : points) {
      double fa = 0, fb = 0;
      for (double v : a) fa += v <= t;
      for (double v : b) fb += v <= t;
      brute = std::max(brute, std::abs(fa / kSamples - fb / kSamples));
    }
    if (sf::eval::ks_statistic(a, b).first != brute) ++mismatches;
  }
  return {mismatches == 0, "trials=" + std::to_string(kTrials) + " samples=" + std::to_string(kSamples) +
                               " mismatches=" + std::to_string(mismatches) + " (exact equality)"};
}

// ---------------------------------------------------------------------------
// 8. Two identical CLI training runs produce identical bytes.

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion8() {
  const fs::path dir = fs::temp_directory_path() / "sf_acceptance_determinism";
  fs::remove_all(dir);
  const std::string cli = SHARPEN_FOCUS_CLI;
  const std::string small = " --canvas 16 --motif-size 5 --confounder-size 6 --cue-size 3";
  if (shell(cli + " synth --per-class 8 --seed 3" + small + " --out " + (dir / "train").string()) != 0 ||
      shell(cli + " synth --per-class 4 --seed 4" + small + " --out " + (dir / "test").string()) != 0) {
    return {false, "synth failed"};
  }
  // The same command twice into the same directory; the first run's files are
  // copied aside before the second run.
  const std::string cmd = cli + " train --data " + (dir / "train").string() + " --test-data " +
                          (dir / "test").string() + " --epochs 3 --batch-size 8 --seed 9 --channels 4,8" +
                          " --save-every-epoch --out " + (dir / "run").string();
  if (shell(cmd) != 0) return {false, "first train run failed"};
  fs::rename(dir / "run", dir / "first");
  if (shell(cmd) != 0) return {false, "second train run failed"};
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(dir / "first")) {
    ++compared;
    differing += slurp(e.path()) != slurp(dir / "run" / e.path().filename());
  }
  const bool has_all = fs::exists(dir / "run" / "train_log.csv") && fs::exists(dir / "run" / "final.ckpt") &&
                       fs::exists(dir / "run" / "best.ckpt");
  fs::remove_all(dir);
  return {has_all && differing == 0 && compared >= 5,
          "files_compared=" + std::to_string(compared) + " differing=" + std::to_string(differing)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  fs::path report_dir = fs::current_path() / "acceptance_report";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--report" && i + 1 < argc) {
      report_dir = argv[++i];
    } else {
      const int c = std::atoi(a.c_str());
      if (c < 1 || c > 8) {
        std::fprintf(stderr, "unknown criterion '%s'\n", a.c_str());
        return 1;
      }
      selected.insert(c);
    }
  }
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::string> names{
      {1, "gradient vs finite differences"}, {2, "double-backprop Hessian-vector product"},
      {3, "formula oracle equivalence"},      {4, "bounds and invariances"},
      {5, "training trend (A_ch vs baseline)"}, {6, "mechanism comparison (Grad-CAM)"},
      {7, "KS exact vs brute force"},         {8, "determinism of train"}};
  bool all = true;
  auto report = [&](int c, const Outcome& o, double secs) {
    all = all && o.pass;
    std::printf("criterion %d: %s  %s  %s  [%.1fs]\n", c, o.pass ? "PASS" : "FAIL", names.at(c).c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  };
  auto timed = [&](int c, const std::function<Outcome()>& f) {
    if (!selected.count(c)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(c, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  timed(1, criterion1);
  timed(2, criterion2);
  timed(3, criterion3);
  timed(4, criterion4);
  if (selected.count(5) || selected.count(6)) {
    const auto t0 = std::chrono::steady_clock::now();
    TrendOutcome t;
    try {
      t = criterion5and6(report_dir);
    } catch (const std::exception& e) {
      t.c5 = t.c6 = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (selected.count(5)) report(5, t.c5, secs);
    if (selected.count(6)) report(6, t.c6, secs);
  }
  timed(7, criterion7);
  timed(8, criterion8);
  return all ? 0 : 1;
}

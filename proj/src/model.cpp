#include "sleeprad/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sleeprad/error.hpp"
#include "sleeprad/kernels.hpp"

namespace sleeprad::model {
namespace {

constexpr std::size_t kStages = kNumStages;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Lstm {
  const double* wx;  // [4H][D]
  const double* wh;  // [4H][H]
  const double* b;   // [4H]
};

struct LstmGrad {
  double* wx;
  double* wh;
  double* b;
};

// Activations of one direction, stored per processing step.
struct LstmTrace {
  std::vector<double> gates;  // S x 4H, post-nonlinearity (i, f, g, o)
  std::vector<double> c;      // S x H
  std::vector<double> h;      // S x H
};

struct Trace {
  std::size_t frames = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> step_len;
  std::vector<Matrix> layer_in;     // input of each conv block
  std::vector<Matrix> pre;          // conv output before ReLU
  std::vector<std::vector<double>> drop;  // dropout multipliers (empty when off)
  Matrix seq;                       // recurrent input, S x D
  LstmTrace fwd, bwd;
  Matrix out;                       // S x 2H
  std::vector<std::vector<std::size_t>> epoch_steps;
  Matrix pooled_epoch;              // E x 2H
  Matrix stage_logits;              // E x 5
  std::vector<double> event_logit;  // per step
};

void lstm_forward(const Lstm& p, const Matrix& u, std::size_t hidden, bool reverse, LstmTrace& tr) {
  const std::size_t s_len = u.rows, d = u.cols, g4 = 4 * hidden;
  tr.gates.assign(s_len * g4, 0.0);
  tr.c.assign(s_len * hidden, 0.0);
  tr.h.assign(s_len * hidden, 0.0);
  std::vector<double> a(g4);
  const std::vector<double> zeros(hidden, 0.0);
  for (std::size_t n = 0; n < s_len; ++n) {
    const std::size_t s = reverse ? s_len - 1 - n : n;
    const double* h_prev = n == 0 ? zeros.data() : &tr.h[(reverse ? s + 1 : s - 1) * hidden];
    const double* c_prev = n == 0 ? zeros.data() : &tr.c[(reverse ? s + 1 : s - 1) * hidden];
    const double* x = u.row(s);
    for (std::size_t r = 0; r < g4; ++r) {
      double acc = p.b[r];
      const double* wx = p.wx + r * d;
      for (std::size_t j = 0; j < d; ++j) acc += wx[j] * x[j];
      const double* wh = p.wh + r * hidden;
      for (std::size_t j = 0; j < hidden; ++j) acc += wh[j] * h_prev[j];
      a[r] = acc;
    }
    double* gt = &tr.gates[s * g4];
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = sigmoid(a[j]);
      const double f = sigmoid(a[hidden + j]);
      const double g = std::tanh(a[2 * hidden + j]);
      const double o = sigmoid(a[3 * hidden + j]);
      gt[j] = i;
      gt[hidden + j] = f;
      gt[2 * hidden + j] = g;
      gt[3 * hidden + j] = o;
      const double c = f * c_prev[j] + i * g;
      tr.c[s * hidden + j] = c;
      tr.h[s * hidden + j] = o * std::tanh(c);
    }
  }
}

// dh: S x H upstream gradient on the outputs; accumulates parameter gradients
// and the gradient on the inputs into du.
void lstm_backward(const Lstm& p, LstmGrad g, const Matrix& u, std::size_t hidden, bool reverse,
                   const LstmTrace& tr, const std::vector<double>& dh, Matrix& du) {
  const std::size_t s_len = u.rows, d = u.cols, g4 = 4 * hidden;
  std::vector<double> dh_next(hidden, 0.0), dc_next(hidden, 0.0), da(g4);
  const std::vector<double> zeros(hidden, 0.0);
  for (std::size_t n = s_len; n-- > 0;) {
    const std::size_t s = reverse ? s_len - 1 - n : n;
    const double* h_prev = n == 0 ? zeros.data() : &tr.h[(reverse ? s + 1 : s - 1) * hidden];
    const double* c_prev = n == 0 ? zeros.data() : &tr.c[(reverse ? s + 1 : s - 1) * hidden];
    const double* gt = &tr.gates[s * g4];
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = gt[j], f = gt[hidden + j], gg = gt[2 * hidden + j], o = gt[3 * hidden + j];
      const double tc = std::tanh(tr.c[s * hidden + j]);
      const double dhj = dh[s * hidden + j] + dh_next[j];
      const double dc = dc_next[j] + dhj * o * (1.0 - tc * tc);
      da[j] = dc * gg * i * (1.0 - i);
      da[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
      da[2 * hidden + j] = dc * i * (1.0 - gg * gg);
      da[3 * hidden + j] = dhj * tc * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    const double* x = u.row(s);
    double* dx = du.row(s);
    for (std::size_t r = 0; r < g4; ++r) {
      const double a = da[r];
      g.b[r] += a;
      double* gwx = g.wx + r * d;
      const double* wx = p.wx + r * d;
      for (std::size_t j = 0; j < d; ++j) {
        gwx[j] += a * x[j];
        dx[j] += a * wx[j];
      }
      double* gwh = g.wh + r * hidden;
      const double* wh = p.wh + r * hidden;
      for (std::size_t j = 0; j < hidden; ++j) {
        gwh[j] += a * h_prev[j];
        dh_next[j] += a * wh[j];
      }
    }
  }
}

void conv_backward(const Matrix& in, const Matrix& dout, const double* w, double* gw, double* gb, Matrix* din,
                   std::size_t kernel) {
  const std::size_t t_len = in.rows, cin = in.cols, cout = dout.cols;
  const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* dy = dout.row(t);
    for (std::size_t oc = 0; oc < cout; ++oc) gb[oc] += dy[oc];
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      const double* x = in.row(static_cast<std::size_t>(src));
      double* dx = din ? din->row(static_cast<std::size_t>(src)) : nullptr;
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const double g = dy[oc];
        if (g == 0.0) continue;
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const std::size_t idx = (oc * cin + ic) * kernel + k;
          gw[idx] += g * x[ic];
          if (dx) dx[ic] += g * w[idx];
        }
      }
    }
  }
}

std::vector<std::vector<std::size_t>> group_steps(std::span<const std::size_t> frame_epoch, std::size_t n_epochs,
                                                  std::size_t frames, std::size_t pool) {
  const std::size_t steps = (frames + pool - 1) / pool;
  std::vector<std::size_t> step_epoch(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t lo = s * pool, hi = std::min(frames, lo + pool);
    step_epoch[s] = std::min(n_epochs - 1, frame_epoch[lo + (hi - lo - 1) / 2]);
  }
  std::vector<std::vector<std::size_t>> groups(n_epochs);
  for (std::size_t s = 0; s < steps; ++s) groups[step_epoch[s]].push_back(s);
  for (std::size_t e = 0; e < n_epochs; ++e) {
    if (!groups[e].empty()) continue;
    std::size_t best = 0;
    std::size_t best_dist = std::numeric_limits<std::size_t>::max();
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t dist = step_epoch[s] > e ? step_epoch[s] - e : e - step_epoch[s];
      if (dist < best_dist) {
        best_dist = dist;
        best = s;
      }
    }
    groups[e].push_back(best);
  }
  return groups;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_channels == 0 || pool == 0 || hidden == 0 || kernel == 0) {
    throw ConfigError("model widths must be at least 1");
  }
  if (kernel % 2 == 0) throw ConfigError("convolution kernel width must be odd");
  for (auto c : conv_channels) {
    if (c == 0) throw ConfigError("model widths must be at least 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

void TrainSpec::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_records == 0 || max_epochs == 0) throw ConfigError("batch size and epoch count must be positive");
  if (!(weights.stage >= 0.0) || !(weights.event >= 0.0) || weights.stage + weights.event <= 0.0) {
    throw ConfigError("loss weights must be non-negative and not both zero");
  }
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
}

std::size_t TensorInfo::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Network::Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    TensorInfo t{std::move(name), std::move(shape), offset};
    offset += t.size();
    layout_.push_back(std::move(t));
  };
  std::size_t in = cfg_.input_channels;
  for (std::size_t b = 0; b < cfg_.conv_channels.size(); ++b) {
    const std::size_t out = cfg_.conv_channels[b];
    add("conv" + std::to_string(b) + ".weight", {out, in, cfg_.kernel});
    add("conv" + std::to_string(b) + ".bias", {out});
    in = out;
  }
  const std::size_t h = cfg_.hidden;
  for (const char* dir : {"lstm_fwd", "lstm_bwd"}) {
    add(std::string(dir) + ".w_input", {4 * h, in});
    add(std::string(dir) + ".w_hidden", {4 * h, h});
    add(std::string(dir) + ".bias", {4 * h});
  }
  add("stage_head.weight", {kStages, 2 * h});
  add("stage_head.bias", {kStages});
  add("event_head.weight", {1, 2 * h});
  add("event_head.bias", {1});
  params_.assign(offset, 0.0);
  initialize(cfg_.seed);
}

const TensorInfo& Network::tensor(const std::string& name) const {
  for (const auto& t : layout_) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor named " + name);
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 100));
  std::fill(params_.begin(), params_.end(), 0.0);
  const std::size_t h = cfg_.hidden;
  for (const auto& t : layout_) {
    const bool is_bias = t.shape.size() == 1;
    if (is_bias) {
      if (t.name.rfind("lstm", 0) == 0) {
        for (std::size_t j = h; j < 2 * h; ++j) params_[t.offset + j] = 1.0;
      }
      continue;
    }
    double limit;
    if (t.name.rfind("lstm", 0) == 0) {
      limit = 1.0 / std::sqrt(static_cast<double>(h));
    } else {
      const std::size_t receptive = t.shape.size() == 3 ? t.shape[2] : 1;
      const double fan_in = static_cast<double>(t.shape[1] * receptive);
      const double fan_out = static_cast<double>(t.shape[0] * receptive);
      limit = std::sqrt(6.0 / (fan_in + fan_out));
    }
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t j = 0; j < t.size(); ++j) params_[t.offset + j] = u(rng);
  }
}

namespace {

struct ParamView {
  std::vector<const double*> conv_w, conv_b;
  Lstm fwd{}, bwd{};
  const double* stage_w = nullptr;
  const double* stage_b = nullptr;
  const double* event_w = nullptr;
  const double* event_b = nullptr;
};

// Tensors are laid out in construction order, so positional lookup is safe.
template <class Ptr>
struct Cursor {
  Ptr base;
  const std::vector<TensorInfo>& layout;
  std::size_t i = 0;
  Ptr next() { return base + layout[i++].offset; }
};

ParamView view(const double* p, const std::vector<TensorInfo>& layout, std::size_t blocks) {
  ParamView v;
  Cursor<const double*> c{p, layout};
  for (std::size_t b = 0; b < blocks; ++b) {
    v.conv_w.push_back(c.next());
    v.conv_b.push_back(c.next());
  }
  v.fwd = {c.next(), c.next(), c.next()};
  v.bwd = {c.next(), c.next(), c.next()};
  v.stage_w = c.next();
  v.stage_b = c.next();
  v.event_w = c.next();
  v.event_b = c.next();
  return v;
}

void run_forward(const ModelConfig& cfg, const ParamView& p, const Matrix& x, std::span<const std::size_t> frame_epoch,
                 std::size_t n_epochs, std::uint64_t dropout_seed, Trace& tr) {
  if (x.rows == 0) throw std::invalid_argument("zero-length input");
  if (x.cols != cfg.input_channels) throw std::invalid_argument("input channel count does not match the model");
  if (frame_epoch.size() != x.rows) throw std::invalid_argument("frame-epoch map does not match the input length");
  if (n_epochs == 0) throw std::invalid_argument("no epochs");

  const std::size_t t_len = x.rows, pool = cfg.pool;
  const std::size_t steps = (t_len + pool - 1) / pool;
  tr.frames = t_len;
  tr.steps = steps;
  tr.step_len.resize(steps);
  Matrix h(steps, x.cols);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t lo = s * pool, hi = std::min(t_len, lo + pool);
    tr.step_len[s] = hi - lo;
    double* r = h.row(s);
    for (std::size_t t = lo; t < hi; ++t) {
      const double* xr = x.row(t);
      for (std::size_t j = 0; j < x.cols; ++j) r[j] += xr[j];
    }
    for (std::size_t j = 0; j < x.cols; ++j) r[j] /= static_cast<double>(hi - lo);
  }

  std::mt19937_64 rng(dropout_seed);
  std::bernoulli_distribution keep(1.0 - cfg.dropout);
  const bool use_dropout = dropout_seed != 0 && cfg.dropout > 0.0;
  const std::size_t blocks = cfg.conv_channels.size();
  tr.layer_in.assign(blocks, {});
  tr.pre.assign(blocks, {});
  tr.drop.assign(blocks, {});
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t out_c = cfg.conv_channels[b];
    const std::size_t in_c = h.cols;
    tr.layer_in[b] = std::move(h);
    tr.pre[b] = kernels::conv1d_same(tr.layer_in[b], {p.conv_w[b], out_c * in_c * cfg.kernel},
                                     {p.conv_b[b], out_c}, out_c, cfg.kernel);
    h = tr.pre[b];
    for (double& v : h.data) v = std::max(v, 0.0);
    if (use_dropout) {
      auto& m = tr.drop[b];
      m.resize(h.data.size());
      const double scale = 1.0 / (1.0 - cfg.dropout);
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] = keep(rng) ? scale : 0.0;
        h.data[j] *= m[j];
      }
    }
  }
  tr.seq = std::move(h);

  const std::size_t hid = cfg.hidden;
  lstm_forward(p.fwd, tr.seq, hid, false, tr.fwd);
  lstm_forward(p.bwd, tr.seq, hid, true, tr.bwd);
  tr.out = Matrix(steps, 2 * hid);
  for (std::size_t s = 0; s < steps; ++s) {
    std::copy_n(&tr.fwd.h[s * hid], hid, tr.out.row(s));
    std::copy_n(&tr.bwd.h[s * hid], hid, tr.out.row(s) + hid);
  }

  tr.event_logit.resize(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    double z = p.event_b[0];
    const double* o = tr.out.row(s);
    for (std::size_t j = 0; j < 2 * hid; ++j) z += p.event_w[j] * o[j];
    tr.event_logit[s] = z;
  }

  tr.epoch_steps = group_steps(frame_epoch, n_epochs, t_len, pool);
  tr.pooled_epoch = Matrix(n_epochs, 2 * hid);
  tr.stage_logits = Matrix(n_epochs, kStages);
  for (std::size_t e = 0; e < n_epochs; ++e) {
    double* g = tr.pooled_epoch.row(e);
    const auto& group = tr.epoch_steps[e];
    for (std::size_t s : group) {
      const double* o = tr.out.row(s);
      for (std::size_t j = 0; j < 2 * hid; ++j) g[j] += o[j];
    }
    for (std::size_t j = 0; j < 2 * hid; ++j) g[j] /= static_cast<double>(group.size());
    for (std::size_t c = 0; c < kStages; ++c) {
      double z = p.stage_b[c];
      const double* w = p.stage_w + c * 2 * hid;
      for (std::size_t j = 0; j < 2 * hid; ++j) z += w[j] * g[j];
      tr.stage_logits(e, c) = z;
    }
  }
}

ModelOutput to_output(const Trace& tr, std::size_t pool) {
  ModelOutput out;
  out.stage_probs = Matrix(tr.stage_logits.rows, kStages);
  for (std::size_t e = 0; e < tr.stage_logits.rows; ++e) {
    const double* z = tr.stage_logits.row(e);
    const double zmax = *std::max_element(z, z + kStages);
    double sum = 0.0;
    for (std::size_t c = 0; c < kStages; ++c) sum += out.stage_probs(e, c) = std::exp(z[c] - zmax);
    for (std::size_t c = 0; c < kStages; ++c) out.stage_probs(e, c) /= sum;
  }
  out.event_probs.resize(tr.frames);
  for (std::size_t t = 0; t < tr.frames; ++t) out.event_probs[t] = sigmoid(tr.event_logit[t / pool]);
  return out;
}

void check_sample(const Sample& s) {
  if (s.stage_labels.size() != s.n_epochs) throw std::invalid_argument("stage labels do not match the epoch count");
  if (s.event_labels.size() != s.inputs.rows) throw std::invalid_argument("event labels do not match the frame count");
}

}  // namespace

ModelOutput Network::forward(const Matrix& inputs, std::span<const std::size_t> frame_epoch,
                             std::size_t n_epochs) const {
  Trace tr;
  run_forward(cfg_, view(params_.data(), layout_, cfg_.conv_channels.size()), inputs, frame_epoch, n_epochs, 0, tr);
  return to_output(tr, cfg_.pool);
}

double loss(const ModelOutput& out, const Sample& truth, const LossWeights& w) {
  check_sample(truth);
  if (out.stage_probs.rows != truth.n_epochs || out.event_probs.size() != truth.event_labels.size()) {
    throw std::invalid_argument("output and truth shapes differ");
  }
  double stage = 0.0;
  std::size_t labelled = 0;
  for (std::size_t e = 0; e < truth.n_epochs; ++e) {
    const int y = truth.stage_labels[e];
    if (y < 0) continue;
    stage -= std::log(std::max(out.stage_probs(e, static_cast<std::size_t>(y)), 1e-300));
    ++labelled;
  }
  if (labelled > 0) stage /= static_cast<double>(labelled);
  double event = 0.0;
  for (std::size_t t = 0; t < out.event_probs.size(); ++t) {
    const double p = out.event_probs[t];
    event -= truth.event_labels[t] ? std::log(std::max(p, 1e-300)) : std::log(std::max(1.0 - p, 1e-300));
  }
  if (!out.event_probs.empty()) event /= static_cast<double>(out.event_probs.size());
  return w.stage * stage + w.event * event;
}

double Network::loss_and_gradient(const Sample& s, const LossWeights& w, std::vector<double>& grad,
                                  std::uint64_t dropout_seed) const {
  check_sample(s);
  const std::size_t blocks = cfg_.conv_channels.size();
  const auto p = view(params_.data(), layout_, blocks);
  Trace tr;
  run_forward(cfg_, p, s.inputs, s.frame_epoch, s.n_epochs, dropout_seed, tr);

  grad.assign(params_.size(), 0.0);
  Cursor<double*> gc{grad.data(), layout_};
  std::vector<double*> gconv_w, gconv_b;
  for (std::size_t b = 0; b < blocks; ++b) {
    gconv_w.push_back(gc.next());
    gconv_b.push_back(gc.next());
  }
  LstmGrad gf{gc.next(), gc.next(), gc.next()};
  LstmGrad gb{gc.next(), gc.next(), gc.next()};
  double* g_stage_w = gc.next();
  double* g_stage_b = gc.next();
  double* g_event_w = gc.next();
  double* g_event_b = gc.next();

  const std::size_t hid = cfg_.hidden, h2 = 2 * hid;
  Matrix d_out(tr.steps, h2);

  // Stage head: softmax cross-entropy over labelled epochs.
  std::size_t labelled = 0;
  for (int y : s.stage_labels) labelled += y >= 0;
  double stage_loss = 0.0;
  if (labelled > 0 && w.stage > 0.0) {
    const double scale = w.stage / static_cast<double>(labelled);
    for (std::size_t e = 0; e < s.n_epochs; ++e) {
      const int y = s.stage_labels[e];
      if (y < 0) continue;
      const double* z = tr.stage_logits.row(e);
      const double zmax = *std::max_element(z, z + kStages);
      double sum = 0.0;
      for (std::size_t c = 0; c < kStages; ++c) sum += std::exp(z[c] - zmax);
      const double lse = zmax + std::log(sum);
      stage_loss += lse - z[y];
      std::vector<double> dg(h2, 0.0);
      const double* g = tr.pooled_epoch.row(e);
      for (std::size_t c = 0; c < kStages; ++c) {
        const double dz = scale * (std::exp(z[c] - lse) - (static_cast<int>(c) == y ? 1.0 : 0.0));
        g_stage_b[c] += dz;
        const double* wr = p.stage_w + c * h2;
        double* gwr = g_stage_w + c * h2;
        for (std::size_t j = 0; j < h2; ++j) {
          gwr[j] += dz * g[j];
          dg[j] += dz * wr[j];
        }
      }
      const auto& group = tr.epoch_steps[e];
      const double share = 1.0 / static_cast<double>(group.size());
      for (std::size_t st : group) {
        double* d = d_out.row(st);
        for (std::size_t j = 0; j < h2; ++j) d[j] += share * dg[j];
      }
    }
    stage_loss /= static_cast<double>(labelled);
  }

  // Event head: every frame of a step shares the step's logit.
  double event_loss = 0.0;
  const double escale = w.event / static_cast<double>(tr.frames);
  for (std::size_t st = 0; st < tr.steps; ++st) {
    const double z = tr.event_logit[st];
    const double prob = sigmoid(z);
    double dz = 0.0;
    for (std::size_t t = st * cfg_.pool; t < st * cfg_.pool + tr.step_len[st]; ++t) {
      const double y = s.event_labels[t] ? 1.0 : 0.0;
      event_loss += softplus(z) - y * z;
      dz += prob - y;
    }
    if (w.event == 0.0) continue;
    dz *= escale;
    g_event_b[0] += dz;
    const double* o = tr.out.row(st);
    double* d = d_out.row(st);
    for (std::size_t j = 0; j < h2; ++j) {
      g_event_w[j] += dz * o[j];
      d[j] += dz * p.event_w[j];
    }
  }
  event_loss /= static_cast<double>(tr.frames);

  std::vector<double> dh_f(tr.steps * hid), dh_b(tr.steps * hid);
  for (std::size_t st = 0; st < tr.steps; ++st) {
    std::copy_n(d_out.row(st), hid, &dh_f[st * hid]);
    std::copy_n(d_out.row(st) + hid, hid, &dh_b[st * hid]);
  }
  Matrix d_seq(tr.steps, tr.seq.cols);
  lstm_backward(p.fwd, gf, tr.seq, hid, false, tr.fwd, dh_f, d_seq);
  lstm_backward(p.bwd, gb, tr.seq, hid, true, tr.bwd, dh_b, d_seq);

  Matrix d = std::move(d_seq);
  for (std::size_t b = blocks; b-- > 0;) {
    const auto& pre = tr.pre[b];
    for (std::size_t j = 0; j < d.data.size(); ++j) {
      if (!tr.drop[b].empty()) d.data[j] *= tr.drop[b][j];
      if (pre.data[j] <= 0.0) d.data[j] = 0.0;
    }
    Matrix d_in;
    if (b > 0) d_in = Matrix(tr.layer_in[b].rows, tr.layer_in[b].cols);
    conv_backward(tr.layer_in[b], d, p.conv_w[b], gconv_w[b], gconv_b[b], b > 0 ? &d_in : nullptr, cfg_.kernel);
    d = std::move(d_in);
  }
  return w.stage * stage_loss + w.event * event_loss;
}

double stage_accuracy(const ModelOutput& out, const Sample& s) {
  std::size_t hit = 0, n = 0;
  for (std::size_t e = 0; e < s.n_epochs; ++e) {
    if (s.stage_labels[e] < 0) continue;
    const double* r = out.stage_probs.row(e);
    const auto arg = static_cast<int>(std::max_element(r, r + kStages) - r);
    hit += arg == s.stage_labels[e];
    ++n;
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

TrainHistory train(Network& net, std::span<const Sample> train_set, std::span<const Sample> val_set,
                   const TrainSpec& spec, const std::function<void(std::size_t, double)>& on_step) {
  spec.validate();
  if (train_set.empty()) throw EmptyInputError("empty training set");
  auto params = net.parameters();
  const std::size_t np = params.size();
  std::vector<double> velocity(np, 0.0), m1(np, 0.0), m2(np, 0.0);
  std::vector<double> best_params(params.begin(), params.end());
  std::mt19937_64 rng(mix_seed(spec.seed, 200));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto validation_loss = [&]() {
    double total = 0.0;
    for (const auto& s : val_set) total += loss(net.forward(s.inputs, s.frame_epoch, s.n_epochs), s, spec.weights);
    return total / static_cast<double>(val_set.size());
  };

  TrainHistory hist;
  std::size_t since_best = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < spec.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t first = 0; first < order.size(); first += spec.batch_records) {
      const std::size_t count = std::min(spec.batch_records, order.size() - first);
      std::vector<std::vector<double>> grads(count);
      std::vector<double> losses(count);
      std::vector<std::uint64_t> drop_seeds(count);
      for (std::size_t i = 0; i < count; ++i) drop_seeds[i] = mix_seed(spec.seed, 1000 + hist.steps * 64 + i) | 1;
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
        const auto& s = train_set[order[first + static_cast<std::size_t>(i)]];
        losses[i] = net.loss_and_gradient(s, spec.weights, grads[i], drop_seeds[i]);
      }
      std::vector<double> g(np, 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += losses[i];
        for (std::size_t j = 0; j < np; ++j) g[j] += grads[i][j];
      }
      const double inv = 1.0 / static_cast<double>(count);
      batch_loss *= inv;
      double norm2 = 0.0;
      for (double& v : g) {
        v *= inv;
        norm2 += v * v;
      }
      if (spec.clip_norm > 0.0 && std::sqrt(norm2) > spec.clip_norm) {
        const double c = spec.clip_norm / std::sqrt(norm2);
        for (double& v : g) v *= c;
      }

      ++hist.steps;
      if (spec.optimizer == Optimizer::Adam) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(hist.steps));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(hist.steps));
        for (std::size_t j = 0; j < np; ++j) {
          m1[j] = b1 * m1[j] + (1.0 - b1) * g[j];
          m2[j] = b2 * m2[j] + (1.0 - b2) * g[j] * g[j];
          params[j] -= spec.learning_rate * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + eps);
        }
      } else {
        for (std::size_t j = 0; j < np; ++j) {
          velocity[j] = spec.momentum * velocity[j] + g[j];
          params[j] -= spec.learning_rate * velocity[j];
        }
      }
      hist.train_loss.push_back(batch_loss);
      if (on_step) on_step(hist.steps, batch_loss);
    }

    if (val_set.empty()) continue;
    const double v = validation_loss();
    hist.val_loss.push_back(v);
    if (v < best) {
      best = v;
      since_best = 0;
      best_params.assign(params.begin(), params.end());
    } else if (++since_best >= spec.patience) {
      hist.best_val_loss.push_back(best);
      hist.stopped_early = true;
      break;
    }
    hist.best_val_loss.push_back(best);
  }
  if (!val_set.empty()) std::copy(best_params.begin(), best_params.end(), params.begin());
  return hist;
}

namespace {

constexpr char kMagic[8] = {'S', 'L', 'R', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const features::Normalizer& norm) {
  const auto& cfg = net.config();
  nlohmann::json h;
  h["config"] = {{"input_channels", cfg.input_channels}, {"pool", cfg.pool}, {"conv_channels", cfg.conv_channels},
                 {"kernel", cfg.kernel}, {"hidden", cfg.hidden}, {"dropout", cfg.dropout}, {"seed", cfg.seed}};
  h["tensors"] = nlohmann::json::array();
  for (const auto& t : net.tensors()) h["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  h["parameter_count"] = net.parameter_count();
  h["normalizer"] = {{"mean", norm.mean}, {"scale", norm.scale}};
  const std::string header = h.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double v : net.parameters()) {
    put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  if (get_u32(is) != kVersion) throw DataError("unsupported checkpoint version");
  const std::uint32_t len = get_u32(is);
  std::string header(len, '\0');
  if (!is.read(header.data(), len)) throw DataError("truncated checkpoint header");

  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(header);
    const auto& c = h.at("config");
    ck.config.input_channels = c.at("input_channels");
    ck.config.pool = c.at("pool");
    ck.config.conv_channels = c.at("conv_channels").get<std::vector<std::size_t>>();
    ck.config.kernel = c.at("kernel");
    ck.config.hidden = c.at("hidden");
    ck.config.dropout = c.at("dropout");
    ck.config.seed = c.at("seed");
    ck.normalizer.mean = h.at("normalizer").at("mean").get<std::vector<double>>();
    ck.normalizer.scale = h.at("normalizer").at("scale").get<std::vector<double>>();
    const std::size_t n = h.at("parameter_count");
    ck.parameters.resize(n);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  for (double& v : ck.parameters) v = std::bit_cast<float>(get_u32(is));
  return ck;
}

Network network_from(const Checkpoint& ckpt) {
  Network net(ckpt.config);
  if (net.parameter_count() != ckpt.parameters.size()) throw DataError("checkpoint parameter count mismatch");
  std::copy(ckpt.parameters.begin(), ckpt.parameters.end(), net.parameters().begin());
  return net;
}

}  // namespace sleeprad::model

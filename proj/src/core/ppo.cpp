#include "srblab/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "json_util.hpp"
#include "srblab/error.hpp"

namespace srblab {

using detail::json;

namespace {

// Vectorized tanh through exp; absolute error stays near machine epsilon.
template <typename Derived>
MatX fast_tanh(const Eigen::ArrayBase<Derived>& z) {
  const auto e = (2.0 * z.cwiseMax(-20.0).cwiseMin(20.0)).exp();
  return ((e - 1.0) / (e + 1.0)).matrix();
}

}  // namespace

MLP::MLP(int in, const std::vector<int>& hidden, int out) {
  require(in > 0 && out > 0, "mlp: dimensions must be positive");
  int prev = in;
  for (int h : hidden) {
    require(h > 0, "mlp: hidden width must be positive");
    layers_.push_back({MatX::Zero(h, prev), VecX::Zero(h)});
    prev = h;
  }
  layers_.push_back({MatX::Zero(out, prev), VecX::Zero(out)});
}

void MLP::initialize(std::mt19937_64& rng, double out_scale) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& L = layers_[l];
    const double s = (l + 1 == layers_.size() ? out_scale : 1.0) / std::sqrt(static_cast<double>(L.W.cols()));
    for (Eigen::Index i = 0; i < L.W.size(); ++i) L.W.data()[i] = s * n(rng);
    L.b.setZero();
  }
}

int MLP::num_params() const {
  int n = 0;
  for (const auto& L : layers_) n += static_cast<int>(L.W.size() + L.b.size());
  return n;
}

std::vector<int> MLP::layer_sizes() const {
  std::vector<int> s;
  if (layers_.empty()) return s;
  s.push_back(input_dim());
  for (const auto& L : layers_) s.push_back(static_cast<int>(L.W.rows()));
  return s;
}

VecX MLP::params() const {
  VecX p(num_params());
  Eigen::Index k = 0;
  for (const auto& L : layers_) {
    for (Eigen::Index r = 0; r < L.W.rows(); ++r) {
      p.segment(k, L.W.cols()) = L.W.row(r).transpose();
      k += L.W.cols();
    }
    p.segment(k, L.b.size()) = L.b;
    k += L.b.size();
  }
  return p;
}

void MLP::set_params(const Eigen::Ref<const VecX>& p) {
  require(p.size() == num_params(), "mlp: parameter vector has the wrong size");
  Eigen::Index k = 0;
  for (auto& L : layers_) {
    for (Eigen::Index r = 0; r < L.W.rows(); ++r) {
      L.W.row(r) = p.segment(k, L.W.cols()).transpose();
      k += L.W.cols();
    }
    L.b = p.segment(k, L.b.size());
    k += L.b.size();
  }
}

VecX MLP::forward(const Eigen::Ref<const VecX>& x) const {
  require(x.size() == input_dim(), "mlp: input has " + std::to_string(x.size()) + " entries, expected " +
                                       std::to_string(input_dim()));
  VecX h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    VecX z = layers_[l].W * h + layers_[l].b;
    h = l + 1 == layers_.size() ? z : VecX(fast_tanh(z.array()));
  }
  return h;
}

MatX MLP::forward_batch(const Eigen::Ref<const MatX>& X) const {
  Cache c;
  return forward_batch(X, c);
}

MatX MLP::forward_batch(const Eigen::Ref<const MatX>& X, Cache& cache) const {
  require(X.rows() == input_dim(), "mlp: input has " + std::to_string(X.rows()) + " rows, expected " +
                                       std::to_string(input_dim()));
  cache.acts.clear();
  cache.acts.push_back(X);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    MatX z = layers_[l].W * cache.acts.back();
    z.colwise() += layers_[l].b;
    if (l + 1 < layers_.size()) z = fast_tanh(z.array());
    cache.acts.push_back(std::move(z));
  }
  return cache.acts.back();
}

VecX MLP::backward(const Cache& cache, const Eigen::Ref<const MatX>& dY, MatX* dX) const {
  require(cache.acts.size() == layers_.size() + 1, "mlp: backward needs a forward cache");
  require(dY.rows() == output_dim() && dY.cols() == cache.acts.back().cols(), "mlp: output gradient has the wrong shape");
  VecX g(num_params());
  // Offsets of each layer block in the flat layout.
  std::vector<Eigen::Index> off(layers_.size());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    off[l] = k;
    k += layers_[l].W.size() + layers_[l].b.size();
  }
  MatX delta = dY;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const MatX& in = cache.acts[l];
    const MatX dW = delta * in.transpose();
    Eigen::Index p = off[l];
    for (Eigen::Index r = 0; r < dW.rows(); ++r) {
      g.segment(p, dW.cols()) = dW.row(r).transpose();
      p += dW.cols();
    }
    g.segment(p, delta.rows()) = delta.rowwise().sum();
    if (l > 0 || dX) {
      MatX back = layers_[l].W.transpose() * delta;
      if (l > 0) {
        delta = back.array() * (1.0 - in.array().square());
      } else {
        *dX = std::move(back);
      }
    }
  }
  return g;
}

VecX GaussianPolicy::params() const {
  VecX p(num_params());
  p << mean.params(), log_std;
  return p;
}

void GaussianPolicy::set_params(const Eigen::Ref<const VecX>& p) {
  require(p.size() == num_params(), "policy: parameter vector has the wrong size");
  mean.set_params(p.head(mean.num_params()));
  log_std = p.tail(log_std.size());
}

double gaussian_log_prob(const Eigen::Ref<const VecX>& mu, const Eigen::Ref<const VecX>& log_std,
                         const Eigen::Ref<const VecX>& a) {
  const VecX z = (a - mu).cwiseQuotient(log_std.array().exp().matrix());
  return -0.5 * z.squaredNorm() - log_std.sum() - 0.5 * static_cast<double>(a.size()) * std::log(2.0 * M_PI);
}

VecX GaussianPolicy::sample(const Eigen::Ref<const VecX>& obs, std::mt19937_64& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  VecX a = mean.forward(obs);
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += std::exp(log_std[i]) * n(rng);
  return a;
}

double GaussianPolicy::log_prob(const Eigen::Ref<const VecX>& obs, const Eigen::Ref<const VecX>& action) const {
  return gaussian_log_prob(mean.forward(obs), log_std, action);
}

RunningNormalizer::RunningNormalizer(int dim) : mean(VecX::Zero(dim)), var(VecX::Ones(dim)) {}

void RunningNormalizer::update(const Eigen::Ref<const MatX>& batch) {
  if (batch.cols() == 0) return;
  require(batch.rows() == mean.size(), "normalizer: dimension mismatch");
  const double n = static_cast<double>(batch.cols());
  const VecX bm = batch.rowwise().mean();
  const VecX bv = (batch.colwise() - bm).array().square().rowwise().sum() / n;
  if (count == 0.0) {
    mean = bm;
    var = bv;
    count = n;
    return;
  }
  const double total = count + n;
  const VecX d = bm - mean;
  mean += d * (n / total);
  var = (var * count + bv * n + d.cwiseProduct(d) * (count * n / total)) / total;
  count = total;
}

VecX RunningNormalizer::normalize(const Eigen::Ref<const VecX>& x) const {
  const VecX z = (x - mean).cwiseQuotient((var.array() + 1e-8).sqrt().matrix());
  return z.cwiseMax(-clip).cwiseMin(clip);
}

MatX RunningNormalizer::normalize_batch(const Eigen::Ref<const MatX>& X) const {
  const VecX inv = (var.array() + 1e-8).sqrt().inverse();
  MatX Z = (X.colwise() - mean).array().colwise() * inv.array();
  return Z.cwiseMax(-clip).cwiseMin(clip);
}

void Adam::step(VecX& params, const VecX& grad) {
  if (m.size() != params.size()) {
    m = VecX::Zero(params.size());
    v = VecX::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1 - beta1) * grad;
  v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void PPOConfig::validate() const {
  require(steps_per_update > 0 && minibatch > 0, "ppo: batch sizes must be positive");
  require(steps_per_update % minibatch == 0, "ppo: minibatch size must divide the update batch");
  require(gamma > 0.0 && gamma < 1.0, "ppo: gamma must lie in (0, 1)");
  require(lambda >= 0.0 && lambda <= 1.0, "ppo: lambda must lie in [0, 1]");
  require(clip >= 0.0, "ppo: clip must be nonnegative");
  require(lr > 0.0, "ppo: learning rate must be positive");
  require(epochs > 0, "ppo: epochs must be positive");
  require(num_envs > 0 && steps_per_update % num_envs == 0, "ppo: num_envs must divide the update batch");
  require(threads > 0, "ppo: threads must be positive");
  require(init_std_fraction > 0.0, "ppo: init_std_fraction must be positive");
}

PPOConfig parse_ppo_config(const std::string& text) {
  const json j = detail::parse_json(text, "ppo config");
  const std::string p = "ppo.";
  detail::check_keys(j, {"steps_per_update", "minibatch", "gamma", "lambda", "clip", "lr", "epochs", "total_steps",
                         "hidden", "init_std_fraction", "max_grad_norm", "entropy_coef", "target_kl", "num_envs",
                         "threads", "eval_every", "eval_episodes", "eval_target_length", "eval_required", "stop_cap",
                         "time_budget"},
                     p);
  PPOConfig c;
  c.steps_per_update = detail::get_int(j, "steps_per_update", p, c.steps_per_update);
  c.minibatch = detail::get_int(j, "minibatch", p, c.minibatch);
  c.gamma = detail::get_number(j, "gamma", p, c.gamma);
  c.lambda = detail::get_number(j, "lambda", p, c.lambda);
  c.clip = detail::get_number(j, "clip", p, c.clip);
  c.lr = detail::get_number(j, "lr", p, c.lr);
  c.epochs = detail::get_int(j, "epochs", p, c.epochs);
  c.total_steps = static_cast<std::int64_t>(detail::get_number(j, "total_steps", p, static_cast<double>(c.total_steps)));
  if (j.contains("hidden")) {
    const json& h = j.at("hidden");
    if (!h.is_array() || h.empty()) fail(ErrorCode::Parse, "config: field 'ppo.hidden' must be a nonempty array");
    c.hidden.clear();
    for (const json& v : h) c.hidden.push_back(v.get<int>());
  }
  c.init_std_fraction = detail::get_number(j, "init_std_fraction", p, c.init_std_fraction);
  c.max_grad_norm = detail::get_number(j, "max_grad_norm", p, c.max_grad_norm);
  c.entropy_coef = detail::get_number(j, "entropy_coef", p, c.entropy_coef);
  c.target_kl = detail::get_number(j, "target_kl", p, c.target_kl);
  c.num_envs = detail::get_int(j, "num_envs", p, c.num_envs);
  c.threads = detail::get_int(j, "threads", p, c.threads);
  c.eval_every = static_cast<std::int64_t>(detail::get_number(j, "eval_every", p, static_cast<double>(c.eval_every)));
  c.eval_episodes = detail::get_int(j, "eval_episodes", p, c.eval_episodes);
  c.eval_target_length = detail::get_number(j, "eval_target_length", p, c.eval_target_length);
  c.eval_required = detail::get_int(j, "eval_required", p, c.eval_required);
  c.stop_cap = detail::get_number(j, "stop_cap", p, c.stop_cap);
  c.time_budget = detail::get_number(j, "time_budget", p, c.time_budget);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  return c;
}

GAEResult gae(const VecX& rewards, const VecX& values, const std::vector<bool>& done, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  require(values.size() == n + 1 && static_cast<Eigen::Index>(done.size()) == n, "gae: length mismatch");
  VecX next = values.tail(n);
  return gae(rewards, values.head(n), next, done, done, gamma, lambda);
}

GAEResult gae(const VecX& rewards, const VecX& values, const VecX& next_values, const std::vector<bool>& terminal,
              const std::vector<bool>& episode_end, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  require(values.size() == n && next_values.size() == n && static_cast<Eigen::Index>(terminal.size()) == n &&
              static_cast<Eigen::Index>(episode_end.size()) == n,
          "gae: length mismatch");
  GAEResult r;
  r.advantages = VecX::Zero(n);
  double acc = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double boot = terminal[t] ? 0.0 : next_values[t];
    const double delta = rewards[t] + gamma * boot - values[t];
    acc = delta + (episode_end[t] ? 0.0 : gamma * lambda * acc);
    r.advantages[t] = acc;
  }
  r.returns = r.advantages + values;
  return r;
}

double clipped_surrogate(double ratio, double advantage, double clip, double* dlogratio) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  const double a = ratio * advantage, b = clipped * advantage;
  // The clipped branch wins ties; it carries gradient only strictly inside the clip range.
  if (a < b) {
    if (dlogratio) *dlogratio = a;
    return a;
  }
  if (dlogratio) *dlogratio = (ratio > 1.0 - clip && ratio < 1.0 + clip) ? b : 0.0;
  return b;
}

namespace {

void clip_norm(VecX& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double n = g.norm();
  if (n > max_norm) g *= max_norm / n;
}

bool finite(const VecX& v) { return v.allFinite(); }

}  // namespace

UpdateStats ppo_update(const RolloutBatch& batch, PPOLearner& L, const PPOConfig& config, std::mt19937_64& rng) {
  const Eigen::Index n = batch.obs.cols();
  require(n > 0 && batch.actions.cols() == n && batch.log_probs.size() == n && batch.advantages.size() == n &&
              batch.returns.size() == n,
          "ppo: batch arrays are misaligned");
  const int mb = std::min<int>(config.minibatch, static_cast<int>(n));
  const int act_dim = L.policy.mean.output_dim();
  L.policy_opt.lr = config.lr;
  L.value_opt.lr = config.lr;

  const VecX targets = (batch.returns.array() - L.value_scale.mean) / L.value_scale.std;
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  UpdateStats s;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double kl_sum = 0.0, clip_sum = 0.0, ploss = 0.0, vloss = 0.0;
    for (Eigen::Index start = 0; start + mb <= n; start += mb) {
      MatX X(batch.obs.rows(), mb), A(act_dim, mb);
      VecX adv(mb), lp_old(mb), tgt(mb);
      for (int i = 0; i < mb; ++i) {
        const Eigen::Index k = idx[start + i];
        X.col(i) = batch.obs.col(k);
        A.col(i) = batch.actions.col(k);
        adv[i] = batch.advantages[k];
        lp_old[i] = batch.log_probs[k];
        tgt[i] = targets[k];
      }
      if (mb > 1) {
        const double m = adv.mean();
        const double sd = std::sqrt((adv.array() - m).square().mean());
        adv = (adv.array() - m) / (sd + 1e-8);
      }

      // Policy.
      MLP::Cache pc;
      const MatX mu = L.policy.mean.forward_batch(X, pc);
      const VecX sigma = L.policy.log_std.array().exp();
      const MatX z = (A - mu).array().colwise() / sigma.array();
      MatX dmu(act_dim, mb);
      VecX dlogstd = VecX::Zero(act_dim);
      for (int i = 0; i < mb; ++i) {
        const double lp = -0.5 * z.col(i).squaredNorm() - L.policy.log_std.sum() -
                          0.5 * act_dim * std::log(2.0 * M_PI);
        // Batched and single-sample evaluation round differently; a log ratio at that
        // level is the old policy itself.
        const double log_ratio = std::abs(lp - lp_old[i]) < 1e-9 ? 0.0 : lp - lp_old[i];
        const double ratio = std::exp(log_ratio);
        double dlr = 0.0;
        ploss -= clipped_surrogate(ratio, adv[i], config.clip, &dlr) / mb;
        kl_sum += (ratio - 1.0) - log_ratio;
        clip_sum += std::abs(ratio - 1.0) > config.clip ? 1.0 : 0.0;
        // d(-surrogate/mb)/d logp = -dlr/mb.
        const double g = -dlr / mb;
        dmu.col(i) = g * z.col(i).cwiseQuotient(sigma);
        dlogstd += g * (z.col(i).array().square() - 1.0).matrix();
      }
      dlogstd.array() -= config.entropy_coef;
      VecX gp(L.policy.num_params());
      gp << L.policy.mean.backward(pc, dmu), dlogstd;
      clip_norm(gp, config.max_grad_norm);
      VecX pp = L.policy.params();
      L.policy_opt.step(pp, gp);
      if (!finite(pp)) fail(ErrorCode::Numeric, "ppo: non-finite policy parameters after update");
      L.policy.set_params(pp);

      // Value.
      MLP::Cache vc;
      const MatX v = L.value.forward_batch(X, vc);
      const VecX err = v.row(0).transpose() - tgt;
      vloss += 0.5 * err.squaredNorm() / mb;
      const MatX dv = err.transpose() / static_cast<double>(mb);
      VecX gv = L.value.backward(vc, dv);
      clip_norm(gv, config.max_grad_norm);
      VecX vp = L.value.params();
      L.value_opt.step(vp, gv);
      if (!finite(vp)) fail(ErrorCode::Numeric, "ppo: non-finite value parameters after update");
      L.value.set_params(vp);
    }
    const double batches = static_cast<double>(n / mb);
    s.kl = kl_sum / (batches * mb);
    s.clip_fraction = clip_sum / (batches * mb);
    s.policy_loss = ploss / batches;
    s.value_loss = vloss / batches;
    s.epochs_run = epoch + 1;
    if (!std::isfinite(s.policy_loss) || !std::isfinite(s.value_loss))
      fail(ErrorCode::Numeric, "ppo: non-finite loss (policy " + std::to_string(s.policy_loss) + ", value " +
                                   std::to_string(s.value_loss) + ")");
    if (config.target_kl > 0.0 && s.kl > config.target_kl) break;
  }
  s.entropy = L.policy.log_std.sum() + 0.5 * act_dim * (1.0 + std::log(2.0 * M_PI));
  return s;
}

VecX PolicyCheckpoint::act(const Eigen::Ref<const VecX>& obs) const { return policy.mean.forward(obs_norm.normalize(obs)); }

VecX PolicyCheckpoint::act(const Eigen::Ref<const VecX>& obs, std::mt19937_64& rng) const {
  return policy.sample(obs_norm.normalize(obs), rng);
}

namespace {

json mlp_json(const MLP& m) {
  json layers = json::array();
  for (const auto& L : m.layers()) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < L.W.rows(); ++r)
      for (Eigen::Index c = 0; c < L.W.cols(); ++c) w.push_back(L.W(r, c));
    layers.push_back({{"rows", L.W.rows()}, {"cols", L.W.cols()}, {"W", w},
                      {"b", std::vector<double>(L.b.data(), L.b.data() + L.b.size())}});
  }
  return layers;
}

VecX vec_of(const json& j, const std::string& what) {
  if (!j.is_array()) fail(ErrorCode::Parse, "checkpoint: '" + what + "' must be an array");
  VecX v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

MLP mlp_of(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) fail(ErrorCode::Parse, "checkpoint: '" + what + "' must be a nonempty array");
  MLP m;
  for (std::size_t l = 0; l < j.size(); ++l) {
    const json& e = j[l];
    const std::string p = what + "[" + std::to_string(l) + "]";
    if (!e.contains("rows") || !e.contains("cols") || !e.contains("W") || !e.contains("b"))
      fail(ErrorCode::Parse, "checkpoint: '" + p + "' needs rows, cols, W and b");
    const int rows = e["rows"].get<int>(), cols = e["cols"].get<int>();
    const VecX w = vec_of(e["W"], p + ".W"), b = vec_of(e["b"], p + ".b");
    if (w.size() != static_cast<Eigen::Index>(rows) * cols || b.size() != rows)
      fail(ErrorCode::Parse, "checkpoint: '" + p + "' has inconsistent shapes");
    if (!m.layers().empty() && m.layers().back().W.rows() != cols)
      fail(ErrorCode::Parse, "checkpoint: '" + p + "' does not chain with the previous layer");
    MLP::Layer L{MatX(rows, cols), b};
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) L.W(r, c) = w[static_cast<Eigen::Index>(r) * cols + c];
    m.layers().push_back(std::move(L));
  }
  return m;
}

}  // namespace

void save_checkpoint(const PolicyCheckpoint& c, const std::string& path) {
  json j;
  j["format"] = "srblab-policy";
  j["version"] = 1;
  j["obs_dim"] = c.obs_dim();
  j["act_dim"] = c.act_dim();
  j["layer_sizes"] = c.policy.mean.layer_sizes();
  j["policy"] = mlp_json(c.policy.mean);
  j["log_std"] = std::vector<double>(c.policy.log_std.data(), c.policy.log_std.data() + c.policy.log_std.size());
  j["value"] = mlp_json(c.value);
  j["obs_norm"] = {{"mean", std::vector<double>(c.obs_norm.mean.data(), c.obs_norm.mean.data() + c.obs_norm.mean.size())},
                   {"var", std::vector<double>(c.obs_norm.var.data(), c.obs_norm.var.data() + c.obs_norm.var.size())},
                   {"count", c.obs_norm.count},
                   {"clip", c.obs_norm.clip}};
  j["value_scale"] = {{"mean", c.value_scale.mean}, {"std", c.value_scale.std}};
  j["steps"] = c.steps;
  j["env_config"] = c.env_config;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint '" + path + "'");
  // max_digits10 keeps the round trip exact.
  out << std::setprecision(17) << j.dump() << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing checkpoint '" + path + "'");
}

PolicyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = detail::parse_json(ss.str(), "checkpoint '" + path + "'");
  if (!j.is_object() || j.value("format", "") != "srblab-policy")
    fail(ErrorCode::Parse, "checkpoint '" + path + "': not a policy checkpoint");
  if (j.value("version", 0) != 1) fail(ErrorCode::Parse, "checkpoint '" + path + "': unsupported version");
  PolicyCheckpoint c;
  try {
    c.policy.mean = mlp_of(j.at("policy"), "policy");
    c.policy.log_std = vec_of(j.at("log_std"), "log_std");
    c.value = mlp_of(j.at("value"), "value");
    const json& n = j.at("obs_norm");
    c.obs_norm.mean = vec_of(n.at("mean"), "obs_norm.mean");
    c.obs_norm.var = vec_of(n.at("var"), "obs_norm.var");
    c.obs_norm.count = n.at("count").get<double>();
    c.obs_norm.clip = n.at("clip").get<double>();
    c.value_scale.mean = j.at("value_scale").at("mean").get<double>();
    c.value_scale.std = j.at("value_scale").at("std").get<double>();
    c.steps = j.at("steps").get<std::int64_t>();
    c.env_config = j.value("env_config", "");
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "checkpoint '" + path + "': " + e.what());
  }
  if (c.obs_dim() != j.value("obs_dim", -1) || c.act_dim() != j.value("act_dim", -1) ||
      c.policy.log_std.size() != c.act_dim() || c.value.input_dim() != c.obs_dim() || c.value.output_dim() != 1 ||
      c.obs_norm.mean.size() != c.obs_dim() || c.obs_norm.var.size() != c.obs_dim())
    fail(ErrorCode::Parse, "checkpoint '" + path + "': inconsistent dimensions");
  return c;
}

void write_curve_header(std::ostream& out) { out << "step,episodes,mean_return,mean_ep_len,clip_frac,kl\n"; }

void write_curve_row(std::ostream& out, const CurveRow& r) {
  out << std::setprecision(10) << r.step << ',' << r.episodes << ',' << r.mean_return << ',' << r.mean_ep_len << ','
      << r.clip_frac << ',' << r.kl << '\n';
}

EvalResult evaluate(const PolicyCheckpoint& ckpt, Env& env, int episodes, double target_length) {
  require(ckpt.obs_dim() == env.obs_dim(), "evaluate: checkpoint expects " + std::to_string(ckpt.obs_dim()) +
                                               " observations, environment gives " + std::to_string(env.obs_dim()));
  EvalResult r;
  for (int e = 0; e < episodes; ++e) {
    VecX obs = env.reset();
    while (true) {
      const EnvStep st = env.step(ckpt.act(obs));
      obs = st.obs;
      if (st.terminated || st.truncated) break;
    }
    r.lengths.push_back(env.episode_time());
    if (env.episode_time() >= target_length - 1e-9) ++r.reached;
  }
  r.mean_length = r.lengths.empty() ? 0.0 : std::accumulate(r.lengths.begin(), r.lengths.end(), 0.0) / r.lengths.size();
  return r;
}

namespace {

struct Segment {
  MatX obs_raw, obs;
  MatX actions;
  VecX log_probs, rewards, values, next_values;
  std::vector<bool> terminal, end;
  std::vector<double> ep_returns, ep_lengths;
};

struct Worker {
  std::unique_ptr<Env> env;
  std::mt19937_64 rng;
  VecX obs;
  double ep_return = 0.0;
};

void collect(Worker& w, const PPOLearner& L, const RunningNormalizer& norm, int steps, Segment& seg) {
  const int od = w.env->obs_dim(), ad = w.env->act_dim();
  seg.obs_raw.resize(od, steps);
  seg.obs.resize(od, steps);
  seg.actions.resize(ad, steps);
  seg.log_probs.resize(steps);
  seg.rewards.resize(steps);
  seg.values.resize(steps);
  seg.next_values.resize(steps);
  seg.terminal.assign(steps, false);
  seg.end.assign(steps, false);
  seg.ep_returns.clear();
  seg.ep_lengths.clear();
  auto value_of = [&](const VecX& on) { return L.value.forward(on)[0] * L.value_scale.std + L.value_scale.mean; };
  for (int t = 0; t < steps; ++t) {
    const VecX on = norm.normalize(w.obs);
    const VecX a = L.policy.sample(on, w.rng);
    seg.obs_raw.col(t) = w.obs;
    seg.obs.col(t) = on;
    seg.actions.col(t) = a;
    seg.log_probs[t] = L.policy.log_prob(on, a);
    seg.values[t] = value_of(on);
    const EnvStep st = w.env->step(a);
    seg.rewards[t] = st.reward;
    w.ep_return += st.reward;
    seg.terminal[t] = st.terminated;
    seg.next_values[t] = st.terminated ? 0.0 : value_of(norm.normalize(st.obs));
    if (st.terminated || st.truncated) {
      seg.end[t] = true;
      seg.ep_returns.push_back(w.ep_return);
      seg.ep_lengths.push_back(w.env->episode_time());
      w.ep_return = 0.0;
      w.obs = w.env->reset();
    } else {
      w.obs = st.obs;
    }
  }
  seg.end[steps - 1] = true;  // the segment boundary stops the recursion; next_values bootstraps it
}

}  // namespace

TrainResult train(const EnvFactory& make_env, const PPOConfig& config, std::uint64_t seed,
                  const PolicyCheckpoint* resume, const TrainCallback& on_update) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  std::mt19937_64 rng(seed);

  std::vector<Worker> workers(config.num_envs);
  for (int i = 0; i < config.num_envs; ++i) {
    workers[i].env = make_env(seed * 1000003ULL + 17ULL * (i + 1));
    workers[i].rng.seed(seed * 7919ULL + 31ULL * (i + 1));
  }
  std::unique_ptr<Env> eval_env = make_env(seed * 1000003ULL + 0x5eedULL);
  std::unique_ptr<Env> long_env;
  if (config.stop_cap > 0.0) {
    long_env = make_env(seed * 1000003ULL + 0x10ecULL);
    long_env->mutable_config().episode_cap = config.stop_cap;
  }
  const int od = workers[0].env->obs_dim(), ad = workers[0].env->act_dim();

  PPOLearner L;
  RunningNormalizer norm(od);
  RunningNormalizer ret_norm(1);
  std::int64_t steps = 0;
  if (resume) {
    require(resume->obs_dim() == od && resume->act_dim() == ad, "train: checkpoint dimensions do not match the environment");
    L.policy = resume->policy;
    L.value = resume->value;
    L.value_scale = resume->value_scale;
    norm = resume->obs_norm;
    steps = resume->steps;
  } else {
    L.policy.mean = MLP(od, config.hidden, ad);
    L.policy.mean.initialize(rng, 0.01);
    L.policy.log_std = (config.init_std_fraction * workers[0].env->config().bounds.upper()).array().log();
    L.value = MLP(od, config.hidden, 1);
    L.value.initialize(rng, 1.0);
  }
  for (auto& w : workers) w.obs = w.env->reset();

  TrainResult result;
  const int per_env = config.steps_per_update / config.num_envs;
  std::vector<Segment> segs(config.num_envs);
  std::int64_t last_eval = steps;
  CurveRow last_row;
  auto snapshot = [&] {
    PolicyCheckpoint c;
    c.policy = L.policy;
    c.value = L.value;
    c.obs_norm = norm;
    c.value_scale = L.value_scale;
    c.steps = steps;
    return c;
  };

  while (steps < config.total_steps) {
    if (config.threads > 1 && config.num_envs > 1) {
      std::vector<std::thread> pool;
      const int nt = std::min(config.threads, config.num_envs);
      for (int k = 0; k < nt; ++k)
        pool.emplace_back([&, k] {
          for (int i = k; i < config.num_envs; i += nt) collect(workers[i], L, norm, per_env, segs[i]);
        });
      for (auto& th : pool) th.join();
    } else {
      for (int i = 0; i < config.num_envs; ++i) collect(workers[i], L, norm, per_env, segs[i]);
    }

    const int n = config.steps_per_update;
    RolloutBatch batch;
    batch.obs.resize(od, n);
    batch.actions.resize(ad, n);
    batch.log_probs.resize(n);
    batch.advantages.resize(n);
    batch.returns.resize(n);
    MatX raw(od, n);
    std::vector<double> ep_returns, ep_lengths;
    for (int i = 0; i < config.num_envs; ++i) {
      const Segment& s = segs[i];
      const GAEResult g = gae(s.rewards, s.values, s.next_values, s.terminal, s.end, config.gamma, config.lambda);
      const int o = i * per_env;
      batch.obs.middleCols(o, per_env) = s.obs;
      raw.middleCols(o, per_env) = s.obs_raw;
      batch.actions.middleCols(o, per_env) = s.actions;
      batch.log_probs.segment(o, per_env) = s.log_probs;
      batch.advantages.segment(o, per_env) = g.advantages;
      batch.returns.segment(o, per_env) = g.returns;
      ep_returns.insert(ep_returns.end(), s.ep_returns.begin(), s.ep_returns.end());
      ep_lengths.insert(ep_lengths.end(), s.ep_lengths.begin(), s.ep_lengths.end());
    }
    if (!batch.returns.allFinite()) fail(ErrorCode::Numeric, "train: non-finite returns at step " + std::to_string(steps));

    ret_norm.update(batch.returns.transpose());
    L.value_scale.mean = ret_norm.mean[0];
    L.value_scale.std = std::max(std::sqrt(ret_norm.var[0]), 1e-3);
    const UpdateStats us = ppo_update(batch, L, config, rng);
    norm.update(raw);
    steps += n;

    CurveRow row;
    row.step = steps;
    row.episodes = static_cast<int>(ep_returns.size());
    if (!ep_returns.empty()) {
      row.mean_return = std::accumulate(ep_returns.begin(), ep_returns.end(), 0.0) / ep_returns.size();
      row.mean_ep_len = std::accumulate(ep_lengths.begin(), ep_lengths.end(), 0.0) / ep_lengths.size();
    } else {
      row.mean_return = last_row.mean_return;
      row.mean_ep_len = last_row.mean_ep_len;
    }
    if (!std::isfinite(row.mean_return)) fail(ErrorCode::Numeric, "train: mean return diverged at step " + std::to_string(steps));
    row.clip_frac = us.clip_fraction;
    row.kl = us.kl;
    result.curve.push_back(row);
    last_row = row;
    if (on_update) on_update(row);

    if (config.eval_target_length > 0.0 && steps - last_eval >= config.eval_every) {
      last_eval = steps;
      const PolicyCheckpoint snap = snapshot();
      EvalRecord rec;
      rec.step = steps;
      rec.at_cap = evaluate(snap, *eval_env, config.eval_episodes, config.eval_target_length);
      const bool short_ok = rec.at_cap.reached >= config.eval_required;
      if (short_ok && result.first_target_step < 0) result.first_target_step = steps;
      bool long_ok = true;
      if (long_env && short_ok) {
        rec.long_run = evaluate(snap, *long_env, config.eval_episodes, config.stop_cap);
        long_ok = rec.long_run.reached >= config.eval_required;
      }
      result.evals.push_back(rec);
      if (short_ok && long_ok) {
        result.reached_target = true;
        break;
      }
    }
    if (config.time_budget > 0.0 && elapsed() > config.time_budget) break;
  }
  result.checkpoint = snapshot();
  result.steps = steps;
  result.seconds = elapsed();
  return result;
}

}  // namespace srblab

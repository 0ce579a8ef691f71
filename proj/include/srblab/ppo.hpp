#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "srblab/env.hpp"

namespace srblab {

/// Fully connected network: tanh hidden layers, linear output. Batched inputs are
/// columns of a matrix.
class MLP {
 public:
  struct Layer {
    MatX W;  // out x in
    VecX b;
  };

  MLP() = default;
  MLP(int in, const std::vector<int>& hidden, int out);

  /// Scaled Gaussian initialization; the output layer is multiplied by `out_scale`.
  void initialize(std::mt19937_64& rng, double out_scale = 1.0);

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows()); }
  int num_params() const;
  std::vector<int> layer_sizes() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  VecX params() const;
  void set_params(const Eigen::Ref<const VecX>& p);

  VecX forward(const Eigen::Ref<const VecX>& x) const;
  MatX forward_batch(const Eigen::Ref<const MatX>& X) const;

  /// Activations kept for backward; acts[0] is the input batch.
  struct Cache {
    std::vector<MatX> acts;
  };
  MatX forward_batch(const Eigen::Ref<const MatX>& X, Cache& cache) const;
  /// Parameter gradient of sum_i <dY_i, f(x_i)>, in params() layout. Optionally the input gradient.
  VecX backward(const Cache& cache, const Eigen::Ref<const MatX>& dY, MatX* dX = nullptr) const;

 private:
  std::vector<Layer> layers_;
};

/// Diagonal Gaussian with a state-dependent mean and a learned state-independent log std.
struct GaussianPolicy {
  MLP mean;
  VecX log_std;

  int num_params() const { return mean.num_params() + static_cast<int>(log_std.size()); }
  VecX params() const;
  void set_params(const Eigen::Ref<const VecX>& p);

  VecX sample(const Eigen::Ref<const VecX>& obs, std::mt19937_64& rng) const;
  double log_prob(const Eigen::Ref<const VecX>& obs, const Eigen::Ref<const VecX>& action) const;
};

double gaussian_log_prob(const Eigen::Ref<const VecX>& mu, const Eigen::Ref<const VecX>& log_std,
                         const Eigen::Ref<const VecX>& a);

/// Running mean and variance (parallel Welford update).
struct RunningNormalizer {
  VecX mean;
  VecX var;
  double count = 0.0;
  double clip = 10.0;

  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim);
  void update(const Eigen::Ref<const MatX>& batch);  // samples are columns
  VecX normalize(const Eigen::Ref<const VecX>& x) const;
  MatX normalize_batch(const Eigen::Ref<const MatX>& X) const;
};

struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  VecX m, v;
  long t = 0;

  void step(VecX& params, const VecX& grad);
};

struct PPOConfig {
  int steps_per_update = 1024;
  int minibatch = 256;
  double gamma = 0.995;
  double lambda = 0.95;
  double clip = 0.2;
  double lr = 3e-4;
  int epochs = 10;
  std::int64_t total_steps = 5'000'000;
  std::vector<int> hidden{64, 64};
  double init_std_fraction = 0.3;  // initial std as a fraction of the action bound
  double max_grad_norm = 0.5;
  double entropy_coef = 0.0;
  double target_kl = 0.0;          // 0 disables the per-update KL stop
  int num_envs = 1;
  int threads = 1;
  // Periodic evaluation with the mean action. Training stops once eval_required of
  // eval_episodes reach eval_target_length under the training episode cap, and, when
  // stop_cap > 0, also survive a full stop_cap-second episode.
  std::int64_t eval_every = 50'000;
  int eval_episodes = 10;
  double eval_target_length = 0.0;  // seconds; 0 disables early stopping
  int eval_required = 8;
  double stop_cap = 0.0;            // seconds
  double time_budget = 0.0;         // seconds of wall time; 0 = unlimited

  void validate() const;
};

PPOConfig parse_ppo_config(const std::string& json_text);

struct GAEResult {
  VecX advantages;
  VecX returns;
};

/// values has one more entry than rewards (bootstrap); done[t] cuts the recursion
/// and the bootstrap after step t.
GAEResult gae(const VecX& rewards, const VecX& values, const std::vector<bool>& done, double gamma, double lambda);
/// next_values[t] bootstraps step t unless terminal[t]; episode_end[t] (terminal or
/// truncated) stops the recursion.
GAEResult gae(const VecX& rewards, const VecX& values, const VecX& next_values, const std::vector<bool>& terminal,
              const std::vector<bool>& episode_end, double gamma, double lambda);

struct RolloutBatch {
  MatX obs;        // normalized, obs_dim x n
  MatX actions;    // act_dim x n
  VecX log_probs;  // under the behaviour policy
  VecX advantages;
  VecX returns;    // raw scale
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  int epochs_run = 0;
};

/// Scalar clipped surrogate for one sample, and its derivative in the log ratio.
double clipped_surrogate(double ratio, double advantage, double clip, double* dlogratio = nullptr);

struct ValueScale {
  double mean = 0.0;
  double std = 1.0;
};

/// Learner state carried between updates.
struct PPOLearner {
  GaussianPolicy policy;
  MLP value;
  Adam policy_opt;
  Adam value_opt;
  ValueScale value_scale;
};

UpdateStats ppo_update(const RolloutBatch& batch, PPOLearner& learner, const PPOConfig& config, std::mt19937_64& rng);

/// Trained networks plus everything needed to run them.
struct PolicyCheckpoint {
  GaussianPolicy policy;
  MLP value;
  RunningNormalizer obs_norm;
  ValueScale value_scale;
  std::int64_t steps = 0;
  std::string env_config;  // JSON text of the environment section used for training

  int obs_dim() const { return policy.mean.input_dim(); }
  int act_dim() const { return policy.mean.output_dim(); }
  VecX act(const Eigen::Ref<const VecX>& obs) const;  // mean action
  VecX act(const Eigen::Ref<const VecX>& obs, std::mt19937_64& rng) const;
};

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::string& path);
PolicyCheckpoint load_checkpoint(const std::string& path);

struct CurveRow {
  std::int64_t step = 0;
  int episodes = 0;
  double mean_return = 0.0;
  double mean_ep_len = 0.0;  // seconds
  double clip_frac = 0.0;
  double kl = 0.0;
};
void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, const CurveRow& row);

struct EvalResult {
  std::vector<double> lengths;  // seconds
  double mean_length = 0.0;
  int reached = 0;  // episodes whose length reached the target
};

/// Mean-action episodes from reference-state initialization.
EvalResult evaluate(const PolicyCheckpoint& ckpt, Env& env, int episodes, double target_length);

struct EvalRecord {
  std::int64_t step = 0;
  EvalResult at_cap;    // training episode cap
  EvalResult long_run;  // stop_cap episodes, when enabled
};

struct TrainResult {
  PolicyCheckpoint checkpoint;
  std::vector<CurveRow> curve;
  std::vector<EvalRecord> evals;
  std::int64_t first_target_step = -1;  // first evaluation meeting the length target
  bool reached_target = false;          // every stopping condition met
  std::int64_t steps = 0;
  double seconds = 0.0;
};

using EnvFactory = std::function<std::unique_ptr<Env>(std::uint64_t seed)>;
using TrainCallback = std::function<void(const CurveRow&)>;

TrainResult train(const EnvFactory& make_env, const PPOConfig& config, std::uint64_t seed,
                  const PolicyCheckpoint* resume = nullptr, const TrainCallback& on_update = {});

}  // namespace srblab

#pragma once

#include <span>

#include "dccnet/pipeline.hpp"

namespace dccnet {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a fixed list of tensors.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct ToyExample {
  FeatureMap a, b;
  GroundTruthMap truth;
  int label = +1;
};

struct ToyDatasetConfig {
  std::size_t num_pos = 20;
  std::size_t num_neg = 20;
  long max_shift = 2;
  double noise = 0.05;
};

// Positives are shifted copies with ground truth; negatives are independent
// pairs. Interleaved pos/neg so loss windows stay label-balanced.
std::vector<ToyExample> make_toy_dataset(const ModelConfig& model, const ToyDatasetConfig& data,
                                         std::uint64_t seed);

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  std::size_t steps = 200;
  double lambda = 1.0;
  double gamma = 1.0;
  bool swap_pairing = false;
  std::uint64_t seed = 0;
};

struct TraceRow {
  std::size_t step = 0;
  double fuse = 0.0, local = 0.0, context = 0.0, total = 0.0;
};

struct TrainResult {
  ModelParams params;          // best-epoch checkpoint when holdout given
  std::vector<TraceRow> trace; // one row per step
  std::vector<double> epoch_mean_loss;
  std::vector<double> holdout_loss;  // per epoch, empty without holdout
  std::size_t best_epoch = 0;
};

TrainResult train_toy(const std::vector<ToyExample>& data, const std::vector<ToyExample>& holdout,
                      const TrainConfig& cfg);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

// Fraction of ground-truth pairs whose a->b hard assignment of the fused
// volume lands on the true source cell.
double fused_hit_rate(const ModelParams& params, const std::vector<ToyExample>& pairs);

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  std::size_t kink_skipped = 0;  // coordinates where the FD oracle never converged
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double step = 0.0;
  std::size_t kink_skipped = 0;
  bool pass(double tol = 1e-4) const { return max_rel_err <= tol; }
};

// Central finite differences of the multi-auxiliary loss on sampled
// coordinates of every learnable tensor. The loss is piecewise smooth (relu,
// slice maxima), so a coordinate whose stencil straddles a kink yields an
// invalid FD estimate; on disagreement with the analytic value the step is
// refined until the FD estimate itself converges, and coordinates where it
// never converges are reported as kink_skipped and resampled. Relative error
// uses a small-magnitude floor so near-zero gradients compare by absolute
// difference.
GradCheckReport gradcheck_all(ModelParams& params, const FeatureMap& fa, const FeatureMap& fb,
                              const LossConfig& cfg, std::size_t samples_per_tensor = 20,
                              double fd_step = 1e-5, std::uint64_t seed = 0);

}  // namespace dccnet

#pragma once

#include <array>
#include <string>
#include <vector>

#include "dccnet/fusion.hpp"

namespace dccnet {

// Hard assignment: direction a->b maps every target cell (m, n) to the
// argmax source cell over (i, j); ties break to the smallest row-major
// linear index.
struct Assignment {
  Direction dir = Direction::a_to_b;
  std::size_t given_h = 0, given_w = 0;  // grid the map is indexed over
  std::size_t opp_h = 0, opp_w = 0;      // grid the assigned cells live in
  std::vector<std::size_t> cell;         // linear opposite-grid index per given cell
  std::vector<double> score;             // correlation value at the assigned cell
};

Assignment hard_assign(const Corr4D& c, Direction dir);

// Mean softmax probability mass at the hard-assigned matches.
struct MatchScore {
  double sbar_a = 0.0;  // softmax over target cells, averaged over source cells
  double sbar_b = 0.0;  // softmax over source cells, averaged over target cells
};

MatchScore soft_scores(const Corr4D& c);
// d/dc of (ua * sbar_a + ub * sbar_b); argmax treated as locally constant.
Tensor soft_scores_vjp(const Corr4D& c, double ua, double ub);

struct LossConfig {
  double lambda = 1.0;
  double gamma = 1.0;
  int label = +1;  // +1 positive pair, -1 negative
  // pair sbar_b with the a->b volume (default) or the swapped reading
  bool swap_pairing = false;
};

// Weak loss -y (sbar_a + sbar_b) over a fused direction pair.
double weak_loss(const Corr4D& c_ab, const Corr4D& c_ba, const LossConfig& cfg);
struct WeakLossGrads {
  Tensor d_ab, d_ba;
};
WeakLossGrads weak_loss_vjp(const Corr4D& c_ab, const Corr4D& c_ba, const LossConfig& cfg);

// Single volume scored in both directions (the auxiliary task form).
double single_volume_loss(const Corr4D& c, int label);
Tensor single_volume_loss_vjp(const Corr4D& c, int label);

struct LossBreakdown {
  double fuse = 0.0, local = 0.0, context = 0.0, total = 0.0;
};

double multi_aux_combine(double fuse, double local, double context, double lambda, double gamma);
LossBreakdown multi_aux_loss(const FusedCorr& ab, const FusedCorr& ba, const Corr4D& cl,
                             const Corr4D& cs, const LossConfig& cfg);

// ---- keypoints / PCK ----

struct KeypointSet {
  double height = 0.0, width = 0.0;      // image size (H, W)
  std::vector<std::array<double, 2>> points;  // (x, y) pixel coords

  std::string to_json() const;
  static KeypointSet from_json(const std::string& text);
  void save(const std::string& path) const;
  static KeypointSet load(const std::string& path);
};

enum class TransferMode { hard, soft };

// Transfers keypoints given in the direction's source-of-truth image (image b
// for a->b) to cell centers of the opposite image of size (out_h, out_w).
KeypointSet transfer_keypoints(const Corr4D& c, const KeypointSet& kps, Direction dir,
                               TransferMode mode, double out_height, double out_width);

enum class PckReference { image, bbox };

struct PckReport {
  std::vector<double> alphas;
  std::vector<std::size_t> correct;
  std::size_t total = 0;
  std::vector<double> pck;
  PckReference mode = PckReference::image;

  std::string to_json() const;
};

PckReport pck(const KeypointSet& pred, const KeypointSet& truth, const std::vector<double>& alphas,
              PckReference mode);

}  // namespace dccnet

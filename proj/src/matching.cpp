#include "dccnet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dccnet {

Assignment hard_assign(const Corr4D& c, Direction dir) {
  c.validate();
  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  Assignment out;
  out.dir = dir;
  const double* v = c.data.data();
  if (dir == Direction::a_to_b) {
    out.given_h = c.h_b();
    out.given_w = c.w_b();
    out.opp_h = c.h_a();
    out.opp_w = c.w_a();
    out.cell.resize(nb);
    out.score.resize(nb);
    for (std::size_t q = 0; q < nb; ++q) {
      double best = v[q];
      std::size_t arg = 0;
      for (std::size_t p = 1; p < na; ++p) {
        double val = v[p * nb + q];
        if (val > best) {  // strict: first (smallest index) wins ties
          best = val;
          arg = p;
        }
      }
      out.cell[q] = arg;
      out.score[q] = best;
    }
  } else {
    out.given_h = c.h_a();
    out.given_w = c.w_a();
    out.opp_h = c.h_b();
    out.opp_w = c.w_b();
    out.cell.resize(na);
    out.score.resize(na);
    for (std::size_t p = 0; p < na; ++p) {
      const double* row = v + p * nb;
      double best = row[0];
      std::size_t arg = 0;
      for (std::size_t q = 1; q < nb; ++q) {
        if (row[q] > best) {
          best = row[q];
          arg = q;
        }
      }
      out.cell[p] = arg;
      out.score[p] = best;
    }
  }
  return out;
}

namespace {
// softmax over one strided slice; returns probability at the argmax (ties to
// the smallest index, consistent with hard_assign).
double slice_peak_prob(const double* base, std::size_t n, std::size_t stride) {
  double mx = base[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, base[i * stride]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(base[i * stride] - mx);
  return 1.0 / sum;  // probability at the peak: exp(mx - mx) / sum
}

void slice_peak_prob_vjp(const double* base, double* grad, std::size_t n, std::size_t stride,
                         double upstream) {
  double mx = base[0];
  std::size_t arg = 0;
  for (std::size_t i = 1; i < n; ++i) {
    double v = base[i * stride];
    if (v > mx) {
      mx = v;
      arg = i;
    }
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(base[i * stride] - mx);
  double pq = 1.0 / sum;
  // d p_q / d x_i = p_q (delta_qi - p_i)
  for (std::size_t i = 0; i < n; ++i) {
    double pi = std::exp(base[i * stride] - mx) / sum;
    double g = pq * ((i == arg ? 1.0 : 0.0) - pi);
    grad[i * stride] += upstream * g;
  }
}
}  // namespace

MatchScore soft_scores(const Corr4D& c) {
  c.validate();
  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  const double* v = c.data.data();
  MatchScore s;
  for (std::size_t q = 0; q < nb; ++q) s.sbar_b += slice_peak_prob(v + q, na, nb);
  s.sbar_b /= double(nb);
  for (std::size_t p = 0; p < na; ++p) s.sbar_a += slice_peak_prob(v + p * nb, nb, 1);
  s.sbar_a /= double(na);
  return s;
}

Tensor soft_scores_vjp(const Corr4D& c, double ua, double ub) {
  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  const double* v = c.data.data();
  Tensor grad(c.data.shape());
  if (ub != 0.0) {
    double upstream = ub / double(nb);
    for (std::size_t q = 0; q < nb; ++q) {
      slice_peak_prob_vjp(v + q, grad.data() + q, na, nb, upstream);
    }
  }
  if (ua != 0.0) {
    double upstream = ua / double(na);
    for (std::size_t p = 0; p < na; ++p) {
      slice_peak_prob_vjp(v + p * nb, grad.data() + p * nb, nb, 1, upstream);
    }
  }
  return grad;
}

double weak_loss(const Corr4D& c_ab, const Corr4D& c_ba, const LossConfig& cfg) {
  const Corr4D& for_b = cfg.swap_pairing ? c_ba : c_ab;
  const Corr4D& for_a = cfg.swap_pairing ? c_ab : c_ba;
  double sbar_b = soft_scores(for_b).sbar_b;
  double sbar_a = soft_scores(for_a).sbar_a;
  return -double(cfg.label) * (sbar_a + sbar_b);
}

WeakLossGrads weak_loss_vjp(const Corr4D& c_ab, const Corr4D& c_ba, const LossConfig& cfg) {
  double y = double(cfg.label);
  const Corr4D& for_b = cfg.swap_pairing ? c_ba : c_ab;
  const Corr4D& for_a = cfg.swap_pairing ? c_ab : c_ba;
  Tensor d_for_b = soft_scores_vjp(for_b, 0.0, -y);
  Tensor d_for_a = soft_scores_vjp(for_a, -y, 0.0);
  if (cfg.swap_pairing) return WeakLossGrads{std::move(d_for_a), std::move(d_for_b)};
  return WeakLossGrads{std::move(d_for_b), std::move(d_for_a)};
}

double single_volume_loss(const Corr4D& c, int label) {
  MatchScore s = soft_scores(c);
  return -double(label) * (s.sbar_a + s.sbar_b);
}

Tensor single_volume_loss_vjp(const Corr4D& c, int label) {
  double y = double(label);
  return soft_scores_vjp(c, -y, -y);
}

double multi_aux_combine(double fuse, double local, double context, double lambda, double gamma) {
  require(lambda >= 0.0 && gamma >= 0.0, Errc::invalid_argument,
          "loss weights lambda and gamma must be non-negative");
  return fuse + lambda * local + gamma * context;
}

LossBreakdown multi_aux_loss(const FusedCorr& ab, const FusedCorr& ba, const Corr4D& cl,
                             const Corr4D& cs, const LossConfig& cfg) {
  LossBreakdown out;
  out.fuse = weak_loss(ab.corr, ba.corr, cfg);
  out.local = single_volume_loss(cl, cfg.label);
  out.context = single_volume_loss(cs, cfg.label);
  out.total = multi_aux_combine(out.fuse, out.local, out.context, cfg.lambda, cfg.gamma);
  return out;
}

std::string KeypointSet::to_json() const {
  nlohmann::json j;
  j["size"] = {height, width};
  j["points"] = nlohmann::json::array();
  for (const auto& p : points) j["points"].push_back({p[0], p[1]});
  return j.dump();
}

KeypointSet KeypointSet::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded() && j.contains("size") && j.contains("points"), Errc::bad_format,
          "keypoint JSON must carry \"size\" and \"points\"");
  KeypointSet k;
  k.height = j["size"][0].get<double>();
  k.width = j["size"][1].get<double>();
  for (const auto& p : j["points"]) {
    require(p.is_array() && p.size() == 2, Errc::bad_format, "keypoints must be [x, y] pairs");
    k.points.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return k;
}

void KeypointSet::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(bool(out), Errc::io, "cannot write " + path);
  out << to_json() << "\n";
}

KeypointSet KeypointSet::load(const std::string& path) {
  std::ifstream in(path);
  require(bool(in), Errc::io, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

KeypointSet transfer_keypoints(const Corr4D& c, const KeypointSet& kps, Direction dir,
                               TransferMode mode, double out_height, double out_width) {
  c.validate();
  std::size_t gh, gw, oh, ow;
  if (dir == Direction::a_to_b) {
    gh = c.h_b();
    gw = c.w_b();
    oh = c.h_a();
    ow = c.w_a();
  } else {
    gh = c.h_a();
    gw = c.w_a();
    oh = c.h_b();
    ow = c.w_b();
  }
  double cell_h_in = kps.height / double(gh);
  double cell_w_in = kps.width / double(gw);
  double cell_h_out = out_height / double(oh);
  double cell_w_out = out_width / double(ow);

  Assignment assign;
  if (mode == TransferMode::hard) assign = hard_assign(c, dir);

  std::size_t na = c.h_a() * c.w_a(), nb = c.h_b() * c.w_b();
  const double* v = c.data.data();

  KeypointSet out;
  out.height = out_height;
  out.width = out_width;
  for (const auto& p : kps.points) {
    double x = p[0], y = p[1];
    require(x >= 0.0 && x <= kps.width && y >= 0.0 && y <= kps.height, Errc::invalid_argument,
            "keypoint (" + std::to_string(x) + ", " + std::to_string(y) +
                ") outside image bounds");
    std::size_t col = std::min(std::size_t(std::floor(x / cell_w_in)), gw - 1);
    std::size_t row = std::min(std::size_t(std::floor(y / cell_h_in)), gh - 1);
    std::size_t given = row * gw + col;

    double ox = 0.0, oy = 0.0;
    if (mode == TransferMode::hard) {
      std::size_t cell = assign.cell[given];
      std::size_t oi = cell / ow, oj = cell % ow;
      ox = (double(oj) + 0.5) * cell_w_out;
      oy = (double(oi) + 0.5) * cell_h_out;
    } else {
      // softmax-weighted expected cell center, temperature 1
      std::size_t n = dir == Direction::a_to_b ? na : nb;
      std::size_t stride = dir == Direction::a_to_b ? nb : 1;
      const double* base = dir == Direction::a_to_b ? v + given : v + given * nb;
      double mx = base[0];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, base[i * stride]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += std::exp(base[i * stride] - mx);
      for (std::size_t i = 0; i < n; ++i) {
        double prob = std::exp(base[i * stride] - mx) / sum;
        std::size_t oi = i / ow, oj = i % ow;
        ox += prob * (double(oj) + 0.5) * cell_w_out;
        oy += prob * (double(oi) + 0.5) * cell_h_out;
      }
    }
    out.points.push_back({ox, oy});
  }
  return out;
}

std::string PckReport::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["mode"] = mode == PckReference::image ? "image" : "bbox";
  j["alphas"] = alphas;
  j["correct"] = correct;
  j["total"] = total;
  j["pck"] = pck;
  return j.dump(2);
}

PckReport pck(const KeypointSet& pred, const KeypointSet& truth, const std::vector<double>& alphas,
              PckReference mode) {
  require(pred.points.size() == truth.points.size(), Errc::invalid_argument,
          "pck: prediction and ground-truth keypoint counts differ (" +
              std::to_string(pred.points.size()) + " vs " + std::to_string(truth.points.size()) +
              ")");
  double ref = 0.0;
  if (mode == PckReference::image) {
    ref = std::max(truth.height, truth.width);
  } else {
    require(!truth.points.empty(), Errc::invalid_argument, "pck: bbox mode needs keypoints");
    double min_x = truth.points[0][0], max_x = min_x;
    double min_y = truth.points[0][1], max_y = min_y;
    for (const auto& p : truth.points) {
      min_x = std::min(min_x, p[0]);
      max_x = std::max(max_x, p[0]);
      min_y = std::min(min_y, p[1]);
      max_y = std::max(max_y, p[1]);
    }
    ref = std::max(max_x - min_x, max_y - min_y);
  }

  PckReport report;
  report.alphas = alphas;
  report.mode = mode;
  report.total = pred.points.size();
  for (double a : alphas) {
    double thresh = a * ref;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.points.size(); ++i) {
      double dx = pred.points[i][0] - truth.points[i][0];
      double dy = pred.points[i][1] - truth.points[i][1];
      if (std::sqrt(dx * dx + dy * dy) <= thresh) ++n;
    }
    report.correct.push_back(n);
    report.pck.push_back(report.total ? double(n) / double(report.total) : 0.0);
  }
  return report;
}

}  // namespace dccnet

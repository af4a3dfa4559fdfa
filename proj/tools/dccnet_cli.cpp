// Batch front end: synthesize pairs, initialize/train models, match feature
// maps, run gradient checks, evaluate PCK. Reports are JSON, traces CSV.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dccnet/pipeline.hpp"
#include "dccnet/trainer.hpp"

using nlohmann::json;
using namespace dccnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::io, "cannot open " + path);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= std::uint64_t(std::uint8_t(c));
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Manifest {
  std::string command;
  std::string path;
  json config = json::object();
  json inputs = json::object();
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void add_input(const std::string& p) { inputs[p] = hex64(fnv1a64_file(p)); }

  void write(const std::string& status, const std::string& message = "") {
    if (path.empty()) return;
    json j;
    j["schema"] = 1;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = inputs;
    j["seed"] = seed;
    j["outputs"] = outputs;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    j["wall_time_s"] = secs;
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    std::ofstream out(path, std::ios::trunc);
    if (out) out << j.dump(2) << "\n";
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require(bool(out), Errc::io, "cannot write " + path);
  out << text;
  require(bool(out), Errc::io, "short write to " + path);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DCCNET_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

json mask_stats(const Tensor& m) {
  double mn = m[0], mx = m[0], acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    mn = std::min(mn, m[i]);
    mx = std::max(mx, m[i]);
    acc += m[i];
  }
  return json{{"min", mn}, {"mean", acc / double(m.size())}, {"max", mx}};
}

json assignment_json(const Assignment& a) {
  json rows = json::array();
  for (std::size_t g = 0; g < a.cell.size(); ++g) {
    std::size_t gi = g / a.given_w, gj = g % a.given_w;
    std::size_t oi = a.cell[g] / a.opp_w, oj = a.cell[g] % a.opp_w;
    rows.push_back({gi, gj, oi, oj, a.score[g]});
  }
  return json{{"direction", direction_name(a.dir)},
              {"given_grid", {a.given_h, a.given_w}},
              {"assigned_grid", {a.opp_h, a.opp_w}},
              {"cells", rows}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.context_kernel = j.value("context_kernel", c.context_kernel);
  c.context_dim = j.value("context_dim", c.context_dim);
  c.grid_h = j.value("grid_h", c.grid_h);
  c.grid_w = j.value("grid_w", c.grid_w);
  c.consensus_layers = j.value("consensus_layers", c.consensus_layers);
  c.consensus_kernel = j.value("consensus_kernel", c.consensus_kernel);
  c.consensus_channels = j.value("consensus_channels", c.consensus_channels);
  c.embed_layers = j.value("embed_layers", c.embed_layers);
  c.embed_kernel = j.value("embed_kernel", c.embed_kernel);
  c.embed_channels = j.value("embed_channels", c.embed_channels);
  c.symmetrize = j.value("symmetrize", c.symmetrize);
  std::string fi = j.value("fuse_input", std::string("consensus"));
  require(fi == "consensus" || fi == "embedded", Errc::invalid_argument,
          "fuse_input must be consensus or embedded");
  c.fuse_input = fi == "consensus" ? FuseInput::consensus : FuseInput::embedded;
  return c;
}

// ---- subcommand payloads ----

struct SynthArgs {
  std::size_t grid_h = 10, grid_w = 10, channels = 16;
  std::string transform = "identity";
  long shift_r = 0, shift_c = 0;
  double noise = 0.0;
  std::string out_a, out_b, out_gt;
};

int run_synth(const SynthArgs& a, std::uint64_t seed, Manifest& man) {
  SynthPairSpec spec;
  spec.height = a.grid_h;
  spec.width = a.grid_w;
  spec.channels = a.channels;
  spec.noise = a.noise;
  spec.seed = seed;
  if (a.transform == "identity") {
    spec.transform = SynthTransform::identity;
  } else if (a.transform == "shift") {
    spec.transform = SynthTransform::shift;
    spec.shift_rows = a.shift_r;
    spec.shift_cols = a.shift_c;
  } else if (a.transform == "permutation") {
    spec.transform = SynthTransform::permutation;
  } else {
    fail(Errc::invalid_argument, "unknown transform " + a.transform);
  }
  SynthPair pair = synth_pair(spec);
  save_fmap(pair.a, a.out_a);
  save_fmap(pair.b, a.out_b);
  man.outputs = {a.out_a, a.out_b};
  if (!a.out_gt.empty()) {
    pair.truth.save(a.out_gt);
    man.outputs.push_back(a.out_gt);
  }
  return kExitOk;
}

struct InitArgs {
  json model = json::object();
  std::string consensus_init = "random";
  std::string out;
};

int run_init_params(const InitArgs& a, std::uint64_t seed, Manifest& man) {
  ModelConfig cfg = model_config_from_json(a.model);
  require(a.consensus_init == "random" || a.consensus_init == "delta", Errc::invalid_argument,
          "consensus init must be random or delta");
  ModelParams p = init_params(cfg, seed,
                              a.consensus_init == "delta" ? ConsensusInit::delta
                                                          : ConsensusInit::random);
  save_params(p, a.out);
  man.outputs = {a.out};
  return kExitOk;
}

struct MatchArgs {
  std::string src, tgt, params, out;
  std::string direction = "ab";
  std::string fuse_input;  // empty: keep the model's setting
  std::string dump_corr;
};

int run_match(const MatchArgs& a, Manifest& man) {
  man.add_input(a.src);
  man.add_input(a.tgt);
  man.add_input(a.params);
  FeatureMap fa = load_fmap(a.src);
  FeatureMap fb = load_fmap(a.tgt);
  ModelParams params = load_params(a.params);
  if (!a.fuse_input.empty()) {
    require(a.fuse_input == "consensus" || a.fuse_input == "embedded", Errc::invalid_argument,
            "fuse-input must be consensus or embedded");
    params.config.fuse_input =
        a.fuse_input == "consensus" ? FuseInput::consensus : FuseInput::embedded;
  }
  require(a.direction == "ab" || a.direction == "ba" || a.direction == "both",
          Errc::invalid_argument, "direction must be ab, ba or both");
  if (!fa.normalized) fa = FeatureMap{l2_normalize_channels(fa.data), true};
  if (!fb.normalized) fb = FeatureMap{l2_normalize_channels(fb.data), true};

  PipelineResult r = dccnet_forward(params, fa, fb);

  json report;
  report["schema"] = 1;
  report["direction"] = a.direction;
  report["fuse_input"] = params.config.fuse_input == FuseInput::consensus ? "consensus" : "embedded";
  report["grid"] = {params.config.grid_h, params.config.grid_w};
  MatchScore ab_scores = soft_scores(r.fusion.ab.corr);
  MatchScore ba_scores = soft_scores(r.fusion.ba.corr);
  report["soft_scores"] = {{"sbar_b", ab_scores.sbar_b}, {"sbar_a", ba_scores.sbar_a}};
  report["mask_stats"] = json::object();
  report["assignments"] = json::object();
  if (a.direction == "ab" || a.direction == "both") {
    report["mask_stats"]["ab"] = mask_stats(r.fusion.mask_ab.data);
    report["assignments"]["ab"] = assignment_json(hard_assign(r.fusion.ab.corr, Direction::a_to_b));
  }
  if (a.direction == "ba" || a.direction == "both") {
    report["mask_stats"]["ba"] = mask_stats(r.fusion.mask_ba.data);
    report["assignments"]["ba"] = assignment_json(hard_assign(r.fusion.ba.corr, Direction::b_to_a));
  }
  write_text(a.out, report.dump(2) + "\n");
  man.outputs = {a.out};

  if (!a.dump_corr.empty()) {
    if (a.direction == "ab" || a.direction == "both") {
      save_tensor_fmap(r.fusion.ab.corr.data, a.dump_corr);
      man.outputs.push_back(a.dump_corr);
    }
    if (a.direction == "ba" || a.direction == "both") {
      std::string path = a.direction == "both" ? a.dump_corr + ".ba" : a.dump_corr;
      save_tensor_fmap(r.fusion.ba.corr.data, path);
      man.outputs.push_back(path);
    }
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config, out, trace;
};

int run_train_toy(const TrainArgs& a, Manifest& man) {
  man.add_input(a.config);
  std::ifstream in(a.config);
  require(bool(in), Errc::io, "cannot open " + a.config);
  json j = json::parse(in, nullptr, false);
  require(!j.is_discarded(), Errc::bad_format, a.config + ": invalid JSON");

  TrainConfig cfg;
  cfg.model = model_config_from_json(j.value("model", json::object()));
  cfg.adam.lr = j.value("lr", cfg.adam.lr);
  cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
  cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
  cfg.adam.eps = j.value("eps", cfg.adam.eps);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.seed = j.value("seed", cfg.seed);
  require(cfg.adam.lr > 0.0, Errc::invalid_argument, "lr must be > 0");

  ToyDatasetConfig data;
  json dj = j.value("data", json::object());
  data.num_pos = dj.value("num_pos", data.num_pos);
  data.num_neg = dj.value("num_neg", data.num_neg);
  data.max_shift = dj.value("max_shift", data.max_shift);
  data.noise = dj.value("noise", data.noise);

  ToyDatasetConfig hold = data;
  json hj = j.value("holdout", json::object());
  hold.num_pos = hj.value("num_pos", std::size_t(10));
  hold.num_neg = hj.value("num_neg", std::size_t(0));
  hold.max_shift = hj.value("max_shift", data.max_shift);
  hold.noise = hj.value("noise", data.noise);

  man.config = j;
  man.seed = cfg.seed;

  auto train_set = make_toy_dataset(cfg.model, data, cfg.seed);
  auto holdout = make_toy_dataset(cfg.model, hold, cfg.seed + 1);
  TrainResult result = train_toy(train_set, holdout, cfg);

  save_params(result.params, a.out);
  write_trace_csv(result.trace, a.trace);
  man.outputs = {a.out, a.trace};

  json summary;
  summary["steps"] = result.trace.size();
  summary["first_loss"] = result.trace.front().total;
  summary["final_loss"] = result.trace.back().total;
  summary["best_epoch"] = result.best_epoch;
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::string scale = "desk";
  std::string out;
  std::size_t samples = 20;
};

int run_gradcheck(const GradcheckArgs& a, std::uint64_t seed, Manifest& man) {
  require(a.scale == "desk", Errc::invalid_argument, "only the desk scale is wired up");
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.context_kernel = 5;
  cfg.context_dim = 16;
  cfg.grid_h = 6;
  cfg.grid_w = 6;
  cfg.consensus_kernel = 3;
  cfg.embed_kernel = 3;
  ModelParams params = init_params(cfg, seed);

  SynthPairSpec spec;
  spec.height = cfg.grid_h;
  spec.width = cfg.grid_w;
  spec.channels = cfg.channels;
  spec.transform = SynthTransform::shift;
  spec.shift_rows = 1;
  spec.shift_cols = 0;
  spec.noise = 0.05;
  spec.seed = seed;
  SynthPair pair = synth_pair(spec);

  LossConfig lc;
  GradCheckReport report = gradcheck_all(params, pair.a, pair.b, lc, a.samples, 1e-5, seed);

  json jr;
  jr["schema"] = 1;
  jr["fd_step"] = report.step;
  jr["max_rel_err"] = report.max_rel_err;
  jr["pass"] = report.pass();
  jr["tensors"] = json::array();
  for (const auto& e : report.entries) {
    jr["tensors"].push_back({{"name", e.name},
                             {"size", e.size},
                             {"checked", e.checked},
                             {"max_rel_err", e.max_rel_err}});
    std::cout << e.name << "  checked " << e.checked << "/" << e.size << "  max_rel_err "
              << e.max_rel_err << "\n";
  }
  std::cout << "max_rel_err " << report.max_rel_err << (report.pass() ? "  PASS" : "  FAIL")
            << "\n";
  if (!a.out.empty()) {
    write_text(a.out, jr.dump(2) + "\n");
    man.outputs = {a.out};
  }
  return report.pass() ? kExitOk : kExitNumeric;
}

struct PckArgs {
  std::string pred, gt, out;
  std::vector<double> alphas{0.05, 0.10, 0.15};
  std::string mode = "image";
};

int run_pck(const PckArgs& a, Manifest& man) {
  man.add_input(a.pred);
  man.add_input(a.gt);
  KeypointSet pred = KeypointSet::load(a.pred);
  KeypointSet gt = KeypointSet::load(a.gt);
  require(a.mode == "image" || a.mode == "bbox", Errc::invalid_argument,
          "mode must be image or bbox");
  PckReport report =
      pck(pred, gt, a.alphas, a.mode == "image" ? PckReference::image : PckReference::bbox);
  std::cout << "alpha    correct  total  pck\n";
  for (std::size_t i = 0; i < report.alphas.size(); ++i) {
    std::printf("%-8g %-8zu %-6zu %.6f\n", report.alphas[i], report.correct[i], report.total,
                report.pck[i]);
  }
  if (!a.out.empty()) {
    write_text(a.out, report.to_json() + "\n");
    man.outputs = {a.out};
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DCCNet semantic-alignment matcher"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_flag;
  int jobs = 0;
  std::string manifest_path;
  app.add_option("--seed", seed_flag, "RNG seed (fallback: DCCNET_SEED env, then 0)");
  app.add_option("--jobs", jobs, "worker threads (0 = hardware default)");
  app.add_option("--manifest", manifest_path, "run manifest path (default <out>.manifest.json)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic feature-map pair");
  c_synth->add_option("--grid-h", synth.grid_h);
  c_synth->add_option("--grid-w", synth.grid_w);
  c_synth->add_option("--channels", synth.channels);
  c_synth->add_option("--transform", synth.transform, "identity | shift | permutation");
  c_synth->add_option("--shift-r", synth.shift_r);
  c_synth->add_option("--shift-c", synth.shift_c);
  c_synth->add_option("--noise", synth.noise);
  c_synth->add_option("--out-a", synth.out_a)->required();
  c_synth->add_option("--out-b", synth.out_b)->required();
  c_synth->add_option("--out-gt", synth.out_gt);

  InitArgs init;
  std::string init_model_json;
  auto* c_init = app.add_subcommand("init-params", "initialize and save model parameters");
  c_init->add_option("--model", init_model_json, "model config as inline JSON");
  c_init->add_option("--consensus-init", init.consensus_init, "random | delta");
  c_init->add_option("--out", init.out)->required();

  MatchArgs match;
  auto* c_match = app.add_subcommand("match", "match a feature-map pair");
  c_match->add_option("--src", match.src)->required();
  c_match->add_option("--tgt", match.tgt)->required();
  c_match->add_option("--params", match.params)->required();
  c_match->add_option("--direction", match.direction, "ab | ba | both");
  c_match->add_option("--fuse-input", match.fuse_input, "consensus | embedded");
  c_match->add_option("--dump-corr", match.dump_corr, "write fused volume(s) as FMAP");
  c_match->add_option("--out", match.out)->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train-toy", "train on a synthetic corpus");
  c_train->add_option("--config", train.config)->required();
  c_train->add_option("--out", train.out)->required();
  c_train->add_option("--trace", train.trace)->required();

  GradcheckArgs gradcheck;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  c_grad->add_option("--scale", gradcheck.scale, "desk");
  c_grad->add_option("--samples", gradcheck.samples, "coordinates per tensor");
  c_grad->add_option("--out", gradcheck.out, "report JSON path");

  PckArgs pckargs;
  auto* c_pck = app.add_subcommand("pck", "percentage of correct keypoints");
  c_pck->add_option("--pred", pckargs.pred)->required();
  c_pck->add_option("--gt", pckargs.gt)->required();
  c_pck->add_option("--alpha", pckargs.alphas, "thresholds, e.g. 0.05,0.10,0.15")->delimiter(',');
  c_pck->add_option("--mode", pckargs.mode, "image | bbox");
  c_pck->add_option("--out", pckargs.out, "report JSON path");

  CLI11_PARSE(app, argc, argv);

  std::uint64_t seed = resolve_seed(seed_flag);
  set_num_threads(jobs);

  Manifest man;
  man.seed = seed;
  auto pick_manifest = [&](const std::string& primary_out) {
    if (!manifest_path.empty()) return manifest_path;
    if (!primary_out.empty()) return primary_out + ".manifest.json";
    return std::string("dccnet_manifest.json");
  };

  try {
    int rc = kExitInput;
    if (c_synth->parsed()) {
      man.command = "synth";
      man.path = pick_manifest(synth.out_a);
      man.config = {{"grid", {synth.grid_h, synth.grid_w}},
                    {"channels", synth.channels},
                    {"transform", synth.transform},
                    {"shift", {synth.shift_r, synth.shift_c}},
                    {"noise", synth.noise}};
      rc = run_synth(synth, seed, man);
    } else if (c_init->parsed()) {
      man.command = "init-params";
      man.path = pick_manifest(init.out);
      if (!init_model_json.empty()) {
        json mj = json::parse(init_model_json, nullptr, false);
        require(!mj.is_discarded(), Errc::invalid_argument, "--model is not valid JSON");
        init.model = mj;
      }
      man.config = {{"model", init.model}, {"consensus_init", init.consensus_init}};
      rc = run_init_params(init, seed, man);
    } else if (c_match->parsed()) {
      man.command = "match";
      man.path = pick_manifest(match.out);
      man.config = {{"direction", match.direction}, {"fuse_input", match.fuse_input}};
      rc = run_match(match, man);
    } else if (c_train->parsed()) {
      man.command = "train-toy";
      man.path = pick_manifest(train.out);
      rc = run_train_toy(train, man);
    } else if (c_grad->parsed()) {
      man.command = "gradcheck";
      man.path = pick_manifest(gradcheck.out);
      man.config = {{"scale", gradcheck.scale}, {"samples", gradcheck.samples}};
      rc = run_gradcheck(gradcheck, seed, man);
    } else if (c_pck->parsed()) {
      man.command = "pck";
      man.path = pick_manifest(pckargs.out);
      man.config = {{"alphas", pckargs.alphas}, {"mode", pckargs.mode}};
      rc = run_pck(pckargs, man);
    }
    man.write(rc == kExitOk ? "ok" : "error");
    return rc;
  } catch (const Error& e) {
    json err{{"schema", 1}, {"error", {{"code", e.code_name()}, {"message", e.what()}}}};
    std::cout << err.dump(2) << "\n";
    man.write("error", e.what());
    return e.code() == Errc::numeric ? kExitNumeric : kExitInput;
  } catch (const std::exception& e) {
    json err{{"schema", 1}, {"error", {{"code", "internal"}, {"message", e.what()}}}};
    std::cout << err.dump(2) << "\n";
    man.write("error", e.what());
    return kExitInput;
  }
}

// Drives the installed CLI binary end to end; path arrives as argv[1].

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;

namespace {

int g_failures = 0;
std::string g_cli;
std::string g_dir;

#define EXPECT(cond)                                                          \
  do {                                                                        \
    if (!(cond)) {                                                            \
      ++g_failures;                                                           \
      std::cout << "FAIL " << __FILE__ << ":" << __LINE__ << "  " << #cond   \
                << "\n";                                                      \
    }                                                                         \
  } while (0)

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args, const std::string& env_prefix = "") {
  std::string cmd = env_prefix + g_cli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  RunResult r;
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool exists(const std::string& path) { return std::ifstream(path).good(); }

std::string p(const std::string& name) { return g_dir + "/" + name; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

void test_synth_and_match() {
  RunResult synth = run("--seed 5 synth --grid-h 6 --grid-w 6 --channels 8 --out-a " + p("a.fmap") +
                        " --out-b " + p("b.fmap") + " --out-gt " + p("gt.json"));
  EXPECT(synth.exit_code == 0);
  EXPECT(exists(p("a.fmap")));
  EXPECT(exists(p("gt.json")));
  // identity transform: byte-identical maps
  EXPECT(slurp(p("a.fmap")) == slurp(p("b.fmap")));

  std::string model =
      "{\"channels\":8,\"context_kernel\":5,\"context_dim\":16,\"grid_h\":6,\"grid_w\":6,"
      "\"consensus_kernel\":3,\"embed_kernel\":3}";
  RunResult init = run("--seed 7 init-params --model '" + model + "' --consensus-init delta --out " +
                       p("m.dccp"));
  EXPECT(init.exit_code == 0);

  RunResult match = run("match --src " + p("a.fmap") + " --tgt " + p("b.fmap") + " --params " +
                        p("m.dccp") + " --out " + p("report.json"));
  EXPECT(match.exit_code == 0);
  json report = json::parse(slurp(p("report.json")));
  EXPECT(report["schema"] == 1);
  // identical inputs with delta consensus: identity assignment
  for (const auto& row : report["assignments"]["ab"]["cells"]) {
    EXPECT(row[0] == row[2]);
    EXPECT(row[1] == row[3]);
  }
  // manifest written with ok status
  json manifest = json::parse(slurp(p("report.json.manifest.json")));
  EXPECT(manifest["status"] == "ok");
  EXPECT(manifest["command"] == "match");
  for (const auto& out : manifest["outputs"]) EXPECT(exists(out.get<std::string>()));

  // both directions present on request
  RunResult both = run("match --src " + p("a.fmap") + " --tgt " + p("b.fmap") + " --params " +
                       p("m.dccp") + " --direction both --out " + p("report_both.json"));
  EXPECT(both.exit_code == 0);
  json rb = json::parse(slurp(p("report_both.json")));
  EXPECT(rb["assignments"].contains("ab"));
  EXPECT(rb["assignments"].contains("ba"));

  // grid mismatch is a structured input error with exit code 2
  RunResult bad_synth =
      run("--seed 5 synth --grid-h 5 --grid-w 6 --channels 8 --out-a " + p("small_a.fmap") +
          " --out-b " + p("small_b.fmap"));
  EXPECT(bad_synth.exit_code == 0);
  RunResult mismatch = run("match --src " + p("small_a.fmap") + " --tgt " + p("small_b.fmap") +
                           " --params " + p("m.dccp") + " --out " + p("bad.json"));
  EXPECT(mismatch.exit_code == 2);
  EXPECT(mismatch.out.find("grid mismatch") != std::string::npos);
  json err = json::parse(mismatch.out);
  EXPECT(err.contains("error"));
  // nonzero exit pairs with an error-status manifest
  json bad_manifest = json::parse(slurp(p("bad.json.manifest.json")));
  EXPECT(bad_manifest["status"] == "error");

  // DCCNET_SEED is the fallback seed
  RunResult env_seeded = run("synth --grid-h 6 --grid-w 6 --channels 8 --out-a " +
                                 p("env_a.fmap") + " --out-b " + p("env_b.fmap"),
                             "DCCNET_SEED=5 ");
  EXPECT(env_seeded.exit_code == 0);
  EXPECT(slurp(p("env_a.fmap")) == slurp(p("a.fmap")));

  // --jobs does not change output bytes
  RunResult j1 = run("--jobs 1 match --src " + p("a.fmap") + " --tgt " + p("b.fmap") +
                     " --params " + p("m.dccp") + " --out " + p("report_j1.json") +
                     " --dump-corr " + p("corr_j1.fmap"));
  RunResult j2 = run("--jobs 2 match --src " + p("a.fmap") + " --tgt " + p("b.fmap") +
                     " --params " + p("m.dccp") + " --out " + p("report_j2.json") +
                     " --dump-corr " + p("corr_j2.fmap"));
  EXPECT(j1.exit_code == 0);
  EXPECT(j2.exit_code == 0);
  EXPECT(slurp(p("report_j1.json")) == slurp(p("report_j2.json")));
  EXPECT(slurp(p("corr_j1.fmap")) == slurp(p("corr_j2.fmap")));
  EXPECT(!slurp(p("corr_j1.fmap")).empty());
}

void test_train_toy() {
  std::string cfg =
      "{\"seed\": 3, \"steps\": 8, \"lr\": 0.005,"
      " \"model\": {\"channels\":4, \"context_kernel\":3, \"context_dim\":8,"
      "   \"grid_h\":4, \"grid_w\":4, \"consensus_kernel\":3, \"consensus_channels\":4,"
      "   \"embed_kernel\":3, \"embed_channels\":4},"
      " \"data\": {\"num_pos\":2, \"num_neg\":2, \"max_shift\":1, \"noise\":0.05},"
      " \"holdout\": {\"num_pos\":2}}";
  write_text(p("train.json"), cfg);

  RunResult t1 = run("train-toy --config " + p("train.json") + " --out " + p("model1.dccp") +
                     " --trace " + p("trace1.csv"));
  EXPECT(t1.exit_code == 0);
  RunResult t2 = run("train-toy --config " + p("train.json") + " --out " + p("model2.dccp") +
                     " --trace " + p("trace2.csv"));
  EXPECT(t2.exit_code == 0);
  // idempotent given the seed
  EXPECT(slurp(p("model1.dccp")) == slurp(p("model2.dccp")));
  EXPECT(slurp(p("trace1.csv")) == slurp(p("trace2.csv")));

  // trace row count equals the step count
  std::istringstream trace(slurp(p("trace1.csv")));
  std::string line;
  std::getline(trace, line);
  EXPECT(line == "step,L_fuse,L_local,L_context,total");
  std::size_t rows = 0;
  while (std::getline(trace, line)) {
    if (!line.empty()) ++rows;
  }
  EXPECT(rows == 8);
}

void test_gradcheck() {
  RunResult r = run("--seed 2 gradcheck --samples 3 --out " + p("gradcheck.json"));
  EXPECT(r.exit_code == 0);
  EXPECT(r.out.find("PASS") != std::string::npos);
  json report = json::parse(slurp(p("gradcheck.json")));
  EXPECT(report["pass"] == true);
  EXPECT(report["max_rel_err"].get<double>() <= 1e-4);
}

void test_pck() {
  write_text(p("pred.json"), "{\"size\": [400, 400], \"points\": [[10,10],[100,100],[200,200]]}");
  write_text(p("gt.jsonkp"), "{\"size\": [400, 400], \"points\": [[10,10],[100,100],[200,200]]}");
  RunResult exact = run("pck --pred " + p("pred.json") + " --gt " + p("gt.jsonkp") +
                        " --alpha 0.15,0.05,0.10 --mode image --out " + p("pck.json"));
  EXPECT(exact.exit_code == 0);
  json report = json::parse(slurp(p("pck.json")));
  // alpha order as given on the command line
  EXPECT(report["alphas"][0] == 0.15);
  EXPECT(report["alphas"][1] == 0.05);
  for (const auto& v : report["pck"]) EXPECT(v.get<double>() == 1.0);

  // a missing file is an input error
  RunResult missing = run("pck --pred " + p("nope.json") + " --gt " + p("gt.jsonkp"));
  EXPECT(missing.exit_code == 2);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cout << "usage: test_cli <path-to-cli>\n";
    return 2;
  }
  g_cli = argv[1];
  g_dir = "/tmp/dccnet_cli_test";
  std::system(("rm -rf " + g_dir + " && mkdir -p " + g_dir).c_str());

  test_synth_and_match();
  test_train_toy();
  test_gradcheck();
  test_pck();

  if (g_failures == 0) {
    std::cout << "test_cli: all checks passed\n";
    return 0;
  }
  std::cout << "test_cli: " << g_failures << " failures\n";
  return 1;
}

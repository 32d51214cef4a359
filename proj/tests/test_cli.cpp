#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "padc/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kData = PADC_DATA_DIR;
const std::string kCli = PADC_CLI;

struct Outcome {
  int code = -1;
  std::string text;
};

Outcome run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Outcome o;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p))
    o.text.append(buf, n);
  const int status = pclose(p);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("padc_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(1); }

// src - b1 - b2 with independent growth at both load buses, so the growth
// direction and every ADC vary with the inputs.
json three_bus() {
  auto z = json::array({json::array({json{{"r", 0.02}, {"x", 0.06}}})});
  return {{"name", "three_bus"},
          {"baseMVA", 3.0},
          {"baseKV", 1.7320508075688772},
          {"buses",
           {{{"id", "src"}, {"phases", "a"}, {"kind", "slack"}},
            {{"id", "b1"}, {"phases", "a"}},
            {{"id", "b2"}, {"phases", "a"}}}},
          {"branches",
           {{{"from", "src"}, {"to", "b1"}, {"phases", "a"}, {"z", z}, {"ampacity", 1500.0}},
            {{"from", "b1"}, {"to", "b2"}, {"phases", "a"}, {"z", z}}}},
          {"loads",
           {{{"bus", "b1"}, {"phase", "a"}, {"p_kw", 300.0}, {"q_kvar", 100.0},
             {"growth", {{"family", "normal"}, {"mean_kw", 400.0}, {"stdev_frac", 0.3}}}},
            {{"bus", "b2"}, {"phase", "a"}, {"p_kw", 200.0}, {"q_kvar", 50.0},
             {"growth", {{"family", "normal"}, {"mean_kw", 300.0}, {"stdev_frac", 0.3}}}}}}};
}

json small_study(const std::string& feeder) {
  return {{"feeder", feeder},
          {"ed_size", 12},
          {"samples", 1000},
          {"seed", 11},
          {"correlation", {{"load", 0.3}}},
          {"spce", {{"p0", 1}, {"pmax", 3}, {"eps_target", 0.3}}},
          {"max_enrichments", 1},
          {"jobs", 1},
          {"mode", "both"}};
}

} // namespace

TEST_CASE("missing feeder file exits 1 and names the path") {
  const Outcome o = run("cpf --feeder /nonexistent/feeder.json");
  CHECK(o.code == 1);
  CHECK(o.text.find("/nonexistent/feeder.json") != std::string::npos);

  const fs::path d = scratch("missing");
  write(d / "study.json", small_study("nowhere.json"));
  const Outcome r = run("run --config " + (d / "study.json").string() + " --out " + (d / "out").string());
  CHECK(r.code == 1);
  CHECK(r.text.find("nowhere.json") != std::string::npos);
}

TEST_CASE("cpf on the two-bus feeder reports the analytic nose") {
  const fs::path d = scratch("cpf");
  const Outcome o = run("cpf --feeder " + kData + "/two_bus.json --pv-curve " + (d / "pv.csv").string());
  REQUIRE(o.code == 0);
  CHECK(o.text.find("V.C. ADC 5.000000 MW") != std::string::npos);
  const std::string csv = slurp(d / "pv.csv");
  CHECK(csv.rfind("lambda,mw,src.a,load.a\n", 0) == 0);
}

TEST_CASE("cpf without a growth direction fails with a degenerate direction") {
  const fs::path d = scratch("degenerate");
  json f = three_bus();
  for (auto& l : f["loads"])
    l.erase("growth");
  write(d / "f.json", f);
  const Outcome o = run("cpf --feeder " + (d / "f.json").string());
  CHECK(o.code == 1);
  CHECK(o.text.find("degenerate direction") != std::string::npos);
}

TEST_CASE("validate prints ok for the bundled pair") {
  const Outcome o = run("validate --config " + kData + "/ieee13_study.json --feeder " + kData + "/ieee13_res.json");
  CHECK(o.code == 0);
  CHECK(o.text == "ok\n");
}

TEST_CASE("validate lists every violation") {
  const fs::path d = scratch("validate");
  write(d / "f.json", three_bus());
  json c = small_study("f.json");
  c["correlation"]["load"] = 1.5;
  c["marginals"] = {{"solar", {{"family", "beta"}, {"alpha", -1.0}, {"beta", 2.0}, {"lo", 0.0}, {"hi", 1000.0}}}};
  write(d / "c.json", c);
  const Outcome o = run("validate --config " + (d / "c.json").string());
  CHECK(o.code == 1);
  CHECK(o.text.find("load") != std::string::npos);
  CHECK(o.text.find("alpha") != std::string::npos);
  CHECK(std::count(o.text.begin(), o.text.end(), '\n') >= 2);
}

TEST_CASE("run writes reparseable outputs and reruns byte-identically") {
  const fs::path d = scratch("run");
  write(d / "f.json", three_bus());
  write(d / "c.json", small_study("f.json"));
  const std::string config_before = slurp(d / "c.json");

  const Outcome a = run("run --config " + (d / "c.json").string() + " --out " + (d / "a").string());
  const Outcome b = run("run --config " + (d / "c.json").string() + " --out " + (d / "b").string());
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(d / "c.json") == config_before);

  int compared = 0;
  for (const auto& e : fs::directory_iterator(d / "a")) {
    const std::string name = e.path().filename().string();
    if (name == "timing.json")
      continue;
    CHECK_MESSAGE(slurp(e.path()) == slurp(d / "b" / name), name);
    ++compared;
  }
  CHECK(compared >= 12);

  for (const char* method : {"spce", "mcs"}) {
    const json j = json::parse(slurp(d / "a" / (std::string("result_") + method + ".json")));
    CHECK_FALSE(j.contains("timing"));
    const padc::StudyResult r = padc::study_result_from_json(j);
    CHECK(r.method == method);
    CHECK(padc::study_result_to_json(r).dump() == j.dump());
  }
  const json t = json::parse(slurp(d / "a" / "timing.json"));
  CHECK(t.contains("spce"));
  CHECK(t.contains("mcs"));

  const std::string cmp = slurp(d / "a" / "comparison.csv");
  CHECK(cmp.rfind("response,mu_mcs,mu_spce,dmu_pct,var_mcs,var_spce", 0) == 0);
  CHECK(std::count(cmp.begin(), cmp.end(), '\n') == 5);
}

TEST_CASE("seed precedence: --seed over PADC_SEED over the config") {
  const fs::path d = scratch("seed");
  write(d / "f.json", three_bus());
  json c = small_study("f.json");
  c["mode"] = "spce";
  write(d / "c.json", c);
  auto seed_of = [&](const std::string& prefix, const std::string& extra, const std::string& out) {
    const std::string cmd = prefix + kCli + " run --config " + (d / "c.json").string() + " --out " +
                            (d / out).string() + extra + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    return json::parse(slurp(d / out / "result_spce.json")).at("seed").get<std::uint64_t>();
  };
  CHECK(seed_of("", "", "o1") == 11u);
  CHECK(seed_of("PADC_SEED=23 ", "", "o2") == 23u);
  CHECK(seed_of("PADC_SEED=23 ", " --seed 5", "o3") == 5u);
}

TEST_CASE("a study that misses its error target exits 2") {
  const fs::path d = scratch("nonconv");
  write(d / "f.json", three_bus());
  json c = small_study("f.json");
  c["mode"] = "spce";
  c["spce"]["eps_target"] = 1e-14;
  c["max_enrichments"] = 0;
  write(d / "c.json", c);
  const Outcome o = run("run --config " + (d / "c.json").string() + " --out " + (d / "o").string());
  CHECK(o.code == 2);
  CHECK(fs::exists(d / "o" / "result_spce.json"));
}

TEST_CASE("every subcommand is documented in --help") {
  const Outcome o = run("--help");
  CHECK(o.code == 0);
  for (const char* sub : {"run", "cpf", "validate", "pv-curve"})
    CHECK(o.text.find(sub) != std::string::npos);
  const Outcome r = run("run --help");
  for (const char* flag : {"--config", "--feeder", "--out", "--mode", "--seed", "--jobs"})
    CHECK(r.text.find(flag) != std::string::npos);
}

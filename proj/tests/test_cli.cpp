#include <catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "ovoda/commands.hpp"

using namespace ovoda;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ovoda_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig small_run(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"out=\"" + out.string() + "\"", "synth.frames=3", "synth.objects=5",
                             "synth.novel_quota=1"};
  o.insert(o.end(), extra.begin(), extra.end());
  return resolve_config("", o);
}

int run_cli(const std::string& args, std::string* stderr_text = nullptr) {
  const fs::path err = fs::temp_directory_path() / ("ovoda_cli_err_" + std::to_string(::getpid()));
  const std::string cmd = "\"" + std::string(OVODA_CLI_PATH) + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  if (stderr_text) *stderr_text = read_text_file(err.string());
  fs::remove(err);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("synth, detect and eval in process", "[cli]") {
  const fs::path dir = fresh_dir("inproc");
  RunConfig cfg = small_run(dir);
  std::ostringstream out;
  run_command("synth", cfg, out);
  REQUIRE(fs::exists(dir / kSceneFile));
  REQUIRE(fs::exists(dir / kProposalFile));
  REQUIRE(fs::exists(dir / kEffectiveConfigFile));
  const json summary = json::parse(out.str());
  REQUIRE(summary["annotations"] == 15);

  cfg.dataset = (dir / kSceneFile).string();
  cfg.proposals = (dir / kProposalFile).string();
  run_command("detect", cfg, out);
  const SceneDataset ds = load_dataset(cfg.dataset);
  const auto dets = parse_jsonl(read_text_file((dir / kDetectionFile).string()), "detections");
  std::size_t matched = 0;
  for (std::size_t f = 0; f < ds.scenes[0].frames.size(); ++f)
    for (const auto& a : ds.scenes[0].frames[f].annotations)
      for (const auto& d : dets)
        if (d["frame"] == f && read_box(d["box"], "/box", "detection") == a.box) {
          REQUIRE(d["class_name"] == a.class_name);
          ++matched;
        }
  REQUIRE(matched == 15);

  std::ostringstream eval_out;
  const EvalReport rep = cmd_eval(cfg, eval_out, false);
  REQUIRE(rep.mAP == 1.0);
  REQUIRE(rep.sr_ad_only == 1.0);
  REQUIRE(fs::exists(dir / kEvalFile));

  const json eff = json::parse(read_text_file((dir / kEffectiveConfigFile).string()));
  REQUIRE(eff["seed"] == 7);
  REQUIRE(eff["synth"]["objects"] == 5);
  fs::remove_all(dir);
}

TEST_CASE("build-ovad writes every brute-force pair", "[cli]") {
  const fs::path dir = fresh_dir("ovad");
  RunConfig cfg = small_run(dir, {"synth.objects=8"});
  std::ostringstream out;
  run_command("synth", cfg, out);
  cfg.dataset = (dir / kSceneFile).string();
  run_command("build-ovad", cfg, out);
  const auto pairs = parse_jsonl(read_text_file((dir / kOvadFile).string()), "pairs");
  std::size_t brute = 0;
  const SceneDataset ds = load_dataset(cfg.dataset);
  for (const auto& f : ds.scenes[0].frames) brute += oracle::ovad_pairs(f, 15.0).size();
  REQUIRE(pairs.size() == brute);
  REQUIRE(fs::exists(dir / kOvadSummaryFile));
  fs::remove_all(dir);
}

TEST_CASE("losses-check and errors in process", "[cli]") {
  const fs::path dir = fresh_dir("errors");
  std::ostringstream out;
  run_command("losses-check", small_run(dir, {"losses.configs=3"}), out);
  REQUIRE(json::parse(read_text_file((dir / kLossFile).string()))["passed"] == true);

  REQUIRE_THROWS_AS(run_command("detect", small_run(dir), out), ConfigError);
  RunConfig missing = small_run(dir);
  missing.dataset = (dir / "missing.json").string();
  REQUIRE_THROWS_AS(run_command("detect", missing, out), ConfigError);
  REQUIRE_THROWS_AS(run_command("fly", small_run(dir), out), ConfigError);

  const json e = json::parse(error_json(ProviderError("down", true)));
  REQUIRE(e["error"]["kind"] == "ProviderError");
  REQUIRE(e["error"]["retryable"] == true);
  REQUIRE(e["error"]["exit_code"] == 3);
  fs::remove_all(dir);
}

TEST_CASE("CLI binary exit codes and reruns", "[cli]") {
  const fs::path dir = fresh_dir("binary");
  const std::string out = "\"" + (dir / "a").string() + "\"";
  REQUIRE(run_cli("synth --seed 5 --set synth.frames=2 --out " + out) == 0);
  const std::string first = read_text_file((dir / "a" / kSceneFile).string());
  REQUIRE(run_cli("synth --seed 5 --set synth.frames=2 --out " + out) == 0);
  REQUIRE(read_text_file((dir / "a" / kSceneFile).string()) == first);

  std::string err;
  REQUIRE(run_cli("detect --set colour=red --out " + out, &err) == 1);
  REQUIRE(json::parse(err)["error"]["kind"] == "ConfigError");
  REQUIRE(run_cli("detect --set events.T=-1 --dataset " + (dir / "a" / kSceneFile).string() + " --out " + out) == 1);
  REQUIRE(run_cli("detect --dataset /nonexistent/scene.json --out " + out) == 1);
  REQUIRE(run_cli("no-such-command") == 1);

  const std::string bad = (dir / "bad.json").string();
  write_text_file(bad, "{\"schema\": \"ovoda-scene/1\", \"scenes\": 3}");
  REQUIRE(run_cli("detect --dataset " + bad + " --out " + out, &err) == 2);
  REQUIRE(json::parse(err)["error"]["kind"] == "SchemaError");

  REQUIRE(run_cli("provider-probe --url http://127.0.0.1:9 --set provider.retries=0 --set provider.timeout_s=1",
                  &err) == 3);
  REQUIRE(json::parse(err)["error"]["retryable"] == true);
  fs::remove_all(dir);
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "specnovo/checkpoint.hpp"
#include "specnovo/commands.hpp"
#include "specnovo/errors.hpp"
#include "support/synth.hpp"

using namespace specnovo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cmd_test") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all("cmd_test"); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

RunConfig base_config(const TempDir& dir, const std::string& sub) {
  RunConfig c;
  c.preset = "micro";
  c.seed = 11;
  c.out_dir = (dir.path / sub).string();
  c.epochs = 30;
  c.batch_size = 8;
  c.lr_override = 3e-3;
  return c;
}

}  // namespace

TEST_CASE("train / predict / evaluate round trip") {
  TempDir dir("flow");
  const std::vector<Record> corpus = {
      synth::synth_record("CCO"), synth::synth_record("CCC"),
      synth::synth_record("CCN"), synth::synth_record("C1CC1"),
      synth::synth_record("CO"), synth::synth_record("CCCC"),
  };
  save_jsonl(corpus, dir.file("train.jsonl"));
  save_jsonl(corpus, dir.file("val.jsonl"));

  RunConfig train = base_config(dir, "train");
  train.command = "train";
  train.data_path = dir.file("train.jsonl");
  train.val_path = dir.file("val.jsonl");
  REQUIRE(run_train(train) == 0);
  const std::string ckpt = train.out_dir + "/checkpoint.snvc";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(train.out_dir + "/train_log.jsonl"));
  CHECK(fs::exists(train.out_dir + "/run_config.txt"));
  CHECK(slurp(train.out_dir + "/run_config.txt").find(kVersionString) !=
        std::string::npos);

  // resume continues the step counter
  const long step_before = load_checkpoint(ckpt).state.step;
  RunConfig resume = base_config(dir, "resume");
  resume.command = "train";
  resume.data_path = dir.file("train.jsonl");
  resume.checkpoint_in = ckpt;
  resume.epochs = 1;
  REQUIRE(run_train(resume) == 0);
  CHECK(load_checkpoint(resume.out_dir + "/checkpoint.snvc").state.step >
        step_before);

  // predictions: happy records plus one broken line, run continues
  {
    std::ofstream out(dir.file("input.jsonl"));
    out << record_to_json(corpus[0]) << "\n";
    out << R"({"spectrum":[[100.0,50.0]],"formula":"QQ7"})" << "\n";
    out << record_to_json(corpus[1]) << "\n";
  }
  RunConfig predict = base_config(dir, "predict");
  predict.command = "predict";
  predict.checkpoint_in = ckpt;
  predict.data_path = dir.file("input.jsonl");
  predict.k = 2;
  predict.beam = 4;
  REQUIRE(run_predict(predict) == 0);
  const std::string preds_path = predict.out_dir + "/predictions.jsonl";
  REQUIRE(fs::exists(preds_path));
  const std::string first_run = slurp(preds_path);
  CHECK(first_run.find("error") != std::string::npos);  // bad line reported
  CHECK(first_run.find("candidates") != std::string::npos);

  // byte-identical on rerun with the same seed
  RunConfig rerun = predict;
  rerun.out_dir = (dir.path / "predict2").string();
  REQUIRE(run_predict(rerun) == 0);
  CHECK(slurp(rerun.out_dir + "/predictions.jsonl") == first_run);

  // evaluation over the predictions
  RunConfig evaluate = base_config(dir, "eval");
  evaluate.command = "evaluate";
  evaluate.predictions_path = preds_path;
  evaluate.k = 2;
  REQUIRE(run_evaluate(evaluate) == 0);
  CHECK(fs::exists(evaluate.out_dir + "/report.json"));
  CHECK(fs::exists(evaluate.out_dir + "/report.txt"));
}

TEST_CASE("ttt command smoke mode leaves parameters untouched") {
  TempDir dir("ttt");
  const std::vector<Record> corpus = {
      synth::synth_record("CCO"), synth::synth_record("CCC"),
      synth::synth_record("CCN"), synth::synth_record("CO"),
  };
  save_jsonl(corpus, dir.file("train.jsonl"));

  RunConfig train = base_config(dir, "base");
  train.command = "train";
  train.data_path = dir.file("train.jsonl");
  train.epochs = 3;
  REQUIRE(run_train(train) == 0);
  const std::string base_ckpt = train.out_dir + "/checkpoint.snvc";

  save_jsonl(corpus, dir.file("pool.jsonl"));
  std::vector<Record> extra = {synth::synth_record("CCCC"),
                               synth::synth_record("CCO")};  // one duplicate
  save_jsonl(extra, dir.file("extra.jsonl"));
  std::vector<Record> test = {synth::synth_record("CCO")};
  for (Record& r : test) r.smiles.clear();
  save_jsonl(test, dir.file("test.jsonl"));

  RunConfig ttt = base_config(dir, "adapted");
  ttt.command = "ttt";
  ttt.checkpoint_in = base_ckpt;
  ttt.pool_path = dir.file("pool.jsonl");
  ttt.extend_pool = {dir.file("extra.jsonl")};
  ttt.test_path = dir.file("test.jsonl");
  ttt.lr_override = 0.0;
  ttt.ttt.patience = 3;
  ttt.ttt.max_updates = 20;
  REQUIRE(run_ttt(ttt) == 0);

  const LoadedCheckpoint base = load_checkpoint(base_ckpt);
  const LoadedCheckpoint adapted =
      load_checkpoint(ttt.out_dir + "/checkpoint.snvc");
  for (const auto& [name, t] : base.state.params.tensors) {
    CHECK((t - adapted.state.params.tensors.at(name)).cwiseAbs().maxCoeff() ==
          0.0);
  }
  CHECK(fs::exists(ttt.out_dir + "/ttt_trace.jsonl"));
  const std::string trace = slurp(ttt.out_dir + "/ttt_trace.jsonl");
  CHECK(trace.find("saturated") != std::string::npos);
  const std::string manifest = slurp(ttt.out_dir + "/pool_manifest.json");
  CHECK(manifest.find("extra.jsonl") != std::string::npos);
  CHECK(manifest.find("duplicates_dropped") != std::string::npos);

  // fingerprint width disagreement is a checkpoint error
  RunConfig bad = ttt;
  bad.fingerprint_width = 2048;
  CHECK_THROWS_AS(run_ttt(bad), CheckpointError);
  CHECK(run_command_mapped(run_ttt, bad) == 3);
}

TEST_CASE("ingest-mgf converts to the dataset schema") {
  TempDir dir("mgf");
  {
    std::ofstream out(dir.file("input.mgf"));
    out << "BEGIN IONS\nFORMULA=C2H6O\nSMILES=CCO\n"
        << "100.0 10.0\n200.0 5.0\nEND IONS\n";
  }
  RunConfig ingest = base_config(dir, "ingest");
  ingest.command = "ingest-mgf";
  ingest.data_path = dir.file("input.mgf");
  REQUIRE(run_ingest_mgf(ingest) == 0);
  const std::vector<Record> records =
      load_jsonl(ingest.out_dir + "/dataset.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].smiles == "CCO");
}

TEST_CASE("exit code mapping") {
  TempDir dir("codes");
  RunConfig missing = base_config(dir, "missing");
  missing.command = "train";
  missing.data_path = dir.file("absent.jsonl");
  CHECK(run_command_mapped(run_train, missing) == 3);

  RunConfig evaluate = base_config(dir, "eval");
  evaluate.command = "evaluate";
  {
    std::ofstream out(dir.file("empty.jsonl"));
  }
  evaluate.predictions_path = dir.file("empty.jsonl");
  CHECK(run_command_mapped(run_evaluate, evaluate) == 3);
}

TEST_CASE("frozen config lists every resolved setting") {
  RunConfig c;
  c.command = "predict";
  c.extend_pool = {"a.jsonl", "b.jsonl"};
  const std::string text = config_to_text(c);
  for (const char* key :
       {"version", "command", "seed", "beam", "lambda", "ttt.patience",
        "extend_pool = a.jsonl", "extend_pool = b.jsonl"}) {
    CAPTURE(key);
    CHECK(text.find(key) != std::string::npos);
  }
}

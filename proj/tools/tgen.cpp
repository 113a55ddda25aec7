#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tgen/errors.hpp"
#include "tgen/pipeline.hpp"

namespace {

int exit_code_for(const tgen::error& e) {
  return e.code() == tgen::errc::stage_mismatch ? 3 : 2;
}

tgen::pipeline_config load_config(const std::string& config_path, std::uint64_t seed_override,
                                  bool have_seed) {
  tgen::pipeline_config cfg;
  if (!config_path.empty()) cfg = tgen::pipeline_config::load(config_path);
  if (have_seed) cfg.seed = seed_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learn a generative model from recorded traffic and emit statistically faithful pcap"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool have_seed = false;
  app.add_option("--config", config_path, "key = value configuration file")->expected(1);
  app.add_option_function<std::uint64_t>(
      "--seed",
      [&](std::uint64_t s) {
        seed = s;
        have_seed = true;
      },
      "master seed override");

  auto* extract = app.add_subcommand("extract", "pcap -> per-flow feature table");
  std::string in_pcap, out_prefix;
  extract->add_option("pcap", in_pcap, "input capture")->required();
  extract->add_option("--out", out_prefix, "output prefix (<out>.csv, <out>.meta.json)")->required();

  auto* cluster = app.add_subcommand("cluster", "feature table -> k-means activity model");
  std::string table_prefix, model_out;
  std::vector<std::size_t> silhouette_ks;
  cluster->add_option("table", table_prefix, "feature table prefix from extract")->required();
  cluster->add_option("--out", model_out, "cluster model json")->required();
  cluster->add_option("--silhouette-k", silhouette_ks,
                      "also report the mean silhouette at these cluster counts");

  auto* train = app.add_subcommand("train", "labeled flows -> sequence model");
  std::string train_table, train_model, train_out;
  train->add_option("table", train_table, "feature table prefix")->required();
  train->add_option("--model", train_model, "cluster model json")->required();
  train->add_option("--out", train_out, "sequence model json")->required();

  auto* generate = app.add_subcommand("generate", "sequence model + source traffic -> new pcap");
  std::string gen_pcap, gen_table, gen_model, gen_bundle, gen_out;
  generate->add_option("pcap", gen_pcap, "source capture (flow packets are sampled from it)")
      ->required();
  generate->add_option("--table", gen_table, "feature table prefix")->required();
  generate->add_option("--model", gen_model, "cluster model json")->required();
  generate->add_option("--sequences", gen_bundle, "sequence model json")->required();
  generate->add_option("--out", gen_out, "output prefix (<out>.pcap, <out>.provenance.csv)")
      ->required();

  auto* evaluate = app.add_subcommand("evaluate", "compare original and generated pcaps");
  std::string eval_orig, eval_gen, eval_model, eval_out;
  evaluate->add_option("original", eval_orig, "original capture")->required();
  evaluate->add_option("generated", eval_gen, "generated capture")->required();
  evaluate->add_option("--model", eval_model, "cluster model json")->required();
  evaluate->add_option("--out", eval_out, "report prefix (<out>.csv)")->required();

  auto* fixture = app.add_subcommand("fixture", "emit the synthetic demo corpus");
  std::string fixture_out;
  std::size_t fixture_pairs = 20;
  double fixture_duration = 600.0;
  fixture->add_option("--out", fixture_out, "output pcap")->required();
  fixture->add_option("--pairs", fixture_pairs, "client/server pair count");
  fixture->add_option("--duration", fixture_duration, "capture length in seconds");

  CLI11_PARSE(app, argc, argv);

  try {
    tgen::pipeline_config cfg = load_config(config_path, seed, have_seed);
    if (extract->parsed()) {
      tgen::cmd_extract(in_pcap, out_prefix + ".csv", out_prefix + ".meta.json", cfg);
      std::cout << "wrote " << out_prefix << ".csv\n";
    } else if (cluster->parsed()) {
      std::string silhouette_report;
      tgen::cmd_cluster(table_prefix + ".csv", table_prefix + ".meta.json", model_out, cfg,
                        silhouette_ks, &silhouette_report);
      if (!silhouette_report.empty()) std::cout << silhouette_report;
      std::cout << "wrote " << model_out << "\n";
    } else if (train->parsed()) {
      tgen::cmd_train(train_table + ".csv", train_table + ".meta.json", train_model, train_out, cfg);
      std::cout << "wrote " << train_out << "\n";
    } else if (generate->parsed()) {
      tgen::cmd_generate(gen_pcap, gen_table + ".csv", gen_table + ".meta.json", gen_model,
                         gen_bundle, gen_out + ".pcap", gen_out + ".provenance.csv", cfg);
      std::cout << "wrote " << gen_out << ".pcap\n";
    } else if (evaluate->parsed()) {
      tgen::fidelity_report report;
      int rc = tgen::cmd_evaluate(eval_orig, eval_gen, eval_model, cfg, eval_out + ".csv", &report);
      std::cout << tgen::report_text(report);
      if (rc != 0)
        std::cerr << "preserved fraction below the configured floor (" << cfg.preserved_floor
                  << ")\n";
      return rc;
    } else if (fixture->parsed()) {
      tgen::fixture_spec spec;
      spec.pair_count = fixture_pairs;
      spec.duration_s = fixture_duration;
      spec.seed = cfg.seed;
      tgen::cmd_fixture(spec, fixture_out);
      std::cout << "wrote " << fixture_out << "\n";
    }
  } catch (const tgen::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

// cnnzoo: audit, train, eval, gradcheck and gendata from the command line.
//
// Exit codes: 0 success, 1 runtime or check failure, 2 usage error.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cnnzoo/app.hpp"

namespace {

using cnnzoo::app::Json;
using cnnzoo::app::RunConfig;

void add_model_options(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("--model", rc.model, "Architecture name");
  cmd.add_option("--backbone", rc.backbone, "Frozen feature extractor for transfer_head");
  cmd.add_option("--classes", rc.classes, "Number of classes (default 2)");
  cmd.add_option("--feature-dim", rc.feature_dim, "Transfer-head input channels")->capture_default_str();
  cmd.add_option("--input", rc.input, "Square input resolution (default 224, or 32 with --synthetic)");
  cmd.add_option("--width", rc.width, "Channel width multiplier in (0, 1]");
  cmd.add_option("--freeze", rc.freeze, "Freeze parameters whose names start with this prefix (repeatable)");
  cmd.add_option("--seed", rc.seed, "Seed for initialisation, data and shuffling")->capture_default_str();
}

void add_data_options(CLI::App& cmd, RunConfig& rc) {
  cmd.add_option("--synthetic", rc.synthetic, "Synthetic data spec, e.g. classes=2,per_class=100");
  cmd.add_option("--manifest", rc.manifest, "Dataset manifest");
  cmd.add_flag("--resize", rc.resize, "Nearest-neighbour resize manifest images to the input size");
}

void emit(const Json& report, const RunConfig& rc) {
  const std::string text = report.dump(2) + "\n";
  if (rc.report.empty()) {
    std::cout << text;
  } else {
    cnnzoo::app::write_text(rc.report, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional model zoo: footprint audit, training, evaluation and gradient checks"};
  app.require_subcommand(1);
  RunConfig rc;

  auto* audit = app.add_subcommand("audit", "Per-layer parameter and buffer footprint");
  add_model_options(*audit, rc);
  audit->add_option("--report", rc.report, "Write the JSON report here (table goes to stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Central-difference gradient check in double precision");
  add_model_options(*gradcheck, rc);
  gradcheck->add_option("--batch", rc.batch, "Batch size (default 2)");
  gradcheck->add_option("--eps", rc.eps, "Finite-difference step")->capture_default_str();
  gradcheck->add_option("--threshold", rc.threshold, "Maximum relative error")->capture_default_str();
  gradcheck->add_option("--corrupt-gradient", rc.corrupt, "Scale this parameter's gradient by 1.5 (negative control)");
  gradcheck->add_option("--report", rc.report, "Write the JSON report here");

  auto* train = app.add_subcommand("train", "Train and write a checkpoint plus per-epoch stats");
  add_model_options(*train, rc);
  add_data_options(*train, rc);
  train->add_option("--optimizer", rc.optimizer, "adam or sgd")->capture_default_str();
  train->add_option("--lr", rc.lr, "Learning rate (adam 1e-3, sgd 1e-2)");
  train->add_option("--epochs", rc.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch", rc.batch, "Batch size (default 16)");
  train->add_option("--checkpoint-in", rc.checkpoint_in, "Start from this checkpoint");
  train->add_option("--checkpoint-out", rc.checkpoint_out, "Write the final checkpoint here");
  train->add_option("--report", rc.report, "Write the JSON stats here");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_model_options(*eval, rc);
  add_data_options(*eval, rc);
  eval->add_option("--checkpoint-in", rc.checkpoint_in, "Checkpoint to evaluate")->required();
  eval->add_option("--report", rc.report, "Write the JSON metrics here");

  auto* gendata = app.add_subcommand("gendata", "Write a synthetic dataset as PNM images plus a manifest");
  gendata->add_option("--synthetic", rc.synthetic, "Synthetic data spec, e.g. kind=detection,samples=100");
  gendata->add_option("--model", rc.model, "mini_yolo selects detection data by default");
  gendata->add_option("--classes", rc.classes, "Number of classes (default 2)");
  gendata->add_option("--input", rc.input, "Image resolution (default 32)");
  gendata->add_option("--seed", rc.seed, "Seed")->capture_default_str();
  gendata->add_option("--split", rc.split, "train or eval")->capture_default_str();
  gendata->add_option("--out", rc.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*audit) {
      emit(cnnzoo::app::cmd_audit(rc, std::cout), rc);
    } else if (*gradcheck) {
      const Json report = cnnzoo::app::cmd_gradcheck(rc, std::cout);
      if (!rc.report.empty()) emit(report, rc);
      if (!report["pass"].get<bool>()) {
        for (const auto& m : report["models"])
          if (!m["pass"].get<bool>())
            std::cerr << "gradcheck failed: " << m["model"].get<std::string>() << " worst parameter "
                      << m["worst_param"].get<std::string>() << " (relative error "
                      << m["max_rel_error"].get<double>() << ")\n";
        return 1;
      }
    } else if (*train) {
      emit(cnnzoo::app::cmd_train(rc, rc.report.empty() ? std::cerr : std::cout), rc);
    } else if (*eval) {
      emit(cnnzoo::app::cmd_eval(rc, rc.report.empty() ? std::cerr : std::cout), rc);
    } else if (*gendata) {
      cnnzoo::app::cmd_gendata(rc, std::cout);
    }
  } catch (const cnnzoo::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

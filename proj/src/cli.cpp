#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "lata/config.hpp"
#include "lata/grade.hpp"
#include "lata/ingest.hpp"
#include "lata/pipeline.hpp"

namespace lata {

namespace fs = std::filesystem;

namespace {

struct CliArgs {
  std::string config;
  std::string export_dir;
  std::string assignment_dir;
  std::string output_dir;
  std::string mock_transcript;
  std::string record_transcript;
  std::string ledger;
  int workers = 0;
};

Config load_cli_config(const CliArgs& a) {
  std::string path = a.config;
  if (path.empty()) {
    if (const char* env = std::getenv("LATA_CONFIG"); env != nullptr) path = env;
  }
  return path.empty() ? Config{} : load_config(path);
}

PipelineOptions make_options(const CliArgs& a) {
  PipelineOptions o;
  o.config = load_cli_config(a);
  if (a.workers > 0) o.config.worker_count = a.workers;
  o.export_dir = a.export_dir.empty() ? o.config.paths.export_dir : a.export_dir;
  o.assignment_dir = a.assignment_dir.empty() ? o.config.paths.assignment_dir : a.assignment_dir;
  o.output_dir = a.output_dir.empty() ? o.config.paths.output_dir : a.output_dir;
  if (!a.mock_transcript.empty()) o.mock_transcript = a.mock_transcript;
  if (!a.record_transcript.empty()) o.record_transcript = a.record_transcript;
  if (o.assignment_dir.empty()) throw ValidationError("paths.assignment_dir", "no assignment directory given");
  return o;
}

void require_export(const PipelineOptions& o) {
  if (o.export_dir.empty()) throw ValidationError("paths.export_dir", "no export directory given");
}

int finish(const RunSummary& s) {
  std::cout << s.to_text();
  if (!s.reconciles()) {
    std::cerr << "error: summary counts do not reconcile\n";
    return 3;
  }
  if (s.endpoint_failures > 0) {
    std::cerr << "error: " << s.endpoint_failures << " model call(s) failed: endpoint unavailable\n";
    return 2;
  }
  return 0;
}

int stage_exit(std::size_t endpoint_failures) {
  if (endpoint_failures > 0) {
    std::cerr << "error: " << endpoint_failures << " model call(s) failed: endpoint unavailable\n";
    return 2;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"lata: LaTeX homework autograder"};
  app.require_subcommand(1);
  CliArgs a;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "YAML configuration (default: $LATA_CONFIG)");
    sub->add_option("--assignment", a.assignment_dir, "assignment package directory");
    sub->add_option("--out", a.output_dir, "output directory");
    sub->add_option("--mock-transcript", a.mock_transcript, "replay model replies from this transcript");
    sub->add_option("--record-transcript", a.record_transcript, "append every model exchange to this transcript");
    sub->add_option("--workers", a.workers, "worker threads")->check(CLI::PositiveNumber);
  };

  CLI::App* run = app.add_subcommand("run", "all four stages");
  add_common(run);
  run->add_option("--export", a.export_dir, "submission export directory");
  CLI::App* regrade = app.add_subcommand("regrade", "corrections pass against an existing ledger");
  add_common(regrade);
  regrade->add_option("--export", a.export_dir, "corrections export directory");
  regrade->add_option("--ledger", a.ledger, "identified ledger of the original run (default <out>/ledger/identified.jsonl)");
  CLI::App* ingest = app.add_subcommand("ingest", "stage 1: read the export");
  add_common(ingest);
  ingest->add_option("--export", a.export_dir, "submission export directory");
  CLI::App* segment = app.add_subcommand("segment", "stage 2: split bodies into problems");
  add_common(segment);
  CLI::App* grade = app.add_subcommand("grade", "stage 3: grade every problem");
  add_common(grade);
  CLI::App* report = app.add_subcommand("report", "stage 4: ledger, feedback documents, summary");
  add_common(report);
  CLI::App* check = app.add_subcommand("validate", "lint the configuration and assignment package");
  check->add_option("--config", a.config, "YAML configuration (default: $LATA_CONFIG)");
  check->add_option("--assignment", a.assignment_dir, "assignment package directory");
  check->add_option("--export", a.export_dir, "also check this export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (check->parsed()) {
      const Config config = load_cli_config(a);
      validate(config);
      const std::string dir = a.assignment_dir.empty() ? config.paths.assignment_dir : a.assignment_dir;
      if (!dir.empty()) {
        const AssignmentPackage pkg = load_assignment(dir);
        std::cout << "assignment " << pkg.assignment_id << ": " << pkg.problems.size() << " problems, "
                  << pkg.total_points() << " points\n";
      }
      const std::string exp = a.export_dir.empty() ? config.paths.export_dir : a.export_dir;
      if (!exp.empty()) {
        const IngestResult r = load_export(exp, config);
        std::cout << "export: " << r.submissions.size() << " submissions\n";
        for (const auto& w : r.warnings) std::cout << "  warning: " << w << "\n";
      }
      std::cout << "ok\n";
      return 0;
    }

    PipelineOptions opts = make_options(a);
    if (regrade->parsed()) {
      require_export(opts);
      opts.original_ledger = a.ledger.empty() ? opts.output_dir / "ledger" / "identified.jsonl" : fs::path(a.ledger);
      Pipeline p(std::move(opts));
      return finish(p.run_all());
    }
    if (run->parsed()) {
      require_export(opts);
      Pipeline p(std::move(opts));
      return finish(p.run_all());
    }
    if (ingest->parsed()) {
      require_export(opts);
      Pipeline p(std::move(opts));
      return stage_exit(p.run_ingest());
    }
    Pipeline p(std::move(opts));
    if (segment->parsed()) return stage_exit(p.run_segment());
    if (grade->parsed()) return stage_exit(p.run_grade());
    return finish(p.run_report());
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const MissingMetadataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const EmptyExportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const MissingOriginalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace lata

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskpia/error.hpp"
#include "riskpia/genmat.hpp"
#include "riskpia/howard.hpp"
#include "riskpia/model.hpp"
#include "riskpia/oracle.hpp"
#include "riskpia/sde.hpp"

namespace riskpia {

/// Exit-code contract of the command line tool.
namespace exit_code {
constexpr int kOk = 0;
constexpr int kError = 1;  // bad config, usage, I/O and other errors
constexpr int kCheckFailed = 2;
constexpr int kGuardFailed = 3;
constexpr int kNonConvergence = 4;  // also runtime invariant violations
constexpr int kMismatch = 5;        // oracle crosscheck or Feynman-Kac failure
constexpr int kMissingArtifact = 6;
}  // namespace exit_code

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct GridSection {
  std::vector<double> radii;
  std::vector<double> steps;
  std::optional<std::vector<double>> lower;
  DriftScheme scheme = DriftScheme::Hybrid;
  std::vector<std::vector<double>> refine_radii;
  std::vector<std::vector<double>> refine_steps;
};

enum class InitialPolicy { Constant, Random, File };

struct SolveSection {
  PiaOptions pia;
  InitialPolicy init = InitialPolicy::Constant;
  std::uint32_t init_control = 0;
  std::filesystem::path init_file;
};

struct FkSection {
  bool enabled = true;
  std::vector<Point> x0;  // empty: use mc.x0
  FkOptions options;
  std::optional<double> dt;
  std::optional<std::size_t> n_paths;
};

struct TwistedSection {
  bool enabled = true;
  double T = 1000.0;
  double dt = 0.01;
  std::size_t n_paths = 16;
  std::optional<Point> x0;
  TwistedOptions options;
};

struct McSection {
  McConfig base;
  bool risk = true;
  std::optional<std::uint32_t> policy;  // constant control when no solve artifact is used
  FkSection fk;
  TwistedSection twisted;
};

struct OracleSection {
  OracleOptions options;
  double tol = 1e-10;
};

struct OutputSection {
  std::filesystem::path dir = "out";
  bool csv = true;
  bool matrix_dump = false;
};

struct RunConfig {
  nlohmann::json raw;        // parsed document
  std::string source_text;   // original config text
  std::string name;
  std::uint64_t seed = 0;
  ProblemSpec problem;
  GridSection grid;
  SolveSection solve;
  McSection mc;
  OracleSection oracle;
  OutputSection output;
  ValidationThresholds check;

  Grid primary_grid() const;
  Grid grid_with(const std::vector<double>& radii, const std::vector<double>& steps) const;
  PolicyField initial_policy(const Grid& g) const;
};

/// Parses and validates a configuration document; relative paths resolve
/// against `base_dir`. Unknown keys are ConfigError.
RunConfig load_config_text(const std::string& text, const std::filesystem::path& base_dir = ".");
RunConfig load_config_file(const std::filesystem::path& path);

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool allow_guard_fail = false;
  std::optional<unsigned> threads;
};

/// Runs check|solve|refine|oracle|simulate and returns the exit code.
/// Errors are reported on `err`, progress on `out`.
int run_command(const std::string& command, const CommandOptions& opt, std::ostream& out, std::ostream& err);

/// Rows of the refinement study.
struct RefineRow {
  std::string study;  // "radius" or "step"
  double R = 0.0;
  double h = 0.0;
  double lambda = 0.0;
  double cw_lower = 0.0;
  double cw_upper = 0.0;
  std::size_t outer_iterations = 0;
  std::string termination;
};

struct RefineResult {
  std::vector<RefineRow> rows;
  bool radius_nondecreasing = true;
  bool step_differences_decreasing = true;
  double richardson = 0.0;
  double richardson_order = 0.0;
  std::optional<double> observed_order;
  nlohmann::json to_json() const;
};

RefineResult refine_study(const RunConfig& cfg);

// Artifact files.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string format_double(double v);
std::string trace_csv(const PiaTrace& t);
std::string eigenfunction_csv(const Grid& g, std::span<const double> V);
std::string policy_csv(const Grid& g, const ControlSet& controls, const PolicyField& v);
std::vector<double> read_eigenfunction_csv(const std::filesystem::path& path, const Grid& g);
PolicyField read_policy_csv(const std::filesystem::path& path, const Grid& g, std::size_t controls);

}  // namespace riskpia

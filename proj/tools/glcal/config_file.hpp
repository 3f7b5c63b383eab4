#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace CLI {
class App;
}

namespace glcal::cli {

class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Removes `--config FILE` from the arguments and splices the file's flat JSON
/// keys (underscores for dashes) in as flags of the selected subcommand. Flags
/// given on the command line win; unknown keys raise ConfigFileError.
std::vector<std::string> expand_config_file(const CLI::App& app, std::vector<std::string> args);

}  // namespace glcal::cli

#include "glcal/config_file.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

namespace glcal::cli {

namespace {

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw ConfigFileError("config values must be strings, numbers, booleans or arrays of those");
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

}  // namespace

std::vector<std::string> expand_config_file(const CLI::App& app, std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigFileError("--config needs a file argument");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw ConfigFileError("cannot read config file " + config_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigFileError("config file " + config_path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigFileError("config file must hold a flat JSON object");

  auto sub_pos = std::find_if(args.begin() + 1, args.end(),
                              [](const std::string& a) { return !a.empty() && a.front() != '-'; });
  if (sub_pos == args.end()) throw ConfigFileError("a subcommand is required with --config");
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(*sub_pos);
  } catch (const CLI::OptionNotFound&) {
    return args;  // the parser reports the unknown subcommand
  }

  std::vector<std::string> injected;
  for (const auto& [key, value] : doc.items()) {
    std::string flag = "--" + key;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr) throw ConfigFileError("unknown config key '" + key + "' for " + *sub_pos);
    if (given_on_command_line(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& item : value) injected.push_back(flag + "=" + scalar_text(item));
    } else {
      injected.push_back(flag + "=" + scalar_text(value));
    }
  }
  args.insert(sub_pos + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace glcal::cli

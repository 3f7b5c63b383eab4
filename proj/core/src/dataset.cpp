#include "glcal/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "glcal/errors.hpp"
#include "glcal/random.hpp"

namespace glcal {

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'L', 'Z', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

LogitDataset parse_binary(const std::string& bytes, const std::filesystem::path& path) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw FormatError(path.string() + ": missing GLZ1 magic or truncated header");
  }
  const std::uint64_t n = get_u32(p + 4);
  const std::uint64_t m = get_u32(p + 8);
  const std::uint64_t n_classes = get_u32(p + 12);
  const std::uint64_t expected = 16 + 4 * n * m + 4 * n;
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) +
                      " bytes for the declared header, found " + std::to_string(bytes.size()));
  }
  if (n == 0 || m < 2 || n_classes < 2) {
    throw ValidationError(path.string() + ": header requires N >= 1, m >= 2, n_classes >= 2");
  }
  LogitMatrix logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  const unsigned char* cursor = p + 16;
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < m; ++j) {
      logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::bit_cast<float>(get_u32(cursor));
      cursor += 4;
    }
  }
  Labels labels(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t raw = get_u32(cursor);
    cursor += 4;
    if (raw >= n_classes) {
      throw ValidationError(path.string() + ": label " + std::to_string(raw) + " at row " +
                            std::to_string(i) + " is outside [0, " + std::to_string(n_classes) +
                            ")");
    }
    labels[i] = static_cast<int>(raw);
  }
  return LogitDataset(std::move(logits), std::move(labels), static_cast<int>(n_classes));
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

LogitDataset parse_csv(const std::string& text, const std::filesystem::path& path) {
  std::vector<std::string_view> lines;
  {
    std::string_view rest(text);
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      auto line = trim(rest.substr(0, nl));
      if (!line.empty()) lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  if (lines.empty()) throw FormatError(path.string() + ": empty CSV");

  const auto header = split_fields(lines.front());
  if (header.size() < 3 || trim(header.back()) != "label") {
    throw FormatError(path.string() + ": header must be logit_0,...,logit_{m-1},label");
  }
  const std::size_t m = header.size() - 1;
  for (std::size_t j = 0; j < m; ++j) {
    if (trim(header[j]) != "logit_" + std::to_string(j)) {
      throw FormatError(path.string() + ": header column " + std::to_string(j) +
                        " must be logit_" + std::to_string(j));
    }
  }
  const std::size_t n = lines.size() - 1;
  if (n == 0) throw ValidationError(path.string() + ": no data rows");

  LogitMatrix logits(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = split_fields(lines[i + 1]);
    if (fields.size() != m + 1) {
      throw FormatError(path.string() + ": row " + std::to_string(i) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(m + 1));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const auto f = trim(fields[j]);
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec == std::errc::result_out_of_range) {
        throw ValidationError(path.string() + ": logit out of float range at row " +
                              std::to_string(i));
      }
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw FormatError(path.string() + ": cannot parse logit '" + std::string(f) + "' at row " +
                          std::to_string(i));
      }
      logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
    const auto lf = trim(fields[m]);
    long long label = 0;
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size()) {
      throw FormatError(path.string() + ": cannot parse label '" + std::string(lf) + "' at row " +
                        std::to_string(i));
    }
    if (label < 0 || label >= static_cast<long long>(m)) {
      throw ValidationError(path.string() + ": label " + std::to_string(label) + " at row " +
                            std::to_string(i) + " is outside [0, " + std::to_string(m) + ")");
    }
    labels[i] = static_cast<int>(label);
  }
  return LogitDataset(std::move(logits), std::move(labels), static_cast<int>(m));
}

std::string format_csv(const LogitDataset& d) {
  std::string out;
  for (int j = 0; j < d.dim(); ++j) out += "logit_" + std::to_string(j) + ",";
  out += "label\n";
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g,",
                    static_cast<double>(d.logits()(static_cast<Eigen::Index>(i), j)));
      out += buf;
    }
    out += std::to_string(d.labels()[i]);
    out += '\n';
  }
  return out;
}

std::string format_binary(const LogitDataset& d) {
  std::string out;
  out.reserve(16 + 4 * d.size() * (static_cast<std::size_t>(d.dim()) + 1));
  out.append(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(d.size()));
  put_u32(out, static_cast<std::uint32_t>(d.dim()));
  put_u32(out, static_cast<std::uint32_t>(d.n_classes()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int j = 0; j < d.dim(); ++j) {
      put_u32(out, std::bit_cast<std::uint32_t>(d.logits()(static_cast<Eigen::Index>(i), j)));
    }
  }
  for (int label : d.labels()) put_u32(out, static_cast<std::uint32_t>(label));
  return out;
}

}  // namespace

FileFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".csv" ? FileFormat::csv : FileFormat::binary;
}

LogitDataset::LogitDataset(LogitMatrix logits, Labels labels, int n_classes)
    : logits_(std::move(logits)), labels_(std::move(labels)), n_classes_(n_classes) {
  if (labels_.empty()) throw ValidationError("dataset must contain at least one sample");
  if (static_cast<std::size_t>(logits_.rows()) != labels_.size()) {
    throw ValidationError("logit rows (" + std::to_string(logits_.rows()) +
                          ") do not match label count (" + std::to_string(labels_.size()) + ")");
  }
  if (logits_.cols() < 2) throw ValidationError("logit dimension m must be at least 2");
  if (n_classes_ < 2) throw ValidationError("n_classes must be at least 2");
  if (logits_.cols() != n_classes_) {
    throw ValidationError("logit dimension m=" + std::to_string(logits_.cols()) +
                          " differs from n_classes=" + std::to_string(n_classes_) +
                          "; only m == n_classes is supported");
  }
  if (!logits_.allFinite()) throw ValidationError("logits contain NaN or Inf");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || labels_[i] >= n_classes_) {
      throw ValidationError("label " + std::to_string(labels_[i]) + " at row " +
                            std::to_string(i) + " is outside [0, " + std::to_string(n_classes_) +
                            ")");
    }
  }
}

LogitDataset LogitDataset::subset(std::span<const std::size_t> indices) const {
  LogitMatrix rows(static_cast<Eigen::Index>(indices.size()), logits_.cols());
  Labels labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= labels_.size()) throw ValidationError("subset index out of range");
    rows.row(static_cast<Eigen::Index>(i)) = logits_.row(static_cast<Eigen::Index>(indices[i]));
    labels[i] = labels_[indices[i]];
  }
  return LogitDataset(std::move(rows), std::move(labels), n_classes_);
}

bool operator==(const LogitDataset& a, const LogitDataset& b) {
  if (a.n_classes_ != b.n_classes_ || a.labels_ != b.labels_) return false;
  if (a.logits_.rows() != b.logits_.rows() || a.logits_.cols() != b.logits_.cols()) return false;
  // Bitwise comparison so that -0.0 and 0.0 are distinguished.
  return std::memcmp(a.logits_.data(), b.logits_.data(),
                     sizeof(float) * static_cast<std::size_t>(a.logits_.size())) == 0;
}

LogitDataset load_logits(const std::filesystem::path& path, FileFormat format) {
  const std::string bytes = read_file(path);
  return format == FileFormat::csv ? parse_csv(bytes, path) : parse_binary(bytes, path);
}

void save_logits(const LogitDataset& dataset, const std::filesystem::path& path,
                 FileFormat format) {
  write_file(path, format == FileFormat::csv ? format_csv(dataset) : format_binary(dataset));
}

std::pair<LogitDataset, LogitDataset> split(const LogitDataset& dataset, double holdout_fraction,
                                            std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("holdout fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.size();
  // Relative nudge so that e.g. 100 * 0.29 lands on 29 rather than 28.999...
  const auto holdout = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * holdout_fraction * (1.0 + 1e-12)));
  const std::size_t keep = n - holdout;
  if (holdout == 0 || keep == 0) {
    throw ValidationError("split of " + std::to_string(n) + " samples with fraction " +
                          std::to_string(holdout_fraction) + " leaves an empty part");
  }
  Rng rng(mix_seed(seed, {0x5B117}));
  const auto perm = rng.permutation(n);
  const std::span<const std::size_t> all(perm);
  return {dataset.subset(all.first(keep)), dataset.subset(all.subspan(keep))};
}

FoldPlan make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("fold count k must be at least 2");
  if (static_cast<std::size_t>(k) > n) {
    throw ValidationError("fold count k=" + std::to_string(k) + " exceeds sample count " +
                          std::to_string(n));
  }
  Rng rng(mix_seed(seed, {0xF01D}));
  const auto perm = rng.permutation(n);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) plan.assignments[perm[i]] = static_cast<int>(i % k);
  return plan;
}

std::vector<std::size_t> FoldPlan::validation_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::training_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] != fold) out.push_back(i);
  }
  return out;
}

}  // namespace glcal

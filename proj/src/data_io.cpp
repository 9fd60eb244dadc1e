// SPDX-License-Identifier: Apache-2.0
#include "lrdm/data_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lrdm/config.hpp"
#include "lrdm/rng.hpp"

namespace lrdm {

int Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < points.data.size(); ++i) {
    if (!std::isfinite(points.data[i])) {
      throw std::invalid_argument("dataset: non-finite value at row " + std::to_string(i / points.cols + 1));
    }
  }
  if (!labels.empty()) {
    if (labels.size() != points.rows) {
      throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(points.rows) + " points");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0) throw std::invalid_argument("dataset: negative label at row " + std::to_string(i + 1));
    }
  }
}

Matrix mixture_centers(int modes, double radius) {
  if (modes < 1) throw std::invalid_argument("mixture: modes must be >= 1");
  Matrix c(static_cast<std::size_t>(modes), 2);
  for (int k = 0; k < modes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / modes;
    c(k, 0) = radius * std::cos(a);
    c(k, 1) = radius * std::sin(a);
  }
  return c;
}

Dataset make_mixture(const MixtureSpec& spec, Split split) {
  const Matrix centers = mixture_centers(spec.modes, spec.radius);
  Rng rng(spec.seed);
  Dataset d;
  d.points = Matrix(spec.n, 2);
  if (spec.labeled) d.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int k = rng.uniform_int(0, spec.modes - 1);
    d.points(i, 0) = centers(k, 0) + spec.std * rng.normal();
    d.points(i, 1) = centers(k, 1) + spec.std * rng.normal();
    if (spec.labeled) d.labels[i] = k;
  }
  d.split = split;
  d.provenance = fmt::format("mixture(n={},modes={},radius={},std={},seed={},labeled={})", spec.n,
                             spec.modes, spec.radius, spec.std, spec.seed, spec.labeled);
  return d;
}

// ---------------------------------------------------------------------- CSV

CsvError::CsvError(std::size_t row, const std::string& what)
    : std::runtime_error("csv row " + std::to_string(row) + ": " + what), row_(row) {}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, bool has_labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  Dataset d;
  d.provenance = "csv:" + path.string();
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    std::vector<double> parsed(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size() && numeric; ++c) numeric = parse_double(cells[c], parsed[c]);
    if (!numeric) {
      // A non-numeric first line is a header.
      if (rows == 0 && cols == 0 && row == 1) continue;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!parse_double(cells[c], parsed[c])) {
          throw CsvError(row, "non-numeric cell " + std::to_string(c + 1) + " '" +
                                  std::string(trim(cells[c])) + "'");
        }
      }
    }
    if (cols == 0) {
      cols = cells.size();
      if (has_labels && cols < 2) throw CsvError(row, "labeled rows need at least two columns");
    } else if (cells.size() != cols) {
      throw CsvError(row, "expected " + std::to_string(cols) + " columns, found " +
                              std::to_string(cells.size()));
    }
    const std::size_t dim = has_labels ? cols - 1 : cols;
    values.insert(values.end(), parsed.begin(), parsed.begin() + static_cast<std::ptrdiff_t>(dim));
    if (has_labels) {
      const double l = parsed.back();
      if (l < 0 || l != std::floor(l)) throw CsvError(row, "label must be a nonnegative integer");
      d.labels.push_back(static_cast<int>(l));
    }
    ++rows;
  }
  const std::size_t dim = has_labels ? (cols ? cols - 1 : 0) : cols;
  d.points = Matrix(rows, dim, std::move(values));
  d.validate();
  return d;
}

void write_matrix_csv(std::ostream& os, const Matrix& m, const std::string& header) {
  if (!header.empty()) os << header << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << fmt::format("{}", m(r, c));
    os << '\n';
  }
}

void save_csv_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset '" + path.string() + "'");
  for (std::size_t r = 0; r < d.points.rows; ++r) {
    for (std::size_t c = 0; c < d.points.cols; ++c) out << (c ? "," : "") << fmt::format("{}", d.points(r, c));
    if (d.labeled()) out << ',' << d.labels[r];
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// --------------------------------------------------------------- checkpoints

namespace {

constexpr std::string_view kMagic = "LRDM1\n";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_blob(std::string& out, std::span<const double> values) {
  put_u64(out, values.size());
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class BlobReader {
 public:
  BlobReader(std::string_view data) : data_(data) {}

  void read(std::span<double> dst, const std::string& what) {
    if (data_.size() - pos_ < 8) throw CheckpointTruncatedError("checkpoint truncated before blob '" + what + "'");
    const std::uint64_t n = get_u64(data_.data() + pos_);
    pos_ += 8;
    const std::size_t remaining = data_.size() - pos_;
    if (n > remaining / 8) {
      throw CheckpointTruncatedError(fmt::format("checkpoint blob '{}' declares {} values but only {} bytes remain",
                                                 what, n, remaining));
    }
    if (n != dst.size()) {
      throw CheckpointShapeError(fmt::format("checkpoint blob '{}' has {} values, model expects {}", what, n,
                                             dst.size()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::bit_cast<double>(get_u64(data_.data() + pos_));
      pos_ += 8;
    }
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

Json header_for(const ModelBundle& b, const std::string& extra_json) {
  Json params = Json::array();
  for (const auto& p : b.all_params()) params.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
  const AdamConfig& ac = b.state.adam.config();
  Json extra = Json::parse(extra_json);
  if (!extra.is_object()) throw std::invalid_argument("checkpoint extra must be a JSON object");
  return Json{
      {"version", kCheckpointVersion},
      {"model", to_json(b.config)},
      {"schedule", to_json(b.schedule_config)},
      {"train",
       {{"step", b.state.step},
        {"first_stage_trained", b.state.first_stage_trained},
        {"first_stage_scale", b.first_stage.scale()},
        {"adam", {{"steps", b.state.adam.steps_taken()}, {"lr", ac.lr}, {"beta1", ac.beta1},
                  {"beta2", ac.beta2}, {"eps", ac.eps}}},
        {"ema", {{"decay", b.state.ema.decay}, {"warmup", b.state.ema.warmup},
                 {"updates", b.state.ema.num_updates}}},
        {"rng_state", b.state.rng_state}}},
      {"params", params},
      {"extra", extra},
  };
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct SplitCheckpoint {
  Json header;
  std::string_view blobs;
};

SplitCheckpoint split_checkpoint(const std::string& raw, const std::filesystem::path& path) {
  if (raw.compare(0, kMagic.size(), kMagic) != 0) {
    if (raw.compare(0, 4, "LRDM") == 0) {
      throw CheckpointVersionError("checkpoint '" + path.string() + "' has format tag '" +
                                   raw.substr(0, raw.find('\n')) + "', expected LRDM1");
    }
    throw CheckpointFormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::size_t hdr_end = raw.find('\n', kMagic.size());
  if (hdr_end == std::string::npos || hdr_end + 1 >= raw.size() || raw[hdr_end + 1] != '\n') {
    throw CheckpointTruncatedError("checkpoint '" + path.string() + "' header is incomplete");
  }
  SplitCheckpoint out;
  try {
    out.header = Json::parse(raw.substr(kMagic.size(), hdr_end - kMagic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError("checkpoint header: " + std::string(e.what()));
  }
  out.blobs = std::string_view(raw).substr(hdr_end + 2);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& b, const std::string& extra_json) {
  std::string out(kMagic);
  out += header_for(b, extra_json).dump();
  out += "\n\n";
  for (const auto& p : b.all_params()) put_blob(out, p.tensor->values());
  for (const auto& s : b.state.ema.shadow) put_blob(out, s);
  for (const auto& m : b.state.adam.moments()) {
    put_blob(out, m.m);
    put_blob(out, m.v);
  }
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  const SplitCheckpoint cp = split_checkpoint(raw, path);
  const Json& h = cp.header;
  try {
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError(fmt::format("checkpoint version {} (this build reads {})", version,
                                               kCheckpointVersion));
    }
    const ModelConfig mc = model_config_from_json(h.at("model"), "checkpoint.model");
    const ScheduleConfig sc = schedule_config_from_json(h.at("schedule"), "checkpoint.schedule");
    const Json& tr = h.at("train");
    const Json& ema = tr.at("ema");
    ModelBundle b = ModelBundle::create(mc, sc, 0, ema.at("decay").get<double>(), ema.at("warmup").get<bool>());

    const ParamList params = b.all_params();
    const Json& declared = h.at("params");
    if (declared.size() != params.size()) {
      throw CheckpointShapeError(fmt::format("checkpoint lists {} parameters, config builds {}",
                                             declared.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = declared[i].at("name").get<std::string>();
      const auto shape = declared[i].at("shape").get<Shape>();
      if (name != params[i].name || shape != params[i].tensor->shape()) {
        throw CheckpointShapeError("checkpoint parameter '" + name + "' " + shape_str(shape) +
                                   " does not match model parameter '" + params[i].name + "' " +
                                   shape_str(params[i].tensor->shape()));
      }
    }

    BlobReader r(cp.blobs);
    for (const auto& p : params) r.read(p.tensor->values(), p.name);
    for (std::size_t i = 0; i < b.state.ema.shadow.size(); ++i) {
      r.read(b.state.ema.shadow[i], "ema." + b.state.ema.names[i]);
    }
    const ParamList trainable = b.trainable();
    auto& moments = b.state.adam.moments();
    for (std::size_t i = 0; i < moments.size(); ++i) {
      r.read(moments[i].m, "adam.m." + trainable[i].name);
      r.read(moments[i].v, "adam.v." + trainable[i].name);
    }
    if (!r.done()) throw CheckpointFormatError("checkpoint has trailing bytes after the last blob");

    b.state.step = tr.at("step").get<std::int64_t>();
    b.state.first_stage_trained = tr.at("first_stage_trained").get<bool>();
    b.first_stage.set_scale(tr.at("first_stage_scale").get<double>());
    const Json& adam = tr.at("adam");
    b.state.adam.set_config({adam.at("lr").get<double>(), adam.at("beta1").get<double>(),
                             adam.at("beta2").get<double>(), adam.at("eps").get<double>()});
    b.state.adam.set_steps_taken(adam.at("steps").get<std::int64_t>());
    b.state.ema.num_updates = ema.at("updates").get<std::int64_t>();
    b.state.rng_state = tr.at("rng_state").get<std::string>();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError("checkpoint header: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw CheckpointFormatError(std::string("checkpoint header: ") + e.what());
  }
}

std::string checkpoint_extra(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  const SplitCheckpoint cp = split_checkpoint(raw, path);
  if (!cp.header.contains("extra")) return "{}";
  return cp.header.at("extra").dump();
}

}  // namespace lrdm

#include "viewset/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "viewset/config_io.hpp"

namespace viewset::io {

namespace {

constexpr char kFeatureMagic[4] = {'V', 'S', 'F', '1'};
constexpr char kCheckpointMagic[4] = {'V', 'S', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

/// Bounds-checked little-endian reader.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(source_ + ": " + msg + " (at byte " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(std::string("truncated while reading ") + what + ": need " + std::to_string(n) +
           " bytes, " + std::to_string(remaining()) + " left");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(trim(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start)));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::size_t parse_index(const std::string& s, const std::string& where, const char* field) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw FormatError(where + ": field '" + field + "' is not a non-negative integer: '" + s + "'");
  }
  return std::stoull(s);
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureTable& t) {
  if (t.values.size() != static_cast<std::size_t>(t.rows) * t.dim) {
    throw FormatError("feature table holds " + std::to_string(t.values.size()) +
                      " values for shape " + shape_str(t.rows, t.dim));
  }
  std::vector<std::uint8_t> out;
  out.reserve(kFeatureHeaderBytes + 4 * t.values.size());
  out.insert(out.end(), std::begin(kFeatureMagic), std::end(kFeatureMagic));
  put_u32(out, t.rows);
  put_u32(out, t.dim);
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureTable decode_features(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(4, "magic") != std::string(kFeatureMagic, 4)) {
    throw FormatError(source + ": bad magic, expected \"VSF1\"");
  }
  FeatureTable t;
  t.rows = r.u32("num_rows");
  t.dim = r.u32("dim");
  const std::uint64_t expected = kFeatureHeaderBytes + 4ULL * t.rows * t.dim;
  if (bytes.size() != expected) {
    throw FormatError(source + ": size mismatch: header " + shape_str(t.rows, t.dim) +
                      " implies " + std::to_string(expected) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  t.values.resize(static_cast<std::size_t>(t.rows) * t.dim);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const float v = std::bit_cast<float>(r.u32("payload"));
    if (!std::isfinite(v)) {
      throw FormatError(source + ": non-finite value at row " + std::to_string(i / t.dim) +
                        ", column " + std::to_string(i % t.dim));
    }
    t.values[i] = v;
  }
  return t;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void write_features(const std::filesystem::path& path, const FeatureTable& t) {
  write_file(path, encode_features(t));
}

FeatureTable read_features(const std::filesystem::path& path) {
  return decode_features(read_file(path), path.string());
}

bool Manifest::has_subcategories() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.subcategory.has_value(); });
}

Manifest parse_manifest(std::istream& in, const std::string& source) {
  Manifest m;
  bool have_dim = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;  // column legend or free comment
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key == "dataset") {
        m.dataset = value;
      } else if (key == "dim") {
        m.dim = parse_index(value, where, "dim");
        have_dim = true;
      } else if (key == "view_size") {
        m.view_size = value;
      }
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 7) {
      throw FormatError(where + ": expected 7 tab-separated fields, found " + std::to_string(f.size()));
    }
    ManifestEntry e;
    e.shape_id = f[0];
    if (e.shape_id.empty() || e.shape_id.find_first_of(" \t") != std::string::npos) {
      throw FormatError(where + ": shape_id must be nonempty and contain no whitespace");
    }
    e.label_name = f[1];
    e.label = parse_index(f[2], where, "label");
    if (f[3] != "-" && !f[3].empty()) e.subcategory = parse_index(f[3], where, "subcategory");
    try {
      e.split = parse_split(f[4]);
    } catch (const std::invalid_argument& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    e.row_start = parse_index(f[5], where, "row_start");
    e.row_count = parse_index(f[6], where, "row_count");
    m.entries.push_back(std::move(e));
  }
  if (!have_dim) throw FormatError(source + ": missing '# dim=' header");
  return m;
}

void write_manifest(std::ostream& out, const Manifest& m) {
  out << "# dataset=" << m.dataset << '\n';
  out << "# dim=" << m.dim << '\n';
  if (!m.view_size.empty()) out << "# view_size=" << m.view_size << '\n';
  out << "#shape_id\tlabel_name\tlabel\tsubcategory\tsplit\trow_start\trow_count\n";
  for (const auto& e : m.entries) {
    out << e.shape_id << '\t' << e.label_name << '\t' << e.label << '\t';
    if (e.subcategory) {
      out << *e.subcategory;
    } else {
      out << '-';
    }
    out << '\t' << to_string(e.split) << '\t' << e.row_start << '\t' << e.row_count << '\n';
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return parse_manifest(in, path.string());
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_manifest(out, m);
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void validate_manifest(const Manifest& m, std::uint32_t num_rows, const std::string& source) {
  std::set<std::string> ids;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // (start, entry index)
  std::map<std::size_t, std::string> names;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const std::string where = source + ": shape '" + e.shape_id + "'";
    if (!ids.insert(e.shape_id).second) throw FormatError(where + " listed twice");
    if (e.row_count == 0) throw FormatError(where + " has row_count 0");
    if (e.row_start + e.row_count > num_rows) {
      throw FormatError(where + " rows [" + std::to_string(e.row_start) + ", " +
                        std::to_string(e.row_start + e.row_count) + ") exceed the " +
                        std::to_string(num_rows) + " rows of the feature file");
    }
    auto [it, inserted] = names.emplace(e.label, e.label_name);
    if (!inserted && it->second != e.label_name) {
      throw FormatError(where + ": label " + std::to_string(e.label) + " named '" +
                        e.label_name + "', earlier '" + it->second + "'");
    }
    ranges.emplace_back(e.row_start, i);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t k = 1; k < ranges.size(); ++k) {
    const auto& prev = m.entries[ranges[k - 1].second];
    const auto& cur = m.entries[ranges[k].second];
    if (prev.row_start + prev.row_count > cur.row_start) {
      throw FormatError(source + ": row ranges of '" + prev.shape_id + "' and '" + cur.shape_id +
                        "' overlap");
    }
  }
}

Dataset load_dataset(const std::filesystem::path& feature_path,
                     const std::filesystem::path& manifest_path) {
  const FeatureTable table = read_features(feature_path);
  const Manifest man = read_manifest(manifest_path);
  if (man.dim != table.dim) {
    throw FormatError(manifest_path.string() + ": manifest dim " + std::to_string(man.dim) +
                      " differs from feature file dim " + std::to_string(table.dim));
  }
  validate_manifest(man, table.rows, manifest_path.string());

  Dataset d;
  d.name = man.dataset;
  d.dim = table.dim;
  std::size_t num_labels = 0;
  for (const auto& e : man.entries) num_labels = std::max(num_labels, e.label + 1);
  d.label_names.assign(num_labels, "");
  for (const auto& e : man.entries) {
    d.label_names[e.label] = e.label_name;
    ViewFeatureSet s;
    s.shape_id = e.shape_id;
    s.label = e.label;
    s.sublabel = e.subcategory;
    s.features = Matrix(e.row_count, table.dim);
    for (std::size_t r = 0; r < e.row_count; ++r)
      for (std::size_t c = 0; c < table.dim; ++c)
        s.features(r, c) = static_cast<double>(table.at(e.row_start + r, c));
    d.split(e.split).push_back(std::move(s));
  }
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& feature_path,
                  const std::filesystem::path& manifest_path) {
  FeatureTable table;
  table.dim = static_cast<std::uint32_t>(d.dim);
  Manifest man;
  man.dataset = d.name;
  man.dim = d.dim;
  std::size_t row = 0;
  for (Split sp : {Split::Train, Split::Val, Split::Test}) {
    for (const auto& s : d.split(sp)) {
      if (s.features.cols() != d.dim) {
        throw FormatError("shape '" + s.shape_id + "' has width " +
                          std::to_string(s.features.cols()) + ", dataset dim is " +
                          std::to_string(d.dim));
      }
      ManifestEntry e;
      e.shape_id = s.shape_id;
      e.label = s.label;
      e.label_name = s.label < d.label_names.size() ? d.label_names[s.label] : std::to_string(s.label);
      e.subcategory = s.sublabel;
      e.split = sp;
      e.row_start = row;
      e.row_count = s.num_views();
      for (double v : s.features.data()) table.values.push_back(static_cast<float>(v));
      row += s.num_views();
      man.entries.push_back(std::move(e));
    }
  }
  table.rows = static_cast<std::uint32_t>(row);
  write_features(feature_path, table);
  write_manifest(manifest_path, man);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  const std::string cfg = format_model_config(c.config);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw FormatError(source + ": bad magic, expected \"VSC1\"");
  }
  Checkpoint c;
  const std::uint32_t cfg_len = r.u32("config length");
  try {
    c.config = parse_model_config(r.str(cfg_len, "config"), source);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32("name length"), "tensor name");
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining()) {
      r.fail("tensor '" + name + "' " + shape_str(rows, cols) + " exceeds remaining bytes");
    }
    Matrix m(rows, cols);
    for (double& v : m.data()) v = std::bit_cast<double>(r.u64("payload"));
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file(path, encode_checkpoint(c));
}

void save_checkpoint(const std::filesystem::path& path, ViewSetModel& model) {
  save_checkpoint(path, Checkpoint{model.config(), capture_state(model)});
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

ViewSetModel load_model(const std::filesystem::path& path) {
  Checkpoint c = read_checkpoint(path);
  ViewSetModel model(c.config, 0);
  try {
    restore_state(model, c.tensors);
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return model;
}

}  // namespace viewset::io

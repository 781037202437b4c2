#include "pep/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace pep::io {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string line; std::getline(ss, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_int(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (std::isfinite(v) && s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % 16 != 0) {
    throw Error(path.string() + ": length " + std::to_string(bytes.size()) +
                " is not a multiple of 16 (truncated KITTI scan?)");
  }
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  AttributeSchema schema({AttrDesc::continuous("x", "m"), AttrDesc::continuous("y", "m"),
                          AttrDesc::continuous("z", "m"), AttrDesc::continuous("intensity")});
  return PointCloud(std::move(schema), std::move(values));
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  const auto& s = cloud.schema();
  const std::size_t cols[4] = {s.index_of("x"), s.index_of("y"), s.index_of("z"), s.index_of("intensity")};
  std::string bytes;
  bytes.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t c : cols) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(cloud.at(i, c)));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  write_file(path, bytes);
}

Calibration parse_kitti_calib(const std::string& text) {
  struct Entry {
    std::vector<double> values;
    int line = 0;
  };
  std::map<std::string, Entry> entries;
  const auto lines = lines_of(text);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const auto& line = lines[li];
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      if (split_ws(line).empty()) continue;
      throw Error("calib line " + std::to_string(li + 1) + ": expected 'KEY: values'");
    }
    const std::string key = line.substr(0, colon);
    Entry e;
    e.line = static_cast<int>(li + 1);
    std::size_t pos = colon + 1;
    while (pos < line.size()) {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
      const std::string tok = line.substr(pos, end - pos);
      double v = 0.0;
      if (!parse_double(tok, v)) {
        throw Error("calib key '" + key + "' line " + std::to_string(li + 1) + " column " + std::to_string(pos + 1) +
                    ": cannot parse number '" + tok + "'");
      }
      e.values.push_back(v);
      pos = end;
    }
    entries[key] = std::move(e);
  }
  auto take = [&](const std::string& key, std::size_t count) -> const std::vector<double>& {
    auto it = entries.find(key);
    if (it == entries.end()) throw Error("calib: missing key '" + key + "'");
    if (it->second.values.size() != count) {
      throw Error("calib key '" + key + "' (line " + std::to_string(it->second.line) + "): expected " +
                  std::to_string(count) + " values, found " + std::to_string(it->second.values.size()));
    }
    return it->second.values;
  };
  Calibration c;
  const auto& p = take("P2", 12);
  for (int i = 0; i < 12; ++i) c.P(i / 4, i % 4) = p[static_cast<std::size_t>(i)];
  const auto& r = take("R0_rect", 9);
  c.R_rect = Mat4::Identity();
  for (int i = 0; i < 9; ++i) c.R_rect(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
  const auto& t = take("Tr_velo_to_cam", 12);
  c.T_velo_cam = Mat4::Identity();
  for (int i = 0; i < 12; ++i) c.T_velo_cam(i / 4, i % 4) = t[static_cast<std::size_t>(i)];
  c.image_w = 1242;
  c.image_h = 375;
  if (entries.count("image_size")) {
    const auto& sz = take("image_size", 2);
    if (sz[0] != std::floor(sz[0]) || sz[1] != std::floor(sz[1])) throw Error("calib key 'image_size': expected integers");
    c.image_w = static_cast<int>(sz[0]);
    c.image_h = static_cast<int>(sz[1]);
  }
  c.validate();
  return c;
}

Calibration read_kitti_calib(const std::filesystem::path& path) { return parse_kitti_calib(read_file(path)); }

std::string format_kitti_calib(const Calibration& c) {
  std::string s = "P2:";
  for (int i = 0; i < 12; ++i) s += " " + format_real(c.P(i / 4, i % 4));
  s += "\nR0_rect:";
  for (int i = 0; i < 9; ++i) s += " " + format_real(c.R_rect(i / 3, i % 3));
  s += "\nTr_velo_to_cam:";
  for (int i = 0; i < 12; ++i) s += " " + format_real(c.T_velo_cam(i / 4, i % 4));
  s += "\nimage_size: " + std::to_string(c.image_w) + " " + std::to_string(c.image_h) + "\n";
  return s;
}

void write_kitti_calib(const std::filesystem::path& path, const Calibration& calib) {
  write_file(path, format_kitti_calib(calib));
}

PointCloud parse_cloud_text(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw Error("cloud text: missing header");
  const auto header = split_ws(lines[0]);
  if (header.empty()) throw Error("cloud text: empty header");
  std::vector<AttrDesc> attrs;
  std::optional<std::size_t> gt_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& tok = header[i];
    const auto colon = tok.rfind(':');
    if (colon == std::string::npos || colon == 0) throw Error("cloud header token '" + tok + "' lacks a name:kind form");
    const std::string name = tok.substr(0, colon);
    const std::string kind = tok.substr(colon + 1);
    if (kind == "f") {
      attrs.push_back(AttrDesc::continuous(name));
    } else if (kind == "l") {
      if (gt_col) throw Error("cloud header has more than one label column");
      gt_col = i;
    } else if (kind.size() > 1 && kind[0] == 'c') {
      long long card = 0;
      if (!parse_int(kind.substr(1), card) || card < 1) throw Error("cloud header token '" + tok + "': bad cardinality");
      attrs.push_back(AttrDesc::categorical(name, static_cast<int>(card)));
    } else {
      throw Error("cloud header token '" + tok + "': unknown kind suffix '" + kind + "'");
    }
  }
  std::vector<double> values;
  std::vector<int> gt;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto toks = split_ws(lines[li]);
    if (toks.empty()) continue;
    if (toks.size() != header.size()) {
      throw Error("cloud line " + std::to_string(li + 1) + ": " + std::to_string(toks.size()) + " fields, header has " +
                  std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (gt_col && i == *gt_col) {
        long long v = 0;
        if (!parse_int(toks[i], v)) throw Error("cloud line " + std::to_string(li + 1) + ": bad label '" + toks[i] + "'");
        gt.push_back(static_cast<int>(v));
        continue;
      }
      double v = 0.0;
      if (!parse_double(toks[i], v)) throw Error("cloud line " + std::to_string(li + 1) + ": bad number '" + toks[i] + "'");
      values.push_back(v);
    }
  }
  std::optional<std::vector<int>> labels;
  if (gt_col) labels = std::move(gt);
  return PointCloud(AttributeSchema(std::move(attrs)), std::move(values), std::move(labels));
}

std::string format_cloud_text(const PointCloud& cloud) {
  std::string s;
  const auto& schema = cloud.schema();
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (a) s += ' ';
    s += schema[a].name;
    s += schema[a].is_categorical() ? ":c" + std::to_string(schema[a].cardinality) : ":f";
  }
  const bool has_gt = cloud.gt_labels().has_value();
  if (has_gt) s += schema.size() ? " gt:l" : "gt:l";
  s += '\n';
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t a = 0; a < schema.size(); ++a) {
      if (a) s += ' ';
      const double v = cloud.at(i, a);
      s += schema[a].is_categorical() ? std::to_string(static_cast<long long>(v)) : format_real(v);
    }
    if (has_gt) s += ' ' + std::to_string((*cloud.gt_labels())[i]);
    s += '\n';
  }
  return s;
}

PointCloud read_cloud(const std::filesystem::path& path) { return parse_cloud_text(read_file(path)); }
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) { write_file(path, format_cloud_text(cloud)); }

LabeledMask parse_mask_text(const std::string& text) {
  std::istringstream ss(text);
  std::string tag;
  long long w = 0, h = 0;
  if (!(ss >> tag >> w >> h) || tag != "mask" || w <= 0 || h <= 0) throw Error("mask text: expected header 'mask W H'");
  LabeledMask m(static_cast<int>(w), static_cast<int>(h));
  for (auto* arr : {&m.semantic, &m.instance}) {
    for (auto& v : *arr) {
      std::string tok;
      long long x = 0;
      if (!(ss >> tok)) throw Error("mask text: fewer than 2*W*H values");
      if (!parse_int(tok, x)) throw Error("mask text: bad value '" + tok + "'");
      v = static_cast<int>(x);
    }
  }
  if (std::string extra; ss >> extra) throw Error("mask text: trailing values");
  m.validate();
  return m;
}

std::string format_mask_text(const LabeledMask& m) {
  std::string s = "mask " + std::to_string(m.width) + " " + std::to_string(m.height) + "\n";
  for (const auto* arr : {&m.semantic, &m.instance}) {
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        if (x) s += ' ';
        s += std::to_string((*arr)[m.index(x, y)]);
      }
      s += '\n';
    }
  }
  return s;
}

LabeledMask read_mask(const std::filesystem::path& path) { return parse_mask_text(read_file(path)); }
void write_mask(const std::filesystem::path& path, const LabeledMask& mask) { write_file(path, format_mask_text(mask)); }

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::vector<int> out;
  const auto lines = lines_of(read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto toks = split_ws(lines[i]);
    if (toks.empty()) continue;
    long long v = 0;
    if (toks.size() != 1 || !parse_int(toks[0], v)) {
      throw Error(path.string() + " line " + std::to_string(i + 1) + ": expected one integer label");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::string s;
  for (int v : labels) s += std::to_string(v) + "\n";
  write_file(path, s);
}

}  // namespace pep::io

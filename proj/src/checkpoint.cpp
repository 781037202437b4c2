#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pep/encoder.hpp"

namespace pep {
namespace {

constexpr char kMagic[4] = {'P', 'E', 'P', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw Error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  const auto& c = model.config;
  for (int v : {c.d, c.heads, c.num_classes, c.head_hidden, c.knn_k}) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(model.schema.size()));
  for (const auto& a : model.schema.attrs()) {
    w.str(a.name);
    w.u8(a.is_categorical() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(a.cardinality));
  }
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& t = model.params.tensor(i);
    w.str(model.params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) w.u64(d);
    for (double x : t.data()) w.f64(x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(path.string() + " is not a PEPK checkpoint");
  if (const auto v = r.u32(); v != kVersion) throw Error("unsupported checkpoint version " + std::to_string(v));
  EncoderConfig c;
  c.d = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.num_classes = static_cast<int>(r.u32());
  c.head_hidden = static_cast<int>(r.u32());
  c.knn_k = static_cast<int>(r.u32());
  c.validate();
  std::vector<AttrDesc> attrs(r.u32());
  for (auto& a : attrs) {
    a.name = r.str();
    a.kind = r.u8() ? AttrKind::Categorical : AttrKind::Continuous;
    a.cardinality = static_cast<int>(r.u32());
  }
  AttributeSchema schema(std::move(attrs));
  // The expected layout comes from the schema; every stored tensor must match it.
  EncoderParams expected = init_params(schema, c, 0);
  EncoderParams params;
  const std::uint32_t count = r.u32();
  if (count != expected.size()) throw Error("checkpoint tensor count does not match its schema");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    grad::Shape dims(r.u32());
    if (dims.size() > 3) throw Error("checkpoint tensor '" + name + "' has rank above 3");
    for (auto& d : dims) d = r.u64();
    if (name != expected.name(i) || dims != expected.tensor(i).dims()) {
      throw Error("checkpoint tensor '" + name + "' does not match the expected layout");
    }
    std::vector<double> data(grad::numel(dims));
    for (auto& x : data) x = r.f64();
    params.add(std::move(name), grad::Tensor(std::move(dims), std::move(data)));
  }
  if (!r.done()) throw Error("trailing bytes after checkpoint payload");
  return Model{std::move(schema), c, std::move(params)};
}

}  // namespace pep

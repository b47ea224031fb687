// Versioned binary container for a model + trace: magic, version, payload
// length, payload (shape table and raw little-endian doubles), FNV-1a
// checksum.
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fuselab/error.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/train.hpp"

namespace fuselab::train {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void str(const std::string& s) {
    u64(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t len) : p_(data), end_(data + len) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    std::vector<double> v(check_count(n, 8));
    for (auto& x : v) x = f64();
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    const char* p = take(check_count(n, 1));
    return std::string(p, n);
  }
  bool done() const { return p_ == end_; }

 private:
  std::size_t check_count(std::uint64_t n, std::size_t unit) const {
    if (n > static_cast<std::uint64_t>(end_ - p_) / unit)
      throw Error::integrity("checkpoint: truncated payload");
    return static_cast<std::size_t>(n);
  }
  const char* take(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n)
      throw Error::integrity("checkpoint: truncated payload");
    const char* p = p_;
    p_ += n;
    return p;
  }
  const char* p_;
  const char* end_;
};

void write_mlp(Writer& w, const Mlp& mlp) {
  w.u64(mlp.layers.size());
  for (const auto& l : mlp.layers) {
    w.u8(static_cast<std::uint8_t>(l.act));
    w.u64(l.weight.rows);
    w.u64(l.weight.cols);
    for (double v : l.weight.data) w.f64(v);
    w.f64s(l.bias);
  }
}

Mlp read_mlp(Reader& r) {
  Mlp mlp;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    DenseLayer l;
    const auto act = r.u8();
    if (act > static_cast<std::uint8_t>(Activation::softmax_logits))
      throw Error::integrity("checkpoint: bad activation tag");
    l.act = static_cast<Activation>(act);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    l.weight = Matrix(rows, cols);
    for (double& v : l.weight.data) v = r.f64();
    l.bias = r.f64s();
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

void write_trace(Writer& w, const TrainTrace& t) {
  w.u64(t.layer_names.size());
  for (const auto& s : t.layer_names) w.str(s);
  w.u64(t.epochs.size());
  for (const auto& e : t.epochs) {
    w.u64(e.epoch);
    w.f64(e.l_sem);
    w.f64(e.l_md);
    w.f64s(e.probe_loss);
    w.u64(e.grad_rank.size());
    for (auto v : e.grad_rank) w.u64(v);
  }
  w.u64(t.reps.size());
  for (const auto& rrec : t.reps) {
    w.u64(rrec.epoch);
    w.u64(rrec.fused_rank);
    w.f64s(rrec.cka);
  }
  w.u64(t.final_agop_rank.size());
  for (auto v : t.final_agop_rank) w.u64(v);
  w.f64s(t.kd_align_cosine);
}

TrainTrace read_trace(Reader& r) {
  TrainTrace t;
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) t.layer_names.push_back(r.str());
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    EpochRecord e;
    e.epoch = r.u64();
    e.l_sem = r.f64();
    e.l_md = r.f64();
    e.probe_loss = r.f64s();
    for (std::uint64_t j = 0, k = r.u64(); j < k; ++j) e.grad_rank.push_back(r.u64());
    t.epochs.push_back(std::move(e));
  }
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i) {
    RepRecord rec;
    rec.epoch = r.u64();
    rec.fused_rank = r.u64();
    rec.cka = r.f64s();
    t.reps.push_back(std::move(rec));
  }
  for (std::uint64_t i = 0, n = r.u64(); i < n; ++i)
    t.final_agop_rank.push_back(r.u64());
  t.kd_align_cosine = r.f64s();
  return t;
}

}  // namespace

void checkpoint(const FusionModel& model, const TrainTrace& trace,
                const std::string& path) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(model.kind));
  w.u64(model.num_modalities());
  for (const auto& e : model.encoders) write_mlp(w, e);
  write_mlp(w, model.fusion);
  write_mlp(w, model.classifier);
  w.u8(model.ebr ? 1 : 0);
  if (model.ebr) {
    w.u64(model.ebr->latent_dim);
    for (const auto& h : model.ebr->h) write_mlp(w, h);
    for (const auto& h : model.ebr->h_inv) write_mlp(w, h);
    write_mlp(w, model.ebr->psi);
  }
  write_trace(w, trace);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error::input("checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  Writer head;
  head.u32(kVersion);
  head.u64(w.bytes().size());
  out.write(head.bytes().data(), static_cast<std::streamsize>(head.bytes().size()));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  Writer tail;
  tail.u64(fnv1a64(w.bytes().data(), w.bytes().size()));
  out.write(tail.bytes().data(), static_cast<std::streamsize>(tail.bytes().size()));
  if (!out) throw Error::input("checkpoint: write failed for " + path);
}

Restored restore(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::input("restore: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 8 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error::integrity("restore: " + path + " is not a checkpoint");

  Reader head(bytes.data() + 4, 12);
  const std::uint32_t version = head.u32();
  if (version != kVersion)
    throw Error::version("restore: checkpoint version " + std::to_string(version) +
                         ", expected " + std::to_string(kVersion));
  const std::uint64_t payload_len = head.u64();
  if (bytes.size() != 4 + 12 + payload_len + 8)
    throw Error::integrity("restore: checkpoint size mismatch (truncated?)");
  const char* payload = bytes.data() + 16;
  Reader tail(payload + payload_len, 8);
  if (tail.u64() != fnv1a64(payload, payload_len))
    throw Error::integrity("restore: checksum mismatch");

  Reader r(payload, payload_len);
  Restored res;
  const auto kind = r.u8();
  if (kind > static_cast<std::uint8_t>(FusionKind::mean_pool_mlp))
    throw Error::integrity("restore: bad fusion kind");
  res.model.kind = static_cast<FusionKind>(kind);
  const std::uint64_t m = r.u64();
  for (std::uint64_t i = 0; i < m; ++i) res.model.encoders.push_back(read_mlp(r));
  res.model.fusion = read_mlp(r);
  res.model.classifier = read_mlp(r);
  if (r.u8()) {
    EbrAttachment ebr;
    ebr.latent_dim = r.u64();
    for (std::uint64_t i = 0; i < m; ++i) ebr.h.push_back(read_mlp(r));
    for (std::uint64_t i = 0; i < m; ++i) ebr.h_inv.push_back(read_mlp(r));
    ebr.psi = read_mlp(r);
    res.model.ebr = std::move(ebr);
  }
  res.trace = read_trace(r);
  if (!r.done()) throw Error::integrity("restore: trailing bytes in payload");
  res.model.validate();
  return res;
}

}  // namespace fuselab::train

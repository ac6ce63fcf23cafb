#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "hseg/dcn.hpp"
#include "hseg/mixconv.hpp"
#include "hseg/ops.hpp"

namespace hseg {

// ---------------------------------------------------------------------------
// Encoder specification
// ---------------------------------------------------------------------------

enum class RowOp { conv2d, dcn, mnblock };

struct SpecRow {
  RowOp op = RowOp::conv2d;
  int out_ch = 0;
  int stride = 1;
  std::vector<int> kernels{3};
  double t = 0.0;        // expansion factor (MNBlock)
  double se = 0.0;       // squeeze ratio, 0 = none (MNBlock)
};

struct EncoderSpec {
  int in_ch = 3;
  std::vector<SpecRow> rows;

  // The encoder table: stem conv, then three hybrid convolution blocks, each
  // opened by a DCN. Strides drive the resolutions (four stride-2 rows, /16).
  static EncoderSpec table1() {
    EncoderSpec s;
    s.rows = {
        {RowOp::conv2d, 16, 2, {3}, 0, 0},
        {RowOp::dcn, 16, 1, {3}, 0, 0},
        {RowOp::mnblock, 24, 2, {3}, 6, 0},
        {RowOp::mnblock, 24, 1, {3}, 3, 0},
        {RowOp::mnblock, 40, 1, {3, 5, 7}, 6, 0.5},
        {RowOp::mnblock, 40, 1, {3, 5}, 6, 0.5},
        {RowOp::dcn, 40, 1, {3}, 0, 0},
        {RowOp::mnblock, 80, 2, {3, 5, 7}, 6, 0.25},
        {RowOp::mnblock, 80, 1, {3, 5}, 6, 0.25},
        {RowOp::mnblock, 80, 1, {3, 5}, 6, 0.25},
        {RowOp::mnblock, 80, 1, {3, 5}, 6, 0.25},
        {RowOp::dcn, 80, 1, {3}, 0, 0},
        {RowOp::mnblock, 80, 2, {3, 5, 7, 9}, 6, 0.5},
        {RowOp::mnblock, 120, 1, {3, 5}, 3, 0.5},
        {RowOp::mnblock, 120, 1, {3, 5}, 3, 0.5},
    };
    return s;
  }

  // Width-divided variant for desk-scale gradient checks.
  EncoderSpec scaled(int divisor) const {
    EncoderSpec s = *this;
    for (auto& r : s.rows) r.out_ch = std::max(2, r.out_ch / divisor);
    return s;
  }

  void validate() const {
    require(in_ch >= 1, "encoder spec: input channels must be positive");
    require(!rows.empty(), "encoder spec: no rows");
    int stride2 = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const std::string where = "encoder spec row " + std::to_string(i) + ": ";
      require(r.out_ch >= 1, where + "out_ch must be positive");
      require(r.stride == 1 || r.stride == 2, where + "stride must be 1 or 2");
      require(!r.kernels.empty(), where + "kernel list empty");
      for (int k : r.kernels) require(k >= 1 && k % 2 == 1, where + "kernels must be odd");
      if (r.op == RowOp::mnblock) require(r.t >= 1.0, where + "expansion must be >= 1");
      else require(r.kernels.size() == 1, where + "conv/dcn rows take a single kernel");
      if (r.op == RowOp::dcn) require(r.stride == 1, where + "dcn rows are stride 1");
      require(r.se >= 0.0 && r.se <= 1.0, where + "se ratio out of range");
      if (r.stride == 2) ++stride2;
    }
    require(stride2 == 4, "encoder spec: expected exactly 4 stride-2 rows, found " +
                              std::to_string(stride2));
  }

  // Skip taps: after the stem, and after the row preceding every DCN except
  // the first (each hybrid convolution block begins at a DCN).
  std::vector<int> tap_indices() const {
    std::vector<int> taps{0};
    bool first_dcn_seen = false;
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].op != RowOp::dcn) continue;
      if (first_dcn_seen) taps.push_back(static_cast<int>(i) - 1);
      first_dcn_seen = true;
    }
    return taps;
  }

  int row_in_ch(size_t i) const { return i == 0 ? in_ch : rows[i - 1].out_ch; }
};

// ---------------------------------------------------------------------------
// Decoder block: 1x1 contract + BN + h_swish -> depthwise 3x3 + BN + h_swish
// -> 1x1 project + BN
// ---------------------------------------------------------------------------

template <class Real>
struct DecoderBlock {
  ConvBnAct<Real> contract, depthwise, project;
  int in_ch = 0, width = 0;

  DecoderBlock() = default;
  DecoderBlock(int in_ch_, int width_) : in_ch(in_ch_), width(width_) {
    contract = ConvBnAct<Real>(width_, in_ch_, 1, 1, 1, Act::h_swish);
    depthwise = ConvBnAct<Real>(width_, width_, 3, 1, width_, Act::h_swish);
    project = ConvBnAct<Real>(width_, width_, 1, 1, 1, Act::relu, /*with_act=*/false);
  }

  void init(Rng& rng) {
    contract.conv.w.init_he(rng);
    depthwise.conv.w.init_he(rng);
    project.conv.w.init_he(rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool train) {
    return project.forward(depthwise.forward(contract.forward(x, train), train), train);
  }
  Tensor<Real> backward(const Tensor<Real>& gy) {
    return contract.backward(depthwise.backward(project.backward(gy)));
  }

  void collect(const std::string& prefix, std::vector<ParamRef<Real>>& out) {
    contract.collect(prefix + ".contract", out);
    depthwise.collect(prefix + ".dw", out);
    project.collect(prefix + ".proj", out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<Real>>& out) {
    contract.collect_state(prefix + ".contract", out);
    depthwise.collect_state(prefix + ".dw", out);
    project.collect_state(prefix + ".proj", out);
  }
  void clear_cache() {
    contract.clear_cache();
    depthwise.clear_cache();
    project.clear_cache();
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class Real>
struct ForwardOut {
  std::vector<Tensor<Real>> stage_logits;  // 4 tensors, each (N,1,H,W)
  Tensor<Real> prob;                       // sigmoid of the final stage logits
};

struct MacsReport {
  uint64_t conv = 0;          // all convolutions (encoder, branch, decoder, heads)
  uint64_t dcn_sampling = 0;  // 4 MACs per bilinear sample per tap
  uint64_t linear = 0;        // SE fully-connected layers
  uint64_t total() const { return conv + dcn_sampling + linear; }
};

// Multiply-accumulate accounting for one image. Conv MACs are
// out_positions * out_ch * (in_ch/groups) * k^2; DCN adds its branch conv plus
// 4 MACs per bilinear sample per tap; SE linears counted; elementwise ops
// excluded.
inline MacsReport count_macs_encoder(const EncoderSpec& spec, int in_h, int in_w) {
  MacsReport rep;
  auto conv_macs = [](uint64_t oh, uint64_t ow, uint64_t oc, uint64_t ic_per_group, uint64_t k) {
    return oh * ow * oc * ic_per_group * k * k;
  };
  int h = in_h, w = in_w;
  for (size_t i = 0; i < spec.rows.size(); ++i) {
    const auto& r = spec.rows[i];
    const int in_ch = spec.row_in_ch(i);
    const int oh = h / r.stride, ow = w / r.stride;
    switch (r.op) {
      case RowOp::conv2d:
        rep.conv += conv_macs(oh, ow, r.out_ch, in_ch, r.kernels[0]);
        break;
      case RowOp::dcn: {
        const uint64_t K = static_cast<uint64_t>(r.kernels[0]) * r.kernels[0];
        rep.conv += conv_macs(oh, ow, r.out_ch, in_ch, r.kernels[0]);
        rep.conv += conv_macs(oh, ow, 3 * K, in_ch, r.kernels[0]);
        rep.dcn_sampling += 4ULL * K * in_ch * oh * ow;
        break;
      }
      case RowOp::mnblock: {
        MnBlockSpec bs;
        bs.in_ch = in_ch;
        bs.out_ch = r.out_ch;
        bs.stride = r.stride;
        bs.expansion = r.t;
        bs.kernel_sizes = r.kernels;
        bs.se_ratio = r.se;
        const int exp_ch = bs.expanded();
        rep.conv += conv_macs(h, w, exp_ch, in_ch / bs.pw_groups(in_ch, exp_ch), 1);
        const auto gch = split_channels(exp_ch, r.kernels);
        for (size_t j = 0; j < r.kernels.size(); ++j)
          rep.conv += conv_macs(oh, ow, gch[j], 1, r.kernels[j]);
        if (bs.has_se()) rep.linear += 2ULL * static_cast<uint64_t>(bs.se_width()) * exp_ch;
        rep.conv += conv_macs(oh, ow, r.out_ch, exp_ch / bs.pw_groups(exp_ch, r.out_ch), 1);
        break;
      }
    }
    h = oh;
    w = ow;
  }
  return rep;
}

inline MacsReport count_macs_model(const EncoderSpec& spec, const std::array<int, 4>& widths,
                                   int in_h, int in_w) {
  MacsReport rep = count_macs_encoder(spec, in_h, in_w);
  auto conv_macs = [](uint64_t oh, uint64_t ow, uint64_t oc, uint64_t ic_per_group, uint64_t k) {
    return oh * ow * oc * ic_per_group * k * k;
  };
  const auto taps = spec.tap_indices();
  require(taps.size() == 3, "count_macs: expected 3 skip taps");
  int stride_total = 1;
  for (const auto& r : spec.rows) stride_total *= r.stride;
  int h = in_h / stride_total, w = in_w / stride_total;
  const std::array<int, 3> tap_ch{spec.rows[taps[0]].out_ch, spec.rows[taps[1]].out_ch,
                                  spec.rows[taps[2]].out_ch};
  int cur_ch = spec.rows.back().out_ch;
  for (int i = 0; i < 4; ++i) {
    h *= 2;
    w *= 2;
    const int cat = cur_ch + (i < 3 ? tap_ch[static_cast<size_t>(2 - i)] : 0);
    const int width = widths[static_cast<size_t>(i)];
    rep.conv += conv_macs(h, w, width, cat, 1);
    rep.conv += conv_macs(h, w, width, 1, 3);
    rep.conv += conv_macs(h, w, width, width, 1);
    rep.conv += conv_macs(h, w, 1, width, 1);  // head
    cur_ch = width;
  }
  return rep;
}

template <class Real>
class Model {
 public:
  using EncLayer = std::variant<ConvBnAct<Real>, DcnLayer<Real>, MnBlock<Real>>;
  static constexpr int kDownsample = 16;

  EncoderSpec spec;
  std::array<int, 4> decoder_widths{64, 40, 24, 16};

  Model() = default;

  static Model build(const EncoderSpec& spec, uint64_t seed,
                     std::array<int, 4> widths = {64, 40, 24, 16}) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.decoder_widths = widths;
    for (size_t i = 0; i < spec.rows.size(); ++i) {
      const auto& r = spec.rows[i];
      const int in_ch = spec.row_in_ch(i);
      switch (r.op) {
        case RowOp::conv2d:
          m.enc_.emplace_back(ConvBnAct<Real>(r.out_ch, in_ch, r.kernels[0], r.stride, 1,
                                              Act::h_swish));
          break;
        case RowOp::dcn:
          require(r.out_ch >= 1, "dcn row");
          m.enc_.emplace_back(DcnLayer<Real>(r.out_ch, in_ch, r.kernels[0]));
          break;
        case RowOp::mnblock: {
          MnBlockSpec bs;
          bs.in_ch = in_ch;
          bs.out_ch = r.out_ch;
          bs.stride = r.stride;
          bs.expansion = r.t;
          bs.kernel_sizes = r.kernels;
          bs.se_ratio = r.se;
          m.enc_.emplace_back(MnBlock<Real>(bs));
          break;
        }
      }
    }
    m.taps_ = spec.tap_indices();
    require(m.taps_.size() == 3, "model: expected 3 skip taps, got " +
                                     std::to_string(m.taps_.size()));

    const int deep_ch = spec.rows.back().out_ch;
    const std::array<int, 3> tap_ch{spec.rows[m.taps_[0]].out_ch, spec.rows[m.taps_[1]].out_ch,
                                    spec.rows[m.taps_[2]].out_ch};
    // stage i consumes taps deepest-first: HCB2, HCB1, stem; final stage no skip
    const std::array<int, 4> cat_ch{deep_ch + tap_ch[2], widths[0] + tap_ch[1],
                                    widths[1] + tap_ch[0], widths[2]};
    for (int i = 0; i < 4; ++i) {
      m.dec_.emplace_back(cat_ch[static_cast<size_t>(i)], widths[static_cast<size_t>(i)]);
      m.heads_.emplace_back(1, widths[static_cast<size_t>(i)], 1, 1, 0, 1, /*bias=*/true);
    }

    Rng rng(seed);
    for (auto& layer : m.enc_)
      std::visit(
          [&rng](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvBnAct<Real>>) l.conv.w.init_he(rng);
            else l.init(rng);
          },
          layer);
    for (auto& d : m.dec_) d.init(rng);
    for (auto& h : m.heads_) h.w.init_he(rng);
    return m;
  }

  ForwardOut<Real> forward(const Tensor<Real>& x, bool train) {
    require(x.c == spec.in_ch, "forward: input " + x.shape_str() + " must have " +
                                   std::to_string(spec.in_ch) + " channels");
    require(x.h % kDownsample == 0 && x.w % kDownsample == 0,
            "forward: input dims must be divisible by " + std::to_string(kDownsample) +
                ", got " + x.shape_str());
    input_hw_ = {x.h, x.w};
    tap_values_.assign(taps_.size(), Tensor<Real>());

    Tensor<Real> t = x;
    for (size_t i = 0; i < enc_.size(); ++i) {
      t = std::visit(
          [&](auto& l) -> Tensor<Real> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DcnLayer<Real>>) return l.forward(t);
            else return l.forward(t, train);
          },
          enc_[i]);
      for (size_t j = 0; j < taps_.size(); ++j)
        if (taps_[j] == static_cast<int>(i)) tap_values_[j] = t;
    }

    ForwardOut<Real> out;
    out.stage_logits.resize(4);
    up_in_hw_.clear();
    head_in_hw_.clear();
    cat_up_ch_.clear();
    for (int i = 0; i < 4; ++i) {
      up_in_hw_.push_back({t.h, t.w});
      Tensor<Real> up = bilinear_upsample(t, t.h * 2, t.w * 2);
      cat_up_ch_.push_back(up.c);
      Tensor<Real> cat =
          i < 3 ? concat_channels(up, tap_values_[2 - static_cast<size_t>(i)]) : std::move(up);
      t = dec_[static_cast<size_t>(i)].forward(cat, train);
      Tensor<Real> logit = heads_[static_cast<size_t>(i)].forward(t);
      head_in_hw_.push_back({logit.h, logit.w});
      out.stage_logits[static_cast<size_t>(i)] = bilinear_upsample(logit, x.h, x.w);
    }
    out.prob = activation(out.stage_logits[3], Act::sigmoid);
    return out;
  }

  // grad_logits: one gradient tensor per stage logits (at input resolution).
  // Returns the gradient w.r.t. the network input.
  Tensor<Real> backward(const std::vector<Tensor<Real>>& grad_logits,
                        bool need_input_grad = false) {
    require(grad_logits.size() == 4, "backward: expected 4 stage gradients");
    Tensor<Real> g_next;  // grad w.r.t. the previous stage's block output
    std::vector<Tensor<Real>> g_taps(taps_.size());
    for (int i = 3; i >= 0; --i) {
      Tensor<Real> gl = bilinear_upsample_backward(grad_logits[static_cast<size_t>(i)],
                                                   head_in_hw_[static_cast<size_t>(i)].first,
                                                   head_in_hw_[static_cast<size_t>(i)].second);
      Tensor<Real> g_block_out = heads_[static_cast<size_t>(i)].backward(gl);
      if (!g_next.empty())
        for (size_t j = 0; j < g_block_out.v.size(); ++j) g_block_out.v[j] += g_next.v[j];
      Tensor<Real> g_cat = dec_[static_cast<size_t>(i)].backward(g_block_out);
      Tensor<Real> g_up;
      if (i < 3) {
        const int up_c = cat_up_ch_[static_cast<size_t>(i)];
        g_up = slice_channels(g_cat, 0, up_c);
        g_taps[2 - static_cast<size_t>(i)] = slice_channels(g_cat, up_c, g_cat.c);
      } else {
        g_up = std::move(g_cat);
      }
      g_next = bilinear_upsample_backward(g_up, up_in_hw_[static_cast<size_t>(i)].first,
                                          up_in_hw_[static_cast<size_t>(i)].second);
    }

    Tensor<Real> g = std::move(g_next);  // grad w.r.t. the deepest encoder output
    for (int i = static_cast<int>(enc_.size()) - 1; i >= 0; --i) {
      for (size_t j = 0; j < taps_.size(); ++j)
        if (taps_[j] == i && !g_taps[j].empty())
          for (size_t q = 0; q < g.v.size(); ++q) g.v[q] += g_taps[j].v[q];
      const bool need = need_input_grad || i > 0;
      g = std::visit([&](auto& l) -> Tensor<Real> { return l.backward(g, need); }, enc_[i]);
    }
    return g;
  }

  void collect_params(std::vector<ParamRef<Real>>& out) {
    for (size_t i = 0; i < enc_.size(); ++i)
      std::visit([&](auto& l) { l.collect("enc." + std::to_string(i), out); }, enc_[i]);
    for (size_t i = 0; i < dec_.size(); ++i) dec_[i].collect("dec." + std::to_string(i), out);
    for (size_t i = 0; i < heads_.size(); ++i)
      heads_[i].collect("head." + std::to_string(i), out);
  }
  void collect_state(std::vector<StateRef<Real>>& out) {
    for (size_t i = 0; i < enc_.size(); ++i)
      std::visit([&](auto& l) { l.collect_state("enc." + std::to_string(i), out); }, enc_[i]);
    for (size_t i = 0; i < dec_.size(); ++i)
      dec_[i].collect_state("dec." + std::to_string(i), out);
    for (size_t i = 0; i < heads_.size(); ++i)
      heads_[i].collect_state("head." + std::to_string(i), out);
  }

  void zero_grads() {
    std::vector<ParamRef<Real>> ps;
    collect_params(ps);
    for (auto& p : ps) p.grad->fill(Real(0));
  }

  void clear_caches() {
    for (auto& layer : enc_) std::visit([](auto& l) { l.clear_cache(); }, layer);
    for (auto& d : dec_) d.clear_cache();
    for (auto& h : heads_) h.clear_cache();
    tap_values_.clear();
  }

  // Exact scalar parameter count (weights, biases, BN affine; running stats
  // excluded).
  uint64_t count_params() {
    std::vector<ParamRef<Real>> ps;
    collect_params(ps);
    uint64_t total = 0;
    for (auto& p : ps) total += p.value->size();
    return total;
  }

  uint64_t count_params_encoder() {
    std::vector<ParamRef<Real>> ps;
    for (size_t i = 0; i < enc_.size(); ++i)
      std::visit([&](auto& l) { l.collect("enc." + std::to_string(i), ps); }, enc_[i]);
    uint64_t total = 0;
    for (auto& p : ps) total += p.value->size();
    return total;
  }

  MacsReport count_macs(int in_h, int in_w) const {
    require(in_h % kDownsample == 0 && in_w % kDownsample == 0,
            "count_macs: input dims must be divisible by " + std::to_string(kDownsample));
    return count_macs_model(spec, decoder_widths, in_h, in_w);
  }

  const std::vector<int>& tap_layer_indices() const { return taps_; }
  std::vector<EncLayer>& encoder_layers() { return enc_; }

  // ------------------------------------------------------------------
  // Checkpoint I/O: magic "HSEG", version u32, tensor count u32, then per
  // tensor name (u16 length + UTF-8), rank u8, extents u32 each, raw
  // little-endian f32 payload. No padding.
  // ------------------------------------------------------------------

  void save_checkpoint(std::ostream& os) {
    std::vector<StateRef<Real>> st;
    collect_state(st);
    os.write("HSEG", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<uint32_t>(st.size()));
    for (auto& s : st) {
      require(s.name.size() <= 0xffff, "checkpoint: tensor name too long");
      write_u16(os, static_cast<uint16_t>(s.name.size()));
      os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
      os.put(static_cast<char>(4));
      write_u32(os, static_cast<uint32_t>(s.value->n));
      write_u32(os, static_cast<uint32_t>(s.value->c));
      write_u32(os, static_cast<uint32_t>(s.value->h));
      write_u32(os, static_cast<uint32_t>(s.value->w));
      for (Real x : s.value->v) write_f32(os, static_cast<float>(x));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
  }

  void save_checkpoint(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    save_checkpoint(f);
  }

  uint64_t checkpoint_byte_size() {
    std::ostringstream os(std::ios::binary);
    save_checkpoint(os);
    return static_cast<uint64_t>(os.str().size());
  }

  void load_state(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "HSEG")
      throw std::runtime_error("checkpoint: bad magic, not an HSEG file");
    const uint32_t version = read_u32(is);
    if (version != 1)
      throw std::runtime_error("checkpoint: unsupported format version " +
                               std::to_string(version));
    const uint32_t count = read_u32(is);

    std::vector<StateRef<Real>> st;
    collect_state(st);
    std::map<std::string, Tensor<Real>*> by_name;
    for (auto& s : st) by_name[s.name] = s.value;
    std::set<std::string> filled;

    for (uint32_t i = 0; i < count; ++i) {
      const uint16_t name_len = read_u16(is);
      std::string name(name_len, '\0');
      if (!is.read(name.data(), name_len))
        throw std::runtime_error("checkpoint: truncated file (tensor name)");
      const int rank = is.get();
      if (rank != 4)
        throw std::runtime_error("checkpoint: tensor '" + name + "' has unsupported rank " +
                                 std::to_string(rank));
      const int n = static_cast<int>(read_u32(is)), c = static_cast<int>(read_u32(is));
      const int h = static_cast<int>(read_u32(is)), w = static_cast<int>(read_u32(is));
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
      Tensor<Real>* dst = it->second;
      if (dst->n != n || dst->c != c || dst->h != h || dst->w != w)
        throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "': file has (" +
                                 std::to_string(n) + "," + std::to_string(c) + "," +
                                 std::to_string(h) + "," + std::to_string(w) + "), model has " +
                                 dst->shape_str());
      for (auto& x : dst->v) {
        float f;
        if (!read_f32(is, f))
          throw std::runtime_error("checkpoint: truncated file (tensor '" + name + "')");
        x = static_cast<Real>(f);
      }
      filled.insert(name);
    }
    for (auto& s : st)
      if (!filled.count(s.name))
        throw std::runtime_error("checkpoint: missing tensor '" + s.name + "'");
  }

  void load_state(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    load_state(f);
  }

  static Model load_checkpoint(const std::string& path,
                               const EncoderSpec& spec = EncoderSpec::table1(),
                               std::array<int, 4> widths = {64, 40, 24, 16}) {
    Model m = build(spec, 0, widths);
    m.load_state(path);
    return m;
  }

 private:
  std::vector<EncLayer> enc_;
  std::vector<int> taps_;
  std::vector<DecoderBlock<Real>> dec_;
  std::vector<Conv2dLayer<Real>> heads_;

  // forward caches
  std::vector<Tensor<Real>> tap_values_;
  std::vector<std::pair<int, int>> up_in_hw_, head_in_hw_;
  std::vector<int> cat_up_ch_;
  std::pair<int, int> input_hw_{0, 0};

  static void write_u16(std::ostream& os, uint16_t v) {
    os.put(static_cast<char>(v & 0xff));
    os.put(static_cast<char>((v >> 8) & 0xff));
  }
  static void write_u32(std::ostream& os, uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static void write_f32(std::ostream& os, float f) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
  static uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
      throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  static uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
      throw std::runtime_error("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  static bool read_f32(std::istream& is, float& out) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                          (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    std::memcpy(&out, &bits, 4);
    return true;
  }
};

template <class Real>
Model<Real> build_model(const EncoderSpec& spec, uint64_t seed) {
  return Model<Real>::build(spec, seed);
}

}  // namespace hseg

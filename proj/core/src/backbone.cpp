#include "acmseg/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <new>
#include <random>
#include <sstream>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace acmseg {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// ---------------------------------------------------------------------------
// Architecture and parameter layout

void ArchConfig::validate() const {
    if (encoder_levels < 2) throw std::invalid_argument("arch: encoder_levels must be >= 2");
    if (decoder_levels < 1 || decoder_levels > encoder_levels - 1) {
        throw std::invalid_argument("arch: decoder_levels must be in [1, encoder_levels - 1]");
    }
    if (base_channels < 1 || max_channels < base_channels) throw std::invalid_argument("arch: bad channel widths");
    if (head_hidden1 < 1 || head_hidden2 < 1) throw std::invalid_argument("arch: bad head widths");
    const int div = 1 << (encoder_levels - 1);
    if (input_size < div || input_size % div != 0) {
        throw std::invalid_argument("arch: input_size must be divisible by 2^(encoder_levels-1)");
    }
}

int ArchConfig::channels(int level) const {
    long c = static_cast<long>(base_channels) << level;
    return static_cast<int>(std::min<long>(c, max_channels));
}

int ArchConfig::head_input_channels() const {
    int c = 0;
    for (int k = encoder_levels - 2; k >= finest_level(); --k) c += channels(k);
    return c;
}

namespace {

struct LevelIdx {
    std::size_t conv_w, conv_b, res1_w, res2_w;
};

struct Layout {
    std::vector<LevelIdx> enc;  // by resolution level 0..E-1
    std::vector<LevelIdx> dec;  // by resolution level; only [finest, E-2] used
    std::size_t w1, b1, w2, b2, w3, b3;
};

// With alloc = false only names and shapes are filled in.
std::vector<Tensor> make_tensors(const ArchConfig& a, Layout* layout, bool alloc = true) {
    a.validate();
    std::vector<Tensor> ts;
    const auto add = [&](std::string name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int s : shape) n *= static_cast<std::size_t>(s);
        ts.push_back({std::move(name), std::move(shape), std::vector<double>(alloc ? n : 0, 0.0)});
        return ts.size() - 1;
    };
    Layout lay;
    lay.enc.resize(a.encoder_levels);
    lay.dec.resize(a.encoder_levels);
    for (int k = 0; k < a.encoder_levels; ++k) {
        const int cin = k == 0 ? 3 : a.channels(k - 1);
        const int c = a.channels(k);
        const std::string p = "enc" + std::to_string(k);
        lay.enc[k].conv_w = add(p + ".conv.w", {c, cin, 3, 3});
        lay.enc[k].conv_b = add(p + ".conv.b", {c});
        lay.enc[k].res1_w = add(p + ".res1.w", {c, c, 3, 3});
        lay.enc[k].res2_w = add(p + ".res2.w", {c, c, 3, 3});
    }
    for (int k = a.encoder_levels - 2; k >= a.finest_level(); --k) {
        const int c = a.channels(k);
        const int cin = a.channels(k + 1) + c;
        const std::string p = "dec" + std::to_string(k);
        lay.dec[k].conv_w = add(p + ".conv.w", {c, cin, 3, 3});
        lay.dec[k].conv_b = add(p + ".conv.b", {c});
        lay.dec[k].res1_w = add(p + ".res1.w", {c, c, 3, 3});
        lay.dec[k].res2_w = add(p + ".res2.w", {c, c, 3, 3});
    }
    lay.w1 = add("head.w1", {a.head_hidden1, a.head_input_channels()});
    lay.b1 = add("head.b1", {a.head_hidden1});
    lay.w2 = add("head.w2", {a.head_hidden2, a.head_hidden1});
    lay.b2 = add("head.b2", {a.head_hidden2});
    lay.w3 = add("head.w3", {4, a.head_hidden2});
    lay.b3 = add("head.b3", {4});
    if (layout) *layout = std::move(lay);
    return ts;
}

Layout layout_of(const ArchConfig& a) {
    Layout lay;
    make_tensors(a, &lay, false);
    return lay;
}

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    return n;
}

void check_layout(const BackboneParams& p) {
    const auto ref = make_tensors(p.arch, nullptr, false);
    if (ref.size() != p.tensors.size()) throw std::invalid_argument("backbone params do not match architecture");
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref[i].name != p.tensors[i].name || ref[i].shape != p.tensors[i].shape ||
            p.tensors[i].data.size() != shape_size(ref[i].shape)) {
            throw std::invalid_argument("backbone tensor " + p.tensors[i].name + " does not match architecture");
        }
    }
}

}  // namespace

BackboneParams BackboneParams::zeros(const ArchConfig& arch) { return {arch, make_tensors(arch, nullptr)}; }

Tensor& BackboneParams::operator[](const std::string& name) {
    for (auto& t : tensors)
        if (t.name == name) return t;
    throw std::out_of_range("no tensor named " + name);
}

const Tensor& BackboneParams::operator[](const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw std::out_of_range("no tensor named " + name);
}

std::size_t BackboneParams::numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
}

double BackboneParams::squared_norm() const {
    double s = 0.0;
    for (const auto& t : tensors)
        for (double x : t.data) s += x * x;
    return s;
}

bool BackboneParams::all_finite() const {
    for (const auto& t : tensors)
        for (double x : t.data)
            if (!std::isfinite(x)) return false;
    return true;
}

// Four interleaved FNV-style lanes; one serial chain is too slow for a call
// on every forward and backward.
std::uint64_t BackboneParams::fingerprint() const {
    std::uint64_t h[4] = {1469598103934665603ull, 0x9e3779b97f4a7c15ull, 0xc2b2ae3d27d4eb4full, 0x165667b19e3779f9ull};
    const auto mix = [](std::uint64_t& s, double x) {
        s ^= std::bit_cast<std::uint64_t>(x);
        s *= 1099511628211ull;
        s ^= s >> 29;
    };
    for (const auto& t : tensors) {
        const std::size_t n = t.data.size(), n4 = n & ~std::size_t{3};
        for (std::size_t i = 0; i < n4; i += 4)
            for (int l = 0; l < 4; ++l) mix(h[l], t.data[i + l]);
        for (std::size_t i = n4; i < n; ++i) mix(h[0], t.data[i]);
        mix(h[1], static_cast<double>(n));
    }
    std::uint64_t out = h[0];
    for (int l = 1; l < 4; ++l) {
        out ^= h[l] + 0x9e3779b97f4a7c15ull + (out << 6) + (out >> 2);
    }
    return out;
}

void BackboneParams::axpy(double s, const BackboneParams& o) {
    if (tensors.size() != o.tensors.size()) throw std::invalid_argument("axpy: layout mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& a = tensors[i].data;
        const auto& b = o.tensors[i].data;
        if (a.size() != b.size()) throw std::invalid_argument("axpy: layout mismatch");
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += s * b[j];
    }
}

double fan_in_of(const Tensor& t) {
    // conv [cout, cin, 3, 3] -> cin*9; dense [out, in] -> in; bias of a layer
    // shares the layer's fan-in, recorded in the name's sibling weight.
    if (t.shape.size() == 4) return static_cast<double>(t.shape[1]) * t.shape[2] * t.shape[3];
    if (t.shape.size() == 2) return t.shape[1];
    return 0.0;
}

BackboneParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    BackboneParams p = BackboneParams::zeros(arch);
    std::mt19937_64 rng(seed);
    double last_fan_in = 1.0;
    for (auto& t : p.tensors) {
        const double fi = fan_in_of(t);
        if (fi > 0.0) last_fan_in = fi;  // biases follow their weight tensor
        const double bound = std::sqrt(3.0 / last_fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& x : t.data) x = dist(rng);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Layer primitives. Activations are pixel-major: value (pixel p, channel c)
// lives at v[p * c_total + c], i.e. a column-major (channels x pixels) matrix.

namespace {

using ColMat = Eigen::MatrixXd;
using ColMap = Eigen::Map<ColMat>;
using ConstColMap = Eigen::Map<const ColMat>;

// Leaves elements default-initialized, so buffers that are about to be
// overwritten skip the zero fill. Storage is 64-byte aligned: Eigen peels an
// unaligned head off to scalar code, and scalar exp rounds differently from
// the vectorized one, which would make results depend on the allocator.
template <class T>
struct ActAlloc {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    ActAlloc() = default;
    template <class U>
    ActAlloc(const ActAlloc<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... A>
    void construct(U* p, A&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<A>(args)...);
    }
    template <class U>
    friend bool operator==(const ActAlloc&, const ActAlloc<U>&) noexcept {
        return true;
    }
};

struct Act {
    int c = 0, h = 0, w = 0;
    std::vector<double, ActAlloc<double>> v;

    Act() = default;
    Act(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    // Contents unspecified; the caller writes every element.
    static Act uninit(int c, int h, int w) {
        Act a;
        a.c = c;
        a.h = h;
        a.w = w;
        a.v.resize(static_cast<std::size_t>(c) * h * w);
        return a;
    }
    std::size_t hw() const { return static_cast<std::size_t>(h) * w; }
    ColMap mat() { return ColMap(v.data(), c, static_cast<Eigen::Index>(hw())); }
    ConstColMap mat() const { return ConstColMap(v.data(), c, static_cast<Eigen::Index>(hw())); }
};

// Columns for pixels [p0, p1). Rows are tap-major: row t * c + ci holds
// channel ci at tap t = ky * 3 + kx.
void im2col(const Act& in, std::size_t p0, std::size_t p1, ColMat& cols) {
    const int H = in.h, W = in.w, C = in.c;
    cols.resize(static_cast<Eigen::Index>(9) * C, static_cast<Eigen::Index>(p1 - p0));
    double* dst = cols.data();
    for (std::size_t p = p0; p < p1; ++p) {
        const int y = static_cast<int>(p / W), x = static_cast<int>(p % W);
        for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            for (int kx = 0; kx < 3; ++kx, dst += C) {
                const int sx = x + kx - 1;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
                    std::fill(dst, dst + C, 0.0);
                } else {
                    std::memcpy(dst, in.v.data() + (static_cast<std::size_t>(sy) * W + sx) * C,
                                sizeof(double) * static_cast<std::size_t>(C));
                }
            }
        }
    }
}

void col2im_add(const ColMat& cols, std::size_t p0, std::size_t p1, Act& out) {
    const int H = out.h, W = out.w, C = out.c;
    const double* src = cols.data();
    for (std::size_t p = p0; p < p1; ++p) {
        const int y = static_cast<int>(p / W), x = static_cast<int>(p % W);
        for (int ky = 0; ky < 3; ++ky) {
            const int sy = y + ky - 1;
            for (int kx = 0; kx < 3; ++kx, src += C) {
                const int sx = x + kx - 1;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                double* d = out.v.data() + (static_cast<std::size_t>(sy) * W + sx) * C;
                for (int ci = 0; ci < C; ++ci) d[ci] += src[ci];
            }
        }
    }
}

// Pixel chunk for the convolutions, sized so a chunk of columns stays in cache.
std::size_t conv_chunk(int cin) { return std::max<std::size_t>(64, (std::size_t{1} << 16) / (9 * cin)); }

// [cout, cin, 3, 3] -> (cout x 9 cin) with tap-major columns, matching im2col.
RowMat tap_major(const Tensor& w) {
    const int cout = w.shape[0], cin = w.shape[1];
    RowMat m(cout, 9 * cin);
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int t = 0; t < 9; ++t) m(co, t * cin + ci) = w.data[(static_cast<std::size_t>(co) * cin + ci) * 9 + t];
    return m;
}

void add_tap_major(const RowMat& m, Tensor& w) {
    const int cout = w.shape[0], cin = w.shape[1];
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int t = 0; t < 9; ++t) w.data[(static_cast<std::size_t>(co) * cin + ci) * 9 + t] += m(co, t * cin + ci);
}

// 3x3 convolution, stride 1, zero padding.
Act conv3x3(const Act& in, const Tensor& w, const Tensor* b) {
    const int cout = w.shape[0];
    Act out = Act::uninit(cout, in.h, in.w);
    const RowMat wt = tap_major(w);
    const std::size_t n = in.hw(), step = conv_chunk(in.c);
    ColMat cols;
    ColMap om = out.mat();
    for (std::size_t p0 = 0; p0 < n; p0 += step) {
        const std::size_t p1 = std::min(n, p0 + step);
        im2col(in, p0, p1, cols);
        om.middleCols(static_cast<Eigen::Index>(p0), static_cast<Eigen::Index>(p1 - p0)).noalias() = wt * cols;
    }
    if (b) om.colwise() += Eigen::Map<const Eigen::VectorXd>(b->data.data(), cout);
    return out;
}

// out[r] += sum of row r, column by column. Eigen's rowwise().sum() peels
// by buffer alignment, which makes the rounding depend on the allocator.
template <class M>
void add_row_sums(const M& m, double* out) {
    Eigen::Map<Eigen::VectorXd> acc(out, m.rows());
    for (Eigen::Index j = 0; j < m.cols(); ++j) acc += m.col(j);
}

// Accumulates dW (and db) and, when din is given, the input gradient.
void conv3x3_backward(const Act& in, const Tensor& w, const Act& dout, Tensor& dw, Tensor* db, Act* din) {
    const int cout = w.shape[0];
    const RowMat wt = tap_major(w);
    RowMat dwm = RowMat::Zero(cout, 9 * in.c);
    const std::size_t n = in.hw(), step = conv_chunk(in.c);
    ColMat cols, dcols;
    const ConstColMap dm = dout.mat();
    for (std::size_t p0 = 0; p0 < n; p0 += step) {
        const std::size_t p1 = std::min(n, p0 + step);
        const auto dchunk = dm.middleCols(static_cast<Eigen::Index>(p0), static_cast<Eigen::Index>(p1 - p0));
        im2col(in, p0, p1, cols);
        dwm.noalias() += dchunk * cols.transpose();
        if (din) {
            dcols.noalias() = wt.transpose() * dchunk;
            col2im_add(dcols, p0, p1, *din);
        }
    }
    add_tap_major(dwm, dw);
    if (db) add_row_sums(dm, db->data.data());
}

// max(x, 0) + exp(min(x, 0)) - 1 is x for x > 0 and exp(x) - 1 otherwise,
// without a select, so Eigen vectorizes it.
template <class X>
auto elu_expr(const X& x) {
    return x.max(0.0) + (x.min(0.0).exp() - 1.0);
}

Act elu(const Act& x) {
    Act y = Act::uninit(x.c, x.h, x.w);
    y.mat().array() = elu_expr(x.mat().array());
    return y;
}

// dx = dy * elu'(x), written in terms of the output y = elu(x): y > 0 iff x > 0,
// and elu'(x) = y + 1 otherwise.
template <class Dy, class Y>
auto elu_grad_from_output(const Dy& dy, const Y& y) {
    return dy * (y.min(0.0) + 1.0);
}

Act elu_backward(const Act& y, const Act& dy) {
    Act dx = Act::uninit(dy.c, dy.h, dy.w);
    dx.mat().array() = elu_grad_from_output(dy.mat().array(), y.mat().array());
    return dx;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// 2x2 max-pool; ties resolve to the first maximal element in row-major order.
Act maxpool(const Act& in, std::vector<std::uint32_t>& argmax) {
    Act out = Act::uninit(in.c, in.h / 2, in.w / 2);
    argmax.assign(out.v.size(), 0);
    const std::size_t C = static_cast<std::size_t>(in.c);
    std::size_t o = 0;
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            const std::size_t p00 = (static_cast<std::size_t>(2 * y) * in.w + 2 * x) * C;
            const std::size_t cand[4] = {p00, p00 + C, p00 + in.w * C, p00 + in.w * C + C};
            for (std::size_t c = 0; c < C; ++c, ++o) {
                std::size_t best = cand[0] + c;
                for (int k = 1; k < 4; ++k)
                    if (in.v[cand[k] + c] > in.v[best]) best = cand[k] + c;
                out.v[o] = in.v[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return out;
}

// Nearest-neighbour upsampling by 2^shift.
Act upsample(const Act& in, int shift) {
    Act out = Act::uninit(in.c, in.h << shift, in.w << shift);
    const std::size_t C = static_cast<std::size_t>(in.c);
    double* d = out.v.data();
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x, d += C) {
            const double* s = in.v.data() + (static_cast<std::size_t>(y >> shift) * in.w + (x >> shift)) * C;
            std::copy(s, s + C, d);
        }
    }
    return out;
}

// Adjoint of upsample(): sums each 2^shift block.
Act upsample_backward(const Act& dout, int shift) {
    Act din(dout.c, dout.h >> shift, dout.w >> shift);
    const std::size_t C = static_cast<std::size_t>(dout.c);
    const double* s = dout.v.data();
    for (int y = 0; y < dout.h; ++y) {
        for (int x = 0; x < dout.w; ++x, s += C) {
            double* d = din.v.data() + (static_cast<std::size_t>(y >> shift) * din.w + (x >> shift)) * C;
            for (std::size_t c = 0; c < C; ++c) d[c] += s[c];
        }
    }
    return din;
}

Act concat(const Act& a, const Act& b) {
    Act out = Act::uninit(a.c + b.c, a.h, a.w);
    double* d = out.v.data();
    for (std::size_t p = 0; p < a.hw(); ++p) {
        d = std::copy_n(a.v.data() + p * a.c, a.c, d);
        d = std::copy_n(b.v.data() + p * b.c, b.c, d);
    }
    return out;
}

void add_into(Act& dst, const Act& src) { dst.mat() += src.mat(); }

// conv -> ELU -> residual identity block. Only post-activation values are
// kept; the ELU derivative is recovered from them.
struct StageCache {
    Act in, a, e1, out;
    std::vector<std::uint32_t> pool_argmax;  // encoder levels > 0: pooling that produced `in`
};

StageCache run_stage(Act in, const BackboneParams& p, const LevelIdx& idx) {
    StageCache s;
    s.in = std::move(in);
    s.a = elu(conv3x3(s.in, p.tensors[idx.conv_w], &p.tensors[idx.conv_b]));
    s.e1 = elu(conv3x3(s.a, p.tensors[idx.res1_w], nullptr));
    s.out = conv3x3(s.e1, p.tensors[idx.res2_w], nullptr);
    add_into(s.out, s.a);
    return s;
}

// Returns the gradient with respect to the stage input.
Act stage_backward(const StageCache& s, const BackboneParams& p, const LevelIdx& idx, const Act& dout,
                   BackboneParams& g, bool need_input_grad) {
    Act de1(s.e1.c, s.e1.h, s.e1.w);
    conv3x3_backward(s.e1, p.tensors[idx.res2_w], dout, g.tensors[idx.res2_w], nullptr, &de1);
    const Act dr1 = elu_backward(s.e1, de1);
    Act da = dout;
    conv3x3_backward(s.a, p.tensors[idx.res1_w], dr1, g.tensors[idx.res1_w], nullptr, &da);
    const Act dpre = elu_backward(s.a, da);
    Act din(s.in.c, s.in.h, s.in.w);
    conv3x3_backward(s.in, p.tensors[idx.conv_w], dpre, g.tensors[idx.conv_w], &g.tensors[idx.conv_b],
                     need_input_grad ? &din : nullptr);
    return din;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
    ArchConfig arch;
    std::uint64_t fingerprint = 0;
    std::vector<StageCache> enc;  // by level
    std::vector<StageCache> dec;  // by level, [finest, E-2] populated
    Act h1, h2, z3;
};

ForwardResult forward(const BackboneParams& params, const Image& image) {
    const ArchConfig& a = params.arch;
    check_layout(params);
    if (image.width != a.input_size || image.height != a.input_size) {
        throw std::invalid_argument("backbone: image is " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + ", expected " + std::to_string(a.input_size) +
                                    "x" + std::to_string(a.input_size));
    }
    const Layout lay = layout_of(a);
    auto cache = std::make_shared<ForwardCache>();
    cache->arch = a;
    cache->fingerprint = params.fingerprint();
    cache->enc.resize(a.encoder_levels);
    cache->dec.resize(a.encoder_levels);

    const int S = a.input_size;
    Act x(3, S, S);
    for (int v = 0; v < S; ++v)
        for (int u = 0; u < S; ++u)
            for (int c = 0; c < 3; ++c) x.v[(static_cast<std::size_t>(v) * S + u) * 3 + c] = image.at(c, u, v);
    for (int k = 0; k < a.encoder_levels; ++k) {
        std::vector<std::uint32_t> argmax;
        if (k > 0) x = maxpool(cache->enc[k - 1].out, argmax);
        cache->enc[k] = run_stage(std::move(x), params, lay.enc[k]);
        cache->enc[k].pool_argmax = std::move(argmax);
    }
    const Act* prev = &cache->enc[a.encoder_levels - 1].out;
    for (int k = a.encoder_levels - 2; k >= a.finest_level(); --k) {
        Act cat = concat(upsample(*prev, 1), cache->enc[k].out);
        cache->dec[k] = run_stage(std::move(cat), params, lay.dec[k]);
        prev = &cache->dec[k].out;
    }

    // Head. The first layer is linear in the concatenated, nearest-resized
    // decoder outputs, so it is applied at each level's own resolution and the
    // result upsampled; this equals resize-then-concat-then-multiply.
    const int fine = a.finest_level();
    const int H1 = a.head_hidden1;
    const Tensor& w1 = params.tensors[lay.w1];
    ConstMatMap w1m(w1.data.data(), H1, a.head_input_channels());
    const int Sf = S >> fine;
    const Eigen::Map<const Eigen::VectorXd> b1(params.tensors[lay.b1].data.data(), H1);

    // Coarse levels are summed at the second-finest resolution (1/4 of the
    // columns), then added to the finest level in one fused pass with ELU.
    const int top = a.encoder_levels - 2;
    int col = 0;
    ColMat coarse;
    int cw = 0;
    for (int k = top; k > fine; --k) {
        const Act& f = cache->dec[k].out;
        const int shift = k - (fine + 1);
        ColMat part(H1, static_cast<Eigen::Index>(f.hw()));
        part.noalias() = w1m.middleCols(col, f.c) * f.mat();
        if (coarse.size() == 0) {
            cw = Sf / 2;
            coarse = ColMat::Zero(H1, static_cast<Eigen::Index>(cw) * cw);
        }
        for (int y = 0; y < cw; ++y)
            for (int x = 0; x < cw; ++x)
                coarse.col(static_cast<Eigen::Index>(y) * cw + x) +=
                    part.col(static_cast<Eigen::Index>(y >> shift) * f.w + (x >> shift));
        col += f.c;
    }
    const Act& ff = cache->dec[fine].out;
    if (coarse.size() != 0) coarse.colwise() += b1;
    Act h1 = Act::uninit(H1, Sf, Sf);
    for (int y = 0; y < Sf; ++y) {
        for (int x = 0; x < Sf; ++x) {
            auto c = h1.mat().col(static_cast<Eigen::Index>(y) * Sf + x);
            if (coarse.size() != 0) {
                c = coarse.col(static_cast<Eigen::Index>(y >> 1) * cw + (x >> 1));
            } else {
                c = b1;
            }
        }
    }
    h1.mat().noalias() += w1m.middleCols(col, ff.c) * ff.mat();
    h1.mat().array() = elu_expr(h1.mat().array());
    cache->h1 = fine > 0 ? upsample(h1, fine) : std::move(h1);

    Act z2 = Act::uninit(a.head_hidden2, S, S);
    z2.mat().colwise() = Eigen::Map<const Eigen::VectorXd>(params.tensors[lay.b2].data.data(), a.head_hidden2);
    z2.mat().noalias() += ConstMatMap(params.tensors[lay.w2].data.data(), a.head_hidden2, H1) * cache->h1.mat();
    z2.mat().array() = elu_expr(z2.mat().array());
    cache->h2 = std::move(z2);

    cache->z3 = Act::uninit(4, S, S);
    cache->z3.mat().colwise() = Eigen::Map<const Eigen::Vector4d>(params.tensors[lay.b3].data.data());
    cache->z3.mat().noalias() += ConstMatMap(params.tensors[lay.w3].data.data(), 4, a.head_hidden2) * cache->h2.mat();

    Grid d(S, S), al(S, S), be(S, S), ka(S, S);
    const std::size_t n = static_cast<std::size_t>(S) * S;
    const double* z = cache->z3.v.data();
    for (std::size_t i = 0; i < n; ++i) {
        d.data[i] = z[4 * i];
        al.data[i] = softplus(z[4 * i + 1]);
        be.data[i] = softplus(z[4 * i + 2]);
        ka.data[i] = z[4 * i + 3];
    }
    return {PriorMaps(std::move(d), std::move(al), std::move(be), std::move(ka)), std::move(cache)};
}

PriorMaps predict(const BackboneParams& params, const Image& image) { return forward(params, image).maps; }

BackboneParams backward(const BackboneParams& params, const ForwardCache& cache, const MapGrads& mg) {
    const ArchConfig& a = params.arch;
    if (!(cache.arch == a) || cache.fingerprint != params.fingerprint()) {
        throw std::invalid_argument("backbone: forward cache does not belong to these parameters");
    }
    const int S = a.input_size;
    if (mg.width() != S || mg.height() != S) throw std::invalid_argument("backbone: map gradient size mismatch");
    const Layout lay = layout_of(a);
    BackboneParams g = BackboneParams::zeros(a);

    // Map gradients are typically supported on a small set of pixels (node
    // stencils and the region between two contours). The head is per-pixel,
    // so its backward pass only visits those columns.
    const std::size_t n = static_cast<std::size_t>(S) * S;
    std::vector<Eigen::Index> active;
    for (std::size_t i = 0; i < n; ++i) {
        if (mg.g_d.data[i] != 0.0 || mg.g_alpha.data[i] != 0.0 || mg.g_beta.data[i] != 0.0 ||
            mg.g_kappa.data[i] != 0.0) {
            active.push_back(static_cast<Eigen::Index>(i));
        }
    }
    if (active.empty()) return g;
    const auto P = static_cast<Eigen::Index>(active.size());
    const int H1 = a.head_hidden1, H2 = a.head_hidden2;

    ColMat dz3(4, P), h2p(H2, P), h1p(H1, P);
    const double* z = cache.z3.v.data();
    for (Eigen::Index j = 0; j < P; ++j) {
        const auto i = static_cast<std::size_t>(active[j]);
        dz3(0, j) = mg.g_d.data[i];
        dz3(1, j) = mg.g_alpha.data[i] * sigmoid(z[4 * i + 1]);
        dz3(2, j) = mg.g_beta.data[i] * sigmoid(z[4 * i + 2]);
        dz3(3, j) = mg.g_kappa.data[i];
        h2p.col(j) = cache.h2.mat().col(active[j]);
        h1p.col(j) = cache.h1.mat().col(active[j]);
    }

    const auto dense_backward = [&](const ColMat& in, std::size_t wi, std::size_t bi, const ColMat& dout) {
        const auto rows = dout.rows(), cols_ = in.rows();
        MatMap(g.tensors[wi].data.data(), rows, cols_).noalias() += dout * in.transpose();
        add_row_sums(dout, g.tensors[bi].data.data());
        ColMat din(cols_, dout.cols());
        din.noalias() = ConstMatMap(params.tensors[wi].data.data(), rows, cols_).transpose() * dout;
        return din;
    };
    ColMat dh2 = dense_backward(h2p, lay.w3, lay.b3, dz3);
    const ColMat dz2 = elu_grad_from_output(dh2.array(), h2p.array()).matrix();
    ColMat dh1 = dense_backward(h1p, lay.w2, lay.b2, dz2);
    const ColMat dz1 = elu_grad_from_output(dh1.array(), h1p.array()).matrix();
    add_row_sums(dz1, g.tensors[lay.b1].data.data());

    // First head layer, per decoder level: fold active fine pixels onto their
    // coarse parents, then multiply on the gathered columns only.
    std::vector<Act> ddec(a.encoder_levels);
    {
        const int hin = a.head_input_channels();
        ConstMatMap w1m(params.tensors[lay.w1].data.data(), H1, hin);
        MatMap dw1(g.tensors[lay.w1].data.data(), H1, hin);
        int col = 0;
        for (int k = a.encoder_levels - 2; k >= a.finest_level(); --k) {
            const Act& f = cache.dec[k].out;
            std::vector<Eigen::Index> slot(f.hw(), -1);
            std::vector<Eigen::Index> parents;
            std::vector<Eigen::Index> parent_of(static_cast<std::size_t>(P));
            for (Eigen::Index j = 0; j < P; ++j) {
                const auto i = static_cast<std::size_t>(active[j]);
                const std::size_t py = (i / S) >> k, px = (i % S) >> k;
                const std::size_t q = py * f.w + px;
                if (slot[q] < 0) {
                    slot[q] = static_cast<Eigen::Index>(parents.size());
                    parents.push_back(static_cast<Eigen::Index>(q));
                }
                parent_of[j] = slot[q];
            }
            const auto Q = static_cast<Eigen::Index>(parents.size());
            ColMat dpart = ColMat::Zero(H1, Q);
            for (Eigen::Index j = 0; j < P; ++j) dpart.col(parent_of[j]) += dz1.col(j);
            ColMat fq(f.c, Q);
            for (Eigen::Index q = 0; q < Q; ++q) fq.col(q) = f.mat().col(parents[q]);
            dw1.middleCols(col, f.c).noalias() += dpart * fq.transpose();
            ColMat df(f.c, Q);
            df.noalias() = w1m.middleCols(col, f.c).transpose() * dpart;
            ddec[k] = Act(f.c, f.h, f.w);
            for (Eigen::Index q = 0; q < Q; ++q) ddec[k].mat().col(parents[q]) = df.col(q);
            col += f.c;
        }
    }

    std::vector<Act> denc(a.encoder_levels);
    for (int k = 0; k < a.encoder_levels; ++k) {
        const Act& o = cache.enc[k].out;
        denc[k] = Act(o.c, o.h, o.w);
    }

    // Decoder, finest first. The stage input is concat(upsample(prev), skip).
    for (int k = a.finest_level(); k <= a.encoder_levels - 2; ++k) {
        const StageCache& s = cache.dec[k];
        const Act dcat = stage_backward(s, params, lay.dec[k], ddec[k], g, true);
        const int cup = a.channels(k + 1);
        const int cskip = dcat.c - cup;
        Act dup(cup, s.in.h, s.in.w);
        Act& dskip = denc[k];
        for (std::size_t p = 0; p < dcat.hw(); ++p) {
            const double* src = dcat.v.data() + p * dcat.c;
            std::copy_n(src, cup, dup.v.data() + p * cup);
            double* d = dskip.v.data() + p * cskip;
            for (int c = 0; c < cskip; ++c) d[c] += src[cup + c];
        }
        const Act dprev = upsample_backward(dup, 1);
        add_into(k + 1 == a.encoder_levels - 1 ? denc[k + 1] : ddec[k + 1], dprev);
    }

    for (int k = a.encoder_levels - 1; k >= 0; --k) {
        const StageCache& s = cache.enc[k];
        const Act din = stage_backward(s, params, lay.enc[k], denc[k], g, k > 0);
        if (k > 0) {
            Act& dprev = denc[k - 1];
            for (std::size_t i = 0; i < din.v.size(); ++i) dprev.v[s.pool_argmax[i]] += din.v[i];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'C', 'M', 'S', 'E', 'G', 'C', 'K'};

nlohmann::json arch_json(const ArchConfig& a) {
    return {{"encoder_levels", a.encoder_levels}, {"decoder_levels", a.decoder_levels},
            {"base_channels", a.base_channels},   {"max_channels", a.max_channels},
            {"input_size", a.input_size},         {"head_hidden1", a.head_hidden1},
            {"head_hidden2", a.head_hidden2}};
}

ArchConfig arch_from(const nlohmann::json& j) {
    ArchConfig a;
    a.encoder_levels = j.at("encoder_levels").get<int>();
    a.decoder_levels = j.at("decoder_levels").get<int>();
    a.base_channels = j.at("base_channels").get<int>();
    a.max_channels = j.at("max_channels").get<int>();
    a.input_size = j.at("input_size").get<int>();
    a.head_hidden1 = j.at("head_hidden1").get<int>();
    a.head_hidden2 = j.at("head_hidden2").get<int>();
    a.validate();
    return a;
}

void put_u64(std::ostream& os, std::uint64_t x) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint64_t get_u64(const unsigned char* b) {
    std::uint64_t x = 0;
    for (int i = 7; i >= 0; --i) x = (x << 8) | b[i];
    return x;
}

}  // namespace

std::string arch_to_json(const ArchConfig& arch) { return arch_json(arch).dump(); }

ArchConfig arch_from_json(const std::string& text) { return arch_from(nlohmann::json::parse(text)); }

void write_checkpoint(const std::string& path, const BackboneParams& params, const std::string& meta_json) {
    check_layout(params);
    nlohmann::json header;
    header["format"] = "acmseg-checkpoint";
    header["version"] = 1;
    header["arch"] = arch_json(params.arch);
    auto& manifest = header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : params.tensors) {
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
        offset += 8 * t.numel();
    }
    header["data_bytes"] = offset;
    header["meta"] = nlohmann::json::parse(meta_json);
    const std::string h = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint " + path);
    os.write(kMagic, 8);
    put_u64(os, h.size());
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : params.tensors)
        for (double x : t.data) put_u64(os, std::bit_cast<std::uint64_t>(x));
    if (!os) throw CheckpointError("write failed: " + path);
}

LoadedCheckpoint read_checkpoint(const std::string& path, const std::optional<ArchConfig>& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto corrupt = [&](const std::string& why) { return CheckpointError("corrupt checkpoint " + path + ": " + why); };
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 8) != 0) throw corrupt("bad magic");
    const std::uint64_t hlen = get_u64(buf.data() + 8);
    if (hlen > buf.size() - 16) throw corrupt("truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw corrupt(std::string("header is not valid JSON (") + e.what() + ")");
    }

    LoadedCheckpoint out;
    std::uint64_t data_bytes = 0;
    try {
        out.params.arch = arch_from(header.at("arch"));
        data_bytes = header.at("data_bytes").get<std::uint64_t>();
        out.meta_json = header.contains("meta") ? header["meta"].dump() : "null";
    } catch (const std::exception& e) {
        throw corrupt(std::string("bad header (") + e.what() + ")");
    }
    const std::size_t data_start = 16 + hlen;
    if (buf.size() - data_start != data_bytes) throw corrupt("data section has wrong length (truncated?)");

    const ArchConfig& target = expected ? *expected : out.params.arch;
    const auto ref = make_tensors(target, nullptr);
    const auto& manifest = header.at("tensors");
    if (!manifest.is_array()) throw corrupt("tensor manifest missing");
    for (std::size_t i = 0; i < std::max(ref.size(), manifest.size()); ++i) {
        if (i >= manifest.size()) throw CheckpointError(path + ": tensor " + ref[i].name + " missing from checkpoint");
        const auto name = manifest[i].at("name").get<std::string>();
        if (i >= ref.size()) throw CheckpointError(path + ": unexpected tensor " + name + " for this architecture");
        const auto shape = manifest[i].at("shape").get<std::vector<int>>();
        if (name != ref[i].name || shape != ref[i].shape) {
            throw CheckpointError(path + ": tensor " + name + " has shape mismatch vs architecture (expected " +
                                  ref[i].name + ")");
        }
    }
    out.params.arch = target;
    out.params.tensors = ref;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        auto& t = out.params.tensors[i];
        const auto off = manifest[i].at("offset").get<std::uint64_t>();
        const auto count = manifest[i].at("count").get<std::uint64_t>();
        if (count != t.numel() || off + 8 * count > data_bytes) throw corrupt("tensor " + t.name + " out of range");
        const unsigned char* p = buf.data() + data_start + off;
        for (std::size_t j = 0; j < count; ++j) t.data[j] = std::bit_cast<double>(get_u64(p + 8 * j));
    }
    if (!out.params.all_finite()) throw corrupt("non-finite weights");
    return out;
}

}  // namespace acmseg

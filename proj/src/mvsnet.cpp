#include "mvstta/mvsnet.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace mvstta::net {

using ad::Tape;
using ad::Var;

void Arch::validate() const {
    if (in_channels <= 0 || feat_channels <= 0)
        throw std::invalid_argument("Arch: nonpositive channel count");
    if (kernel <= 0 || kernel % 2 == 0 || reg_kernel <= 0 || reg_kernel % 2 == 0)
        throw std::invalid_argument("Arch: kernels must be odd and positive");
}

void ModelParams::validate() const {
    arch.validate();
    if (static_cast<int>(theta.size()) != arch.param_count())
        throw std::invalid_argument("ModelParams: theta length " +
                                    std::to_string(theta.size()) + " != " +
                                    std::to_string(arch.param_count()));
}

ModelParams init_params(const Arch& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double s) {
        double u = static_cast<double>(rng() >> 11) * 0x1p-53;  // [0, 1)
        return (2.0 * u - 1.0) * s;
    };
    ModelParams p;
    p.arch = arch;
    p.theta.assign(static_cast<size_t>(arch.param_count()), 0.0);
    struct Layer {
        int w_off, w_count, fan_in;
    };
    const Layer layers[] = {
        {arch.conv1_w_off(), arch.conv1_w_count(), arch.in_channels * arch.kernel * arch.kernel},
        {arch.conv2_w_off(), arch.conv2_w_count(),
         arch.feat_channels * arch.kernel * arch.kernel},
        {arch.proj_w_off(), arch.proj_w_count(), arch.feat_channels},
        {arch.reg_w_off(), arch.reg_w_count(), arch.reg_w_count()},
    };
    for (const Layer& l : layers) {
        double s = std::sqrt(1.0 / l.fan_in);
        for (int i = 0; i < l.w_count; ++i) p.theta[static_cast<size_t>(l.w_off + i)] = uniform(s);
    }
    return p;
}

Var extract_features(Tape& t, Var theta, const Arch& arch, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[2] != arch.in_channels)
        throw std::invalid_argument("extract_features: bad image shape " + image.shape_str());
    const int h = image.shape[0], w = image.shape[1];
    const int f = arch.feat_channels, k = arch.kernel;
    Var img = t.constant(image);
    Var w1 = t.slice(theta, arch.conv1_w_off(), {arch.in_channels * k * k, f});
    Var b1 = t.slice(theta, arch.conv1_b_off(), {1, f});
    Var w2 = t.slice(theta, arch.conv2_w_off(), {f * k * k, f});
    Var b2 = t.slice(theta, arch.conv2_b_off(), {1, f});
    Var c1 = ad::elu(ad::conv2d(img, w1, b1, h, w, arch.in_channels, f, k));
    return ad::conv2d(c1, w2, b2, h, w, f, f, k);
}

std::vector<Var> build_feature_volumes(Tape& t, Var theta, const Arch& arch,
                                       const std::vector<geo::PosedImage>& views,
                                       const geo::DepthHypotheses& hyps) {
    if (views.size() < 2)
        throw std::invalid_argument("build_feature_volumes: need at least 2 views");
    hyps.validate();
    const int h = views[0].height(), w = views[0].width();
    const int dcount = hyps.count, f = arch.feat_channels;
    const std::vector<double> depths = hyps.values();
    const geo::Camera ref_cam{views[0].intrinsics, views[0].pose};

    std::vector<Var> volumes;
    volumes.reserve(views.size());

    // Reference features replicated across the hypothesis axis.
    Var ref_feat = extract_features(t, theta, arch, views[0].image);
    {
        auto idx = std::make_shared<std::vector<int>>(
            static_cast<size_t>(h) * w * dcount * f);
        size_t q = 0;
        for (int p = 0; p < h * w; ++p)
            for (int d = 0; d < dcount; ++d)
                for (int c = 0; c < f; ++c) (*idx)[q++] = p * f + c;
        volumes.push_back(t.gather(ref_feat, std::move(idx), {h, w, dcount, f}));
    }

    for (size_t i = 1; i < views.size(); ++i) {
        Var feat = extract_features(t, theta, arch, views[i].image);
        const geo::Camera src_cam{views[i].intrinsics, views[i].pose};
        Tensor xs({h * w * dcount}), ys({h * w * dcount});
        size_t q = 0;
        std::vector<geo::Mat3> homs;
        homs.reserve(static_cast<size_t>(dcount));
        for (double d : depths) homs.push_back(geo::homography(ref_cam, src_cam, d));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int d = 0; d < dcount; ++d) {
                    geo::PixelResult p =
                        geo::apply_homography(homs[static_cast<size_t>(d)], x, y);
                    // Degenerate projections land far outside and sample zero.
                    xs.data[q] = p.valid ? p.x : -2.0 * w;
                    ys.data[q] = p.valid ? p.y : -2.0 * h;
                    ++q;
                }
        ad::SampleResult s =
            ad::bilinear_sample(feat, t.constant(std::move(xs)), t.constant(std::move(ys)), h, w, f);
        volumes.push_back(t.reshape(s.values, {h, w, dcount, f}));
    }
    return volumes;
}

Var variance_cost(Tape& t, const std::vector<Var>& volumes) {
    if (volumes.size() < 2)
        throw std::invalid_argument("variance_cost: need at least 2 volumes");
    for (const Var& v : volumes)
        if (!v.value().same_shape(volumes[0].value()))
            throw std::invalid_argument("variance_cost: volume shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(volumes.size());
    Var mean = volumes[0];
    for (size_t i = 1; i < volumes.size(); ++i) mean = t.add(mean, volumes[i]);
    mean = t.scale(mean, inv_n);
    Var acc = ad::square(t.sub(volumes[0], mean));
    for (size_t i = 1; i < volumes.size(); ++i)
        acc = t.add(acc, ad::square(t.sub(volumes[i], mean)));
    return t.scale(acc, inv_n);
}

Var regularize(Tape& t, Var theta, const Arch& arch, Var cost, int h, int w, int d) {
    const int f = arch.feat_channels;
    if (cost.value().numel() != h * w * d * f)
        throw std::invalid_argument("regularize: cost size mismatch " + cost.value().shape_str());
    Var pw = t.slice(theta, arch.proj_w_off(), {f, 1});
    Var pb = t.slice(theta, arch.proj_b_off(), {1, 1});
    Var flat = t.reshape(cost, {h * w * d, f});
    Var score = t.add(t.matmul(flat, pw), t.broadcast_axis(pb, 0, h * w * d));
    const int rk = arch.reg_kernel;
    Var rw = t.slice(theta, arch.reg_w_off(), {rk * rk * rk, 1});
    Var rb = t.slice(theta, arch.reg_b_off(), {1});
    Var reg = ad::conv3d(t.reshape(score, {h, w, d}), rw, rb, h, w, d, rk);
    Var prob = ad::softmax_axis(t.reshape(t.neg(reg), {h * w, d}), 1);
    return t.reshape(prob, {h, w, d});
}

Var expected_depth(Tape& t, Var prob, const geo::DepthHypotheses& hyps, int h, int w) {
    if (prob.value().numel() != h * w * hyps.count)
        throw std::invalid_argument("expected_depth: shape mismatch " + prob.value().shape_str());
    Tensor col({hyps.count, 1}, hyps.values());
    Var depth = t.matmul(t.reshape(prob, {h * w, hyps.count}), t.constant(std::move(col)));
    return t.reshape(depth, {h, w});
}

Var forward(Tape& t, Var theta, const Arch& arch, const std::vector<geo::PosedImage>& views,
            const geo::DepthHypotheses& hyps) {
    if (views.size() < 2) throw std::invalid_argument("forward: need at least 2 views");
    const int h = views[0].height(), w = views[0].width();
    std::vector<Var> volumes = build_feature_volumes(t, theta, arch, views, hyps);
    Var cost = variance_cost(t, volumes);
    Var prob = regularize(t, theta, arch, cost, h, w, hyps.count);
    return expected_depth(t, prob, hyps, h, w);
}

Tensor forward_depth(const ModelParams& params, const std::vector<geo::PosedImage>& views,
                     const geo::DepthHypotheses& hyps) {
    params.validate();
    Tape t;
    Var theta = t.leaf(Tensor({params.arch.param_count()}, params.theta));
    return forward(t, theta, params.arch, views, hyps).value();
}

Var primary_loss(Tape& t, Var pred, const Tensor& gt, const Tensor& valid) {
    if (!pred.value().same_shape(gt) || gt.numel() != valid.numel())
        throw std::invalid_argument("primary_loss: shape mismatch");
    double nnz = 0;
    for (double m : valid.data) nnz += (m != 0.0) ? 1.0 : 0.0;
    if (nnz == 0.0) throw std::invalid_argument("primary_loss: empty valid mask");
    Tensor mask = valid;
    for (double& m : mask.data) m = (m != 0.0) ? 1.0 : 0.0;
    mask.shape = pred.value().shape;
    Var err = ad::mul_const(t.abs(t.sub(pred, t.constant(gt))), mask);
    return t.scale(t.sum_all(err), 1.0 / nnz);
}

namespace {

constexpr char kMagic[8] = {'M', 'V', 'S', 'T', 'T', 'A', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + static_cast<size_t>(i)]))
             << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::string& s, size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + static_cast<size_t>(i)]))
             << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
    params.validate();
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(params.arch.in_channels));
    put_u32(out, static_cast<std::uint32_t>(params.arch.feat_channels));
    put_u32(out, static_cast<std::uint32_t>(params.arch.kernel));
    put_u32(out, static_cast<std::uint32_t>(params.arch.reg_kernel));
    put_u64(out, params.theta.size());
    for (double d : params.theta) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof(bits));
        put_u64(out, bits);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (s.size() < sizeof(kMagic) + 4 * 4 + 8 || std::memcmp(s.data(), kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad header in " + path);
    ModelParams p;
    p.arch.in_channels = static_cast<int>(get_u32(s, 8));
    p.arch.feat_channels = static_cast<int>(get_u32(s, 12));
    p.arch.kernel = static_cast<int>(get_u32(s, 16));
    p.arch.reg_kernel = static_cast<int>(get_u32(s, 20));
    std::uint64_t n = get_u64(s, 24);
    if (s.size() != 32 + 8 * n)
        throw std::runtime_error("load_checkpoint: truncated file " + path);
    p.theta.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t bits = get_u64(s, 32 + 8 * i);
        std::memcpy(&p.theta[i], &bits, sizeof(double));
    }
    p.validate();
    return p;
}

}  // namespace mvstta::net

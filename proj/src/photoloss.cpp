#include "mvstta/photoloss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace mvstta::photo {

using ad::Tape;
using ad::Var;

void PhotoLossConfig::validate(int m_views, int h, int w) const {
    if (huber_delta <= 0) throw std::invalid_argument("PhotoLossConfig: huber_delta <= 0");
    if (top_k < 1 || top_k > m_views)
        throw std::invalid_argument("PhotoLossConfig: need 1 <= top_k <= M");
    if (ssim_window < 1 || ssim_window % 2 == 0 || ssim_window > std::min(h, w))
        throw std::invalid_argument("PhotoLossConfig: bad ssim_window");
    if (ssim_c1 <= 0 || ssim_c2 <= 0)
        throw std::invalid_argument("PhotoLossConfig: stabilizers must be positive");
    if (ssim_weight < 0) throw std::invalid_argument("PhotoLossConfig: negative ssim_weight");
}

namespace {

ad::IndexMap shift_index(int h, int w, int c, int dx, int dy) {
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(h) * w * c);
    size_t q = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int yy = std::min(y + dy, h - 1), xx = std::min(x + dx, w - 1);
            // out-of-range shifts map to themselves so the difference is zero
            bool in = y + dy < h && x + dx < w;
            int src = in ? yy * w + xx : y * w + x;
            for (int ch = 0; ch < c; ++ch) (*idx)[q++] = src * c + ch;
        }
    return idx;
}

}  // namespace

GradientPair image_gradient(Tape& t, Var img, int h, int w, int c) {
    if (img.value().numel() != h * w * c)
        throw std::invalid_argument("image_gradient: size mismatch " + img.value().shape_str());
    std::vector<int> shape = img.value().shape;
    Var nx = t.gather(img, shift_index(h, w, c, 1, 0), shape);
    Var ny = t.gather(img, shift_index(h, w, c, 0, 1), shape);
    return {t.sub(nx, img), t.sub(ny, img)};
}

std::pair<Tensor, Tensor> image_gradient(const Tensor& img) {
    Tape t;
    GradientPair g = image_gradient(t, t.constant(img), img.shape[0], img.shape[1],
                                    img.shape.size() > 2 ? img.shape[2] : 1);
    return {g.gx.value(), g.gy.value()};
}

Var reproj_error_per_view(Tape& t, const Tensor& ref, Var warped, const Tensor& mask,
                          const PhotoLossConfig& cfg) {
    if (!warped.value().same_shape(ref))
        throw std::invalid_argument("reproj_error_per_view: image shape mismatch");
    const int h = ref.shape[0], w = ref.shape[1], c = ref.shape[2];
    if (mask.numel() != h * w)
        throw std::invalid_argument("reproj_error_per_view: mask size mismatch");

    Tensor maskc({h, w, c});
    for (int p = 0; p < h * w; ++p)
        for (int ch = 0; ch < c; ++ch)
            maskc.data[static_cast<size_t>(p * c + ch)] =
                mask.data[static_cast<size_t>(p)] != 0.0 ? 1.0 : 0.0;

    Var diff = ad::mul_const(t.sub(warped, t.constant(ref)), maskc);
    Var pix = ad::huber(diff, cfg.huber_delta);

    GradientPair gw = image_gradient(t, warped, h, w, c);
    auto [grx, gry] = image_gradient(ref);
    Var gdx = t.abs(ad::mul_const(t.sub(gw.gx, t.constant(grx)), maskc));
    Var gdy = t.abs(ad::mul_const(t.sub(gw.gy, t.constant(gry)), maskc));

    Var total = t.add(pix, t.add(gdx, gdy));
    Var per_pixel = t.sum_axis(t.reshape(total, {h * w, c}), 1);
    return t.reshape(per_pixel, {h, w});
}

Var topk_reproj(Tape& t, const std::vector<Var>& maps, const std::vector<Tensor>& masks,
                int k) {
    const int m = static_cast<int>(maps.size());
    if (m < 1 || masks.size() != maps.size())
        throw std::invalid_argument("topk_reproj: need matching nonempty maps and masks");
    if (k < 1 || k > m) throw std::invalid_argument("topk_reproj: need 1 <= K <= M");
    const int np = maps[0].value().numel();
    for (int i = 0; i < m; ++i)
        if (maps[static_cast<size_t>(i)].value().numel() != np ||
            masks[static_cast<size_t>(i)].numel() != np)
            throw std::invalid_argument("topk_reproj: shape mismatch");

    std::vector<Tensor> sel(static_cast<size_t>(m), Tensor({np}));
    std::vector<std::pair<double, int>> order;
    for (int p = 0; p < np; ++p) {
        order.clear();
        for (int i = 0; i < m; ++i)
            if (masks[static_cast<size_t>(i)].data[static_cast<size_t>(p)] > 0)
                order.emplace_back(maps[static_cast<size_t>(i)].value().data[static_cast<size_t>(p)],
                                   i);
        std::sort(order.begin(), order.end());
        const int take = std::min<int>(k, static_cast<int>(order.size()));
        for (int j = 0; j < take; ++j)
            sel[static_cast<size_t>(order[static_cast<size_t>(j)].second)]
                .data[static_cast<size_t>(p)] = 1.0;
    }

    Var acc = t.constant_scalar(0.0);
    for (int i = 0; i < m; ++i) {
        Var flat = t.reshape(maps[static_cast<size_t>(i)], {np});
        acc = t.add(acc, t.sum_all(ad::mul_const(flat, sel[static_cast<size_t>(i)])));
    }
    return t.scale(acc, 1.0 / np);
}

namespace {

ad::IndexMap window_index(int h, int w, int win) {
    const int r = win / 2;
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(h) * w * win * win);
    size_t q = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    bool in = yy >= 0 && yy < h && xx >= 0 && xx < w;
                    (*idx)[q++] = in ? yy * w + xx : -1;
                }
    return idx;
}

// windowed sum of a flat H*W signal
Var box_sum(Tape& t, Var x, const ad::IndexMap& idx, int h, int w, int win) {
    Var col = t.gather(x, idx, {h * w, win * win});
    Tensor ones({win * win, 1});
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    return t.reshape(t.matmul(col, t.constant(std::move(ones))), {h * w});
}

Tensor box_sum(const Tensor& x, const ad::IndexMap& idx, int h, int w, int win) {
    Tensor out({h * w});
    size_t q = 0;
    for (int p = 0; p < h * w; ++p) {
        double s = 0;
        for (int j = 0; j < win * win; ++j, ++q) {
            int i = (*idx)[q];
            if (i >= 0) s += x.data[static_cast<size_t>(i)];
        }
        out.data[static_cast<size_t>(p)] = s;
    }
    return out;
}

Tensor channel_of(const Tensor& img, int ch) {
    const int np = img.shape[0] * img.shape[1], c = img.shape[2];
    Tensor out({np});
    for (int p = 0; p < np; ++p) out.data[static_cast<size_t>(p)] = img.data[static_cast<size_t>(p * c + ch)];
    return out;
}

}  // namespace

Var ssim_loss(Tape& t, const Tensor& ref, const std::vector<Var>& warped,
              const std::vector<Tensor>& masks, const PhotoLossConfig& cfg) {
    if (warped.empty() || warped.size() != masks.size())
        throw std::invalid_argument("ssim_loss: need matching nonempty views and masks");
    const int h = ref.shape[0], w = ref.shape[1], c = ref.shape[2];
    if (cfg.ssim_window < 1 || cfg.ssim_window % 2 == 0 || cfg.ssim_window > std::min(h, w))
        throw std::invalid_argument("ssim_loss: window does not fit the image");
    const int win = cfg.ssim_window, np = h * w;
    const ad::IndexMap idx = window_index(h, w, win);

    Var acc = t.constant_scalar(0.0);
    double weight_total = 0.0;
    for (size_t v = 0; v < warped.size(); ++v) {
        if (warped[v].value().numel() != np * c || masks[v].numel() != np)
            throw std::invalid_argument("ssim_loss: shape mismatch");
        Tensor mask({np});
        for (int p = 0; p < np; ++p)
            mask.data[static_cast<size_t>(p)] = masks[v].data[static_cast<size_t>(p)] > 0 ? 1.0 : 0.0;
        Tensor cnt = box_sum(mask, idx, h, w, win);
        Tensor inv_cnt({np}), wmask({np});
        for (int p = 0; p < np; ++p) {
            bool ok = mask.data[static_cast<size_t>(p)] > 0 && cnt.data[static_cast<size_t>(p)] > 0;
            inv_cnt.data[static_cast<size_t>(p)] =
                cnt.data[static_cast<size_t>(p)] > 0 ? 1.0 / cnt.data[static_cast<size_t>(p)] : 0.0;
            wmask.data[static_cast<size_t>(p)] = ok ? 1.0 : 0.0;
            weight_total += ok ? 1.0 : 0.0;
        }

        Var wflat = t.reshape(warped[v], {np, c});
        for (int ch = 0; ch < c; ++ch) {
            Tensor x = channel_of(ref, ch);
            Tensor xm({np});
            for (int p = 0; p < np; ++p)
                xm.data[static_cast<size_t>(p)] =
                    x.data[static_cast<size_t>(p)] * mask.data[static_cast<size_t>(p)];

            Tensor mu_x = box_sum(xm, idx, h, w, win);
            Tensor xm2 = xm;
            for (int p = 0; p < np; ++p) xm2.data[static_cast<size_t>(p)] *= x.data[static_cast<size_t>(p)];
            Tensor ex2 = box_sum(xm2, idx, h, w, win);
            for (int p = 0; p < np; ++p) {
                mu_x.data[static_cast<size_t>(p)] *= inv_cnt.data[static_cast<size_t>(p)];
                ex2.data[static_cast<size_t>(p)] *= inv_cnt.data[static_cast<size_t>(p)];
            }

            // gather channel ch of the warped view, masked
            auto cidx = std::make_shared<std::vector<int>>(static_cast<size_t>(np));
            for (int p = 0; p < np; ++p) (*cidx)[static_cast<size_t>(p)] = p * c + ch;
            Var ym = ad::mul_const(t.gather(wflat, cidx, {np}), mask);

            Var mu_y = ad::mul_const(box_sum(t, ym, idx, h, w, win), inv_cnt);
            Var ey2 = ad::mul_const(box_sum(t, ad::square(ym), idx, h, w, win), inv_cnt);
            Var exy = ad::mul_const(box_sum(t, ad::mul_const(ym, x), idx, h, w, win), inv_cnt);

            Tensor var_x({np}), mu_x2_c1({np}), two_mu_x({np});
            for (int p = 0; p < np; ++p) {
                double m = mu_x.data[static_cast<size_t>(p)];
                var_x.data[static_cast<size_t>(p)] = ex2.data[static_cast<size_t>(p)] - m * m;
                mu_x2_c1.data[static_cast<size_t>(p)] = m * m + cfg.ssim_c1;
                two_mu_x.data[static_cast<size_t>(p)] = 2.0 * m;
            }
            Var var_y = t.sub(ey2, ad::square(mu_y));
            Var cov = t.sub(exy, ad::mul_const(mu_y, mu_x));

            Var num = t.mul(t.add(ad::mul_const(mu_y, two_mu_x), t.constant(Tensor({np}, std::vector<double>(static_cast<size_t>(np), cfg.ssim_c1)))),
                            t.add_scalar(t.scale(cov, 2.0), cfg.ssim_c2));
            Var den = t.mul(t.add(ad::square(mu_y), t.constant(mu_x2_c1)),
                            t.add(var_y, t.constant([&] {
                                Tensor v2 = var_x;
                                for (double& e : v2.data) e += cfg.ssim_c2;
                                return v2;
                            }())));
            Var loss = t.scale(t.add_scalar(t.neg(t.div(num, den)), 1.0), 0.5);

            // clamp to [0,1] with masks frozen at the forward values
            Tensor inm({np}), him({np});
            for (int p = 0; p < np; ++p) {
                double lv = loss.value().data[static_cast<size_t>(p)];
                him.data[static_cast<size_t>(p)] = lv > 1.0 ? 1.0 : 0.0;
                inm.data[static_cast<size_t>(p)] = (lv >= 0.0 && lv <= 1.0) ? 1.0 : 0.0;
            }
            Var clamped = t.add(ad::mul_const(loss, inm), t.constant(him));
            acc = t.add(acc, t.sum_all(ad::mul_const(clamped, wmask)));
        }
    }
    if (weight_total == 0.0) return t.constant_scalar(0.0);
    return t.scale(acc, 1.0 / (weight_total * c));
}

Var photometric_loss(Tape& t, Var theta, const net::Arch& arch,
                     const std::vector<geo::PosedImage>& views, int n_views,
                     const geo::DepthHypotheses& hyps, const PhotoLossConfig& cfg) {
    const int m = static_cast<int>(views.size()) - 1;
    if (m < 1) throw std::invalid_argument("photometric_loss: need at least one source view");
    if (n_views < 2 || n_views > static_cast<int>(views.size()))
        throw std::invalid_argument("photometric_loss: bad n_views");
    const int h = views[0].height(), w = views[0].width();
    cfg.validate(m, h, w);

    std::vector<geo::PosedImage> primary(views.begin(), views.begin() + n_views);
    Var depth = net::forward(t, theta, arch, primary, hyps);

    const geo::Camera ref_cam{views[0].intrinsics, views[0].pose};
    std::vector<Var> maps, warped;
    std::vector<Tensor> masks;
    for (int i = 1; i <= m; ++i) {
        geo::WarpResult wr = geo::inverse_warp(t, views[static_cast<size_t>(i)], ref_cam, depth);
        maps.push_back(reproj_error_per_view(t, views[0].image, wr.image, wr.mask, cfg));
        warped.push_back(wr.image);
        masks.push_back(wr.mask);
    }
    Var reproj = topk_reproj(t, maps, masks, cfg.top_k);
    Var ssim = ssim_loss(t, views[0].image, warped, masks, cfg);
    return t.add(reproj, t.scale(ssim, cfg.ssim_weight));
}

}  // namespace mvstta::photo

#include "mvstta/scenegen.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace mvstta::scene {

using geo::Camera;
using geo::Mat3;
using geo::Pose;
using geo::PosedImage;
using geo::Vec3;

const char* layout_name(Layout l) {
    switch (l) {
        case Layout::FrontoPlane: return "fronto-plane";
        case Layout::SlantedPlane: return "slanted-plane";
        case Layout::TwoPlaneStep: return "two-plane-step";
        case Layout::Box: return "box";
    }
    return "?";
}

Layout layout_from_name(const std::string& name) {
    for (Layout l : {Layout::FrontoPlane, Layout::SlantedPlane, Layout::TwoPlaneStep, Layout::Box})
        if (name == layout_name(l)) return l;
    throw std::invalid_argument("unknown layout: " + name);
}

// ---- procedural texture ----

static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

static double lattice(std::uint64_t seed, long long x, long long y, long long z) {
    std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(x) * 0x8da6b343ULL) ^
                                 splitmix64(static_cast<std::uint64_t>(y) * 0xd8163841ULL) ^
                                 splitmix64(static_cast<std::uint64_t>(z) * 0xcb1ab31fULL));
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

static double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

static double value_noise(std::uint64_t seed, Vec3 p) {
    long long x0 = static_cast<long long>(std::floor(p.x));
    long long y0 = static_cast<long long>(std::floor(p.y));
    long long z0 = static_cast<long long>(std::floor(p.z));
    double fx = smoothstep(p.x - x0), fy = smoothstep(p.y - y0), fz = smoothstep(p.z - z0);
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                acc += w * lattice(seed, x0 + dx, y0 + dy, z0 + dz);
            }
    return acc;
}

// Spatial frequencies stay below ~1 cycle per 8 pixels at scene depth so that
// bilinear resampling during warping keeps intensity error well under 0.02.
static double octave_noise(std::uint64_t seed, Vec3 p, int octaves) {
    double v = 0, amp = 1, freq = 0.9, norm = 0;
    for (int o = 0; o < octaves; ++o) {
        v += amp * value_noise(seed + static_cast<std::uint64_t>(o) * 1469598103ULL, freq * p);
        norm += amp;
        amp *= 0.55;
        freq *= 1.9;
    }
    return v / norm;
}

static double checker(Vec3 p, double cell) {
    // smooth checker: sharp edges would dominate the interpolation error
    double a = 2 * M_PI / cell;
    return 0.5 + 0.5 * std::sin(a * (p.x + 0.3 * p.z)) * std::sin(a * (p.y - 0.2 * p.z));
}

static void texture_rgb(const SceneGeometry& g, const Surface& srf, Vec3 p, double* rgb) {
    double chk = g.checker_overlay ? checker(p, 0.5) : 0.5;
    for (int c = 0; c < 3; ++c) {
        std::uint64_t salt =
            g.texture_seed ^ srf.texture_salt ^ (0x51ed2701ULL * static_cast<std::uint64_t>(c + 1));
        double n = octave_noise(salt, p, g.noise_octaves);
        double v = 0.15 + 0.7 * (0.62 * n + 0.38 * chk);
        rgb[c] = std::clamp(v, 0.0, 1.0);
    }
}

// ---- rendering ----

RenderResult render_view(const SceneGeometry& g, const Camera& cam, int h, int w,
                         double brightness) {
    const Mat3 kinv = cam.intr.K.inverse();
    const Mat3 rt = cam.pose.R.transposed();
    const Vec3 c = cam.pose.center();

    for (const Surface& s : g.surfaces)
        if (!s.bounded && s.off - dot(s.n, c) <= 0.05)
            throw std::invalid_argument("render_view: camera inside geometry");

    RenderResult out;
    out.image = Tensor({h, w, 3});
    out.depth = Tensor({h, w});
    out.hit = Tensor({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Vec3 dir_cam = kinv * Vec3{static_cast<double>(x), static_cast<double>(y), 1.0};
            Vec3 dir = rt * dir_cam;  // dir_cam.z == 1, so ray parameter == depth
            double best = 0;
            const Surface* hit = nullptr;
            Vec3 hitp;
            for (const Surface& s : g.surfaces) {
                double denom = dot(s.n, dir);
                if (std::abs(denom) < 1e-12) continue;
                double sd = (s.off - dot(s.n, c)) / denom;
                if (sd <= 1e-6) continue;
                Vec3 p = c + sd * dir;
                if (s.bounded) {
                    Vec3 rel = p - s.p0;
                    if (std::abs(dot(rel, s.u)) > s.u_half || std::abs(dot(rel, s.v)) > s.v_half)
                        continue;
                }
                if (!hit || sd < best) {
                    best = sd;
                    hit = &s;
                    hitp = p;
                }
            }
            int q = y * w + x;
            if (!hit) continue;
            out.depth[q] = best;
            out.hit[q] = 1.0;
            double rgb[3];
            texture_rgb(g, *hit, hitp, rgb);
            for (int ch = 0; ch < 3; ++ch) {
                double v = std::clamp(rgb[ch] * brightness, 0.0, 1.0);
                out.image[q * 3 + ch] = std::round(v * 255.0) / 255.0;  // 8-bit grid
            }
        }
    return out;
}

// ---- scene construction ----

static Pose look_at(Vec3 eye, Vec3 target) {
    Vec3 z = normalized(target - eye);
    Vec3 up{0, 1, 0};
    if (std::abs(dot(up, z)) > 0.99) up = {1, 0, 0};
    Vec3 x = normalized(cross(up, z));
    Vec3 y = cross(z, x);
    Pose p;
    p.R.m = {x.x, x.y, x.z, y.x, y.y, y.z, z.x, z.y, z.z};
    p.t = -1.0 * (p.R * eye);
    return p;
}

static geo::Intrinsics default_intrinsics(int h, int w) {
    geo::Intrinsics in;
    in.K = Mat3::identity();
    in.K(0, 0) = static_cast<double>(w);
    in.K(1, 1) = static_cast<double>(w);
    in.K(0, 2) = (w - 1) / 2.0;
    in.K(1, 2) = (h - 1) / 2.0;
    return in;
}

SceneSample generate_scene(const SceneSpec& spec, std::uint64_t scene_seed) {
    std::mt19937_64 rng(splitmix64(scene_seed ^ splitmix64(spec.seed)));
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };

    const int nviews = spec.m_views + 1;
    const double dist = 0.5 * (spec.d_min + spec.d_max);
    const double range = spec.d_max - spec.d_min;
    const geo::Intrinsics intr = default_intrinsics(spec.height, spec.width);

    // cameras on a ring facing the world origin
    std::vector<Camera> cams;
    double a0 = uni(0, 2 * M_PI);
    for (int v = 0; v < nviews; ++v) {
        double a = a0 + v * 2 * M_PI / nviews;
        Vec3 eye{spec.ring_radius * std::cos(a), spec.ring_radius * std::sin(a),
                 -dist + uni(-0.02, 0.02) * range};
        Vec3 target{uni(-1, 1) * spec.lookat_jitter, uni(-1, 1) * spec.lookat_jitter,
                    uni(-1, 1) * spec.lookat_jitter};
        cams.push_back({intr, look_at(eye, target)});
    }
    const Camera& ref = cams[0];
    const Vec3 n_ref = geo::principal_axis(ref.pose);
    const Vec3 c_ref = ref.pose.center();
    const Vec3 x_ref = ref.pose.R.transposed() * Vec3{1, 0, 0};
    const Vec3 y_ref = ref.pose.R.transposed() * Vec3{0, 1, 0};

    SceneGeometry g;
    g.texture_seed = splitmix64(scene_seed * 0x9e3779b97f4a7c15ULL + 17);
    g.checker_overlay = spec.checker_overlay;
    g.noise_octaves = spec.noise_octaves;

    auto fronto = [&](double z0) {
        Surface s;
        s.n = n_ref;
        s.off = dot(n_ref, c_ref) + z0;
        return s;
    };

    switch (spec.layout) {
        case Layout::FrontoPlane: {
            Surface s = fronto(uni(spec.d_min + 0.3 * range, spec.d_max - 0.3 * range));
            g.surfaces.push_back(s);
            break;
        }
        case Layout::SlantedPlane: {
            double z0 = uni(spec.d_min + 0.35 * range, spec.d_max - 0.35 * range);
            double tilt = uni(0.08, 0.20), phi = uni(0, 2 * M_PI);
            Vec3 n = normalized(n_ref + tilt * (std::cos(phi) * x_ref) + tilt * (std::sin(phi) * y_ref));
            Surface s;
            s.n = n;
            s.off = dot(n, c_ref + z0 * n_ref);
            g.surfaces.push_back(s);
            break;
        }
        case Layout::TwoPlaneStep: {
            double z1 = uni(spec.d_min + 0.15 * range, spec.d_min + 0.4 * range);
            double z2 = uni(spec.d_max - 0.4 * range, spec.d_max - 0.15 * range);
            double edge = uni(-0.3, 0.3);
            Surface near = fronto(z1);
            near.bounded = true;
            near.p0 = c_ref + z1 * n_ref + (edge - 2.0) * x_ref;
            near.u = x_ref;
            near.v = y_ref;
            near.u_half = 2.0;
            near.v_half = 20.0;
            near.texture_salt = 0xa5;
            g.surfaces.push_back(near);
            g.surfaces.push_back(fronto(z2));
            break;
        }
        case Layout::Box: {
            double z1 = uni(spec.d_min + 0.15 * range, spec.d_min + 0.4 * range);
            double z2 = uni(spec.d_max - 0.35 * range, spec.d_max - 0.1 * range);
            Surface front = fronto(z1);
            front.bounded = true;
            front.p0 = c_ref + z1 * n_ref + uni(-0.25, 0.25) * x_ref + uni(-0.2, 0.2) * y_ref;
            front.u = x_ref;
            front.v = y_ref;
            front.u_half = uni(0.35, 0.7);
            front.v_half = uni(0.3, 0.55);
            front.texture_salt = 0x3c;
            g.surfaces.push_back(front);
            g.surfaces.push_back(fronto(z2));
            break;
        }
    }

    SceneSample sample;
    sample.hyps = {spec.d_min, spec.d_max, spec.hypothesis_count};
    for (int v = 0; v < nviews; ++v) {
        double brightness = 1.0;
        if (v > 0 && spec.brightness_jitter > 0)
            brightness = 1.0 + uni(-1, 1) * spec.brightness_jitter;
        RenderResult r = render_view(g, cams[v], spec.height, spec.width, brightness);
        sample.views.push_back({std::move(r.image), cams[v].intr, cams[v].pose});
        if (v == 0) {
            sample.gt_depth = std::move(r.depth);
            sample.valid = std::move(r.hit);
        }
    }

    for (int i = 0; i < sample.gt_depth.numel(); ++i)
        if (sample.valid[i] > 0 &&
            (sample.gt_depth[i] < spec.d_min || sample.gt_depth[i] > spec.d_max))
            throw std::runtime_error("generate_scene: ground-truth depth outside hypothesis range");
    return sample;
}

std::vector<SceneSample> generate_dataset(const SceneSpec& spec, int count, Split split) {
    if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    std::vector<SceneSample> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::uint64_t s = 2ULL * static_cast<std::uint64_t>(i) + (split == Split::Test ? 1 : 0);
        out.push_back(generate_scene(spec, s));
    }
    return out;
}

// ---- PPM / PFM ----

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("write_ppm: image must be HxWx3");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << image.shape[1] << " " << image.shape[0] << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(image.numel()));
    for (int i = 0; i < image.numel(); ++i)
        buf[static_cast<size_t>(i)] =
            static_cast<unsigned char>(std::clamp(std::lround(image[i] * 255.0), 0L, 255L));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    f >> magic >> w >> h >> maxv;
    if (magic != "P6" || w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("read_ppm: malformed header in " + path);
    f.get();  // single whitespace after header
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path);
    Tensor img({h, w, 3});
    for (size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
    return img;
}

void write_pfm(const std::string& path, const Tensor& depth) {
    if (depth.shape.size() != 2) throw std::invalid_argument("write_pfm: depth must be HxW");
    const int h = depth.shape[0], w = depth.shape[1];
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pfm: cannot open " + path);
    f << "Pf\n" << w << " " << h << "\n-1.0\n";  // negative scale: little endian
    std::vector<float> row(static_cast<size_t>(w));
    for (int y = h - 1; y >= 0; --y) {  // PFM stores rows bottom to top
        for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(depth[y * w + x]);
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("write_pfm: write failed for " + path);
}

Tensor read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pfm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    f >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0)
        throw std::runtime_error("read_pfm: malformed header in " + path);
    f.get();
    Tensor depth({h, w});
    std::vector<float> row(static_cast<size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(row.size() * sizeof(float)))
            throw std::runtime_error("read_pfm: truncated data in " + path);
        for (int x = 0; x < w; ++x) depth[y * w + x] = row[static_cast<size_t>(x)];
    }
    return depth;
}

// ---- scene directories ----

static void write_cam(const std::string& path, const Camera& cam,
                      const geo::DepthHypotheses& hyps) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_cam: cannot open " + path);
    char line[256];
    const Mat3& r = cam.pose.R;
    const Vec3 t = cam.pose.t;
    const double ext[4][4] = {{r(0, 0), r(0, 1), r(0, 2), t.x},
                              {r(1, 0), r(1, 1), r(1, 2), t.y},
                              {r(2, 0), r(2, 1), r(2, 2), t.z},
                              {0, 0, 0, 1}};
    for (auto& row : ext) {
        std::snprintf(line, sizeof line, "%.17g %.17g %.17g %.17g\n", row[0], row[1], row[2], row[3]);
        f << line;
    }
    f << "\n";
    for (int i = 0; i < 3; ++i) {
        std::snprintf(line, sizeof line, "%.17g %.17g %.17g\n", cam.intr.K(i, 0), cam.intr.K(i, 1),
                      cam.intr.K(i, 2));
        f << line;
    }
    f << "\n";
    std::snprintf(line, sizeof line, "%.17g %.17g %d\n", hyps.d_min, hyps.interval(), hyps.count);
    f << line;
}

static Camera read_cam(const std::string& path, geo::DepthHypotheses& hyps) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_cam: cannot open " + path);
    Camera cam;
    double ext[4][4];
    for (auto& row : ext)
        for (double& v : row)
            if (!(f >> v)) throw std::runtime_error("read_cam: malformed extrinsics in " + path);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) cam.pose.R(i, j) = ext[i][j];
    cam.pose.t = {ext[0][3], ext[1][3], ext[2][3]};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(f >> cam.intr.K(i, j)))
                throw std::runtime_error("read_cam: malformed intrinsics in " + path);
    double interval = 0;
    int d = 0;
    if (!(f >> hyps.d_min >> interval >> d))
        throw std::runtime_error("read_cam: malformed depth range line in " + path);
    hyps.count = d;
    hyps.d_max = hyps.d_min + interval * (d - 1);
    return cam;
}

void write_scene(const std::string& dir, const SceneSample& s) {
    fs::path tmp = fs::path(dir).concat(".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp / "images");
    fs::create_directories(tmp / "cams");
    fs::create_directories(tmp / "depth");
    char name[32];
    for (size_t i = 0; i < s.views.size(); ++i) {
        std::snprintf(name, sizeof name, "%03zu", i);
        write_ppm((tmp / "images" / (std::string(name) + ".ppm")).string(), s.views[i].image);
        write_cam((tmp / "cams" / (std::string(name) + ".txt")).string(),
                  {s.views[i].intrinsics, s.views[i].pose}, s.hyps);
    }
    Tensor masked = s.gt_depth;
    for (int i = 0; i < masked.numel(); ++i)
        if (s.valid[i] == 0.0) masked[i] = 0.0;
    write_pfm((tmp / "depth" / "ref.pfm").string(), masked);
    {
        std::ofstream meta((tmp / "meta.txt").string());
        meta << "views " << s.views.size() << "\n"
             << "height " << s.gt_depth.shape[0] << "\nwidth " << s.gt_depth.shape[1] << "\n"
             << "d_min " << s.hyps.d_min << "\nd_max " << s.hyps.d_max << "\nhypotheses "
             << s.hyps.count << "\n";
    }
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

SceneSample read_scene(const std::string& dir) {
    SceneSample s;
    char name[32];
    for (size_t i = 0;; ++i) {
        std::snprintf(name, sizeof name, "%03zu", i);
        fs::path img = fs::path(dir) / "images" / (std::string(name) + ".ppm");
        fs::path cam = fs::path(dir) / "cams" / (std::string(name) + ".txt");
        if (!fs::exists(img)) break;
        geo::DepthHypotheses hyps;
        Camera c = read_cam(cam.string(), hyps);
        s.views.push_back({read_ppm(img.string()), c.intr, c.pose});
        s.hyps = hyps;
    }
    if (s.views.empty()) throw std::runtime_error("read_scene: no views found in " + dir);
    s.gt_depth = read_pfm((fs::path(dir) / "depth" / "ref.pfm").string());
    s.valid = Tensor(s.gt_depth.shape);
    for (int i = 0; i < s.gt_depth.numel(); ++i) s.valid[i] = s.gt_depth[i] > 0 ? 1.0 : 0.0;
    return s;
}

}  // namespace mvstta::scene

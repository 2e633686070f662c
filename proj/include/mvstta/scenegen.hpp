#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstta/geometry.hpp"
#include "mvstta/tensor.hpp"

namespace mvstta::scene {

enum class Layout { FrontoPlane, SlantedPlane, TwoPlaneStep, Box };

const char* layout_name(Layout l);
Layout layout_from_name(const std::string& name);

struct SceneSpec {
    std::uint64_t seed = 0;
    Layout layout = Layout::TwoPlaneStep;
    int height = 32;
    int width = 48;
    double d_min = 2.0;
    double d_max = 4.0;
    int hypothesis_count = 16;
    int n_views = 3;  // views for the primary task (reference + N-1 sources)
    int m_views = 4;  // source views for the photometric objective
    double ring_radius = 0.22;
    double lookat_jitter = 0.02;
    double brightness_jitter = 0.0;  // per-source-view intensity perturbation
    bool checker_overlay = true;
    int noise_octaves = 3;
};

// One MVS task: reference view first, then M source views.
struct SceneSample {
    std::vector<geo::PosedImage> views;
    Tensor gt_depth;  // H x W, reference view
    Tensor valid;     // H x W, 1 where gt depth is defined
    geo::DepthHypotheses hyps;
};

// A textured plane, optionally bounded in its own uv frame.
struct Surface {
    geo::Vec3 n;      // unit normal
    double off = 0;   // plane equation n . X = off
    bool bounded = false;
    geo::Vec3 p0, u, v;
    double u_half = 0, v_half = 0;
    std::uint64_t texture_salt = 0;
};

struct SceneGeometry {
    std::vector<Surface> surfaces;  // tested in order, nearest hit wins
    std::uint64_t texture_seed = 0;
    bool checker_overlay = true;
    int noise_octaves = 3;
};

struct RenderResult {
    Tensor image;  // H x W x 3 quantized to 8-bit levels
    Tensor depth;  // H x W, 0 where no geometry hit
    Tensor hit;    // H x W
};

// Per-pixel ray casting; Lambertian shading straight from the procedural
// texture, so intensity is view independent.
RenderResult render_view(const SceneGeometry& g, const geo::Camera& cam, int h, int w,
                         double brightness = 1.0);

SceneSample generate_scene(const SceneSpec& spec, std::uint64_t scene_seed);

enum class Split { Train, Test };

// Deterministic function of (spec, count, split); train and test scene seeds
// have opposite parity, so the splits never share a scene.
std::vector<SceneSample> generate_dataset(const SceneSpec& spec, int count, Split split);

// ---- file formats ----

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& depth);
Tensor read_pfm(const std::string& path);

void write_scene(const std::string& dir, const SceneSample& s);
SceneSample read_scene(const std::string& dir);

}  // namespace mvstta::scene

#ifndef CHARDIFF_SYNTHDATA_HPP
#define CHARDIFF_SYNTHDATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chardiff/rng.hpp"
#include "chardiff/tensor.hpp"

namespace chardiff {

// Palette sizes. Identities [0, kTrainIdentities) are the training pool;
// [kTrainIdentities, kNumIdentities) are held out for evaluation.
constexpr int kNumIdentities = 24;
constexpr int kTrainIdentities = 16;
constexpr int kNumClothing = 16;
constexpr int kNumBackgrounds = 8;
constexpr int kNumCaptionTemplates = 8;
constexpr int kPoseKeypoints = 7;  // head, neck, pelvis, hands, feet
constexpr int kDefaultCanvas = 64;
constexpr int kLatentFactor = 8;
constexpr int kMaxCaptionLen = 8;
constexpr int kFaceCropSize = 16;
constexpr int kBodyCropSize = 32;

struct Rect {
    int x0 = 0, y0 = 0, w = 0, h = 0;
    bool contains(const Rect& inner) const {
        return inner.x0 >= x0 && inner.y0 >= y0 && inner.x0 + inner.w <= x0 + w &&
               inner.y0 + inner.h <= y0 + h;
    }
};

struct Keypoint {
    double x = 0.0, y = 0.0;
};

using PoseKeypoints = std::array<Keypoint, kPoseKeypoints>;

struct SceneSpec {
    int num_characters = 1;
    int canvas_size = kDefaultCanvas;
    std::vector<int> identity_ids;
    uint64_t pose_seed = 0;
    int background_id = 0;
    int caption_template_id = 0;
};

struct CharacterReference {
    Tensor face_crop;  // (3, 16, 16)
    Tensor body_crop;  // (3, 32, 32)
    Tensor mask;       // (H, W), binary
    PoseKeypoints pose;
    int identity_id = 0;
    int clothing_id = 0;
    Rect body_rect;  // source rect in the canvas
    Rect face_rect;  // sub-rect of body_rect
};

struct Scene {
    SceneSpec spec;
    uint64_t seed = 0;
    Tensor image;               // (3, H, W) in [0,1]
    std::vector<Tensor> masks;  // N+1 binary maps, index 0 = background
    std::vector<CharacterReference> characters;
    std::vector<int> caption;   // token ids, <= kMaxCaptionLen

    std::vector<PoseKeypoints> all_poses() const {
        std::vector<PoseKeypoints> out;
        for (const auto& c : characters) out.push_back(c.pose);
        return out;
    }
};

// --- caption vocabulary (closed; ids are stable) ---
const std::vector<std::string>& caption_vocab();
int vocab_size();
int vocab_id(const std::string& word);                  // throws on unknown word
std::vector<int> tokenize_caption(const std::string& text);
std::string caption_to_string(const std::vector<int>& ids);

Scene generate_scene(const SceneSpec& spec, uint64_t seed);
Scene perturb_pose(const Scene& scene, uint64_t new_pose_seed);

struct Dataset {
    int count = 0;
    double mix = 0.6;
    uint64_t seed = 0;
    int canvas = kDefaultCanvas;
    bool holdout = false;
    std::vector<Scene> scenes;
};

// mix = fraction of single-character scenes (counts are exact, not sampled)
Dataset generate_dataset(int count, double mix, uint64_t seed, bool holdout = false,
                         int canvas = kDefaultCanvas);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// identity / clothing appearance parameters (used by tests and eval)
struct IdentityLook {
    double face_r, face_g, face_b;
    double skin_r, skin_g, skin_b;
    double eye_spacing;  // fraction of head radius
    double eye_radius;
};
IdentityLook identity_look(int identity_id);

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

// nearest-neighbor crop + resize from a (3,H,W) canvas
Tensor crop_resize(const Tensor& img, const Rect& r, int out_size);

}  // namespace chardiff

#endif

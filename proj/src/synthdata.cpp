#include "chardiff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

#include "chardiff/io.hpp"

namespace fs = std::filesystem;

namespace chardiff {

namespace {

double fract(double x) { return x - std::floor(x); }

constexpr double kPi = 3.14159265358979323846;

struct ClothingLook {
    int pattern;  // 0 solid, 1 stripes, 2 checker
    int period;
    double ar, ag, ab;  // primary color
    double br, bg, bb;  // secondary color
};

ClothingLook clothing_look(int clothing_id) {
    ClothingLook c;
    c.pattern = clothing_id % 3;
    c.period = 2 + clothing_id % 3;
    double hue_a = fract(0.13 + clothing_id * 0.61803398875);
    double hue_b = fract(hue_a + 0.45 + 0.1 * fract(clothing_id * 0.271));
    hsv_to_rgb(hue_a, 0.85, 0.9, c.ar, c.ag, c.ab);
    hsv_to_rgb(hue_b, 0.85, 0.7, c.br, c.bg, c.bb);
    return c;
}

struct BackgroundLook {
    int style;  // 0 solid, 1 vertical gradient
    double r, g, b;
    double r2, g2, b2;
};

BackgroundLook background_look(int background_id) {
    BackgroundLook bg;
    bg.style = background_id % 2;
    double hue = fract(0.52 + background_id * 0.61803398875);
    double val = 0.18 + 0.25 * fract(background_id * 0.737);
    hsv_to_rgb(hue, 0.25, val, bg.r, bg.g, bg.b);
    hsv_to_rgb(fract(hue + 0.08), 0.2, val + 0.18, bg.r2, bg.g2, bg.b2);
    return bg;
}

// Paint state for one scene: pixels carry a region owner so the masks
// partition the canvas by construction. A character may repaint its own
// pixels (head over torso) but never pixels owned by another character.
struct Painter {
    Tensor* img;
    std::vector<int> owner;  // region index per pixel, 0 = background
    int size;

    Painter(Tensor* image, int canvas) : img(image), owner(canvas * canvas, 0), size(canvas) {}

    void put(int x, int y, double r, double g, double b, int region) {
        if (x < 0 || y < 0 || x >= size || y >= size) return;
        int& own = owner[y * size + x];
        if (own != 0 && own != region) return;
        own = region;
        img->at3(0, y, x) = r;
        img->at3(1, y, x) = g;
        img->at3(2, y, x) = b;
    }

    void fill_circle(double cx, double cy, double rad, double r, double g, double b, int region) {
        int x0 = static_cast<int>(std::floor(cx - rad)), x1 = static_cast<int>(std::ceil(cx + rad));
        int y0 = static_cast<int>(std::floor(cy - rad)), y1 = static_cast<int>(std::ceil(cy + rad));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= rad * rad) put(x, y, r, g, b, region);
            }
    }

    void thick_line(double x0, double y0, double x1, double y1, double halfwidth, double r,
                    double g, double b, int region) {
        double minx = std::min(x0, x1) - halfwidth - 1, maxx = std::max(x0, x1) + halfwidth + 1;
        double miny = std::min(y0, y1) - halfwidth - 1, maxy = std::max(y0, y1) + halfwidth + 1;
        double vx = x1 - x0, vy = y1 - y0;
        double len2 = vx * vx + vy * vy;
        for (int y = static_cast<int>(std::floor(miny)); y <= static_cast<int>(std::ceil(maxy));
             ++y)
            for (int x = static_cast<int>(std::floor(minx));
                 x <= static_cast<int>(std::ceil(maxx)); ++x) {
                double px = x + 0.5 - x0, py = y + 0.5 - y0;
                double t = len2 > 0 ? std::clamp((px * vx + py * vy) / len2, 0.0, 1.0) : 0.0;
                double dx = px - t * vx, dy = py - t * vy;
                if (dx * dx + dy * dy <= halfwidth * halfwidth) put(x, y, r, g, b, region);
            }
    }
};

void validate_spec(const SceneSpec& spec) {
    if (spec.num_characters != 1 && spec.num_characters != 2)
        throw std::invalid_argument("num_characters must be 1 or 2");
    if (static_cast<int>(spec.identity_ids.size()) != spec.num_characters)
        throw std::invalid_argument("identity_ids length must equal num_characters");
    if (spec.canvas_size % kLatentFactor != 0)
        throw std::invalid_argument("canvas_size must be divisible by 8");
    for (int id : spec.identity_ids)
        if (id < 0 || id >= kNumIdentities)
            throw std::invalid_argument("identity_id out of palette range");
    if (spec.background_id < 0 || spec.background_id >= kNumBackgrounds)
        throw std::invalid_argument("background_id out of range");
    if (spec.caption_template_id < 0 || spec.caption_template_id >= kNumCaptionTemplates)
        throw std::invalid_argument("caption_template_id out of range");
}

const char* count_word(int n) { return n == 1 ? "one" : "two"; }
const char* char_word(int n) { return n == 1 ? "character" : "characters"; }

const std::vector<std::string> kBackgroundWords = {"plain", "dusk",  "mist",  "field",
                                                   "night", "dawn",  "stone", "moss"};
const std::vector<std::string> kActionWords = {"standing", "waving",  "walking", "resting",
                                               "reaching", "leaning", "posing",  "cheering"};

std::string pose_action(const std::vector<PoseKeypoints>& poses) {
    int raised = 0;
    double spread = 0.0;
    for (const auto& p : poses) {
        if (p[3].y < p[1].y) ++raised;
        if (p[4].y < p[1].y) ++raised;
        spread = std::max(spread, std::fabs(p[5].x - p[6].x));
    }
    if (raised >= 2) return "cheering";
    if (raised == 1) return "waving";
    if (spread > 13.0) return "walking";
    return "standing";
}

std::vector<int> make_caption(const SceneSpec& spec, const std::vector<PoseKeypoints>& poses) {
    const std::string bg = kBackgroundWords[spec.background_id];
    const std::string act = pose_action(poses);
    const std::string cnt = count_word(spec.num_characters);
    const std::string chw = char_word(spec.num_characters);
    std::vector<std::string> words;
    switch (spec.caption_template_id) {
        case 0: words = {cnt, chw, act, "on", bg, "background"}; break;
        case 1: words = {"a", "scene", "with", cnt, chw, act}; break;
        case 2: words = {cnt, chw, "on", bg, "background"}; break;
        case 3: words = {act, chw, "in", "the", bg}; break;
        case 4: words = {cnt, chw, act}; break;
        case 5: words = {"a", bg, "scene", "with", cnt, chw}; break;
        case 6: words = {cnt, act, chw}; break;
        default: words = {cnt, chw, act, "in", "the", bg}; break;
    }
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(vocab_id(w));
    return ids;
}

}  // namespace

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    double i = std::floor(h * 6.0);
    double f = h * 6.0 - i;
    double p = v * (1.0 - s);
    double q = v * (1.0 - f * s);
    double t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

IdentityLook identity_look(int identity_id) {
    IdentityLook look;
    double hue = fract(0.07 + identity_id * 0.61803398875);
    double sat = 0.6 + 0.35 * fract(identity_id * 0.382);
    hsv_to_rgb(hue, sat, 0.95, look.face_r, look.face_g, look.face_b);
    hsv_to_rgb(hue, 0.35, 0.8, look.skin_r, look.skin_g, look.skin_b);
    look.eye_spacing = 0.3 + 0.25 * fract(identity_id * 0.271);
    look.eye_radius = 0.1 + 0.1 * fract(identity_id * 0.737);
    return look;
}

const std::vector<std::string>& caption_vocab() {
    static const std::vector<std::string> vocab = [] {
        std::vector<std::string> v = {"<pad>", "a",   "one", "two",        "character",
                                      "characters",  "scene", "with", "on", "in",
                                      "the",         "background"};
        v.insert(v.end(), kBackgroundWords.begin(), kBackgroundWords.end());
        v.insert(v.end(), kActionWords.begin(), kActionWords.end());
        return v;
    }();
    return vocab;
}

int vocab_size() { return static_cast<int>(caption_vocab().size()); }

int vocab_id(const std::string& word) {
    static const std::map<std::string, int> index = [] {
        std::map<std::string, int> m;
        const auto& v = caption_vocab();
        for (size_t i = 0; i < v.size(); ++i) m[v[i]] = static_cast<int>(i);
        return m;
    }();
    auto it = index.find(word);
    if (it == index.end()) throw std::invalid_argument("word not in vocabulary: " + word);
    return it->second;
}

std::vector<int> tokenize_caption(const std::string& text) {
    std::vector<int> ids;
    std::string word;
    for (char c : text + " ") {
        if (c == ' ' || c == '\t' || c == '\n') {
            if (!word.empty()) {
                ids.push_back(vocab_id(word));
                word.clear();
            }
        } else {
            word += c;
        }
    }
    if (static_cast<int>(ids.size()) > kMaxCaptionLen)
        throw std::invalid_argument("caption longer than max length");
    return ids;
}

std::string caption_to_string(const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += " ";
        out += caption_vocab().at(ids[i]);
    }
    return out;
}

Tensor crop_resize(const Tensor& img, const Rect& r, int out_size) {
    Tensor out({3, out_size, out_size});
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) {
            int sx = r.x0 + (x * r.w) / out_size;
            int sy = r.y0 + (y * r.h) / out_size;
            sx = std::clamp(sx, 0, img.shape[2] - 1);
            sy = std::clamp(sy, 0, img.shape[1] - 1);
            for (int c = 0; c < 3; ++c) out.at3(c, y, x) = img.at3(c, sy, sx);
        }
    return out;
}

Scene generate_scene(const SceneSpec& spec, uint64_t seed) {
    validate_spec(spec);
    const int size = spec.canvas_size;
    const int n = spec.num_characters;

    Scene scene;
    scene.spec = spec;
    scene.seed = seed;
    scene.image = Tensor({3, size, size});

    // background
    BackgroundLook bg = background_look(spec.background_id);
    for (int y = 0; y < size; ++y) {
        double t = bg.style == 1 ? static_cast<double>(y) / (size - 1) : 0.0;
        double r = bg.r + t * (bg.r2 - bg.r);
        double g = bg.g + t * (bg.g2 - bg.g);
        double b = bg.b + t * (bg.b2 - bg.b);
        for (int x = 0; x < size; ++x) {
            scene.image.at3(0, y, x) = r;
            scene.image.at3(1, y, x) = g;
            scene.image.at3(2, y, x) = b;
        }
    }

    Painter paint(&scene.image, size);
    double unit = size / 64.0;

    for (int slot = 0; slot < n; ++slot) {
        const int region = slot + 1;
        const int identity = spec.identity_ids[slot];
        IdentityLook look = identity_look(identity);

        // appearance stream: stable under pose perturbation
        Rng app(derive_seed(seed, 0xA11CE, slot));
        int clothing_id = static_cast<int>(derive_seed(seed, 0xC10, slot) % kNumClothing);
        ClothingLook cloth = clothing_look(clothing_id);
        double head_r = (4.8 + 1.4 * app.uniform()) * unit;
        double torso_hw = (4.0 + 1.4 * app.uniform()) * unit;

        // pose stream
        Rng pose(derive_seed(spec.pose_seed, 0xB0DE, slot));
        double base_x = (n == 1 ? 32.0 + (pose.uniform() - 0.5) * 12.0
                                : (slot == 0 ? 14.0 : 50.0) + (pose.uniform() - 0.5) * 4.0) *
                        unit;
        double ground_y = (54.0 + pose.uniform() * 4.0) * unit;
        double torso_h = (16.0 + pose.uniform() * 5.0) * unit;
        double leg_len = (9.0 + pose.uniform() * 3.0) * unit;
        double arm_len = (7.5 + pose.uniform() * 1.5) * unit;
        // arm angle from down-vertical: 0 = hanging, pi = straight up
        double ang_l = pose.uniform(0.15, 0.9) * kPi;
        double ang_r = pose.uniform(0.15, 0.9) * kPi;
        double leg_spread = pose.uniform(0.08, 0.45);
        double head_dx = (pose.uniform() - 0.5) * 3.0 * unit;

        double pelvis_y = ground_y - leg_len;
        double neck_y = pelvis_y - torso_h;

        PoseKeypoints kp;
        kp[0] = {base_x + head_dx, neck_y - head_r - 1.0};               // head
        kp[1] = {base_x, neck_y};                                        // neck
        kp[2] = {base_x, pelvis_y};                                      // pelvis
        kp[3] = {base_x - torso_hw - arm_len * std::sin(ang_l),
                 neck_y + arm_len * std::cos(ang_l)};                    // left hand
        kp[4] = {base_x + torso_hw + arm_len * std::sin(ang_r),
                 neck_y + arm_len * std::cos(ang_r)};                    // right hand
        kp[5] = {base_x - leg_len * std::sin(leg_spread), ground_y};     // left foot
        kp[6] = {base_x + leg_len * std::sin(leg_spread), ground_y};     // right foot

        // legs (trouser tone)
        paint.thick_line(kp[2].x, kp[2].y, kp[5].x, kp[5].y, 1.3 * unit, cloth.br * 0.6,
                         cloth.bg * 0.6, cloth.bb * 0.6, region);
        paint.thick_line(kp[2].x, kp[2].y, kp[6].x, kp[6].y, 1.3 * unit, cloth.br * 0.6,
                         cloth.bg * 0.6, cloth.bb * 0.6, region);
        // torso with clothing pattern
        int tx0 = static_cast<int>(std::floor(base_x - torso_hw));
        int tx1 = static_cast<int>(std::ceil(base_x + torso_hw));
        int ty0 = static_cast<int>(std::floor(neck_y));
        int ty1 = static_cast<int>(std::ceil(pelvis_y));
        for (int y = ty0; y <= ty1; ++y)
            for (int x = tx0; x <= tx1; ++x) {
                bool alt = false;
                if (cloth.pattern == 1) alt = ((y - ty0) / cloth.period) % 2 == 1;
                if (cloth.pattern == 2)
                    alt = (((x - tx0) / cloth.period) + ((y - ty0) / cloth.period)) % 2 == 1;
                if (alt)
                    paint.put(x, y, cloth.br, cloth.bg, cloth.bb, region);
                else
                    paint.put(x, y, cloth.ar, cloth.ag, cloth.ab, region);
            }
        // arms (skin tone)
        paint.thick_line(base_x - torso_hw, neck_y + 1.0, kp[3].x, kp[3].y, 1.1 * unit,
                         look.skin_r, look.skin_g, look.skin_b, region);
        paint.thick_line(base_x + torso_hw, neck_y + 1.0, kp[4].x, kp[4].y, 1.1 * unit,
                         look.skin_r, look.skin_g, look.skin_b, region);
        // head with identity hue and eye geometry
        paint.fill_circle(kp[0].x, kp[0].y, head_r, look.face_r, look.face_g, look.face_b,
                          region);
        double eye_y = kp[0].y - head_r * 0.15;
        double eye_dx = head_r * look.eye_spacing;
        double eye_r = std::max(0.6, head_r * look.eye_radius);
        paint.fill_circle(kp[0].x - eye_dx, eye_y, eye_r, 0.05, 0.05, 0.1, region);
        paint.fill_circle(kp[0].x + eye_dx, eye_y, eye_r, 0.05, 0.05, 0.1, region);

        CharacterReference ref;
        ref.identity_id = identity;
        ref.clothing_id = clothing_id;
        ref.pose = kp;
        scene.characters.push_back(ref);
    }

    // masks from ownership map
    scene.masks.assign(n + 1, Tensor({size, size}));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) scene.masks[paint.owner[y * size + x]].at(y, x) = 1.0;

    // crops and rects from the final ownership map
    for (int slot = 0; slot < n; ++slot) {
        CharacterReference& ref = scene.characters[slot];
        ref.mask = scene.masks[slot + 1];
        int minx = size, miny = size, maxx = -1, maxy = -1;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (paint.owner[y * size + x] == slot + 1) {
                    minx = std::min(minx, x);
                    maxx = std::max(maxx, x);
                    miny = std::min(miny, y);
                    maxy = std::max(maxy, y);
                }
        if (maxx < minx) throw std::runtime_error("character rendered no pixels");
        ref.body_rect = {minx, miny, maxx - minx + 1, maxy - miny + 1};

        const Keypoint& head = ref.pose[0];
        double head_r_px = head.y >= 0 ? (ref.pose[1].y - head.y - 1.0) : 4.0;
        int fr = static_cast<int>(std::ceil(head_r_px + 1.0));
        Rect face{static_cast<int>(head.x) - fr, static_cast<int>(head.y) - fr, 2 * fr + 1,
                  2 * fr + 1};
        // clamp face rect into the body rect so containment holds exactly
        face.x0 = std::max(face.x0, ref.body_rect.x0);
        face.y0 = std::max(face.y0, ref.body_rect.y0);
        face.w = std::min(face.w, ref.body_rect.x0 + ref.body_rect.w - face.x0);
        face.h = std::min(face.h, ref.body_rect.y0 + ref.body_rect.h - face.y0);
        ref.face_rect = face;

        ref.body_crop = crop_resize(scene.image, ref.body_rect, kBodyCropSize);
        ref.face_crop = crop_resize(scene.image, ref.face_rect, kFaceCropSize);
    }

    scene.caption = make_caption(spec, scene.all_poses());
    return scene;
}

Scene perturb_pose(const Scene& scene, uint64_t new_pose_seed) {
    if (scene.characters.empty()) throw std::invalid_argument("perturb_pose: no characters");
    SceneSpec spec = scene.spec;
    spec.pose_seed = new_pose_seed;
    return generate_scene(spec, scene.seed);
}

Dataset generate_dataset(int count, double mix, uint64_t seed, bool holdout, int canvas) {
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    if (mix < 0.0 || mix > 1.0) throw std::invalid_argument("mix must be in [0,1]");
    Dataset ds;
    ds.count = count;
    ds.mix = mix;
    ds.seed = seed;
    ds.canvas = canvas;
    ds.holdout = holdout;

    int n_single = static_cast<int>(std::lround(mix * count));
    std::vector<int> sizes(count, 2);
    for (int i = 0; i < n_single; ++i) sizes[i] = 1;
    Rng order_rng(derive_seed(seed, 0x0DD3));
    for (int i = count - 1; i > 0; --i)
        std::swap(sizes[i], sizes[order_rng.uniform_int(i + 1)]);

    int id_lo = holdout ? kTrainIdentities : 0;
    int id_hi = holdout ? kNumIdentities : kTrainIdentities;
    Rng rng(derive_seed(seed, 0x5EED));
    for (int i = 0; i < count; ++i) {
        SceneSpec spec;
        spec.num_characters = sizes[i];
        spec.canvas_size = canvas;
        spec.identity_ids.push_back(id_lo + rng.uniform_int(id_hi - id_lo));
        if (sizes[i] == 2) {
            int second = id_lo + rng.uniform_int(id_hi - id_lo);
            while (second == spec.identity_ids[0])
                second = id_lo + rng.uniform_int(id_hi - id_lo);
            spec.identity_ids.push_back(second);
        }
        spec.pose_seed = derive_seed(seed, 0x905E, i);
        spec.background_id = rng.uniform_int(kNumBackgrounds);
        spec.caption_template_id = rng.uniform_int(kNumCaptionTemplates);
        ds.scenes.push_back(generate_scene(spec, derive_seed(seed, 0x5C3E, i)));
    }
    return ds;
}

namespace {

void write_rect(std::ostream& os, const Rect& r) {
    write_u32(os, r.x0);
    write_u32(os, r.y0);
    write_u32(os, r.w);
    write_u32(os, r.h);
}

Rect read_rect(std::istream& is) {
    Rect r;
    r.x0 = static_cast<int>(read_u32(is));
    r.y0 = static_cast<int>(read_u32(is));
    r.w = static_cast<int>(read_u32(is));
    r.h = static_cast<int>(read_u32(is));
    return r;
}

constexpr uint32_t kSceneMagic = 0x43445343;  // "CSDC"
constexpr uint32_t kSceneVersion = 1;

void save_scene_blob(const std::string& path, const Scene& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    int size = s.spec.canvas_size;
    write_u32(os, kSceneMagic);
    write_u32(os, kSceneVersion);
    write_u32(os, static_cast<uint32_t>(size));
    write_u32(os, static_cast<uint32_t>(s.characters.size()));
    write_u32(os, static_cast<uint32_t>(s.caption.size()));
    for (int t : s.caption) write_u32(os, static_cast<uint32_t>(t));
    write_f32_array(os, s.image.v);
    for (const auto& m : s.masks) write_f32_array(os, m.v);
    for (const auto& c : s.characters) {
        write_u32(os, static_cast<uint32_t>(c.identity_id));
        write_u32(os, static_cast<uint32_t>(c.clothing_id));
        write_rect(os, c.body_rect);
        write_rect(os, c.face_rect);
        for (const auto& kp : c.pose) {
            float xy[2] = {static_cast<float>(kp.x), static_cast<float>(kp.y)};
            os.write(reinterpret_cast<const char*>(xy), sizeof(xy));
        }
        write_f32_array(os, c.face_crop.v);
        write_f32_array(os, c.body_crop.v);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Scene load_scene_blob(const std::string& path, const SceneSpec& spec, uint64_t seed) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("missing scene blob: " + path);
    if (read_u32(is) != kSceneMagic) throw std::runtime_error("bad scene magic in " + path);
    if (read_u32(is) != kSceneVersion) throw std::runtime_error("bad scene version in " + path);
    int size = static_cast<int>(read_u32(is));
    int n = static_cast<int>(read_u32(is));
    Scene s;
    s.spec = spec;
    s.seed = seed;
    int cap_len = static_cast<int>(read_u32(is));
    for (int i = 0; i < cap_len; ++i) s.caption.push_back(static_cast<int>(read_u32(is)));
    s.image = Tensor({3, size, size});
    read_f32_array(is, s.image.v, s.image.numel());
    s.masks.assign(n + 1, Tensor({size, size}));
    for (auto& m : s.masks) read_f32_array(is, m.v, m.numel());
    for (int k = 0; k < n; ++k) {
        CharacterReference c;
        c.identity_id = static_cast<int>(read_u32(is));
        c.clothing_id = static_cast<int>(read_u32(is));
        c.body_rect = read_rect(is);
        c.face_rect = read_rect(is);
        for (auto& kp : c.pose) {
            float xy[2];
            is.read(reinterpret_cast<char*>(xy), sizeof(xy));
            kp.x = xy[0];
            kp.y = xy[1];
        }
        c.face_crop = Tensor({3, kFaceCropSize, kFaceCropSize});
        read_f32_array(is, c.face_crop.v, c.face_crop.numel());
        c.body_crop = Tensor({3, kBodyCropSize, kBodyCropSize});
        read_f32_array(is, c.body_crop.v, c.body_crop.numel());
        c.mask = s.masks[k + 1];
        s.characters.push_back(std::move(c));
    }
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = "chardiff-dataset-1";
    manifest["count"] = ds.count;
    manifest["mix"] = ds.mix;
    manifest["seed"] = std::to_string(ds.seed);
    manifest["canvas"] = ds.canvas;
    manifest["holdout"] = ds.holdout;
    nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
    char name[32];
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const Scene& s = ds.scenes[i];
        std::snprintf(name, sizeof(name), "scene_%05zu.bin", i);
        nlohmann::ordered_json entry;
        entry["file"] = name;
        entry["num_characters"] = s.spec.num_characters;
        entry["identity_ids"] = s.spec.identity_ids;
        entry["pose_seed"] = std::to_string(s.spec.pose_seed);
        entry["background_id"] = s.spec.background_id;
        entry["caption_template_id"] = s.spec.caption_template_id;
        entry["seed"] = std::to_string(s.seed);
        scenes.push_back(entry);
        save_scene_blob((fs::path(dir) / name).string(), s);
    }
    manifest["scenes"] = scenes;
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(
            read_text_file((fs::path(dir) / "manifest.json").string()));
    } catch (const std::exception& e) {
        throw std::runtime_error("corrupt dataset manifest in " + dir + ": " + e.what());
    }
    Dataset ds;
    ds.count = manifest["count"].get<int>();
    ds.mix = manifest["mix"].get<double>();
    ds.seed = std::stoull(manifest["seed"].get<std::string>());
    ds.canvas = manifest["canvas"].get<int>();
    ds.holdout = manifest["holdout"].get<bool>();
    for (const auto& entry : manifest["scenes"]) {
        SceneSpec spec;
        spec.num_characters = entry["num_characters"].get<int>();
        spec.canvas_size = ds.canvas;
        spec.identity_ids = entry["identity_ids"].get<std::vector<int>>();
        spec.pose_seed = std::stoull(entry["pose_seed"].get<std::string>());
        spec.background_id = entry["background_id"].get<int>();
        spec.caption_template_id = entry["caption_template_id"].get<int>();
        uint64_t seed = std::stoull(entry["seed"].get<std::string>());
        ds.scenes.push_back(load_scene_blob(
            (fs::path(dir) / entry["file"].get<std::string>()).string(), spec, seed));
    }
    return ds;
}

}  // namespace chardiff

#include "groundcap/shapesworld.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace groundcap {

namespace {

constexpr double kRelationMargin = 0.05;
constexpr double kMaxPairIou = 0.1;
constexpr double kLargeAreaThreshold = 0.04;
// Size ranges keep every shape identifiable after 8x8 patchification: the
// small floor (0.15 of a 64-px canvas ~ 10 px ~ 1.5 patches) is the smallest
// extent where circle/square/triangle stay distinguishable once rasterized,
// and the gap to the large floor keeps the size word visually decodable.
// Both ranges respect the area threshold: 0.19^2 < 0.04 <= 0.24^2.
constexpr double kSmallLo = 0.15, kSmallHi = 0.19;
constexpr double kLargeLo = 0.24, kLargeHi = 0.34;

const char* kShapeWords[] = {"circle", "square", "triangle"};
const char* kColorWords[] = {"red", "green", "blue", "yellow", "purple"};
const Rgb kColorValues[] = {
    {0.85, 0.10, 0.10},  // red
    {0.10, 0.75, 0.10},  // green
    {0.10, 0.20, 0.85},  // blue
    {0.90, 0.85, 0.10},  // yellow
    {0.60, 0.15, 0.70},  // purple
};

std::atomic<uint64_t> g_hygiene_violations{0};

}  // namespace

const char* shape_word(Shape s) { return kShapeWords[static_cast<int>(s)]; }
const char* color_word(Color c) { return kColorWords[static_cast<int>(c)]; }

Shape shape_from_word(const std::string& w) {
    for (int i = 0; i < 3; ++i)
        if (w == kShapeWords[i]) return static_cast<Shape>(i);
    throw std::invalid_argument("unknown shape word '" + w + "'");
}

Color color_from_word(const std::string& w) {
    for (int i = 0; i < 5; ++i)
        if (w == kColorWords[i]) return static_cast<Color>(i);
    throw std::invalid_argument("unknown color word '" + w + "'");
}

Rgb color_value(Color c) { return kColorValues[static_cast<int>(c)]; }

bool object_valid(const ObjectSpec& o) {
    if (!box_valid(o.box)) return false;
    Corners c = corners_clamped(o.box);
    // Objects must sit fully inside the unit square (no clamping happened).
    if (c.x0 != o.box.cx - o.box.w / 2 || c.x1 != o.box.cx + o.box.w / 2 ||
        c.y0 != o.box.cy - o.box.h / 2 || c.y1 != o.box.cy + o.box.h / 2)
        return false;
    if (o.shape == Shape::Circle && o.box.w != o.box.h) return false;
    return o.large == (o.box.w * o.box.h >= kLargeAreaThreshold);
}

Scene sample_scene(RngStream& rng, const SceneConfig& cfg) {
    if (cfg.min_objects < 2 || cfg.max_objects > 4 || cfg.min_objects > cfg.max_objects)
        throw std::invalid_argument("scene object count range must lie within [2, 4]");
    if (cfg.max_attempts < 1) throw std::invalid_argument("max_attempts must be positive");

    Scene scene;
    scene.seed = rng.seed();
    int n = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    int attempts = 0;
    while (static_cast<int>(scene.objects.size()) < n) {
        if (++attempts > cfg.max_attempts)
            throw std::runtime_error("scene placement failed after " +
                                     std::to_string(cfg.max_attempts) + " attempts");
        ObjectSpec o;
        o.shape = static_cast<Shape>(rng.uniform_int(0, 2));
        o.color = static_cast<Color>(rng.uniform_int(0, 4));
        o.large = rng.uniform_int(0, 1) == 1;
        double lo = o.large ? kLargeLo : kSmallLo;
        double hi = o.large ? kLargeHi : kSmallHi;
        o.box.w = rng.uniform(lo, hi);
        o.box.h = o.shape == Shape::Circle ? o.box.w : rng.uniform(lo, hi);
        o.box.cx = rng.uniform(o.box.w / 2, 1.0 - o.box.w / 2);
        o.box.cy = rng.uniform(o.box.h / 2, 1.0 - o.box.h / 2);
        bool clear = true;
        for (const ObjectSpec& other : scene.objects)
            if (iou(o.box, other.box) >= kMaxPairIou) { clear = false; break; }
        if (clear) scene.objects.push_back(o);
    }
    return scene;
}

namespace {

bool inside_object(const ObjectSpec& o, double px, double py) {
    const Box& b = o.box;
    switch (o.shape) {
        case Shape::Square:
            return std::abs(px - b.cx) <= b.w / 2 && std::abs(py - b.cy) <= b.h / 2;
        case Shape::Circle: {
            double r = b.w / 2;
            double dx = px - b.cx, dy = py - b.cy;
            return dx * dx + dy * dy <= r * r;
        }
        case Shape::Triangle: {
            // Apex at the top edge midpoint, base along the bottom edge; the
            // half-width grows linearly from 0 at the apex to w/2 at the base.
            double dy = py - (b.cy - b.h / 2);
            if (dy < 0.0 || dy > b.h) return false;
            return std::abs(px - b.cx) <= (dy / b.h) * (b.w / 2);
        }
    }
    return false;
}

}  // namespace

Image render(const Scene& scene, int size) {
    if (size < 1) throw std::invalid_argument("render size must be positive");
    Image img = Image::white(size, size);
    for (const ObjectSpec& o : scene.objects) {
        Rgb c = color_value(o.color);
        // Conservative pixel window around the box; the inside test decides.
        int x0 = std::max(0, static_cast<int>(std::floor((o.box.cx - o.box.w / 2) * size - 0.5)));
        int x1 = std::min(size - 1, static_cast<int>(std::ceil((o.box.cx + o.box.w / 2) * size)));
        int y0 = std::max(0, static_cast<int>(std::floor((o.box.cy - o.box.h / 2) * size - 0.5)));
        int y1 = std::min(size - 1, static_cast<int>(std::ceil((o.box.cy + o.box.h / 2) * size)));
        for (int y = y0; y <= y1; ++y) {
            double py = (y + 0.5) / size;
            for (int x = x0; x <= x1; ++x) {
                double px = (x + 0.5) / size;
                if (inside_object(o, px, py)) {
                    img.r(y, x) = c.r;
                    img.g(y, x) = c.g;
                    img.b(y, x) = c.b;
                }
            }
        }
    }
    return img;
}

// ---- Referring expressions -------------------------------------------------

namespace {

struct ParsedExpression {
    std::optional<bool> large;  // size word when present
    Color color = Color::Red;
    Shape shape = Shape::Circle;
    std::string relation;  // "", "left", "right", "above", "below"
    Color anchor_color = Color::Red;
    Shape anchor_shape = Shape::Circle;
};

bool is_size_word(const std::string& w) { return w == "small" || w == "large"; }

ParsedExpression parse_expression(const std::string& text) {
    std::vector<std::string> t;
    std::istringstream in(text);
    std::string w;
    while (in >> w) t.push_back(w);

    size_t i = 0;
    auto next = [&]() -> const std::string& {
        if (i >= t.size()) throw std::invalid_argument("expression ended early: '" + text + "'");
        return t[i++];
    };
    ParsedExpression p;
    if (next() != "the") throw std::invalid_argument("expression must start with 'the'");
    if (i < t.size() && is_size_word(t[i])) p.large = next() == "large";
    p.color = color_from_word(next());
    p.shape = shape_from_word(next());
    if (i < t.size()) {
        const std::string& rel = next();
        if (rel == "left" || rel == "right") {
            if (next() != "of") throw std::invalid_argument("'" + rel + "' must be followed by 'of'");
        } else if (rel != "above" && rel != "below") {
            throw std::invalid_argument("unknown relation '" + rel + "'");
        }
        p.relation = rel;
        if (next() != "the") throw std::invalid_argument("relation anchor must start with 'the'");
        p.anchor_color = color_from_word(next());
        p.anchor_shape = shape_from_word(next());
    }
    if (i != t.size()) throw std::invalid_argument("trailing words in expression: '" + text + "'");
    return p;
}

bool relation_holds(const std::string& rel, const Box& m, const Box& a) {
    if (rel == "left") return m.cx < a.cx - kRelationMargin;
    if (rel == "right") return m.cx > a.cx + kRelationMargin;
    if (rel == "above") return m.cy < a.cy - kRelationMargin;
    return m.cy > a.cy + kRelationMargin;  // "below"
}

std::vector<int> match_parsed(const Scene& scene, const ParsedExpression& p) {
    std::vector<int> out;
    for (int m = 0; m < static_cast<int>(scene.objects.size()); ++m) {
        const ObjectSpec& o = scene.objects[static_cast<size_t>(m)];
        if (o.color != p.color || o.shape != p.shape) continue;
        if (p.large && o.large != *p.large) continue;
        if (!p.relation.empty()) {
            bool anchored = false;
            for (int a = 0; a < static_cast<int>(scene.objects.size()); ++a) {
                if (a == m) continue;
                const ObjectSpec& other = scene.objects[static_cast<size_t>(a)];
                if (other.color == p.anchor_color && other.shape == p.anchor_shape &&
                    relation_holds(p.relation, o.box, other.box)) {
                    anchored = true;
                    break;
                }
            }
            if (!anchored) continue;
        }
        out.push_back(m);
    }
    return out;
}

}  // namespace

std::vector<int> match_expression(const Scene& scene, const std::string& expression) {
    return match_parsed(scene, parse_expression(expression));
}

ReferResult refer(const Scene& scene, int target, RngStream& rng) {
    if (target < 0 || target >= static_cast<int>(scene.objects.size()))
        throw std::invalid_argument("refer: target index out of range");
    const ObjectSpec& t = scene.objects[static_cast<size_t>(target)];

    std::string base = std::string(color_word(t.color)) + " " + shape_word(t.shape);
    std::string sized = std::string(t.large ? "large" : "small") + " " + base;

    // Distinct anchor descriptions present in the scene, in a stable order.
    std::set<std::string> anchors;
    for (const ObjectSpec& o : scene.objects)
        anchors.insert(std::string(color_word(o.color)) + " " + shape_word(o.shape));

    auto with_relations = [&](const std::string& head) {
        std::vector<std::string> out;
        for (const char* rel : {"left of", "right of", "above", "below"})
            for (const std::string& anchor : anchors)
                out.push_back("the " + head + " " + rel + " the " + anchor);
        return out;
    };

    std::vector<std::vector<std::string>> levels = {
        {"the " + base},
        {"the " + sized},
        with_relations(base),
        with_relations(sized),
    };

    for (const auto& level : levels) {
        std::set<std::string> unique;  // sorted => deterministic choice
        for (const std::string& expr : level) {
            std::vector<int> matched = match_expression(scene, expr);
            if (matched.size() == 1 && matched[0] == target) unique.insert(expr);
        }
        if (!unique.empty()) {
            int pick = rng.uniform_int(0, static_cast<int>(unique.size()) - 1);
            auto it = unique.begin();
            std::advance(it, pick);
            return {*it, t.box};
        }
    }
    throw std::logic_error("refer: no unambiguous expression for target " +
                           std::to_string(target));
}

// ---- Dataset records -------------------------------------------------------

const char* kind_word(RecordKind k) {
    switch (k) {
        case RecordKind::Full: return "full";
        case RecordKind::BoxOnly: return "box_only";
        case RecordKind::TextOnly: return "text_only";
    }
    throw std::invalid_argument("bad RecordKind");
}

RecordKind kind_from_word(const std::string& w) {
    if (w == "full") return RecordKind::Full;
    if (w == "box_only") return RecordKind::BoxOnly;
    if (w == "text_only") return RecordKind::TextOnly;
    throw std::invalid_argument("unknown record kind '" + w + "'");
}

uint64_t hygiene_violation_count() { return g_hygiene_violations.load(); }
void reset_hygiene_violations() { g_hygiene_violations.store(0); }

DatasetRecord::DatasetRecord(uint64_t scene_seed, Scene scene, int target_index,
                             std::optional<std::string> expression, std::optional<Box> box,
                             RecordKind kind, bool pseudo)
    : scene_seed_(scene_seed),
      scene_(std::move(scene)),
      target_(target_index),
      expression_(std::move(expression)),
      box_(std::move(box)),
      kind_(kind),
      pseudo_(pseudo) {
    if (target_ < 0 || target_ >= static_cast<int>(scene_.objects.size()))
        throw std::invalid_argument("record target index out of range");
    bool want_expr = kind_ != RecordKind::BoxOnly;
    bool want_box = kind_ != RecordKind::TextOnly;
    if (expression_.has_value() != want_expr || box_.has_value() != want_box)
        throw std::invalid_argument(std::string("annotations inconsistent with kind '") +
                                    kind_word(kind_) + "'");
    if (pseudo_ && kind_ != RecordKind::Full)
        throw std::invalid_argument("pseudo-labeled records must be full");
    if (box_ && !box_valid(*box_)) throw std::invalid_argument("record box invalid");
}

const std::string& DatasetRecord::expression() const {
    if (!expression_) {
        g_hygiene_violations.fetch_add(1);
        throw std::logic_error(std::string("hygiene violation: expression read on a ") +
                               kind_word(kind_) + " record");
    }
    return *expression_;
}

const Box& DatasetRecord::box() const {
    if (!box_) {
        g_hygiene_violations.fetch_add(1);
        throw std::logic_error(std::string("hygiene violation: box read on a ") +
                               kind_word(kind_) + " record");
    }
    return *box_;
}

const std::optional<std::string>& DatasetRecord::oracle_expression() const {
    return expression_ ? expression_ : hidden_expression_;
}

const std::optional<Box>& DatasetRecord::oracle_box() const {
    return box_ ? box_ : hidden_box_;
}

DatasetRecord DatasetRecord::stripped(RecordKind k) const {
    if (kind_ != RecordKind::Full)
        throw std::invalid_argument("only full records can be stripped");
    DatasetRecord out = *this;
    out.kind_ = k;
    if (k == RecordKind::BoxOnly) {
        out.hidden_expression_ = std::move(out.expression_);
        out.expression_.reset();
    } else if (k == RecordKind::TextOnly) {
        out.hidden_box_ = out.box_;
        out.box_.reset();
    }
    return out;
}

DatasetRecord DatasetRecord::completed(std::optional<std::string> expression,
                                       std::optional<Box> box) const {
    if (kind_ == RecordKind::BoxOnly) {
        if (!expression || box)
            throw std::invalid_argument("completing a box_only record takes an expression only");
    } else if (kind_ == RecordKind::TextOnly) {
        if (!box || expression)
            throw std::invalid_argument("completing a text_only record takes a box only");
    } else {
        throw std::invalid_argument("only weak records can be completed");
    }
    DatasetRecord out = *this;
    out.kind_ = RecordKind::Full;
    out.pseudo_ = true;
    if (expression) out.expression_ = std::move(expression);
    if (box) out.box_ = *box;
    if (!box_valid(*out.box_)) throw std::invalid_argument("completed box invalid");
    return out;
}

std::vector<DatasetRecord> split_semi_weak(const std::vector<DatasetRecord>& records,
                                           const SemiWeakSplit& split, RngStream& rng) {
    double f = split.full_fraction, b = split.box_only_fraction, t = split.text_only_fraction;
    if (!(f >= 0 && b >= 0 && t >= 0) || std::abs(f + b + t - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    for (const DatasetRecord& r : records)
        if (r.kind() != RecordKind::Full)
            throw std::invalid_argument("split_semi_weak expects fully-annotated records");

    size_t n = records.size();
    size_t n_full = static_cast<size_t>(std::llround(f * static_cast<double>(n)));
    size_t n_box = static_cast<size_t>(std::llround(b * static_cast<double>(n)));
    n_full = std::min(n_full, n);
    n_box = std::min(n_box, n - n_full);

    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    std::vector<RecordKind> kinds(n, RecordKind::TextOnly);
    for (size_t i = 0; i < n_full; ++i) kinds[perm[i]] = RecordKind::Full;
    for (size_t i = n_full; i < n_full + n_box; ++i) kinds[perm[i]] = RecordKind::BoxOnly;

    std::vector<DatasetRecord> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i)
        out.push_back(kinds[i] == RecordKind::Full ? records[i] : records[i].stripped(kinds[i]));
    return out;
}

namespace {

DatasetRecord make_record(const RngStream& record_stream) {
    constexpr int kSceneAttempts = 64;
    for (int attempt = 0; attempt < kSceneAttempts; ++attempt) {
        RngStream a = record_stream.substream("attempt").substream(static_cast<uint64_t>(attempt));
        uint64_t scene_seed = a.next_u64();
        RngStream scene_rng(scene_seed);
        Scene scene;
        try {
            scene = sample_scene(scene_rng);
        } catch (const std::runtime_error&) {
            continue;  // placement failure: resample wholesale
        }
        std::vector<int> order(scene.objects.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream pick = a.substream("target");
        pick.shuffle(order);
        for (int target : order) {
            try {
                ReferResult r = refer(scene, target, pick);
                Box gt = scene.objects[static_cast<size_t>(target)].box;
                return DatasetRecord(scene_seed, std::move(scene), target, r.expression, gt,
                                     RecordKind::Full);
            } catch (const std::logic_error&) {
                // This target admits no unambiguous expression; try the next.
            }
        }
    }
    throw std::runtime_error("could not build a dataset record after " +
                             std::to_string(kSceneAttempts) + " scene attempts");
}

std::vector<DatasetRecord> make_records(const RngStream& stream, int n) {
    std::vector<DatasetRecord> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(make_record(stream.substream(static_cast<uint64_t>(i))));
    return out;
}

}  // namespace

DatasetBundle build_dataset(int n_train, int n_eval, uint64_t seed) {
    if (n_train < 0 || n_eval < 0) throw std::invalid_argument("dataset sizes must be non-negative");
    RngStream root(seed);
    DatasetBundle bundle;
    bundle.train = make_records(root.substream("train"), n_train);
    bundle.eval = make_records(root.substream("eval"), n_eval);
    return bundle;
}

// ---- JSONL serialization ---------------------------------------------------

namespace {

using nlohmann::json;

std::string base64_encode(const std::vector<unsigned char>& data) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    for (size_t i = 0; i < data.size(); i += 3) {
        uint32_t chunk = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < data.size()) chunk |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < data.size()) chunk |= data[i + 2];
        out += alphabet[(chunk >> 18) & 63];
        out += alphabet[(chunk >> 12) & 63];
        out += i + 1 < data.size() ? alphabet[(chunk >> 6) & 63] : '=';
        out += i + 2 < data.size() ? alphabet[chunk & 63] : '=';
    }
    return out;
}

json box_to_json(const Box& b) { return json::array({b.cx, b.cy, b.w, b.h}); }

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be a 4-array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void save_jsonl(const std::string& path, const std::vector<DatasetRecord>& records,
                bool embed_pixels, int image_size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const DatasetRecord& r : records) {
        json j;
        j["scene_seed"] = r.scene_seed();
        j["target_index"] = r.target_index();
        j["kind"] = kind_word(r.kind());
        j["pseudo"] = r.pseudo();
        j["expression"] = r.has_expression() ? json(r.expression()) : json(nullptr);
        j["box"] = r.has_box() ? box_to_json(r.box()) : json(nullptr);
        json objs = json::array();
        for (const ObjectSpec& o : r.scene().objects) {
            json jo;
            jo["shape"] = shape_word(o.shape);
            jo["color"] = color_word(o.color);
            jo["size"] = o.large ? "large" : "small";
            jo["box"] = box_to_json(o.box);
            objs.push_back(std::move(jo));
        }
        j["objects"] = std::move(objs);
        if (embed_pixels) {
            Image img = r.image(image_size);
            std::vector<unsigned char> bytes;
            bytes.reserve(static_cast<size_t>(image_size) * image_size * 3);
            for (int y = 0; y < image_size; ++y)
                for (int x = 0; x < image_size; ++x)
                    for (const Eigen::MatrixXd* plane : {&img.r, &img.g, &img.b})
                        bytes.push_back(static_cast<unsigned char>(
                            std::lround(std::clamp((*plane)(y, x), 0.0, 1.0) * 255.0)));
            j["pixels"] = base64_encode(bytes);
        }
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<DatasetRecord> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::vector<DatasetRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        uint64_t scene_seed = j.at("scene_seed").get<uint64_t>();
        RngStream scene_rng(scene_seed);
        Scene scene = sample_scene(scene_rng);

        const json& jo = j.at("objects");
        if (jo.size() != scene.objects.size())
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": stored objects disagree with the scene seed");
        for (size_t k = 0; k < scene.objects.size(); ++k) {
            const ObjectSpec& o = scene.objects[k];
            Box b = box_from_json(jo[k].at("box"));
            if (jo[k].at("shape").get<std::string>() != shape_word(o.shape) ||
                jo[k].at("color").get<std::string>() != color_word(o.color) ||
                jo[k].at("size").get<std::string>() != (o.large ? "large" : "small") ||
                b.cx != o.box.cx || b.cy != o.box.cy || b.w != o.box.w || b.h != o.box.h)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": stored objects disagree with the scene seed");
        }

        std::optional<std::string> expr;
        if (!j.at("expression").is_null()) expr = j.at("expression").get<std::string>();
        std::optional<Box> box;
        if (!j.at("box").is_null()) box = box_from_json(j.at("box"));
        RecordKind kind = kind_from_word(j.at("kind").get<std::string>());
        bool pseudo = j.at("pseudo").get<bool>();
        int target = j.at("target_index").get<int>();

        DatasetRecord rec(scene_seed, std::move(scene), target, std::move(expr), box, kind, pseudo);
        if (kind == RecordKind::Full && !pseudo) {
            const Box& gt = rec.scene().objects[static_cast<size_t>(target)].box;
            const Box& stored = rec.box();
            if (stored.cx != gt.cx || stored.cy != gt.cy || stored.w != gt.w || stored.h != gt.h)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": stored box disagrees with the scene seed");
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace groundcap

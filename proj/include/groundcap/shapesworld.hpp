#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "groundcap/geometry.hpp"
#include "groundcap/image.hpp"
#include "groundcap/rng.hpp"

namespace groundcap {

enum class Shape { Circle, Square, Triangle };
enum class Color { Red, Green, Blue, Yellow, Purple };

const char* shape_word(Shape s);
const char* color_word(Color c);
Shape shape_from_word(const std::string& w);
Color color_from_word(const std::string& w);

struct Rgb {
    double r, g, b;
};
Rgb color_value(Color c);

/// One colored shape with its tight bounding box. `large` must agree with
/// the area threshold (large <=> w*h >= 0.04); the two sampling size classes
/// sit strictly on either side of it.
struct ObjectSpec {
    Shape shape = Shape::Circle;
    Color color = Color::Red;
    bool large = false;
    Box box;
};

bool object_valid(const ObjectSpec& o);

struct Scene {
    uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
};

struct SceneConfig {
    int min_objects = 2;
    int max_objects = 4;
    int max_attempts = 1000;
};

/// Rejection-samples 2-4 non-overlapping objects (pairwise IoU < 0.1).
/// Deterministic per rng seed; throws std::runtime_error when placement
/// fails within max_attempts (the message reports the attempt count).
Scene sample_scene(RngStream& rng, const SceneConfig& cfg = {});

/// Analytic rasterization on a white background; later objects paint over
/// earlier ones; pixel (x, y) samples the unit-square point
/// ((x+0.5)/size, (y+0.5)/size).
Image render(const Scene& scene, int size = 64);

/// Minimal unambiguous expression for scene.objects[target] under the
/// grammar "the [size?] color shape [relation 'the' color shape]". Levels
/// are tried in order (color+shape; +size; +relation; +size+relation) and
/// the first level with any uniquely-matching expression supplies a uniform
/// random choice. Throws std::logic_error when no expression in the grammar
/// separates the target (rare degenerate scenes; callers resample).
struct ReferResult {
    std::string expression;
    Box box;
};
ReferResult refer(const Scene& scene, int target, RngStream& rng);

/// All object indices satisfying the expression. Relations use the center
/// margin 0.05 and existential anchor semantics: object m matches
/// "... left of the blue square" iff some other object is a blue square
/// with m strictly left of it by the margin. Throws std::invalid_argument
/// on text outside the grammar.
std::vector<int> match_expression(const Scene& scene, const std::string& expression);

// ---- Dataset records -------------------------------------------------------

enum class RecordKind { Full, BoxOnly, TextOnly };

const char* kind_word(RecordKind k);
RecordKind kind_from_word(const std::string& w);

/// Count of forbidden annotation reads (gated accessor called on a record
/// whose kind removed that annotation) since the last reset. Monotone,
/// process-global, thread-safe.
uint64_t hygiene_violation_count();
void reset_hygiene_violations();

/// One training/eval sample. The annotations a record's kind removes are
/// physically absent from the visible fields; gated accessors below count
/// and throw on any attempt to read them. Stripped originals survive in a
/// hidden oracle field used only by evaluation tooling and tests.
class DatasetRecord {
public:
    DatasetRecord(uint64_t scene_seed, Scene scene, int target_index,
                  std::optional<std::string> expression, std::optional<Box> box,
                  RecordKind kind, bool pseudo = false);

    uint64_t scene_seed() const { return scene_seed_; }
    int target_index() const { return target_; }
    RecordKind kind() const { return kind_; }
    bool pseudo() const { return pseudo_; }
    bool has_expression() const { return expression_.has_value(); }
    bool has_box() const { return box_.has_value(); }

    /// Rendered input image; always available.
    Image image(int size = 64) const { return render(scene_, size); }

    /// Gated annotation access: throws std::logic_error and bumps the
    /// hygiene counter when the kind removed the annotation.
    const std::string& expression() const;
    const Box& box() const;

    /// Evaluation/serialization access, outside the training contract.
    const Scene& scene() const { return scene_; }
    Shape target_shape() const { return scene_.objects[static_cast<size_t>(target_)].shape; }
    Color target_color() const { return scene_.objects[static_cast<size_t>(target_)].color; }
    const std::optional<std::string>& oracle_expression() const;
    const std::optional<Box>& oracle_box() const;

    /// Weak copy for the semi-weak regimes: removes the annotation the kind
    /// hides while retaining it in the hidden oracle field.
    DatasetRecord stripped(RecordKind k) const;

    /// Pseudo-labeling outputs: a full record whose previously missing
    /// annotation is the model's prediction; flagged pseudo=true.
    DatasetRecord completed(std::optional<std::string> expression,
                            std::optional<Box> box) const;

private:
    uint64_t scene_seed_;
    Scene scene_;
    int target_;
    std::optional<std::string> expression_;
    std::optional<Box> box_;
    std::optional<std::string> hidden_expression_;
    std::optional<Box> hidden_box_;
    RecordKind kind_;
    bool pseudo_;
};

struct SemiWeakSplit {
    double full_fraction = 0.2;
    double box_only_fraction = 0.4;
    double text_only_fraction = 0.4;
};

/// Random kind assignment per the split fractions (which must sum to 1).
/// Full records pass through; the others are stripped accordingly. Order
/// is preserved; only kinds change.
std::vector<DatasetRecord> split_semi_weak(const std::vector<DatasetRecord>& records,
                                           const SemiWeakSplit& split, RngStream& rng);

struct DatasetBundle {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> eval;
};

/// Fully-annotated records from disjoint train/eval seed sub-streams.
/// Scenes whose sampled target admits no unambiguous expression are
/// retried with other targets, then resampled wholesale.
DatasetBundle build_dataset(int n_train, int n_eval, uint64_t seed);

/// One JSON object per line: {box, expression, kind, objects, pseudo,
/// scene_seed, target_index}; box/expression are null when absent. With
/// embed_pixels, a debugging field `pixels` carries the base64-encoded
/// 8-bit RGB render. Loading re-samples each scene from its stored seed
/// and rejects files whose object lists disagree (code/seed drift guard).
void save_jsonl(const std::string& path, const std::vector<DatasetRecord>& records,
                bool embed_pixels = false, int image_size = 64);
std::vector<DatasetRecord> load_jsonl(const std::string& path);

}  // namespace groundcap

#pragma once

// Procedural tube-limb characters with ground-truth skinning and an internal
// forward-kinematics rig. The rig is private to the generator: consumers see
// only meshes, GT skinning over the character's own parts, and canonical
// part names used to line parts up across characters for evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "sfpt/articulation.hpp"
#include "sfpt/error.hpp"
#include "sfpt/mesh.hpp"

namespace sfpt {

inline constexpr int kLimbSlots = 6;
inline constexpr int kMaxSegments = 3;
inline constexpr int kCanonicalParts = 1 + kLimbSlots * kMaxSegments;

enum class LimbSlot { leg_left, leg_right, arm_left, arm_right, head, tail };

inline const char* limb_slot_name(int slot) {
    static constexpr const char* names[kLimbSlots] = {"leg_l", "leg_r", "arm_l", "arm_r", "head", "tail"};
    return names[slot];
}

inline int canonical_part_id(int slot, int segment) { return 1 + slot * kMaxSegments + segment; }

inline std::string canonical_part_name(int id) {
    if (id == 0) return "torso";
    if (id < 0 || id >= kCanonicalParts) throw InvalidArgument("canonical part id out of range");
    const int slot = (id - 1) / kMaxSegments;
    return std::string(limb_slot_name(slot)) + "." + std::to_string((id - 1) % kMaxSegments);
}

inline int canonical_part_id(const std::string& name) {
    for (int id = 0; id < kCanonicalParts; ++id)
        if (canonical_part_name(id) == name) return id;
    throw ParseError("unknown part name '" + name + "'");
}

enum class TopologyVariant { standard, missing_limb, extra_appendage };

struct SegmentProportion {
    double length = 1.0;  // multiplier on the slot's base segment length
    double radius = 1.0;  // multiplier on the slot's base radius
};

struct CharacterSpec {
    std::uint64_t seed = 0;
    int limb_count = 5;         // slots 0..limb_count-1 before the variant applies
    int segments_per_limb = 2;  // 1..3
    std::array<std::array<SegmentProportion, kMaxSegments>, kLimbSlots> proportions{};
    double torso_length = 1.0;  // multipliers on the base torso
    double torso_radius = 1.0;
    int ring_resolution = 8;    // vertices per ring
    int rings_per_segment = 3;
    double blend = 0.35;        // blend half-width per side, as a fraction of that side's segment
    double splay = 0.15;        // max random rest-pose deviation of limb directions (rad)
    TopologyVariant variant = TopologyVariant::standard;
};

/// Axis-angle rotation per canonical joint (one joint per canonical part,
/// located at the proximal end of that part).
struct PoseSpec {
    std::array<Vec3, kCanonicalParts> rotations{};

    PoseSpec() { rotations.fill(Vec3::Zero()); }
    bool is_zero() const {
        return std::all_of(rotations.begin(), rotations.end(), [](const Vec3& r) { return r.isZero(0.0); });
    }
    double max_angle() const {
        double m = 0;
        for (const auto& r : rotations) m = std::max(m, r.norm());
        return m;
    }
};

struct PosedInstance {
    int pose_id = 0;
    Mesh mesh;
};

/// Generator joint, only used to pose the character.
struct RigJoint {
    int part = 0;    // canonical id
    int parent = -1; // index into the rig, -1 for the root
    Vec3 position = Vec3::Zero();
};

struct CharacterSample {
    Mesh rest;
    SkinningWeights gt_skinning;  // N × (own part count)
    std::vector<int> part_ids;    // canonical id of each GT column
    std::vector<RigJoint> rig;    // same order as part_ids; empty when loaded from disk
    std::vector<PosedInstance> poses;

    /// Canonical id of the dominant GT part of every vertex.
    std::vector<int> gt_labels() const {
        std::vector<int> out;
        for (int col : hard_assignment(gt_skinning)) out.push_back(part_ids[static_cast<std::size_t>(col)]);
        return out;
    }
};

namespace detail {

struct SlotLayout {
    Vec3 anchor;      // attachment point as fraction of torso (x/z in radii, y in lengths)
    Vec3 direction;
    double length;    // total base length
    double radius;
};

inline const SlotLayout& slot_layout(int slot) {
    static const std::array<SlotLayout, kLimbSlots> layout = {{
        {{-0.6, 0.0, 0.0}, {0, -1, 0}, 0.80, 0.070},
        {{0.6, 0.0, 0.0}, {0, -1, 0}, 0.80, 0.070},
        {{-1.0, 0.92, 0.0}, {-1, 0, 0}, 0.62, 0.050},
        {{1.0, 0.92, 0.0}, {1, 0, 0}, 0.62, 0.050},
        {{0.0, 1.0, 0.0}, {0, 1, 0}, 0.30, 0.085},
        {{0.0, 0.05, -1.0}, {0, -0.3, -1}, 0.50, 0.040},
    }};
    return layout[static_cast<std::size_t>(slot)];
}

inline constexpr double kTorsoLength = 0.60;
inline constexpr double kTorsoRadius = 0.15;

inline std::pair<Vec3, Vec3> ring_frame(const Vec3& d) {
    Vec3 a = std::abs(d.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    Vec3 u = a.cross(d).normalized();
    Vec3 v = d.cross(u);
    return {u, v};
}

inline double smooth_step(double t) { return 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(t, 0.0, 1.0)); }

/// Appends a capped tube along `dir` with rings at the given arclengths.
/// Weights for each ring come from `weights(s)`; caps copy the nearest ring.
template <typename WeightFn>
void append_tube(Mesh& mesh, std::vector<std::vector<double>>& rows, const Vec3& start, const Vec3& dir,
                 const std::vector<double>& ring_s, const std::vector<double>& ring_r, double end_s, int res,
                 WeightFn weights) {
    const auto [u, v] = ring_frame(dir);
    const int base = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(start);
    rows.push_back(weights(ring_s.front()));
    for (std::size_t r = 0; r < ring_s.size(); ++r) {
        const Vec3 c = start + ring_s[r] * dir;
        const auto w = weights(ring_s[r]);
        for (int k = 0; k < res; ++k) {
            const double th = 2.0 * std::numbers::pi * k / res;
            mesh.vertices.push_back(c + ring_r[r] * (std::cos(th) * u + std::sin(th) * v));
            rows.push_back(w);
        }
    }
    const int end_apex = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(start + end_s * dir);
    rows.push_back(weights(ring_s.back()));

    auto ring_vertex = [&](std::size_t r, int k) { return base + 1 + static_cast<int>(r) * res + (k % res); };
    for (int k = 0; k < res; ++k) mesh.faces.push_back({base, ring_vertex(0, k + 1), ring_vertex(0, k)});
    for (std::size_t r = 0; r + 1 < ring_s.size(); ++r) {
        for (int k = 0; k < res; ++k) {
            const int a0 = ring_vertex(r, k), a1 = ring_vertex(r, k + 1);
            const int b0 = ring_vertex(r + 1, k), b1 = ring_vertex(r + 1, k + 1);
            mesh.faces.push_back({a0, a1, b1});
            mesh.faces.push_back({a0, b1, b0});
        }
    }
    const std::size_t last = ring_s.size() - 1;
    for (int k = 0; k < res; ++k) mesh.faces.push_back({end_apex, ring_vertex(last, k), ring_vertex(last, k + 1)});
}

inline std::vector<int> active_slots(const CharacterSpec& spec) {
    std::vector<int> slots;
    for (int s = 0; s < spec.limb_count; ++s) slots.push_back(s);
    if (spec.variant == TopologyVariant::missing_limb) {
        // Drops the right arm, or the last slot when there is no arm.
        auto it = std::find(slots.begin(), slots.end(), static_cast<int>(LimbSlot::arm_right));
        if (it != slots.end()) slots.erase(it);
        else slots.pop_back();
    } else if (spec.variant == TopologyVariant::extra_appendage) {
        for (int s = 0; s < kLimbSlots; ++s)
            if (std::find(slots.begin(), slots.end(), s) == slots.end() && s >= static_cast<int>(LimbSlot::head)) {
                slots.push_back(s);
                break;
            }
    }
    return slots;
}

}  // namespace detail

inline void validate(const CharacterSpec& spec) {
    if (spec.limb_count < 2 || spec.limb_count > kLimbSlots) throw InvalidArgument("limb_count must be in [2, 6]");
    if (spec.segments_per_limb < 1 || spec.segments_per_limb > kMaxSegments)
        throw InvalidArgument("segments_per_limb must be in [1, 3]");
    if (spec.ring_resolution < 3) throw InvalidArgument("ring_resolution must be >= 3");
    if (spec.rings_per_segment < 1) throw InvalidArgument("rings_per_segment must be >= 1");
    if (!(spec.blend > 0 && spec.blend < 0.5)) throw InvalidArgument("blend must be in (0, 0.5)");
    if (!(spec.torso_length > 0 && spec.torso_radius > 0)) throw InvalidArgument("torso scale must be positive");
    for (const auto& slot : spec.proportions)
        for (const auto& p : slot)
            if (!(p.length > 0 && p.radius > 0)) throw InvalidArgument("proportions must be positive");
}

/// Closed-form vertex count: a torso tube with 2·rings_per_segment rings and
/// one tube per active limb, each with two cap vertices.
inline std::size_t expected_vertex_count(const CharacterSpec& spec) {
    const auto limbs = detail::active_slots(spec).size();
    const std::size_t res = static_cast<std::size_t>(spec.ring_resolution);
    const std::size_t rps = static_cast<std::size_t>(spec.rings_per_segment);
    return (2 * rps * res + 2) + limbs * (static_cast<std::size_t>(spec.segments_per_limb) * rps * res + 2);
}

/// Rest-pose character. Deterministic for a given spec (the seed only drives
/// the small rest-pose splay of limb directions).
inline CharacterSample generate_character(const CharacterSpec& spec) {
    validate(spec);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto slots = detail::active_slots(spec);
    const int segs = spec.segments_per_limb;
    const int res = spec.ring_resolution;
    const int rps = spec.rings_per_segment;

    CharacterSample out;
    out.rest.name = "character_" + std::to_string(spec.seed);
    std::map<int, int> column;  // canonical id -> GT column
    out.part_ids.push_back(0);
    out.rig.push_back({0, -1, Vec3::Zero()});
    column[0] = 0;
    for (int slot : slots)
        for (int j = 0; j < segs; ++j) {
            column[canonical_part_id(slot, j)] = static_cast<int>(out.part_ids.size());
            out.part_ids.push_back(canonical_part_id(slot, j));
            out.rig.push_back({canonical_part_id(slot, j), 0, Vec3::Zero()});
        }
    const std::size_t parts = out.part_ids.size();
    std::vector<std::vector<double>> rows;
    auto one_hot_row = [parts](int col) {
        std::vector<double> r(parts, 0.0);
        r[static_cast<std::size_t>(col)] = 1.0;
        return r;
    };

    // Torso: rigid tube along +y from the pelvis.
    const double torso_len = detail::kTorsoLength * spec.torso_length;
    const double torso_rad = detail::kTorsoRadius * spec.torso_radius;
    {
        const int rings = 2 * rps;
        std::vector<double> s, r;
        for (int i = 0; i < rings; ++i) {
            s.push_back((i + 0.5) / rings * torso_len);
            r.push_back(torso_rad);
        }
        // Start at a point 0 so the pelvis joint sits at the origin.
        detail::append_tube(out.rest, rows, Vec3::Zero(), Vec3(0, 1, 0), s, r, torso_len, res,
                            [&](double) { return one_hot_row(0); });
    }

    for (int slot : slots) {
        const auto& lay = detail::slot_layout(slot);
        Vec3 dir = lay.direction.normalized();
        const auto [pu, pv] = detail::ring_frame(dir);
        dir = (dir + spec.splay * (unit(rng) * pu + unit(rng) * pv)).normalized();
        const Vec3 start(lay.anchor.x() * torso_rad, lay.anchor.y() * torso_len, lay.anchor.z() * torso_rad);

        std::vector<double> len(static_cast<std::size_t>(segs)), rad(static_cast<std::size_t>(segs));
        std::vector<double> bound{0.0};
        for (int j = 0; j < segs; ++j) {
            const auto& p = spec.proportions[static_cast<std::size_t>(slot)][static_cast<std::size_t>(j)];
            len[static_cast<std::size_t>(j)] = lay.length / segs * p.length;
            rad[static_cast<std::size_t>(j)] = lay.radius * p.radius;
            bound.push_back(bound.back() + len[static_cast<std::size_t>(j)]);
        }
        std::vector<int> cols;
        for (int j = 0; j < segs; ++j) {
            cols.push_back(column[canonical_part_id(slot, j)]);
            out.rig[static_cast<std::size_t>(cols.back())].position = start + bound[static_cast<std::size_t>(j)] * dir;
            out.rig[static_cast<std::size_t>(cols.back())].parent = j == 0 ? 0 : cols[static_cast<std::size_t>(j - 1)];
        }
        auto weights = [&](double s) {
            std::vector<double> row(parts, 0.0);
            int j = 0;
            while (j + 1 < segs && s >= bound[static_cast<std::size_t>(j + 1)]) ++j;
            row[static_cast<std::size_t>(cols[static_cast<std::size_t>(j)])] = 1.0;
            // Cosine falloff across each joint; the root joint blends with the torso.
            for (int b = 0; b < segs; ++b) {
                // Each side uses its own segment length, so the ring nearest the
                // joint is blended and every other ring stays rigid.
                const double d = s - bound[static_cast<std::size_t>(b)];
                const double hw = spec.blend * len[static_cast<std::size_t>(d < 0 && b > 0 ? b - 1 : b)];
                if (std::abs(d) >= hw) continue;
                const double child = detail::smooth_step((d + hw) / (2 * hw));
                const int parent_col = b == 0 ? 0 : cols[static_cast<std::size_t>(b - 1)];
                std::fill(row.begin(), row.end(), 0.0);
                row[static_cast<std::size_t>(cols[static_cast<std::size_t>(b)])] = child;
                row[static_cast<std::size_t>(parent_col)] = 1.0 - child;
            }
            return row;
        };
        std::vector<double> s, r;
        for (int j = 0; j < segs; ++j)
            for (int i = 0; i < rps; ++i) {
                s.push_back(bound[static_cast<std::size_t>(j)] + (i + 0.5) / rps * len[static_cast<std::size_t>(j)]);
                r.push_back(rad[static_cast<std::size_t>(j)]);
            }
        detail::append_tube(out.rest, rows, start, dir, s, r, bound.back(), res, weights);
    }

    out.gt_skinning.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(parts));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < parts; ++k)
            out.gt_skinning(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    return out;
}

/// GT LBS posing through the internal rig. The zero pose returns the rest
/// mesh unchanged.
inline Mesh pose_character(const CharacterSample& sample, const PoseSpec& pose, double max_angle = std::numbers::pi) {
    if (sample.rig.empty()) throw InvalidArgument("character has no rig");
    if (pose.max_angle() > max_angle + 1e-12) throw InvalidArgument("pose angle exceeds bound");
    if (pose.is_zero()) return sample.rest;

    struct Global {
        Mat3 rotation;
        Vec3 joint;  // posed joint position
    };
    std::vector<Global> global(sample.rig.size());
    auto local = [&](int part) {
        const Vec3& aa = pose.rotations[static_cast<std::size_t>(part)];
        const double angle = aa.norm();
        return angle == 0.0 ? Mat3(Mat3::Identity()) : Mat3(Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix());
    };
    // Parents precede children in the rig.
    for (std::size_t p = 0; p < sample.rig.size(); ++p) {
        const auto& j = sample.rig[p];
        if (j.parent < 0) {
            global[p] = {local(j.part), j.position};
        } else {
            const auto& par = global[static_cast<std::size_t>(j.parent)];
            const auto& pj = sample.rig[static_cast<std::size_t>(j.parent)];
            global[p] = {par.rotation * local(j.part), par.rotation * (j.position - pj.position) + par.joint};
        }
    }
    Mesh out = sample.rest;
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
        Vec3 acc = Vec3::Zero();
        for (std::size_t p = 0; p < sample.rig.size(); ++p) {
            const double w = sample.gt_skinning(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p));
            if (w == 0.0) continue;
            acc += w * (global[p].rotation * (sample.rest.vertices[i] - sample.rig[p].position) + global[p].joint);
        }
        out.vertices[i] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Random specs and poses

enum class CharacterStyle { humanoid, stylized };

/// Humanoids share one layout (legs, arms, head; two segments) with varied
/// proportions and tessellation; stylized characters vary everything.
inline CharacterSpec random_spec(std::uint64_t seed, CharacterStyle style) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    CharacterSpec s;
    s.seed = seed;
    const bool stylized = style == CharacterStyle::stylized;
    s.limb_count = stylized ? pick(2, 6) : 5;
    s.segments_per_limb = stylized ? pick(1, 3) : 2;
    s.variant = stylized ? static_cast<TopologyVariant>(pick(0, 2)) : TopologyVariant::standard;
    s.ring_resolution = pick(6, 8);
    s.rings_per_segment = pick(3, 4);
    const double lo = stylized ? 0.55 : 0.8, hi = stylized ? 1.6 : 1.25;
    s.torso_length = uni(lo, hi);
    s.torso_radius = uni(lo, hi);
    for (auto& slot : s.proportions) {
        // Mirror pairs share proportions for humanoids.
        for (auto& p : slot) p = {uni(lo, hi), uni(lo, hi)};
    }
    if (!stylized) {
        s.proportions[1] = s.proportions[0];
        s.proportions[3] = s.proportions[2];
    }
    return s;
}

/// Random axis-angle per joint; torso rotations are scaled down.
inline PoseSpec random_pose(std::uint64_t seed, double max_angle) {
    std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PoseSpec p;
    for (int j = 0; j < kCanonicalParts; ++j) {
        Vec3 axis(normal(rng), normal(rng), normal(rng));
        axis.normalize();
        const double angle = unit(rng) * max_angle * (j == 0 ? 0.35 : 1.0);
        p.rotations[static_cast<std::size_t>(j)] = angle * axis;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Datasets

enum class Split { paired, static_only, held_out };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::paired: return "paired";
        case Split::static_only: return "static";
        case Split::held_out: return "heldout";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "paired") return Split::paired;
    if (s == "static") return Split::static_only;
    if (s == "heldout") return Split::held_out;
    throw ParseError("unknown split '" + s + "'");
}

struct DatasetConfig {
    int paired = 8;
    int static_only = 8;
    int held_out = 4;
    int poses = 8;  // per paired / held-out character
    std::uint64_t seed = 7;
    double max_angle = 0.8;
};

struct CharacterRecord {
    std::string id;
    Split split = Split::paired;
    CharacterSample sample;
};

struct Dataset {
    std::vector<CharacterRecord> characters;
    std::vector<PoseSpec> poses;  // pose bank; PosedInstance::pose_id indexes it

    std::vector<const CharacterRecord*> split(Split s) const {
        std::vector<const CharacterRecord*> out;
        for (const auto& c : characters)
            if (c.split == s) out.push_back(&c);
        return out;
    }
};

/// Paired and held-out characters are humanoids posed with the pose bank
/// (training poses 0..poses-1, held-out poses poses..2·poses-1); static
/// characters are stylized rest meshes only. Character seeds are disjoint
/// across splits.
inline Dataset make_dataset(const DatasetConfig& cfg) {
    if (cfg.paired < 0 || cfg.static_only < 0 || cfg.held_out < 0 || cfg.poses < 0) {
        throw InvalidArgument("dataset counts must be non-negative");
    }
    Dataset ds;
    for (int i = 0; i < 2 * cfg.poses; ++i) {
        ds.poses.push_back(random_pose(cfg.seed * 1000003ULL + 500000ULL + static_cast<std::uint64_t>(i), cfg.max_angle));
    }
    std::set<std::uint64_t> used;
    auto add = [&](Split split, int count, CharacterStyle style, int pose_begin, int pose_count) {
        for (int i = 0; i < count; ++i) {
            std::uint64_t seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(split) * 100000ULL +
                                 static_cast<std::uint64_t>(i);
            while (!used.insert(seed).second) ++seed;
            CharacterRecord rec;
            rec.id = std::string(split_name(split)) + "_" + std::to_string(i);
            rec.split = split;
            rec.sample = generate_character(random_spec(seed, style));
            rec.sample.rest.name = rec.id;
            for (int p = pose_begin; p < pose_begin + pose_count; ++p) {
                rec.sample.poses.push_back(
                    {p, pose_character(rec.sample, ds.poses[static_cast<std::size_t>(p)], cfg.max_angle)});
            }
            ds.characters.push_back(std::move(rec));
        }
    };
    add(Split::paired, cfg.paired, CharacterStyle::humanoid, 0, cfg.poses);
    add(Split::static_only, cfg.static_only, CharacterStyle::stylized, 0, 0);
    add(Split::held_out, cfg.held_out, CharacterStyle::humanoid, cfg.poses, cfg.poses);
    return ds;
}

// Directory layout:
//   manifest.txt                 one record per character: id split pose-ids
//   poses.txt                    pose bank, one line of 3·19 angles per pose
//   <id>/rest.obj, <id>/skinning.txt, <id>/parts.txt, <id>/pose_<p>.obj

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    auto open = [](const fs::path& p) {
        std::ofstream f(p);
        if (!f) throw IoError("cannot write '" + p.string() + "'");
        return f;
    };
    {
        auto f = open(dir / "poses.txt");
        char buf[40];
        for (std::size_t p = 0; p < ds.poses.size(); ++p) {
            f << p;
            for (const auto& r : ds.poses[p].rotations)
                for (int c = 0; c < 3; ++c) {
                    std::snprintf(buf, sizeof buf, " %.17g", r(c));
                    f << buf;
                }
            f << '\n';
        }
    }
    auto manifest = open(dir / "manifest.txt");
    manifest << "# id split poses\n";
    for (const auto& c : ds.characters) {
        const fs::path cdir = dir / c.id;
        fs::create_directories(cdir, ec);
        if (ec) throw IoError("cannot create '" + cdir.string() + "': " + ec.message());
        save_obj(c.sample.rest, (cdir / "rest.obj").string());
        save_skinning(c.sample.gt_skinning, (cdir / "skinning.txt").string());
        {
            auto f = open(cdir / "parts.txt");
            for (int id : c.sample.part_ids) f << canonical_part_name(id) << '\n';
        }
        manifest << c.id << ' ' << split_name(c.split) << ' ';
        if (c.sample.poses.empty()) manifest << '-';
        for (std::size_t i = 0; i < c.sample.poses.size(); ++i) {
            const auto& pi = c.sample.poses[i];
            save_obj(pi.mesh, (cdir / ("pose_" + std::to_string(pi.pose_id) + ".obj")).string());
            manifest << (i ? "," : "") << pi.pose_id;
        }
        manifest << '\n';
    }
    if (!manifest) throw IoError("failed writing manifest");
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open '" + (dir / "manifest.txt").string() + "'");
    Dataset ds;
    {
        std::ifstream f(dir / "poses.txt");
        if (!f) throw IoError("cannot open '" + (dir / "poses.txt").string() + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            const auto toks = detail::split_ws(line);
            if (toks.empty()) continue;
            if (toks.size() != 1 + 3 * kCanonicalParts) throw ParseError("bad pose record", line_no);
            PoseSpec p;
            for (int j = 0; j < kCanonicalParts; ++j)
                for (int c = 0; c < 3; ++c)
                    p.rotations[static_cast<std::size_t>(j)](c) =
                        detail::parse_double(toks[static_cast<std::size_t>(1 + 3 * j + c)], line_no);
            ds.poses.push_back(p);
        }
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        const auto toks = detail::split_ws(line);
        if (toks.empty() || toks[0].front() == '#') continue;
        if (toks.size() != 3) throw ParseError("manifest record needs id, split, poses", line_no);
        CharacterRecord rec;
        rec.id = std::string(toks[0]);
        rec.split = parse_split(std::string(toks[1]));
        const fs::path cdir = dir / rec.id;
        rec.sample.rest = load_obj((cdir / "rest.obj").string());
        rec.sample.rest.name = rec.id;
        rec.sample.gt_skinning = load_skinning((cdir / "skinning.txt").string());
        check_rows(rec.sample.rest, rec.sample.gt_skinning);
        std::ifstream parts(cdir / "parts.txt");
        if (!parts) throw IoError("cannot open parts for " + rec.id);
        std::string name;
        while (parts >> name) rec.sample.part_ids.push_back(canonical_part_id(name));
        if (rec.sample.part_ids.size() != static_cast<std::size_t>(rec.sample.gt_skinning.cols()))
            throw ParseError("part names do not match skinning columns for " + rec.id);
        if (toks[2] != "-") {
            std::stringstream ss{std::string(toks[2])};
            std::string item;
            while (std::getline(ss, item, ',')) {
                const int pid = static_cast<int>(detail::parse_long(item, line_no));
                Mesh m = load_obj((cdir / ("pose_" + item + ".obj")).string());
                if (!same_topology(m, rec.sample.rest)) throw ParseError("posed mesh topology differs for " + rec.id);
                rec.sample.poses.push_back({pid, std::move(m)});
            }
        }
        ds.characters.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace sfpt

"""Kinematic infant body: articulated capsule segments with surface touch sensors.

The body is a tree of 15 rigid links driven by 22 hinge joints. Every tactile
group is one capsule segment; the 68 segments come in 34 left/right mirror
pairs (face 10, torso 14, arms 18, legs 18, feet 8 across both sides). The
left half of the body is generated from the right half by reflection across
the sagittal plane, which makes the tactile response exactly mirror-symmetric
under the joint mirror map.

Axes: x lateral (body right is +x), y anterior (belly/face direction for a
supine body), z axial (toward the head). The pelvis link is the root, fixed
at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import ConfigError, load_kv_file

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Velocity-level dynamics constants (per step, dt implicit).
DAMPING = 0.9
ACTION_GAIN = 0.05
DEFAULT_CONTACT_RADIUS = 0.04
DEFAULT_SENSOR_COUNT = 1024

SKIN_RGB = (224, 172, 138)
BACKGROUND_RGB = (36, 44, 72)

_AXES = {
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}


@dataclass
class JointDef:
    name: str
    axis: str                      # 'x' | 'y' | 'z'
    limits: Tuple[float, float]
    parent: int                    # joint index, -1 for the root frame
    offset: Tuple[float, float, float]

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ConfigError(f"joint {self.name}: bad axis {self.axis!r}")
        if self.limits[0] > self.limits[1]:
            raise ConfigError(f"joint {self.name}: limits reversed")


@dataclass
class SegmentDef:
    name: str                      # e.g. 'cheek_right'
    part: str                      # side-free part name, e.g. 'cheek'
    side: str                      # 'left' | 'right'
    region: str                    # face | torso | arms | legs | feet
    link: str
    p0: Tuple[float, float, float]
    p1: Tuple[float, float, float]
    radius: float


@dataclass
class Distractor:
    """A world-fixed capsule rendered into the scene but invisible to touch."""
    p0: Tuple[float, float, float]
    p1: Tuple[float, float, float]
    radius: float
    color: Tuple[int, int, int] = SKIN_RGB


@dataclass
class EyeParams:
    offset: Tuple[float, float, float]   # eye position in the head frame
    fov: float                           # full field of view, radians
    resolution: int = 64


REGION_TOTALS = {"face": 10, "torso": 14, "arms": 18, "legs": 18, "feet": 8}


class BodySpec:
    """Immutable body description plus the precomputed arrays the sim needs."""

    def __init__(self, joints: List[JointDef], segments: List[SegmentDef],
                 links: Dict[str, int], sensor_count: int,
                 contact_radius: float, eyes: Tuple[EyeParams, EyeParams],
                 part_colors: np.ndarray,
                 distractors: Optional[List[Distractor]] = None):
        self.joints = joints
        self.segments = segments
        self.links = links               # link name -> frame index (-1 root)
        self.contact_radius = float(contact_radius)
        self.eyes = eyes
        self.part_colors = part_colors   # (n_segments, 3) uint8
        self.distractors = list(distractors or [])

        self.n_joints = len(joints)
        self.n_segments = len(segments)
        self.joint_limits = np.array([j.limits for j in joints])
        self.joint_index = {j.name: i for i, j in enumerate(joints)}
        self.group_names = [s.name for s in segments]

        counts = {}
        for seg in segments:
            counts[seg.region] = counts.get(seg.region, 0) + 1
        if counts != REGION_TOTALS:
            raise ConfigError(f"region totals {counts} != {REGION_TOTALS}")
        if self.n_joints != 22:
            raise ConfigError(f"expected 22 actuated joints, got {self.n_joints}")

        self._build_mirror_maps()
        self._build_segment_arrays()
        self._build_sensors(sensor_count)
        self._build_adjacency()

    # -- construction ---------------------------------------------------

    def _build_mirror_maps(self):
        self.joint_mirror = np.zeros(self.n_joints, dtype=int)
        self.joint_mirror_sign = np.zeros(self.n_joints)
        for i, j in enumerate(self.joints):
            if j.name.startswith("l_"):
                other = self.joint_index["r_" + j.name[2:]]
            elif j.name.startswith("r_"):
                other = self.joint_index["l_" + j.name[2:]]
            else:
                other = i
            self.joint_mirror[i] = other
            self.joint_mirror_sign[i] = 1.0 if j.axis == "x" else -1.0
        self.segment_mirror = np.zeros(self.n_segments, dtype=int)
        by_name = {s.name: i for i, s in enumerate(self.segments)}
        for i, s in enumerate(self.segments):
            twin = s.part + ("_left" if s.side == "right" else "_right")
            self.segment_mirror[i] = by_name[twin]

    def _build_segment_arrays(self):
        self.seg_link_frame = np.array(
            [self.links[s.link] for s in self.segments], dtype=int)
        self.seg_p0_local = np.array([s.p0 for s in self.segments])
        self.seg_p1_local = np.array([s.p1 for s in self.segments])
        self.seg_radius = np.array([s.radius for s in self.segments])
        self.hand_segments = {
            "left": [i for i, s in enumerate(self.segments)
                     if s.link == "hand_left"],
            "right": [i for i, s in enumerate(self.segments)
                      if s.link == "hand_right"],
        }
        hand_ids = self.hand_segments["left"] + self.hand_segments["right"]
        self.is_hand_segment = np.zeros(self.n_segments, dtype=bool)
        self.is_hand_segment[hand_ids] = True

    def _capsule_area(self, i: int) -> float:
        length = float(np.sqrt(np.sum(
            (self.seg_p1_local[i] - self.seg_p0_local[i]) ** 2)))
        r = self.seg_radius[i]
        return 2.0 * math.pi * r * length + 4.0 * math.pi * r * r

    def _build_sensors(self, sensor_count: int):
        if sensor_count < 2 * self.n_segments:
            raise ConfigError(
                f"sensor_count {sensor_count} too small for {self.n_segments} segments")
        per_side = sensor_count // 2
        right_ids = [i for i, s in enumerate(self.segments) if s.side == "right"]
        areas = np.array([self._capsule_area(i) for i in right_ids])
        counts = _largest_remainder(areas, per_side, minimum=1)
        seg_counts = np.zeros(self.n_segments, dtype=int)
        for rid, c in zip(right_ids, counts):
            seg_counts[rid] = c
            seg_counts[self.segment_mirror[rid]] = c
        self.sensor_count = int(seg_counts.sum())

        points = np.zeros((self.sensor_count, 3))
        sensor_seg = np.zeros(self.sensor_count, dtype=int)
        starts = np.zeros(self.n_segments, dtype=int)
        pos = 0
        # Generate right-side points, mirror for the left twin (x -> -x) so
        # that sensor i of a right segment pairs with sensor i of its twin.
        local_cache = {}
        for i, seg in enumerate(self.segments):
            n = seg_counts[i]
            starts[i] = pos
            if seg.side == "right":
                pts = _capsule_points(np.array(seg.p0), np.array(seg.p1),
                                      seg.radius, n)
                local_cache[seg.part] = pts
            else:
                pts = local_cache[seg.part] * np.array([-1.0, 1.0, 1.0])
            points[pos:pos + n] = pts
            sensor_seg[pos:pos + n] = i
            pos += n
        self.sensor_local = points
        self.sensor_segment = sensor_seg
        self.segment_sensor_start = starts
        self.segment_sensor_count = seg_counts
        mirror_perm = np.zeros(self.sensor_count, dtype=int)
        for i in range(self.n_segments):
            twin = self.segment_mirror[i]
            n = seg_counts[i]
            mirror_perm[starts[i]:starts[i] + n] = np.arange(
                starts[twin], starts[twin] + n)
        self.sensor_mirror = mirror_perm

    def _build_adjacency(self):
        idx_of = dict(enumerate(self.joints))
        # frame index -> parent frame index
        frame_parent = {i: j.parent for i, j in idx_of.items()}
        link_frames = self.links

        def link_parent(name: str) -> Optional[str]:
            frame = link_frames[name]
            if frame == -1:
                return None
            # walk up joints until we hit a frame owned by another link
            owner = {v: k for k, v in link_frames.items()}
            f = frame_parent[frame]
            while f != -1 and f not in owner:
                f = frame_parent[f]
            return owner.get(f, _root_link(link_frames))

        names = list(link_frames)
        parent_of = {n: link_parent(n) for n in names}
        adjacent = np.zeros((self.n_segments, self.n_segments), dtype=bool)
        seg_link = [s.link for s in self.segments]
        for a in range(self.n_segments):
            for b in range(self.n_segments):
                la, lb = seg_link[a], seg_link[b]
                if la == lb or parent_of.get(la) == lb or parent_of.get(lb) == la:
                    adjacent[a, b] = True
        self.allowed_pairs = ~adjacent
        # (n_sensors, n_segments) mask used by the contact kernel
        self.sensor_allowed = self.allowed_pairs[self.sensor_segment]

    # -- queries ---------------------------------------------------------

    def arm_joint_indices(self, side: str) -> List[int]:
        prefix = ("l_" if side == "left" else "r_")
        want = [prefix + n for n in
                ("shoulder_pitch", "shoulder_roll", "shoulder_yaw", "elbow", "wrist")]
        return [self.joint_index[n] for n in want]

    def mirror_q(self, q: np.ndarray) -> np.ndarray:
        out = np.empty_like(q)
        out[self.joint_mirror] = q * self.joint_mirror_sign
        return out


def _root_link(link_frames: Dict[str, int]) -> str:
    for name, f in link_frames.items():
        if f == -1:
            return name
    raise ConfigError("no root link")


def _largest_remainder(weights: np.ndarray, total: int, minimum: int = 0) -> np.ndarray:
    n = len(weights)
    base = np.full(n, minimum, dtype=int)
    rest = total - minimum * n
    if rest < 0:
        raise ConfigError("sensor budget below per-segment minimum")
    quota = weights / weights.sum() * rest
    counts = np.floor(quota).astype(int)
    frac = quota - counts
    leftover = rest - counts.sum()
    order = np.argsort(-frac, kind="stable")
    counts[order[:leftover]] += 1
    return base + counts


def _capsule_points(p0: np.ndarray, p1: np.ndarray, radius: float,
                    n: int) -> np.ndarray:
    """Deterministic near-uniform points on a capsule surface (spiral layout)."""
    axis = p1 - p0
    length = math.sqrt(float(axis @ axis))
    u = axis / length if length > 0 else np.array([0.0, 0.0, 1.0])
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= math.sqrt(float(e1 @ e1))
    e2 = np.cross(u, e1)

    cap = 2.0 * math.pi * radius * radius
    cyl = 2.0 * math.pi * radius * length
    total = 2 * cap + cyl
    pts = np.zeros((n, 3))
    for k in range(n):
        a = (k + 0.5) / n * total
        phi = k * GOLDEN_ANGLE
        cphi, sphi = math.cos(phi), math.sin(phi)
        if a < cap:                      # hemisphere at p0, pointing backwards
            ax = -radius * (1.0 - a / cap)
            rad = math.sqrt(max(radius * radius - ax * ax, 0.0))
            center = p0
        elif a < cap + cyl:              # cylindrical shell
            t = (a - cap) / cyl
            ax = t * length
            rad = radius
            center = p0
        else:                            # hemisphere at p1, pointing forwards
            ax = radius * ((a - cap - cyl) / cap)
            rad = math.sqrt(max(radius * radius - ax * ax, 0.0))
            center = p1
        pts[k] = center + ax * u + rad * (cphi * e1 + sphi * e2)
    return pts


# -- default body ---------------------------------------------------------

_CENTER_JOINTS = [
    # name, axis, limits, parent name (None=root), offset in parent frame
    ("torso_pitch", "x", (-0.35, 0.45), None, (0.0, 0.0, 0.10)),
    ("torso_roll", "y", (-0.30, 0.30), "torso_pitch", (0.0, 0.0, 0.0)),
    ("neck_pitch", "x", (-0.70, 0.90), "torso_roll", (0.0, 0.0, 0.16)),
    ("neck_yaw", "z", (-1.00, 1.00), "neck_pitch", (0.0, 0.0, 0.0)),
]

# Right-side joints; the left side is generated by mirroring offsets and
# negating the limit interval of y/z-axis joints.
_RIGHT_JOINTS = [
    ("r_shoulder_pitch", "x", (-0.60, 2.80), "torso_roll", (0.075, 0.0, 0.13)),
    ("r_shoulder_roll", "y", (-1.60, 1.20), "r_shoulder_pitch", (0.0, 0.0, 0.0)),
    ("r_shoulder_yaw", "z", (-1.20, 1.20), "r_shoulder_roll", (0.0, 0.0, 0.0)),
    ("r_elbow", "x", (0.00, 2.70), "r_shoulder_yaw", (0.055, 0.0, -0.095)),
    ("r_wrist", "x", (-1.00, 1.00), "r_elbow", (0.020, 0.0, -0.098)),
    ("r_hip_pitch", "x", (-0.30, 2.30), None, (0.055, 0.0, -0.045)),
    ("r_hip_roll", "y", (-1.00, 0.60), "r_hip_pitch", (0.0, 0.0, 0.0)),
    ("r_knee", "x", (-2.40, 0.00), "r_hip_roll", (0.015, 0.0, -0.128)),
    ("r_ankle", "x", (-0.80, 0.80), "r_knee", (0.008, 0.0, -0.118)),
]

_JOINT_ORDER = [
    "torso_pitch", "torso_roll", "neck_pitch", "neck_yaw",
    "l_shoulder_pitch", "l_shoulder_roll", "l_shoulder_yaw", "l_elbow", "l_wrist",
    "r_shoulder_pitch", "r_shoulder_roll", "r_shoulder_yaw", "r_elbow", "r_wrist",
    "l_hip_pitch", "l_hip_roll", "l_knee", "l_ankle",
    "r_hip_pitch", "r_hip_roll", "r_knee", "r_ankle",
]

# link name -> joint whose frame carries it (None = root)
_RIGHT_LINKS = {
    "pelvis": None,
    "chest": "torso_roll",
    "head": "neck_yaw",
    "upper_arm_right": "r_shoulder_yaw",
    "forearm_right": "r_elbow",
    "hand_right": "r_wrist",
    "thigh_right": "r_hip_roll",
    "shin_right": "r_knee",
    "foot_right": "r_ankle",
}

# part, region, link, p0, p1, radius  (right side / right half of center links)
_RIGHT_SEGMENTS = [
    ("forehead", "face", "head", (0.008, 0.044, 0.102), (0.034, 0.036, 0.096), 0.015),
    ("brow", "face", "head", (0.008, 0.052, 0.080), (0.034, 0.046, 0.076), 0.013),
    ("cheek", "face", "head", (0.012, 0.050, 0.052), (0.034, 0.040, 0.050), 0.014),
    ("jaw", "face", "head", (0.008, 0.044, 0.030), (0.030, 0.034, 0.032), 0.013),
    ("ear", "face", "head", (0.050, 0.004, 0.058), (0.050, 0.000, 0.082), 0.012),
    ("clavicle", "torso", "chest", (0.014, 0.016, 0.142), (0.058, 0.010, 0.136), 0.012),
    ("chest", "torso", "chest", (0.030, 0.030, 0.078), (0.030, 0.026, 0.128), 0.021),
    ("ribs", "torso", "chest", (0.050, 0.008, 0.030), (0.050, 0.006, 0.082), 0.018),
    ("upper_back", "torso", "chest", (0.028, -0.026, 0.060), (0.028, -0.026, 0.140), 0.021),
    ("abdomen", "torso", "pelvis", (0.024, 0.028, 0.022), (0.024, 0.026, 0.068), 0.019),
    ("lower_back", "torso", "pelvis", (0.026, -0.026, 0.010), (0.026, -0.026, 0.070), 0.019),
    ("hip", "torso", "pelvis", (0.040, 0.000, -0.026), (0.040, 0.004, 0.002), 0.022),
    ("shoulder", "arms", "upper_arm_right", (0.006, 0.000, -0.006), (0.020, 0.000, -0.030), 0.019),
    ("biceps", "arms", "upper_arm_right", (0.020, 0.007, -0.034), (0.044, 0.007, -0.076), 0.014),
    ("triceps", "arms", "upper_arm_right", (0.016, -0.008, -0.030), (0.042, -0.008, -0.078), 0.014),
    ("elbow", "arms", "forearm_right", (0.000, -0.005, -0.004), (0.006, -0.005, -0.022), 0.015),
    ("forearm", "arms", "forearm_right", (0.004, 0.005, -0.026), (0.016, 0.005, -0.072), 0.013),
    ("wrist", "arms", "forearm_right", (0.014, 0.000, -0.078), (0.018, 0.000, -0.092), 0.012),
    ("palm", "arms", "hand_right", (0.002, 0.005, -0.008), (0.006, 0.005, -0.034), 0.013),
    ("hand_back", "arms", "hand_right", (0.002, -0.007, -0.008), (0.006, -0.007, -0.034), 0.011),
    ("fingers", "arms", "hand_right", (0.006, 0.000, -0.040), (0.010, 0.000, -0.064), 0.010),
    ("thigh_front", "legs", "thigh_right", (0.004, 0.014, -0.020), (0.012, 0.012, -0.095), 0.018),
    ("thigh_back", "legs", "thigh_right", (0.004, -0.014, -0.020), (0.012, -0.012, -0.095), 0.018),
    ("thigh_inner", "legs", "thigh_right", (-0.010, 0.000, -0.030), (-0.004, 0.000, -0.090), 0.014),
    ("thigh_outer", "legs", "thigh_right", (0.020, 0.000, -0.028), (0.026, 0.000, -0.095), 0.015),
    ("knee", "legs", "thigh_right", (0.013, 0.006, -0.104), (0.015, 0.006, -0.122), 0.016),
    ("shin", "legs", "shin_right", (0.002, 0.010, -0.014), (0.007, 0.008, -0.080), 0.012),
    ("calf", "legs", "shin_right", (0.002, -0.011, -0.012), (0.006, -0.008, -0.070), 0.014),
    ("shin_inner", "legs", "shin_right", (-0.008, 0.000, -0.020), (-0.004, 0.000, -0.075), 0.010),
    ("ankle", "legs", "shin_right", (0.006, 0.000, -0.094), (0.008, 0.000, -0.112), 0.011),
    ("heel", "feet", "foot_right", (0.000, -0.010, -0.016), (0.000, -0.002, -0.008), 0.013),
    ("sole", "feet", "foot_right", (0.000, 0.004, -0.024), (0.000, 0.042, -0.020), 0.010),
    ("instep", "feet", "foot_right", (0.000, 0.004, -0.006), (0.000, 0.038, -0.004), 0.010),
    ("toes", "feet", "foot_right", (-0.006, 0.050, -0.016), (0.008, 0.050, -0.014), 0.010),
]

_HAND_PARTS = {"palm", "hand_back", "fingers"}


def _hsv_to_rgb8(h: float, s: float, v: float) -> Tuple[int, int, int]:
    i = int(h / 60.0) % 6
    f = h / 60.0 - int(h / 60.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    r, g, b = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def _palette_color(k: int) -> Tuple[int, int, int]:
    # Hues in [70, 340]: always > 30 degrees away from the skin hue (~24).
    h = 70.0 + (k * 137.50776) % 270.0
    s = 0.55 + 0.30 * ((k * 0.381966) % 1.0)
    v = 0.60 + 0.35 * ((k * 0.754878) % 1.0)
    return _hsv_to_rgb8(h, s, v)


def default_body(sensor_count: int = DEFAULT_SENSOR_COUNT,
                 contact_radius: float = DEFAULT_CONTACT_RADIUS,
                 eye_offset: float = 0.03,
                 eye_fov_deg: float = 60.0,
                 eye_resolution: int = 64,
                 neck_range_scale: float = 1.0,
                 distractors: Optional[List[Distractor]] = None) -> BodySpec:
    """Build the standard infant body spec."""
    defs: Dict[str, JointDef] = {}

    def add(name, axis, limits, parent, offset):
        defs[name] = JointDef(name, axis, tuple(limits), -2, tuple(offset))
        defs[name].parent_name = parent

    for name, axis, limits, parent, offset in _CENTER_JOINTS:
        if name.startswith("neck_"):
            limits = (limits[0] * neck_range_scale, limits[1] * neck_range_scale)
        add(name, axis, limits, parent, offset)
    for name, axis, limits, parent, offset in _RIGHT_JOINTS:
        add(name, axis, limits, parent, offset)
        lname = "l_" + name[2:]
        lparent = parent
        if parent is not None and parent.startswith("r_"):
            lparent = "l_" + parent[2:]
        loffset = (-offset[0], offset[1], offset[2])
        llimits = limits if axis == "x" else (-limits[1], -limits[0])
        add(lname, axis, llimits, lparent, loffset)

    order = {n: i for i, n in enumerate(_JOINT_ORDER)}
    joints: List[JointDef] = [None] * len(_JOINT_ORDER)  # type: ignore
    for name, jd in defs.items():
        pname = jd.parent_name
        jd.parent = -1 if pname is None else order[pname]
        joints[order[name]] = jd

    links: Dict[str, int] = {}
    for link, joint in _RIGHT_LINKS.items():
        links[link] = -1 if joint is None else order[joint]
        if link.endswith("_right"):
            lj = "l_" + joint[2:]
            links[link.replace("_right", "_left")] = order[lj]

    segments: List[SegmentDef] = []
    for part, region, link, p0, p1, r in _RIGHT_SEGMENTS:
        mirror_link = (link.replace("_right", "_left")
                       if link.endswith("_right") else link)
        segments.append(SegmentDef(part + "_right", part, "right", region,
                                   link, p0, p1, r))
        segments.append(SegmentDef(part + "_left", part, "left", region,
                                   mirror_link,
                                   (-p0[0], p0[1], p0[2]),
                                   (-p1[0], p1[1], p1[2]), r))

    colors = np.zeros((len(segments), 3), dtype=np.uint8)
    for i, seg in enumerate(segments):
        if seg.part in _HAND_PARTS:
            colors[i] = SKIN_RGB
        else:
            colors[i] = _palette_color(i)

    fov = math.radians(eye_fov_deg)
    eyes = (EyeParams((-eye_offset, 0.052, 0.075), fov, eye_resolution),
            EyeParams((eye_offset, 0.052, 0.075), fov, eye_resolution))
    return BodySpec(joints, segments, links, sensor_count, contact_radius,
                    eyes, colors, distractors)


def load_body_config(path: str) -> BodySpec:
    """Build a body from a key-value override file (all keys optional)."""
    raw = load_kv_file(path)
    kwargs = {}
    for key in ("sensor_count", "eye_resolution"):
        if key in raw:
            kwargs[key] = int(raw.pop(key))
    for key in ("contact_radius", "eye_offset", "eye_fov_deg", "neck_range_scale"):
        if key in raw:
            kwargs[key] = float(raw.pop(key))
    if "distractor" in raw:
        vals = raw.pop("distractor")
        if not isinstance(vals, tuple) or len(vals) != 7:
            raise ConfigError("distractor expects 'x0,y0,z0,x1,y1,z1,radius'")
        kwargs["distractors"] = [Distractor(tuple(vals[0:3]), tuple(vals[3:6]),
                                            float(vals[6]))]
    if raw:
        raise ConfigError(f"unknown body config keys: {sorted(raw)}")
    return default_body(**kwargs)


# -- state and kinematics --------------------------------------------------

@dataclass
class BodyState:
    q: np.ndarray                 # (22,) joint angles, rad
    qdot: np.ndarray              # (22,) joint velocities, rad/step
    t: int                        # step index
    segment_poses: Tuple[np.ndarray, np.ndarray]  # world (R stack, t stack) per frame


@dataclass
class TactileFrame:
    activations: np.ndarray       # (n_sensors,) in [0, 1]
    nearest_segment: np.ndarray   # (n_sensors,) int, -1 where activation == 0


@dataclass
class ProprioFrame:
    values: np.ndarray            # (44,) q ++ qdot


def _rot(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def forward_kinematics(spec: BodySpec, q: np.ndarray,
                       diagnostics: Optional[Dict[str, int]] = None
                       ) -> Tuple[np.ndarray, np.ndarray]:
    """World frames for every joint: (n_joints, 3, 3) rotations, (n_joints, 3) origins.

    The root (pelvis) frame is the identity at the origin; a frame index of -1
    refers to it. Out-of-limit angles are clamped (counted in `diagnostics`).
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.n_joints,):
        raise ValueError(f"q must have shape ({spec.n_joints},)")
    lo, hi = spec.joint_limits[:, 0], spec.joint_limits[:, 1]
    clamped = np.clip(q, lo, hi)
    if diagnostics is not None:
        bad = int(np.sum(clamped != q))
        if bad:
            diagnostics["q_clamped"] = diagnostics.get("q_clamped", 0) + bad
    R = np.zeros((spec.n_joints, 3, 3))
    T = np.zeros((spec.n_joints, 3))
    for i, joint in enumerate(spec.joints):
        if joint.parent == -1:
            Rp, tp = np.eye(3), np.zeros(3)
        else:
            Rp, tp = R[joint.parent], T[joint.parent]
        T[i] = tp + Rp @ np.asarray(joint.offset)
        R[i] = Rp @ _rot(joint.axis, float(clamped[i]))
    return R, T


def frame_of(spec: BodySpec, poses: Tuple[np.ndarray, np.ndarray],
             frame_idx: int) -> Tuple[np.ndarray, np.ndarray]:
    R, T = poses
    if frame_idx == -1:
        return np.eye(3), np.zeros(3)
    return R[frame_idx], T[frame_idx]


def segment_endpoints_world(spec: BodySpec,
                            poses: Tuple[np.ndarray, np.ndarray]
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """World endpoints of all segment capsules: two (n_segments, 3) arrays."""
    R, T = poses
    p0 = np.empty((spec.n_segments, 3))
    p1 = np.empty((spec.n_segments, 3))
    for i in range(spec.n_segments):
        f = spec.seg_link_frame[i]
        Rf, tf = (np.eye(3), np.zeros(3)) if f == -1 else (R[f], T[f])
        p0[i] = Rf @ spec.seg_p0_local[i] + tf
        p1[i] = Rf @ spec.seg_p1_local[i] + tf
    return p0, p1


def sensor_positions_world(spec: BodySpec,
                           poses: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    R, T = poses
    out = np.empty((spec.sensor_count, 3))
    for i in range(spec.n_segments):
        start = spec.segment_sensor_start[i]
        n = spec.segment_sensor_count[i]
        f = spec.seg_link_frame[i]
        Rf, tf = (np.eye(3), np.zeros(3)) if f == -1 else (R[f], T[f])
        out[start:start + n] = spec.sensor_local[start:start + n] @ Rf.T + tf
    return out


def compute_contacts(spec: BodySpec,
                     poses: Tuple[np.ndarray, np.ndarray]) -> TactileFrame:
    """Per-sensor activation: max(0, 1 - d/r_c) against the nearest foreign capsule.

    d is the distance from the sensor point to the capsule *surface* (clamped at
    zero inside the capsule). Segments on the same link or on parent/child links
    never activate each other.
    """
    P = sensor_positions_world(spec, poses)
    a, b = segment_endpoints_world(spec, poses)

    abx = b[:, 0] - a[:, 0]
    aby = b[:, 1] - a[:, 1]
    abz = b[:, 2] - a[:, 2]
    denom = abx * abx + aby * aby + abz * abz
    safe = np.where(denom > 0.0, denom, 1.0)

    apx = P[:, 0:1] - a[None, :, 0]
    apy = P[:, 1:2] - a[None, :, 1]
    apz = P[:, 2:3] - a[None, :, 2]
    t = (apx * abx + apy * aby + apz * abz) / safe
    t = np.clip(t, 0.0, 1.0)
    t = np.where(denom > 0.0, t, 0.0)
    dx = apx - t * abx
    dy = apy - t * aby
    dz = apz - t * abz
    dist = np.sqrt(dx * dx + dy * dy + dz * dz) - spec.seg_radius[None, :]
    dist = np.maximum(dist, 0.0)
    dist = np.where(spec.sensor_allowed, dist, np.inf)

    nearest = np.argmin(dist, axis=1)
    dmin = dist[np.arange(spec.sensor_count), nearest]
    act = np.maximum(1.0 - dmin / spec.contact_radius, 0.0)
    nearest = np.where(act > 0.0, nearest, -1)
    return TactileFrame(activations=act, nearest_segment=nearest)


def rest_pose(spec: BodySpec) -> np.ndarray:
    return np.zeros(spec.n_joints)


def randomize_pose(spec: BodySpec, rng: np.random.Generator,
                   mode: str = "random") -> np.ndarray:
    """Initial joint angles: rest pose, or uniform in the central 80% of limits."""
    if mode == "fixed":
        return rest_pose(spec)
    if mode != "random":
        raise ValueError(f"unknown pose mode {mode!r}")
    lo, hi = spec.joint_limits[:, 0], spec.joint_limits[:, 1]
    span = hi - lo
    return lo + 0.1 * span + rng.random(spec.n_joints) * 0.8 * span


def initial_state(spec: BodySpec, q: Optional[np.ndarray] = None) -> BodyState:
    if q is None:
        q = rest_pose(spec)
    q = np.asarray(q, dtype=float).copy()
    poses = forward_kinematics(spec, q)
    return BodyState(q=q, qdot=np.zeros(spec.n_joints), t=0, segment_poses=poses)


def step(spec: BodySpec, state: BodyState, action: np.ndarray,
         diagnostics: Optional[Dict[str, int]] = None,
         with_tactile: bool = True
         ) -> Tuple[BodyState, Optional[TactileFrame], ProprioFrame]:
    """Velocity-level dynamics: qdot' = damping*qdot + gain*clip(action), q' = clip(q + qdot')."""
    action = np.asarray(action, dtype=float)
    if action.shape != (spec.n_joints,):
        raise ValueError(f"action must have shape ({spec.n_joints},)")
    if np.any(np.isnan(action)):
        raise ValueError("invalid action")
    action = np.clip(action, -1.0, 1.0)
    qdot = DAMPING * state.qdot + ACTION_GAIN * action
    q = state.q + qdot
    lo, hi = spec.joint_limits[:, 0], spec.joint_limits[:, 1]
    q_clamped = np.clip(q, lo, hi)
    if diagnostics is not None:
        bad = int(np.sum(q_clamped != q))
        if bad:
            diagnostics["q_clamped"] = diagnostics.get("q_clamped", 0) + bad
    poses = forward_kinematics(spec, q_clamped)
    new_state = BodyState(q=q_clamped, qdot=qdot, t=state.t + 1,
                          segment_poses=poses)
    tactile = compute_contacts(spec, poses) if with_tactile else None
    proprio = ProprioFrame(values=np.concatenate([q_clamped, qdot]))
    return new_state, tactile, proprio


def mirror_tactile(spec: BodySpec, activations: np.ndarray) -> np.ndarray:
    """Apply the left/right sensor permutation to a tactile vector."""
    return activations[spec.sensor_mirror]

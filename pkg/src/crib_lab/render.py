"""Tiny perspective renderer for the two head-mounted eyes.

Each eye is a pinhole camera rigidly attached to the head link, gazing along
the head's +y axis with +z up. Body segments and optional world-fixed
distractor capsules are drawn as flat-shaded 2D thick segments (a capsule's
silhouette), far-to-near, onto a solid background. The output is small
(64x64 by default) and meant for blob-level vision, not for looks.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .body import BACKGROUND_RGB, BodySpec, segment_endpoints_world

NEAR_PLANE = 0.02


def eye_pose(spec: BodySpec, poses: Tuple[np.ndarray, np.ndarray],
             eye: int) -> Tuple[np.ndarray, np.ndarray]:
    """World rotation and position of eye 0 (left) or 1 (right)."""
    R, T = poses
    head = spec.links["head"]
    Rh, th = R[head], T[head]
    offset = np.asarray(spec.eyes[eye].offset)
    return Rh, th + Rh @ offset


def view_coords(eye_R: np.ndarray, eye_t: np.ndarray,
                points: np.ndarray) -> np.ndarray:
    """Camera-space coordinates: columns (right, depth, up)."""
    d = (np.atleast_2d(points) - eye_t) @ eye_R
    return d


def project_point(spec: BodySpec, poses: Tuple[np.ndarray, np.ndarray],
                  eye: int, point: np.ndarray) -> Optional[Tuple[float, float, float]]:
    """Continuous pixel coordinates (px, py) and depth of a world point.

    Returns None when the point is behind the near plane. Points outside the
    image rectangle still project (coordinates fall outside [0, res)).
    """
    params = spec.eyes[eye]
    eR, et = eye_pose(spec, poses, eye)
    v = view_coords(eR, et, np.asarray(point, dtype=float))[0]
    x, depth, z = v
    if depth < NEAR_PLANE:
        return None
    half = math.tan(params.fov / 2.0)
    u = (x / depth) / half
    w = -(z / depth) / half
    px = (u + 1.0) / 2.0 * params.resolution
    py = (w + 1.0) / 2.0 * params.resolution
    return px, py, depth


def _gather_capsules(spec: BodySpec, poses: Tuple[np.ndarray, np.ndarray]
                     ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    p0, p1 = segment_endpoints_world(spec, poses)
    radii = spec.seg_radius
    colors = spec.part_colors
    if spec.distractors:
        d0 = np.array([d.p0 for d in spec.distractors])
        d1 = np.array([d.p1 for d in spec.distractors])
        dr = np.array([d.radius for d in spec.distractors])
        dc = np.array([d.color for d in spec.distractors], dtype=np.uint8)
        p0 = np.vstack([p0, d0])
        p1 = np.vstack([p1, d1])
        radii = np.concatenate([radii, dr])
        colors = np.vstack([colors, dc])
    return p0, p1, radii, colors


def render_eye(spec: BodySpec, poses: Tuple[np.ndarray, np.ndarray],
               eye: int) -> np.ndarray:
    """Render one eye view to an (res, res, 3) uint8 image."""
    params = spec.eyes[eye]
    res = params.resolution
    half = math.tan(params.fov / 2.0)
    scale = res / 2.0

    eR, et = eye_pose(spec, poses, eye)
    p0, p1, radii, colors = _gather_capsules(spec, poses)
    v0 = view_coords(eR, et, p0)
    v1 = view_coords(eR, et, p1)

    img = np.empty((res, res, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB

    draw = []
    for i in range(len(radii)):
        a, b = v0[i].copy(), v1[i].copy()
        da, db = a[1], b[1]
        if da < NEAR_PLANE and db < NEAR_PLANE:
            continue
        if da < NEAR_PLANE or db < NEAR_PLANE:
            # clip the behind endpoint to the near plane
            t = (NEAR_PLANE - da) / (db - da)
            c = a + t * (b - a)
            if da < NEAR_PLANE:
                a = c
            else:
                b = c
        draw.append((0.5 * (a[1] + b[1]), i, a, b))
    # painter's algorithm, far to near; stable order for ties
    draw.sort(key=lambda item: (-item[0], item[1]))

    ys, xs = np.mgrid[0:res, 0:res]
    xs = xs + 0.5
    ys = ys + 0.5
    for _, i, a, b in draw:
        x0 = (a[0] / a[1]) / half * scale + scale
        y0 = (-a[2] / a[1]) / half * scale + scale
        x1 = (b[0] / b[1]) / half * scale + scale
        y1 = (-b[2] / b[1]) / half * scale + scale
        r0 = radii[i] / (a[1] * half) * scale
        r1 = radii[i] / (b[1] * half) * scale
        rmax = max(r0, r1)
        lo_x = max(int(math.floor(min(x0, x1) - rmax)), 0)
        hi_x = min(int(math.ceil(max(x0, x1) + rmax)), res)
        lo_y = max(int(math.floor(min(y0, y1) - rmax)), 0)
        hi_y = min(int(math.ceil(max(y0, y1) + rmax)), res)
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        px = xs[lo_y:hi_y, lo_x:hi_x]
        py = ys[lo_y:hi_y, lo_x:hi_x]
        vx, vy = x1 - x0, y1 - y0
        l2 = vx * vx + vy * vy
        if l2 > 0.0:
            t = np.clip(((px - x0) * vx + (py - y0) * vy) / l2, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        dx = px - x0 - t * vx
        dy = py - y0 - t * vy
        rad = r0 + t * (r1 - r0)
        mask = dx * dx + dy * dy <= rad * rad
        img[lo_y:hi_y, lo_x:hi_x][mask] = colors[i]
    return img


def render_frame(spec: BodySpec,
                 poses: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Both eye views for the current pose."""
    return render_eye(spec, poses, 0), render_eye(spec, poses, 1)


# -- PPM io -----------------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6, maxval 255)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, c = img.shape
    if c != 3:
        raise ValueError("PPM needs 3 channels")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields: List[bytes] = []
    pos = 0
    while len(fields) < 4:
        # skip whitespace and '#' comments between header fields
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"not a P6 PPM: {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def frame_path(directory, index: int) -> Path:
    return Path(directory) / f"frame_{index:06d}.ppm"


def write_frame(directory, index: int, left: np.ndarray,
                right: np.ndarray) -> Path:
    """Dump both eyes side by side (left|right) as one numbered PPM."""
    composite = np.concatenate([left, right], axis=1)
    path = frame_path(directory, index)
    write_ppm(path, composite)
    return path

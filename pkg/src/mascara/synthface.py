"""Procedural synthetic faces: seeded identities, ground-truth landmarks,
named facial regions, and jittered multi-camera frame streams.

Faces are flat 2-D vector renderings (ellipses and arcs, antialiased via
signed distances), not photorealistic. Geometry lives in a neutral canvas
space; a capture transform (yaw/pitch foreshortening, roll, scale, offset)
maps it to the frame, so ground-truth landmarks come free and makeup applied
in face-local coordinates moves with the face across poses.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from mascara import makeup as makeup_mod
from mascara.imaging import save_png

CANVAS = 256

REGION_NAMES = (
    "left_brow", "right_brow", "left_eyelid", "right_eyelid",
    "left_cheek", "right_cheek", "nose_ridge", "nose_sides",
    "lips", "forehead_contour", "jaw_contour",
)


@dataclass(frozen=True)
class IdentityParams:
    seed: int
    face_a: float          # head half-width, canvas px
    face_b: float          # head half-height
    eye_dx: float          # half eye spacing
    eye_y: float           # eye row relative to canvas center (negative = up)
    eye_r: float
    iris_frac: float
    brow_dy: float         # brow offset above the eye row
    brow_len: float        # half-length
    brow_arch: float
    brow_th: float
    nose_len: float
    nose_w: float
    mouth_y: float         # below canvas center
    mouth_w: float         # half-width
    lip_th: float
    skin: tuple
    lip: tuple
    brow: tuple
    iris: tuple

    @property
    def vector(self):
        flat = [
            self.face_a, self.face_b, self.eye_dx, self.eye_y, self.eye_r,
            self.iris_frac, self.brow_dy, self.brow_len, self.brow_arch,
            self.brow_th, self.nose_len, self.nose_w, self.mouth_y,
            self.mouth_w, self.lip_th,
        ]
        for c in (self.skin, self.lip, self.brow, self.iris):
            flat.extend(c)
        return tuple(flat)


def identity_from_seed(seed: int) -> IdentityParams:
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, 24)

    def lerp(i, lo, hi):
        return float(lo + (hi - lo) * u[i])

    skin_r = lerp(15, 0.58, 0.85)
    skin_g = skin_r * lerp(16, 0.74, 0.86)
    skin_b = skin_g * lerp(17, 0.72, 0.88)
    lip_r = lerp(18, 0.52, 0.74)
    lip_g = lip_r * lerp(19, 0.42, 0.60)
    lip_b = min(1.0, lip_g * lerp(20, 0.80, 1.05))
    brow_v = lerp(21, 0.12, 0.38)
    iris_v = lerp(22, 0.20, 0.55)
    iris_b = iris_v * lerp(23, 0.30, 0.95)
    return IdentityParams(
        seed=seed,
        face_a=lerp(0, 72, 87),
        face_b=lerp(1, 92, 107),
        eye_dx=lerp(2, 26, 36),
        eye_y=lerp(3, -23, -13),
        eye_r=lerp(4, 5.5, 8.0),
        iris_frac=lerp(5, 0.45, 0.62),
        brow_dy=lerp(6, -14, -9),
        brow_len=lerp(7, 14, 20),
        brow_arch=lerp(8, 2, 6),
        brow_th=lerp(9, 1.6, 3.0),
        nose_len=lerp(10, 28, 40),
        nose_w=lerp(11, 5, 9),
        mouth_y=lerp(12, 42, 56),
        mouth_w=lerp(13, 14, 21),
        lip_th=lerp(14, 3.5, 6.0),
        skin=(skin_r, skin_g, skin_b),
        lip=(lip_r, lip_g, lip_b),
        brow=(brow_v, brow_v * 0.75, brow_v * 0.55),
        iris=(iris_v, iris_v * 0.80, iris_b),
    )


def identity_to_json(params: IdentityParams) -> dict:
    doc = {"seed": params.seed}
    for name in ("face_a", "face_b", "eye_dx", "eye_y", "eye_r", "iris_frac",
                 "brow_dy", "brow_len", "brow_arch", "brow_th", "nose_len",
                 "nose_w", "mouth_y", "mouth_w", "lip_th"):
        doc[name] = getattr(params, name)
    for name in ("skin", "lip", "brow", "iris"):
        doc[name] = list(getattr(params, name))
    return doc


def identity_from_json(doc: dict) -> IdentityParams:
    kw = dict(doc)
    for name in ("skin", "lip", "brow", "iris"):
        kw[name] = tuple(kw[name])
    return IdentityParams(**kw)


@dataclass(frozen=True)
class CaptureParams:
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    scale: float = 1.0
    dx: float = 0.0
    dy: float = 0.0
    brightness: float = 0.0


NEUTRAL_CAPTURE = CaptureParams()


@dataclass(frozen=True)
class FaceLandmarks:
    points: dict
    bbox: tuple  # (x0, y0, x1, y1)

    @property
    def left_eye(self):
        return self.points["left_eye"]

    @property
    def right_eye(self):
        return self.points["right_eye"]

    @property
    def nose_tip(self):
        return self.points["nose_tip"]

    @property
    def mouth_left(self):
        return self.points["mouth_left"]

    @property
    def mouth_right(self):
        return self.points["mouth_right"]

    def to_json(self):
        return {
            "points": {k: [float(v[0]), float(v[1])] for k, v in sorted(self.points.items())},
            "bbox": [float(v) for v in self.bbox],
        }

    @classmethod
    def from_json(cls, doc):
        return cls(points={k: (float(v[0]), float(v[1])) for k, v in doc["points"].items()},
                   bbox=tuple(float(v) for v in doc["bbox"]))


def _capture_matrix(capture: CaptureParams, size: int):
    """Affine p_out = M @ p_neutral + t keeping the canvas center fixed
    (up to the capture offset)."""
    cy = math.cos(math.radians(capture.yaw_deg))
    cp = math.cos(math.radians(capture.pitch_deg))
    r = math.radians(capture.roll_deg)
    rot = np.array([[math.cos(r), -math.sin(r)], [math.sin(r), math.cos(r)]])
    m = capture.scale * rot @ np.diag([cy, cp])
    center = np.array([CANVAS / 2.0, CANVAS / 2.0])
    out_center = np.array([size / 2.0 + capture.dx, size / 2.0 + capture.dy])
    t = out_center - m @ center
    return m, t


def _smooth(d, w):
    """Antialiased coverage from a signed distance (negative = inside)."""
    t = np.clip(0.5 - d / w, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _ellipse_alpha(x, y, cx, cy, rx, ry, edge=1.2):
    rho = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    return _smooth((rho - 1.0) * min(rx, ry), edge)


def _segment_alpha(x, y, p1, p2, radius, edge=1.0):
    vx, vy = p2[0] - p1[0], p2[1] - p1[1]
    len2 = vx * vx + vy * vy
    if len2 == 0:
        d = np.hypot(x - p1[0], y - p1[1]) - radius
        return _smooth(d, edge)
    t = np.clip(((x - p1[0]) * vx + (y - p1[1]) * vy) / len2, 0.0, 1.0)
    d = np.hypot(x - (p1[0] + t * vx), y - (p1[1] + t * vy)) - radius
    return _smooth(d, edge)


def _paint(color_img, alpha, rgb):
    a = alpha[..., None]
    return color_img * (1.0 - a) + np.asarray(rgb) * a


def _neutral_landmark_points(p: IdentityParams) -> dict:
    c = CANVAS / 2.0
    eye_y = c + p.eye_y
    brow_y = eye_y + p.brow_dy
    nose_tip_y = eye_y + 6.0 + p.nose_len
    pts = {
        "left_eye": (c - p.eye_dx, eye_y),
        "right_eye": (c + p.eye_dx, eye_y),
        "nose_tip": (c, nose_tip_y),
        "mouth_left": (c - p.mouth_w, c + p.mouth_y),
        "mouth_right": (c + p.mouth_w, c + p.mouth_y),
        "left_brow_inner": (c - p.eye_dx + p.brow_len, brow_y),
        "left_brow_outer": (c - p.eye_dx - p.brow_len, brow_y),
        "right_brow_inner": (c + p.eye_dx - p.brow_len, brow_y),
        "right_brow_outer": (c + p.eye_dx + p.brow_len, brow_y),
    }
    for k in range(8):
        ang = math.pi * k / 4.0
        pts[f"oval_{k}"] = (c + p.face_a * math.cos(ang), c + p.face_b * math.sin(ang))
    return pts


def _neutral_landmarks(p: IdentityParams) -> FaceLandmarks:
    c = CANVAS / 2.0
    bbox = (c - p.face_a, c - p.face_b, c + p.face_a, c + p.face_b)
    return FaceLandmarks(points=_neutral_landmark_points(p), bbox=bbox)


def _brow_alpha(x, y, cx, brow_y, half_len, arch, thickness):
    u = np.clip((x - (cx - half_len)) / (2.0 * half_len), 0.0, 1.0)
    xi = cx - half_len + 2.0 * half_len * u
    yi = brow_y - arch * (1.0 - ((xi - cx) / half_len) ** 2)
    d = np.hypot(x - xi, y - yi) - thickness
    return _smooth(d, 1.0)


def _face_color(p: IdentityParams, x, y):
    """Face color and head coverage at neutral-canvas points."""
    c = CANVAS / 2.0
    eye_y = c + p.eye_y
    brow_y = eye_y + p.brow_dy
    nose_tip_y = eye_y + 6.0 + p.nose_len
    mouth_cy = c + p.mouth_y
    skin = np.asarray(p.skin)

    rho = np.sqrt(((x - c) / p.face_a) ** 2 + ((y - c) / p.face_b) ** 2)
    head_alpha = _smooth((rho - 1.0) * min(p.face_a, p.face_b), 1.2)
    shade = 1.0 - 0.18 * np.clip(rho, 0.0, 1.0) ** 2 - 0.05 * np.clip((y - c) / p.face_b, -1, 1)
    col = skin * shade[..., None]

    lid = np.asarray(p.skin) * 0.93
    for sx in (-1.0, 1.0):
        ex = c + sx * p.eye_dx
        col = _paint(col, _ellipse_alpha(x, y, ex, eye_y - 0.8 * p.eye_r,
                                         1.7 * p.eye_r, 1.3 * p.eye_r), lid)
        col = _paint(col, _brow_alpha(x, y, ex, brow_y, p.brow_len, p.brow_arch, p.brow_th),
                     p.brow)
        col = _paint(col, _ellipse_alpha(x, y, ex, eye_y, 1.5 * p.eye_r, p.eye_r),
                     (0.95, 0.94, 0.92))
        iris_r = p.eye_r * p.iris_frac
        col = _paint(col, _ellipse_alpha(x, y, ex, eye_y, iris_r, iris_r), p.iris)
        col = _paint(col, _ellipse_alpha(x, y, ex, eye_y, 0.45 * iris_r, 0.45 * iris_r),
                     (0.05, 0.05, 0.06))

    bridge = (c, eye_y + 6.0)
    tip = (c, nose_tip_y)
    col = _paint(col, _segment_alpha(x, y, bridge, tip, 0.45 * p.nose_w) * 0.35,
                 skin * 0.80)
    for sx in (-1.0, 1.0):
        side_top = (c + sx * p.nose_w, nose_tip_y - 6.0)
        side_bot = (c + sx * 1.2 * p.nose_w, nose_tip_y)
        col = _paint(col, _segment_alpha(x, y, side_top, side_bot, 2.5) * 0.5, skin * 0.78)
        col = _paint(col, _ellipse_alpha(x, y, c + sx * 0.75 * p.nose_w, nose_tip_y + 1.0,
                                         2.2, 1.6), skin * 0.55)

    dxm = x - c
    dym = y - mouth_cy
    half_h = p.lip_th * np.clip(1.0 - (dxm / p.mouth_w) ** 2, 0.0, None)
    lip_d = np.abs(dym) - half_h
    lip_alpha = _smooth(lip_d, 1.0) * (np.abs(dxm) <= p.mouth_w * 1.05)
    upper = dym < 0
    lip_col = np.where(upper[..., None], np.asarray(p.lip) * 0.82, np.asarray(p.lip))
    col = col * (1.0 - lip_alpha[..., None]) + lip_col * lip_alpha[..., None]
    col = _paint(col, _segment_alpha(x, y, (c - 0.9 * p.mouth_w, mouth_cy),
                                     (c + 0.9 * p.mouth_w, mouth_cy), 0.7),
                 np.asarray(p.lip) * 0.5)
    return col, head_alpha


def render_identity(params: IdentityParams, capture: CaptureParams = NEUTRAL_CAPTURE,
                    size: int = CANVAS, makeup_layers=(), palette=None):
    """Render one frame and its ground-truth landmarks.

    Optional makeup layers are blended in face-local coordinates (masks built
    from the neutral landmarks) before the capture transform, so they stick to
    the face under any pose.
    """
    m, t = _capture_matrix(capture, size)
    det = np.linalg.det(m)
    if abs(det) < 1e-9:
        raise ValueError("capture transform is degenerate (90-degree pose?)")
    minv = np.linalg.inv(m)

    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    px = xs - t[0]
    py = ys - t[1]
    nx = minv[0, 0] * px + minv[0, 1] * py
    ny = minv[1, 0] * px + minv[1, 1] * py

    col, head_alpha = _face_color(params, nx, ny)

    if makeup_layers:
        palette = palette or makeup_mod.DEFAULT_PALETTE
        fields = region_fields(_neutral_landmarks(params))
        for layer in makeup_layers:
            entry = makeup_mod.validate_layer(layer, palette)
            if layer.region not in fields:
                raise ValueError(f"unknown region {layer.region!r}")
            w = (layer.opacity * fields[layer.region](nx, ny))[..., None]
            col = col * (1.0 - w) + np.asarray(entry.rgb) * w

    bg = (0.84 - 0.05 * (ys / size))[..., None] * np.array([1.0, 1.0, 1.02])
    img = bg * (1.0 - head_alpha[..., None]) + col * head_alpha[..., None]
    img = np.clip(img + capture.brightness, 0.0, 1.0)

    pts = {}
    for k, v in _neutral_landmark_points(params).items():
        tp = m @ np.asarray(v) + t
        pts[k] = (float(tp[0]), float(tp[1]))
    c = CANVAS / 2.0
    center_t = m @ np.array([c, c]) + t
    ex = math.hypot(m[0, 0] * params.face_a, m[0, 1] * params.face_b)
    ey = math.hypot(m[1, 0] * params.face_a, m[1, 1] * params.face_b)
    bbox = (float(center_t[0] - ex), float(center_t[1] - ey),
            float(center_t[0] + ex), float(center_t[1] + ey))
    if bbox[0] < 0 or bbox[1] < 0 or bbox[2] > size or bbox[3] > size:
        raise ValueError(f"capture pushes the face outside the {size}x{size} frame: bbox={bbox}")
    return img, FaceLandmarks(points=pts, bbox=bbox)


MIN_EYE_DISTANCE = 4.0
_FEATHER = 0.15  # in eye-distance units


def region_fields(landmarks: FaceLandmarks) -> dict:
    """Named soft-mask fields evaluable at arbitrary (x, y) point arrays.

    All geometry is expressed in eye-distance units around the eye midpoint,
    so the fields scale and rotate with the face.
    """
    pts = {k: np.asarray(v, dtype=np.float64) for k, v in landmarks.points.items()}
    le, re = pts["left_eye"], pts["right_eye"]
    d = float(np.linalg.norm(re - le))
    if d < MIN_EYE_DISTANCE:
        raise ValueError(f"degenerate landmarks: eye distance {d:.2f}px")
    mid = (le + re) / 2.0
    ex = (re - le) / d
    ey = np.array([-ex[1], ex[0]])  # +90 deg: points down the face

    def to_q(x, y):
        px = x - mid[0]
        py = y - mid[1]
        return (px * ex[0] + py * ex[1]) / d, (px * ey[0] + py * ey[1]) / d

    def q_of(p):
        qx, qy = to_q(np.asarray(p[0], dtype=np.float64), np.asarray(p[1], dtype=np.float64))
        return float(qx), float(qy)

    def ellipse(cx, cy, rx, ry):
        def f(x, y):
            qx, qy = to_q(x, y)
            rho = np.sqrt(((qx - cx) / rx) ** 2 + ((qy - cy) / ry) ** 2)
            return _smooth((rho - 1.0) * min(rx, ry), _FEATHER)
        return f

    def capsule(p1, p2, radius):
        def f(x, y):
            qx, qy = to_q(x, y)
            return _segment_alpha(qx, qy, p1, p2, radius, edge=_FEATHER)
        return f

    def union(f1, f2):
        def f(x, y):
            return np.maximum(f1(x, y), f2(x, y))
        return f

    nose_q = q_of(pts["nose_tip"])
    mouth_mid = (pts["mouth_left"] + pts["mouth_right"]) / 2.0
    mouth_q = q_of(mouth_mid)
    lip_w = float(np.linalg.norm(pts["mouth_right"] - pts["mouth_left"])) / (2.0 * d)

    fields = {
        "left_eyelid": ellipse(-0.5, -0.14, 0.44, 0.34),
        "right_eyelid": ellipse(0.5, -0.14, 0.44, 0.34),
        "left_cheek": ellipse(-0.68, 0.72, 0.54, 0.50),
        "right_cheek": ellipse(0.68, 0.72, 0.54, 0.50),
        "left_brow": capsule(q_of(pts["left_brow_outer"]), q_of(pts["left_brow_inner"]), 0.17),
        "right_brow": capsule(q_of(pts["right_brow_inner"]), q_of(pts["right_brow_outer"]), 0.17),
        "nose_ridge": capsule((0.0, 0.12), nose_q, 0.17),
        "nose_sides": union(
            ellipse(nose_q[0] - 0.30, nose_q[1] - 0.02, 0.22, 0.27),
            ellipse(nose_q[0] + 0.30, nose_q[1] - 0.02, 0.22, 0.27),
        ),
        "lips": ellipse(mouth_q[0], mouth_q[1], lip_w * 1.40, lip_w * 0.80),
        "forehead_contour": ellipse(0.0, -1.00, 1.05, 0.48),
        "jaw_contour": ellipse(mouth_q[0], mouth_q[1] + 0.55, 1.00, 0.45),
    }
    assert set(fields) == set(REGION_NAMES)
    return fields


def region_masks(landmarks: FaceLandmarks, image_size) -> dict:
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    h, w = image_size
    fields = region_fields(landmarks)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return {name: f(xs, ys) for name, f in fields.items()}


@dataclass(frozen=True)
class CameraProfile:
    id: str
    yaw_range: tuple = (0.0, 0.0)
    pitch_range: tuple = (0.0, 0.0)
    brightness_range: tuple = (0.0, 0.0)
    scale_range: tuple = (1.0, 1.0)
    noise_sigma: float = 0.0
    fps: float = 10.0

    MIN_FACE = 15.0
    _MIN_HALF_WIDTH = 72.0  # smallest identity half-width the generator emits

    def __post_init__(self):
        for name in ("yaw_range", "pitch_range", "brightness_range", "scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (lo, hi) with lo <= hi")
            object.__setattr__(self, name, (float(lo), float(hi)))
        worst = 2.0 * self._MIN_HALF_WIDTH * self.scale_range[0] * math.cos(
            math.radians(max(abs(self.yaw_range[0]), abs(self.yaw_range[1]))))
        if worst < self.MIN_FACE:
            raise ValueError(
                f"profile {self.id!r} can shrink faces below {self.MIN_FACE}px "
                f"(worst case {worst:.1f}px)")

    def to_json(self):
        return {
            "id": self.id,
            "yaw_range": list(self.yaw_range),
            "pitch_range": list(self.pitch_range),
            "brightness_range": list(self.brightness_range),
            "scale_range": list(self.scale_range),
            "noise_sigma": self.noise_sigma,
            "fps": self.fps,
        }

    @classmethod
    def from_json(cls, doc):
        kw = dict(doc)
        for name in ("yaw_range", "pitch_range", "brightness_range", "scale_range"):
            kw[name] = tuple(kw[name])
        return cls(**kw)


DEFAULT_PROFILES = (
    CameraProfile(id="corridor_near", yaw_range=(-20.0, 20.0), pitch_range=(2.0, 12.0),
                  brightness_range=(-0.10, 0.10), scale_range=(0.80, 1.00),
                  noise_sigma=0.015),
    CameraProfile(id="corridor_far", yaw_range=(-26.0, 26.0), pitch_range=(8.0, 20.0),
                  brightness_range=(-0.18, 0.0), scale_range=(0.58, 0.76),
                  noise_sigma=0.020),
)


@dataclass(frozen=True)
class Frame:
    image: np.ndarray
    bbox: tuple
    landmarks: FaceLandmarks
    index: int
    camera_id: str


@dataclass(frozen=True)
class FrameStream:
    frames: tuple
    identity_seed: int
    profile_id: str
    seed: int

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def synth_stream(identity: IdentityParams, profile: CameraProfile, n_frames: int,
                 seed: int, makeup_layers=(), palette=None) -> FrameStream:
    """Deterministic jittered frames; makeup rides the face through every pose.

    The jitter draw sequence does not depend on the makeup, so streams that
    differ only in layers see identical captures.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n_frames):
        capture = CaptureParams(
            yaw_deg=float(rng.uniform(*profile.yaw_range)),
            pitch_deg=float(rng.uniform(*profile.pitch_range)),
            scale=float(rng.uniform(*profile.scale_range)),
            brightness=float(rng.uniform(*profile.brightness_range)),
        )
        img, lm = render_identity(identity, capture, makeup_layers=makeup_layers,
                                  palette=palette)
        if profile.noise_sigma > 0:
            img = np.clip(img + rng.normal(0.0, profile.noise_sigma, img.shape), 0.0, 1.0)
        frames.append(Frame(image=img, bbox=lm.bbox, landmarks=lm, index=i,
                            camera_id=profile.id))
    return FrameStream(frames=tuple(frames), identity_seed=identity.seed,
                       profile_id=profile.id, seed=seed)


def save_stream(stream: FrameStream, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "identity_seed": stream.identity_seed,
        "profile_id": stream.profile_id,
        "seed": stream.seed,
        "frames": [],
    }
    for frame in stream:
        name = f"frame_{frame.index:04d}.png"
        save_png(os.path.join(directory, name), frame.image)
        manifest["frames"].append({
            "index": frame.index,
            "file": name,
            "camera_id": frame.camera_id,
            "bbox": [float(v) for v in frame.bbox],
            "landmarks": frame.landmarks.to_json(),
        })
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")

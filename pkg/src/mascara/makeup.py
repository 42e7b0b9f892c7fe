"""Makeup representation and math: palette constraints, soft-mask
compositing, the colorfulness intensity metric, and the random baseline."""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, replace

import numpy as np

from mascara.imaging import box_filter

OPACITY_CAP = 0.8

# hue bands (degrees) covering browns, warm reds, and neutral pinks
NATURAL_HUE_BANDS = ((0.0, 50.0), (330.0, 360.0))

# per-role (sat_min, sat_max, val_min, val_max)
ROLE_BOUNDS = {
    "contour": (0.25, 0.80, 0.20, 0.65),
    "eyeshadow": (0.10, 0.80, 0.15, 0.75),
    "blush": (0.15, 0.60, 0.50, 0.95),
    "lipstick": (0.35, 1.00, 0.30, 0.85),
    "brow": (0.20, 0.75, 0.05, 0.50),
}


def is_natural(rgb, role: str) -> bool:
    """Daily-palette predicate: warm hue band plus per-role sat/value bounds."""
    if role not in ROLE_BOUNDS:
        raise ValueError(f"unknown makeup role {role!r}")
    r, g, b = (float(v) for v in rgb)
    h, s, v = colorsys.rgb_to_hsv(r, g, b)
    hue = (h * 360.0) % 360.0
    if not any(lo <= hue < hi or hue == lo for lo, hi in NATURAL_HUE_BANDS):
        return False
    smin, smax, vmin, vmax = ROLE_BOUNDS[role]
    return smin <= s <= smax and vmin <= v <= vmax


@dataclass(frozen=True)
class PaletteEntry:
    id: str
    rgb: tuple
    regions: frozenset
    role: str

    def __post_init__(self):
        object.__setattr__(self, "rgb", tuple(float(v) for v in self.rgb))
        object.__setattr__(self, "regions", frozenset(self.regions))
        if len(self.rgb) != 3 or not all(0.0 <= v <= 1.0 for v in self.rgb):
            raise ValueError(f"entry {self.id!r}: rgb must be three values in [0,1]")
        if not self.regions:
            raise ValueError(f"entry {self.id!r}: needs at least one allowed region")
        if not is_natural(self.rgb, self.role):
            raise ValueError(f"entry {self.id!r}: color fails the naturalness predicate")


class Palette:
    def __init__(self, entries):
        self.entries = {}
        for e in entries:
            if e.id in self.entries:
                raise ValueError(f"duplicate palette entry id {e.id!r}")
            self.entries[e.id] = e

    def __iter__(self):
        return iter(self.entries.values())

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, entry_id) -> PaletteEntry:
        try:
            return self.entries[entry_id]
        except KeyError:
            raise ValueError(f"unknown palette entry {entry_id!r}") from None

    def __contains__(self, entry_id):
        return entry_id in self.entries

    def entries_for_region(self, region):
        return [e for _, e in sorted(self.entries.items()) if region in e.regions]

    def to_json(self):
        return {
            "entries": [
                {"id": e.id, "rgb": list(e.rgb), "regions": sorted(e.regions), "role": e.role}
                for _, e in sorted(self.entries.items())
            ]
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            PaletteEntry(id=d["id"], rgb=tuple(d["rgb"]), regions=frozenset(d["regions"]),
                         role=d["role"])
            for d in doc["entries"]
        )


_CONTOUR_REGIONS = frozenset({"nose_ridge", "nose_sides", "forehead_contour", "jaw_contour"})
_EYELIDS = frozenset({"left_eyelid", "right_eyelid"})
_CHEEKS = frozenset({"left_cheek", "right_cheek"})
_BROWS = frozenset({"left_brow", "right_brow"})
_LIPS = frozenset({"lips"})

DEFAULT_PALETTE = Palette([
    PaletteEntry("contour_deep_brown", (0.26, 0.17, 0.13), _CONTOUR_REGIONS, "contour"),
    PaletteEntry("contour_soft_brown", (0.52, 0.38, 0.30), _CONTOUR_REGIONS, "contour"),
    PaletteEntry("eyeshadow_espresso", (0.18, 0.12, 0.09), _EYELIDS, "eyeshadow"),
    PaletteEntry("eyeshadow_chestnut", (0.42, 0.26, 0.19), _EYELIDS, "eyeshadow"),
    PaletteEntry("eyeshadow_taupe", (0.55, 0.44, 0.38), _EYELIDS, "eyeshadow"),
    PaletteEntry("blush_rose", (0.78, 0.42, 0.40), _CHEEKS, "blush"),
    PaletteEntry("blush_peach", (0.89, 0.62, 0.50), _CHEEKS, "blush"),
    PaletteEntry("lipstick_brick", (0.40, 0.14, 0.13), _LIPS, "lipstick"),
    PaletteEntry("lipstick_rosewood", (0.70, 0.38, 0.36), _LIPS, "lipstick"),
    PaletteEntry("lipstick_mauve", (0.64, 0.40, 0.42), _LIPS, "lipstick"),
    PaletteEntry("brow_dark_umber", (0.14, 0.09, 0.07), _BROWS, "brow"),
    PaletteEntry("brow_soft_sepia", (0.40, 0.29, 0.22), _BROWS, "brow"),
])


@dataclass(frozen=True)
class MakeupLayer:
    region: str
    entry: str
    opacity: float
    feather: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must be in [0,1], got {self.opacity}")
        if self.feather < 0.0:
            raise ValueError(f"feather must be non-negative, got {self.feather}")


def validate_layer(layer: MakeupLayer, palette: Palette, cap: float = OPACITY_CAP) -> PaletteEntry:
    entry = palette[layer.entry]
    if layer.region not in entry.regions:
        raise ValueError(f"entry {layer.entry!r} is not allowed on region {layer.region!r}")
    if layer.opacity > cap:
        raise ValueError(f"opacity {layer.opacity} exceeds the per-region cap {cap}")
    return entry


def apply_layer(image, layer: MakeupLayer, masks, palette: Palette = DEFAULT_PALETTE,
                cap: float = OPACITY_CAP):
    """out = image*(1 - opacity*mask) + color*(opacity*mask); convex, so the
    result never leaves [0,1] and zero-mask pixels are untouched."""
    entry = validate_layer(layer, palette, cap)
    if layer.region not in masks:
        raise ValueError(f"unknown region {layer.region!r}")
    mask = masks[layer.region]
    if layer.feather > 0:
        mask = box_filter(mask, int(round(layer.feather)))
    w = (layer.opacity * mask)[..., None]
    color = np.array(entry.rgb)
    return np.clip(image * (1.0 - w) + color * w, 0.0, 1.0)


def composite(image, layers, masks, palette: Palette = DEFAULT_PALETTE,
              cap: float = OPACITY_CAP):
    out = np.asarray(image, dtype=np.float64).copy()
    for layer in layers:
        out = apply_layer(out, layer, masks, palette, cap)
    return out


def colorfulness(perturbation, scale: float = 255.0) -> float:
    """Opponent-space colorfulness of a signed difference image.

    rg = R-G, yb = (R+G)/2 - B on the 0-255 scale;
    score = sqrt(var(rg)+var(yb)) + 0.3*sqrt(mean(rg)^2+mean(yb)^2).
    """
    d = np.asarray(perturbation, dtype=np.float64)
    if d.ndim != 3 or d.shape[2] != 3:
        raise ValueError(f"perturbation must be HxWx3, got shape {d.shape}")
    d = d * scale
    rg = d[..., 0] - d[..., 1]
    yb = 0.5 * (d[..., 0] + d[..., 1]) - d[..., 2]
    sigma = np.sqrt(np.var(rg) + np.var(yb))
    mu = np.sqrt(np.mean(rg) ** 2 + np.mean(yb) ** 2)
    return float(sigma + 0.3 * mu)


def intensity(with_makeup, without_makeup, scale: float = 255.0) -> float:
    """Colorfulness of (with - without); shapes must agree."""
    a = np.asarray(with_makeup, dtype=np.float64)
    b = np.asarray(without_makeup, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return colorfulness(a - b, scale)


@dataclass(frozen=True)
class RandomMakeupResult:
    layers: tuple
    intensity: float
    met_target: bool


_ESCALATION = (0.3, 0.4, 0.5, 0.6, 0.7, OPACITY_CAP)


def random_makeup(palette: Palette, masks, seed, min_intensity: float,
                  base_image, max_draws: int = 8,
                  feather: float = 0.0) -> RandomMakeupResult:
    """Seeded random layer sets, escalating opacity until the intensity target
    is met or the cap is reached; the achieved score is always reported.
    Intensity is scored on the feathered composite when feather > 0."""
    rng = np.random.default_rng(seed)
    regions = sorted(r for r in masks if palette.entries_for_region(r))
    if not regions:
        raise ValueError("no palette entry covers any provided region")
    best = None
    for _draw in range(max_draws):
        k = min(int(rng.integers(3, 7)), len(regions))
        chosen = [regions[i] for i in rng.permutation(len(regions))[:k]]
        picks = []
        for region in chosen:
            entries = palette.entries_for_region(region)
            picks.append((region, entries[int(rng.integers(len(entries)))].id))
        for opacity in _ESCALATION:
            layers = tuple(MakeupLayer(region, entry, opacity, feather)
                           for region, entry in picks)
            made_up = composite(base_image, layers, masks, palette)
            score = intensity(made_up, base_image)
            if best is None or score > best.intensity:
                best = RandomMakeupResult(layers, score, score >= min_intensity)
            if score >= min_intensity:
                return RandomMakeupResult(layers, score, True)
    return best


PLAN_FORMAT = "mascara-makeup-plan"
PLAN_VERSION = 1


def plan_to_json(layers, extra: dict | None = None) -> dict:
    doc = {
        "format": PLAN_FORMAT,
        "version": PLAN_VERSION,
        "layers": [
            {"region": l.region, "entry": l.entry, "opacity": l.opacity, "feather": l.feather}
            for l in layers
        ],
    }
    if extra:
        for k in extra:
            if k in doc:
                raise ValueError(f"extra key {k!r} collides with a plan field")
        doc.update(extra)
    return doc


def plan_from_json(doc) -> tuple:
    if doc.get("format") != PLAN_FORMAT:
        raise ValueError(f"not a makeup plan document: format={doc.get('format')!r}")
    if doc.get("version") != PLAN_VERSION:
        raise ValueError(f"unsupported plan version {doc.get('version')!r}")
    layers = []
    for d in doc["layers"]:
        unknown = set(d) - {"region", "entry", "opacity", "feather"}
        if unknown:
            raise ValueError(f"unknown layer keys {sorted(unknown)}")
        layers.append(MakeupLayer(region=d["region"], entry=d["entry"],
                                  opacity=d["opacity"], feather=d.get("feather", 0.0)))
    return tuple(layers)


def save_plan(layers, path, extra: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(plan_to_json(layers, extra), f, sort_keys=True, indent=2)
        f.write("\n")


def load_plan(path) -> tuple:
    with open(path) as f:
        return plan_from_json(json.load(f))

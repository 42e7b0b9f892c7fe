"""Offline dodging attack: saliency heatmap over the current image, region
ranking, greedy palette search on the top region, iterated until the
surrogate's dodge condition 1 - cos(mean-X embedding, current embedding)
clears the stop threshold or the budget runs out."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from mascara import makeup as makeup_mod
from mascara.embedder import EmbedderModel, embed, input_gradient, unit_mean
from mascara.imaging import box_filter, save_png

HEATMAP_SMOOTH_RADIUS = 2  # 5x5 box

# an escalation gaining less than MIN_STEP_GAIN triggers a check of the
# region's remaining potential: its best color at full cap opacity. If even
# that gains less than RETIRE_GAIN the region is retired, so the budget flows
# to regions that actually move the embedding instead of sinking 8 steps into
# a saturated one.
MIN_STEP_GAIN = 0.002
RETIRE_GAIN = 0.02


class RegionBudgetExhausted(RuntimeError):
    """Every paintable region is at its opacity cap or has been retired."""


@dataclass(frozen=True)
class AttackConfig:
    threshold: float = 0.368
    max_iterations: int = 24
    opacity_step: float = 0.1
    region_cap: float = makeup_mod.OPACITY_CAP
    retire_stagnant: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold < 2.0:
            raise ValueError(f"threshold must be in [0, 2), got {self.threshold}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0.0 < self.opacity_step <= self.region_cap:
            raise ValueError(
                f"opacity_step must be in (0, cap={self.region_cap}], got {self.opacity_step}")


@dataclass
class AttackContext:
    model: EmbedderModel
    base_image: np.ndarray
    positives: tuple
    negative_image: np.ndarray
    masks: dict
    palette: makeup_mod.Palette = field(default_factory=lambda: makeup_mod.DEFAULT_PALETTE)

    def __post_init__(self):
        self.positives = tuple(self.positives)
        if not self.positives:
            raise ValueError("positives must contain at least one image")
        want = self.model.input_shape
        for name, img in (("base_image", self.base_image),
                          ("negative_image", self.negative_image),
                          *((f"positives[{i}]", p) for i, p in enumerate(self.positives))):
            if img.shape != want:
                raise ValueError(f"{name} shape {img.shape} does not match model input {want}")
        self._mean_emb = None
        self._neg_emb = None

    def mean_positive_embedding(self) -> np.ndarray:
        if self._mean_emb is None:
            self._mean_emb = unit_mean([embed(self.model, p) for p in self.positives])
        return self._mean_emb


@dataclass(frozen=True)
class Heatmap:
    values: np.ndarray  # HxW in [0,1]
    raw_min: float
    raw_max: float


@dataclass(frozen=True)
class RegionRanking:
    scores: tuple   # ((region, score), ...) descending, name-lexicographic ties
    excluded: tuple  # regions whose mask integrates to zero


@dataclass(frozen=True)
class CandidateEval:
    entry: str
    distance: float


@dataclass(frozen=True)
class AttackStep:
    iteration: int
    region: str
    entry: str
    opacity: float
    cumulative_opacity: float
    distance_after: float
    candidates: tuple  # every CandidateEval of this step, chosen included
    applied: bool = True  # False when the step only retired a stagnant region


@dataclass(frozen=True)
class AttackState:
    image: np.ndarray
    applications: dict  # region -> how many opacity steps applied
    layers: tuple
    retired: frozenset = frozenset()  # regions whose escalations stopped paying


@dataclass(frozen=True)
class AttackResult:
    final_image: np.ndarray
    layers: tuple
    trace: tuple
    outcome: str  # "dodged" | "budget_exhausted"
    initial_distance: float
    final_distance: float
    intensity: float
    heatmaps: tuple  # one Heatmap per executed iteration

    def __post_init__(self):
        if self.outcome not in ("dodged", "budget_exhausted"):
            raise ValueError(f"unknown outcome {self.outcome!r}")


def dodge_distance(model: EmbedderModel, mean_emb: np.ndarray, image: np.ndarray) -> float:
    return 1.0 - float(np.dot(mean_emb, embed(model, image)))


def compute_heatmap(context: AttackContext, current_image: np.ndarray) -> Heatmap:
    """Per-pixel L2 of the attack-loss input gradient, 5x5 box smoothed,
    min-max normalized; a constant map collapses to zeros."""
    g = input_gradient(context.model, current_image, context.positives,
                       context.negative_image)
    sal = np.sqrt(np.sum(g * g, axis=2))
    sal = box_filter(sal, HEATMAP_SMOOTH_RADIUS)
    lo = float(sal.min())
    hi = float(sal.max())
    if hi - lo < 1e-15:
        return Heatmap(values=np.zeros_like(sal), raw_min=lo, raw_max=hi)
    return Heatmap(values=(sal - lo) / (hi - lo), raw_min=lo, raw_max=hi)


def region_scores(heatmap, masks) -> RegionRanking:
    """Mean heatmap value under each mask, ranked descending; zero-mass masks
    are excluded rather than scored."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    scored = []
    excluded = []
    for region in sorted(masks):
        mask = masks[region]
        total = float(mask.sum())
        if total <= 0.0:
            excluded.append(region)
            continue
        scored.append((region, float((values * mask).sum()) / total))
    scored.sort(key=lambda rs: (-rs[1], rs[0]))
    return RegionRanking(scores=tuple(scored), excluded=tuple(excluded))


def _eligible(region, state, context, config):
    if region in state.retired:
        return False
    if not context.palette.entries_for_region(region):
        return False
    used = state.applications.get(region, 0)
    return (used + 1) * config.opacity_step <= config.region_cap + 1e-9


def _cap_potential(state, context, config, region, slot) -> float:
    """Best dodge distance the region could still reach at full cap opacity."""
    mean_emb = context.mean_positive_embedding()
    steps = int(config.region_cap / config.opacity_step + 1e-9)
    cap_opacity = round(steps * config.opacity_step, 10)
    best = 0.0
    for entry in context.palette.entries_for_region(region):
        layer = makeup_mod.MakeupLayer(region, entry.id, cap_opacity)
        layers = state.layers[:slot] + (layer,) + state.layers[slot + 1:]
        candidate = makeup_mod.composite(context.base_image, layers, context.masks,
                                         context.palette, cap=config.region_cap)
        best = max(best, dodge_distance(context.model, mean_emb, candidate))
    return best


def attack_step(state: AttackState, context: AttackContext, config: AttackConfig,
                heatmap: Heatmap | None = None, iteration: int = 0):
    """One greedy step: raise the top-ranked eligible region by one opacity
    step, trying every allowed palette color at the region's new total opacity
    (recomposited from the base image) and keeping the argmax-distance
    candidate. A step may therefore recolor a region painted earlier; the plan
    stays one layer per region. An escalation whose best candidate fails to
    gain MIN_STEP_GAIN, on a region whose full-cap potential is also below
    RETIRE_GAIN, retires the region instead of painting it."""
    if heatmap is None:
        heatmap = compute_heatmap(context, state.image)
    ranking = region_scores(heatmap, context.masks)
    region = next((r for r, _ in ranking.scores if _eligible(r, state, context, config)), None)
    if region is None:
        raise RegionBudgetExhausted("all regions are at their opacity cap or retired")

    used = state.applications.get(region, 0) + 1
    opacity = round(used * config.opacity_step, 10)
    slot = next((i for i, l in enumerate(state.layers) if l.region == region),
                len(state.layers))

    mean_emb = context.mean_positive_embedding()
    current = dodge_distance(context.model, mean_emb, state.image)
    evals = []
    best = None
    best_image = None
    best_layers = None
    for entry in context.palette.entries_for_region(region):
        layer = makeup_mod.MakeupLayer(region, entry.id, opacity)
        layers = state.layers[:slot] + (layer,) + state.layers[slot + 1:]
        candidate = makeup_mod.composite(context.base_image, layers, context.masks,
                                         context.palette, cap=config.region_cap)
        dist = dodge_distance(context.model, mean_emb, candidate)
        evals.append(CandidateEval(entry=entry.id, distance=dist))
        if best is None or dist > best.distance:
            best = evals[-1]
            best_image = candidate
            best_layers = layers

    if config.retire_stagnant and best.distance <= current + MIN_STEP_GAIN and \
            _cap_potential(state, context, config, region, slot) <= current + RETIRE_GAIN:
        new_state = AttackState(image=state.image, applications=state.applications,
                                layers=state.layers,
                                retired=state.retired | {region})
        step = AttackStep(iteration=iteration, region=region, entry=best.entry,
                          opacity=0.0,
                          cumulative_opacity=(used - 1) * config.opacity_step,
                          distance_after=current, candidates=tuple(evals),
                          applied=False)
        return new_state, step

    applications = dict(state.applications)
    applications[region] = used
    new_state = AttackState(image=best_image, applications=applications,
                            layers=best_layers, retired=state.retired)
    step = AttackStep(iteration=iteration, region=region, entry=best.entry,
                      opacity=config.opacity_step,
                      cumulative_opacity=opacity,
                      distance_after=best.distance, candidates=tuple(evals))
    return new_state, step


def run_attack(context: AttackContext, config: AttackConfig = AttackConfig()) -> AttackResult:
    mean_emb = context.mean_positive_embedding()
    initial = dodge_distance(context.model, mean_emb, context.base_image)
    state = AttackState(image=context.base_image.copy(), applications={}, layers=())
    trace = []
    heatmaps = []
    outcome = None
    final = initial
    if initial >= config.threshold:
        outcome = "dodged"
    else:
        for it in range(config.max_iterations):
            hm = compute_heatmap(context, state.image)
            try:
                state, step = attack_step(state, context, config, heatmap=hm, iteration=it)
            except RegionBudgetExhausted:
                outcome = "budget_exhausted"
                break
            heatmaps.append(hm)
            trace.append(step)
            final = step.distance_after
            if final >= config.threshold:
                outcome = "dodged"
                break
        else:
            outcome = "budget_exhausted"
    intensity = makeup_mod.intensity(state.image, context.base_image)
    return AttackResult(final_image=state.image, layers=state.layers, trace=tuple(trace),
                        outcome=outcome, initial_distance=initial, final_distance=final,
                        intensity=intensity, heatmaps=tuple(heatmaps))


RESULT_FORMAT = "mascara-attack-result"
RESULT_VERSION = 1


def result_to_json(result: AttackResult, config: AttackConfig) -> dict:
    return {
        "format": RESULT_FORMAT,
        "version": RESULT_VERSION,
        "outcome": result.outcome,
        "threshold": config.threshold,
        "initial_distance": result.initial_distance,
        "final_distance": result.final_distance,
        "intensity": result.intensity,
        "layers": makeup_mod.plan_to_json(result.layers)["layers"],
        "trace": [
            {
                "iteration": s.iteration,
                "region": s.region,
                "entry": s.entry,
                "opacity": s.opacity,
                "cumulative_opacity": s.cumulative_opacity,
                "distance_after": s.distance_after,
                "applied": s.applied,
                "candidates": [[c.entry, c.distance] for c in s.candidates],
            }
            for s in result.trace
        ],
    }


def save_result(result: AttackResult, config: AttackConfig, directory) -> None:
    """result.json plus final image and per-iteration heatmap PNGs."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "result.json"), "w") as f:
        json.dump(result_to_json(result, config), f, sort_keys=True, indent=2)
        f.write("\n")
    save_png(os.path.join(directory, "final.png"), result.final_image)
    for i, hm in enumerate(result.heatmaps):
        save_png(os.path.join(directory, f"heatmap_{i:02d}.png"), hm.values)

"""End-to-end experiment: train a surrogate and a target embedder on synthetic
identities, enroll a watchlist plus distractors, craft per-subject makeup
attacks against the surrogate, then score all three conditions (no makeup,
random makeup, adversarial makeup) over simulated camera walks against the
target. Every random draw is seeded through the config; reruns are
byte-identical."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

import mascara
from mascara import attack as atk
from mascara import frpipeline as fr
from mascara import makeup as mk
from mascara import synthface as sf
from mascara.embedder import (MIN_IDENTITIES, MIN_IMAGES_PER_IDENTITY, SURROGATE_SPEC,
                              TARGET_SPEC, EnsembleModel, TrainConfig, embed, train)
from mascara.grad.backend import active_backend
from mascara.imaging import resize_image

CONDITIONS = ("none", "random", "adversarial")

# feather radius for noise-style makeup: the random baseline and the made-up
# enrollment still look hand-applied, adversarial layers stay hard-edged
WEAR_FEATHER = 3.0

# colorfulness floor for the made-up enrollment still; matching the typical
# random-baseline intensity keeps everyday makeup inside the match threshold
ENROLL_WEAR_INTENSITY = 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    participants: int = 20
    extra_training_identities: int = 20
    distractors: int = 600
    negative_pool: int = 8
    captures_per_identity: int = 6
    enrollment_images: int = 2
    attack_positives: int = 3
    frames_per_walk: int = 50
    identity_seed: int = 1000
    distractor_seed: int = 5000
    capture_seed: int = 211
    augment_seed: int = 307
    attack_seed: int = 401
    random_makeup_seed: int = 503
    stream_seed: int = 601
    surrogate_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(margin=0.4, learning_rate=0.03, seed=0))
    surrogate_ensemble: int = 1
    target_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(margin=0.55, learning_rate=0.02, seed=29))
    attack: atk.AttackConfig = field(default_factory=atk.AttackConfig)
    augment_surrogate: bool = False
    augment_target: bool = False
    augment_probability: float = 0.5
    identification_threshold: float = fr.ID_THRESHOLD
    persistency: int = fr.PERSISTENCY_FRAMES
    profiles: tuple = sf.DEFAULT_PROFILES

    def __post_init__(self):
        if self.participants < 1:
            raise ValueError("participants must be >= 1")
        if self.participants + self.extra_training_identities < MIN_IDENTITIES:
            raise ValueError(f"need at least {MIN_IDENTITIES} training identities in total")
        if self.captures_per_identity < MIN_IMAGES_PER_IDENTITY:
            raise ValueError(
                f"captures_per_identity must be >= {MIN_IMAGES_PER_IDENTITY}")
        if self.enrollment_images < 1 or self.attack_positives < 1:
            raise ValueError("enrollment_images and attack_positives must be >= 1")
        if self.negative_pool < 1:
            raise ValueError("negative_pool must be >= 1")
        if self.surrogate_ensemble < 1:
            raise ValueError("surrogate_ensemble must be >= 1")
        if self.distractors < self.negative_pool:
            raise ValueError("attack negatives come from the crowd, so distractors "
                             "must be >= negative_pool")
        if self.frames_per_walk < 1:
            raise ValueError("frames_per_walk must be >= 1")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ValueError("augment_probability must be in [0, 1]")
        if not self.profiles:
            raise ValueError("at least one camera profile is required")
        ids = [p.id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError("camera profile ids must be unique")
        object.__setattr__(self, "profiles", tuple(self.profiles))


def config_to_json(config: ExperimentConfig) -> dict:
    doc = {}
    for name in ("participants", "extra_training_identities", "distractors",
                 "negative_pool", "captures_per_identity", "enrollment_images",
                 "attack_positives", "frames_per_walk", "identity_seed",
                 "distractor_seed", "capture_seed", "augment_seed", "attack_seed",
                 "random_makeup_seed", "stream_seed", "surrogate_ensemble",
                 "augment_surrogate", "augment_target", "augment_probability",
                 "identification_threshold", "persistency"):
        doc[name] = getattr(config, name)
    for name in ("surrogate_train", "target_train"):
        tc = getattr(config, name)
        doc[name] = {"epochs": tc.epochs, "steps_per_epoch": tc.steps_per_epoch,
                     "batch_size": tc.batch_size, "learning_rate": tc.learning_rate,
                     "momentum": tc.momentum, "margin": tc.margin, "seed": tc.seed}
    doc["attack"] = {"threshold": config.attack.threshold,
                     "max_iterations": config.attack.max_iterations,
                     "opacity_step": config.attack.opacity_step,
                     "region_cap": config.attack.region_cap,
                     "retire_stagnant": config.attack.retire_stagnant}
    doc["profiles"] = [p.to_json() for p in config.profiles]
    return doc


def config_from_json(doc: dict) -> ExperimentConfig:
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
    kw = dict(doc)
    for name in ("surrogate_train", "target_train"):
        if name in kw:
            kw[name] = TrainConfig(**kw[name])
    if "attack" in kw:
        kw["attack"] = atk.AttackConfig(**kw["attack"])
    if "profiles" in kw:
        kw["profiles"] = tuple(sf.CameraProfile.from_json(p) for p in kw["profiles"])
    return ExperimentConfig(**kw)


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config_to_json(config), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class ConditionOutcome:
    condition: str
    camera_rates: dict      # camera id -> r_rec (None when nothing detected)
    camera_alarms: dict     # camera id -> alarm verdict for the participant
    recognized: dict        # camera id -> R
    detected_unrecognized: dict  # camera id -> D
    all_cam_rate: float | None   # pooled frame counts across cameras


@dataclass(frozen=True)
class ParticipantReport:
    participant_id: str
    cohort: str
    identity_seed: int
    baseline_verified: bool
    excluded: bool
    surrogate_dodged: bool | None = None
    surrogate_initial_distance: float | None = None
    surrogate_final_distance: float | None = None
    attack_iterations: int | None = None
    adversarial_intensity: float | None = None
    random_intensity: float | None = None
    random_met_target: bool | None = None
    adversarial_target_dodged: bool | None = None
    random_target_dodged: bool | None = None
    adversarial_layers: tuple = ()
    random_layers: tuple = ()
    conditions: dict = field(default_factory=dict)  # condition -> ConditionOutcome


@dataclass(frozen=True)
class Report:
    config: ExperimentConfig
    backend: str
    participants: tuple
    excluded_ids: tuple
    condition_averages: dict       # condition -> mean all-cam rate
    cohort_averages: dict          # cohort -> condition -> mean all-cam rate
    surrogate_dodge_rate: float
    adversarial_target_dodge_rate: float
    random_target_dodge_rate: float
    random_identified_rate: float
    mean_adversarial_intensity: float
    mean_random_intensity: float
    training_losses: dict          # "surrogate"/"target" -> per-epoch mean loss


def _aligned(image, landmarks, size):
    det = fr.DetectionResult(bbox=landmarks.bbox, landmarks=landmarks, accepted=True)
    return fr.align(image, det, size)


def _training_capture(rng) -> sf.CaptureParams:
    return sf.CaptureParams(
        yaw_deg=float(rng.uniform(-15.0, 15.0)),
        pitch_deg=float(rng.uniform(0.0, 12.0)),
        roll_deg=float(rng.uniform(-8.0, 8.0)),
        scale=float(rng.uniform(0.85, 1.10)),
        brightness=float(rng.uniform(-0.05, 0.05)),
    )


def _still_capture(rng) -> sf.CaptureParams:
    return sf.CaptureParams(
        yaw_deg=float(rng.uniform(-5.0, 5.0)),
        pitch_deg=float(rng.uniform(2.0, 6.0)),
        scale=float(rng.uniform(0.95, 1.05)),
        brightness=float(rng.uniform(-0.02, 0.02)),
    )


def _augmentation_layers(rng, palette) -> tuple:
    """Random training-time makeup: a few regions, any allowed color, free
    opacity. Draw counts do not depend on which model consumes the capture."""
    regions = sorted(r for r in sf.REGION_NAMES if palette.entries_for_region(r))
    k = int(rng.integers(1, 5))
    picks = rng.permutation(len(regions))[:k]
    layers = []
    for idx in picks:
        region = regions[int(idx)]
        entries = palette.entries_for_region(region)
        entry = entries[int(rng.integers(len(entries)))]
        layers.append(mk.MakeupLayer(region, entry.id, float(rng.uniform(0.2, 0.8))))
    return tuple(layers)


def _build_training_sets(config: ExperimentConfig, identities, palette):
    """One capture pool per identity; each capture lands in both models'
    datasets, made up or clean depending on that model's augmentation flag."""
    surrogate_set = {}
    target_set = {}
    s_size = SURROGATE_SPEC.input_size
    t_size = TARGET_SPEC.input_size
    for ident in identities:
        crng = np.random.default_rng([config.capture_seed, ident.seed])
        arng = np.random.default_rng([config.augment_seed, ident.seed])
        key = f"train_{ident.seed}"
        s_imgs, t_imgs = [], []
        for _ in range(config.captures_per_identity):
            capture = _training_capture(crng)
            augmented = bool(arng.uniform() < config.augment_probability)
            layers = _augmentation_layers(arng, palette) if augmented else ()
            clean_img, lm = sf.render_identity(ident, capture)
            made_img = None
            if layers and (config.augment_surrogate or config.augment_target):
                made_img, _ = sf.render_identity(ident, capture, makeup_layers=layers,
                                                 palette=palette)
            s_src = made_img if (layers and config.augment_surrogate
                                 and made_img is not None) else clean_img
            t_src = made_img if (layers and config.augment_target
                                 and made_img is not None) else clean_img
            s_imgs.append(_aligned(s_src, lm, s_size))
            t_imgs.append(_aligned(t_src, lm, t_size))
        surrogate_set[key] = s_imgs
        target_set[key] = t_imgs
    return surrogate_set, target_set


def enroll_participant(gallery: fr.Gallery, model, ident, identity_id: str, *,
                       enrollment_images: int = 2, capture_seed: int = 211,
                       palette: mk.Palette | None = None) -> None:
    """Enroll a watchlist identity from still captures. Stills past the first
    wear light everyday makeup, so enrollment tolerates cosmetic variation."""
    palette = palette or mk.DEFAULT_PALETTE
    size = model.input_shape[:2]
    erng = np.random.default_rng([capture_seed, ident.seed, 1])
    for n in range(enrollment_images):
        img, lm = sf.render_identity(ident, _still_capture(erng))
        if n > 0:
            masks = sf.region_masks(lm, img.shape[:2])
            wear = mk.random_makeup(palette, masks,
                                    seed=[capture_seed, ident.seed, 9],
                                    min_intensity=ENROLL_WEAR_INTENSITY,
                                    base_image=img, feather=WEAR_FEATHER)
            img = mk.composite(img, wear.layers, masks, palette)
        gallery.enroll(identity_id, embed(model, _aligned(img, lm, size)))


def enroll_distractor(gallery: fr.Gallery, model, ident, identity_id: str, *,
                      capture_seed: int = 211) -> None:
    """Enroll a crowd identity from a single clean still."""
    size = model.input_shape[:2]
    drng = np.random.default_rng([capture_seed, ident.seed, 3])
    img, lm = sf.render_identity(ident, _still_capture(drng))
    gallery.enroll(identity_id, embed(model, _aligned(img, lm, size)),
                   distractor=True)


def standalone_attack_context(model, identity_seed: int, *, attack_positives: int = 3,
                              capture_seed: int = 211, negative_seed: int | None = None,
                              palette: mk.Palette | None = None) -> atk.AttackContext:
    """Attack inputs for one synthetic identity outside a full experiment:
    neutral aligned base, pose-spanning positives, and a rendered stranger as
    the push-toward negative. The command line and the studio service share
    this recipe, so their plans agree for the same seeds."""
    palette = palette or mk.DEFAULT_PALETTE
    ident = sf.identity_from_seed(identity_seed)
    size = model.input_shape[:2]
    base_img, base_lm = sf.render_identity(ident, sf.CaptureParams())
    base = _aligned(base_img, base_lm, size)
    masks = sf.region_masks(fr.aligned_landmarks(base_lm, size), size)
    prng = np.random.default_rng([capture_seed, ident.seed, 2])
    positives = []
    for _ in range(attack_positives):
        img, lm = sf.render_identity(ident, _training_capture(prng))
        positives.append(_aligned(img, lm, size))
    if negative_seed is None:
        negative_seed = identity_seed + 1
    nimg, nlm = sf.render_identity(sf.identity_from_seed(negative_seed))
    return atk.AttackContext(model=model, base_image=base,
                             positives=tuple(positives),
                             negative_image=_aligned(nimg, nlm, size),
                             masks=masks, palette=palette)


def digital_transfer_check(images: dict, model, gallery: fr.Gallery,
                           threshold: float = fr.ID_THRESHOLD) -> dict:
    """Still-image transfer: each (participant -> aligned image) is resized to
    the model's input, embedded, and matched; dodge means the match is not the
    participant. The canonical constellation is size-relative, so the resize
    is the re-alignment."""
    out = {}
    for participant_id in sorted(images):
        probe = resize_image(images[participant_id], model.input_shape[:2])
        emb = embed(model, probe)
        match = fr.identify(emb, gallery, threshold)
        out[participant_id] = match is None or match[0] != participant_id
    return out


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def run_experiment(config: ExperimentConfig, progress=None) -> Report:
    def say(msg):
        if progress is not None:
            progress(msg)

    palette = mk.DEFAULT_PALETTE
    participants = []
    for i in range(config.participants):
        ident = sf.identity_from_seed(config.identity_seed + i)
        participants.append({
            "id": f"subject_{i:02d}",
            "cohort": "cohort_a" if i % 2 == 0 else "cohort_b",
            "identity": ident,
            "index": i,
        })
    extras = [sf.identity_from_seed(config.identity_seed + config.participants + j)
              for j in range(config.extra_training_identities)]

    say(f"training both embedders on {config.participants + len(extras)} identities")
    train_ids = [p["identity"] for p in participants] + extras
    surrogate_set, target_set = _build_training_sets(config, train_ids, palette)
    members = []
    training_losses = {}
    for k in range(config.surrogate_ensemble):
        tc = replace(config.surrogate_train, seed=config.surrogate_train.seed + k)
        member, losses = train(SURROGATE_SPEC, surrogate_set, tc)
        members.append(member)
        training_losses[f"surrogate_{k}"] = tuple(losses)
    surrogate = members[0] if len(members) == 1 else EnsembleModel(tuple(members))
    target, target_losses = train(TARGET_SPEC, target_set, config.target_train)
    training_losses["target"] = tuple(target_losses)

    say("enrolling watchlist and distractors")
    t_size = TARGET_SPEC.input_size
    s_size = SURROGATE_SPEC.input_size
    gallery = fr.Gallery()
    for p in participants:
        enroll_participant(gallery, target, p["identity"], p["id"],
                           enrollment_images=config.enrollment_images,
                           capture_seed=config.capture_seed, palette=palette)
    crowd_idents = []
    crowd_embeddings = []  # surrogate-space neutral embeddings, attack negatives
    for j in range(config.distractors):
        ident = sf.identity_from_seed(config.distractor_seed + j)
        enroll_distractor(gallery, target, ident, f"crowd_{j:03d}",
                          capture_seed=config.capture_seed)
        nimg, nlm = sf.render_identity(ident)
        crowd_idents.append(ident)
        crowd_embeddings.append(embed(surrogate, _aligned(nimg, nlm, s_size)))

    pipeline = fr.FRPipeline(model=target, gallery=gallery,
                             threshold=config.identification_threshold,
                             persistency=config.persistency)

    reports = []
    excluded = []
    adversarial_images = {}
    random_images = {}
    for p in participants:
        base_img, base_lm = sf.render_identity(p["identity"], sf.CaptureParams())
        probe = embed(target, _aligned(base_img, base_lm, t_size))
        match = fr.identify(probe, gallery, config.identification_threshold)
        if match is None or match[0] != p["id"]:
            excluded.append(p["id"])
            reports.append(ParticipantReport(
                participant_id=p["id"], cohort=p["cohort"],
                identity_seed=p["identity"].seed,
                baseline_verified=False, excluded=True))
            say(f"{p['id']}: baseline verification failed, excluded")
            continue

        base160 = _aligned(base_img, base_lm, s_size)
        lm160 = fr.aligned_landmarks(base_lm, s_size)
        masks160 = sf.region_masks(lm160, s_size)
        # positives span the pose range cameras will see, so the attack pushes
        # away from the identity's pose-averaged prototype, not one neutral shot
        prng = np.random.default_rng([config.capture_seed, p["identity"].seed, 2])
        positives = []
        for _ in range(config.attack_positives):
            img, lm = sf.render_identity(p["identity"], _training_capture(prng))
            positives.append(_aligned(img, lm, s_size))
        # negative pool: crowd identities nearest the attacker in surrogate
        # space; the drawn one gives a push-toward direction that lands on an
        # enrolled distractor rather than empty embedding space
        own = embed(surrogate, base160)
        ranked = sorted(range(len(crowd_embeddings)),
                        key=lambda j: (fr.cosine_distance(own, crowd_embeddings[j]), j))
        pool = ranked[:config.negative_pool]
        nrng = np.random.default_rng([config.attack_seed, p["index"]])
        pick = pool[int(nrng.integers(len(pool)))]
        neg_img, neg_lm = sf.render_identity(crowd_idents[pick])

        context = atk.AttackContext(model=surrogate, base_image=base160,
                                    positives=tuple(positives),
                                    negative_image=_aligned(neg_img, neg_lm, s_size),
                                    masks=masks160, palette=palette)
        result = atk.run_attack(context, config.attack)
        say(f"{p['id']}: attack {result.outcome} after {len(result.trace)} steps, "
            f"distance {result.initial_distance:.3f} -> {result.final_distance:.3f}")

        random_result = mk.random_makeup(palette, masks160,
                                         seed=config.random_makeup_seed + p["index"],
                                         min_intensity=result.intensity,
                                         base_image=base160,
                                         feather=WEAR_FEATHER)
        adversarial_images[p["id"]] = result.final_image
        random_images[p["id"]] = mk.composite(base160, random_result.layers, masks160,
                                              palette)

        conditions = {}
        layer_sets = {"none": (), "random": random_result.layers,
                      "adversarial": result.layers}
        for condition in CONDITIONS:
            rates, alarms, recog, detect = {}, {}, {}, {}
            for k, profile in enumerate(config.profiles):
                seed = config.stream_seed + p["index"] * len(config.profiles) + k
                stream = sf.synth_stream(p["identity"], profile,
                                         config.frames_per_walk, seed,
                                         makeup_layers=layer_sets[condition],
                                         palette=palette)
                ev = fr.evaluate_stream(pipeline, stream, p["id"])
                rates[profile.id] = ev.r_rec
                alarms[profile.id] = ev.alarms[profile.id]
                recog[profile.id] = ev.recognized
                detect[profile.id] = ev.detected_unrecognized
            pooled_r = sum(recog.values())
            pooled_d = sum(detect.values())
            all_cam = pooled_r / (pooled_r + pooled_d) if pooled_r + pooled_d else None
            conditions[condition] = ConditionOutcome(
                condition=condition, camera_rates=rates, camera_alarms=alarms,
                recognized=recog, detected_unrecognized=detect, all_cam_rate=all_cam)
            say(f"{p['id']}: {condition} walks "
                + " ".join(f"{c}={fr.format_rate(r)}" for c, r in sorted(rates.items())))

        reports.append(ParticipantReport(
            participant_id=p["id"], cohort=p["cohort"],
            identity_seed=p["identity"].seed,
            baseline_verified=True, excluded=False,
            surrogate_dodged=result.outcome == "dodged",
            surrogate_initial_distance=result.initial_distance,
            surrogate_final_distance=result.final_distance,
            attack_iterations=len(result.trace),
            adversarial_intensity=result.intensity,
            random_intensity=random_result.intensity,
            random_met_target=random_result.met_target,
            adversarial_layers=result.layers,
            random_layers=random_result.layers,
            conditions=conditions))

    say("running still-image transfer checks")
    adv_dodge = digital_transfer_check(adversarial_images, target, gallery,
                                       config.identification_threshold)
    rnd_dodge = digital_transfer_check(random_images, target, gallery,
                                       config.identification_threshold)
    final_reports = []
    for r in reports:
        if r.excluded:
            final_reports.append(r)
            continue
        final_reports.append(ParticipantReport(
            **{**r.__dict__,
               "adversarial_target_dodged": adv_dodge[r.participant_id],
               "random_target_dodged": rnd_dodge[r.participant_id]}))

    included = [r for r in final_reports if not r.excluded]
    condition_averages = {
        cond: _mean(r.conditions[cond].all_cam_rate for r in included)
        for cond in CONDITIONS
    }
    cohorts = sorted({r.cohort for r in included})
    cohort_averages = {
        cohort: {
            cond: _mean(r.conditions[cond].all_cam_rate
                        for r in included if r.cohort == cohort)
            for cond in CONDITIONS
        }
        for cohort in cohorts
    }
    n = len(included)
    report = Report(
        config=config,
        backend=active_backend(),
        participants=tuple(final_reports),
        excluded_ids=tuple(excluded),
        condition_averages=condition_averages,
        cohort_averages=cohort_averages,
        surrogate_dodge_rate=(sum(1 for r in included if r.surrogate_dodged) / n
                              if n else 0.0),
        adversarial_target_dodge_rate=(sum(1 for r in included
                                           if r.adversarial_target_dodged) / n
                                       if n else 0.0),
        random_target_dodge_rate=(sum(1 for r in included if r.random_target_dodged) / n
                                  if n else 0.0),
        random_identified_rate=(sum(1 for r in included
                                    if not r.random_target_dodged) / n if n else 0.0),
        mean_adversarial_intensity=_mean(r.adversarial_intensity for r in included),
        mean_random_intensity=_mean(r.random_intensity for r in included),
        training_losses=training_losses,
    )
    return report


def _condition_to_json(outcome: ConditionOutcome) -> dict:
    return {
        "condition": outcome.condition,
        "camera_rates": dict(sorted(outcome.camera_rates.items())),
        "camera_alarms": dict(sorted(outcome.camera_alarms.items())),
        "recognized": dict(sorted(outcome.recognized.items())),
        "detected_unrecognized": dict(sorted(outcome.detected_unrecognized.items())),
        "all_cam_rate": outcome.all_cam_rate,
    }


def report_to_json(report: Report) -> dict:
    doc = {
        "format": "mascara-experiment-report",
        "version": 1,
        "config": config_to_json(report.config),
        "config_hash": config_hash(report.config),
        "backend": report.backend,
        "excluded": list(report.excluded_ids),
        "condition_averages": report.condition_averages,
        "cohort_averages": report.cohort_averages,
        "surrogate_dodge_rate": report.surrogate_dodge_rate,
        "adversarial_target_dodge_rate": report.adversarial_target_dodge_rate,
        "random_target_dodge_rate": report.random_target_dodge_rate,
        "random_identified_rate": report.random_identified_rate,
        "mean_adversarial_intensity": report.mean_adversarial_intensity,
        "mean_random_intensity": report.mean_random_intensity,
        "training_losses": {k: list(v) for k, v in report.training_losses.items()},
        "participants": [],
    }
    for r in report.participants:
        entry = {
            "id": r.participant_id,
            "cohort": r.cohort,
            "identity_seed": r.identity_seed,
            "baseline_verified": r.baseline_verified,
            "excluded": r.excluded,
        }
        if not r.excluded:
            entry.update({
                "surrogate_dodged": r.surrogate_dodged,
                "surrogate_initial_distance": r.surrogate_initial_distance,
                "surrogate_final_distance": r.surrogate_final_distance,
                "attack_iterations": r.attack_iterations,
                "adversarial_intensity": r.adversarial_intensity,
                "random_intensity": r.random_intensity,
                "random_met_target": r.random_met_target,
                "adversarial_target_dodged": r.adversarial_target_dodged,
                "random_target_dodged": r.random_target_dodged,
                "adversarial_layers": mk.plan_to_json(r.adversarial_layers)["layers"],
                "random_layers": mk.plan_to_json(r.random_layers)["layers"],
                "conditions": {c: _condition_to_json(o)
                               for c, o in sorted(r.conditions.items())},
            })
        doc["participants"].append(entry)
    return doc


def _write_table1(report: Report, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cohort"] + [f"{c}_avg_rate" for c in CONDITIONS])
        for cohort in sorted(report.cohort_averages):
            row = [cohort]
            for cond in CONDITIONS:
                row.append(fr.format_rate(report.cohort_averages[cohort][cond]))
            writer.writerow(row)
        writer.writerow(["all"] + [fr.format_rate(report.condition_averages[c])
                                   for c in CONDITIONS])


def _write_table2(report: Report, path) -> None:
    cameras = [p.id for p in report.config.profiles]
    header = ["id", "cohort", "method", "all_cam"]
    header += [f"rate_{c}" for c in cameras]
    header += [f"alarm_{c}" for c in cameras]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for r in report.participants:
            if r.excluded:
                continue
            for cond in CONDITIONS:
                o = r.conditions[cond]
                row = [r.participant_id, r.cohort, cond,
                       fr.format_rate(o.all_cam_rate)]
                row += [fr.format_rate(o.camera_rates[c]) for c in cameras]
                row += ["T" if o.camera_alarms[c] else "F" for c in cameras]
                writer.writerow(row)


def write_report(report: Report, out_dir) -> dict:
    """Emit report.json, the two CSV tables, per-attack artifacts, and a
    manifest with a sha256 for every written file. Returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as f:
        json.dump(report_to_json(report), f, sort_keys=True, indent=2)
        f.write("\n")
    written.append("report.json")

    _write_table1(report, os.path.join(out_dir, "table1.csv"))
    written.append("table1.csv")
    _write_table2(report, os.path.join(out_dir, "table2.csv"))
    written.append("table2.csv")

    plans_dir = os.path.join(out_dir, "plans")
    os.makedirs(plans_dir, exist_ok=True)
    for r in report.participants:
        if r.excluded:
            continue
        for label, layers, extra in (
                ("adversarial", r.adversarial_layers,
                 {"intensity": r.adversarial_intensity}),
                ("random", r.random_layers,
                 {"intensity": r.random_intensity,
                  "met_target": r.random_met_target})):
            rel = f"plans/{r.participant_id}_{label}.json"
            with open(os.path.join(out_dir, rel), "w") as f:
                json.dump(mk.plan_to_json(layers, extra=extra), f, sort_keys=True,
                          indent=2)
                f.write("\n")
            written.append(rel)

    manifest = {
        "format": "mascara-experiment-manifest",
        "version": 1,
        "package_version": mascara.__version__,
        "backend": report.backend,
        "config_hash": config_hash(report.config),
        "participants": len(report.participants),
        "excluded": list(report.excluded_ids),
        "files": {},
    }
    for rel in sorted(written):
        with open(os.path.join(out_dir, rel), "rb") as f:
            manifest["files"][rel] = hashlib.sha256(f.read()).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest

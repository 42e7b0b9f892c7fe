"""Command-line front door: train embedders, build galleries, run attacks and
stream evaluations, launch the full experiment, or serve the studio API.

Every writing command confines its output to --out (or a directory under the
MASCARA_OUT root) and finishes by writing a manifest with the resolved
parameters and a sha256 for each file, so any run can be reproduced from its
output tree alone. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

import mascara
from mascara import attack as atk
from mascara import embedder
from mascara import frpipeline as fr
from mascara import harness as hz
from mascara import makeup as mk
from mascara import synthface as sf
from mascara.grad.backend import active_backend
from mascara.harness import _aligned, _training_capture
from mascara.imaging import load_png, resize_image, save_png

OUT_ROOT_ENV = "MASCARA_OUT"


class UsageError(Exception):
    """Bad invocation or malformed configuration; exits 2."""


class DomainError(Exception):
    """Valid invocation that cannot be satisfied; exits 1."""


def _resolve_out(args) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return os.path.join(root, args.command)
    raise UsageError(f"--out is required (or set {OUT_ROOT_ENV})")


def _load_json_file(path, what: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read {what} {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"{what} {path!r} is not valid JSON: {e}") from e


def _dataclass_from_doc(cls, doc: dict, what: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid {what}: {e}") from e


def _write_manifest(out: str, command: str, parameters: dict) -> None:
    """Hash everything under `out` and record the resolved parameters."""
    files = {}
    for dirpath, _, names in os.walk(out):
        for name in sorted(names):
            if dirpath == out and name == "manifest.json":
                continue
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, out)
            with open(full, "rb") as f:
                files[rel] = hashlib.sha256(f.read()).hexdigest()
    manifest = {
        "format": "mascara-run-manifest",
        "version": 1,
        "package_version": mascara.__version__,
        "backend": active_backend(),
        "command": command,
        "parameters": parameters,
        "files": files,
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def _say(args, msg: str) -> None:
    if args.verbose:
        print(msg, file=sys.stderr)


def _load_model(path):
    try:
        return embedder.load_model(path)
    except (OSError, ValueError) as e:
        raise DomainError(f"cannot load model from {path!r}: {e}") from e


def _load_gallery(path) -> fr.Gallery:
    try:
        return fr.Gallery.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise DomainError(f"cannot load gallery from {path!r}: {e}") from e


def _load_image(path) -> np.ndarray:
    try:
        return load_png(path)
    except OSError as e:
        raise DomainError(f"cannot read image {path!r}: {e}") from e


def _load_landmarks(path) -> sf.FaceLandmarks:
    doc = _load_json_file(path, "landmark file")
    try:
        return sf.FaceLandmarks.from_json(doc)
    except (TypeError, ValueError, KeyError) as e:
        raise UsageError(f"invalid landmark file {path!r}: {e}") from e


def _training_dataset(spec, identities: int, captures: int,
                      identity_seed: int, capture_seed: int) -> dict:
    data = {}
    for i in range(identities):
        ident = sf.identity_from_seed(identity_seed + i)
        crng = np.random.default_rng([capture_seed, ident.seed])
        imgs = []
        for _ in range(captures):
            img, lm = sf.render_identity(ident, _training_capture(crng))
            imgs.append(_aligned(img, lm, spec.input_size))
        data[f"train_{ident.seed}"] = imgs
    return data


def cmd_train(args) -> int:
    out = _resolve_out(args)
    spec = embedder.SURROGATE_SPEC if args.role == "surrogate" else embedder.TARGET_SPEC
    doc = _load_json_file(args.config, "training config") if args.config else {}
    tc = _dataclass_from_doc(embedder.TrainConfig, doc, "training config")
    if args.seed is not None:
        from dataclasses import replace
        tc = replace(tc, seed=args.seed)
    _say(args, f"rendering {args.identities} identities x {args.captures} captures")
    dataset = _training_dataset(spec, args.identities, args.captures,
                                args.identity_seed, args.capture_seed)
    _say(args, f"training {args.role} ({spec.architecture}@{spec.input_size[0]})")
    try:
        model, losses = embedder.train(spec, dataset, tc)
    except ValueError as e:
        raise DomainError(str(e)) from e
    os.makedirs(out, exist_ok=True)
    embedder.save_model(model, os.path.join(out, "model"))
    with open(os.path.join(out, "losses.json"), "w") as f:
        json.dump({"per_epoch_loss": list(losses)}, f, indent=2)
        f.write("\n")
    _write_manifest(out, "train", {
        "role": args.role,
        "train_config": {k: getattr(tc, k)
                         for k in embedder.TrainConfig.__dataclass_fields__},
        "identities": args.identities,
        "captures": args.captures,
        "identity_seed": args.identity_seed,
        "capture_seed": args.capture_seed,
    })
    print(f"trained {args.role}: per-epoch loss "
          f"{losses[0]:.4f} -> {losses[-1]:.4f}, model in {out}/model")
    return 0


def cmd_enroll(args) -> int:
    out = _resolve_out(args)
    model = _load_model(args.model)
    gallery = fr.Gallery()
    for i in range(args.count):
        ident = sf.identity_from_seed(args.identity_seed + i)
        hz.enroll_participant(gallery, model, ident, f"subject_{i:02d}",
                              enrollment_images=args.enrollment_images,
                              capture_seed=args.capture_seed)
    for j in range(args.distractors):
        ident = sf.identity_from_seed(args.distractor_seed + j)
        hz.enroll_distractor(gallery, model, ident, f"crowd_{j:03d}",
                             capture_seed=args.capture_seed)
    os.makedirs(out, exist_ok=True)
    gallery.save(os.path.join(out, "gallery"))
    _write_manifest(out, "enroll", {
        "model": os.path.abspath(args.model),
        "count": args.count,
        "distractors": args.distractors,
        "enrollment_images": args.enrollment_images,
        "identity_seed": args.identity_seed,
        "distractor_seed": args.distractor_seed,
        "capture_seed": args.capture_seed,
    })
    print(f"enrolled {args.count} identities and {args.distractors} distractors "
          f"in {out}/gallery")
    return 0


def _attack_config(args) -> atk.AttackConfig:
    doc = _load_json_file(args.config, "attack config") if args.config else {}
    if args.threshold is not None:
        doc["threshold"] = args.threshold
    if args.iterations is not None:
        doc["max_iterations"] = args.iterations
    return _dataclass_from_doc(atk.AttackConfig, doc, "attack config")


def _attack_context(args, parser, model) -> tuple:
    """Returns (context, source description for the manifest)."""
    if args.image:
        missing = [flag for flag, val in (("--landmarks", args.landmarks),
                                          ("--positive", args.positive),
                                          ("--negative", args.negative)) if not val]
        if missing:
            parser.error(f"--image also requires {', '.join(missing)}")
        base = _load_image(args.image)
        lm = _load_landmarks(args.landmarks)
        expected = model.input_shape[:2]
        if base.shape[:2] != expected:
            raise DomainError(f"image is {base.shape[:2]}, model wants {expected}")
        masks = sf.region_masks(lm, base.shape[:2])
        positives = tuple(_load_image(p) for p in args.positive)
        negative = _load_image(args.negative)
        context = atk.AttackContext(model=model, base_image=base,
                                    positives=positives, negative_image=negative,
                                    masks=masks, palette=mk.DEFAULT_PALETTE)
        source = {"image": os.path.abspath(args.image),
                  "landmarks": os.path.abspath(args.landmarks),
                  "positives": [os.path.abspath(p) for p in args.positive],
                  "negative": os.path.abspath(args.negative)}
        return context, source
    if args.identity_seed is not None:
        context = hz.standalone_attack_context(
            model, args.identity_seed, attack_positives=args.positives,
            capture_seed=args.capture_seed, negative_seed=args.negative_seed)
        source = {"identity_seed": args.identity_seed,
                  "positives": args.positives,
                  "capture_seed": args.capture_seed,
                  "negative_seed": (args.identity_seed + 1
                                    if args.negative_seed is None
                                    else args.negative_seed)}
        return context, source
    parser.error("missing required --image (or --identity-seed for a "
                 "synthetic subject)")


def cmd_attack(args, parser) -> int:
    model = _load_model(args.model)
    config = _attack_config(args)
    context, source = _attack_context(args, parser, model)
    out = _resolve_out(args)
    result = atk.run_attack(context, config)
    os.makedirs(out, exist_ok=True)
    atk.save_result(result, config, out)
    mk.save_plan(result.layers, os.path.join(out, "plan.json"),
                 extra={"dodged": result.outcome == "dodged",
                        "distance": result.final_distance,
                        "intensity": result.intensity})
    _write_manifest(out, "attack", {
        "model": os.path.abspath(args.model),
        "source": source,
        "attack": {k: getattr(config, k)
                   for k in atk.AttackConfig.__dataclass_fields__},
    })
    print(f"{result.outcome}: distance {result.initial_distance:.4f} -> "
          f"{result.final_distance:.4f} in {len(result.trace)} steps, "
          f"intensity {result.intensity:.2f}")
    return 0


def cmd_random_makeup(args, parser) -> int:
    if args.image:
        if not args.landmarks:
            parser.error("--image also requires --landmarks")
        base = _load_image(args.image)
        lm = _load_landmarks(args.landmarks)
        source = {"image": os.path.abspath(args.image),
                  "landmarks": os.path.abspath(args.landmarks)}
    elif args.identity_seed is not None:
        base, lm = sf.render_identity(sf.identity_from_seed(args.identity_seed))
        source = {"identity_seed": args.identity_seed}
    else:
        parser.error("missing required --image (or --identity-seed)")
    out = _resolve_out(args)
    masks = sf.region_masks(lm, base.shape[:2])
    result = mk.random_makeup(mk.DEFAULT_PALETTE, masks, seed=args.seed,
                              min_intensity=args.min_intensity, base_image=base,
                              max_draws=args.max_draws, feather=args.feather)
    composited = mk.composite(base, result.layers, masks, mk.DEFAULT_PALETTE)
    os.makedirs(out, exist_ok=True)
    save_png(os.path.join(out, "composite.png"), composited)
    mk.save_plan(result.layers, os.path.join(out, "plan.json"),
                 extra={"intensity": result.intensity,
                        "met_target": result.met_target})
    _write_manifest(out, "random-makeup", {
        "source": source,
        "seed": args.seed,
        "min_intensity": args.min_intensity,
        "max_draws": args.max_draws,
        "feather": args.feather,
    })
    print(f"random makeup: {len(result.layers)} layers, intensity "
          f"{result.intensity:.2f} (target {args.min_intensity}, "
          f"met={result.met_target})")
    return 0


def _profile(args) -> sf.CameraProfile:
    if args.profile_config:
        doc = _load_json_file(args.profile_config, "camera profile")
        try:
            return sf.CameraProfile.from_json(doc)
        except (TypeError, ValueError, KeyError) as e:
            raise UsageError(f"invalid camera profile: {e}") from e
    for profile in sf.DEFAULT_PROFILES:
        if profile.id == args.profile:
            return profile
    known = ", ".join(p.id for p in sf.DEFAULT_PROFILES)
    raise UsageError(f"unknown profile {args.profile!r} (known: {known})")


def cmd_evaluate_stream(args) -> int:
    out = _resolve_out(args)
    model = _load_model(args.model)
    gallery = _load_gallery(args.gallery)
    if args.true_id not in set(gallery.identities()):
        raise DomainError(f"{args.true_id!r} is not enrolled in the gallery")
    profile = _profile(args)
    layers = ()
    if args.makeup:
        try:
            layers = mk.load_plan(args.makeup)
        except (OSError, ValueError, KeyError) as e:
            raise UsageError(f"cannot load makeup plan {args.makeup!r}: {e}") from e
    ident = sf.identity_from_seed(args.identity_seed)
    stream = sf.synth_stream(ident, profile, args.frames, args.seed,
                             makeup_layers=layers, palette=mk.DEFAULT_PALETTE)
    pipeline = fr.FRPipeline(model=model, gallery=gallery,
                             threshold=args.threshold,
                             persistency=args.persistency)
    evaluation = fr.evaluate_stream(pipeline, stream, args.true_id)
    summary = {
        "identity_seed": args.identity_seed,
        "true_id": args.true_id,
        "profile": profile.id,
        "frames": args.frames,
        "stream_seed": args.seed,
        "makeup_layers": len(layers),
        "r_rec": evaluation.r_rec,
        "recognized": evaluation.recognized,
        "detected_unrecognized": evaluation.detected_unrecognized,
        "alarms": dict(evaluation.alarms),
    }
    os.makedirs(out, exist_ok=True)
    fr.write_stream_log(evaluation, os.path.join(out, "stream_log.csv"))
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    _write_manifest(out, "evaluate-stream", {
        "model": os.path.abspath(args.model),
        "gallery": os.path.abspath(args.gallery),
        "identity_seed": args.identity_seed,
        "true_id": args.true_id,
        "profile": profile.to_json(),
        "frames": args.frames,
        "seed": args.seed,
        "makeup": os.path.abspath(args.makeup) if args.makeup else None,
        "threshold": args.threshold,
        "persistency": args.persistency,
    })
    if args.format == "json":
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"{args.true_id},{profile.id},{fr.format_rate(evaluation.r_rec)},"
              f"alarm={evaluation.alarms.get(profile.id, False)}")
    return 0


def cmd_experiment(args) -> int:
    out = _resolve_out(args)
    if args.seed is not None:
        raise UsageError("experiment draws every seed from the config file; "
                         "--seed would hide one from the manifest")
    if args.config:
        doc = _load_json_file(args.config, "experiment config")
        try:
            config = hz.config_from_json(doc)
        except (TypeError, ValueError) as e:
            raise UsageError(f"invalid experiment config: {e}") from e
    else:
        config = hz.ExperimentConfig()
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    report = hz.run_experiment(config, progress=progress)
    hz.write_report(report, out)
    if args.format == "json":
        print(json.dumps({
            "condition_averages": report.condition_averages,
            "surrogate_dodge_rate": report.surrogate_dodge_rate,
            "adversarial_target_dodge_rate": report.adversarial_target_dodge_rate,
            "random_target_dodge_rate": report.random_target_dodge_rate,
            "random_identified_rate": report.random_identified_rate,
            "excluded": list(report.excluded_ids),
        }, sort_keys=True))
    else:
        for cond in hz.CONDITIONS:
            print(f"{cond},{fr.format_rate(report.condition_averages[cond])}")
    return 0


def cmd_transfer_check(args) -> int:
    out = _resolve_out(args)
    model = _load_model(args.model)
    gallery = _load_gallery(args.gallery)
    enrolled = set(gallery.identities())
    images = {}
    for path in args.images:
        claimed = os.path.splitext(os.path.basename(path))[0]
        if claimed not in enrolled:
            raise DomainError(f"{claimed!r} (from {path!r}) is not enrolled")
        images[claimed] = _load_image(path)
    dodges = hz.digital_transfer_check(images, model, gallery, args.threshold)
    results = {}
    for claimed, image in sorted(images.items()):
        probe = resize_image(image, model.input_shape[:2])
        match = fr.identify(embedder.embed(model, probe), gallery, args.threshold)
        results[claimed] = {
            "dodged": dodges[claimed],
            "matched": None if match is None else match[0],
            "distance": None if match is None else match[1],
        }
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "transfer.json"), "w") as f:
        json.dump(results, f, sort_keys=True, indent=2)
        f.write("\n")
    _write_manifest(out, "transfer-check", {
        "model": os.path.abspath(args.model),
        "gallery": os.path.abspath(args.gallery),
        "images": [os.path.abspath(p) for p in args.images],
        "threshold": args.threshold,
    })
    dodged = sum(1 for r in results.values() if r["dodged"])
    print(f"{dodged}/{len(results)} dodged")
    return 0


def cmd_serve(args) -> int:
    from mascara.service import build_app

    import uvicorn

    model = _load_model(args.model)
    app = build_app(model)
    uvicorn.run(app, host=args.host, port=args.port,
                log_level="info" if args.verbose else "warning")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mascara",
        description="Adversarial makeup attacks against a simulated "
                    "face-recognition pipeline.")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="progress messages on stderr")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker cap (the current pipeline is single-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out(p):
        p.add_argument("--out", help=f"output directory (default: under ${OUT_ROOT_ENV})")

    p = sub.add_parser("train", help="train the surrogate or target embedder")
    p.add_argument("--role", choices=("surrogate", "target"), required=True)
    p.add_argument("--config", help="JSON file with training settings")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--captures", type=int, default=6)
    p.add_argument("--identity-seed", type=int, default=1000)
    p.add_argument("--capture-seed", type=int, default=211)
    add_out(p)
    p.set_defaults(func=lambda a, _p: cmd_train(a))

    p = sub.add_parser("enroll", help="build a gallery of synthetic identities")
    p.add_argument("--model", required=True, help="embedder directory from `train`")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--enrollment-images", type=int, default=2)
    p.add_argument("--identity-seed", type=int, default=1000)
    p.add_argument("--distractor-seed", type=int, default=5000)
    p.add_argument("--capture-seed", type=int, default=211)
    add_out(p)
    p.set_defaults(func=lambda a, _p: cmd_enroll(a))

    p = sub.add_parser("attack", help="craft a makeup plan that dodges an embedder")
    p.add_argument("--model", required=True)
    p.add_argument("--image", help="aligned base image (PNG)")
    p.add_argument("--landmarks", help="landmark JSON for --image")
    p.add_argument("--positive", action="append", default=[],
                   help="aligned positive capture, repeatable")
    p.add_argument("--negative", help="aligned image of the push-toward identity")
    p.add_argument("--identity-seed", type=int,
                   help="render a synthetic subject instead of --image")
    p.add_argument("--positives", type=int, default=3,
                   help="positive captures for --identity-seed")
    p.add_argument("--negative-seed", type=int)
    p.add_argument("--capture-seed", type=int, default=211)
    p.add_argument("--config", help="JSON file with attack settings")
    p.add_argument("--threshold", type=float)
    p.add_argument("--iterations", type=int)
    add_out(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("random-makeup",
                       help="draw a naturalness-bounded random makeup plan")
    p.add_argument("--image", help="base image (PNG)")
    p.add_argument("--landmarks", help="landmark JSON for --image")
    p.add_argument("--identity-seed", type=int,
                   help="render a synthetic face instead of --image")
    p.add_argument("--min-intensity", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-draws", type=int, default=8)
    p.add_argument("--feather", type=float, default=0.0)
    add_out(p)
    p.set_defaults(func=cmd_random_makeup)

    p = sub.add_parser("evaluate-stream",
                       help="run one camera walk against an enrolled gallery")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--identity-seed", type=int, required=True)
    p.add_argument("--true-id", required=True,
                   help="enrolled identity this walk belongs to")
    p.add_argument("--profile", default="corridor_near")
    p.add_argument("--profile-config", help="camera profile JSON file")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--seed", type=int, default=601)
    p.add_argument("--makeup", help="makeup plan JSON to wear during the walk")
    p.add_argument("--threshold", type=float, default=fr.ID_THRESHOLD)
    p.add_argument("--persistency", type=int, default=fr.PERSISTENCY_FRAMES)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    add_out(p)
    p.set_defaults(func=lambda a, _p: cmd_evaluate_stream(a))

    p = sub.add_parser("experiment", help="run the full three-condition experiment")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    add_out(p)
    p.set_defaults(func=lambda a, _p: cmd_experiment(a))

    p = sub.add_parser("transfer-check",
                       help="match still images against a gallery")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--images", nargs="+", required=True,
                   help="PNG files named <enrolled-id>.png")
    p.add_argument("--threshold", type=float, default=fr.ID_THRESHOLD)
    add_out(p)
    p.set_defaults(func=lambda a, _p: cmd_transfer_check(a))

    p = sub.add_parser("serve", help="serve the studio session API over HTTP")
    p.add_argument("--model", required=True, help="surrogate embedder directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8756)
    p.set_defaults(func=lambda a, _p: cmd_serve(a))

    return parser


def dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            parser.error("--jobs must be >= 1")
        return args.func(args, parser)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

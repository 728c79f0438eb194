"""Batch command-line entry point for the full pipeline.

Every subcommand is deterministic: identical flags and seed give
byte-identical outputs. A JSON config file can supply flag defaults
(flags given on the command line win).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import detector as det_mod
from . import distortions, featnet, mitigator, synthface, verifybench
from .imagecore import FormatError, read_image


def _load_network(args) -> featnet.NetworkModel:
    if getattr(args, "weights", None):
        return featnet.load_weights(args.weights)
    return featnet.default_network(args.net_seed)


def _dataset_batch(ds):
    return np.stack([it.image.pixels for it in ds.items])


def _cmd_gen_data(args):
    ds = synthface.generate_dataset(args.subjects, args.samples, args.size, args.seed)
    out = Path(args.out)
    synthface.save_dataset(ds, out)
    print(f"wrote {len(ds)} images + manifest.json to {out}")


def _cmd_distort(args):
    spec = distortions.DistortionSpec.from_json_file(args.spec)
    ds = synthface.load_dataset(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = []
    records = []
    for i, item in enumerate(ds.items):
        img, rec = distortions.apply(distortions.per_image_spec(spec, i),
                                     item.image, item.landmarks)
        items.append(synthface.DatasetItem(img, item.landmarks,
                                           item.subject_id, item.sample_index))
        records.append({"index": i, "spec": rec.spec.to_json_dict(),
                        "affected_pixel_count": rec.affected_pixel_count})
    synthface.save_dataset(synthface.Dataset(tuple(items), ds.seed), out)
    (out / "records.json").write_text(json.dumps(records, indent=2))
    print(f"distorted {len(items)} images into {out}")


def _cmd_extract(args):
    model = _load_network(args)
    ds = synthface.load_dataset(args.dataset)
    reps = det_mod.compute_mean_reps(model, _dataset_batch(ds))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    featnet.save_weights(model, out / "network.fnet")
    det_mod.save_mean_reps(reps, out / "mean_reps.mrep")
    print(f"wrote network.fnet and mean_reps.mrep ({reps.n_train} images) to {out}")


def _cmd_train_detector(args):
    model = _load_network(args)
    reps = det_mod.load_mean_reps(args.mean_reps)
    clean = synthface.load_dataset(args.clean)
    distorted = synthface.load_dataset(args.distorted)
    det = det_mod.train_detector(model, reps, _dataset_batch(clean),
                                 _dataset_batch(distorted),
                                 C_grid=args.c_grid, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    det_mod.save_detector(det, out / "detector.json", out / "mean_reps.mrep")
    print(f"trained detector (C={det.C}) -> {out / 'detector.json'}")


def _cmd_detect(args):
    model = _load_network(args)
    det = det_mod.load_detector(args.detector)
    img = read_image(args.image)
    score, verdict = det_mod.detect(det, model, img)
    print(f"{args.image},{score:.6f},{verdict}")


def _cmd_sensitivity(args):
    model = _load_network(args)
    clean = synthface.load_dataset(args.clean)
    distorted = synthface.load_dataset(args.distorted)
    if len(clean) != len(distorted):
        raise ValueError("clean and distorted datasets must pair up 1:1")
    pairs = [(d.image, c.image) for d, c in zip(distorted.items, clean.items)]
    table = mitigator.compute_sensitivity(model, pairs)
    mitigator.save_table(table, args.out)
    print(f"sensitivity table over {table.n_dis} pairs -> {args.out}")


def _cmd_build_plan(args):
    table = mitigator.load_table(args.table)
    plan = mitigator.build_plan(table, args.eta, args.kappa,
                                use_median_filter=not args.no_median)
    mitigator.save_plan(plan, args.out)
    print(f"plan eta={plan.eta} kappa={plan.kappa} "
          f"({len(plan.mask.disabled)} filters disabled) -> {args.out}")


def _cmd_mitigate(args):
    model = _load_network(args)
    plan = mitigator.MitigationPlan.from_json_file(args.plan)
    img = read_image(args.image)
    emb = mitigator.mitigate(model, plan, img)
    Path(args.out).write_text(json.dumps([float(v) for v in emb]))
    print(f"embedding ({len(emb)}-d) -> {args.out}")


def _cmd_evaluate(args):
    model = _load_network(args)
    ds = synthface.load_dataset(args.dataset)
    spec = distortions.DistortionSpec.from_json_file(args.distortion)
    det = det_mod.load_detector(args.detector) if args.detector else None
    plan = mitigator.MitigationPlan.from_json_file(args.plan) if args.plan else None
    rows = verifybench.run_protocol(ds, model, spec, det=det, plan=plan,
                                    fraction=args.fraction, seed=args.seed,
                                    far_target=args.far)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    verifybench.write_report(rows, out)
    for r in rows:
        print(f"{r['condition']}: GAR@{r['far_target']:g}FAR = {r['gar_at_far']:.6f}")
    print(f"report -> {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advface",
                                description="Face distortion attacks, detection, mitigation")
    p.add_argument("--config", help="JSON file supplying flag defaults")
    sub = p.add_subparsers(dest="command", required=True)

    def net_flags(sp):
        sp.add_argument("--weights", help="FNET1 weight file (default: seeded network)")
        sp.add_argument("--net-seed", type=int, default=0)

    sp = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    sp.add_argument("--subjects", type=int, required=True)
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_gen_data)

    sp = sub.add_parser("distort", help="apply a distortion spec to a dataset")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_distort)

    sp = sub.add_parser("extract", help="save network weights and clean mean activations")
    net_flags(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_extract)

    sp = sub.add_parser("train-detector", help="train the clean/distorted classifier")
    net_flags(sp)
    sp.add_argument("--mean-reps", required=True)
    sp.add_argument("--clean", required=True)
    sp.add_argument("--distorted", required=True)
    sp.add_argument("--c-grid", type=float, nargs="+", default=list(det_mod.DEFAULT_C_GRID))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_train_detector)

    sp = sub.add_parser("detect", help="score one image with a trained detector")
    net_flags(sp)
    sp.add_argument("--detector", required=True)
    sp.add_argument("--image", required=True)
    sp.set_defaults(func=_cmd_detect)

    sp = sub.add_parser("sensitivity", help="per-filter sensitivity from paired datasets")
    net_flags(sp)
    sp.add_argument("--clean", required=True)
    sp.add_argument("--distorted", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_sensitivity)

    sp = sub.add_parser("build-plan", help="derive a mitigation plan from a table")
    sp.add_argument("--table", required=True)
    sp.add_argument("--eta", type=int, required=True)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--no-median", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_build_plan)

    sp = sub.add_parser("mitigate", help="embed one image under a mitigation plan")
    net_flags(sp)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_mitigate)

    sp = sub.add_parser("evaluate", help="run the 50%-distorted protocol")
    net_flags(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--distortion", required=True)
    sp.add_argument("--detector")
    sp.add_argument("--plan")
    sp.add_argument("--far", type=float, default=0.01)
    sp.add_argument("--fraction", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_evaluate)
    return p


def _apply_config(parser: argparse.ArgumentParser, defaults: dict) -> None:
    """Install config values as flag defaults, including for required flags."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_config(sub, defaults)
        elif action.dest in defaults:
            action.default = defaults[action.dest]
            action.required = False


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            defaults = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"usage error: {exc}", file=sys.stderr)
            return 1
        _apply_config(parser, {k.replace("-", "_"): v for k, v in defaults.items()})
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (FormatError, verifybench.ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

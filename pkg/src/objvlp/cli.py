"""Command-line entry point: ``objvlp {gen,train,eval,ablate,sweep-delta,gradcheck,scratch}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, synthworld
from .metrics import format_report, write_report

log = logging.getLogger("objvlp")


def _config(path) -> harness.RunConfig:
    return harness.RunConfig.load(path) if path else harness.RunConfig()


def _seeds(text: str) -> list[int]:
    """``"0,1,2"`` or ``"0-4"`` -> list of ints."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_gen(args) -> int:
    ds = synthworld.generate(seed=args.seed, n_scenes=args.scenes, objects_per_scene=args.objects,
                             jitter_per_object=args.jitters, clutter_per_scene=args.clutter,
                             noise_scale=args.noise)
    synthworld.write_dataset(ds.samples, args.out, ds.header)
    audit = ds.header["audit"]
    print(f"wrote {len(ds)} samples to {args.out}; coverage@0.25={audit['coverage@0.25']:.4f} "
          f"coverage@0.5={audit['coverage@0.5']:.4f} unique={audit['unique_fraction']:.3f}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = harness.load_data(cfg, args.data)
    train_s, val_s = harness.split_by_scene(ds, cfg.val_fraction)
    result = harness.train(cfg, synthworld.Dataset(train_s, ds.header))
    result.log.metrics = harness.evaluate(result.model, val_s or train_s, cfg.thresholds)
    harness.save_run(result, args.out)
    cfg.save(Path(args.out) / "config.json")
    print(format_report(result.log.metrics))
    print(f"checkpoint written to {Path(args.out) / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    cfg = harness.RunConfig.load(args.config) if args.config else None
    model, ck_cfg = harness.model_from_checkpoint(args.ckpt, cfg)
    ds = harness.load_data(ck_cfg, args.data)
    samples = list(ds)
    if args.split != "all":
        train_s, val_s = harness.split_by_scene(ds, ck_cfg.val_fraction)
        samples = val_s if args.split == "val" else train_s
    report = harness.evaluate(model, samples, ck_cfg.thresholds)
    if args.report:
        write_report(report, args.report)
    print(format_report(report))
    return 0


def _progress(*parts):
    log.info("done %s", " ".join(str(p) for p in parts))


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    table = harness.ablate(cfg, args.seeds, progress=_progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, indent=2) + "\n")
    text = harness.format_ablation(table)
    (out / "ablation.txt").write_text(text + "\n")
    print(text)
    return 1 if any("error" in cell for cell in table.values()) else 0


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    result = harness.delta_sweep(cfg, args.deltas, args.seeds, progress=_progress)
    harness.write_sweep(result, args.out)
    for variant, points in result["curves"].items():
        for p in points:
            print(f"{variant:<9} delta={p['delta']:<5g} acc@0.25={p['acc@0.25']:.4f} acc@0.5={p['acc@0.5']:.4f}")
    check = result["check"]
    if check.get("applicable"):
        verdict = "holds" if check["holds"] else "does NOT hold (logged discrepancy)"
        print(f"large-threshold check: {check['metric']} at delta={check['largest_delta']:g} is "
              f"{check['value_at_largest']:.4f} vs best smaller {check['best_smaller']:.4f}: {verdict}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args.config)
    reports = harness.gradcheck_cmd(cfg, seeds=args.seeds, corrupt=args.corrupt, tol=args.tol)
    for seed, rep in zip(args.seeds, reports):
        print(f"seed {seed}: {rep}")
    ok = all(r.passed for r in reports)
    print("gradcheck PASSED" if ok else "gradcheck FAILED")
    return 0 if ok else 1


def cmd_scratch(args) -> int:
    cfg = _config(args.config)
    table = harness.compare_scratch(cfg, args.seeds)
    text = json.dumps(table, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="objvlp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset (JSON lines)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--jitters", type=int, default=4)
    p.add_argument("--clutter", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="pre-train, fine-tune QA, write checkpoint and log")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset file; generated from the config when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--config", help="refuse the checkpoint unless its config hash matches")
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="toggle grid over OID/OCC/OSC x seeds")
    p.add_argument("--config")
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-delta", help="accuracy versus IoU-filter threshold")
    p.add_argument("--config")
    p.add_argument("--deltas", type=_floats, default=[0.1, 0.25, 0.5, 0.75])
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the composite loss")
    p.add_argument("--config")
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2])
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help="perturb one analytic gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("scratch", help="QA from pre-trained encoders vs from scratch")
    p.add_argument("--config")
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2])
    p.add_argument("--out")
    p.set_defaults(func=cmd_scratch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train, eval, domain-shift, gen-data and report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import DialError

log = logging.getLogger("dialexperts")


def _setup_logging() -> None:
    level = os.environ.get("V2D_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def cmd_train(args) -> int:
    from .pipeline import RunConfig, run_stage

    cfg = RunConfig.load(args.config)
    if args.ablate:
        cfg = cfg.with_ablations([a.strip() for a in args.ablate.split(",") if a.strip()])
    res = run_stage(args.stage, cfg, resume=args.resume, from_scratch=args.from_scratch,
                    stop_at_step=args.stop_at_step)
    last = res.history[-1] if res.history else {}
    print(json.dumps({"stage": res.stage, "steps": res.steps, "checkpoint": str(res.checkpoint),
                      "stopped_early": res.stopped_early, "finished": res.finished, "last_epoch": last},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .pipeline import run_eval
    from .pipeline.evaluate import run_swap_study

    out = args.out or Path(args.ckpt) / "eval"
    if args.swap_study:
        print(json.dumps(run_swap_study(args.ckpt, args.data, out), indent=2))
        return 0
    report = run_eval(args.ckpt, args.data, args.mode, args.embedder, args.swap, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_domain_shift(args) -> int:
    from .pipeline import RunConfig, run_domain_shift

    report = run_domain_shift(args.plan, RunConfig.load(args.config), from_scratch=args.from_scratch)
    print(json.dumps(report["eval"], indent=2, sort_keys=True))
    return 0


def cmd_gen_data(args) -> int:
    from .data import synth_corpus, verify_corpus

    out = synth_corpus(args.seed, args.n, args.kind, args.out, image_size=args.image_size)
    problems = verify_corpus(out)
    for p in problems:
        log.error("verification: %s", p)
    print(json.dumps({"out": str(out), "kind": args.kind, "n": args.n, "verified": not problems}))
    return 3 if problems else 0


def cmd_report(args) -> int:
    from .evaluation import nlg_report
    from .plotting import plot_metrics

    metrics = nlg_report(args.pred, args.ref)
    out = Path(args.out) if args.out else Path(args.pred).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.pred).stem
    (out / f"{stem}.metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
    lines = ["metric\tvalue"] + [f"{k}\t{v:.6f}" for k, v in metrics.items()]
    (out / f"{stem}.metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plot_metrics(metrics, out / f"{stem}.metrics.png", title=stem)
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialexperts", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--from-scratch", action="store_true", help="do not require the previous stage's checkpoint")
    t.add_argument("--ablate", help="comma list: no-stage1, no-stage2, no-stc-stm, no-separate-st, no-experts")
    t.add_argument("--stop-at-step", type=int, help=argparse.SUPPRESS)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dialog file")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("nlg", "retrieval", "both"), default="both")
    e.add_argument("--embedder", default="builtin", help="'builtin' or the base URL of an embedding service")
    e.add_argument("--swap", help="expert swaps, e.g. spa:tmp,cap:ctx")
    e.add_argument("--swap-study", action="store_true",
                   help="score the identity routing and every standard swap row; writes swaps.json and swaps.png")
    e.add_argument("--out", help="report directory (default: CKPT/eval)")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("domain-shift", help="fine-tune across two dialog datasets")
    d.add_argument("--plan", choices=("a-to-b", "b-to-a", "joint"), required=True)
    d.add_argument("--config", required=True)
    d.add_argument("--from-scratch", action="store_true")
    d.set_defaults(fn=cmd_domain_shift)

    g = sub.add_parser("gen-data", help="write a synthetic corpus")
    g.add_argument("--kind", choices=("stage1", "stage2", "stage3-video", "stage3-image"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--image-size", type=int, default=56)
    g.set_defaults(fn=cmd_gen_data)

    r = sub.add_parser("report", help="score predictions against references")
    r.add_argument("--pred", required=True)
    r.add_argument("--ref", required=True)
    r.add_argument("--out", help="directory for the JSON, TSV and PNG (default: next to --pred)")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DialError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

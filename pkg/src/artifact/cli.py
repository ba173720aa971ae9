"""Command-line entry point.

Subcommands: flow (two-frame flow field), score (instability profile),
sample (peak-guided frame selection), synth (test fixtures), qa-gen
(question generation), evaluate (accuracy report), audit (end-to-end
pipeline: sample, question, predict, report).

Exit codes: 0 clean, 2 partial per-video failures, 3 configuration or
input errors. A JSON file passed via --config provides defaults for any
long flag (key = flag name with underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .frameio import (
    DEFAULT_MAX_DIM,
    FrameError,
    downscale_sequence,
    iter_video_dirs,
    load_luma,
    load_sequence,
    save_luma_png,
)
from .optflow import FlowError, FlowParams, flow_two_frame, magnitude_stat, write_flow
from .predictor import DEFAULT_TIMEOUT, PredictRequest, make_backend
from .qa_eval import (
    EvalError,
    PredictionRecord,
    evaluate,
    evaluate_records,
    generate_qa,
    parse_answer,
    read_annotations,
)
from .sampler import (
    SamplerError,
    SamplerParams,
    fmg_dfs,
    instability_profile,
    random_indices,
    smooth,
    uniform_indices,
)
from .synthgen import FixtureError, FixtureSpec, generate
from .taxonomy import TaxonomyError, default_taxonomy_path, load_taxonomy

__all__ = ["main", "build_parser"]

log = logging.getLogger("artifact")

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_CONFIG = 3

_CONFIG_ERRORS = (
    TaxonomyError,
    EvalError,
    SamplerError,
    FlowError,
    FixtureError,
    FrameError,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    # Usage problems are configuration errors under the exit-code policy.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _scan_config(argv) -> Path | None:
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise ValueError("--config needs a file argument")
            return Path(argv[i + 1])
        if token.startswith("--config="):
            return Path(token.split("=", 1)[1])
    return None


def _load_config(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"config {path}: top level must be a JSON object")
    return {str(k).replace("-", "_"): v for k, v in doc.items()}


def _known_dests(parser: argparse.ArgumentParser) -> set[str]:
    dests: set[str] = set()
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
            elif action.dest != "help":
                dests.add(action.dest)
    return dests


def build_parser(cfg: dict | None = None) -> argparse.ArgumentParser:
    """Build the CLI parser, with ``cfg`` entries baked in as defaults."""
    cfg = cfg or {}

    def d(key, fallback):
        return cfg.get(key, fallback)

    def req(key) -> bool:
        return key not in cfg

    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with flag defaults")
    common.add_argument(
        "--jobs", type=int, default=d("jobs", 1), help="worker count (default 1)"
    )
    common.add_argument(
        "--log-level",
        default=d("log_level", "warning"),
        choices=["debug", "info", "warning", "error"],
        help="logging verbosity",
    )

    def add_flow_flags(p):
        g = p.add_argument_group("flow parameters")
        g.add_argument("--pyramid-levels", type=int, default=d("pyramid_levels", 3))
        g.add_argument("--pyramid-scale", type=float, default=d("pyramid_scale", 0.5))
        g.add_argument("--window-size", type=int, default=d("window_size", 15))
        g.add_argument("--iterations", type=int, default=d("iterations", 3))
        g.add_argument("--poly-n", type=int, default=d("poly_n", 5))
        g.add_argument("--poly-sigma", type=float, default=d("poly_sigma", 1.1))

    def add_score_flags(p):
        p.add_argument(
            "--stat",
            choices=["mean", "max", "p95"],
            default=d("stat", "mean"),
            help="flow-magnitude statistic per transition",
        )
        p.add_argument(
            "--max-dim",
            type=int,
            default=d("max_dim", DEFAULT_MAX_DIM),
            help="working resolution cap for flow; 0 keeps native size",
        )

    def add_sampler_flags(p):
        g = p.add_argument_group("sampler parameters")
        g.add_argument("--k", type=int, default=d("k", 3), help="peak count")
        g.add_argument("--w", type=int, default=d("w", 5), help="min peak distance")
        g.add_argument("--m", type=int, default=d("m", 10), help="total sample count")
        g.add_argument("--ws", type=int, default=d("ws", 3), help="smoothing window")

    parser = _Parser(
        prog="artifact",
        description="Flow-guided frame sampling and video artifact auditing.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser(
        "flow", parents=[common], help="dense flow between two images"
    )
    p.add_argument("--a", required=req("a"), default=d("a", None), help="first image")
    p.add_argument("--b", required=req("b"), default=d("b", None), help="second image")
    p.add_argument("--out", default=d("out", None), help="binary flow dump path")
    p.add_argument(
        "--stats", action="store_true", default=d("stats", False),
        help="print mean/max magnitude as JSON",
    )
    add_flow_flags(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser(
        "score", parents=[common], help="per-transition instability profile"
    )
    p.add_argument(
        "--input", required=req("input"), default=d("input", None),
        help="frame directory or manifest",
    )
    p.add_argument("--out", default=d("out", None), help="profile JSON path")
    p.add_argument("--plot", default=d("plot", None), help="profile figure path")
    add_score_flags(p)
    add_flow_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser(
        "sample", parents=[common], help="peak-guided frame selection"
    )
    p.add_argument(
        "--input", required=req("input"), default=d("input", None),
        help="frame directory or manifest",
    )
    p.add_argument("--out", default=d("out", None), help="sample JSON path")
    p.add_argument(
        "--export-frames", default=d("export_frames", None),
        help="directory for the selected frames (idx_XXXXX.png)",
    )
    p.add_argument("--plot", default=d("plot", None), help="profile figure path")
    add_sampler_flags(p)
    add_score_flags(p)
    add_flow_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", parents=[common], help="synthetic fixture sequences")
    p.add_argument(
        "--kind", required=req("kind"), default=d("kind", None),
        choices=["translate", "burst", "flicker", "constant"],
    )
    p.add_argument("--n", type=int, required=req("n"), default=d("n", None))
    p.add_argument("--size", default=d("size", "64x64"), help="WIDTHxHEIGHT")
    p.add_argument("--seed", type=int, default=d("seed", 0))
    p.add_argument("--shift", default=d("shift", "0,0"), help="dx,dy per transition")
    p.add_argument(
        "--at", type=int, default=d("at", None),
        help="shifted transition for translate (default: middle)",
    )
    p.add_argument(
        "--bursts", default=d("bursts", None),
        help="transition intervals a:b,c:d for burst",
    )
    p.add_argument(
        "--intervals", default=d("intervals", None),
        help="frame intervals a:b,c:d for flicker",
    )
    p.add_argument("--amplitude", type=float, default=d("amplitude", 0.2))
    p.add_argument(
        "--out", required=req("out"), default=d("out", None), help="output directory"
    )
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("qa-gen", parents=[common], help="generate category questions")
    p.add_argument("--taxonomy", default=d("taxonomy", None))
    p.add_argument(
        "--videos", default=d("videos", None), help="comma-separated video ids"
    )
    p.add_argument(
        "--input", default=d("input", None), help="root of per-video directories"
    )
    p.add_argument("--out", default=d("out", None), help="QA JSONL path")
    p.set_defaults(func=cmd_qa_gen)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions")
    p.add_argument(
        "--predictions", required=req("predictions"), default=d("predictions", None)
    )
    p.add_argument(
        "--annotations", required=req("annotations"), default=d("annotations", None)
    )
    p.add_argument("--taxonomy", default=d("taxonomy", None))
    p.add_argument(
        "--format", choices=["json", "table"], default=d("format", "json"),
        help="stdout rendering",
    )
    p.add_argument("--out", default=d("out", None), help="report JSON path")
    p.add_argument("--plot", default=d("plot", None), help="accuracy figure path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", parents=[common], help="end-to-end artifact audit")
    p.add_argument(
        "--input", required=req("input"), default=d("input", None),
        help="root containing one frame directory per video",
    )
    p.add_argument("--taxonomy", default=d("taxonomy", None))
    p.add_argument(
        "--backend", default=d("backend", "always_no"),
        help="always_no | threshold:<v> | command:<cmd>",
    )
    p.add_argument(
        "--timeout", type=float, default=d("timeout", DEFAULT_TIMEOUT),
        help="command backend response timeout (s)",
    )
    p.add_argument("--annotations", default=d("annotations", None))
    p.add_argument(
        "--sampling", choices=["fmg", "mean", "random"], default=d("sampling", "fmg")
    )
    p.add_argument("--seed", type=int, default=d("seed", 0), help="random sampling seed")
    p.add_argument(
        "--frames-dir", default=d("frames_dir", None),
        help="scratch directory for exported frames (default: temp dir)",
    )
    p.add_argument("--out", default=d("out", None), help="audit report JSON path")
    p.add_argument(
        "--predictions-out", default=d("predictions_out", None),
        help="raw predictions JSONL path",
    )
    p.add_argument("--plot", default=d("plot", None), help="accuracy figure path")
    add_sampler_flags(p)
    add_score_flags(p)
    add_flow_flags(p)
    p.set_defaults(func=cmd_audit)

    return parser


def _flow_params(args) -> FlowParams:
    return FlowParams(
        pyramid_levels=args.pyramid_levels,
        pyramid_scale=args.pyramid_scale,
        window_size=args.window_size,
        iterations=args.iterations,
        poly_n=args.poly_n,
        poly_sigma=args.poly_sigma,
    )


def _sampler_params(args) -> SamplerParams:
    return SamplerParams(k=args.k, w=args.w, m=args.m, w_s=args.ws)


def _taxonomy(args):
    return load_taxonomy(args.taxonomy or default_taxonomy_path())


def _emit_json(doc, out_path, to_stdout=True) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    if to_stdout and not out_path:
        print(text)


def _working_sequence(seq, max_dim):
    return downscale_sequence(seq, max_dim) if max_dim else seq


def cmd_flow(args) -> int:
    field = flow_two_frame(load_luma(args.a), load_luma(args.b), _flow_params(args))
    if args.out:
        write_flow(field, args.out)
        log.info("wrote %s", args.out)
    if args.stats or not args.out:
        print(
            json.dumps(
                {
                    "mean": magnitude_stat(field, "mean"),
                    "max": magnitude_stat(field, "max"),
                }
            )
        )
    return EXIT_OK


def _profile_doc(seq, profile, args) -> dict:
    return {
        "video": seq.source_id,
        "n": len(seq.frames),
        "stat": args.stat,
        "params": {
            "flow": asdict(_flow_params(args)),
            "digest": profile.params_digest if profile else None,
            "max_dim": args.max_dim,
        },
        "scores": list(profile.scores) if profile else [],
    }


def cmd_score(args) -> int:
    seq = load_sequence(args.input)
    work = _working_sequence(seq, args.max_dim)
    profile = instability_profile(
        work, _flow_params(args), stat=args.stat, jobs=args.jobs
    )
    _emit_json(_profile_doc(seq, profile, args), args.out)
    if args.plot:
        from .plotting import plot_profile

        plot_profile(
            profile.scores, out_path=args.plot, title=f"{seq.source_id} instability"
        )
        log.info("wrote %s", args.plot)
    return EXIT_OK


def cmd_sample(args) -> int:
    seq = load_sequence(args.input)
    work = _working_sequence(seq, args.max_dim)
    sp = _sampler_params(args)
    fp = _flow_params(args)
    n = len(seq.frames)

    profile = None
    scores_smooth: list[float] = []
    if n > sp.m and n >= 2:
        profile = instability_profile(work, fp, stat=args.stat, jobs=args.jobs)
        scores_smooth = smooth(profile.scores, sp.w_s)
        result = fmg_dfs(profile, sp)
    else:
        result = fmg_dfs(work, sp, fp, stat=args.stat)

    doc = _profile_doc(seq, profile, args)
    doc["params"]["sampler"] = asdict(sp)
    doc.update(
        {
            "scores_smooth": scores_smooth,
            "peaks": list(result.peaks),
            "indices": list(result.indices),
            "provenance": list(result.provenance),
            "clips": [[c.start, c.end] for c in result.clips],
        }
    )
    _emit_json(doc, args.out)

    if args.export_frames:
        out_dir = Path(args.export_frames)
        out_dir.mkdir(parents=True, exist_ok=True)
        for idx in result.indices:
            save_luma_png(seq.frames[idx], out_dir / f"idx_{idx:05d}.png")
        log.info("exported %d frames to %s", len(result.indices), out_dir)
    if args.plot:
        from .plotting import plot_profile

        plot_profile(
            profile.scores if profile else [],
            scores_smooth or None,
            result.peaks,
            result.indices,
            out_path=args.plot,
            title=f"{seq.source_id} sampling",
        )
        log.info("wrote %s", args.plot)
    return EXIT_OK


def _parse_intervals(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in text.split(","):
        a, sep, b = part.partition(":")
        if not sep:
            raise ValueError(f"bad interval {part!r}: expected a:b")
        out.append((int(a), int(b)))
    return tuple(out)


def cmd_synth(args) -> int:
    try:
        w, h = (int(v) for v in args.size.lower().split("x"))
        dx, dy = (int(v) for v in args.shift.split(","))
    except ValueError as exc:
        raise ValueError(f"bad --size or --shift: {exc}") from exc
    at = args.at
    if args.kind == "translate" and at is None:
        at = max(0, (args.n - 1) // 2 if (args.n - 1) // 2 <= args.n - 2 else args.n - 2)
    intervals: tuple[tuple[int, int], ...] = ()
    if args.kind == "burst":
        if not args.bursts:
            raise ValueError("burst needs --bursts a:b,c:d")
        intervals = _parse_intervals(args.bursts)
    elif args.kind == "flicker":
        if not args.intervals:
            raise ValueError("flicker needs --intervals a:b,c:d")
        intervals = _parse_intervals(args.intervals)

    spec = FixtureSpec(
        kind=args.kind,
        n=args.n,
        width=w,
        height=h,
        seed=args.seed,
        shift=(dx, dy),
        at=at,
        intervals=intervals,
        amplitude=args.amplitude,
    )
    seq = generate(spec, args.out)
    print(
        json.dumps(
            {"out": str(args.out), "kind": spec.kind, "n": len(seq.frames)},
        )
    )
    return EXIT_OK


def cmd_qa_gen(args) -> int:
    tax = _taxonomy(args)
    if args.videos:
        video_ids = [v for v in args.videos.split(",") if v]
    elif args.input:
        video_ids = [p.name for p in iter_video_dirs(args.input)]
    else:
        raise ValueError("qa-gen needs --videos or --input")
    if not video_ids:
        raise ValueError("no videos found")

    lines = []
    for vid in video_ids:
        for pair in generate_qa(vid, tax):
            lines.append(
                json.dumps(
                    {
                        "video_id": pair.video_id,
                        "category_id": pair.category_id,
                        "question": pair.question,
                    },
                    separators=(",", ":"),
                )
            )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tax = _taxonomy(args)
    report = evaluate(args.predictions, args.annotations, tax)
    for detail in report.unmatched_detail:
        log.warning("unmatched prediction: %s", detail)
    if args.format == "table":
        print(report.render_table())
    else:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    if args.out:
        _emit_json(report.to_json_dict(), args.out, to_stdout=False)
    if args.plot:
        from .plotting import plot_accuracy

        plot_accuracy(report, out_path=args.plot)
        log.info("wrote %s", args.plot)
    return EXIT_OK


class _BackendPool:
    """One backend per worker thread, created on demand, closed at the end."""

    def __init__(self, spec: str, timeout: float):
        self._spec = spec
        self._timeout = timeout
        self._idle: list = []
        self._all: list = []
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            if self._idle:
                return self._idle.pop()
            backend = make_backend(self._spec, timeout=self._timeout)
            self._all.append(backend)
            return backend

    def release(self, backend) -> None:
        with self._lock:
            self._idle.append(backend)

    def close_all(self) -> None:
        with self._lock:
            for backend in self._all:
                backend.close()
            self._all.clear()
            self._idle.clear()


def _video_seed(base: int, video_id: str) -> int:
    digest = hashlib.sha1(f"{base}:{video_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _audit_one(video_dir: Path, args, tax, pool: _BackendPool, scratch: Path):
    """Process one video: sample, export, question, predict."""
    video_id = video_dir.name
    seq = load_sequence(video_dir)
    n = len(seq.frames)
    sp = _sampler_params(args)
    fp = _flow_params(args)
    work = _working_sequence(seq, args.max_dim)

    profile = None
    record: dict = {"video_id": video_id}
    if args.sampling == "fmg":
        if n > sp.m and n >= 2:
            profile = instability_profile(work, fp, stat=args.stat)
            result = fmg_dfs(profile, sp)
        else:
            result = fmg_dfs(work, sp, fp, stat=args.stat)
        indices = list(result.indices)
        record["provenance"] = list(result.provenance)
        record["clips"] = [[c.start, c.end] for c in result.clips]
    elif args.sampling == "mean":
        indices = uniform_indices(n, sp.m)
    else:
        indices = random_indices(n, sp.m, seed=_video_seed(args.seed, video_id))
    record["indices"] = indices

    frame_dir = scratch / video_id
    frame_dir.mkdir(parents=True, exist_ok=True)
    frame_paths = []
    for idx in indices:
        path = frame_dir / f"idx_{idx:05d}.png"
        save_luma_png(seq.frames[idx], path)
        frame_paths.append(str(path))

    meta = {}
    if profile is not None:
        meta["mean_score"] = float(np.mean(profile.scores))

    verdicts = {}
    predictions = []
    backend = pool.acquire()
    try:
        for pair in generate_qa(video_id, tax):
            req = PredictRequest(
                video_id=video_id,
                category_id=pair.category_id,
                question=pair.question,
                frame_paths=tuple(frame_paths),
                meta=meta,
            )
            resp = backend.predict(req)
            verdicts[pair.category_id] = parse_answer(resp.raw_answer).value
            predictions.append(
                PredictionRecord.from_raw(
                    video_id, pair.category_id, resp.raw_answer
                )
            )
    finally:
        pool.release(backend)
    record["verdicts"] = verdicts
    return record, predictions


def cmd_audit(args) -> int:
    tax = _taxonomy(args)
    root = Path(args.input)
    video_dirs = list(iter_video_dirs(root))
    if not video_dirs:
        log.error("no videos found under %s", root)
        print(f"no videos found under {root}", file=sys.stderr)
        return EXIT_CONFIG

    annotations = None
    if args.annotations:
        annotations = read_annotations(args.annotations, tax)

    scratch = Path(args.frames_dir or tempfile.mkdtemp(prefix="artifact-frames-"))
    scratch.mkdir(parents=True, exist_ok=True)
    pool = _BackendPool(args.backend, args.timeout)
    # Validate the backend spec before spinning up workers.
    pool.release(pool.acquire())

    records = {}
    predictions = []
    errors = 0

    def run(video_dir: Path):
        return _audit_one(video_dir, args, tax, pool, scratch)

    try:
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as executor:
                outcomes = list(executor.map(_safe(run), video_dirs))
        else:
            outcomes = [_safe(run)(d) for d in video_dirs]
    finally:
        pool.close_all()

    for video_dir, outcome in zip(video_dirs, outcomes):
        if isinstance(outcome, Exception):
            errors += 1
            log.error("video %s failed: %s", video_dir.name, outcome)
            records[video_dir.name] = {
                "video_id": video_dir.name,
                "error": str(outcome),
            }
        else:
            record, preds = outcome
            records[record["video_id"]] = record
            predictions.extend(preds)

    doc = {
        "meta": {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "backend": args.backend,
            "sampling": args.sampling,
            "taxonomy_version": tax.version,
            "params": {
                "sampler": asdict(_sampler_params(args)),
                "flow": asdict(_flow_params(args)),
                "stat": args.stat,
                "max_dim": args.max_dim,
            },
            "n_videos": len(video_dirs),
            "errors": errors,
        },
        "videos": [records[k] for k in sorted(records)],
    }

    report = None
    if annotations is not None and predictions:
        report = evaluate_records(predictions, annotations, tax)
        for detail in report.unmatched_detail:
            log.warning("unmatched prediction: %s", detail)
        doc["eval"] = report.to_json_dict()

    if args.predictions_out:
        with open(args.predictions_out, "w", encoding="utf-8") as fh:
            for p in sorted(predictions, key=lambda p: (p.video_id, p.category_id)):
                fh.write(
                    json.dumps(
                        {
                            "video_id": p.video_id,
                            "category_id": p.category_id,
                            "raw_answer": p.raw_answer,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )

    _emit_json(doc, args.out)
    if args.plot and report is not None:
        from .plotting import plot_accuracy

        plot_accuracy(report, out_path=args.plot)
        log.info("wrote %s", args.plot)

    return EXIT_PARTIAL if errors else EXIT_OK


def _safe(fn):
    def wrapper(arg):
        try:
            return fn(arg)
        except Exception as exc:  # noqa: BLE001 - per-video isolation
            return exc

    return wrapper


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        cfg_path = _scan_config(argv)
        cfg = _load_config(cfg_path) if cfg_path else {}
        parser = build_parser(cfg)
        unknown = set(cfg) - _known_dests(parser) - {"config"}
        if unknown:
            raise ValueError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )
    except ValueError as exc:
        print(f"artifact: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        log.error("%s", exc)
        print(f"artifact: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""``seldgrid`` command-line entry point.

Precedence for every option is: command-line flag, then the ``--config``
file (TOML or JSON; top-level keys plus an optional table named after the
subcommand), then the built-in default.  ``--classes`` always counts the
background class, i.e. it is M.

Exit codes: 0 success, 1 runtime failure, 2 validation error.  Failures
print a one-line JSON object on standard error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigInvalid, SeldGridError
from .label_codec import ClassMap

SUBCOMMANDS = ("encode", "decode", "loss", "grad-check", "metrics", "simulate",
               "render", "features", "optimize", "ablate")


class UnknownSubcommand(ConfigInvalid):
    pass


class IoFailure(SeldGridError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "invalid choice" in message:
            raise UnknownSubcommand(message)
        raise ConfigInvalid(message)


@dataclass
class ToolConfig:
    grid: float = 15.0
    classes: int = 14
    class_names: list | None = None
    seed: int = 0
    threshold: float = 20.0
    segment_frames: int = 10
    win_s: float = 0.04
    hop_s: float = 0.02
    mel_bands: int = 64
    threads: int | None = None

    def validate(self) -> None:
        from .sphere_grid import build_grid

        build_grid(self.grid)
        if self.class_names is not None and len(self.class_names) + 1 != self.classes:
            self.classes = len(self.class_names) + 1
        if self.classes < 2:
            raise ConfigInvalid("need at least one event class plus background (classes >= 2)")
        if self.threshold <= 0 or self.segment_frames < 1:
            raise ConfigInvalid("threshold must be > 0 and segment_frames >= 1")

    def class_map(self) -> ClassMap:
        if self.class_names:
            return ClassMap(tuple(self.class_names))
        return ClassMap.with_count(self.classes - 1)


# -- argument definitions -------------------------------------------------

def _common(p, d):
    p.add_argument("--config", help="TOML or JSON config file", **d(None))
    p.add_argument("--grid", type=float, help="grid cell size in degrees", **d(15.0))
    p.add_argument("--classes", type=int, help="class count M including background", **d(14))
    p.add_argument("--seed", type=int, help="random seed", **d(0))
    p.add_argument("--threads", type=int, help="BLAS threads; None uses every core", **d(None))


def _metric_flags(p, d):
    p.add_argument("--threshold", type=float, help="true-positive gate in degrees", **d(20.0))
    p.add_argument("--segment-frames", dest="segment_frames", type=int,
                   help="label frames per evaluation segment", **d(10))


def _fit_flags(p, d):
    p.add_argument("--meta", help="reference metadata CSV", **d(None))
    p.add_argument("--fixture", type=int, help="synthetic single-frame fixture with N sources", **d(None))
    p.add_argument("--frames", type=int, help="label frames; None means last event frame + 1", **d(None))
    p.add_argument("--lr", type=float, help="learning rate", **d(0.05))
    p.add_argument("--steps", type=int, help="maximum gradient steps", **d(2000))
    p.add_argument("--eval-every", dest="eval_every", type=int, help="steps between snapshots", **d(10))
    p.add_argument("--init", choices=["uniform", "gaussian"], help="logit initialization", **d("uniform"))
    p.add_argument("--backoff", action="store_true", help="halve the step when the loss rises", **d(False))
    p.add_argument("--out", help="trace JSON output", **d(None))
    p.add_argument("--csv", help="per-snapshot metrics CSV", **d(None))
    _metric_flags(p, d)


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    """Parser with real defaults, or with every default suppressed.

    The suppressed variant tells which flags were typed explicitly.
    """
    def d(value):
        return {"default": argparse.SUPPRESS if suppress else value}

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="seldgrid", description="Grid-based SELD toolkit", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="metadata CSV -> label tensor", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--meta", required=True, help="metadata CSV")
    p.add_argument("--frames", type=int, help="label frames; None means last event frame + 1", **d(None))
    p.add_argument("--out", required=True, help="label tensor container")
    p.add_argument("--report", help="collision report JSON", **d(None))

    p = sub.add_parser("decode", help="prediction tensor -> events", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--pred", required=True, help="prediction tensor container")
    p.add_argument("--out", required=True, help="events CSV")
    p.add_argument("--json", help="events JSON with float directions", **d(None))
    p.add_argument("--min-prob", dest="min_prob", type=float, help="optional winner probability gate", **d(None))

    p = sub.add_parser("loss", help="evaluate the union loss", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--target", required=True, help="label tensor container or metadata CSV")
    p.add_argument("--pred", required=True, help="prediction tensor container")
    p.add_argument("--weights", type=float, nargs=3, help="MSE, AIUR, converging weights", **d([1.0, 1.0, 1.0]))
    p.add_argument("--out", help="LossReport JSON; None prints to stdout", **d(None))

    p = sub.add_parser("grad-check", help="finite-difference gradient check", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--trials", type=int, help="random instances", **d(100))
    p.add_argument("--tolerance", type=float, help="maximum relative error", **d(1e-5))
    p.add_argument("--out", help="result JSON", **d(None))

    p = sub.add_parser("metrics", help="score predictions against references", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--ref", required=True, help="reference events CSV")
    p.add_argument("--pred", required=True, help="predicted events CSV")
    p.add_argument("--out", required=True, help="MetricsReport JSON")
    p.add_argument("--breakdown", help="per-segment CSV", **d(None))
    p.add_argument("--greedy", action="store_true", help="greedy instead of optimal matching", **d(False))
    _metric_flags(p, d)

    p = sub.add_parser("simulate", help="generate a synthetic scene", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--out", required=True, help="metadata CSV")
    p.add_argument("--pred", help="also write a corrupted prediction tensor", **d(None))
    p.add_argument("--header", help="scene header JSON (spec, seed, PRNG)", **d(None))

    p = sub.add_parser("render", help="render plane-wave FOA audio for a scene", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--meta", required=True, help="metadata CSV")
    p.add_argument("--out", required=True, help="4-channel WAV")
    p.add_argument("--source", choices=["noise", "tone"], help="source signal", **d("noise"))
    p.add_argument("--duration", type=float, help="seconds; None covers every labelled frame", **d(None))
    p.add_argument("--snr", type=float, help="optional white-noise SNR in dB", **d(None))

    p = sub.add_parser("features", help="FOA WAV -> feature tensor", formatter_class=fmt)
    _common(p, d)
    p.add_argument("--wav", required=True, help="4-channel 24 kHz WAV")
    p.add_argument("--out", required=True, help="feature tensor container")
    p.add_argument("--resample", action="store_true", help="linearly resample other rates", **d(False))

    p = sub.add_parser("optimize", help="fit logits to a target by gradient descent", formatter_class=fmt)
    _common(p, d)
    _fit_flags(p, d)
    p.add_argument("--weights", type=float, nargs=3, help="MSE, AIUR, converging weights", **d([1.0, 1.0, 1.0]))

    p = sub.add_parser("ablate", help="compare loss-weight sets", formatter_class=fmt)
    _common(p, d)
    _fit_flags(p, d)
    return parser


# -- config resolution ----------------------------------------------------

def load_config_file(path) -> dict:
    text = Path(path).read_bytes()
    try:
        if str(path).endswith(".json"):
            return json.loads(text)
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    except ValueError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None


def resolve(argv: list[str]) -> tuple[argparse.Namespace, dict, ToolConfig]:
    args = build_parser().parse_args(argv)
    explicit = vars(build_parser(suppress=True).parse_args(argv))
    file_cfg: dict = {}
    if args.config:
        try:
            raw = load_config_file(args.config)
        except OSError as exc:
            raise IoFailure(str(exc)) from None
        file_cfg = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        file_cfg.update(raw.get(args.command, {}))
        for table in ("scene", "corruption"):
            if table in raw:
                file_cfg[table] = raw[table]
    for key, value in file_cfg.items():
        attr = key.replace("-", "_")
        if attr not in explicit and hasattr(args, attr):
            setattr(args, attr, value)

    tool_fields = {f.name for f in fields(ToolConfig)}
    tool = ToolConfig(**{k: v for k, v in {**file_cfg, **vars(args)}.items()
                         if k in tool_fields and v is not None})
    tool.validate()
    return args, file_cfg, tool


def report_header(args: argparse.Namespace, tool: ToolConfig, file_cfg: dict) -> dict:
    """Version, config hash and seed; no timestamps so payloads are reproducible."""
    skip = {"config", "threads", "out", "csv", "report", "json", "breakdown", "header"}
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    resolved["file"] = file_cfg
    from .scene_sim import PRNG_NAME

    digest = hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()
    return {"tool": "seldgrid", "version": __version__, "command": args.command,
            "config_hash": digest, "seed": tool.seed, "prng": PRNG_NAME}


def _dump(path, obj) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if x == float("inf"):
        return None
    raise TypeError(f"cannot serialize {type(x)}")


def _finite_or_none(x: float):
    return None if x == float("inf") else x


# -- subcommands ----------------------------------------------------------

def _events_from(path, classes):
    from .label_codec import read_events_json, read_metadata_csv

    if str(path).endswith(".json"):
        return read_events_json(path, classes)
    return read_metadata_csv(path, classes)


def _frames_for(events, frames):
    return frames if frames is not None else max((e.frame for e in events), default=-1) + 1


def cmd_encode(args, tool, header):
    from .container import save_grid_tensor
    from .label_codec import encode_frames
    from .sphere_grid import build_grid

    classes = tool.class_map()
    events = _events_from(args.meta, classes)
    labels, collisions = encode_frames(events, max(1, _frames_for(events, args.frames)),
                                       build_grid(tool.grid), classes)
    save_grid_tensor(args.out, labels)
    if args.report:
        _dump(args.report, {"header": header, "collisions": {
            "count": collisions.count,
            "entries": [list(e) for e in collisions.entries]}})


def cmd_decode(args, tool, header):
    from .container import load_grid_tensor
    from .label_codec import decode_predictions, write_events_json, write_metadata_csv

    grid = load_grid_tensor(args.pred)
    events = decode_predictions(grid.data, grid.spec, grid.classes, args.min_prob)
    write_metadata_csv(args.out, events)
    if args.json:
        write_events_json(args.json, events)


def _load_target(path, tool, frames=None):
    from .container import load_grid_tensor
    from .label_codec import LabelTensor, encode_frames
    from .sphere_grid import build_grid

    if str(path).endswith((".csv", ".json")):
        classes = tool.class_map()
        events = _events_from(path, classes)
        labels, _ = encode_frames(events, max(1, _frames_for(events, frames)), build_grid(tool.grid), classes)
        return labels, events
    labels = load_grid_tensor(path)
    if not isinstance(labels, LabelTensor):
        raise ConfigInvalid(f"{path} is not a label tensor")
    return labels, None


def cmd_loss(args, tool, header):
    from .container import load_grid_tensor
    from .losses import total_loss

    pred = load_grid_tensor(args.pred)
    # a CSV target only knows its last event frame, so borrow T from the prediction
    target, _ = _load_target(args.target, tool, frames=pred.data.shape[0])
    report = total_loss(target, pred.data, tuple(args.weights))
    _dump(args.out, {"header": header, "loss": report.to_dict()})


def cmd_grad_check(args, tool, header):
    from .gradcheck import run_grad_check
    from .sphere_grid import build_grid

    result = run_grad_check(build_grid(tool.grid), tool.class_map(), args.trials, tool.seed)
    ok = result.worst < args.tolerance
    print(f"max relative error: {result.worst:.3e} (prob {result.max_rel_error_prob:.3e}, "
          f"logits {result.max_rel_error_logits:.3e}) over {result.trials} trials -> "
          f"{'PASS' if ok else 'FAIL'}")
    if args.out:
        _dump(args.out, {"header": header, "grad_check": {**result.to_dict(), "pass": ok}})
    return 0 if ok else 1


def cmd_metrics(args, tool, header):
    from .metrics import MetricConfig, compute_metrics, match_events, segment_breakdown, write_breakdown_csv

    classes = tool.class_map()
    ref = _events_from(args.ref, classes)
    pred = _events_from(args.pred, classes)
    cfg = MetricConfig(tool.threshold, tool.segment_frames, args.greedy)
    report = compute_metrics(ref, pred, cfg, classes)
    _dump(args.out, {"header": header, "metrics": report.to_dict()})
    if args.breakdown:
        write_breakdown_csv(args.breakdown, segment_breakdown(match_events(ref, pred, cfg, classes), cfg))


def _scene_spec(file_cfg, tool):
    from .scene_sim import SceneSpec

    table = dict(file_cfg.get("scene", {}))
    table.setdefault("n_classes", tool.classes - 1)
    try:
        return SceneSpec(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"scene config: {exc}") from None


def cmd_simulate(args, tool, header, file_cfg):
    from .container import save_grid_tensor
    from .label_codec import write_metadata_csv
    from .scene_sim import PRNG_NAME, CorruptionSpec, corrupt, generate_scene
    from .sphere_grid import build_grid

    spec = _scene_spec(file_cfg, tool)
    events = generate_scene(spec, tool.seed)
    write_metadata_csv(args.out, events)
    if args.pred:
        table = dict(file_cfg.get("corruption", {}))
        table.setdefault("seed", tool.seed)
        try:
            cspec = CorruptionSpec(**table)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"corruption config: {exc}") from None
        pred = corrupt(events, cspec, build_grid(tool.grid), tool.class_map(), spec.frames)
        save_grid_tensor(args.pred, pred, {"seed": tool.seed, "prng": PRNG_NAME})
    if args.header:
        _dump(args.header, {"header": header, "scene": spec.to_dict(), "n_events": len(events)})


def cmd_render(args, tool, header):
    from .features import write_wav
    from .scene_sim import render_foa

    events = _events_from(args.meta, tool.class_map())
    duration = args.duration
    if duration is None:
        duration = max(0.1 * (_frames_for(events, None)), 0.1)
    audio = render_foa(events, args.source, duration, seed=tool.seed, snr_db=args.snr)
    write_wav(args.out, audio)


def cmd_features(args, tool, header):
    from .container import write_tensor
    from .features import CHANNEL_NAMES, StftConfig, feature_pipeline, read_wav

    audio = read_wav(args.wav, resample=args.resample)
    cfg = StftConfig(tool.win_s, tool.hop_s, tool.mel_bands)
    feats = feature_pipeline(audio, cfg)
    write_tensor(args.out, feats.data, {
        "kind": "feature", "channels": feats.data.shape[1], "bands": feats.data.shape[2],
        "channel_names": list(CHANNEL_NAMES), "sample_rate": audio.sample_rate,
        "win_s": cfg.win_s, "hop_s": cfg.hop_s,
    })


def _fit_inputs(args, tool, file_cfg):
    from .grid_fit import make_fixture
    from .label_codec import encode_frames
    from .scene_sim import generate_scene
    from .sphere_grid import build_grid

    if args.fixture is not None:
        if tool.class_names:
            raise ConfigInvalid("--fixture uses generic class names")
        return make_fixture(args.fixture, tool.seed, tool.grid, tool.classes - 1)
    if args.meta is None:
        if "scene" not in file_cfg:
            raise ConfigInvalid("one of --meta, --fixture or a [scene] config table is required")
        spec = _scene_spec(file_cfg, tool)
        events = generate_scene(spec, tool.seed)
        labels, _ = encode_frames(events, spec.frames, build_grid(tool.grid), tool.class_map())
        return labels, events
    return _load_target(args.meta, tool, args.frames)


def _fit_config(args, tool, weights):
    from .grid_fit import FitConfig
    from .metrics import MetricConfig

    return FitConfig(
        learning_rate=args.lr, max_steps=args.steps, init=args.init,
        loss_weights=tuple(weights), eval_every=args.eval_every,
        backoff=args.backoff, seed=tool.seed,
        metric=MetricConfig(tool.threshold, tool.segment_frames),
    )


_SNAPSHOT_COLS = ["weights", "step", "total", "class_mse", "aiur", "converging",
                  "n_predicted", "er20", "f20", "le_cd_deg", "lr_cd", "seld_score"]


def _snapshot_rows(trace, weights):
    for s in trace.snapshots:
        m = s.metrics
        yield [" ".join(f"{w:g}" for w in weights), s.step, repr(s.loss.total), repr(s.loss.class_mse),
               repr(s.loss.aiur), repr(s.loss.converging), s.n_predicted,
               *([repr(getattr(m, k)) for k in ("er20", "f20", "le_cd_deg", "lr_cd", "seld_score")]
                 if m else [""] * 5)]


def _write_snapshot_csv(path, traces):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SNAPSHOT_COLS)
        for weights, trace in traces.items():
            writer.writerows(_snapshot_rows(trace, weights))


def cmd_optimize(args, tool, header, file_cfg):
    from .grid_fit import fit_logits

    target, reference = _fit_inputs(args, tool, file_cfg)
    trace = fit_logits(target, _fit_config(args, tool, args.weights), reference)
    _dump(args.out, {"header": header, "trace": trace.to_dict(),
                     "steps_to_f90": _finite_or_none(trace.steps_to_f(0.9))})
    if args.csv:
        _write_snapshot_csv(args.csv, {tuple(args.weights): trace})


def cmd_ablate(args, tool, header, file_cfg):
    from .grid_fit import ablate

    target, reference = _fit_inputs(args, tool, file_cfg)
    traces = ablate(target, _fit_config(args, tool, (1.0, 1.0, 1.0)), reference)
    summary = []
    for weights, trace in traces.items():
        last = trace.last
        summary.append({
            "weights": list(weights),
            "steps_to_f90": _finite_or_none(trace.steps_to_f(0.9)),
            "final_step": last.step,
            "final_loss": last.loss.total,
            "final_metrics": None if last.metrics is None else last.metrics.to_dict(),
        })
    _dump(args.out, {"header": header, "ablation": summary})
    if args.csv:
        _write_snapshot_csv(args.csv, traces)


_HANDLERS = {
    "encode": cmd_encode, "decode": cmd_decode, "loss": cmd_loss, "grad-check": cmd_grad_check,
    "metrics": cmd_metrics, "render": cmd_render, "features": cmd_features,
    "optimize": cmd_optimize, "ablate": cmd_ablate, "simulate": cmd_simulate,
}


def _limit_threads(n):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv: list[str]) -> int:
    args, file_cfg, tool = resolve(argv)
    header = report_header(args, tool, file_cfg)
    _limit_threads(tool.threads or os.cpu_count())
    if args.command in ("simulate", "optimize", "ablate"):
        return _HANDLERS[args.command](args, tool, header, file_cfg) or 0
    return _HANDLERS[args.command](args, tool, header) or 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except SeldGridError as exc:
        sys.stderr.write(json.dumps({"error": exc.code, "message": str(exc)}) + "\n")
        return exc.exit_code
    except ValueError as exc:
        # dataclass validation of flag values
        sys.stderr.write(json.dumps({"error": "ConfigInvalid", "message": str(exc)}) + "\n")
        return 2
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "IoFailure", "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

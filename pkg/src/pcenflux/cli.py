"""Command-line front door: ``detect``, ``calibrate``, ``evaluate``, ``synth``.

Settings come from a preset, then an optional INI file, then flags, each
layer overriding the previous one. Exit codes: 0 success, 1 usage or
configuration error, 2 I/O error, 3 numeric error.
"""

import argparse
import configparser
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

from . import evaluation as ev
from . import frontend as fe
from . import novelty as nv
from . import synthesis as sy
from .errors import NumericError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
CUSTOM = "custom"

_PRESET_DEFAULTS = {
    "avian": dict(
        spectrogram=fe.AVIAN,
        s=0.09,
        scene_length_sec=10.0,
        bin_edges=(30.0, 100.0, 200.0, 300.0, 500.0, math.inf),
        corpus=sy.AVIAN_CORPUS,
    ),
    "marine": dict(
        spectrogram=fe.MARINE,
        s=0.33,
        scene_length_sec=None,
        bin_edges=(1000.0, 3000.0, 6000.0, 12000.0, math.inf),
        corpus=sy.MARINE_CORPUS,
    ),
}

_FRONTEND_KEYS = {
    "window_length": int,
    "hop_length": int,
    "n_bands": int,
    "freq_scale": str,
    "fmin": float,
    "fmax": float,
    "sample_rate": int,
}


class UsageError(Exception):
    pass


@dataclass
class PipelineConfig:
    preset: str
    spectrogram: fe.SpectrogramConfig
    s: float
    detector: str = nv.PCEN_MAX
    scene_length_sec: Optional[float] = None
    counting: str = ev.FRAMES
    bin_edges: Tuple[float, ...] = ()
    corpus: sy.CorpusConfig = field(default_factory=sy.CorpusConfig)
    jobs: int = 1

    @property
    def scene_length(self) -> Optional[int]:
        if self.scene_length_sec is None:
            return None
        return max(int(round(self.scene_length_sec * self.spectrogram.frame_rate)), 1)

    def snapshot(self) -> dict:
        return {
            "preset": self.preset,
            "spectrogram": asdict(self.spectrogram),
            "s": self.s,
            "detector": self.detector,
            "scene_length_sec": self.scene_length_sec,
            "counting": self.counting,
            "bin_edges": list(self.bin_edges),
        }


def _float_list(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _optional_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _corpus_overrides(section, base: sy.CorpusConfig) -> sy.CorpusConfig:
    scalar = {f.name: f.type for f in fields(sy.CorpusConfig)}
    kw, call = {}, {}
    for key, text in section.items():
        if key.startswith("call_"):
            name = key[len("call_") :]
            if name not in {f.name for f in fields(sy.CallTemplate)}:
                raise UsageError(f"[synthesis] unknown key {key!r}")
            call[name] = text if name == "kind" else float(text)
        elif key in ("distances", "am_period_range"):
            kw[key] = _float_list(text)
        elif key in scalar and key not in ("call", "model"):
            kw[key] = int(text) if scalar[key] in (int, "int") else float(text)
        else:
            raise UsageError(f"[synthesis] unknown key {key!r}")
    if call:
        kw["call"] = replace(base.call, **call)
    return replace(base, **kw)


def load_config(path=None, preset=None) -> PipelineConfig:
    """Build a pipeline configuration from a preset and an optional INI file.

    Raises:
        UsageError: on unknown presets, sections or keys, or malformed values.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            with open(path) as f:
                parser.read_file(f)
        except configparser.Error as exc:
            raise UsageError(f"{path}: {exc}") from exc
    known = {"pipeline", "frontend", "pcen", "evaluation", "synthesis"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise UsageError(f"unknown config sections: {', '.join(sorted(unknown))}")

    section = lambda name: parser[name] if parser.has_section(name) else {}
    preset = preset or section("pipeline").get("preset", "avian")
    try:
        if preset == CUSTOM:
            fr = section("frontend")
            missing = [k for k in _FRONTEND_KEYS if k not in fr]
            if missing or "s" not in section("pcen") or "bin_edges" not in section("evaluation"):
                raise UsageError(
                    "the custom preset needs every [frontend] key "
                    f"({', '.join(_FRONTEND_KEYS)}), [pcen] s and [evaluation] bin_edges"
                )
            spec = fe.SpectrogramConfig(**{k: t(fr[k]) for k, t in _FRONTEND_KEYS.items()})
            base = dict(
                spectrogram=spec, s=0.0, scene_length_sec=None, bin_edges=(),
                corpus=replace(sy.AVIAN_CORPUS, sample_rate=spec.sample_rate),
            )
        elif preset in _PRESET_DEFAULTS:
            base = dict(_PRESET_DEFAULTS[preset])
            overrides = dict(section("frontend"))
            bad = set(overrides) - set(_FRONTEND_KEYS)
            if bad:
                raise UsageError(f"[frontend] unknown keys: {', '.join(sorted(bad))}")
            if overrides:
                raise UsageError("frontend settings can only be changed with preset = custom")
        else:
            raise UsageError(f"unknown preset {preset!r}; choose avian, marine or custom")

        cfg = PipelineConfig(preset=preset, **base)
        pipeline = section("pipeline")
        for key in set(pipeline) - {"preset", "detector", "jobs"}:
            raise UsageError(f"[pipeline] unknown key {key!r}")
        cfg.detector = pipeline.get("detector", cfg.detector)
        cfg.jobs = int(pipeline.get("jobs", cfg.jobs))
        pcen_section = section("pcen")
        for key in set(pcen_section) - {"s"}:
            raise UsageError(f"[pcen] unknown key {key!r}")
        if "s" in pcen_section:
            cfg.s = float(pcen_section["s"])
        evaluation = section("evaluation")
        for key in set(evaluation) - {"bin_edges", "counting", "scene_length_sec"}:
            raise UsageError(f"[evaluation] unknown key {key!r}")
        if "bin_edges" in evaluation:
            cfg.bin_edges = _float_list(evaluation["bin_edges"])
        cfg.counting = evaluation.get("counting", cfg.counting)
        if "scene_length_sec" in evaluation:
            cfg.scene_length_sec = _optional_float(evaluation["scene_length_sec"])
        if parser.has_section("synthesis"):
            cfg.corpus = _corpus_overrides(parser["synthesis"], cfg.corpus)
    except ValueError as exc:
        raise UsageError(f"bad configuration value: {exc}") from exc
    return cfg


def _validate(cfg: PipelineConfig):
    if cfg.detector not in nv.DETECTORS:
        raise UsageError(f"unknown detector {cfg.detector!r}; choose from {', '.join(nv.DETECTORS)}")
    if cfg.counting not in ev.COUNTING_MODES:
        raise UsageError(f"unknown counting mode {cfg.counting!r}")
    if not 0 < cfg.s <= 1:
        raise UsageError(f"smoothing coefficient s must lie in (0, 1], got {cfg.s}")
    if cfg.jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {cfg.jobs}")


def _dump_json(path, data):
    with open(path, "w") as f:
        f.write(json.dumps(ev._jsonable(data), indent=2, sort_keys=True) + "\n")


def _expand_paths(paths) -> List[str]:
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(
                os.path.join(p, name) for name in os.listdir(p) if name.lower().endswith(".wav")
            )
        else:
            out.append(p)
    return sorted(out)


def _detect_one(args):
    path, out_path, cfg = args
    try:
        w = fe.read_wav(path)
    except (OSError, ValueError) as exc:
        return EXIT_IO, f"{path}: cannot read audio: {exc}"
    try:
        curve = nv.detect(w, cfg.spectrogram, cfg.detector, s=cfg.s)
    except NumericError as exc:
        return EXIT_NUMERIC, f"{path}: numeric error: {exc}"
    except ValueError as exc:
        return EXIT_IO, f"{path}: {exc}"
    try:
        nv.write_curve_csv(out_path, curve)
    except OSError as exc:
        return EXIT_IO, f"{path}: cannot write {out_path}: {exc}"
    return EXIT_OK, None


def cmd_detect(cfg: PipelineConfig, paths, out_dir) -> int:
    """Write one novelty curve CSV per input WAV, named after the file stem."""
    files = _expand_paths(paths)
    if not files:
        raise UsageError("detect needs at least one WAV file or directory")
    stems = [os.path.splitext(os.path.basename(p))[0] for p in files]
    if len(set(stems)) != len(stems):
        raise UsageError("input files share a name; their curves would overwrite each other")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    jobs = [(p, os.path.join(out_dir, stem + ".csv"), cfg) for p, stem in zip(files, stems)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(j) for j in jobs]
    failures = [(code, msg) for code, msg in results if code != EXIT_OK]
    for _, msg in failures:
        print(msg, file=sys.stderr)
    if failures:
        print(f"{len(failures)} of {len(files)} files failed", file=sys.stderr)
        return failures[0][0]
    return EXIT_OK


def _read_curve(path, cfg):
    return nv.read_curve_csv(path, cfg.spectrogram.frame_rate, cfg.detector)


def cmd_calibrate(cfg: PipelineConfig, manifest, curves_dir, out_dir) -> int:
    """Calibrate per-bin thresholds from the positive clips listed in a manifest."""
    rows = [r for r in sy.read_manifest(manifest) if r["kind"] == "positive"]
    positives = []
    for row in sorted(rows, key=lambda r: r["clip_id"]):
        curve = _read_curve(os.path.join(curves_dir, row["clip_id"] + ".csv"), cfg)
        positives.append(ev.PositiveClip(curve, float(row["distance_m"]), row["clip_id"]))
    calibrations = ev.calibrate_bins(positives, cfg.bin_edges)
    os.makedirs(out_dir, exist_ok=True)
    _dump_json(
        os.path.join(out_dir, "thresholds.json"),
        {
            "detector": cfg.detector,
            "config": cfg.snapshot(),
            "bins": [
                {
                    "bin_lo_m": c.lo,
                    "bin_hi_m": c.hi,
                    "threshold": c.threshold,
                    "recall": c.recall,
                    "n_clips": c.n_clips,
                }
                for c in calibrations
            ],
        },
    )
    return EXIT_OK


def _read_thresholds(path) -> List[ev.BinCalibration]:
    with open(path) as f:
        data = json.load(f)
    try:
        return [
            ev.BinCalibration(
                float(b["bin_lo_m"]), float(b["bin_hi_m"]), float(b["threshold"]),
                float(b["recall"]), int(b["n_clips"]),
            )
            for b in data["bins"]
        ]
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed thresholds file ({exc})") from exc


def cmd_evaluate(cfg: PipelineConfig, thresholds, negatives_dir, out_dir) -> int:
    """Count false alarms of calibrated thresholds on negative curves."""
    calibrations = _read_thresholds(thresholds)
    have = {(c.lo, c.hi) for c in calibrations}
    for lo, hi in zip(cfg.bin_edges, cfg.bin_edges[1:]):
        if (lo, hi) not in have:
            raise UsageError(f"{thresholds}: no threshold for configured bin [{lo}, {hi})")
    names = sorted(n for n in os.listdir(negatives_dir) if n.endswith(".csv"))
    if not names:
        raise UsageError(f"no negative curve CSVs in {negatives_dir}")
    negatives = [_read_curve(os.path.join(negatives_dir, n), cfg) for n in names]
    snapshot = cfg.snapshot()
    snapshot["n_negative_files"] = len(names)
    report = ev.count_against(
        calibrations, negatives, cfg.counting, cfg.scene_length, cfg.detector, snapshot
    )
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(report.to_json())
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as f:
        f.write(report.to_csv())
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig, out_dir) -> int:
    """Render the configured synthetic corpus with audio and a manifest."""
    corpus = cfg.corpus
    if corpus.sample_rate != cfg.spectrogram.sample_rate:
        raise UsageError(
            f"corpus sample rate {corpus.sample_rate} Hz differs from the spectrogram's "
            f"{cfg.spectrogram.sample_rate} Hz"
        )
    sy.write_corpus(sy.build_corpus(corpus), out_dir)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--preset", choices=["avian", "marine", CUSTOM])
    common.add_argument("--detector", choices=nv.DETECTORS)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for detect")

    parser = _Parser(prog="pcenflux", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", parents=[common], help="novelty curves for WAV files")
    p.add_argument("paths", nargs="*", help="WAV files or directories of WAV files")

    p = sub.add_parser("calibrate", parents=[common], help="per-bin thresholds at half recall")
    p.add_argument("--manifest", required=True)
    p.add_argument("--curves", required=True, help="directory of positive curve CSVs")

    p = sub.add_parser("evaluate", parents=[common], help="false alarms and MTBFA")
    p.add_argument("--thresholds", required=True)
    p.add_argument("--negatives", required=True, help="directory of negative curve CSVs")
    p.add_argument("--counting", choices=ev.COUNTING_MODES)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset)
        if args.detector:
            cfg.detector = args.detector
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if getattr(args, "counting", None):
            cfg.counting = args.counting
        if getattr(args, "seed", None) is not None:
            cfg.corpus = replace(cfg.corpus, seed=args.seed)
        _validate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.paths, args.out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args.manifest, args.curves, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.thresholds, args.negatives, args.out)
        return cmd_synth(cfg, args.out)
    except UsageError as exc:
        print(f"pcenflux: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"pcenflux: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"pcenflux: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"pcenflux: {exc}", file=sys.stderr)
        return EXIT_USAGE

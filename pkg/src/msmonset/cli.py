"""Command-line interface: ``msmonset generate|decompose|detect|evaluate|fit-window``.

Options may also come from a flat ``key = value`` config file given with
``--config``; keys are option names with dashes or underscores. Flags on
the command line win over the file.

Exit codes: 0 success, 1 numerical or detection failure, 2 usage or
configuration error (including unreadable input).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .detectors import DetectorParams, EventList, gof_compare, match_events
from .em import EmConfig
from .errors import ConfigurationError, DegenerateDataError, NumericalError, NumericalSupportError, ValidationError
from .msm import increments
from .nvm import GH, GVG, fit_nvm, nvm_cdf
from .pipeline import METHODS, PipelineConfig, decompose, global_weight_track
from .pipeline import detect as run_detector
from .synthetic import default_epochs, generate_myogram

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, argv, values: dict):
    """Turn config entries into defaults for ``parser``'s actions."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, text in values.items():
        if key not in actions or key == "config":
            raise ConfigurationError(f"unknown config key {key!r}")
        act = actions[key]
        conv = act.type or str
        try:
            if isinstance(act, argparse._StoreTrueAction):
                val = text.lower() in ("1", "true", "yes", "on")
            elif act.nargs not in (None, "?"):
                val = [conv(v) for v in text.replace(",", " ").split()]
            else:
                val = conv(text)
        except ValueError:
            raise ConfigurationError(f"config key {key!r}: bad value {text!r}") from None
        defaults[key] = val
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _common(p):
    p.add_argument("--config", help="key = value config file (flags win)")
    p.add_argument("--rate", type=float, default=1000.0, dest="rate", help="sampling rate in Hz")


def _analysis_opts(p):
    p.add_argument("--window", type=int, default=50, help="MSM window (samples)")
    p.add_argument("--k", type=int, default=3, help="mixture components")
    p.add_argument("--grid-window", type=int, default=100)
    p.add_argument("--grid-shift", type=int, default=1)
    p.add_argument("--grid-nodes", type=int, default=50)
    p.add_argument("--calibration-ms", type=float, nargs=2, metavar=("START", "END"),
                   help="rest period used to calibrate bounds")
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-8, help="EM relative tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msmonset", description="Onset detection by moving separation of mixtures.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic myogram and its true onsets")
    _common(g)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--epochs", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rest-ms", type=float, nargs=2, default=[1500.0, 2500.0])
    g.add_argument("--movement-ms", type=float, nargs=2, default=[300.0, 500.0])
    g.add_argument("--rest-sigma", type=float, default=1.0)
    g.add_argument("--sigma-ratio", type=float, default=10.0)
    g.add_argument("--amplitude", type=float, default=10.0)
    g.add_argument("--frequency-hz", type=float, default=80.0)

    d = sub.add_parser("decompose", help="component series and grid weight track")
    _common(d)
    _analysis_opts(d)
    d.add_argument("--input", required=True)
    d.add_argument("--out-dir", required=True)
    d.add_argument("--svg", action="store_true", help="also write a line plot of the dynamic component")

    t = sub.add_parser("detect", help="run one detector end to end")
    _common(t)
    _analysis_opts(t)
    t.add_argument("method", choices=METHODS)
    t.add_argument("--input", required=True)
    t.add_argument("--out", required=True, help="events CSV")
    t.add_argument("--alpha-window", type=int, default=100)
    t.add_argument("--alpha-shift", type=int, default=1)
    t.add_argument("--winvar-width-ms", type=float, default=40.0)
    t.add_argument("--winvar-threshold", type=float)
    for f in DetectorParams.__dataclass_fields__.values():
        kind = type(f.default)
        t.add_argument("--" + f.name.replace("_", "-"), type=kind, default=f.default)

    e = sub.add_parser("evaluate", help="match detected events against the truth")
    _common(e)
    e.add_argument("--detected", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--tolerance-ms", type=float, default=100.0)
    e.add_argument("--out", help="report CSV")

    w = sub.add_parser("fit-window", help="GVG and GH fits on one window")
    _common(w)
    w.add_argument("--input", required=True)
    w.add_argument("--start", type=int, required=True, help="first increment of the window")
    w.add_argument("--window", type=int, default=100)
    w.add_argument("--bins", type=int, default=5)
    w.add_argument("--out", required=True, help="binned fit table CSV")
    return parser


def _pipeline_config(a) -> PipelineConfig:
    em = EmConfig(max_iterations=a.max_iterations, rel_tolerance=a.tolerance)
    kw = dict(
        sampling_rate_hz=a.rate, window=a.window, k=a.k, grid_window=a.grid_window, grid_shift=a.grid_shift,
        grid_nodes=a.grid_nodes, em=em,
        calibration_ms=tuple(a.calibration_ms) if a.calibration_ms else None,
    )
    if hasattr(a, "method"):
        det = DetectorParams(**{f: getattr(a, f) for f in DetectorParams.__dataclass_fields__})
        kw.update(detectors=det, alpha_window=a.alpha_window, alpha_shift=a.alpha_shift,
                  winvar_width_ms=a.winvar_width_ms, winvar_threshold=a.winvar_threshold)
    return PipelineConfig(**kw)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_input(path):
    if not Path(path).is_file():
        raise ConfigurationError(f"input file {path} does not exist")
    return io.read_signal(path)


def cmd_generate(a) -> int:
    if a.epochs < 1:
        raise ConfigurationError("--epochs must be >= 1")
    eps = default_epochs(a.epochs, a.seed, tuple(a.rest_ms), tuple(a.movement_ms), a.rest_sigma, a.sigma_ratio,
                         a.amplitude, a.frequency_hz)
    rec = generate_myogram(eps, a.rate, a.seed)
    out = _out_dir(a.out_dir)
    io.write_signal(out / "signal.csv", rec.samples)
    io.write_truth(out / "truth.csv", rec.true_onsets_ms)
    print(f"wrote {rec.samples.size} samples ({rec.duration_ms:.0f} ms), {rec.true_onsets_ms.size} onsets to {out}")
    return EXIT_OK


def cmd_decompose(a) -> int:
    x = _read_input(a.input)
    cfg = _pipeline_config(a)
    dec = decompose(x, cfg)
    out = _out_dir(a.out_dir)
    io.write_components(out / "components_forward.csv", dec.forward)
    io.write_components(out / "components_backward.csv", dec.backward)
    if np.ptp(dec.forward.dynamic) > 0:
        io.write_weights(out / "weights.csv", global_weight_track(dec.forward, cfg))
    else:
        print("dynamic component is constant; no weight track written")
    if a.svg:
        io.svg_lineplot(out / "dynamic.svg", dec.forward.times + 1,
                        {"forward": dec.forward.dynamic, "backward": dec.backward.dynamic})
    print(f"{len(dec.forward)} windows per direction, {int(dec.forward.degenerate.sum())} degenerate; wrote {out}")
    return EXIT_OK


def cmd_detect(a) -> int:
    x = _read_input(a.input)
    cfg = _pipeline_config(a)
    events = run_detector(a.method, x, cfg)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_events(a.out, events)
    print(f"{a.method}: {len(events)} events -> {a.out}")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    for p in (a.detected, a.truth):
        if not Path(p).is_file():
            raise ConfigurationError(f"file {p} does not exist")
    det = io.read_events(a.detected)
    truth = io.read_truth(a.truth)
    rep = match_events(det, truth, a.tolerance_ms)
    mae = "nan" if not rep.pairs else f"{rep.mean_abs_error_ms:.3f}"
    print(f"matched {rep.n_matched}/{len(truth)}  false positives {rep.false_positives.size}  "
          f"misses {rep.misses.size}  mean abs error {mae} ms")
    if a.out:
        rows = [["matched", d, t] for d, t in rep.pairs]
        rows += [["false_positive", d, ""] for d in rep.false_positives]
        rows += [["miss", "", t] for t in rep.misses]
        io.write_table(a.out, ["kind", "detected_ms", "actual_ms"], rows)
    return EXIT_OK


def cmd_fit_window(a) -> int:
    x = increments(_read_input(a.input))
    if a.window < 30:
        raise ConfigurationError("--window must be >= 30")
    if not 0 <= a.start <= x.size - a.window:
        raise ConfigurationError(f"window [{a.start}, {a.start + a.window}) outside 0..{x.size}")
    seg = x[a.start : a.start + a.window]
    fits = {fam: fit_nvm(seg, fam) for fam in (GVG, GH)}
    p = gof_compare(seg, fits[GVG].params, fits[GH].params, a.bins)
    for (fam, fit), pv in zip(fits.items(), p):
        print(f"{fam}: {fit.params}  loglik {fit.log_likelihood:.6f}  chi-square p {pv:.6f}")
    edges = np.linspace(seg.min(), seg.max(), a.bins + 1)
    observed = np.histogram(seg, edges)[0] / seg.size
    rows = []
    exp = {fam: np.diff(nvm_cdf(f.params, edges)) for fam, f in fits.items()}
    for i in range(a.bins):
        rows.append([edges[i], edges[i + 1], observed[i], exp[GVG][i], exp[GH][i]])
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_table(a.out, ["left", "right", "observed", "gvg", "gh"], rows)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "decompose": cmd_decompose,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "fit-window": cmd_fit_window,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            args = _apply_config(sub, argv[1:], read_config(args.config))
            args.command = argv[0]
        return COMMANDS[args.command](args)
    except (NumericalError, NumericalSupportError, DegenerateDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

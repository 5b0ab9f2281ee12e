"""Command-line experiment runner.

Every command resolves an :class:`ExperimentConfig`, writes a ``manifest`` that echoes
it, runs one pipeline stage, writes CSV/JSON/SVG artifacts atomically and finishes
with ``report.json``.  Exit status: 0 all checks pass, 2 a check failed, 3 config
error, 4 compute error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ExperimentConfig
from .errors import ConfigError, IoError, WittenLabError
from .forms import random_trig_form
from .manifold import count_by_index, euler_characteristic, find_zeros
from .morse import build_morse_complex, check_morse_inequalities, cohomology, hopf_index_sum
from .oscillator import OscillatorModel, oscillator_spectrum
from .spectra import SMALL_THRESHOLD, GAP_RATIO, gap_ratio, gap_sweep, low_spectrum
from .whs import build_cells, int_chain_map_check, whs_compare

log = logging.getLogger("wittenlab")

COMMANDS = ("oscillator", "spectrum", "gap-sweep", "morse-complex", "inequalities", "whs", "all")
EXIT_PASS, EXIT_CHECK, EXIT_CONFIG, EXIT_COMPUTE, EXIT_IO = 0, 2, 3, 4, 5
CHAIN_PROBES = 5


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    expected: object = None


@dataclass
class RunReport:
    command: str
    config_digest: str
    wall_time: float = 0.0
    checks: list[Check] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name, passed, value=None, expected=None):
        self.checks.append(Check(name, bool(passed), value, expected))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


# ---------------------------------------------------------------------------
# artifact writing


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class ArtifactWriter:
    """Atomic writes into the output directory, honoring the requested formats."""

    def __init__(self, cfg: ExperimentConfig, report: RunReport):
        self.dir = Path(cfg.out)
        self.formats = set(cfg.format)
        self.report = report
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create output directory {self.dir}: {exc}") from exc

    def _write(self, name: str, data: bytes) -> Path:
        path = self.dir / name
        try:
            fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.", suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        if name not in self.report.artifacts:
            self.report.artifacts.append(name)
        return path

    def text(self, name: str, text: str) -> Path:
        return self._write(name, text.encode("utf-8"))

    def json(self, name: str, payload, force: bool = False):
        if force or "json" in self.formats:
            self.text(name, json.dumps(payload, indent=2, default=_jsonable) + "\n")

    def csv(self, name: str, header, rows):
        if "csv" not in self.formats:
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.text(name, buf.getvalue())

    def svg(self, name: str, draw):
        if "svg" not in self.formats:
            return
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        with matplotlib.rc_context({"svg.hashsalt": "wittenlab", "svg.fonttype": "path"}):
            fig, ax = plt.subplots(figsize=(6, 4))
            draw(ax)
            fig.tight_layout()
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            plt.close(fig)
        self._write(name, buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def _points(cfg: ExperimentConfig):
    return find_zeros(cfg.one_form(), cfg.scan_resolution)


def _require_exact(cfg: ExperimentConfig, command: str):
    if any(cfg.harmonic):
        raise ConfigError(f"{command} needs an exact form; drop the harmonic part")


def run_oscillator(cfg, out: ArtifactWriter, report: RunReport):
    degrees = list(cfg.q) if cfg.q is not None else [cfg.k]
    try:
        models = [OscillatorModel(cfg.n, cfg.k, q, cfg.t) for q in degrees]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary = {}
    for model in models:
        spec = oscillator_spectrum(model, cfg.count)
        out.csv(f"oscillator_q{model.q}.csv", ["eigenvalue", "multiplicity"], spec.pairs())
        summary[model.q] = {"eigenvalues": list(spec.eigenvalues),
                            "multiplicities": list(spec.multiplicities)}
        expected = 1 if model.q == model.k else 0
        report.check(f"kernel_dimension_q{model.q}", spec.kernel_dimension() == expected,
                     spec.kernel_dimension(), expected)
    out.json("oscillator.json", {"n": cfg.n, "k": cfg.k, "t": cfg.t, "degrees": summary})


def run_spectrum(cfg, out: ArtifactWriter, report: RunReport):
    alpha, grid = cfg.one_form(), cfg.make_grid()
    counts = count_by_index(_points(cfg), grid.n)
    rows, summary = [], {}
    for q in cfg.degrees():
        log.info("spectrum q=%d t=%g grid=%s", q, cfg.t, grid.shape)
        res = low_spectrum(alpha, grid, q, cfg.t, route=cfg.route, seed=cfg.seed, k0=max(cfg.count, 6))
        lam = res.eigenvalues
        for i, (v, r) in enumerate(zip(lam, res.residuals)):
            rows.append((q, i, float(v), float(r)))
        ratio = gap_ratio(lam)
        small = int(np.sum(lam < SMALL_THRESHOLD))
        summary[q] = {"eigenvalues": lam, "small_count": small, "gap_ratio": ratio,
                      "method": res.method, "max_residual": float(res.residuals.max())}
        report.check(f"gap_open_q{q}", ratio < GAP_RATIO, ratio, f"< {GAP_RATIO}")
        report.check(f"small_count_q{q}", small == counts[q], small, counts[q])
    out.csv("spectrum.csv", ["q", "index", "eigenvalue", "residual"], rows)
    out.json("spectrum.json", {"t": cfg.t, "grid": list(grid.shape), "critical_counts": counts,
                               "degrees": summary})


def run_gap_sweep(cfg, out: ArtifactWriter, report: RunReport):
    alpha, grid = cfg.one_form(), cfg.make_grid()
    counts = count_by_index(_points(cfg), grid.n)
    degrees = list(cfg.q) if cfg.q is not None else [0]
    summary = {}
    for q in degrees:
        log.info("gap sweep q=%d over %s", q, cfg.t_grid)
        rep = gap_sweep(alpha, grid, q, cfg.t_grid, route=cfg.route, seed=cfg.seed)
        m = rep.cluster_size
        header = ["t"] + [f"lambda_{i + 1}" for i in range(m)] + ["first_large"]
        rows = [[float(t)] + [float(v) for v in s] + [float(fl)]
                for t, s, fl in zip(rep.t_grid, rep.small, rep.first_large)]
        out.csv(f"gap_sweep_q{q}.csv", header, rows)

        def draw(ax, rep=rep, m=m, q=q):
            for i in range(m):
                vals = np.array([s[i] for s in rep.small])
                keep = vals > 0
                ax.semilogy(rep.t_grid[keep], vals[keep], "o-", label=f"small {i + 1}")
            ax.semilogy(rep.t_grid, rep.first_large, "s--", label="first large")
            ax.set_xlabel("t")
            ax.set_ylabel("eigenvalue")
            ax.set_title(f"Witten Laplacian spectrum, degree {q}")
            ax.legend()

        out.svg(f"gap_sweep_q{q}.svg", draw)
        fits = {"decay_slope": rep.decay_slope, "decay_intercept": rep.decay_intercept,
                "decay_r2": rep.decay_r2, "growth_slope": rep.growth_slope,
                "growth_intercept": rep.growth_intercept, "growth_r2": rep.growth_r2}
        summary[q] = {"cluster_size": m, "first_large": rep.first_large, **fits}
        report.check(f"cluster_size_q{q}", m == counts[q], m, counts[q])
        report.check(f"first_large_increasing_q{q}", bool(np.all(np.diff(rep.first_large) > 0)),
                     rep.first_large)
        if len(rep.decay_points) >= 3:
            report.check(f"decay_fit_q{q}", rep.decay_slope < 0 and rep.decay_r2 > 0.99,
                         {"slope": rep.decay_slope, "r2": rep.decay_r2}, "slope < 0, r2 > 0.99")
    out.json("gap_sweep.json", {"t_grid": list(cfg.t_grid), "degrees": summary})


def _complex(cfg):
    _require_exact(cfg, "the Morse complex")
    alpha = cfg.one_form()
    points = _points(cfg)
    return alpha, points, build_morse_complex(alpha, points, scan_resolution=cfg.scan_resolution)


def run_morse_complex(cfg, out: ArtifactWriter, report: RunReport, ctx=None):
    alpha, points, cx = ctx or _complex(cfg)
    n = cfg.dimension
    betti = cohomology(cx)
    payload = cx.to_dict()
    payload["counts"] = list(cx.counts)
    payload["orbits"] = [{"upper": o.upper, "lower": o.lower, "sign": o.sign}
                         for xi in sorted(cx.orbits) for o in cx.orbits[xi]]
    out.json("morse_complex.json", payload)
    sq = cx.boundary_squared()
    report.check("boundary_squared_zero", all(not np.any(m) for m in sq.values()),
                 {str(q): m.tolist() for q, m in sq.items()})
    expected = [math.comb(n, q) for q in range(n + 1)]
    report.check("betti_match_torus", list(betti) == expected, list(betti), expected)
    return alpha, points, cx


def run_inequalities(cfg, out: ArtifactWriter, report: RunReport, ctx=None):
    alpha, points, cx = ctx or _complex(cfg)
    counts, betti = cx.counts, cohomology(cx)
    ineq = check_morse_inequalities(counts, betti)
    out.csv("inequalities.csv", ["N", "lhs", "rhs", "slack", "holds", "equality"],
            [[r[k] for k in ("N", "lhs", "rhs", "slack", "holds", "equality")] for r in ineq.rows])
    out.json("inequalities.json", {"counts": counts, "betti": betti, "rows": ineq.rows,
                                   "euler_equal": ineq.euler_equal, "strong": ineq.strong,
                                   "total_bound": ineq.total_bound})
    for r in ineq.rows:
        report.check(f"morse_inequality_N{r['N']}", r["holds"], r["slack"], ">= 0")
    report.check("euler_equality", ineq.euler_equal, euler_characteristic(counts),
                 euler_characteristic(betti))
    report.check("strong_inequalities", ineq.strong, list(counts), list(betti))
    report.check("hopf_index_sum", hopf_index_sum(points) == 0, hopf_index_sum(points), 0)
    return alpha, points, cx


def run_whs(cfg, out: ArtifactWriter, report: RunReport, ctx=None):
    alpha, points, cx = ctx or _complex(cfg)
    grid = cfg.make_grid()
    cells = build_cells(alpha, cx)
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for q in range(1, grid.n + 1):
        for _ in range(CHAIN_PROBES):
            worst = max(worst, int_chain_map_check(random_trig_form(grid, q - 1, rng), cx, cells))
    report.check("chain_map", worst <= 1e-6, worst, "<= 1e-6")

    rep = whs_compare(alpha, grid, cx, cfg.t_grid, degrees=cfg.q, eta=cfg.eta,
                      convention=cfg.scaling_convention, cells=cells, seed=cfg.seed)
    gens = [(q, y) for q in sorted(rep.results[0].degrees) for y in cx.generators[q]]
    header = ["t", "deviation", "corrected_deviation"] + [f"mass_q{q}_{cx.points[y].label()}" for q, y in gens]
    rows, masses = [], []
    for r in rep.results:
        m = [float(r.degrees[q].exterior_mass[cx.generators[q].index(y)]) for q, y in gens]
        masses.append(m)
        rows.append([r.t, r.deviation, r.corrected_deviation] + m)
    out.csv("whs.csv", header, rows)
    # away from standard Hessian charts L R tends to diag(chart factors), not Id
    standard = rep.standard_charts
    ts = np.array(rep.t_grid)
    devs = np.array(rep.deviations if standard else rep.corrected_deviations)
    label = "||L R - Id||" if standard else "||C^-1 L R - Id||"

    def draw(ax):
        ax.loglog(ts, devs, "o-", label=label)
        ax.loglog(ts, devs[0] * ts[0] / ts, "k:", label="1/t")
        ax.set_xlabel("t")
        ax.set_ylabel("deviation")
        ax.set_title(f"comparison map deviation ({rep.convention})")
        ax.legend()

    out.svg("whs.svg", draw)
    out.json("whs.json", {
        "convention": rep.convention, "eta": rep.eta, "standard_charts": standard,
        "results": [{"t": r.t, "deviation": r.deviation, "corrected_deviation": r.corrected_deviation,
                     "degrees": {q: {"L": d.L, "deviation": d.deviation,
                                     "exterior_mass": d.exterior_mass, "matched": d.matched,
                                     "chart_limit": d.chart_limit,
                                     "determinant": d.determinant} for q, d in r.degrees.items()}}
                    for r in rep.results]})
    report.check("deviation_decreasing", bool(np.all(np.diff(devs) < 0)), devs,
                 "raw" if standard else "chart-corrected")
    if len(ts) >= 2:
        ratio, expected = devs[0] / devs[-1], ts[-1] / ts[0]
        report.check("deviation_rate", expected / 2 <= ratio <= 2 * expected, float(ratio),
                     [expected / 2, 2 * expected])
    masses = np.array(masses)
    report.check("exterior_mass_decreasing", bool(np.all(np.diff(masses, axis=0) < 0)), masses)
    report.check("localization_matched",
                 all(d.matched for r in rep.results for d in r.degrees.values()))


def run_all(cfg, out, report):
    run_spectrum(cfg, out, report)
    run_gap_sweep(cfg, out, report)
    if any(cfg.harmonic):
        log.info("non-exact form: skipping the Morse complex and the comparison map")
        return
    ctx = run_morse_complex(cfg, out, report)
    run_inequalities(cfg, out, report, ctx)
    run_whs(cfg, out, report, ctx)


RUNNERS = {
    "oscillator": run_oscillator,
    "spectrum": run_spectrum,
    "gap-sweep": run_gap_sweep,
    "morse-complex": run_morse_complex,
    "inequalities": run_inequalities,
    "whs": run_whs,
    "all": run_all,
}


def run(command: str, cfg: ExperimentConfig) -> RunReport:
    """Execute one command; artifacts go to ``cfg.out``."""
    if command not in RUNNERS:
        raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
    report = RunReport(command, cfgmod.config_digest(cfg))
    out = ArtifactWriter(cfg, report)
    out.text("manifest", cfgmod.manifest_text(cfg))
    start = time.perf_counter()
    RUNNERS[command](cfg, out, report)
    report.wall_time = time.perf_counter() - start
    out.json("report.json", report.to_dict(), force=True)
    return report


# ---------------------------------------------------------------------------
# argument parsing

FLAGS = ("manifold", "periods", "field", "harmonic", "grid", "t", "t-grid", "q", "seed",
         "out", "format", "scaling-convention", "route", "eta", "scan-resolution", "count")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wittenlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("overrides", nargs="*", metavar="key=value",
                   help="configuration overrides, applied after --config and flags")
    p.add_argument("--config", help="flat key=value configuration file")
    for flag in FLAGS:
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = cfgmod.read_config_file(args.config) if args.config else {}
    for flag in FLAGS:
        key = flag.replace("-", "_")
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[cfgmod.normalize_key(k)] = v
    return cfgmod.build_config(raw, args.command)


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        report = run(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WittenLabError, ValueError, ArithmeticError) as exc:
        print(f"compute error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for c in report.checks:
        shown = c.value if np.ndim(c.value) == 0 and not isinstance(c.value, dict) else "..."
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {shown}")
    print(f"{args.command}: {'pass' if report.passed else 'FAIL'} in {report.wall_time:.1f}s -> {cfg.out}")
    return EXIT_PASS if report.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())

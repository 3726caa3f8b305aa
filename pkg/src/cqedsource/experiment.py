"""Experiment orchestration, figure reproduction and CSV output."""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, Sweep, build_config
from .errors import ModelValidityWarning, OutputError
from .model import SpectralEnvelope, ideal_fidelity, spectral_envelope
from .motion import (
    DIAGNOSTIC_COLUMNS,
    MotionHamiltonian,
    SingleExcitationState,
    motion_single_cycle,
    propagate,
)
from .noise import (
    MC_DIAGNOSTIC_COLUMNS,
    averaged_fidelity,
    loss_fidelity,
    mc_diagnostics_rows,
    monte_carlo_fidelities,
    sample_mu_batch,
)

WORKERS_ENV = "CQEDSOURCE_WORKERS"
FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6")
FIGURE_N = tuple(range(1, 16))
FIGURE_SWEEP_POINTS = 25
FIGURE_MC_SAMPLES = 2000

FLAG_OK = ""
FLAG_RANGE = "out-of-range"
FLAG_MODEL = "model-validity"


@dataclass
class ResultTable:
    """Header plus rows; rows are kept sorted by (sweep value, n)."""

    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def select(self, name: str, value) -> "ResultTable":
        i = self.columns.index(name)
        return ResultTable(self.columns, [r for r in self.rows if r[i] == value])

    def drop(self, name: str) -> "ResultTable":
        i = self.columns.index(name)
        return ResultTable(self.columns[:i] + self.columns[i + 1:], [r[:i] + r[i + 1:] for r in self.rows])


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value >= 1:
            return value
    return os.cpu_count() or 1


def _fidelity_columns(config: ExperimentConfig) -> tuple:
    cols = ("n", "fidelity")
    if config.mode == "intensity-noise" and config.monte_carlo:
        cols += ("mc_fidelity", "mc_std_error")
    return cols + ("flag",)


def _flag(values, warned: bool) -> str:
    if any(not (0.0 <= v <= 1.0) for v in values if isinstance(v, float) and not math.isnan(v)):
        return FLAG_RANGE
    return FLAG_MODEL if warned else FLAG_OK


def evaluate_point(config: ExperimentConfig) -> list[tuple]:
    """Rows (n, fidelity, ..., flag) for one fully specified configuration."""
    branches, pulse, c = config.branches, config.pulse, config.superposition
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ModelValidityWarning)
        if config.mode == "ideal":
            values = [[ideal_fidelity(n, branches, pulse, c)] for n in config.n_values]
        elif config.mode == "loss":
            values = [[loss_fidelity(n, branches, pulse, c)] for n in config.n_values]
        elif config.mode == "intensity-noise":
            D = config.noise.diffusion(pulse)
            values = [[averaged_fidelity(n, branches, pulse, c, D)] for n in config.n_values]
            if config.monte_carlo:
                mc = monte_carlo_fidelities(config.n_values, branches, pulse, c, D, config.seed,
                                            config.noise.sample_count, config.noise.steps)
                values = [v + list(m) for v, m in zip(values, mc)]
        else:
            result = motion_single_cycle(branches, pulse, config.motion, c, config.grid,
                                         config.engine, config.dt)
            values = [[result.fidelity(n)] for n in config.n_values]
    warned = any(issubclass(w.category, ModelValidityWarning) for w in caught)
    for w in caught:
        if not issubclass(w.category, ModelValidityWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return [(n, *v, _flag(v, warned)) for n, v in zip(config.n_values, values)]


def _evaluate_index(args):
    config, value = args
    point = config.at(config.sweep.variable, value) if config.sweep else config
    return evaluate_point(point)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ResultTable:
    """Evaluate every sweep point; the table is identical for any worker count."""
    columns = _fidelity_columns(config)
    points = list(config.sweep.values) if config.sweep else [None]
    jobs = [(config, v) for v in points]
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_evaluate_index, jobs))
    else:
        results = [_evaluate_index(job) for job in jobs]
    if config.sweep is None:
        return ResultTable(columns, results[0])
    rows = [(value, *row) for value, block in zip(points, results) for row in block]
    rows.sort(key=lambda r: (r[0], r[1]))
    return ResultTable((config.sweep.variable,) + columns, rows)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if value == 0:
            return "0"
        return format(value, ".12g")
    return str(value)


def csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def emit_csv(table: ResultTable, path) -> Path:
    path = Path(path)
    try:
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(table))
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def envelope_table(env: SpectralEnvelope) -> ResultTable:
    return ResultTable(SpectralEnvelope.columns, env.rows())


def envelope_for(config: ExperimentConfig, branch: int = 0) -> SpectralEnvelope:
    return spectral_envelope(config.pulse, config.branches[branch], config.grid)


def diagnostics_table(config: ExperimentConfig, record_every: int = 1000) -> ResultTable | None:
    """Per-run diagnostics: Monte Carlo mu samples or propagation populations."""
    if config.mode == "intensity-noise":
        D = config.noise.diffusion(config.pulse)
        mu = sample_mu_batch(config.pulse, config.branches[0], D, config.seed,
                             config.noise.sample_count, config.noise.steps)
        return ResultTable(MC_DIAGNOSTIC_COLUMNS, mc_diagnostics_rows(mu))
    if config.mode == "motion":
        H = MotionHamiltonian(config.branches[0], config.motion, config.grid)
        state = SingleExcitationState.excited(0, config.grid, H.levels)
        final = propagate(state, H, config.pulse, record_every=record_every)
        rows = [(0.0, state.norm(), 1.0, 0.0, 0.0)] + [tuple(float(x) for x in r) for r in final.diagnostics]
        return ResultTable(DIAGNOSTIC_COLUMNS, rows)
    return None


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def figure_base(mode: str) -> dict:
    """Caption parameters: square pulses, identical branches."""
    params = {
        "branches": [{"g_mhz": 60.0, "delta_mhz": 1500.0, "kc_mhz": 25.0}],
        "pulse": {"shape": "square", "intensity_mhz2": 3600.0, "t_us": 30.0},
        "superposition": {},
        "noise": {},
        "motion": {},
        "grid": {},
        "fixed_n_max": False,
    }
    if mode == "intensity-noise":
        params["noise"] = {"fr": 0.0, "sample_count": FIGURE_MC_SAMPLES, "monte_carlo": True}
    if mode == "motion":
        params["motion"] = {"omega0_mhz": 1.0, "eta_l": 0.07, "eta_r": 0.07, "n_thermal": 0.01}
    return params


def _label(value) -> str:
    return format(float(value), "g")


@dataclass(frozen=True)
class FigureSpec:
    mode: str
    variable: str
    values: tuple
    n_values: tuple
    curve_by: str  # "sweep" or "n"
    prefix: str
    xlabel: str

    def config(self, seed: int) -> ExperimentConfig:
        params = figure_base(self.mode)
        if self.mode == "intensity-noise":
            params["noise"] = dict(params["noise"], monte_carlo=self.curve_by == "sweep")
        sweep = Sweep(self.variable, tuple(float(v) for v in self.values))
        return build_config(params, self.mode, self.n_values, sweep, None, seed)


def figure_spec(fig_id: str) -> FigureSpec:
    grid25 = lambda hi: tuple(float(x) for x in np.linspace(0.0, hi, FIGURE_SWEEP_POINTS))  # noqa: E731
    specs = {
        "fig2": FigureSpec("intensity-noise", "fr", (0.0, 0.1, 0.2), FIGURE_N, "sweep", "fr", "n"),
        "fig3": FigureSpec("intensity-noise", "fr", grid25(0.5), (3, 5, 10), "n", "n", "F_r"),
        "fig4": FigureSpec("loss", "ka_over_kc", (0.0, 0.001, 0.005, 0.01), FIGURE_N, "sweep", "ka", "n"),
        "fig5": FigureSpec("loss", "ka_over_kc", grid25(0.01), (3, 5, 10), "n", "n", "k_a/k_c"),
        "fig6": FigureSpec("motion", "n_thermal", (0.01, 0.1, 0.5, 1.0), FIGURE_N, "sweep", "N", "n"),
    }
    if fig_id not in specs:
        raise KeyError(f"unknown figure {fig_id!r}; choose from {', '.join(FIGURES)}")
    return specs[fig_id]


def figure_tables(fig_id: str, seed: int = 0, workers: int | None = None) -> dict[str, ResultTable]:
    """One table per curve, keyed by file stem (e.g. ``fig2_fr0.1``)."""
    spec = figure_spec(fig_id)
    table = run_experiment(spec.config(seed), workers)
    curves = {}
    if spec.curve_by == "sweep":
        for value in spec.values:
            curves[f"{fig_id}_{spec.prefix}{_label(value)}"] = table.select(spec.variable, value).drop(spec.variable)
    else:
        for n in spec.n_values:
            curves[f"{fig_id}_{spec.prefix}{n}"] = table.select("n", n).drop("n")
    return curves


def plot_script(fig_id: str, stems: list[str]) -> str:
    spec = figure_spec(fig_id)
    xcol = 1
    ycol = 2
    lines = [
        f"# {fig_id}: fidelity curves; run with gnuplot {fig_id}.gp",
        "set datafile separator ','",
        "set terminal pngcairo size 800,600",
        f"set output '{fig_id}.png'",
        f"set xlabel '{spec.xlabel}'",
        "set ylabel 'fidelity'",
        "set key top right",
        "plot \\",
    ]
    entries = [f"  '{stem}.csv' every ::1 using {xcol}:{ycol} with linespoints title '{stem.split('_', 1)[1]}'"
               for stem in stems]
    lines.append(", \\\n".join(entries))
    return "\n".join(lines) + "\n"


def figure_command(fig_id: str, out_dir, seed: int = 0, workers: int | None = None) -> dict[str, ResultTable]:
    """Write one CSV per curve plus a gnuplot script into ``out_dir``."""
    curves = figure_tables(fig_id, seed, workers)
    out = Path(out_dir)
    for stem, table in curves.items():
        emit_csv(table, out / f"{stem}.csv")
    script = out / f"{fig_id}.gp"
    try:
        script.write_text(plot_script(fig_id, list(curves)), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OutputError(f"cannot write {script}: {exc.strerror or exc}") from exc
    return curves

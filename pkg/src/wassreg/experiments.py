"""Size, power and band-coverage experiments on the simulation design.

Every replicate draws its randomness from
``SeedSequence(seed, spawn_key=(cell, rep, stream))``, so results depend on
the master seed only, never on the number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bands import DEFAULT_BAND_R, DEFAULT_DELTA, density_band, sandwich_kernel, winf_band
from .fit import fit_model
from .inference import DEFAULT_B, DEFAULT_R, test_global, test_partial
from .simulate import SimConfig, generate_dataset

SIGNALS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
BAND_XS = tuple(np.round(np.arange(-0.30, 0.301, 0.06), 2))


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class PowerSetting:
    """One point on a power curve."""

    test: str
    transport: str
    n: int
    signal: float
    indirect: bool = False

    def config(self) -> SimConfig:
        s = float(self.signal)
        if self.test == "global":
            a, b = (s, s), (s, s)
        elif self.test == "partial":
            a, b = (2.0, s), (1.0, s)
        else:
            raise ValueError(f"unknown test {self.test!r}")
        return SimConfig(n=self.n, p=2, alpha=a, beta=b, transport=self.transport,
                         indirect=self.indirect)


@dataclass(frozen=True)
class CoverageCell:
    transport: str
    n: int
    indirect: bool = False

    def config(self) -> SimConfig:
        return SimConfig(n=self.n, p=1, alpha=(2.0,), beta=(1.0,), transport=self.transport,
                         indirect=self.indirect)


def power_grid(tests=("global", "partial"), transports=("linear", "nonlinear"),
               ns=(100, 200, 500), signals=SIGNALS, indirect=False) -> list[PowerSetting]:
    return [PowerSetting(t, k, n, s, indirect) for t in tests for k in transports
            for n in ns for s in signals]


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (8 * workers))))


def _power_task(task) -> tuple:
    setting, cell, rep, seed, engines, alpha, R, B = task
    sim = generate_dataset(setting.config(), replicate_rng(seed, cell, rep, 0))
    out = []
    for e, engine in enumerate(engines):
        rng = replicate_rng(seed, cell, rep, 1 + e)
        if setting.test == "global":
            rep_ = test_global(sim.data, alpha, engine, R=R, B=B, seed=rng)
        else:
            rep_ = test_partial(sim.data, [1], alpha, engine, R=R, B=B, seed=rng)
        out.append((rep_.reject, rep_.p_value))
    return tuple(out)


def run_power_experiment(settings: Sequence[PowerSetting], reps: int = 500,
                         engines: Sequence[str] = ("mixture",), seed: int = 0,
                         alpha: float = 0.05, R: int = DEFAULT_R, B: int = DEFAULT_B,
                         workers: int = 1, return_pvalues: bool = False):
    """Empirical rejection rates per setting and engine.

    Returns a list of row dicts with keys ``test, transport, n, engine,
    signal, power`` (and, if requested, the per-replicate p-values).
    """
    engines = tuple(engines)
    tasks = [(s, c, r, seed, engines, alpha, R, B) for c, s in enumerate(settings)
             for r in range(reps)]
    results = _map(_power_task, tasks, workers)
    rows = []
    for c, s in enumerate(settings):
        block = results[c * reps:(c + 1) * reps]
        for e, engine in enumerate(engines):
            rej = np.array([b[e][0] for b in block], dtype=bool)
            row = dict(test=s.test, transport=s.transport, n=s.n, engine=engine,
                       signal=float(s.signal), power=float(rej.mean()))
            if return_pvalues:
                row["p_values"] = np.array([b[e][1] for b in block])
            rows.append(row)
    return rows


def _coverage_task(task) -> tuple:
    cell, c, rep, seed, xs, kinds, alpha, delta, R = task
    config = cell.config()
    sim = generate_dataset(config, replicate_rng(seed, c, rep, 0))
    fit = fit_model(sim.data)
    K = sandwich_kernel(sim.data, fit)
    misses = []
    for k, kind in enumerate(kinds):
        for j, x in enumerate(xs):
            rng = replicate_rng(seed, c, rep, 1 + k * len(xs) + j)
            if kind == "winf":
                band = winf_band(sim.data, fit, [x], alpha, R, rng, delta=delta, sandwich=K)
                truth = config.true_quantile([x])
            else:
                band = density_band(sim.data, fit, [x], alpha, delta, R, rng, sandwich=K)
                truth = config.true_density([x], band.abscissae)
            misses.append(not band.contains(truth))
    return tuple(misses)


def run_coverage_experiment(cells: Sequence[CoverageCell], xs: Iterable[float] = BAND_XS,
                            kinds: Sequence[str] = ("winf", "density"), reps: int = 500,
                            seed: int = 0, alpha: float = 0.05, delta: float = DEFAULT_DELTA,
                            R: int = DEFAULT_BAND_R, workers: int = 1):
    """Band non-coverage rates; rows carry ``band, x, n, transport, noncoverage``."""
    xs = tuple(float(x) for x in xs)
    kinds = tuple(kinds)
    tasks = [(cell, c, r, seed, xs, kinds, alpha, delta, R) for c, cell in enumerate(cells)
             for r in range(reps)]
    results = np.array(_map(_coverage_task, tasks, workers), dtype=bool)
    rows = []
    for c, cell in enumerate(cells):
        miss = results[c * reps:(c + 1) * reps].mean(axis=0)
        for k, kind in enumerate(kinds):
            for j, x in enumerate(xs):
                rows.append(dict(band=kind, x=x, n=cell.n, transport=cell.transport,
                                 noncoverage=float(miss[k * len(xs) + j])))
    return rows

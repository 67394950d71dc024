"""Framework comparison sweeps over (epsilon, delta, seed)."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .ensemble import Dataset, FrameworkKind, load_csv, run_framework, synth_blobs, train_test_split
from .mechanisms import BINOMIAL, PrivacyParams

CSV_COLUMNS = ("framework", "mechanism", "epsilon", "delta", "gamma", "n_teachers", "seed", "accuracy")

EPSILON_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
DELTA_GRID = (1e-5, 1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class ExperimentSpec:
    epsilons: tuple[float, ...] = EPSILON_GRID
    deltas: tuple[float, ...] = (1e-3,)
    mechanisms: tuple[str, ...] = (BINOMIAL,)
    gamma: float = 1.0
    n_teachers: int = 20
    class_count: int = 3
    seeds: tuple[int, ...] = tuple(range(20))
    dataset: str = "synthetic"
    label_column: str | int = -1
    n_samples: int = 660
    dim: int = 2
    separation: float = 10.0
    test_fraction: float = 1 / 11
    frameworks: tuple[FrameworkKind, ...] = tuple(FrameworkKind)
    key_bits: int = 512
    backend: str = "encrypted"
    output: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.epsilons or not self.deltas or not self.seeds or not self.mechanisms:
            raise ValueError("epsilon, delta, mechanism and seed grids must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        object.__setattr__(self, "frameworks", tuple(FrameworkKind(f) for f in self.frameworks))


def load_split(spec: ExperimentSpec, seed: int, base: Optional[Dataset] = None) -> tuple[Dataset, Dataset]:
    """Train/test split for one seed; synthetic data is regenerated per seed."""
    if spec.dataset == "synthetic":
        data = synth_blobs(spec.n_samples, spec.class_count, spec.dim, spec.separation, seed)
    else:
        data = base if base is not None else load_csv(spec.dataset, spec.label_column)
    return train_test_split(data, spec.test_fraction, np.random.default_rng([seed, 7]))


def _seed_rows(spec: ExperimentSpec, seed: int, base: Optional[Dataset] = None) -> list[dict]:
    train, test = load_split(spec, seed, base)
    # the noise-free frameworks do not depend on the grid point
    fixed: dict[FrameworkKind, float] = {}
    rows = []
    for mechanism in spec.mechanisms:
        for delta in spec.deltas:
            for eps in spec.epsilons:
                params = PrivacyParams(eps, delta, spec.gamma)
                for kind in spec.frameworks:
                    if kind in (FrameworkKind.CENTRALIZED, FrameworkKind.DISTRIBUTED_NON_PRIVATE):
                        if kind not in fixed:
                            fixed[kind] = run_framework(kind, train, test, params, spec.n_teachers, seed)
                        acc = fixed[kind]
                    else:
                        acc = run_framework(
                            kind, train, test, params, spec.n_teachers, seed,
                            mechanism=mechanism, key_bits=spec.key_bits, backend=spec.backend,
                        )
                    rows.append(
                        {
                            "framework": kind.value,
                            "mechanism": mechanism,
                            "epsilon": eps,
                            "delta": delta,
                            "gamma": spec.gamma,
                            "n_teachers": spec.n_teachers,
                            "seed": seed,
                            "accuracy": acc,
                        }
                    )
    return rows


def _seed_job(args):
    spec, seed = args
    return _seed_rows(spec, seed)


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    """All frameworks over the grid.

    Seeds are independent and may fan out to ``workers`` processes; rows
    come back ordered by seed regardless, so the output does not depend on
    the worker count.
    """
    if workers > 1 and len(spec.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_seed_job, [(spec, s) for s in spec.seeds]))
    else:
        base = load_csv(spec.dataset, spec.label_column) if spec.dataset != "synthetic" else None
        chunks = [_seed_rows(spec, s, base) for s in spec.seeds]
    return [row for chunk in chunks for row in chunk]


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def mean_accuracy(rows: Sequence[dict], **match) -> float:
    """Mean accuracy over rows whose fields equal ``match``."""
    vals = [r["accuracy"] for r in rows if all(r[k] == v for k, v in match.items())]
    if not vals:
        raise KeyError(f"no rows match {match}")
    return float(np.mean(vals))

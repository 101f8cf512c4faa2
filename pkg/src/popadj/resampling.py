"""Random substreams and the non-parametric bootstrap.

Every random quantity is drawn from a generator that is a pure function of a
master seed and a key (for example ``("boot", r, attempt)``), so results do
not depend on how work is split across threads.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import IpdTable
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


def substream(seed: int | None, *key) -> np.random.Generator:
    """Generator for ``key`` derived from ``seed``.

    ``seed=None`` draws fresh OS entropy (non-reproducible).
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_int(k) for k in key))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class BootstrapPlan:
    """Bootstrap settings: replicate count, master seed, worker threads."""

    n_boot: int = 1000
    seed: int | None = None
    n_jobs: int = 1
    max_redraws: int = 5
    max_fail_fraction: float = 0.01


def bootstrap_replicates(stat: Callable[[IpdTable], np.ndarray], ipd: IpdTable,
                         plan: BootstrapPlan) -> np.ndarray:
    """Evaluate ``stat`` on ``plan.n_boot`` row-resamples of ``ipd``.

    A replicate whose statistic raises :class:`NumericalError` is redrawn up to
    ``max_redraws`` times; if more than ``max_fail_fraction`` of replicates
    still fail, :class:`NumericalError` is raised. Failed replicates are
    dropped. Rows of the result follow replicate index order.
    """
    if plan.n_boot < 2:
        raise ValidationError("n_boot must be at least 2")
    seed = plan.seed
    if seed is None:
        seed = int(np.random.SeedSequence().generate_state(1)[0])

    def one(r):
        for attempt in range(plan.max_redraws + 1):
            rng = substream(seed, "boot", r, attempt)
            idx = rng.integers(0, ipd.n, size=ipd.n)
            try:
                return np.atleast_1d(np.asarray(stat(ipd.take(idx)), dtype=float))
            except (NumericalError, ValueError) as exc:
                # a resample can lose an arm entirely, which surfaces as ValidationError
                log.debug("bootstrap replicate %d attempt %d failed: %s", r, attempt, exc)
        return None

    if plan.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=plan.n_jobs) as pool:
            results = list(pool.map(one, range(plan.n_boot)))
    else:
        results = [one(r) for r in range(plan.n_boot)]
    ok = [r for r in results if r is not None]
    n_failed = plan.n_boot - len(ok)
    if n_failed > plan.max_fail_fraction * plan.n_boot:
        raise NumericalError(f"{n_failed} of {plan.n_boot} bootstrap replicates failed")
    if len(ok) < 2:
        raise NumericalError("fewer than two successful bootstrap replicates")
    return np.vstack(ok)


def bootstrap_variance(stat: Callable[[IpdTable], float], ipd: IpdTable, plan: BootstrapPlan):
    """Sample variance (ddof=1) of bootstrap replicates; scalar for scalar statistics."""
    reps = bootstrap_replicates(stat, ipd, plan)
    var = reps.var(axis=0, ddof=1)
    return float(var[0]) if var.size == 1 else var

"""Streaming Galton-Watson simulation with conditioning and deterministic ensembles.

Offspring draws of the retained generations are streamed one at a time
through compiled accumulators and never stored.  Generations outside the
window only need their total, which is drawn from the convolution power
of the offspring law in a single step.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .offspring import OffspringSpec, moments, offspring_vector, survival_prob, survival_table
from .sampling import derive_key, sampler_table

ACCUMULATORS = ("donsker", "darling-erdos", "extremal")
CONDITIONS = ("none", "last-parent-positive", "survival-proxy")
CONDITIONING_METHODS = ("rejection", "h-transform")
VERDICTS = {K.STATUS_OK: "ok", K.STATUS_OVERFLOW: "overflow", K.STATUS_BUDGET: "rejection-budget"}

CHUNK = 1024  # replicates per compiled batch; fixed so results never depend on workers


class PopulationOverflow(RuntimeError):
    """A generation exceeded the population cap."""


class RejectionBudgetExceeded(RuntimeError):
    """Conditioning by rejection ran out of attempts."""

    def __init__(self, msg: str, acceptance_estimate: float):
        super().__init__(msg)
        self.acceptance_estimate = acceptance_estimate


def resolve_window(rule, n: int) -> int:
    """Number of retained generations for horizon ``n``.

    ``rule`` is an integer, ``"sqrt"`` (``floor(sqrt n)``) or ``"pow:g"``
    (``floor(n**g)`` with ``0 < g < 1``).
    """
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        r = int(rule)
    elif rule == "sqrt":
        r = math.isqrt(n)
    elif isinstance(rule, str) and rule.startswith("pow:"):
        g = float(rule[4:])
        if not 0 < g < 1:
            raise ValueError("window exponent must lie in (0, 1)")
        r = int(math.floor(n**g + 1e-12))
    else:
        raise ValueError(f"unrecognized window rule {rule!r}")
    if not 1 <= r <= n:
        raise ValueError(f"window size {r} outside 1..{n}")
    return r


@dataclass(frozen=True)
class SimConfig:
    spec: OffspringSpec
    horizon: int
    window: int | str = "sqrt"
    population_cap: int = 2_000_000_000
    condition: str = "none"
    proxy_generations: int = 10
    conditioning: str = "rejection"
    accumulators: tuple[str, ...] = ()
    grid_size: int = 256
    keep_grids: bool = False
    max_attempts: int = 1_000_000
    htransform_cap: int = 256

    def __post_init__(self):
        object.__setattr__(self, "accumulators", tuple(self.accumulators))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        resolve_window(self.window, self.horizon)
        if self.population_cap < 1 or self.grid_size < 1:
            raise ValueError("population cap and grid size must be positive")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.conditioning not in CONDITIONING_METHODS:
            raise ValueError(f"unknown conditioning method {self.conditioning!r}")
        bad = set(self.accumulators) - set(ACCUMULATORS)
        if bad:
            raise ValueError(f"unknown accumulators {sorted(bad)}")
        if self.proxy_generations < 0 or self.max_attempts < 1:
            raise ValueError("proxy generations must be >= 0 and max_attempts >= 1")
        if self.conditioning == "h-transform":
            if self.condition != "last-parent-positive":
                raise ValueError("h-transform conditioning supports last-parent-positive only")
            if self.accumulators and self.r != 1:
                raise ValueError("h-transform conditioning streams generation n only (window 1)")

    @property
    def r(self) -> int:
        return resolve_window(self.window, self.horizon)

    @property
    def window_start(self) -> int:
        return self.horizon - self.r + 1

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "horizon": self.horizon,
            "window": self.window,
            "population_cap": self.population_cap,
            "condition": self.condition,
            "proxy_generations": self.proxy_generations,
            "conditioning": self.conditioning,
            "accumulators": list(self.accumulators),
            "grid_size": self.grid_size,
            "keep_grids": self.keep_grids,
            "max_attempts": self.max_attempts,
            "htransform_cap": self.htransform_cap,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        data["spec"] = OffspringSpec.from_dict(data["spec"])
        data["accumulators"] = tuple(data.get("accumulators", ()))
        return cls(**data)


@dataclass
class RunRecord:
    """One replicate: trajectory, window accumulators and Kesten-Stigum ``W_n``.

    ``window[w]`` holds ``[Z_g, max S_j, min S_j, max S_j/sqrt(j), max xi]``
    for generation ``g = n - r + 1 + w`` (``S_j`` centered at ``m``).
    """

    seed: int
    trajectory: np.ndarray
    window: np.ndarray
    m: float
    verdict: str = "ok"
    rejections: int = 0
    donsker_grid: np.ndarray | None = None
    extremal_grid: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return len(self.trajectory) - 1

    @property
    def r(self) -> int:
        return self.window.shape[0]

    @property
    def extinct(self) -> bool:
        return bool(self.trajectory[-1] == 0)

    @property
    def w_n(self) -> float:
        return float(self.trajectory[-1]) / self.m ** self.horizon

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trajectory": [int(z) for z in self.trajectory],
            "window": self.window.tolist(),
            "W_n": self.w_n,
            "extinct": self.extinct,
            "rejections": self.rejections,
            "verdict": self.verdict,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def trajectory_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "Z"])
            for g, z in enumerate(self.trajectory):
                w.writerow([g, int(z)])


@dataclass
class EnsembleResult:
    """Replicates in replicate-index order; merging sorts by index."""

    config: SimConfig
    base_seed: int
    indices: np.ndarray
    trajectories: np.ndarray
    status: np.ndarray
    attempts: np.ndarray
    window: np.ndarray
    donsker_grids: np.ndarray | None = None
    extremal_grids: np.ndarray | None = None
    m: float = field(init=False)

    def __post_init__(self):
        self.m = moments(self.config.spec).m

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def ok(self) -> np.ndarray:
        return self.status == K.STATUS_OK

    @property
    def accepted(self) -> int:
        return int(self.ok.sum())

    @property
    def acceptance_rate(self) -> float:
        """Accepted replicates per attempt, for rejection conditioning."""
        tried = int(self.attempts.sum())
        return self.accepted / tried if tried else float("nan")

    @property
    def w_n(self) -> np.ndarray:
        n = self.config.horizon
        return self.trajectories[:, n] / self.m**n

    def record(self, i: int) -> RunRecord:
        dg = None if self.donsker_grids is None else self.donsker_grids[i]
        eg = None if self.extremal_grids is None else self.extremal_grids[i]
        return RunRecord(
            seed=replicate_seed(self.base_seed, int(self.indices[i])),
            trajectory=self.trajectories[i].copy(),
            window=self.window[i].copy(),
            m=self.m,
            verdict=VERDICTS[int(self.status[i])],
            rejections=int(self.attempts[i]) - (1 if self.status[i] == K.STATUS_OK else 0),
            donsker_grid=dg,
            extremal_grid=eg,
        )

    def subset(self, mask) -> "EnsembleResult":
        def pick(a):
            return None if a is None else a[mask]

        return EnsembleResult(self.config, self.base_seed, self.indices[mask],
                              self.trajectories[mask], self.status[mask], self.attempts[mask],
                              self.window[mask], pick(self.donsker_grids), pick(self.extremal_grids))

    @staticmethod
    def merge(parts) -> "EnsembleResult":
        """Combine partial results; the outcome does not depend on the order of ``parts``."""
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to merge")
        first = parts[0]
        for p in parts[1:]:
            if p.config != first.config or p.base_seed != first.base_seed:
                raise ValueError("can only merge results of the same config and base seed")
        idx = np.concatenate([p.indices for p in parts])
        order = np.argsort(idx, kind="stable")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("overlapping replicate indices")

        def cat(name):
            arrs = [getattr(p, name) for p in parts]
            if any(a is None for a in arrs):
                return None
            return np.concatenate(arrs)[order]

        return EnsembleResult(first.config, first.base_seed, idx[order], cat("trajectories"),
                              cat("status"), cat("attempts"), cat("window"),
                              cat("donsker_grids"), cat("extremal_grids"))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "base_seed": self.base_seed,
            "replicates": self.size,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "indices": self.indices.tolist(),
            "trajectories": self.trajectories.tolist(),
            "status": [VERDICTS[int(s)] for s in self.status],
            "attempts": self.attempts.tolist(),
            "window": self.window.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# kernel plumbing


def replicate_seed(base_seed: int, index: int) -> int:
    """Stream key of replicate ``index``; independent of how work is split."""
    return derive_key(base_seed, index)


def htransform_tables(spec: OffspringSpec, n: int, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """Transition rows ``P(S_i = k)`` and survival weights ``1 - (1 - s_t)^k``.

    ``hsurv[t, k] = P(Z_t > 0 | Z_0 = k)`` so ``Z_g`` given ``Z_{g-1} = i``
    and survival to generation ``n - 1`` has weights
    ``trans[i, k] * hsurv[n-1-g, k]``.
    """
    f, _ = offspring_vector(spec, cap + 1)
    trans = np.zeros((cap + 1, cap + 1))
    trans[0, 0] = 1.0
    row = trans[0].copy()
    for i in range(1, cap + 1):
        row = np.convolve(row, f)[: cap + 1]
        trans[i] = row
    s = survival_table(spec, n + 1)
    ks = np.arange(cap + 1)
    hsurv = np.empty((n + 2, cap + 1))
    for t in range(n + 2):
        hsurv[t] = -np.expm1(ks * np.log1p(-s[t])) if s[t] < 1 else (ks > 0).astype(float)
    return trans, hsurv


def _kernel_inputs(config: SimConfig):
    spec = config.spec
    mom = moments(spec)
    tab = sampler_table(spec)
    cond = {"none": K.COND_NONE, "last-parent-positive": K.COND_LAST_PARENT,
            "survival-proxy": K.COND_PROXY}[config.condition]
    proxy_log_ext = 0.0
    trans = np.zeros((1, 1))
    hsurv = np.zeros((1, 1))
    if config.condition == "survival-proxy":
        s_k = survival_prob(spec, config.proxy_generations)
        proxy_log_ext = math.log1p(-s_k) if s_k < 1 else -math.inf
    if config.conditioning == "h-transform":
        cond = K.COND_HTRANSFORM
        trans, hsurv = htransform_tables(spec, config.horizon, config.htransform_cap)
    return mom.m, tab, cond, proxy_log_ext, trans, hsurv


def _run_chunk(config: SimConfig, seeds: np.ndarray):
    m, tab, cond, proxy_log_ext, trans, hsurv = _kernel_inputs(config)
    n = config.horizon
    r = config.r
    N = len(seeds)
    acc = set(config.accumulators)
    T = config.grid_size
    grids = config.keep_grids and bool(acc)
    traj = np.zeros((N, n + 1), dtype=np.int64)
    status = np.zeros(N, dtype=np.int64)
    attempts = np.zeros(N, dtype=np.int64)
    wres = np.zeros((N, r, 5))
    gshape = (N, r, T + 1) if grids else (1, 1, T + 1)
    dgrids = np.zeros(gshape)
    egrids = np.zeros(gshape)
    K.gw_batch(seeds, n, config.window_start, "donsker" in acc, "darling-erdos" in acc,
               "extremal" in acc, T, grids, config.population_cap, cond, config.max_attempts,
               proxy_log_ext, trans, hsurv, m, tab.family, tab.fparams, *tab.kernel_args(),
               traj, status, attempts, wres, dgrids, egrids)
    keep_d = dgrids if grids and "donsker" in acc else None
    keep_e = egrids if grids and "extremal" in acc else None
    return traj, status, attempts, wres, keep_d, keep_e


def _chunk_job(args):
    config, base_seed, lo, hi = args
    seeds = np.array([replicate_seed(base_seed, i) for i in range(lo, hi)], dtype=np.uint64)
    return lo, hi, _run_chunk(config, seeds)


def _as_result(config, base_seed, lo, hi, out) -> EnsembleResult:
    traj, status, attempts, wres, dg, eg = out
    return EnsembleResult(config, base_seed, np.arange(lo, hi, dtype=np.int64), traj, status,
                          attempts, wres, dg, eg)


# ---------------------------------------------------------------------------
# public entry points


def _single(config: SimConfig, seed: int) -> RunRecord:
    out = _run_chunk(config, np.array([seed & ((1 << 64) - 1)], dtype=np.uint64))
    res = EnsembleResult(config, seed, np.zeros(1, dtype=np.int64), *out)
    rec = res.record(0)
    rec.seed = seed
    return rec


def simulate_run(config: SimConfig, seed: int) -> RunRecord:
    """One unconditioned replicate; overflow raises ``PopulationOverflow``."""
    rec = _single(replace(config, condition="none", conditioning="rejection"), seed)
    if rec.verdict == "overflow":
        raise PopulationOverflow(
            f"population cap {config.population_cap} exceeded (seed {seed})")
    return rec


def simulate_conditioned(config: SimConfig, seed: int) -> RunRecord:
    """One replicate conditioned per ``config.condition``.

    Rejection draws fresh attempt streams from ``seed`` until the condition
    holds.  The survival proxy ``Z_{n+K} > 0`` is decided exactly from
    ``Z_n`` using ``P(Z_{n+K} = 0 | Z_n) = f_K(0)^{Z_n}``.
    """
    if config.condition == "none":
        raise ValueError("simulate_conditioned needs a condition")
    target = conditioning_probability(config)
    if target is not None and target <= 0:
        raise ValueError("the conditioning event has probability zero")
    rec = _single(config, seed)
    if rec.verdict == "rejection-budget":
        raise RejectionBudgetExceeded(
            f"no acceptance in {config.max_attempts} attempts",
            acceptance_estimate=1.0 / (config.max_attempts + 1),
        )
    if rec.verdict == "overflow":
        raise PopulationOverflow(f"population cap {config.population_cap} exceeded (seed {seed})")
    return rec


def conditioning_probability(config: SimConfig) -> float | None:
    """Exact probability of the conditioning event where a PGF oracle gives it."""
    if config.condition == "last-parent-positive":
        return survival_prob(config.spec, config.horizon - 1)
    if config.condition == "survival-proxy":
        return survival_prob(config.spec, config.horizon + config.proxy_generations)
    return None


def run_ensemble(config: SimConfig, base_seed: int, N: int, workers: int = 1) -> EnsembleResult:
    """``N`` replicates with replicate ``i`` keyed by ``(base_seed, i)``.

    Work is cut into fixed chunks independent of ``workers`` and merged by
    index, so the result is bit-identical for any worker count.  Failed
    replicates (overflow, rejection budget) are kept with their status.
    """
    if N < 1:
        raise ValueError("need at least one replicate")
    jobs = [(config, base_seed, lo, min(lo + CHUNK, N)) for lo in range(0, N, CHUNK)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_as_result(config, base_seed, *_chunk_job(j)) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = [_as_result(config, base_seed, *o) for o in ex.map(_chunk_job, jobs)]
    return EnsembleResult.merge(parts)


def _iid_job(args):
    spec, k, base_seed, lo, hi, acc, grid_size, keep_grids = args
    m = moments(spec).m
    tab = sampler_table(spec)
    n = hi - lo
    res = np.zeros((n, 5))
    gshape = (n, grid_size + 1) if keep_grids else (1, grid_size + 1)
    dg = np.zeros(gshape)
    eg = np.zeros(gshape)
    seeds = np.array([replicate_seed(base_seed, i) for i in range(lo, hi)], dtype=np.uint64)
    K.iid_batch(seeds, k, m, "donsker" in acc, "darling-erdos" in acc, "extremal" in acc,
                grid_size, keep_grids, *tab.kernel_args(), res, dg, eg)
    return res, dg, eg


def iid_streams(spec: OffspringSpec, k: int, base_seed: int, N: int, accumulators=ACCUMULATORS,
                grid_size: int = 256, keep_grids: bool = False, workers: int = 1):
    """``N`` independent i.i.d. offspring streams of length ``k`` through the accumulators.

    Returns ``(res, donsker_grids, extremal_grids)`` with ``res`` rows as in
    ``RunRecord.window``; stream ``i`` is keyed by ``(base_seed, i)``.
    """
    if k < 1 or N < 1:
        raise ValueError("need k >= 1 and N >= 1")
    acc = frozenset(accumulators)
    jobs = [(spec, k, base_seed, lo, min(lo + CHUNK, N), acc, grid_size, keep_grids)
            for lo in range(0, N, CHUNK)]
    if workers <= 1 or len(jobs) == 1:
        outs = [_iid_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_iid_job, jobs))
    res = np.concatenate([o[0] for o in outs])
    if not keep_grids:
        return res, None, None
    return res, np.concatenate([o[1] for o in outs]), np.concatenate([o[2] for o in outs])


def iid_draws(spec: OffspringSpec, base_seed: int, index: int, k: int) -> np.ndarray:
    """Replay the draws of one i.i.d. stream used by ``iid_streams``."""
    from .sampling import CounterStream, sample_offspring_many

    return sample_offspring_many(spec, CounterStream(replicate_seed(base_seed, index)), k)


def generation_draws(config: SimConfig, seed: int, attempt: int, g: int, parents: int) -> np.ndarray:
    """Replay the streamed offspring draws of generation ``g`` of a replicate."""
    from .sampling import CounterStream, sample_offspring_many

    key = derive_key(seed, attempt, g)
    return sample_offspring_many(config.spec, CounterStream(key), parents)

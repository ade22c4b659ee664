"""Branching Brownian particles approximating the mean-field superprocess.

Each particle carries mass 1/n, moves as a Brownian motion and, at rate
n * sigma_tilde^2, dies leaving 0 or 2 children with probability 1/2 each.
The rate is frozen at the start of every time step; inside a step event
times are exact. Replicas are advanced in lockstep because, in the
mean-field case, the rate depends on moments of the law of the smoothed
field, which are estimated across replicas.

Replicas are grouped in fixed-size blocks; each block owns a random stream
keyed by (seed, block), so results do not depend on the number of worker
threads and adding blocks leaves existing ones untouched.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import CapacityError, ConfigError, DomainError
from .kernels import InitialDensity
from .moments import ConstantSigma, MomentFunctional, _gh_nodes, stream, worker_count

__all__ = [
    "EnsembleConfig",
    "EmpiricalMeasure",
    "Genealogy",
    "EnsembleRun",
    "run_ensemble",
    "smooth_sigma_delta",
    "law_moments_from_power_sums",
    "factorial_moments",
    "empirical_moment",
    "test_functional",
    "smoothed_field",
]


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    delta: float
    replicas: int
    horizon: float
    init: InitialDensity
    sigma: MomentFunctional = ConstantSigma(1.0)
    seed: int = 0
    dt: float | None = None  # default: largest step with dt * n * K0 <= 0.1
    probe_points: tuple = (0.0,)
    probe_deltas: tuple | None = None  # default: (delta,)
    probe_times: tuple | None = None  # default: (horizon,)
    max_power: int = 2
    estimator: str = "factorial"  # for the law closure: "factorial" or "power"
    law_points: int = 64
    population_cap: int = 1_000_000
    block_size: int = 4096
    initial_count: str = "poisson"  # or "fixed": round(n * mass)
    track_tree: bool = False
    snapshot_times: tuple = ()

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append("n must be >= 1")
        if not self.delta > 0:
            problems.append("delta must be > 0")
        if self.replicas < 1:
            problems.append("replicas must be >= 1")
        if not self.horizon > 0:
            problems.append("horizon must be > 0")
        if self.estimator not in ("factorial", "power"):
            problems.append("estimator must be 'factorial' or 'power'")
        if self.initial_count not in ("poisson", "fixed"):
            problems.append("initial_count must be 'poisson' or 'fixed'")
        if self.dt is not None and self.dt * self.n * self.sigma.K0 > 0.1 * (1 + 1e-12):
            problems.append(f"dt * n * K0 = {self.dt * self.n * self.sigma.K0:.3g} exceeds 0.1")
        if problems:
            raise ConfigError(problems)

    @property
    def step(self) -> tuple:
        """(number of steps, step length)."""
        bound = self.n * self.sigma.K0
        dt = self.dt if self.dt is not None else (0.1 / bound if bound > 0 else self.horizon / 100)
        steps = max(1, math.ceil(self.horizon / dt - 1e-9))
        return steps, self.horizon / steps

    @property
    def deltas(self) -> tuple:
        return tuple(self.probe_deltas) if self.probe_deltas else (self.delta,)

    def law_grid(self) -> np.ndarray:
        half = 6.0 * (self.init.spread + math.sqrt(self.horizon))
        return np.linspace(-half, half, self.law_points)


@dataclass
class EmpiricalMeasure:
    """Particle positions of all replicas at one time; each particle has mass 1/n."""

    positions: np.ndarray
    replica: np.ndarray
    n: int
    replicas: int

    def pair(self, phi) -> np.ndarray:
        """<X, phi> for every replica."""
        return np.bincount(self.replica, weights=phi(self.positions), minlength=self.replicas) / self.n


def test_functional(measure: EmpiricalMeasure, phi) -> np.ndarray:
    return measure.pair(phi)


def smoothed_field(measure: EmpiricalMeasure, x, delta: float) -> np.ndarray:
    """Y(x) = (1/n) sum p_delta(x - particle) per replica; shape (replicas, len(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return _backend.power_sums(measure.positions, measure.replica, measure.replicas, x, delta, 1)[0] / measure.n


@dataclass
class Genealogy:
    """Ancestry of one block. Arrays are indexed by particle id."""

    parent: np.ndarray  # -1 for initial particles
    root: np.ndarray
    replica: np.ndarray
    child_index: np.ndarray  # 0 for roots, else 1 or 2
    birth: np.ndarray
    death: np.ndarray  # nan while alive
    children: np.ndarray  # -1 while alive, else 0 or 2
    birth_position: np.ndarray
    death_position: np.ndarray  # nan while alive

    def label(self, pid: int) -> tuple:
        """(root index, offspring path) with path entries in {1, 2}."""
        path = []
        while self.parent[pid] >= 0:
            path.append(int(self.child_index[pid]))
            pid = int(self.parent[pid])
        return int(self.root[pid]), tuple(reversed(path))

    def lifetimes(self, born_before: float = math.inf) -> np.ndarray:
        done = ~np.isnan(self.death) & (self.birth < born_before)
        return self.death[done] - self.birth[done]


class _GenealogyBuilder:
    def __init__(self):
        self.parent, self.root, self.replica, self.child_index, self.birth = [], [], [], [], []
        self.birth_pos = []
        self.death_ids, self.death_times, self.death_kids, self.death_pos = [], [], [], []
        self.size = 0

    def root_of(self, pids):
        # roots are appended in id order, so a flat view indexes by id
        if len(self.root) > 1:
            self.root = [np.concatenate(self.root)]
        return self.root[0][pids] if self.root else np.zeros(0, dtype=np.int64)

    def add(self, parent, root, replica, child_index, birth, position):
        k = len(parent)
        for lst, arr in ((self.parent, parent), (self.root, root), (self.replica, replica),
                         (self.child_index, child_index), (self.birth, birth), (self.birth_pos, position)):
            lst.append(np.asarray(arr))
        ids = np.arange(self.size, self.size + k)
        self.size += k
        return ids

    def kill(self, ids, times, kids, positions):
        self.death_ids.append(ids)
        self.death_times.append(times)
        self.death_kids.append(kids)
        self.death_pos.append(positions)

    def build(self) -> Genealogy:
        cat = lambda lst, dt: np.concatenate(lst).astype(dt) if lst else np.zeros(0, dt)
        death = np.full(self.size, np.nan)
        death_pos = np.full(self.size, np.nan)
        kids = np.full(self.size, -1, dtype=np.int64)
        if self.death_ids:
            ids = np.concatenate(self.death_ids)
            death[ids] = np.concatenate(self.death_times)
            kids[ids] = np.concatenate(self.death_kids)
            death_pos[ids] = np.concatenate(self.death_pos)
        return Genealogy(cat(self.parent, np.int64), cat(self.root, np.int64), cat(self.replica, np.int64),
                         cat(self.child_index, np.int64), cat(self.birth, float), death, kids,
                         cat(self.birth_pos, float), death_pos)


class _Block:
    def __init__(self, cfg: EnsembleConfig, index: int, first: int, size: int):
        self.cfg, self.index, self.first, self.size = cfg, index, first, size
        self.rng = stream(cfg.seed, 1, index)
        mass = cfg.init.total_mass
        if cfg.initial_count == "poisson":
            counts = self.rng.poisson(cfg.n * mass, size)
        else:
            counts = np.full(size, int(round(cfg.n * mass)))
        self.rep = np.repeat(np.arange(size), counts)
        self.pos = cfg.init.sample(self.rng, int(counts.sum()))
        self.offspring = np.zeros(2, dtype=np.int64)  # events with 0 and with 2 children
        self.tree = None
        if cfg.track_tree:
            self.tree = _GenealogyBuilder()
            self.ids = self.tree.add(np.full(len(self.pos), -1), np.arange(len(self.pos)), self.rep,
                                     np.zeros(len(self.pos)), np.zeros(len(self.pos)), self.pos)

    def counts(self):
        return np.bincount(self.rep, minlength=self.size)

    def advance(self, t0, dt, rate_of):
        """Move every particle through [t0, t0 + dt] with rates frozen at t0."""
        rng, track = self.rng, self.tree is not None
        pos, rep = self.pos, self.rep
        rate = rate_of(pos)
        rem = np.full(len(pos), dt)
        ids = self.ids if track else np.zeros(len(pos), dtype=np.int64)
        done_pos, done_rep, done_ids = [], [], []
        while len(pos):
            m = len(pos)
            expo = rng.standard_exponential(m)
            normals = rng.standard_normal(m)
            coins = rng.random(m)
            new_pos, used, died, kids = _backend.advance_segments(pos, rem, rate, expo, normals, coins)
            done_pos.append(new_pos[~died])
            done_rep.append(rep[~died])
            done_ids.append(ids[~died])
            if not died.any():
                break
            branch = kids == 2
            self.offspring += [np.count_nonzero(died) - np.count_nonzero(branch), np.count_nonzero(branch)]
            left = rem - used
            if track:
                event_time = t0 + (dt - rem) + used
                self.tree.kill(ids[died], event_time[died], kids[died], new_pos[died])
                parents = ids[branch]
                ids = self.tree.add(np.repeat(parents, 2), np.repeat(self.tree.root_of(parents), 2),
                                    np.repeat(rep[branch], 2), np.tile([1, 2], len(parents)),
                                    np.repeat(event_time[branch], 2), np.repeat(new_pos[branch], 2))
            else:
                ids = np.zeros(2 * np.count_nonzero(branch), dtype=np.int64)
            pos = np.repeat(new_pos[branch], 2)
            rep = np.repeat(rep[branch], 2)
            rate = np.repeat(rate[branch], 2)
            rem = np.repeat(left[branch], 2)
        pos = np.concatenate(done_pos) if done_pos else np.zeros(0)
        rep = np.concatenate(done_rep) if done_rep else np.zeros(0, dtype=np.int64)
        order = np.argsort(rep, kind="stable")
        self.pos, self.rep = pos[order], rep[order]
        if track:
            self.ids = np.concatenate(done_ids)[order]


def law_moments_from_power_sums(sums: np.ndarray, n: int, estimator: str = "factorial") -> np.ndarray:
    """Per-replica moment statistics from power sums.

    sums has shape (K, ...) with sums[j-1] = sum over particles of phi^j.
    "power" returns (p_1/n)^k; "factorial" returns the sum over distinct
    ordered k-tuples of particles divided by n^k, k! e_k / n^k, which removes
    the self-interaction terms and is unbiased for the superprocess moments
    under Poisson initial conditions and constant coefficient.
    """
    K = sums.shape[0]
    if estimator == "power":
        return np.stack([(sums[0] / n) ** k for k in range(1, K + 1)])
    return factorial_moments(sums) / np.array([float(n) ** k for k in range(1, K + 1)]).reshape(
        (K,) + (1,) * (sums.ndim - 1))


def factorial_moments(sums: np.ndarray) -> np.ndarray:
    """k! e_k for k = 1..K from power sums via Newton's identities."""
    K = sums.shape[0]
    e = [1.0]
    for k in range(1, K + 1):
        acc = e[k - 1] * sums[0]
        for i in range(2, k + 1):
            acc = acc + (-1) ** (i - 1) * e[k - i] * sums[i - 1]
        e.append(acc / k)
    return np.stack([math.factorial(k) * e[k] for k in range(1, K + 1)])


def smooth_sigma_delta(t, x, delta: float, sigma: MomentFunctional, law_moments, nodes: int = 20):
    """sigma_tilde(t, x) = int p_delta(x - y) sqrt(f(t, y, law_moments(y))) dy, by Gauss-Hermite.

    law_moments is a callable y -> (..., N) array of moments.
    """
    if delta <= 0:
        raise DomainError("smoothing width must be positive")
    x = np.asarray(x, dtype=float)
    gh_x, gh_w = _gh_nodes(nodes)
    acc = np.zeros(x.shape)
    for y, w in zip(gh_x, gh_w):
        pts = x + math.sqrt(2.0 * delta) * y
        acc = acc + w * np.sqrt(sigma(t, pts, law_moments(pts)))
    return acc


@dataclass
class EnsembleRun:
    config: EnsembleConfig
    step_times: np.ndarray
    alive: np.ndarray  # (steps + 1, replicas) particle counts
    probe_times: np.ndarray
    probe_sums: np.ndarray  # (probe times, deltas, max_power, replicas, probe points)
    offspring: np.ndarray  # total events with 0 and with 2 children
    snapshots: dict = field(default_factory=dict)
    genealogies: list | None = None
    law_history: list | None = None

    def mass(self) -> np.ndarray:
        return self.alive / self.config.n


def _rate_function(cfg: EnsembleConfig, t, grid, moments):
    if cfg.sigma.order == 0:
        gamma = float(cfg.sigma(t, 0.0, np.zeros(0)))
        return lambda pos: np.full(len(pos), cfg.n * gamma)
    law = lambda y: np.stack([np.interp(y, grid, moments[k]) for k in range(len(moments))], axis=-1)
    sig2 = smooth_sigma_delta(t, grid, cfg.delta, cfg.sigma, law) ** 2
    return lambda pos: cfg.n * np.interp(pos, grid, sig2)


def run_ensemble(cfg: EnsembleConfig, backend=None) -> EnsembleRun:
    steps, dt = cfg.step
    blocks = []
    for b, first in enumerate(range(0, cfg.replicas, cfg.block_size)):
        blocks.append(_Block(cfg, b, first, min(cfg.block_size, cfg.replicas - first)))
    probe_steps = sorted({min(steps, round(pt / dt)) for pt in (cfg.probe_times or (cfg.horizon,))})
    snap_steps = {min(steps, round(st / dt)): st for st in cfg.snapshot_times}
    probe_pts = np.asarray(cfg.probe_points, dtype=float)
    deltas = cfg.deltas
    max_power = max(cfg.max_power, cfg.sigma.order)
    alive = np.zeros((steps + 1, cfg.replicas), dtype=np.int64)
    probe = np.zeros((len(probe_steps), len(deltas), max_power, cfg.replicas, len(probe_pts)))
    snapshots, law_history = {}, []
    grid = cfg.law_grid()
    workers = worker_count()
    pool = ThreadPoolExecutor(workers) if workers > 1 and len(blocks) > 1 else None

    def each(fn):
        return list(pool.map(fn, blocks)) if pool else [fn(b) for b in blocks]

    try:
        for k in range(steps + 1):
            t = k * dt
            counts = np.concatenate(each(lambda b: b.counts()))
            alive[k] = counts
            if counts.max(initial=0) > cfg.population_cap:
                bad = int(np.argmax(counts))
                raise CapacityError(f"replica {bad} reached {int(counts[bad])} particles at t={t:.6g}")
            if k in probe_steps:
                row = probe_steps.index(k)
                for d_i, d in enumerate(deltas):
                    parts = each(lambda b: _backend.power_sums(b.pos, b.rep, b.size, probe_pts, d, max_power,
                                                                backend=backend))
                    probe[row, d_i] = np.concatenate(parts, axis=1)
            if k in snap_steps:
                snapshots[snap_steps[k]] = EmpiricalMeasure(
                    np.concatenate([b.pos for b in blocks]),
                    np.concatenate([b.rep + b.first for b in blocks]), cfg.n, cfg.replicas)
            if k == steps:
                break
            moments = None
            if cfg.sigma.order > 0:
                parts = each(lambda b: _backend.power_sums(b.pos, b.rep, b.size, grid, cfg.delta,
                                                            cfg.sigma.order, backend=backend))
                sums = np.concatenate(parts, axis=1)
                moments = law_moments_from_power_sums(sums, cfg.n, cfg.estimator).mean(axis=1)
                law_history.append(moments)
            rate_of = _rate_function(cfg, t, grid, moments)
            each(lambda b: b.advance(t, dt, rate_of))
    finally:
        if pool:
            pool.shutdown()
    offspring = np.sum([b.offspring for b in blocks], axis=0)
    genealogies = [b.tree.build() for b in blocks] if cfg.track_tree else None
    return EnsembleRun(cfg, np.arange(steps + 1) * dt, alive, np.array(probe_steps) * dt, probe, offspring,
                       snapshots, genealogies, law_history if cfg.sigma.order > 0 else None)


def empirical_moment(run: EnsembleRun, t: float, x: float, k: int, delta: float | None = None,
                     estimator: str = "factorial") -> tuple:
    """(mean, standard error) over replicas of the k-th moment statistic of Y_t(x).

    estimator="power" uses Y^k itself; "factorial" uses the distinct-tuple
    statistic (see law_moments_from_power_sums).
    """
    cfg = run.config
    if cfg.replicas < 2:
        raise DomainError("need at least two replicas for a standard error")
    delta = cfg.delta if delta is None else delta
    ti = int(np.argmin(np.abs(run.probe_times - t)))
    if abs(run.probe_times[ti] - t) > 1e-9 * max(1.0, t):
        raise DomainError(f"time {t} was not recorded")
    di = [i for i, d in enumerate(cfg.deltas) if abs(d - delta) < 1e-15]
    xi = [i for i, p in enumerate(cfg.probe_points) if abs(p - x) < 1e-15]
    if not di or not xi:
        raise DomainError("probe (x, delta) was not recorded")
    if k > run.probe_sums.shape[2]:
        raise DomainError(f"only powers up to {run.probe_sums.shape[2]} were recorded")
    sums = run.probe_sums[ti, di[0], :k, :, xi[0]]
    vals = law_moments_from_power_sums(sums, cfg.n, estimator)[k - 1]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))

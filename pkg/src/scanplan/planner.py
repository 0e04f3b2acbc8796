"""Global sequencing of local paths.

A tour visits every local path once, scanning it end to end in either
direction, and moves in straight lines between paths. The tour is open: it
starts at any path and does not return. Cost is time at a constant speed,
so every decision is made on lengths and divided by the speed at the end.

``pso_optimize`` searches orders with a particle swarm over random keys;
for each decoded order the best traversal directions are found exactly by
``optimal_directions``. ``brute_force_tour`` enumerates all orders and
serves as the oracle for small instances.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EmptyInputError, InvalidPermutationError, SizeGuardError

BRUTE_FORCE_LIMIT = 10
_PERM_CHUNK = 50_000


@dataclass
class Tour:
    order: Tuple[int, ...]          # local-path ids in visiting order
    reverse: Tuple[bool, ...]       # per visited path: scanned v^p* -> v^p
    speed: float
    scan_lengths: Tuple[float, ...]
    transit_lengths: Tuple[float, ...]

    @property
    def scan_times(self) -> Tuple[float, ...]:
        return tuple(d / self.speed for d in self.scan_lengths)

    @property
    def transit_times(self) -> Tuple[float, ...]:
        return tuple(d / self.speed for d in self.transit_lengths)

    @property
    def length(self) -> float:
        return math.fsum(self.scan_lengths + self.transit_lengths)

    @property
    def total_time(self) -> float:
        return self.length / self.speed

    @property
    def directions(self) -> Tuple[str, ...]:
        return tuple("reverse" if r else "forward" for r in self.reverse)


@dataclass
class PsoConfig:
    swarm_size: int = 40
    iterations: int = 300
    inertia: float = 1.0
    velocity_clamp: float = 0.2
    # None draws the acceleration coefficient uniformly from [0, 1] per particle
    # and iteration; a number fixes it
    c1: Optional[float] = None
    c2: Optional[float] = None
    seed: int = 0

    def validate(self) -> "PsoConfig":
        if self.swarm_size < 2:
            raise ConfigError("swarm_size must be >= 2")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not self.velocity_clamp > 0:
            raise ConfigError("velocity_clamp must be positive")
        return self


@dataclass
class PsoResult:
    tour: Tour
    history: List[float] = field(default_factory=list)   # gBest length per iteration
    evaluations: int = 0


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def _endpoints(paths) -> np.ndarray:
    if isinstance(paths, np.ndarray):
        return np.asarray(paths, dtype=np.float64).reshape(-1, 2, 3)
    return np.array([[p.start.position, p.end.position] for p in paths], dtype=np.float64).reshape(-1, 2, 3)


def _ids(paths) -> List[int]:
    if isinstance(paths, np.ndarray):
        return list(range(1, len(paths) + 1))
    return [int(p.id) for p in paths]


class _Instance:
    """Endpoint distances for U paths: ``dist[i, a, j, b]`` from end a of i to end b of j."""

    def __init__(self, paths):
        self.ends = _endpoints(paths)
        self.ids = _ids(paths)
        if len(set(self.ids)) != len(self.ids):
            raise InvalidPermutationError("local-path ids must be unique")
        self.pos = {pid: i for i, pid in enumerate(self.ids)}
        flat = self.ends.reshape(-1, 3)
        diff = flat[:, None, :] - flat[None, :, :]
        U = len(self.ends)
        self.dist = np.sqrt((diff * diff).sum(axis=2)).reshape(U, 2, U, 2)
        self.scan = np.linalg.norm(self.ends[:, 1] - self.ends[:, 0], axis=1)

    def __len__(self):
        return len(self.ends)

    def positions(self, order) -> np.ndarray:
        order = list(order)
        if sorted(order) != sorted(self.ids) or len(order) != len(self.ids):
            raise InvalidPermutationError(f"order {order} is not a permutation of {sorted(self.ids)}")
        return np.array([self.pos[int(t)] for t in order], dtype=np.int64)

    def tour(self, idx_order, reverse, speed) -> Tour:
        rev = tuple(bool(r) for r in reverse)
        scans = tuple(float(self.scan[i]) for i in idx_order)
        transits = []
        for k in range(1, len(idx_order)):
            a, b = idx_order[k - 1], idx_order[k]
            exit_end = 0 if rev[k - 1] else 1
            entry_end = 1 if rev[k] else 0
            transits.append(float(self.dist[a, exit_end, b, entry_end]))
        return Tour(tuple(self.ids[i] for i in idx_order), rev, float(speed), scans, tuple(transits))

    def best_directions(self, orders: np.ndarray):
        """Exact direction DP for a batch of orders (rows of path positions).

        State r is the direction of the current path (0 forward: enters at
        v^p, leaves at v^p*). Returns (lengths, reverse flags).
        """
        orders = np.atleast_2d(orders)
        B, U = orders.shape
        rows = np.arange(B)
        cost = np.repeat(self.scan[orders[:, 0]][:, None], 2, axis=1)
        choice = np.zeros((B, U, 2), dtype=np.int8)
        for k in range(1, U):
            prev, cur = orders[:, k - 1], orders[:, k]
            # leaving prev: forward exits end 1, reverse exits end 0
            d = self.dist[prev[:, None, None], np.array([1, 0])[None, :, None],
                          cur[:, None, None], np.array([0, 1])[None, None, :]]
            total = cost[:, :, None] + d           # (B, prev dir, cur dir)
            pick = np.argmin(total, axis=1)        # ties -> forward predecessor
            choice[:, k] = pick
            cost = total[rows[:, None], pick, np.arange(2)[None, :]] + self.scan[cur][:, None]
        last = np.argmin(cost, axis=1)             # ties -> forward
        best = cost[rows, last]
        rev = np.zeros((B, U), dtype=bool)
        r = last
        for k in range(U - 1, -1, -1):
            rev[:, k] = r.astype(bool)
            r = choice[rows, k, r]
        return best, rev


def _check_speed(speed):
    if not speed > 0:
        raise ValueError("speed must be positive")


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------

def tour_cost(order: Sequence[int], reverse: Sequence[bool], paths, speed: float) -> Tour:
    """Tour with the given visiting order (path ids) and directions."""
    _check_speed(speed)
    inst = _Instance(paths)
    idx = inst.positions(order)
    if len(reverse) != len(idx):
        raise InvalidPermutationError("one direction per visited path is required")
    return inst.tour(idx, reverse, speed)


def optimal_directions(order: Sequence[int], paths, speed: float) -> Tour:
    """Cheapest traversal directions for a fixed order, in O(U)."""
    _check_speed(speed)
    inst = _Instance(paths)
    idx = inst.positions(order)
    _, rev = inst.best_directions(idx[None, :])
    return inst.tour(idx, rev[0], speed)


def brute_force_tour(paths, speed: float) -> Tour:
    """Exhaustive optimum over all orders (directions by DP); U <= 10."""
    _check_speed(speed)
    inst = _Instance(paths)
    U = len(inst)
    if U == 0:
        raise EmptyInputError("no local paths")
    if U > BRUTE_FORCE_LIMIT:
        raise SizeGuardError(f"brute force is limited to {BRUTE_FORCE_LIMIT} paths, got {U}")
    best_len, best_order, best_rev = np.inf, None, None
    perms = itertools.permutations(range(U))
    while True:
        block = np.array(list(itertools.islice(perms, _PERM_CHUNK)), dtype=np.int64)
        if len(block) == 0:
            break
        lengths, rev = inst.best_directions(block)
        j = int(np.argmin(lengths))
        if lengths[j] < best_len:
            best_len, best_order, best_rev = lengths[j], block[j], rev[j]
    return inst.tour(best_order, best_rev, speed)


def decode_keys(keys: np.ndarray) -> np.ndarray:
    """Random-key decoding: ascending sort order, ties by index."""
    return np.argsort(keys, axis=-1, kind="stable")


def pso_search(paths, speed: float, cfg: Optional[PsoConfig] = None) -> PsoResult:
    """Particle swarm over random keys; returns the best tour and gBest history."""
    _check_speed(speed)
    cfg = (cfg or PsoConfig()).validate()
    inst = _Instance(paths)
    U = len(inst)
    if U == 0:
        raise EmptyInputError("no local paths to sequence")
    rng = np.random.default_rng(cfg.seed)
    S = cfg.swarm_size
    vmax = cfg.velocity_clamp

    X = rng.random((S, U))
    V = rng.uniform(-vmax, vmax, (S, U))
    cost, rev = inst.best_directions(decode_keys(X))
    pbest, pcost, prev = X.copy(), cost.copy(), rev.copy()
    g = int(np.argmin(pcost))
    gbest, gcost = pbest[g].copy(), float(pcost[g])
    g_order, g_rev = decode_keys(gbest), prev[g].copy()
    history = [gcost]
    evaluations = S

    for _ in range(cfg.iterations):
        c1 = rng.random((S, 1)) if cfg.c1 is None else cfg.c1
        c2 = rng.random((S, 1)) if cfg.c2 is None else cfg.c2
        r1 = rng.random((S, U))
        r2 = rng.random((S, U))
        V = cfg.inertia * V + c1 * r1 * (pbest - X) + c2 * r2 * (gbest - X)
        np.clip(V, -vmax, vmax, out=V)
        X = X + V
        cost, rev = inst.best_directions(decode_keys(X))
        evaluations += S
        better = cost < pcost
        pbest[better] = X[better]
        pcost[better] = cost[better]
        prev[better] = rev[better]
        g = int(np.argmin(pcost))
        if pcost[g] < gcost:
            gbest, gcost = pbest[g].copy(), float(pcost[g])
            g_order, g_rev = decode_keys(gbest), prev[g].copy()
        history.append(gcost)

    return PsoResult(inst.tour(g_order, g_rev, speed), history, evaluations)


def pso_optimize(paths, speed: float, cfg: Optional[PsoConfig] = None) -> Tour:
    return pso_search(paths, speed, cfg).tour

"""
Exact Doob conditioning of a small TASEP window to stay inside a tube.

Heights on k sites grow at unit rate when mobile. The tube is given by
strict integer envelopes, piecewise constant and right-continuous in time.
The conditioning function q solves a linear backward equation between the
envelope jump times; the conditioned process runs forward with rates
q(f^x) / q(f).
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from config.settings import settings
from models.data_models import EnvelopeStep
from tasep.errors import DomainError, IntegratorError, StateSpaceError, SupportError
from tasep.ratefn import poisson_rate

logger = logging.getLogger(__name__)

# q below this is treated as outside the support
Q_FLOOR = 1e-300

StateLike = Union[int, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class Envelope:
    """Bounds holding on [time, next time); -inf / inf mean unconstrained."""

    time: float
    lower: np.ndarray
    upper: np.ndarray

    def inside(self, states: np.ndarray) -> np.ndarray:
        return np.all((states > self.lower) & (states < self.upper), axis=1)


@dataclass(frozen=True, eq=False)
class DoobSystem:
    k: int
    initial: np.ndarray
    horizon: float
    envelopes: Tuple[Envelope, ...]
    states: np.ndarray
    keys: np.ndarray
    mobility: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_site: np.ndarray
    ghost: str = "open"
    max_growth: int = settings.DOOB_MAX_GROWTH

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def initial_index(self) -> int:
        return 0

    def index(self, state: StateLike) -> int:
        if isinstance(state, (int, np.integer)):
            return int(state)
        state = np.asarray(state, dtype=np.int64)
        growth = state - self.initial
        if state.shape != self.initial.shape or np.any(growth < 0) or np.any(growth > self.max_growth):
            raise SupportError(f"state {state.tolist()} is not in the enumerated state space")
        key = _encode(state[None, :], self.initial, self.max_growth)[0]
        pos = int(np.searchsorted(self.keys_sorted, key))
        if pos >= self.keys.size or self.keys_sorted[pos] != key:
            raise SupportError(f"state {state.tolist()} is not in the enumerated state space")
        return int(self.key_order[pos])

    @property
    def keys_sorted(self) -> np.ndarray:
        return self.keys[self.key_order]

    @property
    def key_order(self) -> np.ndarray:
        return np.argsort(self.keys, kind="stable")

    def envelope_at(self, t: float) -> int:
        times = [e.time for e in self.envelopes]
        return int(np.searchsorted(times, t, side="right") - 1)

    def generator(self, p: int) -> sparse.csr_matrix:
        """Killed generator on the tube of envelope p (rows and columns outside are zero)."""
        inside = self.envelopes[p].inside(self.states)
        src, dst = self.edge_src, self.edge_dst
        src_in = inside[src]
        keep = src_in & (dst >= 0)
        keep[keep] &= inside[dst[keep]]
        off = sparse.csr_matrix((np.ones(int(keep.sum())), (src[keep], dst[keep])), shape=(self.size, self.size))
        out = np.bincount(src[src_in], minlength=self.size).astype(float)
        return (off - sparse.diags(out)).tocsr()


def _encode(states: np.ndarray, initial: np.ndarray, cap: int) -> np.ndarray:
    radix = (cap + 1) ** np.arange(states.shape[1], dtype=np.int64)
    return (states - initial) @ radix


def _mobile(states: np.ndarray, initial: np.ndarray, ghost: str, cap: int) -> np.ndarray:
    if ghost == "open":
        left = np.concatenate((states[:, :1], states[:, :-1]), axis=1)
        right = np.concatenate((states[:, 1:], states[:, -1:] + 1), axis=1)
    else:
        n = states.shape[0]
        left = np.concatenate((np.full((n, 1), initial[0]), states[:, :-1]), axis=1)
        right = np.concatenate((states[:, 1:], np.full((n, 1), initial[-1] + 1)), axis=1)
    mobile = (right - states == 1) & (states == left)
    # growth is clamped at the cap instead of killed
    return mobile & (states - initial < cap)


def _parse_envelopes(k: int, envelopes: Sequence[Union[EnvelopeStep, Envelope, dict]]) -> Tuple[Envelope, ...]:
    out = []
    for step in envelopes:
        if isinstance(step, Envelope):
            out.append(step)
            continue
        step = EnvelopeStep.model_validate(step) if isinstance(step, dict) else step
        if len(step.lower) != k or len(step.upper) != k:
            raise DomainError(f"envelope at t={step.time} must give {k} bounds per side")
        lower = np.array([-np.inf if v is None else v for v in step.lower], dtype=float)
        upper = np.array([np.inf if v is None else v for v in step.upper], dtype=float)
        out.append(Envelope(float(step.time), lower, upper))
    if not out or out[0].time != 0:
        raise DomainError("the first envelope must start at t=0")
    if any(b.time <= a.time for a, b in zip(out[:-1], out[1:])):
        raise DomainError("envelope times must be strictly increasing")
    return tuple(out)


def unconstrained(k: int) -> List[Envelope]:
    return [Envelope(0.0, np.full(k, -np.inf), np.full(k, np.inf))]


def build_system(
    k: int,
    initial: Sequence[int],
    envelopes: Sequence[Union[EnvelopeStep, Envelope, dict]],
    T_micro: float,
    ghost: str = "open",
    max_growth: Optional[int] = None,
) -> DoobSystem:
    """Enumerate the states reachable by growth inside the loosest envelope."""
    cap = settings.DOOB_MAX_GROWTH if max_growth is None else int(max_growth)
    h0 = np.asarray(initial, dtype=np.int64)
    if not 1 <= k <= 12 or h0.shape != (k,):
        raise DomainError(f"need 1 <= k <= 12 initial heights, got {h0.size} for k={k}")
    if np.any((np.diff(h0) != 0) & (np.diff(h0) != 1)):
        raise DomainError("initial heights must have increments in {0, 1}")
    if ghost not in ("open", "fixed"):
        raise DomainError(f"unknown ghost mode {ghost!r}")
    if T_micro <= 0:
        raise DomainError("horizon must be positive")
    env = _parse_envelopes(k, envelopes)
    if not env[0].inside(h0[None, :])[0]:
        raise DomainError("initial heights are not strictly inside the envelopes at t=0")
    active = [e for e in env if e.time < T_micro] or [env[0]]
    loose_lo = np.min([e.lower for e in active], axis=0)
    loose_hi = np.max([e.upper for e in active], axis=0)

    index = {0: 0}
    states = [h0]
    queue = deque([h0])
    limit = settings.DOOB_MAX_STATES
    while queue:
        f = queue.popleft()
        mob = _mobile(f[None, :], h0, ghost, cap)[0]
        for x in np.flatnonzero(mob):
            g = f.copy()
            g[x] += 1
            if not np.all((g > loose_lo) & (g < loose_hi)):
                continue
            key = int(_encode(g[None, :], h0, cap)[0])
            if key not in index:
                index[key] = len(states)
                states.append(g)
                queue.append(g)
                if len(states) > limit:
                    raise StateSpaceError(f"more than {limit} reachable states", count=len(states))

    st = np.vstack(states)
    keys = _encode(st, h0, cap)
    mobility = _mobile(st, h0, ghost, cap)
    src, site = np.nonzero(mobility)
    children = st[src].copy()
    children[np.arange(src.size), site] += 1
    child_keys = _encode(children, h0, cap)
    order = np.argsort(keys, kind="stable")
    pos = np.clip(np.searchsorted(keys[order], child_keys), 0, keys.size - 1)
    found = keys[order][pos] == child_keys
    dst = np.where(found, order[pos], -1)
    logger.debug(f"Doob system: k={k}, {st.shape[0]} states, {src.size} growth edges")
    return DoobSystem(k, h0, float(T_micro), env, st, keys, mobility, src, dst, site, ghost, cap)


# ============================================================================
# Conditioning function
# ============================================================================


@dataclass(frozen=True)
class _Piece:
    t_lo: float
    t_hi: float
    envelope: int
    inside: np.ndarray
    solution: object  # OdeSolution in s = t_hi - t


@dataclass(frozen=True, eq=False)
class QTable:
    system: DoobSystem
    pieces: Tuple[_Piece, ...]
    terminal: np.ndarray

    def values(self, t: float) -> np.ndarray:
        """q(t, .) over all states, zero outside the tube at t."""
        T = self.system.horizon
        if not 0 <= t <= T + 1e-12:
            raise DomainError(f"t={t} outside [0, {T}]")
        if t >= T:
            return self.terminal
        for piece in self.pieces:
            if piece.t_lo <= t < piece.t_hi:
                q = np.asarray(piece.solution(piece.t_hi - t), dtype=float)
                return np.where(piece.inside, np.clip(q, 0.0, 1.0), 0.0)
        raise DomainError(f"no piece covers t={t}")


def q_at(table: QTable, t: float, state: StateLike) -> float:
    return float(table.values(t)[table.system.index(state)])


def _piece_bounds(sys: DoobSystem) -> List[Tuple[float, float, int]]:
    times = [e.time for e in sys.envelopes] + [math.inf]
    out = []
    for p, env in enumerate(sys.envelopes):
        lo, hi = env.time, min(times[p + 1], sys.horizon)
        if lo < hi:
            out.append((lo, hi, p))
    return out


def solve_q(sys: DoobSystem) -> QTable:
    """Backward equation dq/dt = -(L q) on the tube, with q(t-) = q(t) 1[tube before t] at jumps."""
    bounds = _piece_bounds(sys)
    last = sys.envelope_at(sys.horizon)
    terminal = sys.envelopes[last].inside(sys.states).astype(float)
    q_end = terminal
    pieces = []
    for lo, hi, p in reversed(bounds):
        inside = sys.envelopes[p].inside(sys.states)
        A = sys.generator(p)
        start = np.where(inside, q_end, 0.0)
        sol = solve_ivp(
            lambda s, q: A @ q,
            (0.0, hi - lo),
            start,
            method="RK45",
            atol=settings.ODE_ATOL,
            rtol=settings.ODE_RTOL,
            dense_output=True,
        )
        if not sol.success:
            raise IntegratorError(f"backward solve failed on [{lo}, {hi}]: {sol.message}")
        pieces.append(_Piece(lo, hi, p, inside, sol.sol))
        q_end = np.where(inside, np.clip(sol.y[:, -1], 0.0, 1.0), 0.0)
        if p > 0:
            q_end = q_end * sys.envelopes[p - 1].inside(sys.states)
    pieces.reverse()
    table = QTable(sys, tuple(pieces), terminal)
    logger.debug(f"q(0, initial) = {q_at(table, 0.0, 0):.6g} over {len(pieces)} envelope pieces")
    return table


def conditioned_rates(table: QTable, t: float, state: StateLike, x: int) -> float:
    sys = table.system
    i = sys.index(state)
    q = table.values(t)
    if q[i] <= Q_FLOOR:
        raise SupportError(f"q({t}, state {i}) = 0; the state is outside the conditioned support")
    hit = np.flatnonzero((sys.edge_src == i) & (sys.edge_site == x))
    if not hit.size or sys.edge_dst[hit[0]] < 0:
        return 0.0
    return float(q[sys.edge_dst[hit[0]]] / q[i])


def entropy_exact(sys: DoobSystem, table: QTable) -> float:
    q0 = q_at(table, 0.0, sys.initial_index)
    return math.inf if q0 <= 0 else -math.log(q0)


def _edge_rates(sys: DoobSystem, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    src, dst = sys.edge_src, sys.edge_dst
    live = q[src] > Q_FLOOR
    num = np.where(dst >= 0, q[np.maximum(dst, 0)], 0.0)
    rate = np.where(live, num / np.where(live, q[src], 1.0), 0.0)
    return rate, live


def _forward(sys: DoobSystem, table: QTable, site: Optional[int] = None) -> Callable[[float], np.ndarray]:
    """Dense law of the conditioned process augmented with running integrals.

    Components: probabilities, entropy cost, then (if site is given) the
    compensator of the height at site.
    """
    if q_at(table, 0.0, sys.initial_index) <= Q_FLOOR:
        raise SupportError("the tube has zero probability")
    S = sys.size
    extra = 2 if site is not None else 1
    y = np.zeros(S + extra)
    y[sys.initial_index] = 1.0
    at_site = sys.edge_site == site if site is not None else None
    segments = []
    for piece in table.pieces:
        def rhs(t, y, piece=piece):
            q = np.where(piece.inside, np.clip(piece.solution(piece.t_hi - t), 0.0, 1.0), 0.0)
            rate, live = _edge_rates(sys, q)
            p = y[:S]
            flow = p[sys.edge_src] * rate
            dp = np.bincount(np.maximum(sys.edge_dst, 0), weights=np.where(sys.edge_dst >= 0, flow, 0.0), minlength=S)
            dp -= np.bincount(sys.edge_src, weights=flow, minlength=S)
            out = [dp, [np.sum(np.where(live, p[sys.edge_src] * poisson_rate(rate), 0.0))]]
            if at_site is not None:
                out.append([np.sum(flow[at_site])])
            return np.concatenate(out)

        sol = solve_ivp(
            rhs, (piece.t_lo, piece.t_hi), y, method="RK45",
            atol=settings.ODE_ATOL, rtol=settings.ODE_RTOL, dense_output=True,
        )
        if not sol.success:
            raise IntegratorError(f"forward solve failed on [{piece.t_lo}, {piece.t_hi}]: {sol.message}")
        segments.append((piece.t_lo, piece.t_hi, sol.sol))
        y = sol.y[:, -1]

    def evaluate(t: float) -> np.ndarray:
        for lo, hi, fn in segments:
            if lo <= t <= hi:
                return np.asarray(fn(t), dtype=float)
        raise DomainError(f"t={t} outside [0, {sys.horizon}]")

    return evaluate


def entropy_formula(sys: DoobSystem, table: QTable) -> float:
    """Expected running cost of the conditioned rates under the conditioned law."""
    try:
        law = _forward(sys, table)
    except SupportError:
        return math.inf
    return float(law(sys.horizon)[sys.size])


def height_martingale_gap(sys: DoobSystem, table: QTable, site: int, t1: float, t2: float) -> float:
    """E[h(t2) - h(t1)] minus the expected integral of rate times mobility at site."""
    if not 0 <= site < sys.k:
        raise DomainError(f"site {site} outside the window")
    law = _forward(sys, table, site)
    S = sys.size
    y1, y2 = law(t1), law(t2)
    heights = sys.states[:, site]
    return float(np.dot(y2[:S] - y1[:S], heights) - (y2[S + 1] - y1[S + 1]))


def random_system(rng: np.random.Generator, k: int, T: float, max_growth: int = 3) -> DoobSystem:
    """Random window with constant lower bounds and stepping upper bounds."""
    h0 = np.concatenate(([0], np.cumsum(rng.integers(0, 2, size=k - 1)))).astype(np.int64)
    lower = [int(h0[x] - 1 - rng.integers(0, 2)) if rng.random() < 0.5 else None for x in range(k)]
    jumps = np.sort(rng.uniform(0.0, T, size=int(rng.integers(0, 3))))
    steps = []
    for time in np.concatenate(([0.0], jumps)):
        upper = [int(h0[x] + 1 + rng.integers(0, 3)) if rng.random() < 0.6 else None for x in range(k)]
        steps.append(EnvelopeStep(time=float(time), lower=lower, upper=upper))
    return build_system(k, h0, steps, T, max_growth=max_growth)

"""Exact linear algebra for finite-chain instances.

Every Monte Carlo check in the package has a ground truth here: resolvents by
dense solves of ``(alpha I - Q_sub) u = f``, semigroups by uniformization,
block generators for concatenations and revivals, and first-entry
functionals by solves restricted to the complement of an absorbing set.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, EmptyDomainError, NumericError, UnsupportedEngineError
from .functions import StateFunction
from .process import FiniteChain
from .spaces import SpacePoint
from .transfer import TransferKernel

__all__ = [
    "SubGenerator",
    "exact_resolvent",
    "exact_semigroup",
    "assemble_concatenated",
    "assemble_instant_revival",
    "assemble_alternating_pair",
    "EntryFunctionals",
    "exact_entry_functionals",
    "laplace_derivatives",
]

SOLVE_TOL = 1e-12
SEMIGROUP_TOL = 1e-10
# uniformization is used while the Poisson mean stays below this
_UNIF_MAX = 2000.0


@dataclass(frozen=True)
class SubGenerator:
    """``matrix`` has non-negative off-diagonals and row sums ``-kill <= 0``."""

    states: tuple
    matrix: np.ndarray

    def __post_init__(self):
        q = np.array(self.matrix, dtype=float)
        n = len(self.states)
        if q.shape != (n, n):
            raise ConfigurationError(f"matrix must be {n}x{n}, got {q.shape}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0) or not np.all(np.isfinite(q)):
            raise ConfigurationError("off-diagonal entries must be finite and non-negative")
        if np.any(q.sum(axis=1) > 1e-12 * max(1.0, np.abs(q).max())):
            raise ConfigurationError("row sums must be non-positive")
        q.setflags(write=False)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "matrix", q)

    @classmethod
    def from_chain(cls, chain: FiniteChain) -> "SubGenerator":
        return cls(tuple(SpacePoint(chain.tag, lab) for lab in chain.labels), chain.subgenerator())

    @property
    def kill(self) -> np.ndarray:
        return np.maximum(-self.matrix.sum(axis=1), 0.0)

    def __len__(self):
        return len(self.states)

    def index(self, state) -> int:
        return self.states.index(state)

    def vector(self, f) -> np.ndarray:
        """Coerce a ``StateFunction`` or array-like into a vector over ``states``."""
        if isinstance(f, StateFunction):
            return np.array([f(s) if isinstance(s, SpacePoint) else f(SpacePoint(0, s)) for s in self.states])
        v = np.asarray(f, dtype=float)
        if v.shape != (len(self.states),):
            raise ConfigurationError(f"vector must have length {len(self.states)}")
        return v

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f"{s.tag}:{s.value}" if isinstance(s, SpacePoint) else str(s) for s in self.states]
        buf.write("," + ",".join(names) + "\n")
        for name, row in zip(names, self.matrix):
            buf.write(name + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        u = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular system: {exc}") from exc
    scale = max(np.abs(b).max(initial=0.0), np.abs(a).max(initial=0.0) * np.abs(u).max(initial=0.0) * 1e-4)
    res = np.abs(a @ u - b).max(initial=0.0)
    if res > SOLVE_TOL * scale:
        u = u + np.linalg.solve(a, b - a @ u)
        res = np.abs(a @ u - b).max(initial=0.0)
        if res > SOLVE_TOL * scale:
            raise NumericError(f"solve residual {res:.3e} exceeds tolerance")
    return u


def exact_resolvent(sg: SubGenerator, alpha: float, f) -> np.ndarray:
    """``U_alpha f``: the solution of ``(alpha I - Q_sub) u = f``."""
    if not alpha > 0:
        raise NumericError(f"alpha must be positive, got {alpha}")
    fv = sg.vector(f)
    if not fv.any():
        return np.zeros_like(fv)
    a = alpha * np.eye(len(sg)) - sg.matrix
    return _solve(a, fv)


def _uniformized(q: np.ndarray, t: float, f: np.ndarray) -> np.ndarray:
    lam = float(np.max(-np.diag(q)))
    if lam == 0.0:
        return f.copy()
    p = np.eye(q.shape[0]) + q / lam
    mean = lam * t
    # Poisson weights in log space; sum until the remaining mass is negligible
    log_w = -mean
    acc = np.zeros_like(f)
    term = f.copy()
    mass = 0.0
    k = 0
    kmax = int(mean + 20 * math.sqrt(mean) + 50)
    while True:
        w = math.exp(log_w)
        acc += w * term
        mass += w
        if (k > mean and 1.0 - mass < SEMIGROUP_TOL * 1e-3) or k >= kmax:
            break
        k += 1
        log_w += math.log(mean) - math.log(k)
        term = p @ term
    return acc


def exact_semigroup(sg: SubGenerator, t: float, f) -> np.ndarray:
    """``T_t f = exp(t Q_sub) f``."""
    if t < 0:
        raise NumericError(f"t must be non-negative, got {t}")
    fv = sg.vector(f)
    if t == 0:
        return fv.copy()
    lam = float(np.max(-np.diag(sg.matrix)))
    if lam * t <= _UNIF_MAX:
        return _uniformized(sg.matrix, t, fv)
    return scipy.linalg.expm(t * sg.matrix) @ fv


def _chain_stage(stage) -> FiniteChain:
    proc = stage.process
    if not isinstance(proc, FiniteChain):
        raise UnsupportedEngineError("exact assembly needs finite-chain stages")
    return proc


def assemble_concatenated(plan, n_stages: int | None = None) -> SubGenerator:
    """Block generator of the concatenation of stages ``1..n_stages``.

    Stage ``n``'s kill mass is routed through ``K^n`` into stage ``n+1``; the
    last assembled stage keeps its kill deficit. By default the number of
    stages matches the plan's revival budget.
    """
    if n_stages is None:
        n_stages = plan.max_revivals + 1
        if plan.rule is None:
            n_stages = min(n_stages, len(plan.stages))
    stages = []
    for n in range(1, n_stages + 1):
        st = plan.stage(n)
        if st is None:
            break
        stages.append((_chain_stage(st), st.kernel))
    offsets = np.cumsum([0] + [len(c.labels) for c, _ in stages])
    total = int(offsets[-1])
    q = np.zeros((total, total))
    states: list = []
    for idx, (chain, kernel) in enumerate(stages):
        lo, hi = offsets[idx], offsets[idx + 1]
        q[lo:hi, lo:hi] = chain.subgenerator()
        states.extend(SpacePoint(chain.tag, lab) for lab in chain.labels)
        if idx + 1 < len(stages) and kernel is not None:
            nxt = stages[idx + 1][0]
            k = kernel.matrix(chain.labels, nxt.labels)
            c = np.array(chain.kill)
            rows_present = k.sum(axis=1)
            if np.any((c > 0) & (rows_present == 0)):
                raise ConfigurationError(f"stage {chain.tag} can die where its kernel has no row")
            q[lo:hi, offsets[idx + 1] : offsets[idx + 2]] = c[:, None] * k
    return SubGenerator(tuple(states), q)


def _kernel_matrix(kernel, labels) -> np.ndarray:
    if isinstance(kernel, TransferKernel):
        return kernel.matrix(labels, labels)
    k = np.asarray(kernel, dtype=float)
    if k.shape != (len(labels), len(labels)):
        raise ConfigurationError("kernel matrix has the wrong shape")
    return k


def assemble_instant_revival(chain, kernel) -> SubGenerator:
    """``Q' = Q_sub + diag(c) K``: the chain revived in its own space at every death.

    Kill mass at states without a kernel row stays as permanent killing.
    """
    if isinstance(chain, FiniteChain):
        sg = SubGenerator(tuple(SpacePoint(0, lab) for lab in chain.labels), chain.subgenerator())
        c = np.array(chain.kill)
        labels = chain.labels
    else:
        sg = chain
        c = sg.kill
        labels = [s.value if isinstance(s, SpacePoint) else s for s in sg.states]
    k = _kernel_matrix(kernel, labels)
    return SubGenerator(sg.states, sg.matrix + c[:, None] * k)


def assemble_alternating_pair(minus: FiniteChain, plus: FiniteChain, kernel_minus, kernel_plus) -> SubGenerator:
    """Two-copy generator for a pasting: copy 1 runs ``minus``, copy 2 runs ``plus``.

    Deaths in copy 1 revive in copy 2 through ``kernel_minus`` and vice versa.
    Because the resolvent of the alternating concatenation depends on the copy
    index only through its parity, this finite generator reproduces
    ``U_alpha(f∘π)`` at every odd copy (tag 1 here) and every even copy (tag 2).
    """
    if not (isinstance(minus, FiniteChain) and isinstance(plus, FiniteChain)):
        raise UnsupportedEngineError("exact pasting oracle needs finite chains")
    nm, npl = len(minus.labels), len(plus.labels)
    q = np.zeros((nm + npl, nm + npl))
    q[:nm, :nm] = minus.subgenerator()
    q[nm:, nm:] = plus.subgenerator()
    km = kernel_minus.matrix(minus.labels, plus.labels)
    kp = kernel_plus.matrix(plus.labels, minus.labels)
    q[:nm, nm:] = np.array(minus.kill)[:, None] * km
    q[nm:, :nm] = np.array(plus.kill)[:, None] * kp
    states = tuple(SpacePoint(1, lab) for lab in minus.labels) + tuple(SpacePoint(2, lab) for lab in plus.labels)
    return SubGenerator(states, q)


@dataclass(frozen=True)
class EntryFunctionals:
    """Per starting state: the three summands of a decomposition at ``τ_A ∧ ζ``.

    * ``integral`` -- ``E_x ∫_0^{τ_A} e^{-αt} f(X_t) dt``
    * ``boundary`` -- ``E_x(e^{-ατ_A} g(X_{τ_A}); τ_A < ζ)``
    * ``kill``     -- ``E_x(e^{-αζ} Kg(X_{ζ-}); ζ < τ_A)``

    Entries for ``x ∈ A`` are the ``τ_A = 0`` values ``(0, g(x), 0)``.
    """

    integral: np.ndarray
    boundary: np.ndarray
    kill: np.ndarray
    states: tuple


def _absorbing_mask(sg: SubGenerator, absorbing) -> np.ndarray:
    mask = np.zeros(len(sg), dtype=bool)
    for a in absorbing:
        if isinstance(a, (int, np.integer)) and not isinstance(a, bool) and a not in sg.states:
            mask[int(a)] = True
            continue
        matches = [i for i, s in enumerate(sg.states) if s == a or (isinstance(s, SpacePoint) and s.value == a)]
        if not matches:
            raise ConfigurationError(f"absorbing state {a!r} not in generator")
        mask[matches] = True
    return mask


def exact_entry_functionals(sg: SubGenerator, alpha: float, absorbing, f, g, kg=None) -> EntryFunctionals:
    """First-entry functionals for the absorbing set ``absorbing``.

    ``kg`` is the vector ``x -> (K g)(x)`` of kernel expectations at each
    possible exit state; it defaults to zero (no revival).
    """
    if not alpha > 0:
        raise NumericError(f"alpha must be positive, got {alpha}")
    mask = _absorbing_mask(sg, absorbing)
    if mask.all():
        raise EmptyDomainError("absorbing set covers the whole state space")
    fv, gv = sg.vector(f), sg.vector(g)
    kgv = np.zeros(len(sg)) if kg is None else sg.vector(kg)
    c_idx = np.flatnonzero(~mask)
    a_idx = np.flatnonzero(mask)
    q = sg.matrix
    a = alpha * np.eye(c_idx.size) - q[np.ix_(c_idx, c_idx)]
    rhs = np.column_stack(
        [
            fv[c_idx],
            q[np.ix_(c_idx, a_idx)] @ gv[a_idx] if a_idx.size else np.zeros(c_idx.size),
            sg.kill[c_idx] * kgv[c_idx],
        ]
    )
    sol = np.zeros_like(rhs)
    for j in range(3):
        if rhs[:, j].any():
            sol[:, j] = _solve(a, rhs[:, j])
    integral = np.zeros(len(sg))
    boundary = np.where(mask, gv, 0.0)
    kill = np.zeros(len(sg))
    integral[c_idx], boundary[c_idx], kill[c_idx] = sol[:, 0], sol[:, 1], sol[:, 2]
    return EntryFunctionals(integral, boundary, kill, sg.states)


def laplace_derivatives(sg: SubGenerator, f, alpha: float, k: int) -> list[np.ndarray]:
    """``[φ^{(j)}(alpha) for j = 0..k]`` with ``φ(α) = U_α f``.

    ``φ^{(j)}(α) = (-1)^j j! (αI - Q_sub)^{-(j+1)} f``, by repeated solves.
    """
    if not alpha > 0:
        raise NumericError(f"alpha must be positive, got {alpha}")
    a = alpha * np.eye(len(sg)) - sg.matrix
    v = sg.vector(f)
    out = []
    for j in range(k + 1):
        v = _solve(a, v) if v.any() else v
        out.append(((-1) ** j) * math.factorial(j) * v)
    return out


def states_of(chain: FiniteChain, tag: int | None = None) -> Sequence[SpacePoint]:
    t = chain.tag if tag is None else tag
    return [SpacePoint(t, lab) for lab in chain.labels]

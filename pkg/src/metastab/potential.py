"""Equilibrium potentials, capacities and hitting times.

The boundary value problem L h = 0 off A u B with h = 1_A on the boundary is
solved in the mu-symmetrized form: with the weighted graph Laplacian
Lap = deg - W (W the edge conductances), the interior block of Lap is
symmetric positive definite and the system reads
Lap[int, int] h_int = W[int, A] 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chains import (
    MetastabError,
    SolverNotConverged,
    ValidationError,
    dirichlet_form,
    subset_mask,
)

DIRECT_SOLVE_LIMIT = 10_000
RESIDUAL_TOL = 1e-10
OVERSHOOT_TOL = 1e-9
CAP_AGREE_RTOL = 1e-8


class OverlappingSets(ValidationError):
    pass


class EmptySet(ValidationError):
    pass


class DegenerateTarget(ValidationError):
    pass


@dataclass
class EquilibriumSolution:
    """Solution bundle for the pair (A, B).

    ``potential`` is h_{A,B} (1 on A, 0 on B), ``equilibrium_measure`` holds
    e_{A,B}(x) = -(L h)(x) on A, ``capacity`` is sum_A mu e, and ``last_exit``
    is the normalized distribution mu e / cap on A.  ``capacity_from_energy``
    stores the independent evaluation through the Dirichlet form.
    """

    potential: np.ndarray
    equilibrium_measure: np.ndarray
    capacity: float
    capacity_from_energy: float
    last_exit: np.ndarray
    set_a: np.ndarray
    set_b: np.ndarray


def equilibrium_potential(chain, A, B, residual_tol=RESIDUAL_TOL):
    """Solve the equilibrium-potential boundary value problem for (A, B)."""
    a = subset_mask(chain, A)
    b = subset_mask(chain, B)
    _check_pair(a, b)
    h = _solve_potential(chain, a, b)

    mu = chain.stationary
    lap_h = chain.laplacian @ h
    interior = ~(a | b)
    if interior.any():
        resid = np.max(np.abs(lap_h[interior] / mu[interior]))
        if resid > residual_tol:
            raise SolverNotConverged(f"harmonicity residual {resid:.3e}")
    lo, hi = h.min(), h.max()
    if lo < -OVERSHOOT_TOL or hi > 1.0 + OVERSHOOT_TOL:
        raise SolverNotConverged(f"potential overshoot: range [{lo}, {hi}]")
    h = np.clip(h, 0.0, 1.0)

    e = np.zeros_like(h)
    e[a] = lap_h[a] / mu[a]
    if np.any(e[a] < -1e-12):
        raise SolverNotConverged("negative escape probability on A")
    e[a] = np.maximum(e[a], 0.0)

    cap = float(np.dot(mu[a], e[a]))
    cap_energy = dirichlet_form(chain, h)
    if abs(cap - cap_energy) > CAP_AGREE_RTOL * max(cap, cap_energy, 1e-300):
        raise SolverNotConverged(
            f"capacity mismatch: sum mu e = {cap!r}, energy = {cap_energy!r}"
        )
    if cap <= 0.0:
        raise SolverNotConverged("vanishing capacity on an irreducible chain")

    nu = np.zeros_like(h)
    nu[a] = mu[a] * e[a] / cap  # entries kept however small: nu << mu_A
    return EquilibriumSolution(
        potential=h,
        equilibrium_measure=e,
        capacity=cap,
        capacity_from_energy=cap_energy,
        last_exit=nu,
        set_a=a,
        set_b=b,
    )


def capacity(chain, A, B):
    """Capacity of the pair (A, B)."""
    return equilibrium_potential(chain, A, B).capacity


def hitting_probability_from_equilibrium(chain, A, B):
    """P_{mu_A}[tau_B < tau_A] = cap(A, B) / mu[A]."""
    sol = equilibrium_potential(chain, A, B)
    return sol.capacity / chain.mass(sol.set_a)


def mean_hitting_time(chain, start, target):
    """Expected hitting time of ``target`` from the start distribution.

    Solves the absorbed system (I - P) w = 1 off the target (mu-symmetrized
    as Lap w = mu).  The start measure must vanish on the target; for
    start = nu_{A,B} and target = B this equals E_mu[h_{A,B}] / cap(A, B).
    """
    t = subset_mask(chain, target)
    if not t.any():
        raise EmptySet("empty target set")
    if t.all():
        raise DegenerateTarget(
            "target equals the whole space; first-return times are out of scope"
        )
    start = np.asarray(start, dtype=float)
    if start.shape != (chain.n_states,):
        raise ValidationError("start measure has wrong length")
    if np.any(start < -1e-15):
        raise ValidationError("start measure has negative mass")
    total = start.sum()
    if total <= 0.0:
        raise ValidationError("start measure has no mass")
    start = start / total
    if start[t].sum() > 1e-15:
        raise ValidationError("start measure puts mass on the target set")

    free = ~t
    w = np.zeros(chain.n_states)
    w[free] = _solve_spd(
        chain.laplacian[free][:, free].tocsc(), chain.stationary[free]
    )
    return float(np.dot(start, w))


def path_capacity_1d(weights):
    """Closed-form capacity and potential profile for a birth-death path.

    For the cycle-free generator with vertex weights mu(0..x-1) this returns
    cap({x, ...}, {0}) = (sum_z 1/mu(z))^{-1} together with the profile
    h(y) = sum_{z=y}^{x-1} mu(z)^{-1} / sum_{z=0}^{x-1} mu(z)^{-1},
    which is 1 at y = 0 and 0 at y = x.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("need a nonempty weight vector")
    if np.any(w <= 0.0):
        raise ValidationError("zero or negative weight in birth-death path")
    inv = 1.0 / w
    total = inv.sum()
    tail = np.concatenate([np.cumsum(inv[::-1])[::-1], [0.0]])
    return float(1.0 / total), tail / total


def birth_death_generator_chain(mu_weights):
    """Continuous-time birth-death generator of the Muckenhoupt criterion.

    Rates are p(y, y+1) = 1 and p(y, y-1) = mu(y-1)/mu(y) on {0, ..., n},
    reversible for mu.  ``mu_weights`` should already be normalized so that
    capacities computed on the chain match the closed forms directly.
    """
    mu = np.asarray(mu_weights, dtype=float)
    n = mu.size
    if n < 2:
        raise ValidationError("need at least two states")
    edges = []
    for y in range(n - 1):
        edges.append((y, y + 1, 1.0))
        edges.append((y + 1, y, mu[y] / mu[y + 1]))
    from .chains import build_chain

    return build_chain(list(range(n)), edges, stationary=mu, time="continuous")


# -- internals -----------------------------------------------------------------


def _check_pair(a, b):
    if not a.any() or not b.any():
        raise EmptySet("A and B must be nonempty")
    if np.any(a & b):
        raise OverlappingSets("A and B must be disjoint")


def _solve_potential(chain, a, b):
    n = chain.n_states
    h = np.zeros(n)
    h[a] = 1.0
    interior = ~(a | b)
    if interior.any():
        lap = chain.laplacian
        rhs = np.asarray(chain.conductance[interior][:, a].sum(axis=1)).ravel()
        h[interior] = _solve_spd(lap[interior][:, interior].tocsc(), rhs)
    return h


def _solve_spd(mat, rhs):
    m = mat.shape[0]
    if m == 0:
        return np.zeros(0)
    if m <= DIRECT_SOLVE_LIMIT:
        if m <= 400:
            return np.linalg.solve(mat.toarray(), rhs)
        return spla.spsolve(mat.tocsc(), rhs)
    precond = sp.diags(1.0 / mat.diagonal())
    x, info = spla.cg(mat, rhs, rtol=1e-12, atol=0.0, maxiter=20 * m, M=precond)
    if info != 0:
        raise SolverNotConverged(f"conjugate gradient stopped with info={info}")
    return x


def capacity_scan_context(chain):
    """Dense precomputation for repeated capacity queries on small chains."""
    lap = chain.laplacian.toarray()
    w = chain.conductance.toarray()
    return lap, w, chain.stationary


def capacity_dense(ctx, a, b):
    """Capacity via a dense solve, for enumeration loops; masks required."""
    lap, w, mu = ctx
    n = mu.size
    h = np.zeros(n)
    h[a] = 1.0
    interior = ~(a | b)
    if interior.any():
        rhs = w[np.ix_(interior, a)].sum(axis=1)
        h[interior] = np.linalg.solve(lap[np.ix_(interior, interior)], rhs)
    return float(np.dot(h[a], (lap @ h)[a])), h

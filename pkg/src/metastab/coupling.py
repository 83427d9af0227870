"""Mesoscopic-synchronous coupling of two Glauber paths.

Two copies started in the same fiber are driven so that their block
magnetizations agree until a pre-tossed Bernoulli gate fails: same-spin sites
update synchronously, mismatched sites update through the optimal two-point
coupling applied to the site pair (i, j) with j a mismatched partner carrying
sigma_i's value in the same block.  Gates are an i.i.d. family drawn up
front, independent of everything else, so P[all gates pass] is exactly
delta^M with delta = exp(-4 beta eps(n)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chains import InequalityViolation, MetastabError, ValidationError
from .potential import equilibrium_potential
from .rfcw import hitting_value_function


@dataclass
class TwoPointCoupling:
    """Optimal coupling of two laws on {-1, +1} with a pass-through gate.

    With probability delta the gate V is 1 and X' copies X; otherwise X' is
    drawn from the maximal coupling of nu with the residual
    (nu' - delta nu)/(1 - delta).  Marginals are exact and the disagreement
    probability equals the total variation distance.
    """

    nu: np.ndarray        # [P(-1), P(+1)]
    nu_prime: np.ndarray
    delta: float
    residual: np.ndarray = field(init=False)
    joint: np.ndarray = field(init=False)
    disagreement: float = field(init=False)

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        nup = np.asarray(self.nu_prime, dtype=float)
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0, 1)")
        if np.any(self.delta * nu > nup + 1e-15):
            raise ValidationError("domination delta nu <= nu' fails")
        rho = (nup - self.delta * nu) / (1.0 - self.delta)
        rho = np.maximum(rho, 0.0)
        diag = np.minimum(nu, rho)
        maximal = np.diag(diag)
        excess = nu - diag
        deficit = rho - diag
        for a in range(2):
            for b in range(2):
                if a != b and excess[a] > 0.0 and deficit[b] > 0.0:
                    maximal[a, b] = min(excess[a], deficit[b])
        self.residual = rho
        self.joint = self.delta * np.diag(nu) + (1.0 - self.delta) * maximal
        self.disagreement = float(
            self.joint[0, 1] + self.joint[1, 0]
        )

    def marginals(self):
        return self.joint.sum(axis=1), self.joint.sum(axis=0)


def optimal_two_point_coupling(nu, nu_prime, delta):
    """Construct the gated optimal coupling of two spin-valued laws."""
    return TwoPointCoupling(np.asarray(nu, float), np.asarray(nu_prime, float), delta)


def _coupled_flip_draw(a_flip, b_flip, delta, gate, u1, u2):
    """One gated coupling step in flip-event coordinates.

    ``a_flip`` is the flip probability of the gate-driving side, ``b_flip``
    of the follower.  Returns (x_flips, xp_flips).  Requires the domination
    delta * (a_flip, 1 - a_flip) <= (b_flip, 1 - b_flip) coordinatewise.
    """
    x = u1 < a_flip
    if gate:
        return x, x
    # residual law of the follower in flip coordinates
    rf = (b_flip - delta * a_flip) / (1.0 - delta)
    rk = ((1.0 - b_flip) - delta * (1.0 - a_flip)) / (1.0 - delta)
    if rf < -1e-12 or rk < -1e-12:
        raise MetastabError("domination failed inside the coupling step")
    rf = max(rf, 0.0)
    # maximal coupling of (a, 1-a) with (rf, rk), conditioned on x
    if x:
        p_same = min(a_flip, rf) / a_flip if a_flip > 0.0 else 1.0
    else:
        p_same = min(1.0 - a_flip, 1.0 - rf) / (1.0 - a_flip) if a_flip < 1.0 else 1.0
    same = u2 < p_same
    return x, (x if same else not x)


@dataclass
class CouplingTrace:
    gates: np.ndarray
    gates_used: int
    xi: int
    first_flip: np.ndarray
    frak_t: int | None
    attempts: int
    event_A: bool
    event_B: bool
    merged: bool
    merge_time: int | None
    matched_at_frak_t: bool | None
    tau_B_sigma: int | None
    sync_violations: int
    partner_failures: int
    censored: bool
    sigma_path: np.ndarray | None = None
    varsigma_path: np.ndarray | None = None
    sigma_final: np.ndarray | None = None
    varsigma_final: np.ndarray | None = None


def gate_probability(model, land):
    """delta = exp(-4 beta eps(n)), the gate success probability."""
    return math.exp(-4.0 * model.beta * land.eps_n)


def run_coupling(
    model,
    land,
    sigma0,
    varsigma0,
    T,
    M,
    seed=None,
    gates=None,
    B_points=None,
    record_paths=False,
    transition_counts=None,
):
    """Execute one coupled trajectory of the two Glauber paths.

    Both starting configurations must share their mesoscopic value.  Set
    memberships for the mismatched-partner draw are read before any update of
    the step.  After the gated phase ends (xi = 1 or the gate budget is
    spent) the two paths evolve from independent streams; once the paths have
    merged they are updated synchronously so they stay identical.

    ``transition_counts`` optionally collects (state, outcome) counts of both
    marginal paths for goodness-of-fit testing.
    """
    n = model.n_spins
    sig = np.asarray(sigma0, dtype=np.int8).copy()
    var = np.asarray(varsigma0, dtype=np.int8).copy()
    if sig.shape != (n,) or var.shape != (n,):
        raise ValidationError("configurations must have one spin per site")
    site_block = np.zeros(n, dtype=int)
    for l, b in enumerate(land.blocks):
        site_block[b] = l
    bs_sig = np.array([sig[b].sum() if b.size else 0 for b in land.blocks])
    bs_var = np.array([var[b].sum() if b.size else 0 for b in land.blocks])
    if not np.array_equal(bs_sig, bs_var):
        raise ValidationError("starting configurations differ mesoscopically")

    delta = gate_probability(model, land)
    if seed is None:
        raise ValidationError("run_coupling needs a seed")
    # one splittable stream per purpose: gates, gated dynamics, and one
    # independent stream per path for the post-gate phase
    kids = np.random.SeedSequence(entropy=(int(seed),)).spawn(4)
    if gates is None:
        gates = np.random.default_rng(kids[0]).random(M) < delta
    else:
        gates = np.asarray(gates, dtype=bool)
        if gates.shape != (M,):
            raise ValidationError("gate array must have length M")
    rng_dyn = np.random.default_rng(kids[1])
    rng_sig = np.random.default_rng(kids[2])
    rng_var = np.random.default_rng(kids[3])

    b_keys = None
    if B_points is not None:
        b_keys = {tuple(int(v) for v in land.points[k]) for k in B_points}

    m_sig = int(sig.sum())
    m_var = int(var.sum())
    first_flip = np.full(n, -1, dtype=int)
    attempts = 0
    gates_used = 0
    xi = 0
    frak_t = None
    matched_at_frak_t = None
    tau_b = None
    merge_time = 0 if np.array_equal(sig, var) else None
    sync_violations = 0
    partner_failures = 0
    paths = ([sig.copy()], [var.copy()]) if record_paths else None

    def sigma_step_bookkeeping(t, i, flipped, counted):
        nonlocal attempts, frak_t, matched_at_frak_t
        if first_flip[i] < 0 and counted:
            attempts += 1
        if flipped and first_flip[i] < 0:
            first_flip[i] = t
            if np.all(first_flip >= 0):
                frak_t = t
                matched_at_frak_t = bool(np.array_equal(pre_sig, pre_var))

    for t in range(T):
        pre_sig = sig.copy()
        pre_var = var.copy()
        merged = np.array_equal(sig, var)
        if merged and merge_time is None:
            merge_time = t

        gated = xi == 0 and gates_used < M
        if gated or merged:
            i = int(rng_dyn.integers(n))
            if sig[i] == var[i]:
                a = model.flip_probability(sig, m_sig, i)
                u = rng_dyn.random()
                flip = u < a
                if transition_counts is not None:
                    _count(transition_counts[0], pre_sig, i, flip)
                    _count(transition_counts[1], pre_var, i, flip)
                sigma_step_bookkeeping(t, i, flip, True)
                if flip:
                    sig[i] = -sig[i]
                    var[i] = -var[i]
                    m_sig += int(2 * sig[i])
                    m_var += int(2 * var[i])
                    bs_sig[site_block[i]] += int(2 * sig[i])
                    bs_var[site_block[i]] += int(2 * var[i])
            else:
                l = site_block[i]
                cands = [
                    j
                    for j in land.blocks[l]
                    if var[j] != sig[j] and var[j] == sig[i]
                ]
                if not cands:
                    partner_failures += 1
                    raise MetastabError(
                        "empty partner set despite mesoscopic agreement"
                    )
                j = cands[int(rng_dyn.integers(len(cands)))]
                a = model.flip_probability(sig, m_sig, i)
                b = model.flip_probability(var, m_var, j)
                gate = bool(gates[gates_used])
                u1 = rng_dyn.random()
                u2 = rng_dyn.random()
                if a >= b:
                    x, xp = _coupled_flip_draw(a, b, delta, gate, u1, u2)
                    flip_sig, flip_var = x, xp
                else:
                    x, xp = _coupled_flip_draw(b, a, delta, gate, u1, u2)
                    flip_sig, flip_var = xp, x
                if transition_counts is not None:
                    _count(transition_counts[0], pre_sig, i, flip_sig)
                    _count(transition_counts[1], pre_var, j, flip_var)
                sigma_step_bookkeeping(t, i, flip_sig, True)
                if flip_sig:
                    sig[i] = -sig[i]
                    m_sig += int(2 * sig[i])
                    bs_sig[site_block[i]] += int(2 * sig[i])
                if flip_var:
                    var[j] = -var[j]
                    m_var += int(2 * var[j])
                    bs_var[site_block[j]] += int(2 * var[j])
                gates_used += 1
                if not gate:
                    xi = 1
        else:
            i = int(rng_sig.integers(n))
            a = model.flip_probability(sig, m_sig, i)
            flip = rng_sig.random() < a
            if transition_counts is not None:
                _count(transition_counts[0], pre_sig, i, flip)
            sigma_step_bookkeeping(t, i, flip, True)
            if flip:
                sig[i] = -sig[i]
                m_sig += int(2 * sig[i])
                bs_sig[site_block[i]] += int(2 * sig[i])
            k = int(rng_var.integers(n))
            bv = model.flip_probability(var, m_var, k)
            flip_v = rng_var.random() < bv
            if transition_counts is not None:
                _count(transition_counts[1], pre_var, k, flip_v)
            if flip_v:
                var[k] = -var[k]
                m_var += int(2 * var[k])
                bs_var[site_block[k]] += int(2 * var[k])

        if xi == 0 and not np.array_equal(bs_sig, bs_var):
            sync_violations += 1
        if b_keys is not None and tau_b is None and t + 1 >= 1:
            if tuple(int(v) for v in bs_sig) in b_keys:
                tau_b = t + 1
        if record_paths:
            paths[0].append(sig.copy())
            paths[1].append(var.copy())

    censored = frak_t is None
    event_a = bool(gates[:M].all())
    event_b = (
        frak_t is not None
        and attempts <= M
        and (tau_b is None or frak_t <= tau_b)
    )
    return CouplingTrace(
        gates=gates,
        gates_used=gates_used,
        xi=xi,
        first_flip=first_flip,
        frak_t=frak_t,
        attempts=attempts,
        event_A=event_a,
        event_B=event_b,
        merged=merge_time is not None,
        merge_time=merge_time,
        matched_at_frak_t=matched_at_frak_t,
        tau_B_sigma=tau_b,
        sync_violations=sync_violations,
        partner_failures=partner_failures,
        censored=censored,
        sigma_path=np.array(paths[0]) if record_paths else None,
        varsigma_path=np.array(paths[1]) if record_paths else None,
        sigma_final=sig,
        varsigma_final=var,
    )


def _count(counter, pre_state, site, flipped):
    key = (pre_state.tobytes(), int(site) if flipped else -1)
    counter[key] = counter.get(key, 0) + 1


def mismatched_pair_in_fiber(model, land, point_index, rng):
    """Two distinct configurations sharing the given mesoscopic point."""
    fiber = np.flatnonzero(land.fiber_mask([point_index]))
    if fiber.size < 2:
        raise ValidationError("fiber has a single configuration")
    a, b = rng.choice(fiber.size, size=2, replace=False)
    return model.spins[fiber[a]].copy(), model.spins[fiber[b]].copy()


def richest_fiber(land):
    """Mesoscopic point whose fiber holds the most configurations."""
    counts = np.bincount(land.rho_of_config, minlength=land.n_points)
    return int(np.argmax(counts))


def coupling_experiment(
    model,
    land,
    runs,
    seed,
    M,
    T,
    start_point=None,
    B_points=None,
    dynamics_runs=None,
):
    """Replicated coupling runs with the gate-event statistic.

    Gate blocks are drawn for every replica (the event A depends on them
    alone, so its frequency is estimated across all ``runs``); full dynamics
    execute on the first ``dynamics_runs`` replicas and feed the synchrony,
    containment and partner-set statistics.
    """
    delta = gate_probability(model, land)
    root = np.random.SeedSequence(entropy=(int(seed), 9060))
    rng_gates = np.random.default_rng(root)
    gates = rng_gates.random((runs, M)) < delta
    p_a_emp = float(gates.all(axis=1).mean())
    p_a_theory = delta**M

    if dynamics_runs is None:
        dynamics_runs = min(runs, 2000)
    if start_point is None:
        start_point = richest_fiber(land)
    rng_pick = np.random.default_rng((seed, 17))

    sync_violations = 0
    containment_violations = 0
    containment_checked = 0
    merged = 0
    censored = 0
    attempts = []
    for r in range(dynamics_runs):
        s0, v0 = mismatched_pair_in_fiber(model, land, start_point, rng_pick)
        trace = run_coupling(
            model,
            land,
            s0,
            v0,
            T=T,
            M=M,
            seed=(seed * 1_000_003 + r),
            gates=gates[r],
            B_points=B_points,
        )
        sync_violations += trace.sync_violations
        if trace.event_A and trace.event_B:
            containment_checked += 1
            if not trace.matched_at_frak_t:
                containment_violations += 1
        merged += int(trace.merged)
        censored += int(trace.censored)
        attempts.append(trace.attempts)
    # conditional probe: forcing every gate to pass samples the law given the
    # all-gates event exactly (the gates are independent of everything else),
    # so the merge containment can be observed at will
    probe_m = max(M, 10 * model.n_spins)
    probe_gates = np.ones(probe_m, dtype=bool)
    for r in range(min(dynamics_runs, 500)):
        s0, v0 = mismatched_pair_in_fiber(model, land, start_point, rng_pick)
        trace = run_coupling(
            model,
            land,
            s0,
            v0,
            T=T,
            M=probe_m,
            seed=(seed * 2_000_003 + r),
            gates=probe_gates,
            B_points=B_points,
        )
        sync_violations += trace.sync_violations
        if trace.event_A and trace.event_B:
            containment_checked += 1
            if not trace.matched_at_frak_t:
                containment_violations += 1
    sigma_pa = math.sqrt(max(p_a_theory * (1.0 - p_a_theory), 1e-12) / runs)
    return {
        "runs": runs,
        "dynamics_runs": dynamics_runs,
        "delta": delta,
        "M": M,
        "p_A_empirical": p_a_emp,
        "p_A_theory": p_a_theory,
        "p_A_sigma": sigma_pa,
        "p_A_within_3sigma": abs(p_a_emp - p_a_theory) <= 3.0 * sigma_pa,
        "sync_violations": sync_violations,
        "containment_checked": containment_checked,
        "containment_violations": containment_violations,
        "merged_fraction": merged / dynamics_runs,
        "censored": censored,
        "mean_attempts": float(np.mean(attempts)) if attempts else None,
    }


def marginal_chi_square(model, land, runs, steps, seed, start_point=None, alpha=0.01):
    """Chi-square goodness of fit of both coupled marginals.

    Pools one-step transition counts over many replicas started from a
    mismatched pair, tests each sufficiently visited state against its exact
    Glauber row and Bonferroni-corrects over the tested states.
    """
    from scipy.stats import chi2

    if start_point is None:
        start_point = richest_fiber(land)
    rng_pick = np.random.default_rng((seed, 23))
    counters = ({}, {})
    M = model.n_spins
    for r in range(runs):
        s0, v0 = mismatched_pair_in_fiber(model, land, start_point, rng_pick)
        run_coupling(
            model,
            land,
            s0,
            v0,
            T=steps,
            M=M,
            seed=(seed * 7_777_777 + r),
            transition_counts=counters,
        )
    results = []
    for side, counter in enumerate(counters):
        by_state = {}
        for (blob, site), c in counter.items():
            by_state.setdefault(blob, {})[site] = c
        n_tested = 0
        min_p = 1.0
        for blob, outcomes in by_state.items():
            visits = sum(outcomes.values())
            if visits < 50:
                continue
            sigma = np.frombuffer(blob, dtype=np.int8)
            m = int(sigma.sum())
            flip = np.array(
                [
                    model.flip_probability(sigma, m, i) / model.n_spins
                    for i in range(model.n_spins)
                ]
            )
            # categories: flip at site i, or hold; rare cells pooled so every
            # expected count is at least 5
            probs = np.concatenate([flip, [1.0 - flip.sum()]])
            obs = np.array(
                [outcomes.get(i, 0) for i in range(model.n_spins)]
                + [outcomes.get(-1, 0)],
                dtype=float,
            )
            exp = visits * probs
            keep = exp >= 5.0
            if keep.sum() < 2:
                continue
            obs_k = np.concatenate([obs[keep], [obs[~keep].sum()]])
            exp_k = np.concatenate([exp[keep], [exp[~keep].sum()]])
            if exp_k[-1] < 1e-12:
                obs_k, exp_k = obs_k[:-1], exp_k[:-1]
            stat = float(np.sum((obs_k - exp_k) ** 2 / exp_k))
            pval = float(chi2.sf(stat, obs_k.size - 1))
            n_tested += 1
            min_p = min(min_p, pval)
        threshold = alpha / max(n_tested, 1)
        results.append(
            {
                "path": "sigma" if side == 0 else "varsigma",
                "states_tested": n_tested,
                "min_pvalue": min_p,
                "bonferroni_threshold": threshold,
                "pass": min_p >= threshold,
            }
        )
    return results


def negative_binomial_rate(alpha, s):
    """Large-deviation rate I_alpha(s - 1) of the negative Bernoulli family.

    (s-1) ln((s-1)/(s(1-alpha))) - ln(alpha s) for s > 1; nonnegative with
    its zero at the mean s = 1/alpha.  alpha = 1 returns +inf (degenerate).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must lie in (0, 1]")
    if s <= 1.0:
        raise ValidationError("s must exceed 1")
    if alpha == 1.0:
        return math.inf
    val = (s - 1.0) * math.log((s - 1.0) / (s * (1.0 - alpha))) - math.log(alpha * s)
    if val < -1e-12:
        raise MetastabError("negative rate value; arguments out of regime")
    return max(val, 0.0)


def flip_rate_floor(model):
    """Uniform lower bound exp(-2 beta (1 + h_inf)) on the flip probability."""
    return math.exp(-2.0 * model.beta * (1.0 + model.h_inf))


def tail_bound_check(model, s=None, samples=2000, seed=0, start=None):
    """Monte-Carlo check of P[N_attempts > s N] <= exp(-I_alpha(s-1) N).

    Each replica also simulates the negative-binomial comparison process on
    shared uniforms and asserts the pathwise domination
    N_attempts <= R + N on every run.
    """
    n = model.n_spins
    alpha = flip_rate_floor(model)
    if s is None:
        if alpha >= 1.0:
            s = 2.0
        else:
            s = 2.0 / alpha
    rate = negative_binomial_rate(alpha, s) if alpha < 1.0 else math.inf
    bound = math.exp(-rate * n) if math.isfinite(rate) else 0.0
    rng = np.random.default_rng((seed, 31))
    if start is None:
        start = np.ones(n, dtype=np.int8)
    exceed = 0
    dominated = True
    for r in range(samples):
        srng = np.random.default_rng((seed, 37, r))
        sig = start.copy()
        m = int(sig.sum())
        pending = np.ones(n, dtype=bool)
        attempts = 0
        alpha_succ = 0
        trials = 0
        while pending.any():
            i = int(srng.integers(n))
            if pending[i]:
                u = srng.random()
                attempts += 1
                trials += 1
                if u < alpha:
                    alpha_succ += 1
                if u < model.flip_probability(sig, m, i):
                    pending[i] = False
                    sig[i] = -sig[i]
                    m += int(2 * sig[i])
            else:
                a = model.flip_probability(sig, m, i)
                if srng.random() < a:
                    sig[i] = -sig[i]
                    m += int(2 * sig[i])
        while alpha_succ < n:
            trials += 1
            if srng.random() < alpha:
                alpha_succ += 1
        if attempts > trials:
            dominated = False
        if attempts > s * n:
            exceed += 1
    emp = exceed / samples
    sigma = math.sqrt(max(bound * (1.0 - bound), emp * (1.0 - emp), 1e-12) / samples)
    ok = emp <= bound + 3.0 * sigma
    return {
        "alpha": alpha,
        "s": s,
        "rate": rate,
        "bound": bound,
        "empirical": emp,
        "samples": samples,
        "sigma": sigma,
        "within_3sigma": ok,
        "domination_ok": dominated,
    }


def hitting_lower_bound_check(model, land, a_points, b_points, s=None, runs=0, seed=0):
    """Fiberwise check of the coupling hitting-probability comparison.

    For every mesoscopic fiber the exact values P_x[tau_B < tau_A] satisfy
    min >= exp(-4 beta eps s N) (max - exp(-I N)); the margin is the worst
    slack.  Optional Monte Carlo corroboration on the worst fiber.
    """
    n = model.n_spins
    alpha = flip_rate_floor(model)
    if s is None:
        s = 2.0 / alpha if alpha < 1.0 else 2.0
    if alpha < 1.0 and s <= 1.0 / alpha:
        raise ValidationError("s must exceed 1/alpha")
    rate = negative_binomial_rate(alpha, s) if alpha < 1.0 else math.inf
    a = land.fiber_mask(a_points)
    b = land.fiber_mask(b_points)
    vals = hitting_value_function(model.chain, a, b)
    factor = math.exp(-4.0 * model.beta * land.eps_n * s * n)
    correction = math.exp(-rate * n) if math.isfinite(rate) else 0.0
    worst_margin = math.inf
    worst_fiber = None
    spread = 0.0
    for k in range(land.n_points):
        fib = land.rho_of_config == k
        v = vals[fib]
        margin = float(v.min() - factor * (v.max() - correction))
        spread = max(spread, float(v.max() - v.min()))
        if margin < worst_margin:
            worst_margin = margin
            worst_fiber = k
    report = {
        "factor": factor,
        "correction": correction,
        "worst_margin": worst_margin,
        "worst_fiber": worst_fiber,
        "max_fiber_spread": spread,
        "s": s,
    }
    if worst_margin < -1e-10:
        raise InequalityViolation(
            f"hitting-probability comparison violated: margin {worst_margin!r}"
        )
    if runs > 0:
        fib = np.flatnonzero(land.rho_of_config == worst_fiber)
        v = vals[fib]
        hi_state = model.spins[fib[int(np.argmax(v))]]
        lo_state = model.spins[fib[int(np.argmin(v))]]
        emp_hi = _mc_hitting(model, land, hi_state, a_points, b_points, runs, (seed, 41))
        emp_lo = _mc_hitting(model, land, lo_state, a_points, b_points, runs, (seed, 43))
        sig = math.sqrt(0.25 / runs)
        report["mc"] = {
            "emp_max_state": emp_hi,
            "emp_min_state": emp_lo,
            "margin": emp_lo - factor * (emp_hi - correction),
            "three_sigma": 3.0 * sig * (1.0 + factor),
        }
    return report


def _mc_hitting(model, land, start, a_points, b_points, runs, seed, cap=10_000_000):
    a_keys = {tuple(int(v) for v in land.points[k]) for k in a_points}
    b_keys = {tuple(int(v) for v in land.points[k]) for k in b_points}
    site_block = np.zeros(model.n_spins, dtype=int)
    for l, b in enumerate(land.blocks):
        site_block[b] = l
    hits = 0
    rng = np.random.default_rng(seed)
    n = model.n_spins
    for _ in range(runs):
        sig = np.asarray(start, dtype=np.int8).copy()
        m = int(sig.sum())
        bs = np.array([sig[b].sum() if b.size else 0 for b in land.blocks])
        for _ in range(cap):
            i = int(rng.integers(n))
            if rng.random() < model.flip_probability(sig, m, i):
                sig[i] = -sig[i]
                m += int(2 * sig[i])
                bs[site_block[i]] += int(2 * sig[i])
            key = tuple(int(v) for v in bs)
            if key in b_keys:
                hits += 1
                break
            if key in a_keys:
                break
    return hits / runs


def eta_from_coupling(model, land, i_point, j_point, s=None):
    """Exact last-exit regularity versus the coupling-derived bound.

    The exact side is Var_{mu_A}[nu_{A,B}/mu_A] cap / mu[A] assembled from
    the equilibrium solution; the bound side is the proof's chain
    (e^{4 beta eps s N} - 1) + (mu[A]/cap) e^{(4 beta eps s - I) N}, scaled
    the same way.  Returns both with the slack, asserting exact <= bound.
    """
    n = model.n_spins
    alpha = flip_rate_floor(model)
    if s is None:
        s = 2.0 / alpha if alpha < 1.0 else 2.0
    rate = negative_binomial_rate(alpha, s) if alpha < 1.0 else math.inf
    a = land.fiber_mask([i_point])
    b = land.fiber_mask([j_point])
    sol = equilibrium_potential(model.chain, a, b)
    mass = model.chain.mass(a)
    dens = sol.equilibrium_measure[a] * mass / sol.capacity
    w = model.chain.stationary[a] / mass
    var_exact = float(np.dot(w, (dens - 1.0) ** 2))
    grow = 4.0 * model.beta * land.eps_n * s * n
    tail = (
        (mass / sol.capacity) * math.exp(grow - rate * n)
        if math.isfinite(rate)
        else 0.0
    )
    var_bound = math.expm1(grow) + tail
    eta_exact = var_exact * sol.capacity / mass
    eta_bound = var_bound * sol.capacity / mass
    if var_exact > var_bound + 1e-10:
        raise InequalityViolation(
            f"regularity bound violated: {var_exact!r} > {var_bound!r}"
        )
    return {
        "var_exact": var_exact,
        "var_bound": var_bound,
        "eta_exact": eta_exact,
        "eta_bound": eta_bound,
        "slack": var_bound - var_exact,
        "s": s,
    }

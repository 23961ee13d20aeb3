"""Block coordinate descent solvers for the per-period offline problem and
the per-round online problem.

Blocks: transmit factors (closed-form coordinate updates with dual variables
for the per-period average-power constraints), receive beamformer (linear
solve), and IRS phases (element-wise successive refinement, optionally on a
uniform 2^bits grid). Every block update is an exact minimization of its
subproblem, so the objective trace is non-increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aircomp import GradientStats, NoiseModel, RoundDesign, error_terms_offline, error_terms_online
from .channel import ChannelState, IrsPhases, effective_channels, phase_grid
from .errors import DegenerateInputError, DomainError
from .gap import GapWeights, omega


@dataclass(frozen=True)
class PowerBudget:
    """Per-device power caps (watts) and the per-round symbol count d."""

    p_max: np.ndarray
    p_avg: np.ndarray
    d: int

    def __post_init__(self):
        object.__setattr__(self, "p_max", np.atleast_1d(np.asarray(self.p_max, float)))
        object.__setattr__(self, "p_avg", np.atleast_1d(np.asarray(self.p_avg, float)))
        if self.d < 1:
            raise DomainError("d must be >= 1")
        if np.any(self.p_max <= 0) or np.any(self.p_avg <= 0):
            raise DomainError("power levels must be positive")


@dataclass
class BcdSettings:
    max_iters: int = 60
    rel_tol: float = 1e-8
    dual_step0: float | None = None  # default 1/(rho*d*mean(p_avg))
    dual_max_iters: int = 20
    phase_sweeps_max: int = 30
    quant_bits: int | None = None
    nearest_rounding: bool = False  # grid rule: nearest point instead of best neighbor
    init_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.dual_max_iters < 1 or self.phase_sweeps_max < 1:
            raise DomainError("iteration limits must be positive")
        if not 0 < self.rel_tol < 1:
            raise DomainError("rel_tol must lie in (0, 1)")


@dataclass
class PeriodDesign:
    """Result of one period's offline optimization."""

    rounds: list[RoundDesign]
    objective_trace: list[float]
    dual_vars: np.ndarray
    block_trace: list[tuple[int, str, float]] = field(default_factory=list)
    dual_converged: bool = True
    slack_residual: np.ndarray | None = None  # lambda_k * (budget - consumed)


@dataclass
class RoundSolution:
    """Result of one round's online optimization."""

    design: RoundDesign
    objective_trace: list[float]
    block_trace: list[tuple[int, str, float]] = field(default_factory=list)


def align_phase(b_mag: float, effective_scalar_channel: complex) -> complex:
    """Transmit factor of magnitude b_mag whose phase compensates the scalar
    channel, making m^H h b real positive."""
    h = complex(effective_scalar_channel)
    if h == 0:
        raise DegenerateInputError("zero effective channel; transmit zero")
    return b_mag * h.conjugate() / abs(h)


# ---------------------------------------------------------------------------
# Power allocation
# ---------------------------------------------------------------------------

def _power_sweeps(h_bar: np.ndarray, caps: np.ndarray, c1: np.ndarray,
                  c2: np.ndarray, lam: np.ndarray, b0: np.ndarray,
                  nonneg: bool, tol: float = 1e-12,
                  max_sweeps: int = 2000) -> np.ndarray:
    """Gauss-Seidel coordinate descent on the power objective at fixed duals.

    h_bar: (rho, K) effective scalar channels (complex, or nonnegative real
    magnitudes with nonneg=True). Each coordinate update is the exact
    minimizer of its 1-D convex subproblem, projected onto |b| <= cap.
    """
    rho, k = h_bar.shape
    if rho * k <= 400:
        return _power_sweeps_small(h_bar, caps, c1, c2, lam, b0, nonneg,
                                   tol, max_sweeps)
    b = b0.copy()
    a2 = (h_bar.conj() * h_bar).real  # (rho, K)

    def lagrangian(bb):
        return (_power_objective(h_bar, bb, c1, c2)
                + float(lam @ np.sum((bb.conj() * bb).real, axis=0)))

    c = h_bar * b
    total = c.sum(axis=1)  # (rho,)
    f_prev = lagrangian(b)
    for _ in range(max_sweeps):
        b_start = b.copy()
        for j in range(k):
            # rounds decouple given the duals: update device j's whole column
            rest = total - c[:, j]
            denom = (c1 + c2) * a2[:, j] + lam[j]
            with np.errstate(divide="ignore", invalid="ignore"):
                new = np.conj(h_bar[:, j]) * (c1 * (k - rest) + c2) / denom
            new = np.where((denom > 0) & (a2[:, j] > 0), new, 0.0)
            if nonneg:
                new = np.maximum(new.real, 0.0)
            mag = np.abs(new)
            over = mag > caps[j]
            if np.any(over):
                new = np.where(over, new * (caps[j] / np.where(mag > 0, mag, 1.0)), new)
            b[:, j] = new
            c[:, j] = h_bar[:, j] * new
            total = rest + c[:, j]
        step = b - b_start
        delta = float(np.max(np.abs(step)))
        if delta < tol * (1.0 + float(np.max(np.abs(b)))):
            break
        # Exact line search along the sweep displacement (the objective is
        # quadratic in t); counters the slow common mode of the rank-one
        # bias coupling. Feasible range [0, t_max] from the cap discs.
        aa = (step.conj() * step).real
        bb_lin = 2.0 * (b_start.conj() * step).real
        cc = (b_start.conj() * b_start).real - caps[None, :] ** 2
        active = aa > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            roots = (-bb_lin + np.sqrt(np.maximum(bb_lin ** 2 - 4 * aa * cc, 0.0))) / (2 * aa)
        t_max = float(np.min(np.where(active, roots, np.inf)))
        f0 = f_prev
        f1 = lagrangian(b)
        fh = lagrangian(b_start + 0.5 * step)
        f_cur = f1
        alpha = 2.0 * (f1 + f0 - 2.0 * fh)
        beta = f1 - f0 - alpha
        if alpha > 0:
            t = min(max(-beta / (2.0 * alpha), 0.0), max(t_max, 1.0))
            if nonneg:
                t = min(t, float(np.min(np.where(step < 0, -b_start / np.where(step < 0, step, -1.0), np.inf))))
            cand = b_start + t * step
            f_cand = lagrangian(cand)
            if f_cand < f1:
                b = cand
                c = h_bar * b
                total = c.sum(axis=1)
                f_cur = f_cand
        if f_prev - f_cur <= 1e-14 * max(abs(f_prev), 1e-300):
            f_prev = f_cur
            break
        f_prev = f_cur
    return b


def _power_sweeps_small(h_bar: np.ndarray, caps: np.ndarray, c1: np.ndarray,
                        c2: np.ndarray, lam: np.ndarray, b0: np.ndarray,
                        nonneg: bool, tol: float,
                        max_sweeps: int) -> np.ndarray:
    """Specialization of `_power_sweeps` for small rho*K instances.

    Identical algorithm, but plain Python complex arithmetic in nested
    lists: at the problem sizes used here numpy per-call overhead dominates
    the actual arithmetic by an order of magnitude.
    """
    rho, k = h_bar.shape
    h = [[complex(x) for x in row] for row in h_bar]
    cap = [float(x) for x in caps]
    lm = [float(x) for x in lam]
    cc1 = [float(x) for x in c1]
    cc2 = [float(x) for x in c2]
    b = [[complex(x) for x in row] for row in b0]
    a2 = [[x.real * x.real + x.imag * x.imag for x in row] for row in h]
    c = [[h[t][j] * b[t][j] for j in range(k)] for t in range(rho)]
    total = [sum(row) for row in c]
    rng_t = range(rho)
    rng_j = range(k)

    def f_of(bs):
        acc = 0.0
        for t in rng_t:
            s = 0j
            inner = 0.0
            ht = h[t]
            bt = bs[t]
            for j in rng_j:
                cj = ht[j] * bt[j]
                s += cj
                dr = cj.real - 1.0
                inner += dr * dr + cj.imag * cj.imag
            dr = s.real - k
            acc += cc1[t] * (dr * dr + s.imag * s.imag) + cc2[t] * inner
        for j in rng_j:
            use = 0.0
            for t in rng_t:
                v = bs[t][j]
                use += v.real * v.real + v.imag * v.imag
            acc += lm[j] * use
        return acc

    f_prev = f_of(b)
    for _ in range(max_sweeps):
        b_start = [row[:] for row in b]
        for j in rng_j:
            for t in rng_t:
                rest = total[t] - c[t][j]
                denom = (cc1[t] + cc2[t]) * a2[t][j] + lm[j]
                if denom > 0.0 and a2[t][j] > 0.0:
                    new = h[t][j].conjugate() * (cc1[t] * (k - rest) + cc2[t]) / denom
                else:
                    new = 0j
                if nonneg:
                    new = complex(max(new.real, 0.0), 0.0)
                mag = abs(new)
                if mag > cap[j]:
                    new *= cap[j] / mag
                b[t][j] = new
                c[t][j] = h[t][j] * new
                total[t] = rest + c[t][j]
        delta = max(abs(b[t][j] - b_start[t][j]) for t in rng_t for j in rng_j)
        scale = max(abs(b[t][j]) for t in rng_t for j in rng_j)
        if delta < tol * (1.0 + scale):
            break
        step = [[b[t][j] - b_start[t][j] for j in rng_j] for t in rng_t]
        t_max = math.inf
        for t in rng_t:
            for j in rng_j:
                s = step[t][j]
                aa = s.real * s.real + s.imag * s.imag
                if aa > 0.0:
                    bb_lin = 2.0 * (b_start[t][j].conjugate() * s).real
                    resid = abs(b_start[t][j]) ** 2 - cap[j] * cap[j]
                    disc = bb_lin * bb_lin - 4.0 * aa * resid
                    root = (-bb_lin + math.sqrt(max(disc, 0.0))) / (2.0 * aa)
                    t_max = min(t_max, root)
        f0 = f_prev
        f1 = f_of(b)
        fh = f_of([[b_start[t][j] + 0.5 * step[t][j] for j in rng_j]
                   for t in rng_t])
        f_cur = f1
        alpha = 2.0 * (f1 + f0 - 2.0 * fh)
        beta = f1 - f0 - alpha
        if alpha > 0.0:
            tt = min(max(-beta / (2.0 * alpha), 0.0), max(t_max, 1.0))
            if nonneg:
                for t in rng_t:
                    for j in rng_j:
                        if step[t][j].real < 0.0:
                            tt = min(tt, -b_start[t][j].real / step[t][j].real)
            cand = [[b_start[t][j] + tt * step[t][j] for j in rng_j]
                    for t in rng_t]
            f_cand = f_of(cand)
            if f_cand < f1:
                b = cand
                c = [[h[t][j] * b[t][j] for j in rng_j] for t in rng_t]
                total = [sum(row) for row in c]
                f_cur = f_cand
        if f_prev - f_cur <= 1e-14 * max(abs(f_prev), 1e-300):
            break
        f_prev = f_cur
    out = np.array(b, dtype=complex).reshape(rho, k)
    if not np.iscomplexobj(b0):
        return out.real.astype(b0.dtype)
    return out


def _power_objective(h_bar: np.ndarray, b: np.ndarray, c1: np.ndarray,
                     c2: np.ndarray) -> float:
    k = h_bar.shape[1]
    c = h_bar * b
    total = c.sum(axis=1)
    return float(np.sum(c1 * np.abs(total - k) ** 2)
                 + np.sum(c2 * np.sum(np.abs(c - 1.0) ** 2, axis=1)))


def _column_solve(num: np.ndarray, den: np.ndarray, cap: float, ball: float,
                  nonneg: bool) -> tuple[np.ndarray, float]:
    """Exact minimizer of sum_t den_t |b_t|^2 - 2 Re(conj(num_t) b_t)
    subject to sum |b_t|^2 <= ball and |b_t| <= cap (KKT via a scalar
    bisection on the ball multiplier)."""
    rho = len(num)
    nm = [complex(x) for x in num]
    dn = [float(x) for x in den]
    cap_sq = cap * cap
    rng = range(rho)

    def candidate(lam: float) -> list[complex]:
        out = []
        for t in rng:
            d = dn[t] + lam
            v = nm[t] / d if d > 0.0 else 0j
            if nonneg:
                v = complex(max(v.real, 0.0), 0.0)
            mag = abs(v)
            if mag > cap:
                v *= cap / mag
            out.append(v)
        return out

    def usage_of(bs) -> float:
        return sum(v.real * v.real + v.imag * v.imag for v in bs)

    def finish(bs, lam: float):
        arr = np.array(bs, dtype=complex)
        if not np.iscomplexobj(num):
            arr = arr.real.astype(num.dtype)
        return arr, lam

    b = candidate(0.0)
    if usage_of(b) <= ball * (1 + 1e-14):
        return finish(b, 0.0)

    # usage(lam) is decreasing and convex on the uncapped pieces, so Newton
    # from the left converges monotonically; bisection brackets guard the
    # cap-set breakpoints.
    lo, hi = 0.0, 1e-12 + max(dn)
    while usage_of(candidate(hi)) > ball:
        lo = hi
        hi *= 8.0
    lam = lo
    for _ in range(100):
        b = candidate(lam)
        mag_sq = [v.real * v.real + v.imag * v.imag for v in b]
        use = sum(mag_sq)
        if abs(use - ball) <= 1e-14 * ball:
            break
        if use > ball:
            lo = lam
        else:
            hi = lam
        slope = -2.0 * sum(mag_sq[t] / (dn[t] + lam) for t in rng
                           if mag_sq[t] < cap_sq * (1 - 1e-12))
        step = (use - ball) / slope if slope < 0 else 0.0
        lam_new = lam - step
        if not lo < lam_new < hi:
            lam_new = 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(hi, 1.0):
            lam = hi
            break
        lam = lam_new
    lam = max(lam, 0.0)
    b = candidate(lam)
    usage = usage_of(b)
    if usage > ball:  # residual slack: radial repair
        scale = math.sqrt(ball / usage)
        b = [v * scale for v in b]
    return finish(b, lam)


def _feasible_step_limit(b_start: np.ndarray, step: np.ndarray,
                         caps: np.ndarray, ball_sq: np.ndarray) -> float:
    """Largest t >= 0 keeping b_start + t*step inside every cap disc and
    every per-device energy ball."""
    t_max = np.inf
    aa = (step.conj() * step).real
    bb = 2.0 * (b_start.conj() * step).real
    cc = (b_start.conj() * b_start).real - caps[None, :] ** 2
    active = aa > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = (-bb + np.sqrt(np.maximum(bb ** 2 - 4 * aa * cc, 0.0))) / (2 * aa)
    if np.any(active):
        t_max = float(np.min(np.where(active, roots, np.inf)))
    a_dev = aa.sum(axis=0)
    b_dev = bb.sum(axis=0)
    c_dev = (b_start.conj() * b_start).real.sum(axis=0) - ball_sq
    active = a_dev > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = (-b_dev + np.sqrt(np.maximum(b_dev ** 2 - 4 * a_dev * c_dev, 0.0))) / (2 * a_dev)
    if np.any(active):
        t_max = min(t_max, float(np.min(np.where(active, roots, np.inf))))
    return t_max


def _solve_power(h_bar: np.ndarray, caps: np.ndarray, ball_sq: np.ndarray,
                 c1: np.ndarray, c2: np.ndarray, settings: BcdSettings,
                 nonneg: bool, duals0: np.ndarray | None = None,
                 b0: np.ndarray | None = None, polish_tol: float = 1e-13
                 ) -> tuple[np.ndarray, np.ndarray, bool]:
    """Power block with per-device energy-ball constraints sum_t |b|^2 <= ball_sq.

    Projected-subgradient ascent on the duals with diminishing steps gets
    close; exact per-device column solves (scalar dual bisection against
    the other devices held fixed) then drive the complementary-slackness
    residuals to zero. Returns (b, duals, converged flag).
    """
    rho, k = h_bar.shape
    lam = np.zeros(k) if duals0 is None else np.asarray(duals0, float).copy()
    a2 = (h_bar.conj() * h_bar).real
    if not np.any(lam > 0):
        # probe whether the energy balls bind at all (skipped when warm
        # duals already say they do)
        b_free = _power_sweeps(h_bar, caps, c1, c2, np.zeros(k),
                               np.zeros_like(h_bar), nonneg)
        usage = np.sum(np.abs(b_free) ** 2, axis=0)
        if np.all(usage <= ball_sq * (1 + 1e-10)):
            return b_free, np.zeros(k), True
    b = np.zeros_like(h_bar) if b0 is None else np.asarray(b0).copy()

    step0 = settings.dual_step0
    if step0 is None:
        step0 = 1.0 / float(np.mean(ball_sq))
    # warm duals need only a short correction before the exact polish
    dual_iters = (settings.dual_max_iters if duals0 is None
                  else min(settings.dual_max_iters, 5))
    for it in range(1, dual_iters + 1):
        b = _power_sweeps(h_bar, caps, c1, c2, lam, b, nonneg,
                          tol=1e-10, max_sweeps=60)
        usage = np.sum(np.abs(b) ** 2, axis=0)
        viol = usage - ball_sq
        if np.all(np.abs(lam * viol) < 1e-12) and np.all(viol <= 1e-12 * ball_sq):
            break
        lam = np.maximum(0.0, lam + step0 / np.sqrt(it) * viol)

    # Cyclic exact column minimization to a fixpoint, with an exact line
    # search along each cycle's displacement (the objective is quadratic and
    # the feasible set convex, so any t in [0, t_max] stays feasible).
    c = h_bar * b
    total = c.sum(axis=1)
    converged = False
    prev_obj = _power_objective(h_bar, b, c1, c2)
    for _ in range(200):
        b_cycle = b.copy()
        for j in range(k):
            rest = total - c[:, j]
            num = np.conj(h_bar[:, j]) * (c1 * (k - rest) + c2)
            den = (c1 + c2) * a2[:, j]
            new, lam_j = _column_solve(num, den, float(caps[j]),
                                       float(ball_sq[j]), nonneg)
            lam[j] = lam_j
            b[:, j] = new
            c[:, j] = h_bar[:, j] * new
            total = rest + c[:, j]
        obj = _power_objective(h_bar, b, c1, c2)
        step = b - b_cycle
        if float(np.max(np.abs(step))) > 0.0:
            # extrapolate along the cycle displacement and project back onto
            # the caps and energy balls; the zigzag of cyclic minimization
            # on active ball boundaries makes plain steps infeasible, but a
            # projected long step along the common mode still descends
            best = None
            for t in (2.0, 4.0, 8.0, 16.0, 32.0):
                cand = b_cycle + t * step
                if nonneg:
                    cand = np.maximum(cand.real, 0.0).astype(cand.dtype)
                mag = np.abs(cand)
                over = mag > caps[None, :]
                if np.any(over):
                    cand = np.where(over, cand * (caps[None, :] / np.where(mag > 0, mag, 1.0)), cand)
                use = np.sum((cand.conj() * cand).real, axis=0)
                scale = np.sqrt(np.minimum(ball_sq / np.maximum(use, 1e-300), 1.0))
                cand = cand * scale[None, :]
                f_cand = _power_objective(h_bar, cand, c1, c2)
                if f_cand < obj - 1e-13 * abs(obj) and (best is None or f_cand < best[0]):
                    best = (f_cand, cand)
            # accept only clear improvements, so the loop always exits
            # at an exact cyclic fixpoint with consistent duals
            if best is not None:
                obj, b = best
                c = h_bar * b
                total = c.sum(axis=1)
        if prev_obj - obj < polish_tol * max(abs(prev_obj), 1e-300):
            converged = True
            break
        prev_obj = obj
    if b0 is not None and duals0 is not None:
        # never return a point worse than the warm start (which came from a
        # previous feasible solve); this keeps outer block descent monotone
        b0_arr = np.asarray(b0)
        usage0 = np.sum((b0_arr.conj() * b0_arr).real, axis=0)
        if (np.all(usage0 <= ball_sq * (1 + 1e-12))
                and np.all(np.abs(b0_arr) <= caps[None, :] * (1 + 1e-12))
                and _power_objective(h_bar, b0_arr, c1, c2)
                < _power_objective(h_bar, b, c1, c2)):
            return b0_arr.copy(), np.asarray(duals0, float).copy(), converged
    return b, lam, converged


def power_alloc_offline(bar_h: np.ndarray, gammas: Sequence[float],
                        w: GapWeights, budget: PowerBudget,
                        period_index: int, settings: BcdSettings
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Transmit-factor magnitudes for one period of the offline problem.

    bar_h: (rho, K) nonnegative magnitudes |m^H h_tilde_k| per round.
    Returns (b_mags (rho, K), duals (K,)). Satisfies the per-round caps
    exactly and the per-period average constraints within tolerance.
    """
    bar_h = np.atleast_2d(np.asarray(bar_h, dtype=float))
    if np.any(bar_h < 0):
        raise DomainError("channel magnitudes must be nonnegative")
    rho, k = bar_h.shape
    if rho != w.period_len:
        raise DomainError("bar_h row count must equal the period length")
    gammas = np.asarray(gammas, dtype=float)
    c1, c2 = _period_weight_coeffs(gammas, w, k)
    caps = np.sqrt(budget.d * budget.p_max)
    ball_sq = rho * budget.d * budget.p_avg
    if rho == 1:
        # single-round period: the average constraint is a second cap
        caps = np.minimum(caps, np.sqrt(ball_sq))
        b = _power_sweeps(bar_h, caps, c1, c2, np.zeros(k),
                          np.zeros_like(bar_h), nonneg=True)
        return b, np.zeros(k)
    b, lam, _ = _solve_power(bar_h, caps, ball_sq, c1, c2, settings, nonneg=True)
    return b.real, lam


def _period_weight_coeffs(gammas: np.ndarray, w: GapWeights, k: int
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Per-round objective coefficients gamma*omega/K^2 with the horizon at
    the period end (the cross-period decay factor is a common constant)."""
    rho = w.period_len
    c1 = np.empty(rho)
    c2 = np.empty(rho)
    for i in range(rho):
        w1, w2 = omega(i + 1, rho, w)
        c1[i] = gammas[i] * w1 / k ** 2
        c2[i] = gammas[i] * w2 / k ** 2
    return c1, c2


def power_alloc_online(bar_h: np.ndarray, queues: np.ndarray, v_r: float,
                       omega2: float, decay: float, iota_sum: float,
                       budget: PowerBudget) -> np.ndarray:
    """Closed-form online transmit magnitudes:
    min{ W a_k / (W a_k^2 + e_k), sqrt(P_max) } with
    W = V_r * decay * omega2 * sum(iota^2) / K^4."""
    a = np.atleast_1d(np.asarray(bar_h, dtype=float))
    e = np.atleast_1d(np.asarray(queues, dtype=float))
    k = a.shape[0]
    if np.any(e < 0):
        raise DomainError("queue values must be nonnegative")
    if iota_sum <= 0:
        return np.zeros(k)
    weight = v_r * decay * omega2 * iota_sum / k ** 4
    caps = np.sqrt(budget.p_max)
    out = np.zeros(k)
    for j in range(k):
        denom = weight * a[j] ** 2 + e[j]
        if denom <= 0:
            # no queue pressure and no gap weight: any power is costless, send none
            out[j] = 0.0 if weight == 0 else min(1.0 / a[j], caps[j]) if a[j] > 0 else 0.0
            continue
        out[j] = min(weight * a[j] / denom, caps[j])
    return out


# ---------------------------------------------------------------------------
# Receiver design
# ---------------------------------------------------------------------------

def receiver_offline(h_tilde: np.ndarray, b: np.ndarray, omega1: float,
                     omega2: float, d: int, sigma_z_sq: float) -> np.ndarray:
    """Closed-form receive beamformer of the offline per-round subproblem:
    m = A^{-1} (K w1 + w2) h_s with
    A = w1 h_s h_s^H + w2 sum |b_k|^2 h_k h_k^H + w2 d sigma^2 I."""
    h = np.atleast_2d(np.asarray(h_tilde, dtype=complex))
    b = np.asarray(b, dtype=complex)
    m_dim, k = h.shape
    h_s = h @ b
    a = (omega1 * np.outer(h_s, h_s.conj())
         + omega2 * (h * (np.abs(b) ** 2)[None, :]) @ h.conj().T
         + omega2 * d * sigma_z_sq * np.eye(m_dim))
    rhs = (k * omega1 + omega2) * h_s
    try:
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(a) @ rhs


def receiver_online(h_tilde: np.ndarray, b: np.ndarray,
                    sigma_z_sq: float) -> np.ndarray:
    """Closed-form online receive beamformer:
    m = (sum |b_k|^2 h_k h_k^H + sigma^2 I)^{-1} sum h_k b_k."""
    h = np.atleast_2d(np.asarray(h_tilde, dtype=complex))
    b = np.asarray(b, dtype=complex)
    m_dim = h.shape[0]
    a = (h * (np.abs(b) ** 2)[None, :]) @ h.conj().T + sigma_z_sq * np.eye(m_dim)
    rhs = h @ b
    try:
        return np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(a) @ rhs


# ---------------------------------------------------------------------------
# IRS phase refinement
# ---------------------------------------------------------------------------

def _phase_decomposition(state: ChannelState, m: np.ndarray, b: np.ndarray):
    """Per-element / per-device linear decomposition of the alignment terms:
    m^H h_tilde_k b_k = direct_k + sum_n e^{j theta_n} phi[n, k]."""
    mg = m.conj() @ state.g  # (N,)
    phi = mg[:, None] * state.h_r * b[None, :]  # (N, K)
    direct = (m.conj() @ state.h_d) * b  # (K,)
    return phi, direct


def phase_objective(state: ChannelState, m: np.ndarray, b: np.ndarray,
                    omega1: float, omega2: float, phases: IrsPhases) -> float:
    """Objective of the phase subproblem: w1 |sum_k c_k - K|^2 + w2 sum |c_k - 1|^2."""
    h = effective_channels(state, phases)
    c = (m.conj() @ h) * b
    k = c.shape[0]
    return float(omega1 * abs(np.sum(c) - k) ** 2
                 + omega2 * np.sum(np.abs(c - 1.0) ** 2))


def refine_phases(state: ChannelState, m: np.ndarray, b: np.ndarray,
                  omega1: float, omega2: float, start: IrsPhases,
                  settings: BcdSettings) -> IrsPhases:
    """Element-wise successive refinement of the IRS phases.

    Each element's contribution to the objective reduces to a single
    sinusoid 2 Re{e^{j theta} q_n}; the continuous update takes its argmin,
    the quantized update the exact grid argmin (one of the two grid
    neighbours of the continuous optimum), or plain nearest-point rounding
    when settings.nearest_rounding is set.
    """
    n = state.num_elements
    quant = settings.quant_bits
    if n == 0:
        return IrsPhases(np.zeros(0), quant)
    m = np.asarray(m, dtype=complex)
    b = np.asarray(b, dtype=complex)
    theta = np.mod(np.asarray(start.theta, float).copy(), 2 * np.pi)
    if quant is not None:
        grid_step = 2 * np.pi / (2 ** quant)
        theta = IrsPhases(theta, quant).theta
    phi, direct = _phase_decomposition(state, m, b)
    k = b.shape[0]
    psi = phi.sum(axis=1)  # (N,) bias-term couplings
    x = np.exp(1j * theta)
    bias_tot = np.sum(direct) - k + x @ psi  # scalar: sum_k c_k - K
    dev_tot = (direct - 1.0) + x @ phi  # (K,): c_k - 1

    def objective() -> float:
        return float(omega1 * abs(bias_tot) ** 2
                     + omega2 * np.sum(np.abs(dev_tot) ** 2))

    prev = objective()
    for _ in range(settings.phase_sweeps_max):
        for i in range(n):
            bias_rest = bias_tot - x[i] * psi[i]
            dev_rest = dev_tot - x[i] * phi[i]
            q = omega1 * psi[i] * np.conj(bias_rest) + omega2 * np.sum(phi[i] * np.conj(dev_rest))
            if q != 0:
                cont = np.mod(np.pi - np.angle(q), 2 * np.pi)
                if quant is None:
                    theta[i] = cont
                elif settings.nearest_rounding:
                    idx = int(np.rint(cont / grid_step)) % (2 ** quant)
                    theta[i] = idx * grid_step
                else:
                    lo = int(np.floor(cont / grid_step))
                    cands = [(lo % (2 ** quant)) * grid_step,
                             ((lo + 1) % (2 ** quant)) * grid_step]
                    vals = [(np.exp(1j * th) * q).real for th in cands]
                    theta[i] = cands[int(np.argmin(vals))]
                x[i] = np.exp(1j * theta[i])
            bias_tot = bias_rest + x[i] * psi[i]
            dev_tot = dev_rest + x[i] * phi[i]
        # refresh the running sums to stop numerical drift
        bias_tot = np.sum(direct) - k + x @ psi
        dev_tot = (direct - 1.0) + x @ phi
        cur = objective()
        if prev - cur < settings.rel_tol * max(abs(prev), 1e-30):
            break
        prev = cur
    return IrsPhases(theta, quant)


# ---------------------------------------------------------------------------
# Full solvers
# ---------------------------------------------------------------------------

def _init_round(state: ChannelState, quant: int | None, seed_key) -> IrsPhases:
    rng = np.random.default_rng(seed_key)
    theta = rng.uniform(0.0, 2 * np.pi, size=state.num_elements)
    return IrsPhases(theta, quant)


def _period_objective(designs: list[RoundDesign], states: Sequence[ChannelState],
                      gammas: np.ndarray, noise: NoiseModel, w: GapWeights,
                      d: int, weights: tuple[np.ndarray, np.ndarray]) -> float:
    w1s, w2s = weights
    total = 0.0
    for i, (design, state) in enumerate(zip(designs, states)):
        bias_sq, mse = error_terms_offline(design, state, gammas[i], noise, d)
        total += w1s[i] * bias_sq + w2s[i] * mse
    return total


def solve_p1_period(states: Sequence[ChannelState], gammas: Sequence[float],
                    w: GapWeights, budget: PowerBudget, settings: BcdSettings,
                    noise: NoiseModel,
                    weights_override: tuple[np.ndarray, np.ndarray] | None = None,
                    ) -> PeriodDesign:
    """BCD on one period of the offline problem: transmit factors (with the
    average-power duals), per-round receivers, per-round phase refinement.

    `weights_override` replaces the per-round (omega1, omega2) weights, used
    by the omniscient online-normalization comparator (omega1 forced to 0).
    """
    rho = len(states)
    if rho != w.period_len or len(gammas) != rho:
        raise DomainError("need one channel state and gamma per round")
    gammas = np.asarray(gammas, dtype=float)
    k = states[0].num_devices
    d = budget.d
    if weights_override is None:
        pairs = [omega(i + 1, rho, w) for i in range(rho)]
        w1s = np.array([p[0] for p in pairs])
        w2s = np.array([p[1] for p in pairs])
    else:
        w1s, w2s = (np.asarray(weights_override[0], float),
                    np.asarray(weights_override[1], float))
    c1 = gammas * w1s / k ** 2
    c2 = gammas * w2s / k ** 2

    caps = np.sqrt(budget.d * budget.p_max)
    ball_sq = rho * budget.d * budget.p_avg
    single_round = rho == 1
    if single_round:
        caps = np.minimum(caps, np.sqrt(ball_sq))

    phases = [_init_round(s, settings.quant_bits, [settings.init_seed, i])
              for i, s in enumerate(states)]
    h_eff = [effective_channels(s, p) for s, p in zip(states, phases)]
    m0 = np.ones(states[0].num_antennas, dtype=complex) / np.sqrt(states[0].num_antennas)
    ms = [m0.copy() for _ in range(rho)]
    b = np.zeros((rho, k), dtype=complex)
    for i in range(rho):
        hbar = ms[i].conj() @ h_eff[i]
        for j in range(k):
            if hbar[j] != 0:
                mag = min(1.0 / abs(hbar[j]), caps[j])
                b[i, j] = align_phase(mag, hbar[j])
    if not single_round:
        usage = np.sum(np.abs(b) ** 2, axis=0)
        over = usage > ball_sq
        if np.any(over):
            b[:, over] *= np.sqrt(ball_sq[over] / usage[over])[None, :]
    for i in range(rho):
        ms[i] = receiver_offline(h_eff[i], b[i], w1s[i], w2s[i], d, noise.sigma_z_sq)

    def designs() -> list[RoundDesign]:
        return [RoundDesign(b[i].copy(), ms[i].copy(), phases[i])
                for i in range(rho)]

    weights = (w1s, w2s)
    trace: list[float] = [_period_objective(designs(), states, gammas, noise, w, d, weights)]
    block_trace: list[tuple[int, str, float]] = [(0, "init", trace[0])]
    duals = np.zeros(k)
    dual_ok = True
    for it in range(1, settings.max_iters + 1):
        hbar = np.stack([ms[i].conj() @ h_eff[i] for i in range(rho)])
        if single_round:
            b = _power_sweeps(hbar, caps, c1, c2, np.zeros(k), b, nonneg=False)
            duals = np.zeros(k)
        else:
            b, duals, dual_ok = _solve_power(
                hbar, caps, ball_sq, c1, c2, settings, nonneg=False,
                duals0=duals, b0=b,
                polish_tol=max(1e-13, settings.rel_tol * 1e-3))
        obj = _period_objective(designs(), states, gammas, noise, w, d, weights)
        block_trace.append((it, "power", obj))

        for i in range(rho):
            ms[i] = receiver_offline(h_eff[i], b[i], w1s[i], w2s[i], d, noise.sigma_z_sq)
        # exact move along the scale degeneracy (b -> b/s, m -> s m keeps the
        # alignment fixed and shrinks the noise term while power headroom lasts)
        mags = np.abs(b)
        s_cap = float(np.max(mags / caps[None, :])) if mags.size else 1.0
        usage = np.sum(mags ** 2, axis=0)
        s_ball = float(np.max(np.sqrt(usage / ball_sq))) if not single_round else 0.0
        s = max(s_cap, s_ball)
        if 0.0 < s < 1.0:
            b = b / s
            for i in range(rho):
                ms[i] = ms[i] * s
        obj = _period_objective(designs(), states, gammas, noise, w, d, weights)
        block_trace.append((it, "receiver", obj))

        for i in range(rho):
            phases[i] = refine_phases(states[i], ms[i], b[i], w1s[i], w2s[i],
                                      phases[i], settings)
            h_eff[i] = effective_channels(states[i], phases[i])
        obj = _period_objective(designs(), states, gammas, noise, w, d, weights)
        block_trace.append((it, "phases", obj))

        trace.append(obj)
        if trace[-2] - obj < settings.rel_tol * max(abs(trace[-2]), 1e-30):
            break

    usage = np.sum(np.abs(b) ** 2, axis=0)
    slack = duals * (ball_sq - usage)
    return PeriodDesign(designs(), trace, duals, block_trace, dual_ok, slack)


def online_round_weight(round_index: int, w: GapWeights, v_r: float) -> float:
    """Full weight on the online MSE term: V_r (1-mu a)^((R-r) rho) omega2^(t)."""
    r = (round_index - 1) // w.period_len + 1
    horizon = r * w.period_len
    decay = w.contraction ** ((w.num_periods - r) * w.period_len)
    _, w2 = omega(round_index, horizon, w)
    return v_r * decay * w2


def solve_p2_round(state: ChannelState, stats: GradientStats,
                   queues: np.ndarray, v_r: float, round_index: int,
                   w: GapWeights, budget: PowerBudget,
                   settings: BcdSettings, noise: NoiseModel) -> RoundSolution:
    """BCD on the online per-round problem: weighted MSE plus queue-weighted
    energy, subject to the per-symbol power caps."""
    e = np.atleast_1d(np.asarray(queues, dtype=float))
    if np.any(e < 0):
        raise DomainError("queue values must be nonnegative")
    k = state.num_devices
    d = budget.d
    total_var = stats.iota_sum
    weight = online_round_weight(round_index, w, v_r) * total_var / k ** 4
    caps = np.sqrt(budget.p_max)

    phases = _init_round(state, settings.quant_bits,
                         [settings.init_seed, round_index])
    h_eff = effective_channels(state, phases)
    m = np.ones(state.num_antennas, dtype=complex) / np.sqrt(state.num_antennas)
    b = np.zeros(k, dtype=complex)

    def objective() -> float:
        c = (m.conj() @ h_eff) * b
        m_sq = float(np.vdot(m, m).real)
        mse_part = float(np.sum(np.abs(c - 1.0) ** 2)) + m_sq * noise.sigma_z_sq
        return d * (weight * mse_part + float(e @ (np.abs(b) ** 2)))

    def power_step():
        nonlocal b
        hbar = m.conj() @ h_eff
        new = np.zeros(k, dtype=complex)
        for j in range(k):
            a2 = abs(hbar[j]) ** 2
            denom = weight * a2 + e[j]
            if denom <= 0 or weight == 0:
                new[j] = 0.0
                continue
            val = weight * np.conj(hbar[j]) / denom
            mag = abs(val)
            new[j] = val if mag <= caps[j] else val * caps[j] / mag
        b = new

    if total_var <= 0 or v_r < 0:
        if v_r < 0:
            raise DomainError("v_r must be nonnegative")
        design = RoundDesign(b, m, phases)
        return RoundSolution(design, [objective()])

    power_step()
    trace = [objective()]
    block_trace = [(0, "init", trace[0])]
    for it in range(1, settings.max_iters + 1):
        power_step()
        block_trace.append((it, "power", objective()))
        m = receiver_online(h_eff, b, noise.sigma_z_sq)
        block_trace.append((it, "receiver", objective()))
        phases = refine_phases(state, m, b, 0.0, 1.0, phases, settings)
        h_eff = effective_channels(state, phases)
        obj = objective()
        block_trace.append((it, "phases", obj))
        trace.append(obj)
        if trace[-2] - obj < settings.rel_tol * max(abs(trace[-2]), 1e-30):
            break
    return RoundSolution(RoundDesign(b, m, phases), trace, block_trace)

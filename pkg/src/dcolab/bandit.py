"""Stage 2: context-free bandits over a sku's top-5 creatives.

Arms carry Beta posteriors over their CTR. Selection policies are Thompson
sampling, UCB1, smoothed epsilon-greedy and uniform random; every argmax
breaks ties towards the lowest index. :func:`simulate` replays a policy
against known CTRs and records cumulative expected (gap) regret.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument
from .numerics import RngStream


@dataclass(frozen=True)
class ArmState:
    creative_id: int
    pulls: int = 0
    clicks: int = 0
    beta_a: float = 1.0
    beta_b: float = 1.0

    @property
    def mean(self) -> float:
        """Empirical CTR; the prior mean for an unpulled arm."""
        if self.pulls == 0:
            return self.beta_a / (self.beta_a + self.beta_b)
        return self.clicks / self.pulls


def init_arms(top5, prior=(1.0, 1.0), max_arms: int = 5, priors=None) -> list[ArmState]:
    """Fresh arms; ``priors`` optionally gives a per-arm ``(a, b)`` (informed start)."""
    ids = [int(c) for c in top5]
    if not ids:
        raise InvalidArgument("no arms")
    if len(ids) > max_arms:
        raise InvalidArgument(f"{len(ids)} arms exceed the limit of {max_arms}")
    if len(set(ids)) != len(ids):
        raise InvalidArgument("duplicate creative ids")
    priors = [prior] * len(ids) if priors is None else list(priors)
    for a, b in priors:
        if a <= 0 or b <= 0:
            raise InvalidArgument("Beta prior parameters must be positive")
    return [ArmState(c, 0, 0, float(a), float(b)) for c, (a, b) in zip(ids, priors)]


def informed_priors(scores, strength: float = 20.0):
    """Beta priors centred on predicted CTRs with ``strength`` pseudo-impressions."""
    s = np.clip(np.asarray(scores, dtype=float), 1e-4, 1 - 1e-4)
    return [(float(strength * p), float(strength * (1 - p))) for p in s]


def update(arm: ArmState, reward: int) -> ArmState:
    if reward not in (0, 1):
        raise InvalidArgument("reward must be 0 or 1")
    return replace(arm, pulls=arm.pulls + 1, clicks=arm.clicks + reward,
                   beta_a=arm.beta_a + reward, beta_b=arm.beta_b + 1 - reward)


def select_thompson(arms, rng: RngStream) -> int:
    a = np.array([x.beta_a for x in arms])
    b = np.array([x.beta_b for x in arms])
    return int(np.argmax(rng.beta(a, b)))


def select_ucb(arms, t: int) -> int:
    if t < 1:
        raise InvalidArgument("t must be >= 1")
    for i, x in enumerate(arms):
        if x.pulls == 0:
            return i
    log_t = math.log(t)
    vals = [x.clicks / x.pulls + math.sqrt(2.0 * log_t / x.pulls) for x in arms]
    return int(np.argmax(vals))


def epsilon_schedule(eps0: float, t: int, warmup: int | None) -> float:
    """Smoothed exploration rate ``eps0 * min(1, warmup / t)``; constant if warmup is None."""
    if warmup is None:
        return eps0
    return eps0 * min(1.0, warmup / max(t, 1))


def select_epsilon(arms, eps: float, rng: RngStream) -> int:
    if not (0.0 <= eps <= 1.0):
        raise InvalidArgument("eps must lie in [0, 1]")
    if eps > 0 and rng.uniform() < eps:
        return int(rng.integers(len(arms)))
    return int(np.argmax([x.mean for x in arms]))


def select_random(arms, rng: RngStream) -> int:
    return int(rng.integers(len(arms)))


# ------------------------------------------------------------------ policies
@dataclass(frozen=True)
class Policy:
    """A named selection rule: ``thompson``, ``ucb``, ``epsilon`` or ``random``."""

    kind: str
    eps: float = 0.1
    warmup: int | None = 1000

    @property
    def name(self) -> str:
        if self.kind == "epsilon":
            sched = "fixed" if self.warmup is None else f"decay{self.warmup}"
            return f"epsilon({self.eps:g},{sched})"
        return self.kind

    def select(self, arms, t: int, rng: RngStream) -> int:
        if self.kind == "thompson":
            return select_thompson(arms, rng)
        if self.kind == "ucb":
            return select_ucb(arms, t)
        if self.kind == "epsilon":
            return select_epsilon(arms, epsilon_schedule(self.eps, t, self.warmup), rng)
        if self.kind == "random":
            return select_random(arms, rng)
        raise InvalidArgument(f"unknown policy {self.kind!r}")


THOMPSON = Policy("thompson")
UCB = Policy("ucb")
RANDOM = Policy("random")


@dataclass
class RegretCurve:
    regret: np.ndarray          # cumulative expected regret after each step
    policy: str
    seed: int
    pulls: np.ndarray           # final pulls per arm
    clicks: np.ndarray

    def rows(self, every: int = 1):
        """CSV rows ``(step, cumulative_regret, policy, seed)``; steps are 1-based."""
        steps = np.arange(every, self.regret.size + 1, every)
        if steps.size == 0 or steps[-1] != self.regret.size:
            steps = np.append(steps, self.regret.size)
        return [(int(s), float(self.regret[s - 1]), self.policy, self.seed) for s in steps]


def simulate(policy: Policy, true_ctrs, T: int, rng: RngStream, seed: int = 0,
             priors=None) -> RegretCurve:
    """Play ``T`` rounds; rewards are ``u_t < ctr[arm]`` with pre-drawn uniforms.

    The reward uniforms come from their own child stream, so policies run with
    the same ``rng`` face the same reward noise. Runs on plain arrays for
    speed; the selection rules are the same as the ``select_*`` functions.
    """
    ctr = np.asarray(true_ctrs, dtype=float)
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    if ctr.size == 0 or np.any((ctr < 0) | (ctr > 1)):
        raise InvalidArgument("true CTRs must be non-empty and lie in [0, 1]")
    k = ctr.size
    u = rng.child("reward").uniform(size=T)
    sel = rng.child("select")
    gaps = ctr.max() - ctr
    pa = np.ones(k) if priors is None else np.array([p[0] for p in priors], dtype=float)
    pb = np.ones(k) if priors is None else np.array([p[1] for p in priors], dtype=float)
    pulls = np.zeros(k, dtype=np.int64)
    clicks = np.zeros(k, dtype=np.int64)
    chosen = np.empty(T, dtype=np.int64)

    if policy.kind == "random":
        chosen[:] = sel.integers(k, size=T)
        rewards = u < ctr[chosen]
        pulls = np.bincount(chosen, minlength=k)
        clicks = np.bincount(chosen, weights=rewards, minlength=k).astype(np.int64)
    else:
        gen = sel.generator
        ctr_l = ctr.tolist()
        p_l, c_l = [0] * k, [0] * k
        a_l, b_l = pa.tolist(), pb.tolist()
        explore = sel.child("explore").uniform(size=T) if policy.kind == "epsilon" else None
        rand_arm = sel.child("arm").integers(k, size=T) if policy.kind == "epsilon" else None
        for t in range(T):
            if policy.kind == "thompson":
                i = int(np.argmax(gen.beta(a_l, b_l)))
            elif policy.kind == "ucb":
                i = _ucb_index(p_l, c_l, t + 1)
            elif policy.kind == "epsilon":
                eps = epsilon_schedule(policy.eps, t + 1, policy.warmup)
                if explore[t] < eps:
                    i = int(rand_arm[t])
                else:
                    means = [c_l[j] / p_l[j] if p_l[j] else a_l[j] / (a_l[j] + b_l[j])
                             for j in range(k)]
                    i = max(range(k), key=means.__getitem__)      # first max on ties
            else:
                raise InvalidArgument(f"unknown policy {policy.kind!r}")
            r = 1 if u[t] < ctr_l[i] else 0
            p_l[i] += 1
            c_l[i] += r
            if policy.kind == "thompson":
                a_l[i] += r
                b_l[i] += 1 - r
            chosen[t] = i
        pulls, clicks = np.array(p_l), np.array(c_l)
    return RegretCurve(np.cumsum(gaps[chosen]), policy.name, seed, pulls, clicks)


def _ucb_index(pulls, clicks, t: int) -> int:
    best, best_v = 0, -math.inf
    log_t = math.log(t)
    for j, n in enumerate(pulls):
        if n == 0:
            return j
        v = clicks[j] / n + math.sqrt(2.0 * log_t / n)
        if v > best_v:
            best, best_v = j, v
    return best


def mean_regret(policy: Policy, true_ctrs, T: int, seeds, base_seed: int = 0) -> np.ndarray:
    """Cumulative regret curve averaged over ``seeds`` (one stream per seed)."""
    curves = [simulate(policy, true_ctrs, T, RngStream(base_seed, s), seed=s).regret for s in seeds]
    return np.mean(curves, axis=0)

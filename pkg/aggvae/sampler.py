"""No-U-Turn sampler on R^d with a diagonal Euclidean metric.

Targets are given as ``log_density_and_grad(q) -> (log p(q), d log p / dq)``.
Warmup adapts the step size by dual averaging towards ``target_accept`` and
the diagonal inverse mass matrix from draw variances collected in windows
that double in length. Transitions use the slice-variable tree expansion and
the U-turn criterion; a trajectory whose energy error exceeds ``delta_max``
is flagged divergent.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

LogDensity = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class NUTSOptions:
    target_accept: float = 0.8
    max_depth: int = 10
    delta_max: float = 1000.0
    init_step_size: Optional[float] = None

    # dual averaging
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    mu_factor: float = 10.0

    # mass adaptation windows
    min_no_window: int = 20
    large_threshold: int = 150
    large_init_buffer: int = 75
    large_term_buffer: int = 50
    large_base_window: int = 25

    log_every: int = 0


@dataclass
class DualAveragingState:
    mu: float
    log_eps: float
    log_eps_bar: float = 0.0
    h_bar: float = 0.0
    t: int = 0

    def update(self, accept_stat: float, target: float, gamma: float, t0: float, kappa: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (target - accept_stat)
        self.log_eps = self.mu - (math.sqrt(self.t) / gamma) * self.h_bar
        w = self.t ** (-kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def final(self) -> float:
        return math.exp(self.log_eps_bar)


class RunningDiagVar:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def var(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.mean)
        return self.m2 / (self.n - 1)

    def regularized(self) -> np.ndarray:
        # shrink towards 1e-3, as Stan does
        n = self.n
        return (n / (n + 5.0)) * self.var() + 1e-3 * (5.0 / (n + 5.0))


def make_warmup_windows(num_warmup: int, options: NUTSOptions = None) -> List[Tuple[int, int]]:
    """Doubling adaptation windows between an initial and a terminal buffer."""
    options = options or NUTSOptions()
    if num_warmup <= options.min_no_window:
        return []

    if num_warmup >= options.large_threshold:
        init_buffer = options.large_init_buffer
        term_buffer = options.large_term_buffer
        base_window = options.large_base_window
    else:
        init_buffer = max(1, int(0.15 * num_warmup))
        term_buffer = max(1, int(0.10 * num_warmup))
        base_window = max(1, int((num_warmup - init_buffer - term_buffer) / 3.0))

    start = init_buffer
    end_middle = num_warmup - term_buffer
    if end_middle <= start:
        return []

    win = min(base_window, end_middle - start)
    windows: List[Tuple[int, int]] = []
    while start + win < end_middle:
        # a final window shorter than the next doubling is merged into it
        if start + 3 * win > end_middle:
            break
        windows.append((start, start + win))
        start += win
        win = 2 * win
    windows.append((start, end_middle))
    return windows


@dataclass
class _State:
    q: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


@dataclass
class _Tree:
    minus: _State
    plus: _State
    proposal: _State
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    n_leapfrog: int
    divergent: bool


def kinetic(p: np.ndarray, inv_mass: np.ndarray) -> float:
    return 0.5 * float(np.sum(p * p * inv_mass))


def leapfrog(target: LogDensity, state: _State, eps: float, inv_mass: np.ndarray) -> _State:
    p_half = state.p + 0.5 * eps * state.grad
    q_new = state.q + eps * inv_mass * p_half
    logp, grad = target(q_new)
    if not np.isfinite(logp):
        return _State(q_new, p_half, -np.inf, np.zeros_like(q_new))
    p_new = p_half + 0.5 * eps * grad
    return _State(q_new, p_new, float(logp), np.asarray(grad, dtype=float))


def _hamiltonian(state: _State, inv_mass: np.ndarray) -> float:
    return -state.logp + kinetic(state.p, inv_mass)


def is_uturn(minus: _State, plus: _State, inv_mass: np.ndarray) -> bool:
    dq = plus.q - minus.q
    return bool(np.dot(dq, inv_mass * minus.p) < 0.0) or bool(np.dot(dq, inv_mass * plus.p) < 0.0)


def find_reasonable_step_size(
    target: LogDensity, state: _State, inv_mass: np.ndarray, generator: np.random.Generator
) -> float:
    eps = 1.0
    p0 = generator.standard_normal(state.q.shape) / np.sqrt(inv_mass)
    start = _State(state.q, p0, state.logp, state.grad)
    h0 = _hamiltonian(start, inv_mass)

    def accept(eps: float) -> float:
        moved = leapfrog(target, start, eps, inv_mass)
        h1 = _hamiltonian(moved, inv_mass)
        return math.exp(min(0.0, h0 - h1)) if np.isfinite(h1) else 0.0

    direction = 1.0 if accept(eps) > 0.5 else -1.0
    while 1e-6 < eps < 1e2:
        eps *= 2.0 ** direction
        alpha = accept(eps)
        if (direction > 0 and alpha < 0.5) or (direction < 0 and alpha > 0.5):
            break
    return float(eps)


def build_tree(
    target: LogDensity,
    state: _State,
    log_u: float,
    direction: int,
    depth: int,
    eps: float,
    inv_mass: np.ndarray,
    h0: float,
    delta_max: float,
    generator: np.random.Generator,
) -> _Tree:
    if depth == 0:
        moved = leapfrog(target, state, direction * eps, inv_mass)
        h1 = _hamiltonian(moved, inv_mass)
        if not np.isfinite(h1):
            return _Tree(state, state, state, 0, False, 0.0, 1, 1, True)

        divergent = (h1 - h0) > delta_max
        n_valid = 1 if log_u <= -h1 else 0
        keep_going = (log_u < delta_max - h1) and not divergent
        alpha = math.exp(min(0.0, h0 - h1))
        return _Tree(moved, moved, moved, n_valid, keep_going, alpha, 1, 1, divergent)

    tree = build_tree(target, state, log_u, direction, depth - 1, eps, inv_mass, h0, delta_max, generator)
    if not tree.keep_going or tree.divergent:
        return tree

    edge = tree.minus if direction == -1 else tree.plus
    other = build_tree(target, edge, log_u, direction, depth - 1, eps, inv_mass, h0, delta_max, generator)
    if direction == -1:
        tree.minus = other.minus
    else:
        tree.plus = other.plus

    total = tree.n_valid + other.n_valid
    if total > 0 and generator.random() < other.n_valid / total:
        tree.proposal = other.proposal

    tree.n_valid = total
    tree.keep_going = other.keep_going and not is_uturn(tree.minus, tree.plus, inv_mass)
    tree.alpha_sum += other.alpha_sum
    tree.n_alpha += other.n_alpha
    tree.n_leapfrog += other.n_leapfrog
    tree.divergent = tree.divergent or other.divergent
    return tree


@dataclass
class Transition:
    state: _State
    accept_stat: float
    n_leapfrog: int
    depth: int
    divergent: bool


def nuts_transition(
    target: LogDensity,
    current: _State,
    eps: float,
    inv_mass: np.ndarray,
    options: NUTSOptions,
    generator: np.random.Generator,
) -> Transition:
    p0 = generator.standard_normal(current.q.shape) / np.sqrt(inv_mass)
    start = _State(current.q, p0, current.logp, current.grad)
    h0 = _hamiltonian(start, inv_mass)
    log_u = -h0 + math.log(generator.random())

    minus = plus = start
    proposal = current
    n_valid = 1
    keep_going = True
    alpha_sum, n_alpha, n_leapfrog = 0.0, 0, 0
    divergent = False
    depth = 0

    while keep_going and depth < options.max_depth:
        direction = -1 if generator.random() < 0.5 else 1
        edge = minus if direction == -1 else plus
        tree = build_tree(
            target, edge, log_u, direction, depth, eps, inv_mass, h0, options.delta_max, generator
        )
        if direction == -1:
            minus = tree.minus
        else:
            plus = tree.plus

        if tree.keep_going and not tree.divergent and generator.random() < min(1.0, tree.n_valid / n_valid):
            proposal = tree.proposal

        n_valid += tree.n_valid
        keep_going = tree.keep_going and not is_uturn(minus, plus, inv_mass)
        alpha_sum += tree.alpha_sum
        n_alpha += tree.n_alpha
        n_leapfrog += tree.n_leapfrog
        divergent = divergent or tree.divergent
        depth += 1

    state = _State(proposal.q, proposal.p, proposal.logp, proposal.grad)
    return Transition(state, alpha_sum / max(1, n_alpha), n_leapfrog, depth, divergent)


@dataclass
class ChainResult:
    draws: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    tree_depth: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    warmup_leapfrog: int
    warmup_divergent: int
    warmup_seconds: float
    sampling_seconds: float
    extras: dict = field(default_factory=dict)


def sample_chain(
    target: LogDensity,
    q0: np.ndarray,
    num_warmup: int,
    num_samples: int,
    generator: np.random.Generator,
    options: Optional[NUTSOptions] = None,
    chain: int = 0,
) -> ChainResult:
    options = options or NUTSOptions()
    q0 = np.asarray(q0, dtype=float)
    dim = q0.size
    logp, grad = target(q0)
    if not np.isfinite(logp):
        raise ValueError(f"Chain {chain}: initial point has non-finite log density.")
    state = _State(q0, np.zeros(dim), float(logp), np.asarray(grad, dtype=float))
    inv_mass = np.ones(dim)

    eps = options.init_step_size or find_reasonable_step_size(target, state, inv_mass, generator)
    adapt = DualAveragingState(mu=math.log(options.mu_factor * eps), log_eps=math.log(eps))
    windows = make_warmup_windows(num_warmup, options)
    window_ends = {end: start for start, end in windows}
    in_window = lambda i: any(start <= i < end for start, end in windows)
    variance = RunningDiagVar(dim)
    logger.debug("chain %d: mass windows %s", chain, windows)

    started = time.perf_counter()
    warmup_leapfrog = 0
    warmup_divergent = 0
    for i in range(num_warmup):
        step = nuts_transition(target, state, eps, inv_mass, options, generator)
        state = step.state
        warmup_leapfrog += step.n_leapfrog
        warmup_divergent += int(step.divergent)
        eps = adapt.update(step.accept_stat, options.target_accept, options.gamma, options.t0, options.kappa)

        if in_window(i):
            variance.update(state.q)
        if (i + 1) in window_ends:
            inv_mass = variance.regularized()
            variance = RunningDiagVar(dim)
            eps = find_reasonable_step_size(target, state, inv_mass, generator)
            adapt = DualAveragingState(mu=math.log(options.mu_factor * eps), log_eps=math.log(eps))
            logger.debug("chain %d: window ending %d, step size reset to %.4g", chain, i + 1, eps)

    if num_warmup > 0:
        eps = adapt.final()
    warmup_seconds = time.perf_counter() - started

    draws = np.empty((num_samples, dim))
    accept = np.empty(num_samples)
    n_leapfrog = np.empty(num_samples, dtype=int)
    depth = np.empty(num_samples, dtype=int)
    divergent = np.zeros(num_samples, dtype=bool)

    started = time.perf_counter()
    for i in range(num_samples):
        step = nuts_transition(target, state, eps, inv_mass, options, generator)
        state = step.state
        draws[i] = state.q
        accept[i] = step.accept_stat
        n_leapfrog[i] = step.n_leapfrog
        depth[i] = step.depth
        divergent[i] = step.divergent
        if options.log_every and (i + 1) % options.log_every == 0:
            logger.info("chain %d: %d/%d draws", chain, i + 1, num_samples)
    sampling_seconds = time.perf_counter() - started

    logger.info(
        "chain %d: step size %.4g, mean accept %.3f, %d divergent, %.2fs warmup + %.2fs sampling",
        chain,
        eps,
        float(accept.mean()) if num_samples else float("nan"),
        int(divergent.sum()),
        warmup_seconds,
        sampling_seconds,
    )
    return ChainResult(
        draws=draws,
        accept_stat=accept,
        n_leapfrog=n_leapfrog,
        tree_depth=depth,
        divergent=divergent,
        step_size=float(eps),
        inv_mass=inv_mass,
        warmup_leapfrog=warmup_leapfrog,
        warmup_divergent=warmup_divergent,
        warmup_seconds=warmup_seconds,
        sampling_seconds=sampling_seconds,
    )

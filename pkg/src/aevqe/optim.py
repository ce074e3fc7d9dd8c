"""Classical optimizers for the variational loop.

Every optimizer reports one loss per iteration through an optional callback
``callback(iteration, params, loss) -> bool``; returning ``True`` stops the
run early. Iterations are numbered from 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ansatz import parameter_shift_gradient

LossFn = Callable[[np.ndarray], float]
Callback = Callable[[int, np.ndarray, float], bool]

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass
class OptimizerTrace:
    """Per-iteration history of one optimizer run.

    Attributes:
        params: Parameters after each iteration.
        losses: Loss reported for each iteration.
        evaluations: Loss evaluations spent by the optimizer in each iteration.
        status: ``"max_iter"``, ``"stopped"`` (callback), ``"diverged"`` or ``"stalled"``.
    """

    params: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    evaluations: list[int] = field(default_factory=list)
    status: str = "max_iter"

    @property
    def n_iterations(self) -> int:
        return len(self.losses)

    @property
    def total_evaluations(self) -> int:
        return int(sum(self.evaluations))

    @property
    def final_params(self) -> np.ndarray | None:
        return self.params[-1] if self.params else None

    def record(self, params: np.ndarray, loss: float, evaluations: int) -> None:
        self.params.append(np.array(params, dtype=float))
        self.losses.append(float(loss))
        self.evaluations.append(int(evaluations))


def _finite(value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise FloatingPointError(f"loss evaluated to {value}")
    return value


# --- SPSA ---------------------------------------------------------------------


@dataclass(frozen=True)
class SpsaConfig:
    """SPSA hyperparameters.

    Attributes:
        epsilon: Perturbation size in radians.
        eta: Learning rate.
        max_iter: Iteration budget.
        decay: Use the power-law gain schedules ``eta/k**0.602`` and
            ``epsilon/k**0.101`` instead of fixed gains.
    """

    epsilon: float = 0.1
    eta: float = 0.2
    max_iter: int = 200
    decay: bool = False

    def __post_init__(self) -> None:
        if self.epsilon <= 0 or self.eta <= 0:
            raise ValueError("epsilon and eta must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


def spsa_step(
    params: np.ndarray,
    loss: LossFn,
    config: SpsaConfig,
    rng: np.random.Generator,
    iteration: int = 1,
) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """One SPSA descent step.

    Returns:
        ``(new_params, gradient_estimate, (loss_plus, loss_minus))``.
    """
    theta = np.asarray(params, dtype=float)
    eta, eps = config.eta, config.epsilon
    if config.decay:
        eta = eta / iteration**0.602
        eps = eps / iteration**0.101
    delta = rng.choice(np.array([-1.0, 1.0]), size=theta.shape)
    loss_plus = _finite(loss(theta + eps * delta))
    loss_minus = _finite(loss(theta - eps * delta))
    grad = (loss_plus - loss_minus) / (2 * eps * delta)
    return theta - eta * grad, grad, (loss_plus, loss_minus)


def spsa_minimize(
    params: np.ndarray,
    loss: LossFn,
    config: SpsaConfig,
    rng: np.random.Generator,
    callback: Callback | None = None,
) -> OptimizerTrace:
    """Runs SPSA; the reported loss is the mean of the two perturbed evaluations."""
    trace = OptimizerTrace()
    theta = np.asarray(params, dtype=float)
    for k in range(1, config.max_iter + 1):
        theta, _, (lp, lm) = spsa_step(theta, loss, config, rng, k)
        value = 0.5 * (lp + lm)
        trace.record(theta, value, 2)
        if callback is not None and callback(k, theta, value):
            trace.status = "stopped"
            break
    return trace


# --- batch gradient descent -----------------------------------------------------


def bgd_minimize(
    params: np.ndarray,
    loss: LossFn,
    learning_rate: float,
    max_iter: int,
    callback: Callback | None = None,
    monitor: LossFn | None = None,
    divergence_window: int = 20,
) -> OptimizerTrace:
    """Full-gradient descent with parameter-shift gradients.

    Each iteration spends exactly ``2 * P`` evaluations on the gradient. The
    reported loss comes from ``monitor`` (default: ``loss``) at the updated
    point; that monitoring call is not counted as optimizer work.
    """
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    monitor = loss if monitor is None else monitor
    trace = OptimizerTrace()
    theta = np.asarray(params, dtype=float)
    rises = 0
    previous = None
    for k in range(1, max_iter + 1):
        grad = parameter_shift_gradient(lambda t: _finite(loss(t)), theta)
        if not np.any(np.abs(grad) > 1e-12):
            value = _finite(monitor(theta))
            trace.record(theta, value, 2 * theta.size)
            trace.status = "stalled"
            if callback is not None:
                callback(k, theta, value)
            break
        theta = theta - learning_rate * grad
        value = _finite(monitor(theta))
        trace.record(theta, value, 2 * theta.size)
        if callback is not None and callback(k, theta, value):
            trace.status = "stopped"
            break
        rises = rises + 1 if previous is not None and value > previous else 0
        previous = value
        if rises >= divergence_window:
            trace.status = "diverged"
            break
    return trace


# --- Powell ---------------------------------------------------------------------


def _bracket(f: Callable[[float], float], f0: float, step: float, max_expand: int = 40):
    """Finds ``a < b < c`` (in the search coordinate) with ``f(b) <= f(a), f(c)``."""
    a, fa = 0.0, f0
    b, fb = step, f(step)
    if fb > fa:
        # try the other side before shrinking
        c, fc = -step, f(-step)
        if fc < fa:
            a, fa, b, fb = b, fb, c, fc
        else:
            return (-step, fc), (0.0, f0), (step, fb)
    c = b + (b - a) / GOLDEN
    fc = f(c)
    for _ in range(max_expand):
        if fc >= fb:
            lo, hi = sorted([(a, fa), (c, fc)])
            return lo, (b, fb), hi
        a, fa, b, fb = b, fb, c, fc
        c = b + (b - a) / GOLDEN
        fc = f(c)
    return None


def _golden_search(f: Callable[[float], float], lo: float, mid: tuple[float, float], hi: float, tol: float):
    best_x, best_f = mid
    a, b = lo, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while abs(b - a) > tol:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    for x, fx in ((x1, f1), (x2, f2)):
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def powell_minimize(
    params: np.ndarray,
    loss: LossFn,
    max_iter: int,
    tol: float = 1e-6,
    step: float = 1.0,
    callback: Callback | None = None,
) -> OptimizerTrace:
    """Powell's direction-set method; one iteration is one line search.

    Line searches bracket the minimum by golden-ratio expansion and refine it
    by golden-section search down to ``tol``. If no bracket is found the best
    probed point along the direction is taken instead.
    """
    trace = OptimizerTrace()
    theta = np.asarray(params, dtype=float).copy()
    n = theta.size
    directions = list(np.eye(n))
    current = _finite(loss(theta))
    pending_evals = 1
    k = 0

    def line_search(direction: np.ndarray) -> tuple[float, float, int]:
        count = 0
        probes: dict[float, float] = {0.0: current}

        def f(s: float) -> float:
            nonlocal count
            if s not in probes:
                count += 1
                probes[s] = _finite(loss(theta + s * direction))
            return probes[s]

        bracket = _bracket(f, current, step)
        if bracket is None:
            s_best = min(probes, key=probes.get)
            return s_best, probes[s_best], count
        (lo, _), mid, (hi, _) = bracket
        s_best, f_best = _golden_search(f, lo, mid, hi, tol)
        s_min = min(probes, key=probes.get)
        if probes[s_min] < f_best:
            s_best, f_best = s_min, probes[s_min]
        return s_best, f_best, count

    while k < max_iter:
        start = theta.copy()
        start_loss = current
        biggest_drop, biggest_index = 0.0, 0
        for i, d in enumerate(directions):
            s, value, count = line_search(d)
            drop = current - value
            if value < current:
                theta = theta + s * d
                current = value
            if drop > biggest_drop:
                biggest_drop, biggest_index = drop, i
            k += 1
            trace.record(theta, current, count + pending_evals)
            pending_evals = 0
            if callback is not None and callback(k, theta, current):
                trace.status = "stopped"
                return trace
            if k >= max_iter:
                return trace
        if start_loss - current <= tol * (abs(start_loss) + 1e-12):
            trace.status = "stalled"
            return trace
        new_dir = theta - start
        norm = np.linalg.norm(new_dir)
        if norm > 0:
            directions.pop(biggest_index)
            directions.append(new_dir / norm)
    return trace


# --- genetic algorithm -----------------------------------------------------------


@dataclass(frozen=True)
class GaConfig:
    """Real-valued genetic algorithm settings."""

    population: int = 20
    generations: int = 100
    crossover_rate: float = 0.7
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.1
    elite: int = 1

    def __post_init__(self) -> None:
        if self.population < 4:
            raise ValueError("population must be at least 4")


def ga_minimize(
    dim: int,
    loss: LossFn,
    config: GaConfig,
    rng: np.random.Generator,
    callback: Callback | None = None,
    initial_population: np.ndarray | None = None,
) -> OptimizerTrace:
    """Genetic algorithm: tournament-2 selection, uniform crossover, Gaussian mutation, elitism.

    One iteration is one generation; the reported loss is the best loss seen
    so far, so it never increases.
    """
    pop_size = config.population
    if initial_population is None:
        pop = rng.uniform(-math.pi, math.pi, size=(pop_size, dim))
    else:
        pop = np.array(initial_population, dtype=float).reshape(-1, dim)
        if len(pop) < pop_size:
            extra = rng.uniform(-math.pi, math.pi, size=(pop_size - len(pop), dim))
            pop = np.vstack([pop, extra])
        pop = pop[:pop_size]
    fitness = np.array([_finite(loss(x)) for x in pop])
    pending = pop_size
    trace = OptimizerTrace()
    for gen in range(1, config.generations + 1):
        order = np.argsort(fitness, kind="stable")
        elites = pop[order[: config.elite]]
        elite_fit = fitness[order[: config.elite]]
        children = []
        while len(children) < pop_size - config.elite:
            parents = []
            for _ in range(2):
                i, j = rng.integers(pop_size, size=2)
                parents.append(pop[i] if fitness[i] <= fitness[j] else pop[j])
            child = parents[0].copy()
            if rng.random() < config.crossover_rate:
                mask = rng.random(dim) < 0.5
                child[mask] = parents[1][mask]
            mutate = rng.random(dim) < config.mutation_rate
            child[mutate] += rng.normal(0.0, config.mutation_sigma, size=int(mutate.sum()))
            children.append(child)
        children = np.array(children).reshape(-1, dim)
        child_fit = np.array([_finite(loss(x)) for x in children])
        pop = np.vstack([elites, children])
        fitness = np.concatenate([elite_fit, child_fit])
        best = int(np.argmin(fitness))
        trace.record(pop[best], fitness[best], len(children) + pending)
        pending = 0
        if callback is not None and callback(gen, pop[best], float(fitness[best])):
            trace.status = "stopped"
            break
    return trace


# --- unified front end -------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimizer choice plus its settings, as stored in solver configurations.

    Attributes:
        name: ``"spsa"``, ``"bgd"``, ``"powell"`` or ``"ga"``.
        max_iter: Iteration budget (generations for GA, line searches for Powell).
        epsilon: SPSA perturbation.
        eta: SPSA or BGD learning rate.
        tol: Powell line-search tolerance.
        population: GA population size.
        decay: SPSA gain decay flag.
    """

    name: str = "spsa"
    max_iter: int = 200
    epsilon: float = 0.1
    eta: float = 0.2
    tol: float = 1e-3
    population: int = 20
    decay: bool = False

    def __post_init__(self) -> None:
        if self.name not in ("spsa", "bgd", "powell", "ga"):
            raise ValueError(f"unknown optimizer {self.name!r}")

    def minimize(
        self,
        params: np.ndarray,
        loss: LossFn,
        rng: np.random.Generator,
        callback: Callback | None = None,
        monitor: LossFn | None = None,
    ) -> OptimizerTrace:
        if self.name == "spsa":
            cfg = SpsaConfig(self.epsilon, self.eta, self.max_iter, self.decay)
            return spsa_minimize(params, loss, cfg, rng, callback)
        if self.name == "bgd":
            return bgd_minimize(params, loss, self.eta, self.max_iter, callback, monitor)
        if self.name == "powell":
            return powell_minimize(params, loss, self.max_iter, self.tol, callback=callback)
        cfg = GaConfig(population=self.population, generations=self.max_iter)
        return ga_minimize(np.size(params), loss, cfg, rng, callback, initial_population=params)

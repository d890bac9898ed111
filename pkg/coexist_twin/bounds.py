"""
Convergence bounds module for Coexist Twin.

Minimum-iteration calculators for the three learning regimes (strongly convex DGD,
nonconvex DGD and FL with partial participation), the FL optimality-gap bound and
Monte Carlo checks of the DGD bounds on synthetic tasks.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence
import logging
import math

import numpy as np

from .dist_learn import LearningTask
from .errors import RegimeError

logger = logging.getLogger(__name__)

STRONGLY_CONVEX = 1
NONCONVEX = 2
FEDERATED = 3
REGIME_KIND = {STRONGLY_CONVEX: "quadratic", NONCONVEX: "nonconvex", FEDERATED: "fl"}


@dataclass(frozen=True)
class ConvergenceParams:
    """
    Inputs of the K_min calculators.

    Attributes:
        regime: 1 strongly convex, 2 nonconvex, 3 FL
        epsilon: Target accuracy
        n: Updates aggregated per iteration
        w_a: Initial-gap constant W^A (regime 1)
        z_a: Plateau constant z^A, so that the plateau is z^A / n (regime 1)
        b: Contraction base 1 / (1 - eta beta1 mu) (regime 1)
        w_b: W^B = 2 (f(w_1) - f_inf) / (eta (beta1 + 1)) (regime 2)
        z_b: z^B = eta L sigma^2 / (beta1 + 1) (regime 2)
        local_epochs: E (regime 3)
        g2: Gradient bound G^2 (regime 3)
        sigma2: Gradient-noise energy
        big_n: N (regime 3)
        xi: max(8 L / mu, E) (regime 3)
        kappa: Schedule offset (regime 3)
    """
    regime: int
    epsilon: float
    n: int = 1
    w_a: float = 1.0
    z_a: float = 0.0
    b: float = 2.0
    w_b: float = 1.0
    z_b: float = 0.0
    local_epochs: int = 1
    g2: float = 1.0
    sigma2: float = 0.0
    big_n: int = 1
    xi: float = 8.0
    kappa: float = 0.0

    def __post_init__(self) -> None:
        self._validate_parameters()

    def _validate_parameters(self) -> None:
        if self.regime not in REGIME_KIND:
            raise ValueError(f"regime must be 1, 2 or 3, got {self.regime}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.regime == FEDERATED and self.n > self.big_n:
            raise ValueError(f"n <= N violated: n={self.n}, N={self.big_n}")
        if self.regime == STRONGLY_CONVEX:
            if self.b <= 1.0:
                raise ValueError(f"b must exceed 1, got {self.b}")
            if self.w_a <= 0:
                raise ValueError(f"W^A must be positive, got {self.w_a}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.g2 < 0 or self.sigma2 < 0:
            raise ValueError("g2 and sigma2 cannot be negative")

    @property
    def rho(self) -> float:
        """4 (N - n) / (n (N - 1)); zero for a single-device fleet."""
        if self.big_n <= 1:
            return 0.0
        return 4.0 * (self.big_n - self.n) / (self.n * (self.big_n - 1))

    def with_n(self, n: int) -> "ConvergenceParams":
        data = asdict(self)
        data["n"] = n
        return ConvergenceParams(**data)

    @classmethod
    def from_task(
        cls,
        task: LearningTask,
        regime: int,
        beta1: float,
        n: int,
        w1: np.ndarray,
        beta2: Optional[float] = None,
        kappa: float = 0.0,
    ) -> "ConvergenceParams":
        """
        Derive the regime constants of a task started at w1.

        beta1 and beta2 are explicit inputs; beta2 defaults to its smallest admissible
        value (beta1 + 1)^2. The task's step size must be admissible.

        Raises:
            RegimeError: Regime and task kind disagree, or the step size is too large
        """
        if REGIME_KIND.get(regime) != task.kind:
            raise RegimeError(f"regime {regime} needs a {REGIME_KIND.get(regime)} task, got {task.kind}")
        beta2 = (beta1 + 1.0) ** 2 if beta2 is None else beta2
        L = task.smoothness
        eta = task.learning_rate
        sigma2 = task.effective_sigma2()
        gap = task.objective(w1) - task.optimal_value
        if regime != FEDERATED:
            check_learning_rate(eta, L, beta1, beta2)
        if regime == STRONGLY_CONVEX:
            mu = task.strong_convexity
            if beta1 <= 0:
                raise RegimeError(f"the strongly convex bound needs beta1 > 0, got {beta1}")
            return cls(
                regime=regime,
                epsilon=task.epsilon,
                n=n,
                w_a=max(gap, 1e-12),
                z_a=eta * L * sigma2 / (2.0 * beta1 * mu),
                b=1.0 / (1.0 - eta * beta1 * mu),
                sigma2=sigma2,
            )
        if regime == NONCONVEX:
            return cls(
                regime=regime,
                epsilon=task.epsilon,
                n=n,
                w_b=2.0 * gap / (eta * (beta1 + 1.0)),
                z_b=eta * L * sigma2 / (beta1 + 1.0),
                sigma2=sigma2,
            )
        mu = task.strong_convexity
        E = task.local_epochs
        return cls(
            regime=regime,
            epsilon=task.epsilon,
            n=n,
            local_epochs=E,
            g2=task.gradient_bound(w1),
            sigma2=task.sigma2,
            big_n=task.device_count,
            xi=max(8.0 * L / mu, float(E)),
            kappa=kappa,
        )


def check_learning_rate(eta: float, L: float, beta1: float, beta2: float) -> None:
    """
    Fixed step-size admissibility: 0 < eta <= (beta1 + 1) / ((2 beta2 + 1) L), beta2 >= (beta1 + 1)^2.

    Raises:
        RegimeError: Either condition fails
    """
    if beta2 < (beta1 + 1.0) ** 2 - 1e-12:
        raise RegimeError(f"beta2 must be >= (beta1 + 1)^2 = {(beta1 + 1.0) ** 2}, got {beta2}")
    limit = (beta1 + 1.0) / ((2.0 * beta2 + 1.0) * L)
    if not 0.0 < eta <= limit + 1e-12:
        raise RegimeError(f"learning rate {eta} outside (0, {limit:.6g}]")


def kmin_strongly_convex(p: ConvergenceParams) -> float:
    """log_b(W^A / (epsilon - z^A / n)) + 1."""
    margin = p.epsilon - p.z_a / p.n
    if margin <= 0:
        raise RegimeError(f"epsilon={p.epsilon} does not exceed the plateau z^A/n={p.z_a / p.n}")
    return math.log(p.w_a / margin) / math.log(p.b) + 1.0


def kmin_nonconvex(p: ConvergenceParams) -> float:
    """W^B / (epsilon - z^B / n)."""
    margin = p.epsilon - p.z_b / p.n
    if margin <= 0:
        raise RegimeError(f"epsilon={p.epsilon} does not exceed the plateau z^B/n={p.z_b / p.n}")
    return p.w_b / margin


def kmin_fl_proportional(p: ConvergenceParams) -> float:
    """
    (1/epsilon) [(1 + 1/n) E G^2 + (sigma^2/N + G^2) / E + G^2].

    Only ratios and trends of this value are meaningful; it is not an iteration count.
    """
    E, G2 = p.local_epochs, p.g2
    return ((1.0 + 1.0 / p.n) * E * G2 + (p.sigma2 / p.big_n + G2) / E + G2) / p.epsilon


def fl_gap_bound(p: ConvergenceParams, L: float, mu: float, k: int) -> float:
    """Expected optimality gap of FL after k rounds under the diminishing schedule."""
    if mu <= 0 or L < mu:
        raise RegimeError(f"0 < mu <= L violated: mu={mu}, L={L}")
    E = p.local_epochs
    numerator = 2.0 * L * (p.sigma2 / p.big_n + 8.0 * (E - 1) ** 2 + p.rho * E * E * p.g2 + p.xi * p.g2)
    return numerator / (mu * mu * (p.xi + k + p.kappa - 1.0))


def diminishing_learning_rate(p: ConvergenceParams, mu: float, k: int) -> float:
    """eta_k = 2 / (mu (xi + k + kappa))."""
    return 2.0 / (mu * (p.xi + k + p.kappa))


def strongly_convex_rhs(p: ConvergenceParams, initial_gap: float, k: int) -> float:
    """z^A/n + b^{-(k-1)} (f(w_1) - f* - z^A/n)."""
    plateau = p.z_a / p.n
    return plateau + (1.0 / p.b) ** (k - 1) * (initial_gap - plateau)


def nonconvex_rhs(p: ConvergenceParams, K: int) -> float:
    """z^B/n + W^B / K."""
    return p.z_b / p.n + p.w_b / K


CALCULATORS = {
    STRONGLY_CONVEX: kmin_strongly_convex,
    NONCONVEX: kmin_nonconvex,
    FEDERATED: kmin_fl_proportional,
}


@dataclass
class BoundReport:
    """
    Outcome of a Monte Carlo bound check.

    Attributes:
        regime: Regime checked
        n: Updates aggregated per iteration
        iterations: k = 1..K
        empirical: Seed-averaged left-hand side per k
        bound: Right-hand side per k
        tolerance: Relative slack allowed
        contraction: Per-iteration contraction of the mean distance to w* (regime 1)
    """
    regime: int
    n: int
    iterations: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    tolerance: float
    contraction: Optional[np.ndarray] = None
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def margins(self) -> np.ndarray:
        """bound * (1 + tolerance) - empirical; nonnegative everywhere on a pass."""
        return self.bound * (1.0 + self.tolerance) - self.empirical

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= 0.0))

    def get_summary(self) -> Dict[str, float]:
        return {
            "regime": self.regime,
            "n": self.n,
            "iterations": int(self.iterations[-1]),
            "passed": self.passed,
            "worst_margin": float(self.margins.min()),
            "final_empirical": float(self.empirical[-1]),
            "final_bound": float(self.bound[-1]),
        }


def validate_bound_empirically(
    task: LearningTask,
    regime: int,
    seeds: Sequence[int],
    k: int,
    n: int,
    beta1: float,
    w1: Optional[np.ndarray] = None,
    tolerance: float = 0.05,
) -> BoundReport:
    """
    Monte Carlo check of a convergence bound.

    Every seed runs k iterations of the protocol's update rule on the task, with the
    n contributing devices drawn uniformly without replacement each iteration.

    Raises:
        RegimeError: The task does not belong to the regime
    """
    if REGIME_KIND.get(regime) != task.kind:
        raise RegimeError(f"regime {regime} needs a {REGIME_KIND.get(regime)} task, got {task.kind}")
    if not 1 <= n <= task.device_count:
        raise ValueError(f"n must be in [1, {task.device_count}], got {n}")
    rng = np.random.default_rng(list(seeds))
    if w1 is None:
        direction = np.ones(task.dimension) / math.sqrt(task.dimension)
        w1 = task.optimum + 3.0 * direction
    params = ConvergenceParams.from_task(task, regime, beta1, n, w1)
    S, N, d = len(seeds), task.device_count, task.dimension
    W = np.tile(w1, (S, 1))
    f_star = task.optimal_value
    initial_gap = task.objective(w1) - f_star
    iterations = np.arange(1, k + 1)
    empirical = np.empty(k)
    bound = np.empty(k)
    distances = np.empty(k)
    running = np.zeros(S)
    noise_scale = math.sqrt(task.sigma2 / d / n)

    for step in range(k):
        kk = step + 1
        diff = W - task.optimum
        distances[step] = float(np.mean(np.linalg.norm(diff, axis=1)))
        if regime == NONCONVEX:
            grad = task.full_gradient(W)
            running += np.sum(grad * grad, axis=1)
            empirical[step] = float(np.mean(running / kk))
            bound[step] = nonconvex_rhs(params, kk)
        else:
            gaps = 0.5 * np.sum(task.curvature * diff * diff, axis=1)
            empirical[step] = float(np.mean(gaps))
            if regime == STRONGLY_CONVEX:
                bound[step] = strongly_convex_rhs(params, initial_gap, kk)
            else:
                bound[step] = fl_gap_bound(params, task.smoothness, task.strong_convexity, kk)
        members = np.argsort(rng.random((S, N)), axis=1)[:, :n]
        if regime == FEDERATED:
            W = _fl_round(task, W, members, rng, kk)
        else:
            noise = rng.normal(0.0, noise_scale, size=(S, d)) if noise_scale > 0 else 0.0
            W = W - task.learning_rate_at(kk) * (task.subset_gradient(W, members) + noise)

    contraction = distances[1:] / distances[:-1] if regime == STRONGLY_CONVEX else None
    report = BoundReport(regime, n, iterations, empirical, bound, tolerance, contraction,
                         {"initial_gap": initial_gap, "sigma2_effective": task.effective_sigma2()})
    logger.info("bound check regime=%d n=%d k=%d seeds=%d passed=%s", regime, n, k, S, report.passed)
    return report


def _fl_round(task: LearningTask, W: np.ndarray, members: np.ndarray, rng: np.random.Generator, k: int) -> np.ndarray:
    """One FL round for every seed: E local noisy steps per member, then the average."""
    S, n = members.shape
    local = np.repeat(W[:, None, :], n, axis=1)
    targets = task.targets[members]
    scale = math.sqrt(task.sigma2 / task.dimension)
    for step in range(task.local_epochs):
        eta = task.learning_rate_at(k, step)
        grad = task.curvature * (local - targets)
        if scale > 0:
            grad = grad + rng.normal(0.0, scale, size=grad.shape)
        local = local - eta * grad
    return local.mean(axis=1)


def sweep(regime: int, base: ConvergenceParams, param: str, values: Sequence[float]) -> List[Dict[str, float]]:
    """Evaluate the regime's calculator over a parameter sweep; undefined points report NaN."""
    rows = []
    for value in values:
        data = asdict(base)
        data[param] = int(value) if param in ("n", "local_epochs", "big_n") else float(value)
        try:
            p = ConvergenceParams(**data)
            result = CALCULATORS[regime](p)
        except (RegimeError, ValueError) as exc:
            logger.debug("sweep point %s=%s undefined: %s", param, value, exc)
            result = float("nan")
        rows.append({param: value, "kmin": result})
    return rows

"""
Simulation Service for ppp_cpd

Generates PPP time series on the unit cube by thinning, driven by latent
autoregressive processes, with at most one planted change.

Seeding: replication ``i`` of a scenario draws from
``SeedSequence(scenario.seed, spawn_key=(i,))``; inside a replication child 0
drives the latent chain and child ``t`` samples window ``t``. Windows and
latent draws therefore never share a stream, and disabling the change leaves
the pre-change segment bit-for-bit unchanged.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import structlog

from ..core.errors import ConfigurationError, DomainError, IntensityBoundError
from ..domain.models import PointWindow, Scenario
from ..engines.embedding import Intensity
from ..engines.legendre import univariate_table

logger = structlog.get_logger(__name__)

BURN_IN = 200

AR_MATRIX = np.array([[0.5, 0.1], [0.1, 0.5]])
AR_NOISE_MEAN = np.array([3.0, 1.0])

SCALE_FEEDBACK = 0.1
SCALE_OFFSET_PRE = 8.0
SCALE_OFFSET_POST = 4.0
# integrals over [0,1]^4 of prod 2 x_j^3 and prod 2 exp(-x_j)
CUBIC_MASS_4D = 0.5 ** 4
EXP_MASS_4D = (2.0 * (1.0 - math.exp(-1.0))) ** 4

BOUND_SLACK = 1e-9


# Intensity families on [0,1]^d; x is an (n, d) array

def sin_product(x: np.ndarray) -> np.ndarray:
    return np.prod(np.sin(x) + 1.0, axis=1)


def cos_product(x: np.ndarray) -> np.ndarray:
    return np.prod(np.cos(x) + 1.0, axis=1)


def gauss_product(x: np.ndarray) -> np.ndarray:
    return np.prod(np.exp(-x ** 2), axis=1)


def linear_product(x: np.ndarray) -> np.ndarray:
    return np.prod(x, axis=1)


def cubic_product(x: np.ndarray) -> np.ndarray:
    return np.prod(2.0 * x ** 3, axis=1)


def exp_product(x: np.ndarray) -> np.ndarray:
    return np.prod(2.0 * np.exp(-x), axis=1)


def pre_intensity_3d(z: np.ndarray) -> Intensity:
    """z1+ prod(sin x_j + 1) + z2+ prod(cos x_j + 1)"""
    a, b = np.maximum(np.asarray(z, dtype=float), 0.0)
    return lambda x: a * sin_product(x) + b * cos_product(x)


def post_intensity_3d(z: np.ndarray) -> Intensity:
    """z1+ prod exp(-x_j^2) + z2+ prod x_j"""
    a, b = np.maximum(np.asarray(z, dtype=float), 0.0)
    return lambda x: a * gauss_product(x) + b * linear_product(x)


def intensity_4d(y: float) -> Intensity:
    """y+ (prod 2 x_j^3 + prod 2 exp(-x_j))"""
    scale = max(float(y), 0.0)
    return lambda x: scale * (cubic_product(x) + exp_product(x))


def intensity_1d(base: float, amplitude: float) -> Intensity:
    """base + amplitude * phi_2(x); its L2 distance to the constant base is |amplitude|"""
    return lambda x: base + amplitude * univariate_table(2, x[:, 0])[1]


def constant_intensity(rate: float) -> Intensity:
    return lambda x: np.full(x.shape[0], float(rate))


def mix(first: Intensity, second: Intensity, weight: float) -> Intensity:
    """(1 - weight) * first + weight * second"""
    if weight >= 1.0:
        return second
    return lambda x: (1.0 - weight) * first(x) + weight * second(x)


def stationary_mean_3d() -> np.ndarray:
    """Fixed point m = A m + mu of the 3D latent chain"""
    return np.linalg.solve(np.eye(2) - AR_MATRIX, AR_NOISE_MEAN)


def sample_ppp(intensity: Intensity, bound: float, rng: np.random.Generator, dim: int,
               index: int = 1) -> PointWindow:
    """Draw one window by thinning a homogeneous proposal of rate ``bound``.

    Proposals whose intensity exceeds the bound raise IntensityBoundError.
    """
    if not bound > 0:
        return PointWindow.empty(index, dim)
    n = rng.poisson(bound)
    proposals = rng.random((n, dim))
    if n == 0:
        return PointWindow(index=index, points=proposals)
    values = np.asarray(intensity(proposals), dtype=float)
    if np.any(values > bound * (1.0 + BOUND_SLACK)):
        worst = float(values.max())
        raise IntensityBoundError(f"intensity value {worst} exceeds thinning bound {bound}")
    keep = rng.random(n) * bound < values
    return PointWindow(index=index, points=proposals[keep])


def latent_ar_chain(n: int, rng: np.random.Generator, burn_in: int = BURN_IN,
                    start: Optional[np.ndarray] = None) -> np.ndarray:
    """z_{t+1} = A z_t + eps_t, eps_t ~ N(mu, I); returns n states after burn-in"""
    z = np.zeros(2) if start is None else np.asarray(start, dtype=float)
    path = np.empty((n, 2))
    for t in range(burn_in + n):
        z = AR_MATRIX @ z + rng.normal(AR_NOISE_MEAN, 1.0)
        if t >= burn_in:
            path[t - burn_in] = z
    return path


@dataclass
class CustomFamily:
    """User-supplied pre/post intensities with their thinning bounds"""
    pre: Intensity
    post: Intensity
    pre_bound: float
    post_bound: float
    dim: int


@dataclass
class SimulatedStream:
    """One generated replication"""
    scenario: Scenario
    windows: List[PointWindow]
    latent: np.ndarray = field(repr=False)
    replication: int = 0

    @property
    def training(self) -> List[PointWindow]:
        return self.windows[: self.scenario.n_train]

    @property
    def stream(self) -> List[PointWindow]:
        return self.windows[self.scenario.n_train:]


def replication_seed(seed: int, replication: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(replication,))


class PPPSimulator:
    """Generates streams for every scenario kind"""

    def __init__(self, scenario: Scenario, custom: Optional[CustomFamily] = None):
        self.scenario = scenario
        self.custom = custom
        self.logger = structlog.get_logger(__name__)
        if scenario.kind == "custom" and custom is None:
            raise ConfigurationError("custom scenarios need a CustomFamily")
        if scenario.kind == "scenario_1d":
            base, amplitude = self._params_1d()
            if base - abs(amplitude) * math.sqrt(3.0) < 0:
                raise DomainError(
                    f"base {base} - |amplitude| sqrt(3) is negative; the 1D intensity must be nonnegative"
                )

    @property
    def dim(self) -> int:
        return self.custom.dim if self.scenario.kind == "custom" else self.scenario.dim

    def _params_1d(self) -> Tuple[float, float]:
        params = self.scenario.params
        return float(params.get("base", 20.0)), float(params.get("amplitude", 10.0))

    def is_post(self, t: int) -> bool:
        change_at = self.scenario.change_at
        return change_at is not None and t > change_at

    def window_intensity(self, t: int, latent: np.ndarray) -> Tuple[Intensity, float]:
        """(intensity, thinning bound) of window t given its latent state"""
        s = self.scenario.change_scale if self.is_post(t) else 0.0
        kind = self.scenario.kind

        if kind == "scenario_3d":
            zp = np.maximum(latent, 0.0)
            pre = pre_intensity_3d(latent)
            post = post_intensity_3d(latent)
            bound = (1.0 - s) * 8.0 * zp.sum() + s * zp.sum()
            return mix(pre, post, s) if s > 0 else pre, bound

        if kind == "scenario_4d":
            return intensity_4d(latent[0]), 32.0 * max(float(latent[0]), 0.0)

        if kind == "scenario_1d":
            base, amplitude = self._params_1d()
            a = s * amplitude
            return intensity_1d(base, a), base + abs(a) * math.sqrt(3.0)

        if kind == "const_intensity":
            rate = float(self.scenario.params.get("rate", 50.0))
            post_rate = float(self.scenario.params.get("post_rate", rate))
            value = (1.0 - s) * rate + s * post_rate
            return constant_intensity(value), value

        family = self.custom
        if s > 0:
            return mix(family.pre, family.post, s), (1.0 - s) * family.pre_bound + s * family.post_bound
        return family.pre, family.pre_bound

    def _scale_offset(self, t_next: int) -> float:
        s = self.scenario.change_scale if self.is_post(t_next) else 0.0
        return SCALE_OFFSET_PRE - s * (SCALE_OFFSET_PRE - SCALE_OFFSET_POST)

    def _burn_in_scale(self, rng: np.random.Generator) -> float:
        # counts are Poisson with the integrated intensity, no points needed
        y = SCALE_OFFSET_PRE
        mass = CUBIC_MASS_4D + EXP_MASS_4D
        for _ in range(BURN_IN):
            count = rng.poisson(max(y, 0.0) * mass)
            y = SCALE_FEEDBACK * count + SCALE_OFFSET_PRE + rng.normal()
        return y

    def generate(self, replication: int = 0) -> SimulatedStream:
        """Windows 1..n_total of one replication"""
        n_total = self.scenario.n_total
        children = replication_seed(self.scenario.seed, replication).spawn(n_total + 1)
        latent_rng = np.random.default_rng(children[0])
        dim = self.dim
        windows: List[PointWindow] = []

        if self.scenario.kind == "scenario_3d":
            latent = latent_ar_chain(n_total, latent_rng)
            for t in range(1, n_total + 1):
                intensity, bound = self.window_intensity(t, latent[t - 1])
                windows.append(sample_ppp(intensity, bound, np.random.default_rng(children[t]), dim, t))

        elif self.scenario.kind == "scenario_4d":
            latent = np.empty((n_total, 1))
            y = self._burn_in_scale(latent_rng)
            for t in range(1, n_total + 1):
                latent[t - 1, 0] = y
                intensity, bound = self.window_intensity(t, latent[t - 1])
                window = sample_ppp(intensity, bound, np.random.default_rng(children[t]), dim, t)
                windows.append(window)
                y = SCALE_FEEDBACK * window.size + self._scale_offset(t + 1) + latent_rng.normal()

        else:
            latent = np.empty((n_total, 0))
            for t in range(1, n_total + 1):
                intensity, bound = self.window_intensity(t, latent[t - 1])
                windows.append(sample_ppp(intensity, bound, np.random.default_rng(children[t]), dim, t))

        self.logger.debug("Generated stream", kind=self.scenario.kind, replication=replication,
                          n_total=n_total, points=sum(w.size for w in windows))
        return SimulatedStream(scenario=self.scenario, windows=windows, latent=latent,
                               replication=replication)


def generate(scenario: Scenario, replication: int = 0,
             custom: Optional[CustomFamily] = None) -> SimulatedStream:
    return PPPSimulator(scenario, custom).generate(replication)

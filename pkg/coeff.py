"""
Synthetic high-contrast fields kappa(x) and the nonlinear coefficient
exp(kappa(x) * u).

Field values are stored per fine element as an (nx, nx) array indexed
[j, i], so `values.ravel()` is ordered by fine element id j * nx + i.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import DomainError, InvalidConfigurationError
from fem import (
    assemble_load,
    assemble_stiffness,
    boundary_dirichlet,
    element_mean,
    solve_spd,
)

logger = logging.getLogger(__name__)

EXPONENT_CAP = 700.0


@dataclass(frozen=True, eq=False)
class BasePermField:
    """Static field kappa(x), one value per fine element"""

    values: np.ndarray
    generator: str = "custom"
    seed: int = None
    kappa_max: float = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DomainError(f"field must be a square grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise DomainError("field values must be finite and non-negative")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def flat(self):
        return self.values.ravel()


@dataclass(frozen=True, eq=False)
class FieldFamily:
    """
    Parameter-dependent field mu * k1 + (1 - mu) * k2.

    `mu_p` is the blend used for the online problem; a family built with
    `single` ignores the parameter.
    """

    k1: BasePermField
    k2: BasePermField
    mu_p: float = 1.0

    @classmethod
    def single(cls, field):
        return cls(field, field, 1.0)

    @property
    def parameterized(self):
        return self.k1 is not self.k2

    @property
    def base(self):
        return self.at(None)

    def at(self, mu_p):
        if not self.parameterized:
            return self.k1
        return blend(self.k1, self.k2, self.mu_p if mu_p is None else mu_p)


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """kappa(x; u) = exp(kappa(x) * u), exponent clipped to +-cap"""

    field: BasePermField
    cap: float = EXPONENT_CAP

    def evaluate(self, u_elem):
        return eval_coefficient(self, u_elem)

    def at_nodal(self, fine, u_nodal):
        """Per-element coefficient from nodal u (element mean inside the exponent)"""
        return eval_coefficient(self, element_mean(u_nodal, fine.elements))


def eval_coefficient(model, u_elem):
    """
    Evaluate exp(kappa * u) per fine element.

    Args:
        model: CoefficientModel.
        u_elem: scalar or one value per fine element.

    Raises:
        DomainError: if u is not finite.
    """
    u_elem = np.asarray(u_elem, dtype=float)
    if not np.all(np.isfinite(u_elem)):
        raise DomainError("solution values passed to the coefficient must be finite")
    exponent = model.field.flat * u_elem
    if np.any(np.abs(exponent) > model.cap):
        logger.warning("coefficient exponent capped at %.0f (max |kappa*u| = %.3e); field is mis-scaled",
                       model.cap, np.abs(exponent).max())
        exponent = np.clip(exponent, -model.cap, model.cap)
    return np.exp(exponent)


def blend(k1, k2, mu_p):
    """Element-wise mu_p * k1 + (1 - mu_p) * k2"""
    if not 0.0 <= mu_p <= 1.0:
        raise DomainError(f"blend parameter must lie in [0, 1], got {mu_p}")
    if k1.values.shape != k2.values.shape:
        raise DomainError(f"cannot blend fields on different grids {k1.values.shape} and {k2.values.shape}")
    mixed = np.where(k1.values == k2.values, k1.values,
                     mu_p * k1.values + (1.0 - mu_p) * k2.values)
    kappa_max = None
    if k1.kappa_max is not None and k2.kappa_max is not None:
        kappa_max = max(k1.kappa_max, k2.kappa_max)
    return BasePermField(mixed, generator=f"blend({k1.generator},{k2.generator},{mu_p:g})",
                         seed=k1.seed, kappa_max=kappa_max)


def constant_field(nx, value=1.0):
    """Uniform field; value 0 gives the linear problem"""
    return BasePermField(np.full((nx, nx), float(value)), generator="constant", kappa_max=float(value))


def gen_random_inclusions(nx, seed, kappa_max, fill_fraction):
    """
    Background 1 with small square inclusions at random lattice positions.

    Inclusions are b x b blocks (b = max(1, nx // 50)) placed without
    overlap; each carries one value drawn from U[kappa_max / 2, kappa_max].
    """
    if kappa_max <= 1.0:
        raise DomainError(f"kappa_max must exceed the background value 1, got {kappa_max}")
    if not 0.0 <= fill_fraction < 0.3:
        raise DomainError(f"fill_fraction must lie in [0, 0.3), got {fill_fraction}")

    rng = np.random.default_rng(seed)
    b = max(1, nx // 50)
    per_side = nx // b
    n_positions = per_side * per_side
    n_blocks = int(round(fill_fraction * n_positions))

    values = np.ones((nx, nx))
    positions = rng.choice(n_positions, size=n_blocks, replace=False)
    levels = rng.uniform(kappa_max / 2.0, kappa_max, size=n_blocks)
    for position, level in zip(positions, levels):
        bj, bi = divmod(int(position), per_side)
        values[bj * b:(bj + 1) * b, bi * b:(bi + 1) * b] = level

    logger.debug("random inclusions: %d blocks of %dx%d cells", n_blocks, b, b)
    return BasePermField(values, generator="random_inclusions", seed=seed, kappa_max=float(kappa_max))


CHANNEL_SETS = ("horizontal", "bent", "all")


def gen_channelized(nx, kappa_max, channels="all"):
    """
    Background 1 with high-value channels of width max(2, nx // 50) cells.

    "horizontal": two channels crossing the whole domain at y ~ 0.2 and
    y ~ 0.55. "bent": an L-shaped channel, a horizontal run at y ~ 0.8 for
    0.1 < x < 0.7 joined to a vertical run at x ~ 0.7 down to y ~ 0.35.
    "all": both sets.
    """
    if kappa_max < 1.0:
        raise DomainError(f"kappa_max must be at least the background value 1, got {kappa_max}")
    if channels not in CHANNEL_SETS:
        raise InvalidConfigurationError(f"unknown channel set '{channels}'")

    width = max(2, nx // 50)
    values = np.ones((nx, nx))

    def cell(t):
        return min(nx - width, int(round(t * nx)))

    if channels in ("horizontal", "all"):
        for y in (0.2, 0.55):
            j = cell(y)
            values[j:j + width, :] = kappa_max
    if channels in ("bent", "all"):
        j_top, i_left, i_bend, j_low = cell(0.8), cell(0.1), cell(0.7), cell(0.35)
        values[j_top:j_top + width, i_left:i_bend + width] = kappa_max
        values[j_low:j_top + width, i_bend:i_bend + width] = kappa_max

    return BasePermField(values, generator=f"channelized:{channels}", kappa_max=float(kappa_max))


def field_family(generator, nx, kappa_max, seed=0, fill_fraction=0.1, mu_p=None):
    """
    Build the field (or the two blended components when mu_p is given).

    Channelized families blend the straight channels with the bent one;
    inclusion families blend two independent seeds.
    """
    if generator == "constant":
        return FieldFamily.single(constant_field(nx, kappa_max))
    if generator == "channelized":
        if mu_p is None:
            return FieldFamily.single(gen_channelized(nx, kappa_max, "all"))
        return FieldFamily(gen_channelized(nx, kappa_max, "horizontal"),
                           gen_channelized(nx, kappa_max, "bent"), mu_p)
    if generator == "random_inclusions":
        first = gen_random_inclusions(nx, seed, kappa_max, fill_fraction)
        if mu_p is None:
            return FieldFamily.single(first)
        return FieldFamily(first, gen_random_inclusions(nx, seed + 1, kappa_max, fill_fraction), mu_p)
    raise InvalidConfigurationError(f"unknown field generator '{generator}'")


def derive_kappa_max(fine, target_contrast=1e4, f_high=1.0):
    """
    Scale kappa so that kappa_max * u_max ~ ln(target_contrast), where
    u_max is the maximum of the linear solve -laplace(u) = f_high.
    """
    if target_contrast <= 1.0:
        raise DomainError(f"target contrast must exceed 1, got {target_contrast}")
    if f_high <= 0.0:
        raise DomainError(f"f_high must be positive, got {f_high}")
    A = assemble_stiffness(fine, np.ones(fine.n_elements))
    system = boundary_dirichlet(fine, A, assemble_load(fine, f_high))
    u = system.expand(solve_spd(system.matrix, system.rhs))
    kappa_max = float(np.log(target_contrast) / u.max())
    logger.info("derived kappa_max=%.4f from contrast %.1e (u_max=%.4e)", kappa_max, target_contrast, u.max())
    return kappa_max


def save_field_matrix(field, path):
    """One line per grid row, bottom row first, values space separated"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, field.values, fmt="%.17g", delimiter=" ")
    return path


def load_field_matrix(path, generator="file"):
    values = np.loadtxt(path, ndmin=2)
    return BasePermField(values, generator=generator, kappa_max=float(values.max()))

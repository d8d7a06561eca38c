"""Economic model: parameters, unit normalization, price curves, rewards.

All quantities are held in base units: dollars, MW, years, with production
hours ``h`` in hours/year and prices in $/MWh.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Any, Mapping, Union

import numpy as np

from .errors import DomainError, ValidationError
from .units import UnitSyntaxError, parse_unit

F = Fraction

# expected base dimensions of every numeric field
FIELD_DIMS: dict[str, dict[str, Fraction]] = {
    "r": {"year": F(-1)},
    "delta": {"year": F(-1)},
    "T": {"year": F(1)},
    "h": {"hour": F(1), "year": F(-1)},
    "alpha": {"$": F(1), "MW": F(-1)},
    "beta_inv": {"MW": F(2), "$": F(-1), "year": F(-1)},
    "beta": {"$": F(1), "year": F(1), "MW": F(-2)},
    "c": {"$": F(1), "MW": F(-1), "hour": F(-1)},
    "N": {},
    "X0": {"MW": F(1)},
    "sigma": {"year": F(-1, 2)},
    "d1": {"$": F(1), "MW": F(-1), "hour": F(-1)},
    "d2": {"$": F(1), "MW": F(-2), "hour": F(-1)},
    "p": {"$": F(1), "hour": F(-1)},
}

BASE_UNITS: dict[str, str] = {
    "r": "1/year",
    "delta": "1/year",
    "T": "year",
    "h": "hours/year",
    "alpha": "$/MW",
    "beta_inv": "MW^2/($*year)",
    "c": "$/MWh",
    "N": "1",
    "X0": "MW",
    "sigma": "1/year^(1/2)",
    "d1": "$/MWh",
    "d2": "$/(MW*MWh)",
    "p": "$/h",
}


@dataclass(frozen=True)
class ModelParams:
    """Model constants in base units.

    ``beta`` is the crowding sensitivity ($·year/MW²); parameter files quote
    its reciprocal as ``beta_inv``.
    """

    r: float
    delta: float
    T: float
    h: float
    alpha: float
    beta: float
    c: float
    N: float
    X0: float
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("r", "delta", "T", "alpha", "beta", "c"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be > 0, got {v!r}")
        if not 0.0 <= self.h <= 8760.0:
            raise ValidationError(f"h must lie in [0, 8760], got {self.h!r}")
        if self.N < 0:
            raise ValidationError(f"N must be >= 0, got {self.N!r}")
        if self.X0 < 0:
            raise ValidationError(f"X0 must be >= 0, got {self.X0!r}")
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma!r}")
        if self.sigma > 0 and self.sigma ** 2 >= self.r + 2 * self.delta:
            raise ValidationError(
                f"sigma^2 = {self.sigma ** 2:g} must be < r + 2*delta = "
                f"{self.r + 2 * self.delta:g}")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_raw(self) -> dict[str, Any]:
        """Parameter map in base units, accepted back by :func:`normalize_params`."""
        raw = asdict(self)
        raw["beta_inv"] = 1.0 / raw.pop("beta")
        raw["units"] = {k: BASE_UNITS[k] for k in raw}
        return raw


@dataclass(frozen=True)
class LinearPrice:
    """P(x) = d1 - d2 x. May go negative for large x; never clamped."""

    d1: float
    d2: float
    kind = "linear"

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise ValidationError(f"linear price needs d1 > 0 and d2 > 0, got {self.d1}, {self.d2}")

    def __call__(self, x):
        if isinstance(x, (list, tuple)):
            x = np.asarray(x, dtype=float)
        return self.d1 - self.d2 * x

    def derivative(self, x):
        return -self.d2 + 0.0 * np.asarray(x, dtype=float)

    def inverse(self, level: float) -> float:
        return (self.d1 - level) / self.d2

    def to_raw(self) -> dict[str, Any]:
        return {"kind": "linear", "d1": self.d1, "d2": self.d2}


@dataclass(frozen=True)
class InversePrice:
    """P(x) = p / x, defined for x > 0."""

    p: float
    kind = "inverse"

    def __post_init__(self):
        if not self.p > 0:
            raise ValidationError(f"inverse price needs p > 0, got {self.p}")

    def __call__(self, x):
        if isinstance(x, (float, int)):
            if x <= 0:
                raise DomainError("inverse price P(x) = p/x is undefined for x <= 0")
            return self.p / x
        xa = np.asarray(x, dtype=float)
        if np.any(xa <= 0):
            raise DomainError("inverse price P(x) = p/x is undefined for x <= 0")
        return self.p / xa

    def derivative(self, x):
        xa = np.asarray(x, dtype=float)
        return -self.p / xa ** 2

    def inverse(self, level: float) -> float:
        if level <= 0:
            raise DomainError("p/x never reaches a non-positive level")
        return self.p / level

    def to_raw(self) -> dict[str, Any]:
        return {"kind": "inverse", "p": self.p}


PriceFunction = Union[LinearPrice, InversePrice]


@dataclass(frozen=True)
class RewardTerms:
    revenue_rate: float
    installation_cost_rate: float

    @property
    def total(self) -> float:
        return self.revenue_rate - self.installation_cost_rate


# --------------------------------------------------------------------------
# unit normalization

def _convert(name: str, value: Any, unit: str | None) -> float:
    if value is None:
        raise ValidationError(f"missing value for field {name!r}")
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"field {name!r} is not numeric: {value!r}") from None
    if unit is None:
        return value
    try:
        factor, dims = parse_unit(str(unit))
    except UnitSyntaxError as exc:
        raise ValidationError(f"unknown unit tag {unit!r} for field {name!r}: {exc}") from None
    expected = FIELD_DIMS[name]
    if dims != expected:
        raise ValidationError(
            f"unit {unit!r} for field {name!r} has the wrong dimension "
            f"(expected something like {BASE_UNITS.get(name, '?')!r})")
    return value * factor


def normalize_params(raw: Mapping[str, Any]) -> ModelParams:
    """Build :class:`ModelParams` from a parameter map with unit tags.

    ``raw["units"]`` maps field names to unit expressions such as ``"GW"``,
    ``"$/kW"`` or ``"MW^2/($*year)"``. Fields without a tag are taken to be
    in base units. Either ``beta`` or ``beta_inv`` may be given.
    """
    units = dict(raw.get("units") or {})
    for key in units:
        if key not in FIELD_DIMS:
            raise ValidationError(f"unit given for unknown field {key!r}")
    vals = {}
    for name in ("r", "delta", "T", "h", "alpha", "c", "N", "X0"):
        if name not in raw:
            raise ValidationError(f"missing parameter {name!r}")
        vals[name] = _convert(name, raw[name], units.get(name))
    vals["sigma"] = _convert("sigma", raw.get("sigma", 0.0), units.get("sigma"))
    if "beta_inv" in raw:
        beta_inv = _convert("beta_inv", raw["beta_inv"], units.get("beta_inv"))
        if beta_inv <= 0:
            raise ValidationError("beta_inv must be > 0")
        vals["beta"] = 1.0 / beta_inv
    elif "beta" in raw:
        vals["beta"] = _convert("beta", raw["beta"], units.get("beta"))
    else:
        raise ValidationError("missing parameter 'beta_inv'")
    return ModelParams(**vals)


def normalize_price(raw: Mapping[str, Any], units: Mapping[str, str] | None = None) -> PriceFunction:
    """Parse a ``price`` block: ``{"kind": "linear", "d1", "d2"}`` or ``{"kind": "inverse", "p"}``."""
    if not isinstance(raw, Mapping):
        raise ValidationError("price: expected an object")
    units = dict(units or {})
    units.update(raw.get("units") or {})
    kind = raw.get("kind")
    if kind == "linear":
        return LinearPrice(_convert("d1", raw.get("d1"), units.get("d1")),
                           _convert("d2", raw.get("d2"), units.get("d2")))
    if kind == "inverse":
        return InversePrice(_convert("p", raw.get("p"), units.get("p")))
    raise ValidationError(f"price.kind must be 'linear' or 'inverse', got {kind!r}")


def load_model(raw: Mapping[str, Any]) -> tuple[ModelParams, PriceFunction]:
    """Parameter-file document -> (params, price)."""
    if "price" not in raw:
        raise ValidationError("missing field 'price'")
    return normalize_params(raw), normalize_price(raw["price"], raw.get("units"))


# --------------------------------------------------------------------------
# evaluation

def price_eval(pf: PriceFunction, x):
    """Market price at aggregate capacity ``x`` (MW), in $/MWh."""
    return pf(x)


def running_reward(params: ModelParams, pf: PriceFunction, x: float, nu: float,
                   xbar: float, nubar: float) -> RewardTerms:
    """Revenue and installation cost rates of one producer ($/year)."""
    revenue = params.h * (pf(x + params.N * xbar) - params.c) * x
    cost = nu * (params.alpha + params.beta * (nu + params.N * nubar))
    return RewardTerms(float(revenue), float(cost))


@dataclass(frozen=True)
class AssumptionCheck:
    holds: bool
    witness_t0: float | None
    margin: float  # max_t0 of the discounted integral minus alpha


def _t0_profile(params: ModelParams, pf: PriceFunction, n: int):
    """Discounted profit of an uninstalled marginal MW started at each t0."""
    rd = params.r + params.delta
    s = np.linspace(0.0, params.T, n + 1)
    g = np.exp(-rd * s) * (pf(params.X0 * np.exp(-params.delta * s)) - params.c)
    ds = s[1] - s[0]
    tail = np.zeros_like(s)
    tail[:-1] = np.cumsum(((g[1:] + g[:-1]) * 0.5 * ds)[::-1])[::-1]
    return s, params.h * np.exp(rd * s) * tail


def check_assumption(params: ModelParams, pf: PriceFunction,
                     n0: int = 64, n_max: int = 2 ** 20) -> AssumptionCheck:
    """Check that installation is worth it at least once (non-trivial regime).

    The tail integral is evaluated by composite trapezoid; the grid is doubled
    until the decision and the witness time agree to three significant figures
    on two successive grids.
    """
    if params.X0 <= 0 and isinstance(pf, InversePrice):
        raise DomainError("inverse price needs X0 > 0")
    first = (pf(params.X0) - params.c) * params.h > (params.r + params.delta) * params.alpha
    prev = None
    n = n0
    while True:
        s, prof = _t0_profile(params, pf, n)
        k = int(np.argmax(prof))
        state = (bool(prof[k] > params.alpha), float(s[k]), float(prof[k]))
        if prev is not None and state[0] == prev[0]:
            scale = max(abs(state[1]), params.T * 1e-3)
            if abs(state[1] - prev[1]) <= 5e-4 * scale or n >= n_max:
                break
        if n >= n_max:
            break
        prev = state
        n *= 2
    holds = bool(first and state[0])
    return AssumptionCheck(holds, state[1] if holds else None, state[2] - params.alpha)


def compute_xmax(params: ModelParams, pf: PriceFunction) -> float:
    """Capacity above which installing never pays: P^{-1}(c) e^{delta T}."""
    if isinstance(pf, LinearPrice) and pf.d1 <= params.c:
        raise ValidationError(
            f"linear price intercept d1={pf.d1} does not exceed the production "
            f"cost c={params.c}; installation is never profitable")
    return pf.inverse(params.c) * math.exp(params.delta * params.T)

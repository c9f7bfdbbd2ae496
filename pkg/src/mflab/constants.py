"""Derived stability constants and admissibility verdicts.

Given an activation model, the label bound ``A``, transport constants of the
initialisation and data laws and the hyperparameters, :func:`build_ledger`
evaluates

    K        = alpha ((A+B) L_x + M^2 + M)
    lam_star = (A+B) L_theta + M^2
    L_N      = |1 - gamma lam| + gamma lam_star
    C_star   = 8 M^4 + 4 (lam + (A+B) L_theta)^2
    N_star   = ceil(4 alpha C_star / (lam - lam_star))          (lam > lam_star)
    C_N^(1)  = N C0^(1) + K^2 Cpi^(1) / (1 - L_N^2)             (L_N < 1)
    C_N^(2)  = max(C0^(2), K^2 Cpi^(2) / N) / (1 - L_N)^2       (L_N < 1)
    a_inf    = R0 v M (A+b) / (lam - M c)                       (localized, lam > M c)
    R_inf    = R0 v M (A + b + c a_inf) / lam

Quantities whose precondition fails are ``None``; they are never NaN.

For a law supported in a ball of radius ``R`` the default transport constant
is ``R**2 / 4`` (Hoeffding), see :func:`hoeffding_constant`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Optional

from .activation import ActivationModel, Regime
from .errors import InputError, PreconditionError


@dataclass(frozen=True)
class Hyperparams:
    alpha: float
    lam: float
    N: int
    D: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise InputError(f"alpha must be finite and > 0, got {self.alpha}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InputError(f"lambda must be finite and >= 0, got {self.lam}")
        if int(self.N) != self.N or self.N < 1:
            raise InputError(f"N must be an integer >= 1, got {self.N}")
        if int(self.D) != self.D or self.D < 1:
            raise InputError(f"D must be an integer >= 1, got {self.D}")

    @property
    def gamma(self) -> float:
        return self.alpha / self.N


def hoeffding_constant(radius: float) -> float:
    return radius**2 / 4.0


@dataclass(frozen=True)
class StabilityLedger:
    alpha: float
    lam: float
    N: int
    D: int
    gamma: float
    A: float
    B: float
    M: float
    L_x: float
    L_theta: float
    K: float
    lambda_star: float
    L_N: float
    C_star: float
    N_star: Optional[int]
    C_N_1: Optional[float]
    C_N_2: Optional[float]
    kappa_N_test_or_sliced: float
    kappa_N_wasserstein: float
    a_inf: Optional[float]
    R_inf: Optional[float]
    admissible_contraction: bool
    admissible_width: Optional[bool]
    admissible_localization: Optional[bool]
    regime: str

    def notes(self) -> list[str]:
        out = []
        if self.N_star is None:
            out.append("N_star undefined: requires lambda > lambda_star")
        if self.C_N_1 is None:
            out.append("C_N undefined: requires L_N < 1")
        if self.regime == Regime.LOCALIZED.value and self.a_inf is None:
            out.append("localization radii undefined: requires lambda > M*c")
        return out

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def render_text(self) -> str:
        rows = [(k, _fmt(v)) for k, v in self.as_dict().items()]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        lines += [f"# {n}" for n in self.notes()]
        return "\n".join(lines)

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(StabilityLedger))

    def csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, Enum):
        return str(v.value)
    return str(v)


def ledger_csv(ledgers) -> str:
    buf = io.StringIO()
    buf.write(StabilityLedger.csv_header() + "\n")
    for led in ledgers:
        buf.write(led.csv_row() + "\n")
    return buf.getvalue()


class Metric(str, Enum):
    TESTFN = "testfn"
    W1 = "w1"
    SW1 = "sw1"


def kappa(N: int, D: int, metric) -> float:
    """Bias rate: N^-1/2 for test functions and SW1, N^-1/(1 v D) + N^-1/2 for W1."""
    if N < 1 or D < 1:
        raise InputError("kappa requires N >= 1 and D >= 1")
    metric = Metric(metric)
    if metric is Metric.W1:
        return N ** (-1.0 / max(1, D)) + N**-0.5
    return N**-0.5


def localization_radii(model: ActivationModel, hp: Hyperparams, A: float, R0: float) -> tuple[float, float]:
    """(a_inf, R_inf) confining the SGD iterates for linear-growth activations."""
    if model.regime is not Regime.LOCALIZED:
        raise PreconditionError(f"localization radii need a localized-regime model, got {model.regime.value}")
    Mc = model.M * model.c
    if not hp.lam > Mc:
        raise PreconditionError(f"lambda > M*c violated: lambda={hp.lam} <= M*c={Mc}")
    if not hp.gamma * hp.lam <= 1:
        raise PreconditionError(f"gamma*lambda <= 1 violated: gamma*lambda={hp.gamma * hp.lam}")
    a_inf = max(R0, model.M * (A + model.b) / (hp.lam - Mc))
    R_inf = max(R0, model.M * (A + model.b + model.c * a_inf) / hp.lam)
    return a_inf, R_inf


def build_ledger(model: ActivationModel, hp: Hyperparams, A: float,
                 C0=(None, None), Cpi=(None, None), R0: float = 1.0) -> StabilityLedger:
    """Evaluate every derived constant; ``C0``/``Cpi`` are (p=1, p=2) pairs.

    Missing transport constants default to the Hoeffding value for a ball of
    radius ``R0`` (initialisation) and ``max(data_radius, A)`` (data, sup-norm).
    """
    if A < 0 or not math.isfinite(A):
        raise InputError(f"label bound A must be finite and >= 0, got {A}")
    for name in ("B", "M", "L_x", "L_theta"):
        if not math.isfinite(getattr(model, name)):
            raise InputError(f"model constant {name} is not finite")
    c0_default = hoeffding_constant(R0)
    cpi_default = hoeffding_constant(max(model.data_radius, A))
    c0 = [c0_default if v is None else float(v) for v in C0]
    cpi = [cpi_default if v is None else float(v) for v in Cpi]

    alpha, lam, N, gamma = hp.alpha, hp.lam, hp.N, hp.gamma
    AB = A + model.B
    M = model.M
    K = alpha * (AB * model.L_x + M**2 + M)
    lam_star = AB * model.L_theta + M**2
    L_N = abs(1.0 - gamma * lam) + gamma * lam_star
    C_star = 8.0 * M**4 + 4.0 * (lam + AB * model.L_theta) ** 2
    N_star = math.ceil(4.0 * alpha * C_star / (lam - lam_star)) if lam > lam_star else None

    if L_N < 1.0:
        C_N_1 = N * c0[0] + K**2 * cpi[0] / (1.0 - L_N**2)
        C_N_2 = max(c0[1], K**2 * cpi[1] / N) / (1.0 - L_N) ** 2
    else:
        C_N_1 = C_N_2 = None

    a_inf = R_inf = None
    adm_loc = None
    if model.regime is Regime.LOCALIZED:
        adm_loc = hp.lam > M * model.c and gamma * lam <= 1.0
        if adm_loc:
            a_inf, R_inf = localization_radii(model, hp, A, R0)

    return StabilityLedger(
        alpha=alpha, lam=lam, N=N, D=hp.D, gamma=gamma, A=A, B=model.B, M=M,
        L_x=model.L_x, L_theta=model.L_theta,
        K=K, lambda_star=lam_star, L_N=L_N, C_star=C_star, N_star=N_star,
        C_N_1=C_N_1, C_N_2=C_N_2,
        kappa_N_test_or_sliced=kappa(N, hp.D, Metric.TESTFN),
        kappa_N_wasserstein=kappa(N, hp.D, Metric.W1),
        a_inf=a_inf, R_inf=R_inf,
        admissible_contraction=L_N < 1.0,
        admissible_width=None if N_star is None else N >= N_star,
        admissible_localization=adm_loc,
        regime=model.regime.value,
    )


def gaussian_tail_bound(r: float, ledger: StabilityLedger, p: int = 1) -> Optional[float]:
    """2 exp(-r^2 / (2 C_N^(p) ||f||^2)) for an N^(-1/p)-Lipschitz observable."""
    C = ledger.C_N_1 if p == 1 else ledger.C_N_2
    if C is None:
        return None
    lip2 = ledger.N ** (-2.0 / p)
    return 2.0 * math.exp(-(r**2) / (2.0 * C * lip2))

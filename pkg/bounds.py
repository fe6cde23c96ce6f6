# bounds.py
"""
Cotas cerradas de privacidad para diseños de encuesta.
Todas se calculan en forma estable (log1p/expm1); el auditor exacto es la referencia.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StratifiedEpsilon:
    per_stratum: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_stratum", tuple(float(e) for e in self.per_stratum))
        if any(not (math.isfinite(e) and e >= 0) for e in self.per_stratum):
            raise ValueError(f"los epsilons por estrato deben ser finitos y ≥ 0: {self.per_stratum}")

    def __getitem__(self, stratum):
        # estratos 1-based
        return self.per_stratum[stratum - 1]

    def __len__(self):
        return len(self.per_stratum)

    @property
    def worst(self):
        return max(self.per_stratum, default=0.0)


def _check_eps(eps):
    if not (math.isfinite(eps) and eps > 0):
        raise ValueError(f"epsilon debe ser positivo y finito, se recibió {eps}")


def _check_rate(r):
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"la tasa debe estar en [0,1], se recibió {r}")


def poisson_amplified_eps(eps, r):
    """ln(1 + r(e^ε − 1)): ε efectivo de Poisson con tasa r."""
    _check_eps(eps)
    _check_rate(r)
    return math.log1p(r * math.expm1(eps))


def stratified_poisson_eps(eps, rates):
    return StratifiedEpsilon(tuple(poisson_amplified_eps(eps, r) for r in rates))


def value_change_eps(se, s, s2):
    """Cambiar el valor (y el estrato) de un registro cuesta ε_s + ε_s2."""
    return se[s] + se[s2]


def degradation_eps(eps, gs):
    _check_eps(eps)
    if gs < 0:
        raise ValueError("la sensibilidad global no puede ser negativa")
    return gs * eps


def cluster_worst_eps(eps, b):
    """
    Un conglomerado vacío y otro de tamaño b, se elige 1 de 2 y se cuenta con Laplace:
    ln((1 + e^{−εb}) / (e^{−ε} + e^{−εb})).
    """
    _check_eps(eps)
    if b < 1:
        raise ValueError("b debe ser un entero positivo")
    # = ε + log1p(e^{−εb}) − log1p(e^{−ε(b−1)})
    return eps + math.log1p(math.exp(-eps * b)) - math.log1p(math.exp(-eps * (b - 1)))


def homogeneous_cluster_eps(eps):
    """Conglomerados con la misma ley de salida: ln((1 + e^ε)/2)."""
    _check_eps(eps)
    return math.log1p(math.expm1(eps) / 2.0)


def expected_cluster_gap(n):
    """Brecha típica |g(C1) − g(C2)| entre dos Bin(n, ½): √n/4."""
    if n < 0:
        raise ValueError("n no puede ser negativo")
    return math.sqrt(n) / 4.0


def random_dp_cluster_eps(eps, n):
    """
    ln((e^ε + e^{−ε√n/4}) / (1 + e^{−ε√n/4})). Es una aproximación construida con la
    brecha esperada; en n chico no tiene significado exacto (n=0 da el caso homogéneo).
    """
    _check_eps(eps)
    t = eps * expected_cluster_gap(n)
    return eps + math.log1p(math.exp(-t - eps)) - math.log1p(math.exp(-t))


def small_eps_approx(eps, r):
    """r·ε, válida para ε chico."""
    _check_rate(r)
    return r * eps


def large_eps_approx(eps, r):
    """ε + ln r, régimen de ε grande."""
    if r <= 0:
        raise ValueError("large_eps_approx requiere r > 0")
    _check_rate(r)
    return eps + math.log(r)


# calculadoras expuestas por la CLI: nombre -> (función, parámetros)
CALCULATORS = {
    "poisson": (poisson_amplified_eps, ("eps", "rate")),
    "degradation": (degradation_eps, ("eps", "gs")),
    "cluster": (cluster_worst_eps, ("eps", "b")),
    "homogeneous": (homogeneous_cluster_eps, ("eps",)),
    "random-dp": (random_dp_cluster_eps, ("eps", "n")),
    "small-eps": (small_eps_approx, ("eps", "rate")),
    "large-eps": (large_eps_approx, ("eps", "rate")),
}


def evaluate_grid(fn, **params):
    """Producto cartesiano de listas de parámetros -> filas (params..., value)."""
    names = list(params)
    grids = np.meshgrid(*[np.asarray(params[k], dtype=float) for k in names], indexing="ij")
    rows = []
    for combo in zip(*[g.ravel() for g in grids]):
        kwargs = dict(zip(names, combo))
        rows.append({**kwargs, "value": fn(*combo)})
    return rows

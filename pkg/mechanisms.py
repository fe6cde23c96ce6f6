# mechanisms.py
"""
Consultas (conteo y suma acotada), mecanismo de Laplace y la ley exacta de salida de
un pipeline muestreo∘mecanismo: una mezcla finita de Laplace con escala común.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

import config

logger = logging.getLogger(__name__)

QUERY_KINDS = ("count", "clamped_sum")
WEIGHT_SUM_TOL = 1e-12
CENTER_MERGE_TOL = 1e-12


# ---------------------------
# Consultas
# ---------------------------
@dataclass(frozen=True)
class Query:
    kind: str
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"consulta desconocida {self.kind!r}; opciones: {QUERY_KINDS}")
        if self.kind == "clamped_sum" and not self.lo < self.hi:
            raise ValueError(f"clamped_sum requiere lo < hi (lo={self.lo}, hi={self.hi})")

    @classmethod
    def count(cls):
        return cls("count")

    @classmethod
    def clamped_sum(cls, lo, hi):
        return cls("clamped_sum", float(lo), float(hi))

    def describe(self):
        if self.kind == "count":
            return "count"
        return f"clamped_sum({self.lo:g},{self.hi:g})"


@dataclass(frozen=True)
class MechanismSpec:
    query: Query
    epsilon: float

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon debe ser positivo y finito, se recibió {self.epsilon}")

    @property
    def sensitivity(self):
        return query_sensitivity(self.query)

    @property
    def scale(self):
        return self.sensitivity / self.epsilon


def query_value(q, dataset):
    if q.kind == "count":
        return float(len(dataset))
    return float(np.clip(dataset.values, q.lo, q.hi).sum()) if len(dataset) else 0.0


def query_values_on(q, source, indices):
    """query_value sobre el subconjunto `indices` de `source` sin construir la población."""
    if q.kind == "count":
        return float(len(indices))
    if not len(indices):
        return 0.0
    return float(np.clip(source.values[list(indices)], q.lo, q.hi).sum())


def batch_query_values(q, source, masks):
    """Valores de la consulta para una matriz de inclusión (filas = muestras)."""
    masks = np.asarray(masks, dtype=bool)
    if q.kind == "count":
        return masks.sum(axis=1).astype(float)
    return masks.astype(float) @ np.clip(source.values, q.lo, q.hi)


def query_sensitivity(q):
    if q.kind == "count":
        return 1.0
    return max(abs(q.lo), abs(q.hi))


def clamping_violations(q, p):
    """Cantidad de valores fuera de [lo, hi]; se recortan, pero el auditor lo marca."""
    if q.kind == "count" or not len(p):
        return 0
    return int(np.count_nonzero((p.values < q.lo) | (p.values > q.hi)))


# ---------------------------
# Mezclas de Laplace
# ---------------------------
def _max_log_share(centers, weights, scale):
    """
    log max_a de w_j·Lap(a; c_j)/f(a) para cada componente j (centros crecientes).
    Entre centros consecutivos el cociente es monótono y más allá de los extremos es
    constante, así que el máximo se alcanza en algún centro.
    """
    z = np.asarray(centers, dtype=float) / scale
    lw = np.log(np.asarray(weights, dtype=float))
    # f(c_i) = e^{-z_i} Σ_{j≤i} w_j e^{z_j} + e^{z_i} Σ_{j>i} w_j e^{-z_j}
    left = np.logaddexp.accumulate(lw + z)
    right = np.append(np.logaddexp.accumulate((lw - z)[::-1])[::-1][1:], -np.inf)
    log_f = np.logaddexp(left - z, right + z)
    down = np.maximum.accumulate((-z - log_f)[::-1])[::-1]
    up = np.maximum.accumulate(z - log_f)
    return np.maximum(lw + z + down, lw - z + up)


@dataclass(frozen=True)
class LaplaceMixture:
    scale: float
    centers: tuple
    weights: tuple

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"la escala debe ser positiva, se recibió {self.scale}")
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.centers) != len(self.weights) or not self.centers:
            raise ValueError("centros y pesos deben tener la misma longitud (> 0)")
        if any(w <= 0 for w in self.weights):
            raise ValueError("los pesos deben ser positivos")
        if abs(sum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"los pesos suman {sum(self.weights)!r}, no 1")
        if any(b <= a for a, b in zip(self.centers, self.centers[1:])):
            raise ValueError("los centros deben ser estrictamente crecientes")

    @classmethod
    def from_components(cls, scale, components, weight_floor=None):
        """
        Construye la mezcla a partir de pares (centro, peso) sin normalizar:
        fusiona centros iguales, descarta las componentes cuya participación en la
        densidad queda bajo el umbral en todo ℝ (colas incluidas) y renormaliza.
        """
        floor = config.get_weight_floor() if weight_floor is None else weight_floor
        pares = sorted((float(c), float(w)) for c, w in components if w > 0)
        if not pares:
            raise ValueError("la mezcla no tiene componentes con peso positivo")

        total = sum(w for _, w in pares)
        fusion = []
        for c, w in pares:
            if fusion and abs(c - fusion[-1][0]) <= CENTER_MERGE_TOL * max(1.0, abs(c)):
                fusion[-1][1] += w
            else:
                fusion.append([c, w])

        centers = np.array([c for c, _ in fusion])
        weights = np.array([w for _, w in fusion]) / total
        if floor > 0:
            keep = _max_log_share(centers, weights, scale) >= np.log(floor)
        else:
            keep = np.ones(len(fusion), dtype=bool)
        kept = [(c, w) for c, w, k in zip(centers.tolist(), weights.tolist(), keep) if k]
        if len(kept) < len(fusion):
            logger.debug("se descartaron %d componentes con participación < %g", len(fusion) - len(kept), floor)
        if not kept:
            kept = [max(((c, w / total) for c, w in fusion), key=lambda x: x[1])]
        norm = sum(w for _, w in kept)
        return cls(scale, tuple(c for c, _ in kept), tuple(w / norm for _, w in kept))

    @cached_property
    def center_array(self):
        return np.array(self.centers)

    @cached_property
    def log_weight_array(self):
        return np.log(np.array(self.weights))

    def shifted(self, delta):
        return LaplaceMixture(self.scale, tuple(c + delta for c in self.centers), self.weights)


def mixture_from_outcomes(outcomes, q, m, weight_floor=None):
    """Una componente por valor distinto de la consulta, con la probabilidad total."""
    components = [
        (query_values_on(q, outcomes.source, o.indices), o.probability)
        for o in outcomes.entries
    ]
    return LaplaceMixture.from_components(m.scale, components, weight_floor)


def mixture_log_density(mix, a):
    a_arr = np.asarray(a, dtype=float)
    dist = np.abs(a_arr[..., None] - mix.center_array) / mix.scale
    out = logsumexp(mix.log_weight_array - dist, axis=-1) - np.log(2.0 * mix.scale)
    return float(out) if np.ndim(a) == 0 else out


def mixture_density(mix, a):
    out = np.exp(mixture_log_density(mix, a))
    return float(out) if np.ndim(a) == 0 else out


# ---------------------------
# Muestreo del mecanismo
# ---------------------------
def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_output(m, dataset, rng):
    """query_value + Lap(0, Δ/ε); determinista dada la semilla."""
    rng = as_generator(rng)
    return query_value(m.query, dataset) + float(rng.laplace(0.0, m.scale))

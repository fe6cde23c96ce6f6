# samplers.py
"""
Diseños de muestreo (Poisson por estrato, sin reemplazo guiado por una regla de
asignación, conglomerados) con dos semánticas:
- draw / draw_many: extracción aleatoria reproducible con semilla.
- enumerate_outcomes: ley exacta del resultado del muestreo (poblaciones chicas).
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.special import comb

import config
from allocation import AllocationRule, allocate
from errors import BudgetExceededError, InfeasibleAllocationError
from mechanisms import as_generator
from population import Population, strata_sizes

logger = logging.getLogger(__name__)

DESIGN_KINDS = ("poisson", "swor", "cluster")
WITHIN_KINDS = ("census", "poisson")


# ---------------------------
# Tipos
# ---------------------------
@dataclass(frozen=True)
class SamplingDesign:
    kind: str
    rates: tuple = ()
    allocation: AllocationRule = None
    choose: int = 1
    within: str = "census"
    within_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise ValueError(f"diseño desconocido {self.kind!r}; opciones: {DESIGN_KINDS}")
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError(f"las tasas deben estar en [0,1]: {self.rates}")
        if self.kind == "swor" and self.allocation is None:
            raise ValueError("swor necesita una regla de asignación")
        if self.kind == "cluster":
            if self.choose < 1:
                raise ValueError("cluster: choose debe ser ≥ 1")
            if self.within not in WITHIN_KINDS:
                raise ValueError(f"cluster: within debe ser uno de {WITHIN_KINDS}")
            if not 0.0 <= self.within_rate <= 1.0:
                raise ValueError("cluster: la tasa interna debe estar en [0,1]")

    @classmethod
    def poisson(cls, rates):
        return cls("poisson", rates=tuple(rates))

    @classmethod
    def swor(cls, allocation):
        return cls("swor", allocation=allocation)

    @classmethod
    def cluster(cls, choose, within="census", rate=None):
        if within == "poisson" and rate is None:
            raise ValueError("cluster con within=poisson necesita rate")
        return cls("cluster", choose=int(choose), within=within,
                   within_rate=1.0 if rate is None else float(rate))

    def describe(self):
        if self.kind == "poisson":
            return f"poisson({','.join(f'{r:g}' for r in self.rates)})"
        if self.kind == "swor":
            return f"swor[{self.allocation.describe()}]"
        within = "census" if self.within == "census" else f"poisson({self.within_rate:g})"
        return f"cluster({self.choose},{within})"


@dataclass(frozen=True)
class Outcome:
    indices: tuple
    probability: float
    source: Population = field(repr=False, compare=False)

    @property
    def subset(self):
        return self.source.subset(self.indices)


@dataclass(frozen=True)
class OutcomeDistribution:
    source: Population
    entries: tuple
    truncated_strata: tuple = ()

    def __post_init__(self):
        total = sum(o.probability for o in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"las probabilidades suman {total!r}, no 1")

    def __iter__(self):
        return ((o.subset, o.probability) for o in self.entries)

    def __len__(self):
        return len(self.entries)


def spawn_generators(seed, n):
    """n flujos independientes derivados de (semilla maestra, índice de celda)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------
# Utilidades internas
# ---------------------------
def _record_rates(d, p):
    if p.declared_strata > len(d.rates):
        raise ValueError(
            f"poisson tiene {len(d.rates)} tasas pero la población declara {p.declared_strata} estratos"
        )
    if not len(p):
        return np.zeros(0)
    return np.array(d.rates)[p.strata - 1]


def _feasible_support(d, p, truncate):
    """Soporte de la asignación con los conteos ajustados a |S_i| (o error)."""
    sizes = strata_sizes(p)
    outcome = allocate(d.allocation, sizes)
    truncated = set()
    support = []
    for counts, prob in outcome.support:
        ajustados = []
        for i, (n_i, s_i) in enumerate(zip(counts, sizes)):
            if n_i > s_i:
                if not truncate:
                    raise InfeasibleAllocationError(i + 1, n_i, s_i)
                truncated.add(i + 1)
                n_i = s_i
            ajustados.append(n_i)
        support.append((tuple(ajustados), prob))
    if truncated:
        logger.warning("⚠️ %s: asignación truncada a |S_i| en estratos %s",
                       d.describe(), sorted(truncated))
    return sizes, support, tuple(sorted(truncated))


def _poisson_subsets(indices, rates):
    """Pares (índices incluidos, probabilidad) de un muestreo Poisson sobre `indices`."""
    seguros = [i for i, r in zip(indices, rates) if r == 1.0]
    inciertos = [(i, r) for i, r in zip(indices, rates) if 0.0 < r < 1.0]
    for choice in product((False, True), repeat=len(inciertos)):
        prob = 1.0
        chosen = list(seguros)
        for (i, r), inc in zip(inciertos, choice):
            prob *= r if inc else 1.0 - r
            if inc:
                chosen.append(i)
        yield tuple(sorted(chosen)), prob


def _uncertain_count(rates):
    return sum(1 for r in rates if 0.0 < r < 1.0)


def _check_cluster(d, p):
    if d.choose > p.declared_clusters:
        raise ValueError(
            f"cluster: choose={d.choose} supera los {p.declared_clusters} conglomerados declarados"
        )


def _members_by_cluster(p):
    members = {c: [] for c in range(1, p.declared_clusters + 1)}
    for i, r in enumerate(p.records):
        members[r.cluster].append(i)
    return members


# ---------------------------
# Extracción aleatoria
# ---------------------------
def draw_many(d, p, rng, size, truncate=False):
    """Matriz booleana (size × |P|) de inclusión; cada fila es una extracción de `draw`."""
    rng = as_generator(rng)
    n = len(p)

    if d.kind == "poisson":
        return rng.random((size, n)) < _record_rates(d, p)

    if d.kind == "swor":
        sizes, support, _ = _feasible_support(d, p, truncate)
        counts = np.array([c for c, _ in support], dtype=int).reshape(len(support), len(sizes))
        probs = np.array([pr for _, pr in support])
        pick = rng.choice(len(support), size=size, p=probs / probs.sum())
        row_counts = counts[pick]
        keys = rng.random((size, n))
        mask = np.zeros((size, n), dtype=bool)
        for s, idx in p.indices_by_stratum().items():
            if not idx:
                continue
            ranks = keys[:, idx].argsort(axis=1).argsort(axis=1)
            mask[:, idx] = ranks < row_counts[:, s - 1][:, None]
        return mask

    # cluster
    _check_cluster(d, p)
    m = p.declared_clusters
    ranks = rng.random((size, m)).argsort(axis=1).argsort(axis=1)
    chosen = ranks < d.choose
    mask = chosen[:, p.clusters - 1] if n else np.zeros((size, 0), dtype=bool)
    if d.within == "poisson":
        mask &= rng.random((size, n)) < d.within_rate
    return mask


def draw(d, p, rng):
    """Una muestra; una asignación infactible (n_i > |S_i|) es un error."""
    mask = draw_many(d, p, rng, 1, truncate=False)[0]
    return p.subset(np.flatnonzero(mask).tolist())


# ---------------------------
# Ley exacta
# ---------------------------
def _required_outcomes(d, p, support=None, sizes=None):
    if d.kind == "poisson":
        return 2 ** _uncertain_count(_record_rates(d, p).tolist())
    if d.kind == "swor":
        return sum(
            math.prod(int(comb(s, c, exact=True)) for s, c in zip(sizes, counts))
            for counts, _ in support
        )
    members = _members_by_cluster(p)
    if d.within == "census":
        return int(comb(p.declared_clusters, d.choose, exact=True))
    inciertos = 0.0 < d.within_rate < 1.0
    return sum(
        2 ** (sum(len(members[c]) for c in choice) if inciertos else 0)
        for choice in combinations(members, d.choose)
    )


def enumerate_outcomes(d, p, budget=None, truncate=True):
    """
    Distribución exacta del muestreo. En modo auditoría (truncate=True) las asignaciones
    infactibles se truncan a |S_i| y quedan registradas en `truncated_strata`.
    """
    budget = config.get_budget(budget)
    truncated = ()
    acc = {}

    if d.kind == "poisson":
        rates = _record_rates(d, p).tolist()
        required = _required_outcomes(d, p)
        if required > budget:
            raise BudgetExceededError("enumerate_outcomes", required, budget)
        for idx, prob in _poisson_subsets(range(len(p)), rates):
            acc[idx] = acc.get(idx, 0.0) + prob

    elif d.kind == "swor":
        sizes, support, truncated = _feasible_support(d, p, truncate)
        required = _required_outcomes(d, p, support=support, sizes=sizes)
        if required > budget:
            raise BudgetExceededError("enumerate_outcomes", required, budget)
        by_stratum = p.indices_by_stratum()
        for counts, prob in support:
            pools = [combinations(by_stratum[s + 1], n_i) for s, n_i in enumerate(counts)]
            n_ways = math.prod(int(comb(sizes[s], n_i, exact=True)) for s, n_i in enumerate(counts))
            for parts in product(*pools):
                idx = tuple(sorted(i for part in parts for i in part))
                acc[idx] = acc.get(idx, 0.0) + prob / n_ways

    else:
        _check_cluster(d, p)
        required = _required_outcomes(d, p)
        if required > budget:
            raise BudgetExceededError("enumerate_outcomes", required, budget)
        members = _members_by_cluster(p)
        choices = list(combinations(members, d.choose))
        for choice in choices:
            idx_all = sorted(i for c in choice for i in members[c])
            if d.within == "census":
                idx = tuple(idx_all)
                acc[idx] = acc.get(idx, 0.0) + 1.0 / len(choices)
                continue
            for idx, prob in _poisson_subsets(idx_all, [d.within_rate] * len(idx_all)):
                acc[idx] = acc.get(idx, 0.0) + prob / len(choices)

    entries = tuple(Outcome(idx, prob, p) for idx, prob in acc.items() if prob > 0.0)
    return OutcomeDistribution(p, entries, truncated)


def inclusion_probability(d, p, index, budget=None):
    if not 0 <= index < len(p):
        raise IndexError(f"índice {index} fuera de la población de tamaño {len(p)}")
    if d.kind == "poisson":
        return float(_record_rates(d, p)[index])
    dist = enumerate_outcomes(d, p, budget)
    return float(sum(o.probability for o in dist.entries if index in o.indices))


def inclusion_correlation(d, p, i, j, budget=None):
    """
    Correlación de Pearson entre los indicadores de inclusión χ_i y χ_j.
    Indefinida (nan) si alguno de los indicadores es constante.
    """
    if i == j:
        raise ValueError("inclusion_correlation requiere i ≠ j")
    for idx in (i, j):
        if not 0 <= idx < len(p):
            raise IndexError(f"índice {idx} fuera de la población de tamaño {len(p)}")

    if d.kind == "poisson":
        rates = _record_rates(d, p)
        if rates[i] in (0.0, 1.0) or rates[j] in (0.0, 1.0):
            logger.info("correlación indefinida: indicador constante")
            return math.nan
        return 0.0

    dist = enumerate_outcomes(d, p, budget)
    pi = pj = pij = 0.0
    for o in dist.entries:
        has_i, has_j = i in o.indices, j in o.indices
        pi += o.probability * has_i
        pj += o.probability * has_j
        pij += o.probability * (has_i and has_j)
    var_i, var_j = pi * (1 - pi), pj * (1 - pj)
    if var_i < 1e-15 or var_j < 1e-15:
        logger.info("correlación indefinida: indicador constante")
        return math.nan
    corr = (pij - pi * pj) / math.sqrt(var_i * var_j)
    return max(-1.0, min(1.0, corr))

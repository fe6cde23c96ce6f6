# allocation.py
"""
Reglas de asignación f: tamaños de estrato -> número de casos a muestrear por estrato,
y el escáner exhaustivo de sensibilidad global GS_f (cambio L1 al agregar un registro).
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import pandas as pd

import config
from errors import AllocationError, BudgetExceededError

logger = logging.getLogger(__name__)

RULE_KINDS = (
    "fixed",
    "parity_demo",
    "proportional_floor",
    "proportional_hamilton",
    "huntington_hill",
    "randomized_rounding",
)
# reglas que reparten un total fijo entre estratos
TOTAL_RULES = ("proportional_floor", "proportional_hamilton", "huntington_hill")


# ---------------------------
# Tipos
# ---------------------------
@dataclass(frozen=True)
class AllocationRule:
    kind: str
    counts: tuple = ()
    total: int = 0
    rates: tuple = ()

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"regla desconocida {self.kind!r}; opciones: {RULE_KINDS}")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if self.total < 0 or any(c < 0 for c in self.counts):
            raise ValueError("los totales y conteos no pueden ser negativos")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError(f"las tasas deben estar en [0,1]: {self.rates}")

    @classmethod
    def fixed(cls, counts):
        return cls("fixed", counts=tuple(counts))

    @classmethod
    def parity_demo(cls):
        return cls("parity_demo")

    @classmethod
    def proportional_floor(cls, total):
        return cls("proportional_floor", total=int(total))

    @classmethod
    def proportional_hamilton(cls, total):
        return cls("proportional_hamilton", total=int(total))

    @classmethod
    def huntington_hill(cls, total):
        return cls("huntington_hill", total=int(total))

    @classmethod
    def randomized_rounding(cls, rates):
        return cls("randomized_rounding", rates=tuple(rates))

    def describe(self):
        if self.kind == "fixed":
            return f"fixed({','.join(map(str, self.counts))})"
        if self.kind in TOTAL_RULES:
            return f"{self.kind}({self.total})"
        if self.kind == "randomized_rounding":
            return f"randomized_rounding({','.join(f'{r:g}' for r in self.rates)})"
        return self.kind


@dataclass(frozen=True)
class AllocationOutcome:
    support: tuple  # ((counts, probabilidad), ...)

    @property
    def is_deterministic(self):
        return len(self.support) == 1

    def marginal(self, stratum_index):
        law = {}
        for counts, prob in self.support:
            law[counts[stratum_index]] = law.get(counts[stratum_index], 0.0) + prob
        return sorted(law.items())

    def expected(self):
        k = len(self.support[0][0])
        return tuple(sum(c[i] * p for c, p in self.support) for i in range(k))


@dataclass(frozen=True)
class SensitivityWitness:
    sizes: tuple
    stratum: int  # 1-based
    counts_before: tuple
    counts_after: tuple


@dataclass
class SensitivityReport:
    observed_gs: int
    witness: SensitivityWitness
    rule: AllocationRule
    k: int
    max_stratum_size: int
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    skipped: int = 0

    def to_frame(self):
        return pd.DataFrame(
            [("|".join(map(str, s)), j, l1) for s, j, l1 in self.rows],
            columns=["sizes", "stratum", "l1_change"],
        )


# ---------------------------
# Reglas
# ---------------------------
def _singleton(counts):
    return AllocationOutcome(((tuple(int(c) for c in counts), 1.0),))


def _check_total(rule, sizes):
    if rule.total > 0 and sum(sizes) == 0:
        raise AllocationError(f"{rule.describe()}: población vacía con total {rule.total} > 0")


def _floor_quotas(total, sizes):
    n = sum(sizes)
    if n == 0:
        return [0] * len(sizes), [0] * len(sizes)
    # aritmética entera: cuota_i = total*s_i/n
    return [(total * s) // n for s in sizes], [(total * s) % n for s in sizes]


def _hamilton(total, sizes):
    floors, remainders = _floor_quotas(total, sizes)
    extra = total - sum(floors)
    # mayor resto primero; empate -> menor índice
    orden = sorted(range(len(sizes)), key=lambda i: (-remainders[i], i))
    for i in orden[:extra]:
        floors[i] += 1
    return floors


def _huntington_hill(total, sizes):
    nonempty = [i for i, s in enumerate(sizes) if s > 0]
    if total < len(nonempty):
        raise AllocationError(
            f"huntington_hill: total {total} menor que los {len(nonempty)} estratos no vacíos"
        )
    seats = [1 if s > 0 else 0 for s in sizes]
    # prioridad s/sqrt(a(a+1)) comparada exacta como s^2/(a(a+1)); empate -> menor índice
    heap = [(-Fraction(sizes[i] ** 2, 2), i) for i in nonempty]
    heapq.heapify(heap)
    for _ in range(total - len(nonempty)):
        _, i = heapq.heappop(heap)
        seats[i] += 1
        a = seats[i]
        heapq.heappush(heap, (-Fraction(sizes[i] ** 2, a * (a + 1)), i))
    return seats


def _two_point(rate, size):
    x = rate * size
    if abs(x - round(x)) < 1e-9:
        x = float(round(x))
    lo = math.floor(x)
    frac = x - lo
    if frac == 0.0:
        return [(lo, 1.0)]
    return [(lo, 1.0 - frac), (lo + 1, frac)]


def allocate(rule, sizes):
    sizes = tuple(int(s) for s in sizes)
    if any(s < 0 for s in sizes):
        raise AllocationError(f"tamaños negativos: {sizes}")

    if rule.kind == "fixed":
        if len(rule.counts) != len(sizes):
            raise AllocationError(
                f"fixed tiene {len(rule.counts)} conteos pero hay {len(sizes)} estratos"
            )
        return _singleton(rule.counts)

    if rule.kind == "parity_demo":
        if len(sizes) != 1:
            raise AllocationError("parity_demo solo está definida para un estrato (k=1)")
        n = sizes[0]
        return _singleton((n if n % 2 == 0 else n - 1,))

    if rule.kind == "proportional_floor":
        _check_total(rule, sizes)
        return _singleton(_floor_quotas(rule.total, sizes)[0])

    if rule.kind == "proportional_hamilton":
        _check_total(rule, sizes)
        return _singleton(_hamilton(rule.total, sizes))

    if rule.kind == "huntington_hill":
        _check_total(rule, sizes)
        return _singleton(_huntington_hill(rule.total, sizes))

    # randomized_rounding
    if len(rule.rates) != len(sizes):
        raise AllocationError(
            f"randomized_rounding tiene {len(rule.rates)} tasas pero hay {len(sizes)} estratos"
        )
    per_stratum = [_two_point(r, s) for r, s in zip(rule.rates, sizes)]
    support = []
    for combo in product(*per_stratum):
        prob = math.prod(p for _, p in combo)
        support.append((tuple(c for c, _ in combo), prob))
    return AllocationOutcome(tuple(support))


# ---------------------------
# Sensibilidad global
# ---------------------------
def _quantile(law, u):
    acc = 0.0
    for value, prob in law:
        acc += prob
        if u < acc:
            return value
    return law[-1][0]


def coupled_l1(before, after):
    """
    Máxima distancia L1 entre resultados acoplados monótonamente (un U común para todos
    los estratos, cuantil contra cuantil). Para reglas deterministas es la L1 de siempre.
    Devuelve (distancia, conteos_antes, conteos_después).
    """
    k = len(before.support[0][0])
    laws_b = [before.marginal(i) for i in range(k)]
    laws_a = [after.marginal(i) for i in range(k)]
    cortes = {0.0, 1.0}
    for law in laws_b + laws_a:
        acc = 0.0
        for _, p in law:
            acc += p
            if 0.0 < acc < 1.0:
                cortes.add(acc)
    cortes = sorted(cortes)

    best = (-1, (), ())
    for lo, hi in zip(cortes, cortes[1:]):
        if hi - lo <= 1e-15:
            continue
        u = (lo + hi) / 2
        cb = tuple(_quantile(law, u) for law in laws_b)
        ca = tuple(_quantile(law, u) for law in laws_a)
        dist = sum(abs(x - y) for x, y in zip(cb, ca))
        if dist > best[0]:
            best = (dist, cb, ca)
    return best


def global_sensitivity_scan(rule, k, max_stratum_size, budget=None, claimed_bound=None,
                            min_population=1, respect_total=False):
    """
    Recorre todos los vectores de tamaños con entradas ≤ max_stratum_size y cada adición
    de una unidad; GS observada = máximo cambio L1. Las instancias donde la regla no
    aplica (precondiciones) se cuentan en `skipped`.
    """
    budget = config.get_budget(budget)
    required = (max_stratum_size + 1) ** k * k
    if required > budget:
        raise BudgetExceededError("global_sensitivity_scan", required, budget)

    rows, violations = [], []
    skipped = 0
    best_gs, witness = -1, None
    for sizes in product(range(max_stratum_size + 1), repeat=k):
        n = sum(sizes)
        if n < min_population or (respect_total and rule.kind in TOTAL_RULES and n < rule.total):
            continue
        try:
            before = allocate(rule, sizes)
        except AllocationError:
            skipped += k
            continue
        for j in range(k):
            grown = sizes[:j] + (sizes[j] + 1,) + sizes[j + 1:]
            try:
                after = allocate(rule, grown)
            except AllocationError:
                skipped += 1
                continue
            l1, cb, ca = coupled_l1(before, after)
            rows.append((sizes, j + 1, l1))
            if l1 > best_gs:
                best_gs = l1
                witness = SensitivityWitness(sizes, j + 1, cb, ca)
            if claimed_bound is not None and l1 > claimed_bound:
                violation = SensitivityWitness(sizes, j + 1, cb, ca)
                violations.append(violation)
                logger.warning(
                    "⚠️ %s supera la cota %s: sizes=%s estrato=%d antes=%s después=%s l1=%d",
                    rule.describe(), claimed_bound, sizes, j + 1, cb, ca, l1,
                )

    if witness is None:
        raise AllocationError(f"{rule.describe()}: ninguna instancia escaneable en la grilla")
    logger.info(
        "%s: GS observada %d en %d instancias (%d omitidas)",
        rule.describe(), best_gs, len(rows), skipped,
    )
    return SensitivityReport(
        observed_gs=int(best_gs),
        witness=witness,
        rule=rule,
        k=k,
        max_stratum_size=max_stratum_size,
        rows=rows,
        violations=violations,
        skipped=skipped,
    )

# auditor.py
"""
Medición de referencia de la privacidad de pipelines muestreo∘Laplace:
- sup_log_ratio: supremo exacto del log-cociente entre dos mezclas de Laplace.
- exact_effective_epsilon / stratified_audit / worst_case_scan: auditorías exactas.
- mc_effective_epsilon_lower: cota inferior Monte Carlo (Clopper–Pearson).
- conjecture_harness / random_dp_harness: tablas de calibración.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from statsmodels.stats.proportion import proportion_confint

import config
from allocation import AllocationRule
from bounds import StratifiedEpsilon, random_dp_cluster_eps
from errors import AllocationError, ScaleMismatchError
from mechanisms import (
    MechanismSpec,
    Query,
    batch_query_values,
    clamping_violations,
    mixture_from_outcomes,
    mixture_log_density,
)
from population import (
    Population,
    Record,
    Universe,
    add_record,
    count_populations,
    enumerate_populations,
)
from samplers import SamplingDesign, draw_many, enumerate_outcomes, spawn_generators

logger = logging.getLogger(__name__)

METHODS = ("exact", "monte_carlo", "closed_form")
TIE_TOL = 1e-12
SEARCH_XATOL = 1e-10
MC_BATCH = 100_000


# ---------------------------
# Reporte
# ---------------------------
@dataclass(frozen=True)
class PrivacyReport:
    eps_add: float
    eps_remove: float
    eps_effective: float
    witness_output: float
    method: str
    per_stratum: StratifiedEpsilon = None
    flags: tuple = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"método desconocido {self.method!r}")

    def to_row(self, scenario, eps_base, design):
        return {
            "scenario": scenario,
            "eps_base": eps_base,
            "design": design,
            "eps_add": self.eps_add,
            "eps_remove": self.eps_remove,
            "eps_effective": self.eps_effective,
            "witness": format_witness(self.witness_output),
            "method": self.method,
        }


def format_witness(w):
    if math.isinf(w):
        return "inf" if w > 0 else "-inf"
    return repr(float(w))


@dataclass
class ScanResult:
    report: PrivacyReport
    witness: object  # NeighborPair
    instances: int = 0
    skipped: int = 0
    bound_violations: list = field(default_factory=list)


# ---------------------------
# Supremo del log-cociente
# ---------------------------
def _log_ratio(mix_a, mix_b, a):
    return mixture_log_density(mix_a, a) - mixture_log_density(mix_b, a)


def _interval_max(fn, lo, hi):
    """Máximo de fn en cada intervalo [lo_i, hi_i] (búsqueda acotada de scipy)."""
    xs, vs = [], []
    for a, b in zip(lo, hi):
        res = minimize_scalar(lambda x: -fn(x), bounds=(a, b), method="bounded",
                              options={"xatol": SEARCH_XATOL})
        xs.append(float(res.x))
        vs.append(-float(res.fun))
    return np.array(xs), np.array(vs)


def sup_log_ratio(mix_a, mix_b):
    """
    sup_a ln(mix_a(a)/mix_b(a)) evaluado en: todos los centros, una búsqueda acotada en
    cada intervalo entre centros y los límites analíticos en ±∞.
    Devuelve (eps, testigo); el testigo es finito salvo que una cola gane estrictamente.
    """
    if not math.isclose(mix_a.scale, mix_b.scale, rel_tol=1e-12):
        raise ScaleMismatchError(f"escalas distintas: {mix_a.scale} vs {mix_b.scale}")
    s = mix_a.scale

    def fn(x):
        return _log_ratio(mix_a, mix_b, x)

    points = np.union1d(mix_a.center_array, mix_b.center_array)
    cand_x = [points]
    cand_v = [np.atleast_1d(fn(points))]
    if len(points) > 1:
        xs, vs = _interval_max(fn, points[:-1], points[1:])
        cand_x.append(xs)
        cand_v.append(vs)

    ca, cb = mix_a.center_array, mix_b.center_array
    la, lb = mix_a.log_weight_array, mix_b.log_weight_array
    left = logsumexp(la - ca / s) - logsumexp(lb - cb / s)
    right = logsumexp(la + ca / s) - logsumexp(lb + cb / s)

    xs = np.concatenate(cand_x)
    vs = np.concatenate(cand_v)
    best = max(float(vs.max()), float(left), float(right))
    finite = np.flatnonzero(vs >= best - TIE_TOL)
    if finite.size:
        return best, float(xs[finite[0]])
    return best, -math.inf if left >= right else math.inf


# ---------------------------
# Auditorías exactas
# ---------------------------
def _assembly_flags(m, pair):
    flags = []
    if pair.bounds_grown:
        flags.append("bounds_grown")
    clamped = clamping_violations(m.query, pair.extended)
    if clamped:
        logger.warning("⚠️ %d valores fuera de [%g, %g] se recortan", clamped, m.query.lo, m.query.hi)
        flags.append(f"clamped_values={clamped}")
    return flags


def exact_effective_epsilon(d, m, pair, budget=None):
    out_base = enumerate_outcomes(d, pair.base, budget)
    out_ext = enumerate_outcomes(d, pair.extended, budget)
    flags = _assembly_flags(m, pair)
    truncated = sorted(set(out_base.truncated_strata) | set(out_ext.truncated_strata))
    if truncated:
        flags.append("truncated_strata=" + "|".join(map(str, truncated)))

    mix_base = mixture_from_outcomes(out_base, m.query, m)
    mix_ext = mixture_from_outcomes(out_ext, m.query, m)
    eps_add, w_add = sup_log_ratio(mix_ext, mix_base)
    eps_remove, w_remove = sup_log_ratio(mix_base, mix_ext)
    # residuos de coma flotante: el supremo de un cociente de densidades es ≥ 0
    eps_add, eps_remove = max(eps_add, 0.0), max(eps_remove, 0.0)
    witness = w_add if eps_add >= eps_remove else w_remove
    return PrivacyReport(
        eps_add=eps_add,
        eps_remove=eps_remove,
        eps_effective=max(eps_add, eps_remove),
        witness_output=witness,
        method="exact",
        flags=tuple(flags),
    )


def _universe_values(universe):
    if isinstance(universe, Universe):
        return universe.values
    return tuple(sorted(set(float(v) for v in universe)))


def stratified_audit(d, m, p, universe, budget=None):
    """
    ε por estrato: máximo sobre los valores del universo (y los conglomerados) de la
    auditoría exacta al agregar (s, x) a la población base `p`.
    """
    values = _universe_values(universe)
    if p.declared_clusters == 0:
        p = Population(p.records, p.declared_strata, 1)

    per_stratum = []
    best = None
    flags = set()
    for s in range(1, p.declared_strata + 1):
        eps_s = 0.0
        for c in range(1, p.declared_clusters + 1):
            for x in values:
                rep = exact_effective_epsilon(d, m, add_record(p, Record(s, c, x)), budget)
                flags.update(rep.flags)
                eps_s = max(eps_s, rep.eps_effective)
                if best is None or rep.eps_effective > best.eps_effective + TIE_TOL:
                    best = rep
        per_stratum.append(eps_s)
        logger.debug("estrato %d: ε = %.9f", s, eps_s)

    if best is None:
        raise ValueError("stratified_audit necesita al menos un estrato declarado")
    return PrivacyReport(
        eps_add=best.eps_add,
        eps_remove=best.eps_remove,
        eps_effective=max(per_stratum),
        witness_output=best.witness_output,
        method="exact",
        per_stratum=StratifiedEpsilon(tuple(per_stratum)),
        flags=tuple(sorted(flags)),
    )


def _scan_chunk(d, m, populations, additions, budget, upper_bound, min_size):
    best = None
    instances = skipped = 0
    violations = []
    for p in populations:
        if len(p) < min_size:
            continue
        for r in additions:
            pair = add_record(p, r)
            try:
                rep = exact_effective_epsilon(d, m, pair, budget)
            except AllocationError as e:
                skipped += 1
                logger.debug("instancia omitida (%s): %s", e, pair.added)
                continue
            instances += 1
            if upper_bound is not None and rep.eps_effective > upper_bound + 1e-9:
                violations.append((pair, rep))
                logger.warning(
                    "⚠️ ε exacto %.9f supera la cota %.9f: |base|=%d, agregado=%s",
                    rep.eps_effective, upper_bound, len(p), r,
                )
            if best is None or rep.eps_effective > best[0].eps_effective + TIE_TOL:
                best = (rep, pair)
    return best, instances, skipped, violations


def _scan_chunk_args(args):
    return _scan_chunk(*args)


def worst_case_scan(d, m, universe, max_size, budget=None, upper_bound=None, min_size=0,
                    workers=1):
    """
    Máximo de la auditoría exacta sobre toda población de tamaño ≤ max_size del universo
    y toda adición de un registro. `upper_bound` (p.ej. degradation_eps(ε, GS)) se
    contrasta en cada instancia; las violaciones se registran, no se ocultan.
    """
    populations = list(enumerate_populations(universe, max_size, budget))
    additions = universe.records()
    logger.info("worst_case_scan: %d poblaciones × %d adiciones (%d trabajadores)",
                count_populations(universe, max_size), len(additions), workers)

    if workers > 1:
        chunks = [populations[i::workers] for i in range(workers)]
        args = [(d, m, chunk, additions, budget, upper_bound, min_size) for chunk in chunks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_scan_chunk_args, args))
    else:
        parts = [_scan_chunk(d, m, populations, additions, budget, upper_bound, min_size)]

    best = None
    instances = skipped = 0
    violations = []
    for part_best, n_inst, n_skip, part_viol in parts:
        instances += n_inst
        skipped += n_skip
        violations.extend(part_viol)
        if part_best is None:
            continue
        if best is None or part_best[0].eps_effective > best[0].eps_effective + TIE_TOL:
            best = part_best
        elif abs(part_best[0].eps_effective - best[0].eps_effective) <= TIE_TOL and \
                len(part_best[1].base) < len(best[1].base):
            # empate entre trabajadores: gana la base más chica (orden canónico)
            best = part_best

    if best is None:
        raise AllocationError("worst_case_scan: ninguna instancia auditable")
    if skipped:
        logger.warning("⚠️ worst_case_scan omitió %d instancias por precondiciones de la regla", skipped)
    return ScanResult(best[0], best[1], instances, skipped, violations)


# ---------------------------
# Monte Carlo
# ---------------------------
def _sample_outputs(d, m, p, rng, n_samples):
    outputs = np.empty(n_samples)
    centers = set()
    done = 0
    while done < n_samples:
        size = min(MC_BATCH, n_samples - done)
        masks = draw_many(d, p, rng, size, truncate=True)
        values = batch_query_values(m.query, p, masks)
        centers.update(np.unique(values).tolist())
        outputs[done:done + size] = values + rng.laplace(0.0, m.scale, size)
        done += size
    return np.sort(outputs), centers


def _event_bounds(k_num, k_den, n, alpha):
    """Cota inferior de ln(p_num/p_den) con probabilidad de fallo ≤ alpha por evento."""
    k_num = np.asarray(k_num)
    k_den = np.asarray(k_den)
    lo_num, _ = proportion_confint(k_num, n, alpha=alpha, method="beta")
    _, hi_den = proportion_confint(k_den, n, alpha=alpha, method="beta")
    lo_num = np.asarray(lo_num, dtype=float)
    hi_den = np.asarray(hi_den, dtype=float)
    with np.errstate(divide="ignore"):
        bound = np.log(lo_num) - np.log(hi_den)
    # eventos degenerados (conteo cero en el numerador) se omiten
    return np.where(k_num > 0, bound, -np.inf)


def mc_effective_epsilon_lower(d, m, pair, n_samples, confidence=0.95, seed=None):
    """
    Cota inferior estadística del ε efectivo. Eventos {a ≤ t} y {a > t} para cada centro
    observado t; (1 − confidence) se reparte (Bonferroni) entre todos los eventos.
    """
    if n_samples < 1000:
        raise ValueError("mc_effective_epsilon_lower necesita n_samples ≥ 1000")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence debe estar en (0,1)")
    seed = config.get_default_seed() if seed is None else seed
    rng_base, rng_ext = spawn_generators(seed, 2)

    out_base, centers_b = _sample_outputs(d, m, pair.base, rng_base, n_samples)
    out_ext, centers_e = _sample_outputs(d, m, pair.extended, rng_ext, n_samples)
    thresholds = np.array(sorted(centers_b | centers_e))

    le_base = np.searchsorted(out_base, thresholds, side="right")
    le_ext = np.searchsorted(out_ext, thresholds, side="right")
    gt_base, gt_ext = n_samples - le_base, n_samples - le_ext
    alpha = (1.0 - confidence) / (4 * len(thresholds))

    add_lo = _event_bounds(le_ext, le_base, n_samples, alpha)
    add_hi = _event_bounds(gt_ext, gt_base, n_samples, alpha)
    rem_lo = _event_bounds(le_base, le_ext, n_samples, alpha)
    rem_hi = _event_bounds(gt_base, gt_ext, n_samples, alpha)

    eps_add = max(float(add_lo.max()), float(add_hi.max()), 0.0)
    eps_remove = max(float(rem_lo.max()), float(rem_hi.max()), 0.0)
    stacks = np.vstack([add_lo, add_hi, rem_lo, rem_hi])
    row, col = np.unravel_index(np.argmax(stacks), stacks.shape)
    event = ("add:a<=t", "add:a>t", "remove:a<=t", "remove:a>t")[row]
    logger.info("MC: ε ≥ %.6f (evento %s, t=%g, %d umbrales)",
                max(eps_add, eps_remove), event, thresholds[col], len(thresholds))
    return PrivacyReport(
        eps_add=eps_add,
        eps_remove=eps_remove,
        eps_effective=max(eps_add, eps_remove),
        witness_output=float(thresholds[col]),
        method="monte_carlo",
        flags=(f"event={event}", f"n_samples={n_samples}", f"confidence={confidence:g}"),
    )


# ---------------------------
# Arneses
# ---------------------------
def conjecture_harness(grid, query=None, budget=None):
    """
    Para cada celda (ε, r, |S|): ε exacto del estrato bajo swor + randomized_rounding y la
    constante ajustada (e^{ε_i} − 1)/(ε·r). No se afirma ningún valor esperado.
    """
    query = query or Query.count()
    rows = []
    for eps in grid["eps"]:
        for r in grid["rates"]:
            for size in grid["sizes"]:
                p = Population(tuple(Record(1, 1, 1.0) for _ in range(size)), 1, 1)
                d = SamplingDesign.swor(AllocationRule.randomized_rounding((r,)))
                mech = MechanismSpec(query, float(eps))
                rep = stratified_audit(d, mech, p, Universe((1.0,), 1, 1), budget)
                exact = rep.per_stratum[1]
                fitted = math.expm1(exact) / (eps * r) if r > 0 else math.nan
                rows.append((float(eps), float(r), int(size), exact, fitted))
    logger.info("conjecture_harness: %d celdas", len(rows))
    return pd.DataFrame(rows, columns=["eps", "rate", "stratum_size", "exact_eps", "fitted_constant"])


def random_dp_trial(c1, c2, eps, budget=None):
    """ε exacto del pipeline 1-de-2 conglomerados (suma en [0,1]) con el peor registro agregado."""
    records = [Record(1, 1, float(v)) for v in c1] + [Record(1, 2, float(v)) for v in c2]
    p = Population(tuple(records), 1, 2)
    d = SamplingDesign.cluster(1, "census")
    mech = MechanismSpec(Query.clamped_sum(0.0, 1.0), eps)
    best = 0.0
    for cluster in (1, 2):
        for value in (mech.query.lo, mech.query.hi):
            rep = exact_effective_epsilon(d, mech, add_record(p, Record(1, cluster, value)), budget)
            best = max(best, rep.eps_effective)
    return best


def random_dp_harness(n, eps, trials, seed=None, budget=None):
    """
    Conglomerados i.i.d. Bernoulli(½)^n; por ensayo registra la brecha realizada
    d = |g(C1) − g(C2)|, el ε exacto y la fórmula aproximada.
    """
    if n > 64:
        raise ValueError("random_dp_harness audita exacto hasta n = 64")
    seed = config.get_default_seed() if seed is None else seed
    formula = random_dp_cluster_eps(eps, n)
    rows = []
    for trial, rng in enumerate(spawn_generators(seed, trials)):
        c1 = rng.integers(0, 2, size=n)
        c2 = rng.integers(0, 2, size=n)
        gap = int(abs(int(c1.sum()) - int(c2.sum())))
        rows.append((trial, gap, random_dp_trial(c1, c2, eps, budget), formula))
    table = pd.DataFrame(rows, columns=["trial", "gap", "exact_eps", "formula_eps"])
    logger.info("random_dp_harness: mediana ε exacto %.5f vs fórmula %.5f",
                table["exact_eps"].median(), formula)
    return table


def exact_eps_quantiles(table, qs=(0.05, 0.25, 0.5, 0.75, 0.95)):
    return {float(q): float(v) for q, v in table["exact_eps"].quantile(list(qs)).items()}

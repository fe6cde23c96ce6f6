# population.py
"""
Modelo de datos: registros etiquetados (estrato, conglomerado, valor), poblaciones
como multiconjuntos, vecinos por agregar/quitar un registro y lectura del CSV.

Formato CSV:
    #k=3,m=2            (directiva opcional: declara número de estratos y conglomerados)
    stratum,cluster,value
    1,1,0.5
Los ids empiezan en 1. Los estratos/conglomerados vacíos son válidos.
"""

import io
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
import pandas as pd
from scipy.special import comb

import config
from errors import BudgetExceededError, PopulationFormatError

logger = logging.getLogger(__name__)

CSV_HEADER = ["stratum", "cluster", "value"]


# ---------------------------
# Tipos
# ---------------------------
@dataclass(frozen=True, order=True)
class Record:
    stratum: int
    cluster: int
    value: float

    def __post_init__(self):
        if self.stratum < 1 or self.cluster < 1:
            raise ValueError(f"ids de estrato/conglomerado deben ser positivos: {self}")


@dataclass(frozen=True)
class Population:
    """
    Multiconjunto de registros. `records` conserva el orden de llegada (filas del CSV),
    que es el índice usado por los muestreadores; la igualdad como multiconjunto se
    consulta con same_multiset().
    """
    records: tuple
    declared_strata: int
    declared_clusters: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for r in self.records:
            if r.stratum > self.declared_strata or r.cluster > self.declared_clusters:
                raise ValueError(
                    f"registro {r} fuera de los límites declarados "
                    f"k={self.declared_strata}, m={self.declared_clusters}"
                )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def strata(self):
        return np.array([r.stratum for r in self.records], dtype=int)

    @cached_property
    def clusters(self):
        return np.array([r.cluster for r in self.records], dtype=int)

    @cached_property
    def values(self):
        return np.array([r.value for r in self.records], dtype=float)

    def canonical(self):
        """Registros en orden canónico (estrato, conglomerado, valor)."""
        return tuple(sorted(self.records))

    def same_multiset(self, other):
        return self.canonical() == other.canonical()

    def subset(self, indices):
        return Population(
            tuple(self.records[i] for i in indices),
            self.declared_strata,
            self.declared_clusters,
        )

    def indices_by_stratum(self):
        """Dict estrato -> lista de posiciones (en orden de registro)."""
        grupos = {s: [] for s in range(1, self.declared_strata + 1)}
        for i, r in enumerate(self.records):
            grupos[r.stratum].append(i)
        return grupos


@dataclass(frozen=True)
class NeighborPair:
    base: Population
    extended: Population
    added: Record
    bounds_grown: bool = False


@dataclass(frozen=True)
class Universe:
    """Universo finito de datos: valores posibles × estratos × conglomerados."""
    values: tuple
    strata: int = 1
    clusters: int = 1

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(sorted(set(float(v) for v in self.values))))
        if not self.values:
            raise ValueError("el universo necesita al menos un valor")
        if self.strata < 1 or self.clusters < 1:
            raise ValueError("el universo necesita al menos un estrato y un conglomerado")

    def records(self):
        return [
            Record(s, c, v)
            for s in range(1, self.strata + 1)
            for c in range(1, self.clusters + 1)
            for v in self.values
        ]


# ---------------------------
# Lectura / escritura CSV
# ---------------------------
def _parse_directive(line, line_no):
    declared = {}
    for part in line.lstrip("#").split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, raw = part.partition("=")
        key = key.strip()
        if not sep or key not in ("k", "m"):
            raise PopulationFormatError(f"directiva no reconocida {part!r}", line=line_no)
        try:
            declared[key] = int(raw)
        except ValueError:
            raise PopulationFormatError(f"directiva {key} no es entera: {raw!r}", line=line_no)
        if declared[key] < 0:
            raise PopulationFormatError(f"directiva {key} negativa", line=line_no)
    return declared


def _cell(x):
    return x.strip() if isinstance(x, str) else ""


def _parse_id(text, name, line_no):
    try:
        value = int(text)
    except ValueError:
        raise PopulationFormatError(f"{name} no es un entero: {text!r}", line=line_no)
    if value < 1:
        raise PopulationFormatError(f"{name} debe ser positivo: {value}", line=line_no)
    return value


def load_population(csv_text):
    """
    Lee una población desde texto CSV. k y m se infieren del máximo id visto salvo
    que la directiva `#k=..,m=..` los declare.
    """
    lines = csv_text.splitlines()
    declared = {}
    offset = 0
    while offset < len(lines) and lines[offset].lstrip().startswith("#"):
        declared.update(_parse_directive(lines[offset].strip(), offset + 1))
        offset += 1

    body = "\n".join(lines[offset:])
    if not body.strip():
        raise PopulationFormatError("falta la cabecera stratum,cluster,value", line=offset + 1)

    header_line = offset + 1
    columnas = [c.strip() for c in lines[offset].split(",")]
    if columnas != CSV_HEADER:
        raise PopulationFormatError(
            f"cabecera esperada {','.join(CSV_HEADER)}, se encontró {','.join(columnas)}",
            line=header_line,
        )
    for pos, text in enumerate(lines[offset + 1:]):
        n_fields = len(text.split(","))
        if text.strip() and n_fields != len(CSV_HEADER):
            raise PopulationFormatError(
                f"se esperaban {len(CSV_HEADER)} campos, hay {n_fields}",
                line=header_line + 1 + pos,
            )

    try:
        df = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False,
                         skip_blank_lines=False, index_col=False)
    except pd.errors.ParserError as e:
        raise PopulationFormatError(f"fila mal formada ({e})")

    records = []
    for pos, row in enumerate(df.itertuples(index=False, name=None)):
        line_no = header_line + 1 + pos
        cells = [_cell(x) for x in row]
        if not any(cells):
            continue
        if any(c == "" for c in cells):
            raise PopulationFormatError("faltan campos", line=line_no)
        stratum = _parse_id(cells[0], "stratum", line_no)
        cluster = _parse_id(cells[1], "cluster", line_no)
        try:
            value = float(cells[2])
        except ValueError:
            raise PopulationFormatError(f"value no es numérico: {cells[2]!r}", line=line_no)
        if not math.isfinite(value):
            raise PopulationFormatError(f"value no es finito: {cells[2]!r}", line=line_no)
        records.append(Record(stratum, cluster, value))

    k = max((r.stratum for r in records), default=0)
    m = max((r.cluster for r in records), default=0)
    if "k" in declared:
        if declared["k"] < k:
            raise PopulationFormatError(f"la directiva k={declared['k']} es menor que el estrato {k}")
        k = declared["k"]
    if "m" in declared:
        if declared["m"] < m:
            raise PopulationFormatError(f"la directiva m={declared['m']} es menor que el conglomerado {m}")
        m = declared["m"]

    logger.debug("población cargada: %d registros, k=%d, m=%d", len(records), k, m)
    return Population(tuple(records), k, m)


def population_to_csv(p):
    df = pd.DataFrame([(r.stratum, r.cluster, r.value) for r in p.records], columns=CSV_HEADER)
    return f"#k={p.declared_strata},m={p.declared_clusters}\n" + df.to_csv(index=False)


# ---------------------------
# Vecinos y conteos
# ---------------------------
def add_record(p, r):
    """Vecino por adición: extended = p ∪ {r}. Si r excede k/m, los límites crecen (flag)."""
    k = max(p.declared_strata, r.stratum)
    m = max(p.declared_clusters, r.cluster)
    grown = (k, m) != (p.declared_strata, p.declared_clusters)
    if grown:
        logger.warning("⚠️ el registro %s amplía los límites a k=%d, m=%d", r, k, m)
        p = Population(p.records, k, m)
    extended = Population(p.records + (r,), k, m)
    return NeighborPair(base=p, extended=extended, added=r, bounds_grown=grown)


def remove_record(pair):
    """Quita una copia de `pair.added` de `pair.extended`."""
    records = list(pair.extended.records)
    for i in range(len(records) - 1, -1, -1):
        if records[i] == pair.added:
            del records[i]
            break
    else:
        raise ValueError(f"{pair.added} no está en la población extendida")
    return Population(tuple(records), pair.extended.declared_strata, pair.extended.declared_clusters)


def strata_sizes(p):
    if p.declared_strata == 0:
        return ()
    counts = np.bincount(p.strata - 1, minlength=p.declared_strata) if len(p) else \
        np.zeros(p.declared_strata, dtype=int)
    return tuple(int(c) for c in counts)


def cluster_sizes(p):
    if p.declared_clusters == 0:
        return ()
    counts = np.bincount(p.clusters - 1, minlength=p.declared_clusters) if len(p) else \
        np.zeros(p.declared_clusters, dtype=int)
    return tuple(int(c) for c in counts)


# ---------------------------
# Enumeración exhaustiva
# ---------------------------
def count_populations(universe, max_size):
    n = len(universe.records())
    return sum(int(comb(n + r - 1, r, exact=True)) for r in range(max_size + 1))


def enumerate_populations(universe, max_size, budget=None):
    """
    Genera cada multiconjunto de tamaño ≤ max_size sobre el universo exactamente una
    vez, en orden canónico (por tamaño y luego lexicográfico).
    """
    budget = config.get_budget(budget)
    required = count_populations(universe, max_size)
    if required > budget:
        raise BudgetExceededError("enumerate_populations", required, budget)

    records = sorted(universe.records())
    return _iter_populations(records, max_size, universe.strata, universe.clusters)


def _iter_populations(records, max_size, k, m):
    for size in range(max_size + 1):
        for combo in combinations_with_replacement(records, size):
            yield Population(combo, k, m)

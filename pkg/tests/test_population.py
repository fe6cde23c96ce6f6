import pytest

from errors import BudgetExceededError, PopulationFormatError
from population import (
    Population,
    Record,
    Universe,
    add_record,
    cluster_sizes,
    count_populations,
    enumerate_populations,
    load_population,
    population_to_csv,
    remove_record,
    strata_sizes,
)


CSV = """#k=3,m=2
stratum,cluster,value
2,1,0.5
1,2,3

1,1,-1.25
"""


def test_load_population_keeps_row_order_and_directive():
    p = load_population(CSV)
    assert p.declared_strata == 3
    assert p.declared_clusters == 2
    assert [r.stratum for r in p] == [2, 1, 1]
    assert p.records[2] == Record(1, 1, -1.25)
    assert strata_sizes(p) == (2, 1, 0)
    assert cluster_sizes(p) == (2, 1)


def test_bounds_inferred_without_directive():
    p = load_population("stratum,cluster,value\n4,2,1\n")
    assert (p.declared_strata, p.declared_clusters) == (4, 2)


def test_empty_population_with_header_only():
    p = load_population("#k=2,m=1\nstratum,cluster,value\n")
    assert len(p) == 0
    assert strata_sizes(p) == (0, 0)


@pytest.mark.parametrize("text, line", [
    ("stratum,cluster,value\n1,1,0.5\n0,1,2\n", 3),
    ("#k=2\nstratum,cluster,value\n1,1,abc\n", 3),
    ("stratum,cluster,value\n1,x,1\n", 2),
    ("stratum,cluster,value\n1,1,inf\n", 2),
    ("stratum,cluster\n1,1\n", 1),
    ("stratum,cluster,value\n1,2,3,4\n", 2),
    ("#k=2\nstratum,cluster,value\n1,1,0.5\n1,1,2,9\n2,1,1\n", 4),
    ("stratum,cluster,value\n1,1\n", 2),
])
def test_malformed_rows_report_line(text, line):
    with pytest.raises(PopulationFormatError) as exc:
        load_population(text)
    assert exc.value.line == line
    assert f"línea {line}" in str(exc.value)


def test_directive_smaller_than_ids_is_rejected():
    with pytest.raises(PopulationFormatError):
        load_population("#k=1\nstratum,cluster,value\n2,1,0\n")


def test_csv_writer_is_read_back():
    p = load_population(CSV)
    again = load_population(population_to_csv(p))
    assert again.same_multiset(p)
    assert (again.declared_strata, again.declared_clusters) == (3, 2)


def test_record_ids_must_be_positive():
    with pytest.raises(ValueError):
        Record(0, 1, 1.0)
    with pytest.raises(ValueError):
        Population((Record(3, 1, 0.0),), 2, 1)


def test_add_then_remove_is_identity():
    p = load_population(CSV)
    pair = add_record(p, Record(3, 1, 7.0))
    assert len(pair.extended) == len(p) + 1
    assert not pair.bounds_grown
    assert remove_record(pair).same_multiset(p)


def test_add_record_beyond_bounds_is_flagged(caplog):
    p = Population((Record(1, 1, 0.0),), 1, 1)
    pair = add_record(p, Record(2, 3, 1.0))
    assert pair.bounds_grown
    assert (pair.base.declared_strata, pair.base.declared_clusters) == (2, 3)
    assert "amplía los límites" in caplog.text


def test_multiset_equality_ignores_order():
    a = Population((Record(1, 1, 0.0), Record(2, 1, 1.0)), 2, 1)
    b = Population((Record(2, 1, 1.0), Record(1, 1, 0.0)), 2, 1)
    assert a.same_multiset(b)
    assert a != b


def test_enumerate_populations_counts_multisets():
    u = Universe((1.0, 0.0), strata=1, clusters=1)
    pops = list(enumerate_populations(u, 2))
    # tamaños 0, 1, 2 sobre 2 registros posibles: 1 + 2 + 3
    assert len(pops) == count_populations(u, 2) == 6
    assert len({p.canonical() for p in pops}) == 6
    assert [len(p) for p in pops] == [0, 1, 1, 2, 2, 2]


def test_enumerate_populations_respects_budget_eagerly():
    u = Universe((0.0, 1.0), strata=2, clusters=2)
    with pytest.raises(BudgetExceededError) as exc:
        enumerate_populations(u, 6, budget=100)
    assert exc.value.required == count_populations(u, 6)


def test_universe_records_are_sorted_and_deduplicated():
    u = Universe((1.0, 0.0, 1.0), strata=2, clusters=1)
    assert u.values == (0.0, 1.0)
    assert len(u.records()) == 4


def test_extra_field_on_every_row_is_rejected():
    # con un cuarto campo en todas las filas, la primera columna no pasa a ser índice
    with pytest.raises(PopulationFormatError) as exc:
        load_population("stratum,cluster,value\n1,1,0.5,7\n2,1,1.5,8\n")
    assert exc.value.line == 2
    assert "hay 4" in str(exc.value)

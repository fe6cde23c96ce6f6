# cli.py
"""
Interfaz de línea de comandos de surveydp.

    python cli.py audit --config scenarios/cluster_growth.toml --out reporte.csv
    python cli.py bounds poisson --eps 1 --rate 0.5
    python cli.py alloc-scan --rule proportional_hamilton --k 3 --max-size 4 --total 4
    python cli.py conjecture --eps 0.5,1 --rates 0.25,0.5 --sizes 2,3,4
    python cli.py random-dp --n 64 --eps 1 --trials 200 --seed 7

Códigos de salida: 0 ok, 1 error de cálculo, 2 configuración, 3 presupuesto excedido.
"""

import logging
import logging.config
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import click
import pandas as pd

import config
from allocation import AllocationRule, global_sensitivity_scan
from auditor import (
    conjecture_harness,
    exact_effective_epsilon,
    exact_eps_quantiles,
    mc_effective_epsilon_lower,
    random_dp_harness,
    stratified_audit,
    worst_case_scan,
)
from bounds import (
    CALCULATORS,
    degradation_eps,
    evaluate_grid,
    stratified_poisson_eps,
    value_change_eps,
)
from errors import BudgetExceededError, ConfigError, PopulationFormatError, SurveyDPError
from mechanisms import MechanismSpec, Query
from population import (
    Population,
    Record,
    Universe,
    add_record,
    load_population,
    population_to_csv,
)
from samplers import SamplingDesign

logger = logging.getLogger(__name__)

LOGGING_INI = Path(__file__).with_name("logging.ini")
AUDIT_MODES = ("exact", "mc", "scan", "stratified")
REPORT_COLUMNS = [
    "scenario", "eps_base", "design", "eps_add", "eps_remove", "eps_effective", "witness", "method",
]


# ---------------------------
# Configuración TOML
# ---------------------------
@dataclass
class DesignConfig:
    scenario: str
    population: Population
    design: SamplingDesign
    mechanism: MechanismSpec
    audit: dict = field(default_factory=dict)


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"falta la clave '{key}' en [{where}]")
    return table[key]


def rule_from(kind, total=None, counts=None, rates=None):
    """AllocationRule a partir de parámetros sueltos (TOML o flags)."""
    if kind == "fixed":
        if not counts:
            raise ConfigError("la regla fixed necesita counts")
        return AllocationRule.fixed(counts)
    if kind == "parity_demo":
        return AllocationRule.parity_demo()
    if kind in ("proportional_floor", "proportional_hamilton", "huntington_hill"):
        if total is None:
            raise ConfigError(f"la regla {kind} necesita total")
        return getattr(AllocationRule, kind)(total)
    if kind == "randomized_rounding":
        if not rates:
            raise ConfigError("la regla randomized_rounding necesita rates")
        return AllocationRule.randomized_rounding(rates)
    raise ConfigError(f"regla de asignación desconocida: {kind!r}")


def design_from(table):
    kind = _require(table, "kind", "design")
    if kind == "poisson":
        return SamplingDesign.poisson(_require(table, "rates", "design"))
    if kind == "swor":
        alloc = _require(table, "allocation", "design")
        return SamplingDesign.swor(rule_from(
            _require(alloc, "kind", "design.allocation"),
            alloc.get("total"), alloc.get("counts"), alloc.get("rates"),
        ))
    if kind == "cluster":
        return SamplingDesign.cluster(table.get("choose", 1), table.get("within", "census"),
                                      table.get("rate"))
    raise ConfigError(f"diseño desconocido: {kind!r}")


def mechanism_from(table):
    kind = table.get("query", "count")
    if kind == "count":
        query = Query.count()
    elif kind == "clamped_sum":
        query = Query.clamped_sum(_require(table, "lo", "mechanism"), _require(table, "hi", "mechanism"))
    else:
        raise ConfigError(f"consulta desconocida: {kind!r}")
    return MechanismSpec(query, float(_require(table, "epsilon", "mechanism")))


def load_design_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(2, "No existe el archivo de configuración", str(path))
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML inválido ({e})")

    audit = dict(raw.get("audit", {}))
    mode = audit.setdefault("mode", "exact")
    if mode not in AUDIT_MODES:
        raise ConfigError(f"audit.mode debe ser uno de {AUDIT_MODES}, se recibió {mode!r}")

    if "population" in raw:
        # rutas relativas al archivo de configuración
        pop_path = path.parent / raw["population"]
        if not pop_path.is_file():
            raise FileNotFoundError(2, "No existe el archivo de población", str(pop_path))
        population = load_population(pop_path.read_text(encoding="utf-8"))
    else:
        population = Population((), audit.get("strata", 1), audit.get("clusters", 1))

    try:
        return DesignConfig(
            scenario=raw.get("scenario", path.stem),
            population=population,
            design=design_from(_require(raw, "design", "")),
            mechanism=mechanism_from(_require(raw, "mechanism", "")),
            audit=audit,
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")


def _added_record(cfg):
    added = _require(cfg.audit, "added", "audit")
    return Record(int(added.get("stratum", 1)), int(added.get("cluster", 1)),
                  float(added.get("value", 1.0)))


def _universe(cfg):
    return Universe(
        tuple(_require(cfg.audit, "universe", "audit")),
        int(cfg.audit.get("strata", max(cfg.population.declared_strata, 1))),
        int(cfg.audit.get("clusters", max(cfg.population.declared_clusters, 1))),
    )


def run_audit(cfg, budget=None, seed=None):
    """Ejecuta el modo de auditoría del escenario. Devuelve (PrivacyReport, ScanResult o None)."""
    mode = cfg.audit["mode"]
    d, m = cfg.design, cfg.mechanism
    if mode == "exact":
        return exact_effective_epsilon(d, m, add_record(cfg.population, _added_record(cfg)), budget), None
    if mode == "mc":
        seed = cfg.audit.get("seed") if seed is None else seed
        report = mc_effective_epsilon_lower(
            d, m, add_record(cfg.population, _added_record(cfg)),
            int(cfg.audit.get("n_samples", 1_000_000)),
            float(cfg.audit.get("confidence", 0.95)),
            seed,
        )
        return report, None
    if mode == "stratified":
        return stratified_audit(d, m, cfg.population, _universe(cfg), budget), None

    upper = None
    if "upper_bound_gs" in cfg.audit:
        upper = degradation_eps(m.epsilon, cfg.audit["upper_bound_gs"])
    result = worst_case_scan(
        d, m, _universe(cfg), int(_require(cfg.audit, "max_size", "audit")), budget,
        upper_bound=upper,
        min_size=int(cfg.audit.get("min_size", 0)),
        workers=int(cfg.audit.get("workers", 1)),
    )
    return result.report, result


# ---------------------------
# Salida
# ---------------------------
def write_table(df, out, fmt):
    if fmt == "json":
        text = df.to_json(orient="records", double_precision=15, indent=2) + "\n"
    else:
        text = df.to_csv(index=False)
    Path(out).write_text(text, encoding="utf-8")
    logger.info("reporte escrito en %s", out)


def _echo_report(cfg, report):
    click.echo(f"✅ {cfg.scenario} [{cfg.design.describe()}, {cfg.mechanism.query.describe()}, "
               f"ε={cfg.mechanism.epsilon:g}]")
    click.echo(f"   eps_add       = {report.eps_add:.7f}")
    click.echo(f"   eps_remove    = {report.eps_remove:.7f}")
    click.echo(f"   eps_effective = {report.eps_effective:.7f}")
    click.echo(f"   witness       = {report.witness_output}")
    click.echo(f"   method        = {report.method}")
    if report.per_stratum is not None:
        valores = ", ".join(f"{e:.7f}" for e in report.per_stratum.per_stratum)
        click.echo(f"   per_stratum   = ({valores})")
    for flag in report.flags:
        click.echo(f"   ⚠️ {flag}")


class FloatList(click.ParamType):
    """Lista separada por comas: '0.1,0.5' -> (0.1, 0.5)."""
    name = "floats"
    cast = float

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        try:
            return tuple(self.cast(v) for v in str(value).split(",") if v.strip())
        except ValueError:
            self.fail(f"{value!r} no es una lista de números separada por comas", param, ctx)


class IntList(FloatList):
    name = "ints"
    cast = int


FLOATS = FloatList()
INTS = IntList()


def output_options(fn):
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
                      show_default=True, help="Formato del reporte máquina.")(fn)
    fn = click.option("--out", type=click.Path(dir_okay=False),
                      help="Archivo del reporte máquina (CSV/JSON).")(fn)
    return fn


# ---------------------------
# Comandos
# ---------------------------
@click.group()
def cli():
    """Auditoría de privacidad diferencial para diseños de encuesta."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="Escenario TOML.")
@click.option("--mode", type=click.Choice(AUDIT_MODES), help="Sobrescribe audit.mode.")
@click.option("--seed", type=int, help="Semilla maestra (modo mc).")
@click.option("--budget", type=int, help="Presupuesto de enumeración.")
@click.option("--witness-out", type=click.Path(dir_okay=False),
              help="CSV de la población testigo (modo scan).")
@output_options
def audit(config_path, mode, seed, budget, witness_out, out, fmt):
    """Audita un escenario: exacto, Monte Carlo, peor caso o estratificado."""
    cfg = load_design_config(config_path)
    if mode:
        cfg.audit["mode"] = mode
    budget = config.get_budget(budget)
    report, scan = run_audit(cfg, budget, seed)
    _echo_report(cfg, report)

    if scan is not None:
        click.echo(f"   instancias    = {scan.instances} ({scan.skipped} omitidas)")
        click.echo(f"   testigo       = |base|={len(scan.witness.base)}, agregado={scan.witness.added}")
        if scan.bound_violations:
            click.echo(f"   ⚠️ {len(scan.bound_violations)} instancias superan la cota declarada")
        if witness_out:
            Path(witness_out).write_text(population_to_csv(scan.witness.base), encoding="utf-8")

    if out:
        row = report.to_row(cfg.scenario, cfg.mechanism.epsilon, cfg.design.describe())
        write_table(pd.DataFrame([row], columns=REPORT_COLUMNS), out, fmt)


@cli.command()
@click.argument("calculator", type=click.Choice(
    sorted(CALCULATORS) + ["stratified", "value-change"]))
@click.option("--eps", type=FLOATS, required=True, help="ε base (lista separada por comas).")
@click.option("--rate", type=FLOATS, help="Tasa(s) de muestreo.")
@click.option("--gs", type=FLOATS, help="Sensibilidad global de la asignación.")
@click.option("--b", type=FLOATS, help="Tamaño del conglomerado no vacío.")
@click.option("--n", type=FLOATS, help="Tamaño de los conglomerados aleatorios.")
@click.option("--rates", type=FLOATS, help="Tasas por estrato (stratified, value-change).")
@click.option("--s", "s_from", type=int, help="Estrato de origen (value-change).")
@click.option("--s2", "s_to", type=int, help="Estrato de destino (value-change).")
@output_options
def bounds(calculator, eps, rate, gs, b, n, rates, s_from, s_to, out, fmt):
    """Cotas cerradas; listas en los flags producen una grilla (producto cartesiano)."""
    if calculator in ("stratified", "value-change"):
        if not rates:
            raise click.UsageError(f"{calculator} necesita --rates")
        rows = []
        for e in eps:
            se = stratified_poisson_eps(e, rates)
            if calculator == "stratified":
                rows.extend({"eps": e, "stratum": i + 1, "value": v} for i, v in enumerate(se.per_stratum))
            else:
                if s_from is None or s_to is None:
                    raise click.UsageError("value-change necesita --s y --s2")
                if not (1 <= s_from <= len(se) and 1 <= s_to <= len(se)):
                    raise click.BadParameter(f"los estratos deben estar en 1..{len(se)}")
                rows.append({"eps": e, "s": s_from, "s2": s_to, "value": value_change_eps(se, s_from, s_to)})
    else:
        fn, names = CALCULATORS[calculator]
        given = {"eps": eps, "rate": rate, "gs": gs, "b": b, "n": n}
        missing = [name for name in names if not given[name]]
        if missing:
            raise click.UsageError(f"{calculator} necesita " + ", ".join(f"--{m}" for m in missing))
        rows = evaluate_grid(fn, **{name: given[name] for name in names})

    if len(rows) == 1:
        click.echo(f"{rows[0]['value']:.7f}")
    else:
        df = pd.DataFrame(rows)
        click.echo(df.to_string(index=False, float_format=lambda v: f"{v:.7f}"))
    if out:
        write_table(pd.DataFrame(rows), out, fmt)


@cli.command("alloc-scan")
@click.option("--rule", required=True, type=click.Choice([
    "fixed", "parity_demo", "proportional_floor", "proportional_hamilton",
    "huntington_hill", "randomized_rounding"]))
@click.option("--k", type=int, required=True, help="Número de estratos.")
@click.option("--max-size", type=int, required=True, help="Tamaño máximo por estrato.")
@click.option("--total", type=int, help="Total a repartir (reglas proporcionales).")
@click.option("--counts", type=INTS, help="Conteos fijos por estrato.")
@click.option("--rates", type=FLOATS, help="Tasas (randomized_rounding).")
@click.option("--claimed-bound", type=int, help="Cota declarada de GS; las violaciones se registran.")
@click.option("--min-population", type=int, default=1, show_default=True)
@click.option("--respect-total", is_flag=True, help="Omite poblaciones con |P| < total.")
@click.option("--budget", type=int, help="Presupuesto de enumeración.")
@output_options
def alloc_scan(rule, k, max_size, total, counts, rates, claimed_bound, min_population,
               respect_total, budget, out, fmt):
    """Sensibilidad global observada de una regla de asignación."""
    report = global_sensitivity_scan(
        rule_from(rule, total, counts, rates), k, max_size, budget,
        claimed_bound=claimed_bound, min_population=min_population, respect_total=respect_total,
    )
    w = report.witness
    click.echo(f"✅ {report.rule.describe()}: GS observada = {report.observed_gs}")
    click.echo(f"   testigo: sizes={w.sizes} estrato={w.stratum} {w.counts_before} -> {w.counts_after}")
    click.echo(f"   instancias = {len(report.rows)} ({report.skipped} omitidas)")
    if report.violations:
        click.echo(f"   ⚠️ {len(report.violations)} instancias superan la cota {claimed_bound}")
    if out:
        write_table(report.to_frame(), out, fmt)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="TOML con una tabla [grid] (eps, rates, sizes).")
@click.option("--eps", type=FLOATS, default="0.25,0.5,1", show_default=True)
@click.option("--rates", type=FLOATS, default="0.25,0.5,0.75", show_default=True)
@click.option("--sizes", type=INTS, default="2,3,4,5,6", show_default=True)
@click.option("--budget", type=int, help="Presupuesto de enumeración.")
@output_options
def conjecture(config_path, eps, rates, sizes, budget, out, fmt):
    """Tabla de ε exacto por estrato con redondeo aleatorio y la constante ajustada."""
    grid = {"eps": eps, "rates": rates, "sizes": sizes}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(2, "No existe el archivo de configuración", str(path))
        with path.open("rb") as fh:
            raw = tomllib.load(fh).get("grid", {})
        grid.update({k: tuple(v) for k, v in raw.items() if k in grid})
    table = conjecture_harness(grid, budget=config.get_budget(budget))
    click.echo(table.to_string(index=False, float_format=lambda v: f"{v:.7f}"))
    if out:
        write_table(table, out, fmt)


@cli.command("random-dp")
@click.option("--n", type=int, default=64, show_default=True, help="Tamaño de cada conglomerado.")
@click.option("--eps", type=float, default=1.0, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, help="Semilla maestra.")
@click.option("--budget", type=int, help="Presupuesto de enumeración.")
@output_options
def random_dp(n, eps, trials, seed, budget, out, fmt):
    """Arnés de DP aleatoria: conglomerados Bernoulli(½) y ε exacto por ensayo."""
    table = random_dp_harness(n, eps, trials, seed, budget=config.get_budget(budget))
    formula = float(table["formula_eps"].iloc[0])
    click.echo(f"✅ n={n} ε={eps:g} ensayos={trials}  fórmula = {formula:.7f}")
    for q, v in exact_eps_quantiles(table).items():
        click.echo(f"   q{int(round(q * 100)):02d} ε exacto = {v:.7f}")
    if out:
        write_table(table, out, fmt)


# ---------------------------
# Punto de entrada
# ---------------------------
def setup_logging():
    if LOGGING_INI.is_file():
        logging.config.fileConfig(LOGGING_INI, disable_existing_loggers=False)
    else:
        logging.basicConfig(format="%(levelname)-5.5s [%(name)s] %(message)s")
    logging.getLogger().setLevel(config.get_log_level())


def run(argv=None):
    """Ejecuta la CLI y traduce las excepciones a códigos de salida."""
    try:
        setup_logging()
        result = cli.main(args=argv, prog_name="surveydp", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        click.echo(f"❌ {e.format_message()}", err=True)
        return 2
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("❌ Cancelado", err=True)
        return 1
    except FileNotFoundError as e:
        click.echo(f"❌ {e.strerror}: {e.filename}", err=True)
        return 2
    except (ConfigError, PopulationFormatError, ValueError) as e:
        click.echo(f"❌ Configuración inválida: {e}", err=True)
        return 2
    except BudgetExceededError as e:
        click.echo(f"❌ {e}", err=True)
        return 3
    except SurveyDPError as e:
        click.echo(f"❌ {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run())

"""
Excepciones del proyecto.
Todas heredan de SurveyDPError para que la CLI pueda traducirlas a códigos de salida.
"""


class SurveyDPError(Exception):
    """Error base de surveydp."""


class PopulationFormatError(SurveyDPError):
    """
    Fila mal formada en el CSV de población.
    `line` es el número de línea (1 = cabecera).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"línea {line}: {message}"
        super().__init__(message)


class BudgetExceededError(SurveyDPError):
    def __init__(self, what, required, budget):
        self.required = required
        self.budget = budget
        super().__init__(
            f"{what}: se requieren {required} elementos y el presupuesto es {budget} "
            f"(ajusta --budget o SURVEYDP_BUDGET)"
        )


class InfeasibleAllocationError(SurveyDPError):
    def __init__(self, stratum, requested, available):
        self.stratum = stratum
        self.requested = requested
        self.available = available
        super().__init__(
            f"estrato {stratum}: se piden {requested} registros pero solo hay {available}"
        )


class AllocationError(SurveyDPError):
    """Precondición de una regla de asignación no satisfecha."""


class ScaleMismatchError(SurveyDPError):
    """Se compararon mezclas Laplace con escalas distintas."""


class ConfigError(SurveyDPError):
    """Configuración inválida (TOML, flags o variables de entorno)."""

"""Exception taxonomy shared across the package.

ConfigError means the caller handed us an invalid spec/config document and
maps to CLI exit code 2.  ToleranceError and BudgetError are runtime
failures of numeric procedures (truncation tolerance unattainable, step or
node budget exhausted); plain ValueError is reserved for domain errors on
otherwise-valid objects (k=0 where k>=1 is required, etc.).
"""


class ConfigError(ValueError):
    """Invalid weight spec, experiment config, or CLI arguments."""


class ToleranceError(RuntimeError):
    """A truncation/tail tolerance cannot be met at the allowed cutoff."""


class BudgetError(RuntimeError):
    """A step/node budget was exhausted before the procedure finished."""

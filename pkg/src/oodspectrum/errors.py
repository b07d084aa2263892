"""Exception hierarchy shared by all modules."""


class OODSpectrumError(Exception):
    """Base class; every error raised deliberately by the package derives from it."""

    code = "error"


class InputError(OODSpectrumError):
    """Bad input data or configuration (CLI exit code 2)."""

    code = "invalid_input"


class MissingColumn(InputError):
    code = "missing_column"


class UnknownCategory(InputError):
    code = "unknown_category"


class DuplicateTrial(InputError):
    code = "duplicate_trial"


class EmptyFile(InputError):
    code = "empty_file"


class MissingReference(InputError):
    code = "missing_reference_condition"


class DomainError(OODSpectrumError, ValueError):
    code = "domain_error"


class EmptySample(DomainError):
    code = "empty_sample"


class SampleTooSmall(DomainError):
    code = "sample_too_small"


class DegenerateReference(DomainError):
    code = "degenerate_reference"


class DegenerateSample(DomainError):
    code = "degenerate_sample"


class TooFewPoints(DomainError):
    code = "too_few_points"


class NonFinite(DomainError):
    code = "non_finite"


class NonComparable(DomainError):
    """Two response sets do not share the same stimulus multiset."""

    code = "non_comparable"


class InvalidKernel(DomainError):
    code = "invalid_kernel"


class ZeroHumanBaseline(DomainError):
    code = "zero_human_baseline"


class NoDefinedCells(DomainError):
    code = "no_defined_cells"


class NoWithinPairs(DomainError):
    code = "no_within_pairs"


class EmptyRoster(DomainError):
    code = "empty_roster"


class FamilyTooSmall(DomainError):
    code = "family_too_small"


class ModelMissingRegimeData(DomainError):
    code = "model_missing_regime_data"

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)

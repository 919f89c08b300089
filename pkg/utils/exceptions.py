"""Custom exception classes for the identification and estimation pipeline."""

from typing import Any, Dict, Optional


class MisclassError(Exception):
    """Base class for all custom exceptions."""

    code = "MisclassError"
    exit_code = 2

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "details": self.details}


# =================================================================
# INPUT ERRORS (exit code 1)
# =================================================================
class InputError(MisclassError):
    """Raised when input files or documents cannot be used."""
    code = "InputError"
    exit_code = 1


class InputSchemaError(InputError):
    """Raised when a CSV or JSON input does not match its schema."""
    code = "InputSchema"


class SpecValidationError(InputError):
    """Raised when a DGP specification violates its structural invariants."""
    code = "SpecValidation"


# =================================================================
# MATHEMATICAL / IDENTIFICATION ERRORS (exit code 2)
# =================================================================
class IdentificationError(MisclassError):
    """Raised when a mathematical step of the pipeline fails."""
    code = "IdentificationError"


class EmptyCellError(IdentificationError):
    """Raised when a (z, v) cell has too few observations."""
    code = "EmptyCell"


class NonFiniteInputError(IdentificationError):
    """Raised when an outcome or moment is NaN or infinite."""
    code = "NonFiniteInput"


class ZeroKernelMassError(IdentificationError):
    """Raised when the total kernel weight of a cell underflows."""
    code = "ZeroKernelMass"


class BadBandwidthError(IdentificationError):
    """Raised when the bandwidth is not positive."""
    code = "BadBandwidth"


class DegenerateXError(IdentificationError):
    """Raised when a covariate coordinate is constant."""
    code = "DegenerateX"


class SingularQError(IdentificationError):
    """Raised when a moment matrix is singular or badly conditioned."""
    code = "SingularQ"


class EigenvaluesNotDistinctError(IdentificationError):
    """Raised when cross-ratio eigenvalues coincide."""
    code = "EigenvaluesNotDistinct"


class ComplexEigenvaluesError(IdentificationError):
    """Raised when a diagonalization yields complex eigenvalues."""
    code = "ComplexEigenvalues"


class DegenerateEigenvectorError(IdentificationError):
    """Raised when an eigenvector cannot be scaled to first entry one."""
    code = "DegenerateEigenvector"


class LabelingAmbiguousError(IdentificationError):
    """Raised when emission rates are too close to order the latent states."""
    code = "LabelingAmbiguous"


class InvalidProbabilityError(IdentificationError):
    """Raised when a recovered probability falls outside [0, 1] beyond tolerance."""
    code = "InvalidProbability"


class TooFewDistinctValuesError(IdentificationError):
    """Raised when an outcome sample cannot support K partition cells."""
    code = "TooFewDistinctValues"


class PartitionMismatchError(IdentificationError):
    """Raised when a partition cell receives zero mass in some (z, v) cell."""
    code = "PartitionMismatch"


class NoDominantLabelingError(IdentificationError):
    """Raised when no state labeling makes the emission matrix diagonally dominant."""
    code = "NoDominantLabeling"


class IrrelevantInstrumentAtUError(IdentificationError):
    """Raised when the instrument does not move treatment at some latent type."""
    code = "IrrelevantInstrumentAtU"


class CrossCheckFailedError(IdentificationError):
    """Raised when Z=0 and Z=1 reconstructions disagree."""
    code = "CrossCheckFailed"


class SingularIVMatrixError(IdentificationError):
    """Raised when the instrument relevance gap is zero within tolerance."""
    code = "SingularIVMatrix"


class InitializationFailedError(IdentificationError):
    """Raised when neither the closed form nor the restart grid gives a start."""
    code = "InitializationFailed"


class NoConvergenceError(IdentificationError):
    """Raised when the optimizer exhausts its iteration budget."""
    code = "NoConvergence"


class SingularFError(IdentificationError):
    """Raised when the Jacobian at the optimum is badly conditioned."""
    code = "SingularF"


class ZeroDenominatorError(IdentificationError):
    """Raised when a Wald ratio has a zero denominator."""
    code = "ZeroDenominator"


class DegenerateTreatmentMassError(IdentificationError):
    """Raised when a treatment arm has no mass in some v cell."""
    code = "DegenerateTreatmentMass"

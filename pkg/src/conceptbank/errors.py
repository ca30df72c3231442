"""Exception taxonomy shared across the toolkit.

Every failure mode callers are expected to branch on gets its own class;
all of them inherit from ConceptBankError so CLI-level handling can stay
generic.
"""


class ConceptBankError(Exception):
    """Base class for all toolkit errors."""


# --- numeric kernel ---------------------------------------------------------

class InvalidVector(ConceptBankError):
    """Vector input is empty or contains non-finite entries."""


class DegenerateVector(ConceptBankError):
    """An operand with zero norm where a direction is required."""


class DimMismatch(ConceptBankError):
    """Operands disagree on dimension or grid shape."""


class InvalidTemperature(ConceptBankError):
    """Softmax temperature must be a finite positive scalar."""


class EmptyMask(ConceptBankError):
    """Mask selects no pixels; pooling over it carries no evidence."""


# --- backends ---------------------------------------------------------------

class BackendUnavailable(ConceptBankError):
    """The model backend could not be reached or failed a request."""


class BackendTimeout(BackendUnavailable):
    """A remote request did not complete within its deadline."""


class ProtocolViolation(ConceptBankError):
    """A wire frame or payload does not match the protocol schema."""


class UnsupportedVersion(ConceptBankError):
    """Protocol or file format version is not supported."""


class UnknownPrompt(ConceptBankError):
    """Mock backend has no table entry for the requested prompt."""


# --- bank construction ------------------------------------------------------

class NoSupports(ConceptBankError):
    """A class has no usable support instances."""


class NoCandidates(ConceptBankError):
    """A class has no prompt candidates to score or fuse."""


class DegeneratePrototype(ConceptBankError):
    """Embeddings cancel out; the mean has no direction."""


# --- bank file format -------------------------------------------------------

class BankFormatError(ConceptBankError):
    """Base class for .cbnk parse failures."""


class BadMagic(BankFormatError):
    """File does not start with the CBNK magic."""


class CrcMismatch(BankFormatError):
    """Checksum over the file body does not match the stored value."""


class TruncatedFile(BankFormatError):
    """File ends before the declared structure is complete."""


class TrailingBytes(BankFormatError):
    """File continues past the checksum; refusing ambiguous content."""


class DuplicateClassName(BankFormatError):
    """Class-name table contains a repeated entry."""


# --- evaluation & pools -----------------------------------------------------

class EvalInputMismatch(ConceptBankError):
    """Prediction/ground-truth lists are misaligned or shaped differently."""


class EmptyPoolAfterQC(ConceptBankError):
    """Every candidate prompt was rejected by quality control."""


# --- drift simulation -------------------------------------------------------

class WorldInfeasible(ConceptBankError):
    """Rejection sampling could not place enough near-orthogonal directions."""


class InvalidPermutation(ConceptBankError):
    """Concept-drift mapping is not a permutation of the class indices."""

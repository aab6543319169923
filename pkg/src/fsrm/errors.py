"""Exception hierarchy shared across the package.

Everything raised deliberately by this package derives from ``FsrmError`` so
callers (and the CLI) can distinguish domain failures from genuine bugs.
"""


class FsrmError(Exception):
    """Base class for all errors raised by this package."""


# Prompt construction and output parsing.


class MissingPlaceholder(FsrmError):
    """A prompt template lacks one of the required placeholders."""


class AlreadyAugmented(FsrmError):
    """The trigger token was appended to a prompt that already carries one."""


class UnparseableFastToken(FsrmError):
    """A first token matched none of the configured surface forms."""


# Confidence computation and calibration.


class EmptyOffCandidatePool(FsrmError):
    """No off-candidate tokens are available for the token confidence."""


class NoCorrectSamples(FsrmError):
    """Threshold calibration received no correctly judged records."""


# Backends.


class BackendUnavailable(FsrmError):
    """Transport-level failure talking to a model backend."""


class BackendProtocol(FsrmError):
    """The backend replied without the fields the contract requires."""


class ReplayMiss(FsrmError):
    """The replay store has no record for the requested (sample, pass)."""


class InvalidSpec(FsrmError):
    """A simulator spec is internally inconsistent or incomplete."""


# Routing.


class BothLabelsAbsent(FsrmError):
    """Neither candidate label's surface form appeared in the returned logprobs."""


# Metrics.


class EmptyStratum(FsrmError):
    """A metric was requested over a stratum with no records."""


class NotHybridRun(FsrmError):
    """A hybrid-only metric was requested over non-hybrid records."""


class SampleSetMismatch(FsrmError):
    """Two runs being compared do not cover identical sample ids."""


class ZeroSlowTokens(FsrmError):
    """Token savings are undefined when the slow run consumed zero tokens."""


# Dataset ingestion and sweeps.


class MalformedLine(FsrmError):
    """A dataset line failed field validation."""


class DuplicateId(FsrmError):
    """A dataset contains the same sample id twice."""


class MissingSlowVerdicts(FsrmError):
    """An offline sweep needs a slow outcome for every sample."""


# Training kernels.


class GroupTooSmall(FsrmError):
    """Group advantage normalization needs at least two trajectories."""


class TrainingDiverged(FsrmError):
    """The toy trainer's loss exceeded the divergence guard."""

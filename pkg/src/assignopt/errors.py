"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit a
single parsable line without string matching on messages.
"""


class AssignOptError(Exception):
    code = "error"


class DimensionMismatch(AssignOptError, ValueError):
    code = "dimension-mismatch"


class NonpositiveRho(AssignOptError, ValueError):
    code = "nonpositive-rho"


class BetaBelowBound(AssignOptError, ValueError):
    code = "beta-below-bound"


class ZeroEqualityTarget(AssignOptError, ValueError):
    code = "zero-equality-target"


class InvalidPartitionCount(AssignOptError, ValueError):
    code = "invalid-P"


class OddItemCount(AssignOptError, ValueError):
    code = "odd-I"


class ProblemIOError(AssignOptError, OSError):
    code = "io-failure"


class MalformedManifest(AssignOptError, ValueError):
    code = "malformed-manifest"


class ShardChecksumMismatch(AssignOptError, ValueError):
    code = "shard-checksum-mismatch"


class LogDomainError(AssignOptError, ArithmeticError):
    code = "log-domain"


class NonpositiveGamma(AssignOptError, ValueError):
    code = "nonpositive-gamma"


class NoConvergence(AssignOptError, RuntimeError):
    code = "no-convergence"


class WorkerLost(AssignOptError, RuntimeError):
    code = "worker-lost"


class IterationTimeout(AssignOptError, TimeoutError):
    code = "iteration-timeout"


class NoAvailableWorker(AssignOptError, RuntimeError):
    code = "no-available-worker"


class CheckpointChecksumMismatch(AssignOptError, ValueError):
    code = "checksum-mismatch"


class MissingCheckpoint(AssignOptError, FileNotFoundError):
    code = "missing-record"


class CheckpointIOError(AssignOptError, OSError):
    code = "checkpoint-io"


class RowSumExceedsTolerance(AssignOptError, ValueError):
    code = "row-sum-exceeds-tolerance"


class ZeroReference(AssignOptError, ZeroDivisionError):
    code = "zero-reference"


class ZeroDenominator(AssignOptError, ZeroDivisionError):
    code = "zero-denominator"


class SizeGuard(AssignOptError, ValueError):
    code = "size-guard"

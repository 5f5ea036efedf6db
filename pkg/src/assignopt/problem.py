"""Problem instances: data model, validation, generation, partitioning, I/O.

An instance assigns ``I`` items to ``J`` owners.  Per item we store the
objective row ``omega_i`` (J values), ``M`` inequality features ``u_i`` and
``N`` equality features ``v_i``; owner-side bounds are ``b`` (M x J, upper
bounds on ``X^T u_m``) and ``c`` (N x J, targets of ``X^T v_n``).  A ``+inf``
entry in ``b`` (or ``c``) marks that constraint inactive.

Randomness comes from numpy's Philox4x64-10 counter-based bit generator
keyed by a single 64-bit seed, so generated data is platform independent.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BetaBelowBound,
    DimensionMismatch,
    InvalidPartitionCount,
    MalformedManifest,
    NonpositiveRho,
    OddItemCount,
    ProblemIOError,
    ShardChecksumMismatch,
    ZeroEqualityTarget,
)
from .objective import ObjectiveModel, make_objective

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOAT_FMT = "%.17g"
DEFAULT_PARTITIONS = 16  # 4 default workers x 4


def philox_generator(seed, stream=0):
    """Generator over Philox4x64-10 keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    omega: np.ndarray  # I x J
    U: np.ndarray  # I x M
    V: np.ndarray  # I x N
    b: np.ndarray  # M x J
    c: np.ndarray  # N x J
    objective: ObjectiveModel
    rho: float
    beta: float
    integrality: str = "continuous"
    beta_override: bool = False
    seed: int | None = None
    partitions: int = DEFAULT_PARTITIONS

    @property
    def num_items(self):
        return self.omega.shape[0]

    @property
    def num_owners(self):
        return self.omega.shape[1]

    @property
    def num_ineq(self):
        return self.U.shape[1]

    @property
    def num_eq(self):
        return self.V.shape[1]

    @property
    def shape(self):
        return self.num_items, self.num_owners, self.num_ineq, self.num_eq

    @property
    def W(self):
        """Combined feature matrix ``[U | V]`` (I x S)."""
        return np.hstack([self.U, self.V])

    @property
    def beta_bound(self):
        return 0.5 * self.rho * self.num_items * (self.num_ineq + self.num_eq)

    @property
    def ineq_active(self):
        return np.isfinite(self.b)

    @property
    def eq_active(self):
        return np.isfinite(self.c)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        for name in ("omega", "U", "V", "b", "c"):
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return (
            self.objective == other.objective
            and self.rho == other.rho
            and self.beta == other.beta
            and self.integrality == other.integrality
            and self.beta_override == other.beta_override
            and self.seed == other.seed
            and self.partitions == other.partitions
        )

    __hash__ = None


@dataclass(frozen=True)
class Partition:
    partition_id: int
    lo: int
    hi: int

    @property
    def rows(self):
        return slice(self.lo, self.hi)

    def __len__(self):
        return self.hi - self.lo

    def item_rows(self, spec):
        """(omega, U, V) slices for this partition."""
        return spec.omega[self.rows], spec.U[self.rows], spec.V[self.rows]


def _as_matrix(name, arr, shape):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1 and shape[0] * shape[1] == arr.size and 0 in shape:
        arr = arr.reshape(shape)
    if arr.shape != shape:
        raise DimensionMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def validate(spec):
    """Check every structural invariant; return a frozen copy of ``spec``."""
    omega = np.asarray(spec.omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] < 1 or omega.shape[1] < 1:
        raise DimensionMismatch(f"omega: expected a nonempty I x J matrix, got shape {omega.shape}")
    I, J = omega.shape
    U = np.asarray(spec.U, dtype=float)
    V = np.asarray(spec.V, dtype=float)
    if U.ndim != 2 or U.shape[0] != I:
        raise DimensionMismatch(f"U: expected {I} item rows, got shape {U.shape}")
    if V.ndim != 2 or V.shape[0] != I:
        raise DimensionMismatch(f"V: expected {I} item rows, got shape {V.shape}")
    M, N = U.shape[1], V.shape[1]
    b = _as_matrix("b", spec.b, (M, J))
    c = _as_matrix("c", spec.c, (N, J))

    for name, arr in (("omega", omega), ("U", U), ("V", V)):
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch(f"{name}: contains non-finite values")
    if np.any(np.isnan(b)) or np.any(b == -np.inf):
        raise DimensionMismatch("b: entries must be finite or +inf (inactive)")
    if np.any(np.isnan(c)) or np.any(c == -np.inf):
        raise DimensionMismatch("c: entries must be finite or +inf (inactive)")
    if np.any(c == 0):
        idx = np.argwhere(c == 0)[0].tolist()
        raise ZeroEqualityTarget(f"c[{idx[0]}, {idx[1]}] is zero")

    objective = spec.objective
    if objective.kind in ("quadratic", "logarithmic"):
        if objective.params is None or objective.params.shape != (J,):
            got = None if objective.params is None else objective.params.shape
            raise DimensionMismatch(f"objective params: expected shape ({J},), got {got}")
    if not spec.rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {spec.rho}")
    bound = 0.5 * spec.rho * I * (M + N)
    if not spec.beta > 0:
        raise BetaBelowBound(f"beta must be positive, got {spec.beta}")
    if spec.beta < bound:
        msg = f"beta={spec.beta:g} below the sufficient bound rho/2*I*(M+N)={bound:g}"
        if not spec.beta_override:
            raise BetaBelowBound(msg)
        warnings.warn(msg, stacklevel=2)
    if spec.integrality not in ("binary", "continuous"):
        raise ValueError(f"integrality must be 'binary' or 'continuous', got {spec.integrality!r}")
    if not 1 <= spec.partitions <= I:
        raise InvalidPartitionCount(f"stored partition count {spec.partitions} outside [1, {I}]")

    arrays = {}
    for name, arr in (("omega", omega), ("U", U), ("V", V), ("b", b), ("c", c)):
        arr = np.array(arr, dtype=float, copy=True)
        arr.setflags(write=False)
        arrays[name] = arr
    return spec.replace(rho=float(spec.rho), beta=float(spec.beta), **arrays)


def _objective_for(kind, I, J):
    kind = {"quad": "quadratic", "log": "logarithmic"}.get(kind, kind)
    if kind == "quadratic":
        return make_objective(kind, np.full(J, 1e-4 * I)), 1e-3
    if kind == "logarithmic":
        return make_objective(kind, np.full(J, 1e-1 * I)), 1e-5
    raise ValueError(f"objective_kind must be 'quadratic' or 'logarithmic', got {kind!r}")


def _draw_items(rng, I, J, M, N, scale=1.0):
    omega = scale * rng.random((I, J))
    U = -scale * rng.random((I, M))
    V = scale * rng.random((I, N))
    return omega, U, V


def _assemble(I, J, M, N, kind, seed, omega, U, V, partitions):
    for name, value in (("I", I), ("J", J)):
        if value < 1:
            raise DimensionMismatch(f"{name} must be positive, got {value}")
    if M < 0 or N < 0:
        raise DimensionMismatch("M and N must be nonnegative")
    objective, rho = _objective_for(kind, I, J)
    spec = ProblemSpec(
        omega=omega,
        U=U,
        V=V,
        b=np.full((M, J), -0.3 * I / J),
        c=np.full((N, J), 0.3 * I / J),
        objective=objective,
        rho=rho,
        beta=0.5 * rho * I * (M + N) if M + N else rho,
        seed=seed,
        partitions=min(partitions, I),
    )
    return validate(spec)


def generate_synthetic(I, J, M, N, objective_kind, seed, partitions=DEFAULT_PARTITIONS):
    """Random instance with the uniform coefficient recipe.

    omega, v ~ U[0, 1]; u ~ U[-1, 0]; every b entry is -0.3 I/J and every c
    entry 0.3 I/J.  Quadratic: alpha_j = 1e-4 I, rho = 1e-3.  Logarithmic:
    a_j = 0.1 I, rho = 1e-5.  beta = rho/2 * I * (M + N).
    """
    rng = philox_generator(seed)
    omega, U, V = _draw_items(rng, I, J, M, N)
    return _assemble(I, J, M, N, objective_kind, seed, omega, U, V, partitions)


def generate_uneven(I, J, M, N, objective_kind, seed, partitions=DEFAULT_PARTITIONS):
    """Like :func:`generate_synthetic`, but the second half of the items has
    coefficients scaled by 10 (omega, v ~ U[0, 10]; u ~ U[-10, 0])."""
    if I % 2:
        raise OddItemCount(f"I must be even, got {I}")
    rng = philox_generator(seed)
    half = I // 2
    base = _draw_items(rng, half, J, M, N)
    scaled = _draw_items(rng, half, J, M, N, scale=10.0)
    omega, U, V = (np.vstack(pair) for pair in zip(base, scaled))
    return _assemble(I, J, M, N, objective_kind, seed, omega, U, V, partitions)


def partition(spec, P=None):
    """Split items into ``P`` contiguous ranges whose sizes differ by at most one."""
    I = spec.num_items if isinstance(spec, ProblemSpec) else int(spec)
    if P is None:
        P = spec.partitions
    if not isinstance(P, (int, np.integer)) or not 1 <= P <= I:
        raise InvalidPartitionCount(f"P must be in [1, {I}], got {P}")
    base, extra = divmod(I, P)
    parts = []
    lo = 0
    for p in range(P):
        hi = lo + base + (1 if p < extra else 0)
        parts.append(Partition(p, lo, hi))
        lo = hi
    return parts


# --- on-disk format -------------------------------------------------------

def write_matrix_csv(path, mat, ids=None):
    """Comma-separated rows at full precision; ``ids`` prepends an integer column."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    if ids is None:
        np.savetxt(path, mat, fmt=FLOAT_FMT, delimiter=",")
    else:
        data = np.column_stack([np.asarray(ids, dtype=float), mat])
        np.savetxt(path, data, fmt=["%d"] + [FLOAT_FMT] * mat.shape[1], delimiter=",")


def read_matrix_csv(path, ncols=None):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty file
            mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except OSError as exc:
        raise ProblemIOError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if mat.size == 0 and ncols is not None:
        mat = np.zeros((0, ncols))
    if ncols is not None and mat.shape[1] != ncols:
        raise MalformedManifest(f"{path}: expected {ncols} columns, found {mat.shape[1]}")
    return mat


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _objective_manifest(obj):
    entry = {"kind": obj.kind}
    if obj.kind == "quadratic":
        entry["alpha"] = obj.params.tolist()
    elif obj.kind == "logarithmic":
        entry["a"] = obj.params.tolist()
    if obj.dominance is not None:
        entry["dominance"] = obj.dominance
    return entry


def save_problem(spec, directory):
    """Write ``spec`` as manifest.json, b.csv, c.csv and partitions/part-<p>.csv."""
    directory = Path(directory)
    I, J, M, N = spec.shape
    try:
        (directory / "partitions").mkdir(parents=True, exist_ok=True)
        write_matrix_csv(directory / "b.csv", spec.b)
        write_matrix_csv(directory / "c.csv", spec.c)
        shards = []
        for part in partition(spec, spec.partitions):
            name = f"partitions/part-{part.partition_id}.csv"
            block = np.hstack(part.item_rows(spec))
            ids = np.arange(part.lo, part.hi)
            write_matrix_csv(directory / name, block, ids=ids)
            shards.append({"file": name, "rows": len(part), "sha256": _sha256(directory / name)})
        manifest = {
            "I": I,
            "J": J,
            "M": M,
            "N": N,
            "objective": _objective_manifest(spec.objective),
            "rho": spec.rho,
            "beta": spec.beta,
            "beta_override": spec.beta_override,
            "integrality": spec.integrality,
            "partitions": spec.partitions,
            "shards": shards,
            "seed": spec.seed,
            "format_version": FORMAT_VERSION,
        }
        tmp = directory / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2))
        os.replace(tmp, directory / "manifest.json")
    except OSError as exc:
        raise ProblemIOError(f"cannot write problem to {directory}: {exc}") from exc
    return directory


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise ProblemIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    required = ("I", "J", "M", "N", "objective", "rho", "beta", "partitions", "format_version")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise MalformedManifest(f"{path}: missing keys {missing}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise MalformedManifest(f"{path}: unsupported format_version {manifest['format_version']}")
    return manifest


def load_problem(directory, verify_checksums=True):
    directory = Path(directory)
    m = read_manifest(directory)
    I, J, M, N = (int(m[k]) for k in ("I", "J", "M", "N"))
    P = int(m["partitions"])
    b = read_matrix_csv(directory / "b.csv", J) if M else np.zeros((0, J))
    c = read_matrix_csv(directory / "c.csv", J) if N else np.zeros((0, J))
    if b.shape != (M, J) or c.shape != (N, J):
        raise MalformedManifest(f"b/c shapes {b.shape}/{c.shape} inconsistent with M={M}, N={N}, J={J}")

    shards = m.get("shards") or [{"file": f"partitions/part-{p}.csv"} for p in range(P)]
    if len(shards) != P:
        raise MalformedManifest(f"manifest lists {len(shards)} shards for {P} partitions")
    blocks, ids = [], []
    for shard in shards:
        path = directory / shard["file"]
        if not path.exists():
            raise ProblemIOError(f"missing partition file {shard['file']}")
        if verify_checksums and "sha256" in shard and _sha256(path) != shard["sha256"]:
            raise ShardChecksumMismatch(f"{shard['file']}: checksum mismatch")
        block = read_matrix_csv(path, 1 + J + M + N)
        if "rows" in shard and block.shape[0] != shard["rows"]:
            raise MalformedManifest(f"{shard['file']}: {block.shape[0]} rows, manifest says {shard['rows']}")
        ids.append(block[:, 0])
        blocks.append(block[:, 1:])
    data = np.vstack(blocks) if blocks else np.zeros((0, J + M + N))
    item_ids = np.concatenate(ids) if ids else np.zeros(0)
    if data.shape[0] != I:
        raise MalformedManifest(f"manifest I={I} but shards hold {data.shape[0]} rows")
    if not np.array_equal(item_ids, np.arange(I)):
        raise MalformedManifest("shard item ids are not the contiguous range [0, I)")

    obj = m["objective"]
    params = obj.get("alpha", obj.get("a"))
    objective = make_objective(obj["kind"], params, obj.get("dominance"))
    spec = ProblemSpec(
        omega=data[:, :J],
        U=data[:, J : J + M],
        V=data[:, J + M :],
        b=b,
        c=c,
        objective=objective,
        rho=float(m["rho"]),
        beta=float(m["beta"]),
        integrality=m.get("integrality", "continuous"),
        beta_override=bool(m.get("beta_override", False)),
        seed=m.get("seed"),
        partitions=P,
    )
    return validate(spec)

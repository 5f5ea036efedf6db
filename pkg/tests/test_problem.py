import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from assignopt.errors import (
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
from assignopt.objective import make_objective
from assignopt.problem import (
    ProblemSpec,
    generate_synthetic,
    generate_uneven,
    load_problem,
    partition,
    save_problem,
    validate,
)


def minimal(**changes):
    fields = dict(
        omega=np.ones((2, 2)),
        U=-np.ones((2, 1)),
        V=np.ones((2, 1)),
        b=-np.ones((1, 2)),
        c=np.ones((1, 2)),
        objective=make_objective("quadratic", np.ones(2)),
        rho=1.0,
        beta=2.0,
        partitions=1,
    )
    fields.update(changes)
    return ProblemSpec(**fields)


class TestValidate:
    def test_minimal_accepted(self):
        spec = validate(minimal())
        assert spec.shape == (2, 2, 1, 1)
        assert not spec.omega.flags.writeable

    def test_short_b(self):
        with pytest.raises(DimensionMismatch, match="b"):
            validate(minimal(b=-np.ones(1)))

    def test_wrong_item_rows(self):
        with pytest.raises(DimensionMismatch, match="U"):
            validate(minimal(U=-np.ones((3, 1))))

    def test_beta_below_bound(self):
        bound = 0.5 * 1.0 * 2 * 2
        with pytest.raises(BetaBelowBound):
            validate(minimal(beta=0.9 * bound))

    def test_beta_override_warns(self):
        with pytest.warns(UserWarning, match="below"):
            spec = validate(minimal(beta=1.0, beta_override=True))
        assert spec.beta == 1.0

    def test_rho(self):
        with pytest.raises(NonpositiveRho):
            validate(minimal(rho=0.0))

    def test_zero_c(self):
        with pytest.raises(ZeroEqualityTarget):
            validate(minimal(c=np.array([[1.0, 0.0]])))

    def test_inactive_sentinel_allowed(self):
        spec = validate(minimal(b=np.array([[np.inf, -1.0]])))
        assert spec.ineq_active.tolist() == [[False, True]]

    def test_negative_infinity_rejected(self):
        with pytest.raises(DimensionMismatch):
            validate(minimal(b=np.array([[-np.inf, -1.0]])))


class TestGenerate:
    def test_quadratic_recipe(self):
        spec = generate_synthetic(3000, 10, 3, 2, "quadratic", 1)
        assert np.all(spec.b == -90.0) and np.all(spec.c == 90.0)
        assert spec.rho == 1e-3
        np.testing.assert_allclose(spec.objective.params, 0.3)
        assert spec.beta == pytest.approx(0.5e-3 * 3000 * 5)
        assert spec.omega.min() >= 0 and spec.omega.max() < 1
        assert spec.U.max() <= 0 and spec.U.min() >= -1

    def test_log_recipe(self):
        spec = generate_synthetic(100, 2, 1, 1, "logarithmic", 7)
        assert spec.rho == 1e-5
        np.testing.assert_allclose(spec.objective.params, 10.0)
        assert spec.beta == pytest.approx(1e-3)

    def test_deterministic(self):
        assert generate_synthetic(50, 4, 2, 1, "quadratic", 3) == generate_synthetic(50, 4, 2, 1, "quadratic", 3)
        assert generate_synthetic(50, 4, 2, 1, "quadratic", 3) != generate_synthetic(50, 4, 2, 1, "quadratic", 4)

    def test_means(self):
        spec = generate_synthetic(20_000, 2, 1, 1, "quadratic", 11)
        sd = np.sqrt(1 / 12 / spec.omega.size)
        assert abs(spec.omega.mean() - 0.5) < 3 * sd
        assert abs(spec.U.mean() + 0.5) < 3 * np.sqrt(1 / 12 / spec.U.size)

    def test_uneven(self):
        spec = generate_uneven(3000, 10, 3, 2, "quadratic", 1)
        base, scaled = spec.omega[:1500], spec.omega[1500:]
        assert base.max() < 1.0 < scaled.max()
        assert scaled.max() / base.max() == pytest.approx(10.0, rel=0.01)
        assert np.all(spec.b == -90.0)
        assert generate_uneven(100, 3, 1, 1, "logarithmic", 2) == generate_uneven(100, 3, 1, 1, "logarithmic", 2)

    def test_uneven_odd(self):
        with pytest.raises(OddItemCount):
            generate_uneven(3, 2, 1, 1, "quadratic", 0)


class TestPartition:
    def test_sizes(self):
        assert [len(p) for p in partition(10, 3)] == [4, 3, 3]
        assert [len(p) for p in partition(5, 5)] == [1] * 5

    def test_cover(self):
        parts = partition(3000, 8)
        seen = np.zeros(3000, dtype=int)
        for p in parts:
            seen[p.rows] += 1
        assert np.all(seen == 1)

    @pytest.mark.parametrize("P", [0, 11, 2.5])
    def test_invalid(self, P):
        with pytest.raises(InvalidPartitionCount):
            partition(10, P)

    @given(st.integers(1, 500).flatmap(lambda I: st.tuples(st.just(I), st.integers(1, I))))
    def test_property(self, IP):
        I, P = IP
        parts = partition(I, P)
        assert len(parts) == P
        assert parts[0].lo == 0 and parts[-1].hi == I
        assert all(a.hi == b.lo for a, b in zip(parts, parts[1:]))
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1


class TestIO:
    def test_round_trip(self, tmp_path):
        spec = generate_synthetic(37, 4, 2, 3, "logarithmic", 5, partitions=5)
        save_problem(spec, tmp_path)
        assert load_problem(tmp_path) == spec

    def test_round_trip_inactive(self, tmp_path):
        spec = generate_synthetic(20, 3, 2, 1, "quadratic", 5, partitions=2)
        b = np.array(spec.b)
        b[0, 1] = np.inf
        c = np.array(spec.c)
        c[0, 2] = np.inf
        spec = validate(spec.replace(b=b, c=c))
        save_problem(spec, tmp_path)
        assert "inf" in (tmp_path / "b.csv").read_text()
        assert load_problem(tmp_path) == spec

    def test_manifest_inconsistent(self, tmp_path):
        save_problem(generate_synthetic(20, 3, 1, 1, "quadratic", 0, partitions=2), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["I"] = 21
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(MalformedManifest):
            load_problem(tmp_path)

    def test_missing_shard(self, tmp_path):
        save_problem(generate_synthetic(20, 3, 1, 1, "quadratic", 0, partitions=2), tmp_path)
        (tmp_path / "partitions" / "part-1.csv").unlink()
        with pytest.raises(ProblemIOError, match="part-1.csv"):
            load_problem(tmp_path)

    def test_shard_checksum(self, tmp_path):
        save_problem(generate_synthetic(20, 3, 1, 1, "quadratic", 0, partitions=2), tmp_path)
        shard = tmp_path / "partitions" / "part-0.csv"
        shard.write_text(shard.read_text().replace("0.", "0.9", 1))
        with pytest.raises(ShardChecksumMismatch):
            load_problem(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ProblemIOError):
            load_problem(tmp_path / "absent")

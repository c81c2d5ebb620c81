import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatlab.primitives import (
    DomainError,
    PrimitiveSet,
    activate_opacity,
    activate_scale,
    build_covariance,
    classify_active,
    inverse_opacity,
    opacity_derivative,
)


class TestOpacityActivation:
    def test_zero_logit_is_half(self):
        assert activate_opacity(0.0) == 0.5
        assert opacity_derivative(0.0) == 0.25

    def test_saturation(self):
        assert activate_opacity(-50.0) == pytest.approx(0.0, abs=1e-20)
        assert opacity_derivative(-50.0) == pytest.approx(0.0, abs=1e-20)

    def test_known_point(self):
        # sigma(ln 4) = 0.8
        assert activate_opacity(1.3863) == pytest.approx(0.8, abs=1e-4)
        assert opacity_derivative(1.3863) == pytest.approx(0.16, abs=1e-4)

    def test_nonfinite_rejected(self):
        with pytest.raises(DomainError):
            activate_opacity(float("nan"))
        with pytest.raises(DomainError):
            activate_opacity(np.array([0.0, np.inf]))

    def test_inverse_roundtrip(self):
        taus = np.linspace(-8, 8, 33)
        assert np.allclose(inverse_opacity(activate_opacity(taus)), taus, atol=1e-9)

    @given(st.floats(min_value=-12, max_value=12))
    @settings(max_examples=200, deadline=None)
    def test_derivative_matches_central_differences(self, tau):
        # h large enough that FD rounding noise stays under the tolerance
        h = 1e-4
        fd = (activate_opacity(tau + h) - activate_opacity(tau - h)) / (2 * h)
        an = opacity_derivative(tau)
        assert abs(fd - an) <= 1e-6 * max(abs(fd), abs(an), 1e-12)

    @given(st.floats(min_value=-300, max_value=300))
    @settings(max_examples=100, deadline=None)
    def test_derivative_identity(self, tau):
        o = activate_opacity(tau)
        assert opacity_derivative(tau) == pytest.approx(o * (1 - o), rel=1e-12, abs=1e-300)
        assert 0.0 < o < 1.0 or abs(tau) > 36  # strict interior away from saturation


class TestScaleActivation:
    def test_identity(self):
        assert activate_scale(0.0) == 1.0

    def test_exact_logs(self):
        s = activate_scale(np.log([2.0, 3.0]))
        assert np.allclose(s, [2.0, 3.0], rtol=1e-14)

    def test_known_point(self):
        assert activate_scale(-2.3026) == pytest.approx(0.1, abs=1e-4)

    def test_overflow_rejected(self):
        with pytest.raises(DomainError):
            activate_scale(81.0)
        with pytest.raises(DomainError):
            activate_scale(np.inf)


class TestCovariance:
    def test_isotropic_is_identity(self):
        for rot in (0.0, 0.7, np.pi / 2, 2.0):
            assert np.allclose(build_covariance(np.array([1.0, 1.0]), rot), np.eye(2), atol=1e-15)

    def test_axis_aligned(self):
        cov = build_covariance(np.array([2.0, 1.0]), 0.0)
        assert np.allclose(cov, np.diag([4.0, 1.0]), atol=1e-15)

    def test_quarter_turn_swaps_axes(self):
        cov = build_covariance(np.array([2.0, 1.0]), np.pi / 2)
        expected = np.diag([1.0, 4.0])  # explicit R diag R^T at 90 degrees
        assert np.allclose(cov, expected, atol=1e-12)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(DomainError):
            build_covariance(np.array([0.0, 1.0]), 0.0)
        with pytest.raises(DomainError):
            build_covariance(np.array([-1.0, 1.0]), 0.0)

    @given(st.floats(min_value=-10, max_value=10),
           st.floats(min_value=0.1, max_value=20),
           st.floats(min_value=0.1, max_value=20))
    @settings(max_examples=200, deadline=None)
    def test_spectrum_is_rotation_invariant(self, rot, s1, s2):
        cov = build_covariance(np.array([s1, s2]), rot)
        assert np.allclose(cov, cov.T, atol=1e-12)
        eigs = np.sort(np.linalg.eigvalsh(cov))
        assert np.allclose(eigs, np.sort([s1 * s1, s2 * s2]), rtol=1e-9, atol=1e-12)


def _uniform_set(taus):
    n = len(taus)
    return PrimitiveSet(
        mu=np.zeros((n, 2)), kappa=np.zeros((n, 2)), rot=np.zeros(n),
        tau=np.asarray(taus, dtype=float), color=np.full((n, 3), 0.5),
        depth=np.linspace(0, 1, n),
    )


class TestClassifyActive:
    def test_all_mid_opacity_active(self):
        n_a, n_d, mask = classify_active(_uniform_set(np.zeros(10)))
        assert (n_a, n_d) == (10, 0)
        assert mask.all()

    def test_all_saturated_low_dead(self):
        n_a, n_d, mask = classify_active(_uniform_set(np.full(10, -10.0)))
        assert (n_a, n_d) == (0, 10)
        assert not mask.any()

    def test_mixed_counts(self):
        taus = np.array([-10.0] * 3 + [0.0] * 7)
        n_a, n_d, _ = classify_active(_uniform_set(taus))
        # direct count oracle
        expected_active = int((1 / (1 + np.exp(-taus)) > 1 / 255).sum())
        assert n_a == expected_active == 7
        assert n_d == 3

    def test_dead_excludes_not_alive(self):
        ps = _uniform_set(np.zeros(4))
        ps.alive[2] = False
        n_a, n_d, mask = classify_active(ps)
        assert (n_a, n_d) == (3, 0)
        assert not mask[2]

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(7)
        ps = _uniform_set(rng.normal(-3, 3, size=50))
        counts = [classify_active(ps, thr)[0] for thr in (0.001, 0.01, 0.1, 0.5, 0.9)]
        assert counts == sorted(counts, reverse=True)

    def test_invalid_threshold(self):
        with pytest.raises(DomainError):
            classify_active(_uniform_set(np.zeros(1)), threshold=0.0)


class TestSerialization:
    def test_binary_roundtrip(self, tmp_path, rng):
        from conftest import small_set
        ps = small_set(rng, n=17)
        ps.alive[3] = False
        path = tmp_path / "set.bin"
        ps.save(path)
        # 16-byte header then raw little-endian arrays
        raw = path.read_bytes()
        assert raw[:4] == b"PST2"
        assert len(raw) == 16 + 17 * 10 * 8 + 17
        back = PrimitiveSet.load(path)
        for attr in ("mu", "kappa", "rot", "tau", "color", "depth"):
            assert np.array_equal(getattr(ps, attr), getattr(back, attr))
        assert np.array_equal(ps.alive, back.alive)

    def test_json_dump(self, tmp_path, rng):
        import json

        from conftest import small_set
        ps = small_set(rng, n=3)
        doc = json.loads(ps.to_json(tmp_path / "set.json"))
        assert doc["count"] == 3
        assert np.allclose(doc["mu"], ps.mu)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            PrimitiveSet.load(p)

    def test_misaligned_arrays_rejected(self):
        with pytest.raises(ValueError):
            PrimitiveSet(
                mu=np.zeros((3, 2)), kappa=np.zeros((2, 2)), rot=np.zeros(3),
                tau=np.zeros(3), color=np.zeros((3, 3)), depth=np.zeros(3),
            )

import math

import numpy as np
import pytest

from mehtalab.estimation import substream
from mehtalab.spectral import batched_eigvals, eigenvalues, spectral_measure
from mehtalab.spherefield import (
    DegenerateMatrixError,
    IncompleteSearchError,
    SpherePoint,
    default_n_starts,
    discriminant_measure,
    find_critical_points,
    find_critical_points_batch,
    grad_phi,
    hess_phi,
    morse_index_spectrum,
    phi,
    tangent_basis,
)
from mehtalab.symspace import SymMatrix, sample_goe_batch


def random_sym(m, rng):
    a = rng.normal(size=(m, m))
    return SymMatrix.from_full(a + a.T)


def geodesic(x, q, s):
    """Exponential map: walk distance |s| from x along the tangent direction q s."""
    norm = np.linalg.norm(s)
    if norm == 0.0:
        return x
    u = (q @ s) / norm
    return math.cos(norm) * x + math.sin(norm) * u


def fd_hessian(a, x, step=1e-4):
    """Second central differences of the field along geodesic normal coordinates."""
    af = a.to_full()
    q = tangent_basis(x)
    m = q.shape[1]
    h = np.zeros((m, m))
    f0 = phi(af, x)
    for i in range(m):
        ei = np.zeros(m)
        ei[i] = step
        fp = phi(af, geodesic(x, q, ei))
        fm = phi(af, geodesic(x, q, -ei))
        h[i, i] = (fp - 2.0 * f0 + fm) / step**2
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = step
            fpp = phi(af, geodesic(x, q, ei + ej))
            fpm = phi(af, geodesic(x, q, ei - ej))
            fmp = phi(af, geodesic(x, q, -ei + ej))
            fmm = phi(af, geodesic(x, q, -ei - ej))
            h[i, j] = h[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step**2)
    return h


class TestSpherePoint:
    def test_normalizes(self):
        p = SpherePoint([3.0, 4.0])
        assert np.allclose(p.coords, [0.6, 0.8])
        assert abs(np.linalg.norm(p.coords) - 1.0) <= 1e-12

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            SpherePoint([0.0, 0.0])

    def test_north_pole(self):
        p = SpherePoint.north_pole(4)
        assert np.allclose(p.coords, [1.0, 0.0, 0.0, 0.0])


class TestFieldDerivatives:
    def test_hessian_at_north_pole_is_block_shift(self):
        rng = substream(401)
        a = random_sym(4, rng)
        n = SpherePoint.north_pole(4)
        h = hess_phi(a, n)
        full = a.to_full()
        want = full[1:, 1:] - full[0, 0] * np.eye(3)
        assert np.array_equal(h, 0.5 * (want + want.T))

    def test_gradient_vanishes_at_eigenvectors(self):
        a = random_sym(4, substream(402))
        w, vec = np.linalg.eigh(a.to_full())
        for k in range(4):
            g = grad_phi(a, vec[:, k])
            assert np.linalg.norm(g) <= 1e-12

    def test_gradient_tangency(self):
        rng = substream(403)
        for _ in range(1000):
            a = random_sym(3, rng)
            x = SpherePoint(rng.normal(size=3))
            g = grad_phi(a, x)
            assert abs(g @ x.coords) <= 1e-12

    def test_hessian_against_finite_differences(self):
        rng = substream(404)
        for _ in range(5):
            a = random_sym(4, rng)
            x = SpherePoint(rng.normal(size=4))
            h = hess_phi(a, x)
            h_fd = fd_hessian(a, x.coords)
            assert np.max(np.abs(h - h_fd)) < 1e-5

    def test_value_and_gradient_formulas(self):
        # A = diag(2, 0) at x = (1,1)/sqrt(2): Ax = (sqrt2, 0), (Ax, x) = 1,
        # so grad = Ax - x = (1, -1)/sqrt(2)
        a = SymMatrix.from_diagonal([2.0, 0.0])
        x = SpherePoint([1.0, 1.0])
        assert phi(a, x) == pytest.approx(0.5, abs=1e-14)
        g = grad_phi(a, x)
        assert np.allclose(g, [1.0 / math.sqrt(2), -1.0 / math.sqrt(2)], atol=1e-12)

    def test_tangent_basis_orthonormal(self):
        rng = substream(405)
        for _ in range(50):
            x = SpherePoint(rng.normal(size=5))
            q = tangent_basis(x)
            assert np.max(np.abs(q.T @ q - np.eye(4))) <= 1e-12
            assert np.max(np.abs(q.T @ x.coords)) <= 1e-12


class TestFinder:
    def test_diagonal_2x2(self):
        cps = find_critical_points(SymMatrix.from_diagonal([1.0, 2.0]), rng=406)
        assert len(cps) == 4
        vals = sorted(c.value for c in cps)
        assert np.allclose(vals, [1.0, 1.0, 2.0, 2.0], atol=1e-10)
        for c in cps:
            axis = np.argmax(np.abs(c.point))
            assert abs(abs(c.point[axis]) - 1.0) <= 1e-8

    def test_exchange_matrix(self):
        cps = find_critical_points(SymMatrix.from_full([[0.0, 1.0], [1.0, 0.0]]), rng=407)
        vals = sorted(c.value for c in cps)
        assert np.allclose(vals, [-1.0, -1.0, 1.0, 1.0], atol=1e-10)
        for c in cps:
            assert np.allclose(np.abs(c.point), [math.sqrt(0.5)] * 2, atol=1e-8)

    def test_goe_sample_matches_eigendecomposition(self):
        mats = sample_goe_batch(3, 1.0, 1, substream(408))
        a = SymMatrix.from_full(mats[0])
        cps = find_critical_points(a, rng=409)
        assert len(cps) == 6
        # oracle: LAPACK eigendecomposition, each eigenvalue twice
        ref = np.repeat(np.linalg.eigvalsh(a.to_full()), 2)
        assert np.max(np.abs(np.sort([c.value for c in cps]) - ref)) < 1e-8
        assert all(c.gradient_norm < 1e-10 for c in cps)

    def test_antipodal_pairs(self):
        a = random_sym(3, substream(410))
        cps = find_critical_points(a, rng=411)
        pts = np.array([c.point for c in cps])
        vals = np.array([c.value for c in cps])
        idx = np.array([c.morse_index for c in cps])
        for k in range(len(cps)):
            dots = pts @ pts[k]
            partner = int(np.argmin(dots))
            assert dots[partner] == pytest.approx(-1.0, abs=1e-9)
            assert vals[partner] == pytest.approx(vals[k], abs=1e-9)
            assert idx[partner] == idx[k]

    def test_degenerate_matrix_rejected(self):
        with pytest.raises(DegenerateMatrixError):
            find_critical_points(SymMatrix.from_diagonal([1.0, 1.0, 2.0]), rng=412)

    def test_incomplete_search_reports_count(self):
        a = random_sym(3, substream(413))
        with pytest.raises(IncompleteSearchError) as info:
            find_critical_points(a, n_starts=1, rng=414, max_extra_rounds=0)
        assert info.value.found < info.value.expected == 6

    def test_orthogonal_equivariance(self):
        rng = substream(415)
        a = random_sym(3, rng)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        b = SymMatrix.from_full(q.T @ a.to_full() @ q)
        va = sorted(c.value for c in find_critical_points(a, rng=416))
        vb = sorted(c.value for c in find_critical_points(b, rng=417))
        assert np.max(np.abs(np.array(va) - np.array(vb))) <= 1e-9

    def test_default_start_count(self):
        assert default_n_starts(3) == 240

    def test_batch_shape_and_values(self):
        mats = sample_goe_batch(3, 1.0, 50, substream(418))
        batch = find_critical_points_batch(mats, rng=419)
        assert batch.values.shape == (50, 6)
        lam = batched_eigvals(mats)
        assert np.max(np.abs(batch.values - np.repeat(lam, 2, axis=1))) < 1e-8

    def test_input_validation(self):
        a = random_sym(3, substream(420))
        with pytest.raises(ValueError):
            find_critical_points(a, tol=0.0)
        with pytest.raises(ValueError):
            find_critical_points(a, n_starts=0)

    def test_near_coincident_values_stay_separate(self):
        # gap above the degeneracy tolerance but inside the value-cluster
        # width: the alignment split must still yield all six points
        rng = substream(433)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        w = np.array([1.0, 1.0 + 3e-7, 2.0])
        a = SymMatrix.from_full(q @ np.diag(w) @ q.T)
        cps = find_critical_points(a, rng=434)
        assert len(cps) == 6
        vals = np.sort([c.value for c in cps])
        assert np.max(np.abs(vals - np.repeat(w, 2))) < 1e-8

    def test_badly_scaled_matrix_with_default_tolerance(self):
        a = SymMatrix.from_diagonal([1e8, 2e8, -3e8])
        cps = find_critical_points(a, tol=None, rng=435)
        assert sorted(round(c.value) for c in cps) == [-300000000] * 2 + [100000000] * 2 + [200000000] * 2


class TestDiscriminantMeasure:
    def test_total_mass(self):
        a = random_sym(3, substream(421))
        for method, rng in (("analytic", None), ("search", 422)):
            pm = discriminant_measure(a, method=method, rng=rng)
            assert pm.total_mass == 6.0

    def test_diagonal_atoms(self):
        pm = discriminant_measure(SymMatrix.from_diagonal([1.0, 2.0]))
        assert np.allclose(pm.locations, [1.0, 2.0])
        assert np.allclose(pm.weights, [2.0, 2.0])

    def test_methods_agree_on_goe_samples(self):
        mats = sample_goe_batch(3, 1.0, 1000, substream(423))
        for k in range(1000):
            a = SymMatrix.from_full(mats[k])
            ana = discriminant_measure(a, method="analytic")
            src = discriminant_measure(a, method="search", rng=1000 + k)
            assert ana.locations.size == src.locations.size
            assert np.max(np.abs(ana.locations - src.locations)) < 1e-8
            assert np.array_equal(ana.weights, src.weights)

    def test_doubles_spectral_measure(self):
        a = random_sym(4, substream(424))
        sm = spectral_measure(a)
        dm = discriminant_measure(a, method="analytic")
        assert np.array_equal(dm.locations, sm.locations)
        assert np.array_equal(dm.weights, 2.0 * sm.weights)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            discriminant_measure(random_sym(2, substream(425)), method="magic")


class TestMorseIndices:
    def test_diag_2(self):
        spec = morse_index_spectrum(SymMatrix.from_diagonal([1.0, 2.0]), rng=426)
        assert sorted(idx for _, idx in spec) == [0, 0, 1, 1]

    def test_diag_3(self):
        spec = morse_index_spectrum(SymMatrix.from_diagonal([1.0, 2.0, 3.0]), rng=427)
        assert sorted(idx for _, idx in spec) == [0, 0, 1, 1, 2, 2]

    def test_goe4_against_tangent_eigenvalue_oracle(self):
        mats = sample_goe_batch(4, 1.0, 1, substream(428))
        a = SymMatrix.from_full(mats[0])
        spec = morse_index_spectrum(a, rng=429)
        assert sorted(idx for _, idx in spec) == [0, 0, 1, 1, 2, 2, 3, 3]
        # oracle: at the eigenvector of the k-th eigenvalue the tangent Hessian
        # spectrum is the other eigenvalues minus it
        lam = eigenvalues(a)
        for value, idx in spec:
            k = int(np.argmin(np.abs(lam - value)))
            shifted = np.delete(lam, k) - lam[k]
            assert idx == int((shifted < 0).sum())


class TestMorseWitness:
    def test_no_tiny_gaps_in_100k_samples(self):
        # statistical witness that the field is almost surely Morse
        for d, seed in ((2, 430), (3, 431), (4, 432)):
            lam = batched_eigvals(sample_goe_batch(d, 1.0, 100000, substream(seed)))
            gaps = np.diff(lam, axis=1).min(axis=1)
            assert int((gaps < 1e-12).sum()) == 0

import itertools
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evovid.captions import (Caption, InvalidInputError, encode_caption,
                             fit_pca, project)


def cap(text: str) -> Caption:
    return Caption(text=text, class_label=0)


class TestEncodeCaption:
    def test_same_caption_identical(self):
        a = encode_caption(cap("a red circle moving left"))
        b = encode_caption(cap("a red circle moving left"))
        assert np.array_equal(a, b)

    def test_attribute_change_distinct(self):
        a = encode_caption(cap("red circle moving left"))
        b = encode_caption(cap("red circle moving right"))
        assert not np.array_equal(a, b)
        cos = float(a @ b)  # both unit norm
        assert cos < 1.0 - 1e-6

    def test_corpus_pairwise_distinct(self):
        colors = ["red", "green", "blue", "yellow", "cyan"]
        shapes = ["circle", "square", "triangle", "ring"]
        motions = ["left", "right", "up", "down", "around"]
        texts = [f"a {c} {s} moving {m}"
                 for c, s, m in itertools.product(colors, shapes, motions)]
        assert len(texts) == 100
        vecs = [encode_caption(cap(t)) for t in texts]
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                assert not np.array_equal(vecs[i], vecs[j]), (texts[i], texts[j])

    def test_empty_caption_rejected(self):
        with pytest.raises(InvalidInputError):
            Caption(text="   ", class_label=0)

    def test_unit_norm(self):
        v = encode_caption(cap("a green square moving up"))
        assert np.isclose(np.linalg.norm(v), 1.0)
        assert np.all(np.isfinite(v))

    def test_stable_across_processes(self):
        code = ("import numpy as np, hashlib\n"
                "from evovid.captions import Caption, encode_caption\n"
                "v = encode_caption(Caption(text='a red circle moving left', class_label=0))\n"
                "print(hashlib.sha256(v.tobytes()).hexdigest())\n")
        outs = {
            subprocess.run([sys.executable, "-c", code], capture_output=True,
                           text=True, check=True).stdout.strip()
            for _ in range(2)
        }
        here = encode_caption(cap("a red circle moving left"))
        import hashlib
        outs.add(hashlib.sha256(here.tobytes()).hexdigest())
        assert len(outs) == 1

    @given(st.text(alphabet="abcdefg ", min_size=1, max_size=30))
    @settings(max_examples=30, deadline=None)
    def test_pure_function(self, text):
        if not any(ch.isalnum() for ch in text):
            return
        c = Caption(text=text, class_label=0)
        assert np.array_equal(encode_caption(c), encode_caption(c))


class TestFitPca:
    def test_diagonal_covariance(self):
        data = np.array([[-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0], [2.0, 1.0],
                         [0.0, 0.0]])
        pca = fit_pca(data, d=2)
        assert np.allclose(pca.explained_variance, [4.0, 1.0])
        assert np.allclose(np.abs(pca.components), np.eye(2), atol=1e-12)
        # sign convention: dominant entry positive
        assert pca.components[0, 0] > 0 and pca.components[1, 1] > 0

    def test_collinear_points(self):
        t = np.linspace(-1, 1, 7)
        data = np.stack([t, t], axis=1)
        pca = fit_pca(data, d=2)
        # brute-force eigendecomposition of the 2x2 covariance
        cov = np.cov(data, rowvar=False)
        ref_vals = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(pca.explained_variance, ref_vals, atol=1e-12)
        assert np.allclose(pca.components[0], np.array([1.0, 1.0]) / np.sqrt(2))
        assert pca.explained_variance[1] == pytest.approx(0.0, abs=1e-12)

    def test_orthonormal_rows(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(40, 10))
        pca = fit_pca(data, d=5)
        gram = pca.components @ pca.components.T
        assert np.allclose(gram, np.eye(5), atol=1e-6)

    def test_variance_ordering(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            data = rng.normal(size=(30, 8)) * rng.uniform(0.1, 3.0, size=8)
            pca = fit_pca(data, d=8)
            diffs = np.diff(pca.explained_variance)
            assert np.all(diffs <= 1e-12)
            assert np.all(pca.explained_variance >= 0.0)

    def test_svd_oracle_agreement(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            data = rng.normal(size=(25, 6))
            pca = fit_pca(data, d=4)
            centered = data - data.mean(axis=0)
            _, s, vt = np.linalg.svd(centered, full_matrices=False)
            oracle_vals = (s ** 2) / (len(data) - 1)
            assert np.allclose(pca.explained_variance, oracle_vals[:4], atol=1e-8)
            for row, oracle_row in zip(pca.components, vt[:4]):
                assert (np.allclose(row, oracle_row, atol=1e-8)
                        or np.allclose(row, -oracle_row, atol=1e-8))

    def test_errors(self):
        rng = np.random.default_rng(6)
        with pytest.raises(InvalidInputError):
            fit_pca(rng.normal(size=(10, 4)), d=5)
        with pytest.raises(InvalidInputError):
            fit_pca(rng.normal(size=(3, 8)), d=4)


class TestProject:
    @pytest.fixture()
    def pca(self):
        rng = np.random.default_rng(7)
        return fit_pca(rng.normal(size=(30, 8)), d=3)

    def test_mean_projects_to_zero(self, pca):
        assert np.allclose(project(pca, pca.mean), 0.0, atol=1e-12)

    def test_component_projects_to_basis_vector(self, pca):
        out = project(pca, pca.mean + pca.components[0])
        assert np.allclose(out, [1.0, 0.0, 0.0], atol=1e-9)

    def test_reconstruction_matches_svd_truncation(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(20, 6))
        pca = fit_pca(data, d=2)
        codes = project(pca, data)
        recon = pca.mean + codes @ pca.components
        err = np.linalg.norm(data - recon) ** 2
        centered = data - data.mean(axis=0)
        u, s, vt = np.linalg.svd(centered, full_matrices=False)
        trunc = data.mean(axis=0) + (u[:, :2] * s[:2]) @ vt[:2]
        err_svd = np.linalg.norm(data - trunc) ** 2
        assert err <= err_svd + 1e-9

    def test_dimension_mismatch(self, pca):
        with pytest.raises(InvalidInputError):
            project(pca, np.zeros(5))

    @given(st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=25, deadline=None)
    def test_affine_linearity(self, a, b):
        rng = np.random.default_rng(9)
        pca = fit_pca(rng.normal(size=(30, 8)), d=3)
        u = rng.normal(size=8)
        v = rng.normal(size=8)
        lhs = project(pca, pca.mean + a * u + b * v)
        rhs = a * project(pca, pca.mean + u) + b * project(pca, pca.mean + v)
        assert np.allclose(lhs, rhs, atol=1e-8)

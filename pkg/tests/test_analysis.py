"""Component distances, PCA projection, per-category accuracy."""

import numpy as np
import pytest

from simile_probe.analysis import (
    category_breakdown,
    component_distances,
    distances_to_csv,
    pca_coords,
    pca_to_csv,
)
from simile_probe.errors import DegenerateInputError, PreconditionError
from simile_probe.lm import AlignedEncoding

from conftest import make_record


class FixedHiddenModel:
    """Model handle whose per-token hidden vectors are dictated by a map."""

    name = "fixed"
    max_len = 128

    def __init__(self, mapping: dict[str, list[float]], default=None):
        self.mapping = {k.lower(): np.asarray(v, dtype=np.float64) for k, v in mapping.items()}
        self.hidden_dim = len(next(iter(self.mapping.values())))
        self.default = (
            np.asarray(default, dtype=np.float64)
            if default is not None
            else np.zeros(self.hidden_dim)
        )

    def _vec(self, word):
        return self.mapping.get(word.lower(), self.default)

    def encode(self, tokens):
        rows = [np.zeros(self.hidden_dim)]
        rows += [self._vec(t) for t in tokens]
        rows.append(np.zeros(self.hidden_dim))
        encoding = AlignedEncoding(
            subtoken_ids=list(range(len(tokens) + 2)),
            word_to_subtoken=[(i + 1, i + 2) for i in range(len(tokens))],
            mask_positions=[],
            hidden_dim=self.hidden_dim,
        )
        return encoding, np.stack(rows)

    def logprobs_at_masks(self, tokens):
        raise NotImplementedError

    def subtoken_ids(self, word):
        return [0]

    def input_embedding(self, word):
        return self._vec(word)


class TestComponentDistances:
    def test_identical_vectors_give_zero(self):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        model = FixedHiddenModel({w: [1.0, 2.0] for w in record.tokens})
        summary = component_distances([record], model)
        assert summary.mean_tp == summary.mean_pv == summary.mean_tv == 0.0

    def test_two_records_match_manual_means(self):
        a = make_record("man is as brave as a lion", prop="brave", vehicle="lion",
                        topic="man", event="is")
        b = make_record("girl is as quick as a fox", prop="quick", vehicle="fox",
                        topic="girl", event="is")
        vectors = {
            "man": [0.0, 0.0], "brave": [3.0, 4.0], "lion": [6.0, 8.0],
            "girl": [1.0, 0.0], "quick": [1.0, 2.0], "fox": [0.0, 0.0],
        }
        model = FixedHiddenModel(vectors)
        summary = component_distances([a, b], model)
        # record a: tp=5, pv=5, tv=10; record b: tp=2, pv=sqrt(5), tv=1
        assert summary.mean_tp == pytest.approx((5.0 + 2.0) / 2)
        assert summary.mean_pv == pytest.approx((5.0 + np.sqrt(5.0)) / 2)
        assert summary.mean_tv == pytest.approx((10.0 + 1.0) / 2)
        assert summary.n_records == 2

    def test_empty_topic_skipped_and_counted(self):
        full = make_record("man is as brave as a lion", prop="brave", vehicle="lion",
                           topic="man", event="is")
        topicless = make_record("as busy as a bee", prop="busy", vehicle="bee")
        model = FixedHiddenModel({w: [1.0, 1.0] for w in full.tokens + topicless.tokens})
        summary = component_distances([full, topicless], model)
        assert summary.n_records == 1
        assert summary.n_skipped == 1

    def test_all_skipped_errors(self):
        topicless = make_record("as busy as a bee", prop="busy", vehicle="bee")
        model = FixedHiddenModel({w: [1.0] for w in topicless.tokens})
        with pytest.raises(PreconditionError):
            component_distances([topicless], model)

    def test_distance_symmetry_and_triangle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            x, y, z = rng.standard_normal((3, 6))
            assert np.linalg.norm(x - y) == pytest.approx(np.linalg.norm(y - x))
            assert np.linalg.norm(x - z) <= np.linalg.norm(x - y) + np.linalg.norm(y - z) + 1e-12

    def test_csv_emitter(self, tmp_path):
        record = make_record("He is as brave as a lion", prop="brave", vehicle="lion",
                             topic="He", event="is")
        model = FixedHiddenModel({w: [1.0, 0.0] for w in record.tokens})
        rows = {"mlm": component_distances([record], model)}
        distances_to_csv(tmp_path / "d.csv", rows)
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0].startswith("encoder,topic_property")
        assert lines[1].startswith("mlm,")


def _pca_model(vectors):
    mapping = {f"w{i}": v for i, v in enumerate(vectors)}
    return FixedHiddenModel(mapping), [f"w{i}" for i in range(len(vectors))]


class TestPcaCoords:
    def test_planar_tokens_capture_all_variance(self):
        rng = np.random.default_rng(1)
        basis = rng.standard_normal((2, 8))
        coeffs = rng.standard_normal((6, 2))
        vectors = coeffs @ basis + rng.standard_normal(8)  # plane + common offset
        model, tokens = _pca_model(vectors)
        projection = pca_coords(tokens, model)
        assert projection.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-9)

    def test_matches_eigendecomposition_oracle_up_to_sign(self):
        rng = np.random.default_rng(2)
        vectors = rng.standard_normal((6, 8))
        model, tokens = _pca_model(vectors)
        projection = pca_coords(tokens, model)

        centered = vectors - vectors.mean(axis=0)
        eigvals, eigvecs = np.linalg.eigh(centered.T @ centered)
        order = np.argsort(eigvals)[::-1]
        oracle = centered @ eigvecs[:, order[:2]]
        for axis in range(2):
            got, want = projection.coords[:, axis], oracle[:, axis]
            assert np.allclose(got, want, atol=1e-8) or np.allclose(got, -want, atol=1e-8)

    def test_projected_mean_is_origin(self):
        rng = np.random.default_rng(3)
        model, tokens = _pca_model(rng.standard_normal((5, 7)) + 4.0)
        projection = pca_coords(tokens, model)
        assert np.allclose(projection.coords.mean(axis=0), 0.0, atol=1e-10)

    def test_rank_deficient_rejected(self):
        model, tokens = _pca_model([[1.0, 0.0]] * 4)  # all identical: rank 0
        with pytest.raises(DegenerateInputError):
            pca_coords(tokens, model)
        colinear = [[float(i), 2.0 * i] for i in range(4)]  # rank 1 after centering
        model, tokens = _pca_model(colinear)
        with pytest.raises(DegenerateInputError):
            pca_coords(tokens, model)

    def test_too_few_tokens_rejected(self):
        model, tokens = _pca_model([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(PreconditionError):
            pca_coords(tokens, model)

    def test_permutation_equivariant_up_to_sign(self):
        rng = np.random.default_rng(4)
        vectors = rng.standard_normal((6, 5))
        model, tokens = _pca_model(vectors)
        base = pca_coords(tokens, model)
        perm = rng.permutation(6)
        permuted = pca_coords([tokens[i] for i in perm], model)
        for axis in range(2):
            got, want = permuted.coords[:, axis], base.coords[perm, axis]
            assert np.allclose(got, want, atol=1e-8) or np.allclose(got, -want, atol=1e-8)

    def test_csv_emitter(self, tmp_path):
        rng = np.random.default_rng(5)
        model, tokens = _pca_model(rng.standard_normal((4, 6)))
        projection = pca_coords(tokens, model)
        pca_to_csv(tmp_path / "pca.csv", projection)
        lines = (tmp_path / "pca.csv").read_text().splitlines()
        assert lines[0] == "token,pc1,pc2"
        assert len(lines) == 5


class TestCategoryBreakdown:
    def test_manual_tally(self):
        correct = [True, False, True, True, False, True, True, False, True, True]
        categories = ["color", "color", "time", "time", "time",
                      "emotion", None, "emotion", "emotion", None]
        breakdown = category_breakdown(correct, categories)
        assert breakdown["color"].accuracy == pytest.approx(0.5)
        assert breakdown["time"].accuracy == pytest.approx(2 / 3)
        assert breakdown["emotion"].accuracy == pytest.approx(2 / 3)
        assert breakdown["color"].support == 2

    def test_all_correct_gives_ones(self):
        breakdown = category_breakdown([True] * 4, ["sense", "sense", "color", "color"])
        assert all(v.accuracy == 1.0 for v in breakdown.values())

    def test_supports_sum_to_categorized_count(self):
        correct = [True] * 7
        categories = ["color", None, "time", "time", None, "sense", "color"]
        breakdown = category_breakdown(correct, categories)
        assert sum(v.support for v in breakdown.values()) == 5

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(PreconditionError):
            category_breakdown([True], ["color", "time"])

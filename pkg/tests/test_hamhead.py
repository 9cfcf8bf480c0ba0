"""Layout bookkeeping, matrix assembly, loss, fusion, and serialization."""

from __future__ import annotations

import numpy as np
import pytest

from molham.autodiff import constant, grad_check
from molham.errors import CorruptFile, ShapeMismatch, UnsupportedElement
from molham.hamhead import (
    finetune_loss,
    fuse_modalities,
    layout,
    load_hamiltonian,
    predict_hamiltonian,
    save_hamiltonian,
    upper_triangle,
)
from molham.model import Model, ModelConfig
from molham.smiles import expand_hydrogens, parse_smiles

RNG = np.random.default_rng(31)
CFG = ModelConfig(width=8, token_layers=1, geom_rounds=1, n_rbf=4, n_shear=2, head_hidden=6)


@pytest.fixture()
def head():
    model = Model.init(CFG, seed=12)
    rng = np.random.default_rng(3)
    for name in model.params:  # free the zero-initialized output layers
        if name.startswith("head."):
            model.params[name] = model.params[name] + 0.2 * rng.standard_normal(
                model.params[name].shape)
    return model


class TestLayout:
    def test_h2(self):
        lay = layout(expand_hydrogens(parse_smiles("[H][H]")).elements)
        assert lay.n_orb == 2
        assert lay.counts == (1, 1)

    def test_water(self):
        lay = layout(expand_hydrogens(parse_smiles("O")).elements)
        assert lay.n_orb == 4
        assert lay.counts == (2, 1, 1)
        assert lay.offsets == (0, 2, 3)

    def test_counting_cross_check(self):
        xmol = expand_hydrogens(parse_smiles("CCO"))
        lay = layout(xmol.elements)
        per_element = {"H": 1, "C": 2, "N": 2, "O": 2, "F": 2, "P": 2, "S": 2}
        assert lay.n_orb == sum(per_element[e] for e in xmol.elements)
        atom_of = lay.atom_of_orbital()
        assert [int((atom_of == a).sum()) for a in range(lay.n_atoms)] == list(lay.counts)

    def test_unsupported_element(self):
        with pytest.raises(UnsupportedElement):
            layout(("C", "Br"))


class TestPredict:
    def _predict(self, head, elements, emb=None):
        lay = layout(elements)
        if emb is None:
            emb = RNG.standard_normal((len(elements), CFG.width))
        return predict_hamiltonian(constant(emb), lay, head.head(head.leaves(None))), lay, emb

    def test_bit_exact_symmetry(self, head):
        for elements in (("C", "H", "H", "O", "H"), ("H",), ("S", "P", "C")):
            h, _, _ = self._predict(head, elements)
            assert np.array_equal(h.data, h.data.T)

    def test_zero_embeddings_zero_bias_head_gives_zero(self, head):
        lv = head.leaves(None)
        params = head.head(lv)
        for b in (params.diag.b1, params.diag.b2, params.pair.b1, params.pair.b2):
            b.data[:] = 0.0
        lay = layout(("C", "O", "H"))
        h = predict_hamiltonian(constant(np.zeros((3, CFG.width))), lay, params)
        assert np.all(h.data == 0.0)

    def test_matches_straight_line_recomputation(self, head):
        elements = ("C", "O", "H")
        h, lay, emb = self._predict(head, elements)
        params = head.head(head.leaves(None))

        def diag_vals(x):
            return (np.tanh(x @ params.diag.w1.data + params.diag.b1.data)
                    @ params.diag.w2.data + params.diag.b2.data)

        def pair_vals(a, b):
            hid = np.tanh((a + b) @ params.pair.w_sum.data
                          + np.abs(a - b) @ params.pair.w_gap.data + params.pair.b1.data)
            return hid @ params.pair.w2.data + params.pair.b2.data

        expect = np.zeros((lay.n_orb, lay.n_orb))
        cols = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}
        for a, (off, cnt) in enumerate(zip(lay.offsets, lay.counts)):
            vals = diag_vals(emb[a:a + 1])[0]
            for oi in range(cnt):
                for oj in range(cnt):
                    expect[off + oi, off + oj] = vals[cols[(oi, oj)]]
        for i in range(lay.n_atoms):
            for j in range(i + 1, lay.n_atoms):
                vals = pair_vals(emb[i:i + 1], emb[j:j + 1])[0]
                for oi in range(lay.counts[i]):
                    for oj in range(lay.counts[j]):
                        expect[lay.offsets[i] + oi, lay.offsets[j] + oj] = vals[cols[(oi, oj)]]
                        expect[lay.offsets[j] + oj, lay.offsets[i] + oi] = vals[cols[(oi, oj)]]
        assert np.max(np.abs(h.data - expect)) < 1e-12

    def test_relabeling_permutes_blocks(self, head):
        elements = ["C", "O", "H", "N", "H"]
        emb = RNG.standard_normal((5, CFG.width))
        h, lay, _ = self._predict(head, tuple(elements), emb)
        rng = np.random.default_rng(6)
        for _ in range(5):
            perm = rng.permutation(5)
            h2, lay2, _ = self._predict(head, tuple(elements[i] for i in perm), emb[perm])
            # orbital permutation induced by the atom relabeling
            orb_perm = np.concatenate(
                [np.arange(lay.offsets[a], lay.offsets[a] + lay.counts[a]) for a in perm])
            assert np.max(np.abs(h2.data - h.data[np.ix_(orb_perm, orb_perm)])) < 1e-12

    def test_embedding_count_checked(self, head):
        lay = layout(("C", "O"))
        with pytest.raises(ShapeMismatch):
            predict_hamiltonian(constant(np.zeros((3, CFG.width))), lay,
                                head.head(head.leaves(None)))


class TestFusion:
    def test_additive_identities(self):
        t = constant(RNG.standard_normal((4, 6)))
        zero = constant(np.zeros((4, 6)))
        assert np.array_equal(fuse_modalities(t, zero).data, t.data)
        assert np.array_equal(fuse_modalities(zero, t).data, t.data)

    def test_elementwise_sum(self):
        a = RNG.standard_normal((3, 5))
        b = RNG.standard_normal((3, 5))
        assert np.array_equal(fuse_modalities(constant(a), constant(b)).data, a + b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            fuse_modalities(constant(np.zeros((2, 3))), constant(np.zeros((3, 2))))


class TestFinetuneLoss:
    def test_zero_when_exact(self):
        h = constant(RNG.standard_normal((4, 4)))
        assert finetune_loss(h, constant(h.data.copy()), constant(h.data.copy()), 0.5).item() == 0.0

    def test_lambda_one_ignores_masked_branch(self):
        target = constant(RNG.standard_normal((3, 3)))
        full = constant(RNG.standard_normal((3, 3)))
        m1 = constant(RNG.standard_normal((3, 3)))
        m2 = constant(RNG.standard_normal((3, 3)))
        assert finetune_loss(target, full, m1, 1.0).item() == \
               finetune_loss(target, full, m2, 1.0).item()

    def test_matches_hand_sum(self):
        target = RNG.standard_normal((3, 3))
        full = RNG.standard_normal((3, 3))
        masked = RNG.standard_normal((3, 3))
        lam = 0.8

        def term(pred):
            d = pred - target
            return (np.abs(d) + d * d).sum() / target.size

        expect = lam * term(full) + (1 - lam) * term(masked)
        got = finetune_loss(constant(target), constant(full), constant(masked), lam)
        assert got.item() == pytest.approx(expect, abs=1e-14)

    def test_nonnegative_and_zero_only_at_target(self):
        target = constant(RNG.standard_normal((3, 3)))
        for _ in range(10):
            full = constant(target.data + RNG.standard_normal((3, 3)) * 0.1)
            val = finetune_loss(target, full, constant(target.data.copy()), 0.5).item()
            assert val > 0.0

    def test_lambda_validated(self):
        z = constant(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            finetune_loss(z, z, z, 1.5)

    def test_gradient_through_head_and_loss(self, head):
        elements = ("C", "O", "H")
        lay = layout(elements)
        emb_full = RNG.standard_normal((3, CFG.width))
        emb_mask = RNG.standard_normal((3, CFG.width))
        target = constant(RNG.standard_normal((lay.n_orb, lay.n_orb)) * 0.4)
        for name in head.params:
            if not name.startswith("head."):
                continue

            def f(x, name=name):
                lv = head.leaves(None)
                lv[name] = x
                params = head.head(lv)
                h_full = predict_hamiltonian(constant(emb_full), lay, params)
                h_mask = predict_hamiltonian(constant(emb_mask), lay, params)
                return finetune_loss(target, h_full, h_mask, 0.8)

            assert grad_check(f, head.params[name], eps=1e-5) < 1e-4, name


class TestSerialization:
    def test_round_trip(self, tmp_path, head):
        elements = ("C", "O", "H")
        lay = layout(elements)
        h = predict_hamiltonian(constant(RNG.standard_normal((3, CFG.width))), lay,
                                head.head(head.leaves(None))).data
        path = tmp_path / "h.bin"
        save_hamiltonian(path, h, lay)
        back, lay2 = load_hamiltonian(path)
        assert np.array_equal(back, h)
        assert lay2 == lay

    def test_upper_triangle_round_trip_sizes(self):
        h = RNG.standard_normal((5, 5))
        h = 0.5 * (h + h.T)
        assert upper_triangle(h).size == 15

    def test_truncated_file_rejected(self, tmp_path, head):
        lay = layout(("O", "H", "H"))
        h = np.eye(lay.n_orb)
        path = tmp_path / "h.bin"
        save_hamiltonian(path, h, lay)
        raw = path.read_bytes()
        path.write_bytes(raw[:-9])
        with pytest.raises(CorruptFile):
            load_hamiltonian(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "h.bin"
        path.write_bytes(b"garbage file content")
        with pytest.raises(CorruptFile):
            load_hamiltonian(path)

"""Token and geometry encoders: shapes, determinism, and invariances."""

from __future__ import annotations

import numpy as np
import pytest

from molham.encoders import (
    VOCAB,
    cutoff_envelope,
    encode_geometry,
    encode_tokens,
    radial_basis,
    token_vocab_id,
)
from molham.errors import NonFiniteCoordinate, UnknownTokenKind
from molham.model import Model, ModelConfig
from molham.oracle import embed_3d
from molham.smiles import Token, expand_hydrogens, fragment, mask_tokens, parse_smiles, tokenize

RNG = np.random.default_rng(55)
CFG = ModelConfig(width=8, token_layers=2, geom_rounds=2, n_rbf=5, n_shear=2, head_hidden=6)


@pytest.fixture()
def model():
    return Model.init(CFG, seed=9)


def _token_params(model, layers=None):
    lv = model.leaves(None)
    params = model.token_encoder(lv)
    if layers is not None:
        params.blocks = params.blocks[:layers]
    return params


def _encode(model, smiles, layers=None, masked_keep=None):
    tokens = tokenize(smiles)
    mol = parse_smiles(smiles)
    xmol = expand_hydrogens(mol)
    if masked_keep is not None:
        tokens = mask_tokens(tokens, fragment(mol), masked_keep)
    params = _token_params(model, layers)
    return encode_tokens(tokens, list(xmol.token_sets), list(xmol.elements), params), xmol


class TestVocabulary:
    def test_every_token_kind_covered(self):
        for text, kind in [("C", "atom"), ("Cl", "atom"), ("c", "atom"),
                           ("[NH3+]", "bracket"), ("=", "bond"), ("3", "ring"),
                           ("%12", "ring"), ("(", "open"), (")", "close")]:
            assert 0 <= token_vocab_id(Token(kind, text, 0)) < len(VOCAB)

    def test_mask_token_has_entry(self):
        assert token_vocab_id(Token("mask", "[MASK]", 0)) == 0

    def test_unknown_kind_rejected(self):
        with pytest.raises(UnknownTokenKind):
            token_vocab_id(Token("weird", "?", 0))


class TestTokenEncoder:
    def test_single_atom_shape(self, model):
        emb, _ = _encode(model, "C")
        assert emb.shape == (5, CFG.width)  # C plus four fill hydrogens

    def test_rows_per_expanded_atom(self, model):
        emb, xmol = _encode(model, "CCO")
        assert emb.shape == (xmol.n_atoms, CFG.width)

    def test_deterministic(self, model):
        a, _ = _encode(model, "CCOCC")
        b, _ = _encode(model, "CCOCC")
        assert np.array_equal(a.data, b.data)

    def test_masking_keeps_shape(self, model):
        full, _ = _encode(model, "CCOCC")
        masked, _ = _encode(model, "CCOCC", masked_keep=[1, 0])
        assert masked.shape == full.shape
        assert not np.array_equal(masked.data, full.data)

    def test_fully_masked_input_keeps_shape(self, model):
        full, xmol = _encode(model, "CCOCC")
        masked, _ = _encode(model, "CCOCC", masked_keep=[0, 0])
        assert masked.shape == (xmol.n_atoms, CFG.width) == full.shape
        assert np.isfinite(masked.data).all()

    def test_zero_layer_ablation_localizes_masking(self, model):
        # with no attention mixing, only rows of masked atoms may change
        full, xmol = _encode(model, "CCOCC", layers=0)
        masked, _ = _encode(model, "CCOCC", layers=0, masked_keep=[1, 0])
        mol = parse_smiles("CCOCC")
        masked_atoms = set(fragment(mol)[1].atoms)
        for row in range(xmol.n_atoms):
            parent = xmol.parent[row]
            if parent in masked_atoms:
                assert not np.array_equal(masked.data[row], full.data[row])
            else:
                assert np.array_equal(masked.data[row], full.data[row])

    def test_attention_mixes_masked_information(self, model):
        full, xmol = _encode(model, "CCOCC")
        masked, _ = _encode(model, "CCOCC", masked_keep=[1, 0])
        kept = [r for r in range(xmol.n_atoms) if xmol.parent[r] in (0, 1)]
        assert any(not np.array_equal(masked.data[r], full.data[r]) for r in kept)

    def test_hydrogen_rows_differ_from_parent(self, model):
        emb, xmol = _encode(model, "CO")
        assert not np.array_equal(emb.data[0], emb.data[2])  # C vs its H


class TestGeometryEncoder:
    def _geom(self, model, elements, coords):
        return encode_geometry(elements, coords, model.geom_encoder(model.leaves(None)))

    def test_shape(self, model):
        coords = RNG.standard_normal((4, 3))
        emb = self._geom(model, ["C", "H", "O", "H"], coords)
        assert emb.shape == (4, CFG.width)

    def test_rigid_motion_invariance(self, model):
        xmol = expand_hydrogens(parse_smiles("CCO"))
        coords = embed_3d(xmol, 2)
        base = self._geom(model, list(xmol.elements), coords).data
        rng = np.random.default_rng(4)
        for _ in range(100):
            q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
            if np.linalg.det(q) < 0:
                q[:, 0] = -q[:, 0]
            moved = coords @ q.T + rng.standard_normal(3)
            out = self._geom(model, list(xmol.elements), moved).data
            assert np.max(np.abs(out - base)) < 1e-10

    def test_beyond_cutoff_matches_isolated_atoms(self, model):
        far = np.array([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]])
        pair = self._geom(model, ["C", "O"], far).data
        solo_c = self._geom(model, ["C"], np.zeros((1, 3))).data
        solo_o = self._geom(model, ["O"], np.zeros((1, 3))).data
        assert np.allclose(pair[0], solo_c[0], atol=1e-14)
        assert np.allclose(pair[1], solo_o[0], atol=1e-14)

    def test_permutation_equivariance(self, model):
        elements = ["C", "O", "H", "H", "N"]
        coords = RNG.standard_normal((5, 3)) * 1.5
        base = self._geom(model, elements, coords).data
        perm = np.array([3, 0, 4, 1, 2])
        permuted = self._geom(model, [elements[i] for i in perm], coords[perm]).data
        assert np.max(np.abs(permuted - base[perm])) < 1e-12

    def test_matches_straight_line_recomputation(self, model):
        xmol = expand_hydrogens(parse_smiles("O"))
        coords = embed_3d(xmol, 3)
        got = self._geom(model, list(xmol.elements), coords).data

        lv = model.leaves(None)
        params = model.geom_encoder(lv)
        n = xmol.n_atoms
        dist = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
        from molham.encoders import element_id
        h = np.vstack([params.elem_embed.data[element_id(e)] for e in xmol.elements])
        for rnd in params.rounds:
            filt = np.tanh(radial_basis(dist.reshape(-1), params.cutoff, params.n_rbf)
                           @ rnd["wf1"].data + rnd["bf1"].data) @ rnd["wf2"].data + rnd["bf2"].data
            filt = filt.reshape(n, n, -1)
            gate = cutoff_envelope(dist, params.cutoff)
            np.fill_diagonal(gate, 0.0)
            g = h @ rnd["wmsg"].data + rnd["bmsg"].data
            msg = np.zeros_like(h)
            for i in range(n):
                for j in range(n):
                    msg[i] += gate[i, j] * filt[i, j] * g[j]
            h = np.tanh(h @ rnd["wupd"].data + rnd["bupd"].data + msg)
        assert np.max(np.abs(got - h)) < 1e-12

    def test_nonfinite_rejected(self, model):
        with pytest.raises(NonFiniteCoordinate):
            self._geom(model, ["C"], np.array([[np.inf, 0.0, 0.0]]))
        with pytest.raises(NonFiniteCoordinate):
            self._geom(model, ["C", "O"], np.zeros((1, 3)))


class TestTokenEquivariance:
    def test_token_rows_permute_with_atom_order(self, model):
        # same tokens, same molecule, but atom bookkeeping reordered
        tokens = tokenize("CCO")
        xmol = expand_hydrogens(parse_smiles("CCO"))
        params = _token_params(model)
        base = encode_tokens(tokens, list(xmol.token_sets), list(xmol.elements), params).data
        perm = list(reversed(range(xmol.n_atoms)))
        permuted = encode_tokens(tokens, [xmol.token_sets[i] for i in perm],
                                 [xmol.elements[i] for i in perm], params).data
        assert np.max(np.abs(permuted - base[perm])) < 1e-12

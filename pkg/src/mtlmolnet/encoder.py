"""Directed-edge message passing encoder producing molecular fingerprints.

Hidden states live on directed bonds. Each edge (v->w) is initialised from
the source atom and bond features; at every step it aggregates the states
of edges pointing into v, excluding its own reverse edge (w->v), so
information never bounces straight back. A final atom readout pools
incoming edge states and a mean over atoms yields the fingerprint.

``encode_batch`` runs the same recurrence over the disjoint union of many
molecule graphs at once; per-molecule results are identical to running
them one at a time because no edges cross molecules.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor


class EmptyMolecule(ValueError):
    pass


@dataclass
class EncoderParams:
    """Message passing weights; no bias terms.

    w_in: [(F_a + F_b) x H], w_msg: [H x H], w_out: [(F_a + H) x H].
    """

    w_in: Tensor
    w_msg: Tensor
    w_out: Tensor
    depth: int = 3
    hidden: int = 300

    def tensors(self):
        return [("encoder.w_in", self.w_in), ("encoder.w_msg", self.w_msg),
                ("encoder.w_out", self.w_out)]


@dataclass
class Fingerprint:
    z: np.ndarray


def init_encoder_params(atom_dim, bond_dim, hidden, depth, rng):
    def xavier(n_in, n_out):
        limit = np.sqrt(6.0 / (n_in + n_out))
        return Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)),
                      requires_grad=True)

    return EncoderParams(
        w_in=xavier(atom_dim + bond_dim, hidden),
        w_msg=xavier(hidden, hidden),
        w_out=xavier(atom_dim + hidden, hidden),
        depth=depth,
        hidden=hidden,
    )


def encode_batch(graphs, params, dropout=0.0, rng=None):
    """Encode a list of featurized MolGraphs into a [B x H] Tensor."""
    if not graphs:
        raise EmptyMolecule("empty graph batch")
    for g in graphs:
        if g.n_atoms == 0:
            raise EmptyMolecule("graph has no atoms")
        if g.atom_features is None or g.bond_features is None:
            raise ShapeMismatch("graph is not featurized")

    if params.w_in.data.shape[1] != params.hidden:
        raise ShapeMismatch("w_in width does not match hidden size")
    if params.w_msg.data.shape != (params.hidden, params.hidden):
        raise ShapeMismatch("w_msg must be square [H x H]")

    atom_feats = np.concatenate([g.atom_features for g in graphs], axis=0)
    n_atoms_total = atom_feats.shape[0]
    fa = atom_feats.shape[1]
    fb = params.w_in.data.shape[0] - fa
    if fb < 0 or any(g.n_bonds and g.bond_features.shape[1] != fb for g in graphs):
        raise ShapeMismatch(
            f"w_in expects {params.w_in.data.shape[0]} input dims (atom {fa} + bond {fb})"
        )
    if params.w_out.data.shape[0] != fa + params.hidden:
        raise ShapeMismatch("w_out input dim must be F_a + H")

    src_parts, dst_parts, rev_parts, efeat_parts = [], [], [], []
    mol_of_atom = np.zeros(n_atoms_total, dtype=np.int64)
    atom_off = 0
    edge_off = 0
    for mol_idx, g in enumerate(graphs):
        mol_of_atom[atom_off : atom_off + g.n_atoms] = mol_idx
        if g.n_bonds:
            e = g.directed_edges
            src_parts.append(e[:, 0] + atom_off)
            dst_parts.append(e[:, 1] + atom_off)
            rev_parts.append(e[:, 3] + edge_off)
            efeat_parts.append(g.bond_features[e[:, 2]])
            edge_off += len(e)
        atom_off += g.n_atoms

    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        rev = np.concatenate(rev_parts)
        edge_feats = np.concatenate(efeat_parts, axis=0)
    else:
        src = dst = rev = np.zeros(0, dtype=np.int64)
        edge_feats = np.zeros((0, fb))

    # edge inputs [x_v || e_vw] are constants; keep them off the tape
    edge_in = Tensor(np.concatenate([atom_feats[src], edge_feats], axis=1))
    h0 = ad.relu(ad.matmul(edge_in, params.w_in))
    h = h0
    for _ in range(params.depth - 1):
        incoming = ad.scatter_add(h, dst, n_atoms_total)
        msg = ad.sub(ad.index_select(incoming, src), ad.index_select(h, rev))
        h = ad.relu(ad.add(h0, ad.matmul(msg, params.w_msg)))
        h = _maybe_dropout(h, dropout, rng)

    pooled_edges = ad.scatter_add(h, dst, n_atoms_total)
    readout_in = ad.concat([Tensor(atom_feats), pooled_edges], axis=1)
    atom_h = ad.relu(ad.matmul(readout_in, params.w_out))
    atom_h = _maybe_dropout(atom_h, dropout, rng)

    mol_sum = ad.scatter_add(atom_h, mol_of_atom, len(graphs))
    counts = np.array([[1.0 / g.n_atoms] for g in graphs])
    return ad.mul(mol_sum, Tensor(counts))


def _maybe_dropout(x, p, rng):
    if p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout requires an rng")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, Tensor(mask))


def encode(g, params):
    """Encode one featurized MolGraph into a Fingerprint (vector of length H)."""
    z = encode_batch([g], params)
    return Fingerprint(z=z.data[0].copy())


def count_parameters(cfg, n_tasks):
    """Exact count of learnable scalars for a model configuration."""
    enc = ((cfg.atom_dim + cfg.bond_dim) * cfg.hidden
           + cfg.hidden * cfg.hidden
           + (cfg.atom_dim + cfg.hidden) * cfg.hidden)
    head = cfg.fused_dim * cfg.ffn_hidden + cfg.ffn_hidden + cfg.ffn_hidden + 1
    weighting = n_tasks if cfg.learnable_beta else 0
    return enc + n_tasks * head + weighting

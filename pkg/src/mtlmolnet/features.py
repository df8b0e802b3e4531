"""External descriptor block: physicochemical + quantum descriptors + mask.

Each molecule carries a 208-dim descriptor block: 200 physicochemical
slots (a built-in 16-descriptor set zero-padded, or a full externally
computed vector), 4 quantum-chemical values (dipole moment norm, HOMO-LUMO
gap, electron count, total electronic energy) and a 4-bit availability
mask. Quantum values frequently fail to compute upstream, so missing
entries are masked and zero-filled rather than dropping molecules.

Standardization is a per-dimension z-score with training-split statistics
(population std); masked quantum entries are excluded from the statistics
and stay exactly zero. The mask channels are never standardized.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

PHYS_DIM = 200
QC_DIM = 4
QC_COLUMNS = ("qc_dipole", "qc_gap", "qc_nelec", "qc_energy")

BUILTIN_DESCRIPTOR_NAMES = (
    "mol_weight",
    "heavy_atoms",
    "ring_bonds",
    "aromatic_atoms",
    "rotatable_bonds",
    "hbond_donors",
    "hbond_acceptors",
    "formal_charge_sum",
    "halogens",
    "heteroatoms",
    "max_degree",
    "mean_degree",
    "fraction_aromatic",
    "bonds",
    "components",
    "logp_surrogate",
)

# standard atomic masses; implicit hydrogens contribute 1.008 each
ATOMIC_MASS = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "Br": 79.904, "Se": 78.971, "I": 126.904,
}

_HALOGENS = {"F", "Cl", "Br", "I"}


class FeatureFileError(ValueError):
    pass


class MalformedRow(FeatureFileError):
    pass


class WrongColumnCount(FeatureFileError):
    pass


class MissingMolecule(FeatureFileError):
    pass


class DuplicateSmiles(UserWarning):
    """Warning: a descriptor file lists the same SMILES twice (first wins)."""


@dataclass
class FeatureBlock:
    phys: np.ndarray  # [200]
    qc: np.ndarray  # [4]
    qc_mask: np.ndarray  # [4] of {0, 1}


@dataclass
class FeatureStats:
    phys_mean: np.ndarray
    phys_std: np.ndarray
    qc_mean: np.ndarray
    qc_std: np.ndarray


def compute_phys_descriptors(g):
    """Built-in 16-descriptor vector for a parsed graph, in the order of
    BUILTIN_DESCRIPTOR_NAMES.

    rotatable bond: single, not in a ring, both endpoints bonded to at
    least two atoms. donors: N/O carrying at least one hydrogen;
    acceptors: every N/O. The logP surrogate is the declared linear rule
    0.2 * n_carbon - 0.4 * (n_nitrogen + n_oxygen), not a fitted model.
    """
    atoms = g.atoms
    bonds = g.bonds

    weight = 0.0
    for a in atoms:
        weight += ATOMIC_MASS.get(a.element, 0.0)
        weight += a.explicit_h * ATOMIC_MASS["H"]

    heavy = sum(1 for a in atoms if a.element != "H")
    ring_bonds = sum(1 for b in bonds if b.in_ring)
    aromatic_atoms = sum(1 for a in atoms if a.aromatic)
    rotatable = sum(
        1 for b in bonds
        if b.order == "single" and not b.in_ring
        and atoms[b.a].degree >= 2 and atoms[b.b].degree >= 2
    )
    donors = sum(1 for a in atoms if a.element in ("N", "O") and a.explicit_h >= 1)
    acceptors = sum(1 for a in atoms if a.element in ("N", "O"))
    charge_sum = sum(a.formal_charge for a in atoms)
    halogens = sum(1 for a in atoms if a.element in _HALOGENS)
    hetero = sum(1 for a in atoms if a.element not in ("C", "H"))
    degrees = [a.degree for a in atoms]
    n_carbon = sum(1 for a in atoms if a.element == "C")

    n_components = _component_count(len(atoms), bonds)

    return np.array([
        weight,
        float(heavy),
        float(ring_bonds),
        float(aromatic_atoms),
        float(rotatable),
        float(donors),
        float(acceptors),
        float(charge_sum),
        float(halogens),
        float(hetero),
        float(max(degrees)),
        float(np.mean(degrees)),
        aromatic_atoms / len(atoms),
        float(len(bonds)),
        float(n_components),
        0.2 * n_carbon - 0.4 * (acceptors),
    ])


def _component_count(n_atoms, bonds):
    parent = list(range(n_atoms))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for b in bonds:
        ra, rb = find(b.a), find(b.b)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n_atoms)})


def builtin_phys_block(g):
    """Built-in descriptors zero-padded to the full 200-dim layout."""
    vec = np.zeros(PHYS_DIM)
    vec[: len(BUILTIN_DESCRIPTOR_NAMES)] = compute_phys_descriptors(g)
    return vec


def _read_csv_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise MalformedRow(f"{path}: empty file")
    return rows[0], rows[1:]


def load_qc_descriptors(path, molecules):
    """Load quantum descriptors for the given SMILES list.

    Returns (qc [N x 4], qc_mask [N x 4]). Molecules absent from the file,
    and empty cells, get mask 0 and value 0; no molecule is ever dropped.
    """
    header, rows = _read_csv_rows(path)
    expected = ["smiles", *QC_COLUMNS]
    if header != expected:
        raise MalformedRow(f"{path}: header must be {','.join(expected)}")

    table = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 5:
            raise MalformedRow(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
        smi = row[0]
        vals = np.zeros(QC_DIM)
        mask = np.zeros(QC_DIM)
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                vals[j] = float(cell)
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: bad number {cell!r}") from None
            mask[j] = 1.0
        if smi in table:
            warnings.warn(f"{path}:{lineno}: duplicate SMILES {smi!r}, first occurrence wins",
                          DuplicateSmiles)
            continue
        table[smi] = (vals, mask)

    qc = np.zeros((len(molecules), QC_DIM))
    qc_mask = np.zeros((len(molecules), QC_DIM))
    for i, smi in enumerate(molecules):
        if smi in table:
            qc[i], qc_mask[i] = table[smi]
    return qc, qc_mask


def load_external_phys(path, molecules):
    """Load a full 200-dim physicochemical vector per molecule.

    Unlike the quantum block there is no mask channel, so every requested
    molecule must be present: absence is a hard MissingMolecule error.
    """
    header, rows = _read_csv_rows(path)
    if len(header) != PHYS_DIM + 1 or header[0] != "smiles":
        raise WrongColumnCount(
            f"{path}: expected header smiles,d0..d{PHYS_DIM - 1} "
            f"({PHYS_DIM + 1} columns), got {len(header)}"
        )
    table = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != PHYS_DIM + 1:
            raise WrongColumnCount(f"{path}:{lineno}: expected {PHYS_DIM + 1} fields")
        smi = row[0]
        if smi in table:
            warnings.warn(f"{path}:{lineno}: duplicate SMILES {smi!r}, first occurrence wins",
                          DuplicateSmiles)
            continue
        try:
            table[smi] = np.array([float(c) for c in row[1:]])
        except ValueError:
            raise MalformedRow(f"{path}:{lineno}: non-numeric descriptor") from None

    out = np.zeros((len(molecules), PHYS_DIM))
    for i, smi in enumerate(molecules):
        if smi not in table:
            raise MissingMolecule(f"{path}: no descriptor row for {smi!r}")
        out[i] = table[smi]
    return out


def write_external_phys(path, molecules, matrix):
    """Inverse of load_external_phys; values round-trip via repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["smiles"] + [f"d{i}" for i in range(PHYS_DIM)])
        for smi, row in zip(molecules, matrix):
            writer.writerow([smi] + [repr(float(v)) for v in row])


def fit_stats(blocks, indices=None):
    """Per-dimension mean/std over the training blocks (population std).

    Quantum dimensions use only unmasked entries; a dimension with no
    observations, or ~zero spread, gets (mean 0, std 1) so standardization
    passes it through untouched.
    """
    idx = range(len(blocks)) if indices is None else indices
    phys = np.stack([blocks[i].phys for i in idx])
    qc = np.stack([blocks[i].qc for i in idx])
    mask = np.stack([blocks[i].qc_mask for i in idx])

    phys_mean = phys.mean(axis=0)
    phys_std = phys.std(axis=0)
    low = phys_std < 1e-12
    phys_mean[low] = 0.0
    phys_std[low] = 1.0

    qc_mean = np.zeros(QC_DIM)
    qc_std = np.ones(QC_DIM)
    for j in range(QC_DIM):
        seen = qc[mask[:, j] == 1.0, j]
        if seen.size:
            m, s = seen.mean(), seen.std()
            if s >= 1e-12:
                qc_mean[j] = m
                qc_std[j] = s
    return FeatureStats(phys_mean, phys_std, qc_mean, qc_std)


def standardize(blocks, stats):
    """Z-score feature blocks with precomputed stats; masked qc stays 0."""
    out = []
    for b in blocks:
        phys = (b.phys - stats.phys_mean) / stats.phys_std
        qc = np.where(b.qc_mask == 1.0, (b.qc - stats.qc_mean) / stats.qc_std, 0.0)
        out.append(FeatureBlock(phys=phys, qc=qc, qc_mask=b.qc_mask.copy()))
    return out


def fuse(z, block, use_qc=True):
    """Concatenate fingerprint and descriptor block into the head input.

    Layout: [z | phys | qc | qc_mask] (508 dims with H=300), or
    [z | phys] (500) when the quantum block is ablated.
    """
    z = z.z if hasattr(z, "z") else np.asarray(z)
    parts = [z, block.phys]
    if use_qc:
        parts += [block.qc, block.qc_mask]
    return np.concatenate(parts)


def feature_matrix(blocks, use_qc=True):
    """Stack the descriptor parts of ``fuse`` for a whole batch."""
    if use_qc:
        return np.stack([
            np.concatenate([b.phys, b.qc, b.qc_mask]) for b in blocks
        ])
    return np.stack([b.phys for b in blocks])

"""Training configuration and model variant layouts.

Variants toggle two independent pieces: whether the quantum-descriptor
block (4 values + 4-bit mask) is fused into the representation, and
whether task-loss weights use the learnable sample-scale exponent or stay
uniform.
"""

from dataclasses import dataclass, asdict

from . import smiles
from .features import PHYS_DIM, QC_DIM

VARIANTS = ("multi-rdkit", "multi-rdkit-qc", "multi-rdkit-beta", "qw-mtl")


def variant_uses_qc(variant):
    return variant in ("multi-rdkit-qc", "qw-mtl")


def variant_learnable_beta(variant):
    return variant in ("multi-rdkit-beta", "qw-mtl")


def fused_dim(hidden, use_qc):
    """Length of the head input: fingerprint + descriptors (+ qc + mask)."""
    return hidden + PHYS_DIM + (2 * QC_DIM if use_qc else 0)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 50
    lr: float = 1e-3
    seed: int = 0
    variant: str = "qw-mtl"
    hidden: int = 300
    depth: int = 3
    ffn_hidden: int = 300
    beta_min: float = 0.1
    beta_max: float = 6.0
    uniform_weighting: bool = False
    renormalize_weights: bool = False
    dropout: float = 0.0
    atom_dim: int = smiles.ATOM_FEATURE_DIM
    bond_dim: int = smiles.BOND_FEATURE_DIM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def use_qc(self):
        return variant_uses_qc(self.variant)

    @property
    def learnable_beta(self):
        return variant_learnable_beta(self.variant) and not self.uniform_weighting

    @property
    def fused_dim(self):
        return fused_dim(self.hidden, self.use_qc)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

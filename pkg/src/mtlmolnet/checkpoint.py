"""Flat binary checkpoint format.

Layout: an ASCII header line ``MTLMOLNET-CKPT-1``, one JSON manifest line
(metadata plus a tensor directory of name/shape/byte-offset entries), then
a single blob of little-endian float64 data. Feature-standardization
statistics ride along as ordinary tensors under reserved ``stats.*``
names so prediction can reproduce training-time preprocessing.
"""

import json

import numpy as np

from . import encoder as enc
from . import features as feat
from .autodiff import Tensor
from .config import TrainConfig
from .model import CheckpointMismatch, HeadParams, ModelParams, WeightingState

MAGIC = "MTLMOLNET-CKPT-1"

_STATS_NAMES = ("stats.phys_mean", "stats.phys_std", "stats.qc_mean", "stats.qc_std")


def save_checkpoint(path, params, cfg, stats, task_specs):
    tensors = [(name, t.data) for name, t in params.named_tensors()]
    tensors += [
        ("stats.phys_mean", stats.phys_mean),
        ("stats.phys_std", stats.phys_std),
        ("stats.qc_mean", stats.qc_mean),
        ("stats.qc_std", stats.qc_std),
    ]
    directory = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = {
        "config": cfg.to_dict(),
        "tasks": [
            {"name": s.name, "metric": s.metric, "label_column": s.label_column,
             "split_column": s.split_column}
            for s in task_specs
        ],
        "tensors": directory,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC.encode() + b"\n")
        fh.write(json.dumps(manifest).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Returns (params, cfg, stats, task_specs)."""
    from .data import TaskSpec

    with open(path, "rb") as fh:
        header = fh.readline().rstrip(b"\n")
        if header.decode(errors="replace") != MAGIC:
            raise CheckpointMismatch(f"{path}: bad header {header!r}, expected {MAGIC}")
        manifest = json.loads(fh.readline())
        blob = fh.read()

    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        try:
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        except ValueError:
            raise CheckpointMismatch(
                f"{path}: truncated tensor {entry['name']}"
            ) from None
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)

    cfg = TrainConfig.from_dict(manifest["config"])
    task_specs = [TaskSpec(**t) for t in manifest["tasks"]]
    n_tasks = len(task_specs)

    def take(name, shape, requires_grad=True):
        if name not in arrays:
            raise CheckpointMismatch(f"{path}: missing tensor {name}")
        arr = arrays[name]
        if arr.shape != shape:
            raise CheckpointMismatch(
                f"{path}: tensor {name} has shape {arr.shape}, expected {shape}"
            )
        return Tensor(arr, requires_grad=requires_grad)

    fa, fb, h = cfg.atom_dim, cfg.bond_dim, cfg.hidden
    encoder = enc.EncoderParams(
        w_in=take("encoder.w_in", (fa + fb, h)),
        w_msg=take("encoder.w_msg", (h, h)),
        w_out=take("encoder.w_out", (fa + h, h)),
        depth=cfg.depth,
        hidden=h,
    )
    heads = []
    for t in range(n_tasks):
        heads.append(HeadParams(
            w1=take(f"head{t}.w1", (cfg.fused_dim, cfg.ffn_hidden)),
            b1=take(f"head{t}.b1", (cfg.ffn_hidden,)),
            w2=take(f"head{t}.w2", (cfg.ffn_hidden, 1)),
            b2=take(f"head{t}.b2", (1,)),
        ))
    weighting = WeightingState(
        n_tasks, beta_min=cfg.beta_min, beta_max=cfg.beta_max,
        uniform=not cfg.learnable_beta, renormalize=cfg.renormalize_weights,
    )
    weighting.log_beta = Tensor(arrays.get("log_beta", np.zeros(n_tasks)),
                                requires_grad=cfg.learnable_beta)

    for name in _STATS_NAMES:
        if name not in arrays:
            raise CheckpointMismatch(f"{path}: missing tensor {name}")
    stats = feat.FeatureStats(
        phys_mean=arrays["stats.phys_mean"],
        phys_std=arrays["stats.phys_std"],
        qc_mean=arrays["stats.qc_mean"],
        qc_std=arrays["stats.qc_std"],
    )

    params = ModelParams(encoder=encoder, heads=heads, weighting=weighting)
    return params, cfg, stats, task_specs

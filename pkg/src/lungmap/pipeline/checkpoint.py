"""Model checkpoints as a single f64 vector with a parameter manifest in the header."""
import numpy as np
import torch

from ..errors import CheckpointIncompatible
from .tensorfile import read_tensor, write_tensor


def save_checkpoint(path, model: torch.nn.Module, kind: str, config: dict, extra=None):
    state = model.state_dict()
    entries, chunks, offset = [], [], 0
    for name, t in state.items():
        a = t.detach().cpu().double().numpy().ravel()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset,
                        "dtype": str(t.dtype).replace("torch.", "")})
        chunks.append(a)
        offset += a.size
    vec = np.concatenate(chunks) if chunks else np.zeros(0)
    meta = {"kind": kind, "config": config, "entries": entries, "extra": extra or {}}
    write_tensor(path, vec, meta)


def read_checkpoint(path):
    vec, meta = read_tensor(path)
    if "entries" not in meta:
        raise CheckpointIncompatible(f"checkpoint-incompatible: {path} has no parameter manifest")
    return vec, meta


def load_into(model: torch.nn.Module, vec, meta, kind=None):
    """Copy checkpoint values into ``model``; shape or name mismatches raise."""
    if kind is not None and meta.get("kind") != kind:
        raise CheckpointIncompatible(f"checkpoint-incompatible: expected a {kind} checkpoint, got {meta.get('kind')}")
    state = model.state_dict()
    names = {e["name"] for e in meta["entries"]}
    if names != set(state):
        missing = sorted(set(state) - names)[:3]
        extra = sorted(names - set(state))[:3]
        raise CheckpointIncompatible(f"checkpoint-incompatible: missing {missing}, unexpected {extra}")
    new = {}
    for e in meta["entries"]:
        ref = state[e["name"]]
        if list(ref.shape) != e["shape"]:
            raise CheckpointIncompatible(
                f"checkpoint-incompatible: {e['name']} has shape {e['shape']}, model expects {list(ref.shape)}"
            )
        n = int(np.prod(e["shape"], dtype=np.int64))
        vals = vec[e["offset"]:e["offset"] + n].reshape(e["shape"])
        new[e["name"]] = torch.as_tensor(vals).to(ref.dtype)
    model.load_state_dict(new)
    return model

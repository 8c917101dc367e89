"""SRANet: patch-attention 3D classifier with structure regularization.

Configs are plain dicts with optional "train", "phantom" and "mask"
sections; see default_config() for every key.
"""

import json

from . import _core
from ._core import CheckpointError, TrainingError, normalize_scores, normalize_volume

__all__ = [
    "CheckpointError",
    "TrainingError",
    "default_config",
    "evaluate",
    "evaluate_scores",
    "gen_dataset",
    "gen_phantom",
    "infer",
    "make_mask",
    "normalize_scores",
    "normalize_volume",
    "train",
]


def _dump(config):
    return json.dumps(config or {})


def default_config():
    return json.loads(_core.default_config())


def make_mask(volume, config=None):
    return _core.make_mask(volume, _dump(config))


def gen_phantom(positive, seed, config=None, randomize=True):
    """Returns {"volume", "bone", "lesion", "label"}."""
    return _core.gen_phantom(bool(positive), seed, _dump(config), randomize)


def gen_dataset(n, pos_ratio, seed, out_dir, config=None):
    return _core.gen_dataset(n, pos_ratio, seed, str(out_dir), _dump(config))


def evaluate_scores(scores, labels, threshold=0.5):
    return json.loads(_core.evaluate_scores(list(scores), list(labels), threshold))


def train(config, manifest, out_dir):
    """Trains and writes metrics.jsonl, best.ckpt and last.ckpt; returns the epoch logs."""
    return [json.loads(line) for line in _core.train(_dump(config), str(manifest), str(out_dir))]


def evaluate(checkpoint, manifest, split="test"):
    return json.loads(_core.evaluate(str(checkpoint), str(manifest), split))


def infer(checkpoint, volume, mask):
    """Returns {"p", "attention": {"g", "a", "f", "coords"}} in canonical patch order."""
    return _core.infer(str(checkpoint), volume, mask)

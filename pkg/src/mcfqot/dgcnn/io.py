"""Text model files: header, config echo, normalization stats, parameter blocks.

Reals are written with 17 significant digits, so reading a file back gives
bit-identical parameters.
"""

from __future__ import annotations

import ast
from pathlib import Path
from typing import TextIO

import numpy as np

from .model import DgcnnConfig, DgcnnModel

MODEL_TAG = "dgcnn-model v1"


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(values).tolist())


def write_model(model: DgcnnModel, sink: TextIO, fingerprint: str = "") -> None:
    sink.write(f"{MODEL_TAG}\n")
    sink.write(f"n {model.n}\n")
    if fingerprint:
        sink.write(f"fingerprint {fingerprint}\n")
    for key, value in model.config.as_dict().items():
        sink.write(f"config {key} {value!r}\n")
    sink.write(f"norm_min {_fmt(model.norm_min)}\n")
    sink.write(f"norm_max {_fmt(model.norm_max)}\n")
    for name, value in model.params.items():
        shape = " ".join(str(s) for s in value.shape)
        sink.write(f"param {name} {shape}\n{_fmt(value)}\n")


def read_model(source: TextIO | str | Path) -> DgcnnModel:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_model(fh)
    lines = [line.rstrip("\n") for line in source]
    if not lines or lines[0] != MODEL_TAG:
        raise ValueError(f"not a model file (missing '{MODEL_TAG}' header)")
    n = None
    config: dict = {}
    norm_min = norm_max = None
    params: dict[str, np.ndarray] = {}
    it = iter(enumerate(lines[1:], start=2))
    for lineno, line in it:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "n":
                n = int(rest)
            elif key == "fingerprint":
                continue
            elif key == "config":
                name, _, value = rest.partition(" ")
                config[name] = ast.literal_eval(value)
            elif key == "norm_min":
                norm_min = np.array([float(v) for v in rest.split()])
            elif key == "norm_max":
                norm_max = np.array([float(v) for v in rest.split()])
            elif key == "param":
                name, *shape = rest.split()
                _, values = next(it)
                flat = np.array([float(v) for v in values.split()]) if values.strip() else np.zeros(0)
                params[name] = flat.reshape(tuple(int(s) for s in shape))
            else:
                raise ValueError(f"unknown record {key!r}")
        except (ValueError, StopIteration, SyntaxError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if n is None or norm_min is None or norm_max is None:
        raise ValueError("model file is missing n or normalization stats")
    if "conv_channels" in config:
        config["conv_channels"] = tuple(config["conv_channels"])
    cfg = DgcnnConfig(**config)
    expected = cfg.layout(n)
    if set(expected) != set(params) or any(params[k].shape != expected[k] for k in expected):
        raise ValueError("parameter blocks do not match the configured architecture")
    return DgcnnModel(cfg, n, {k: params[k] for k in expected}, norm_min, norm_max)

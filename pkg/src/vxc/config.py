"""Line-based ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key must appear in the
schema of the command being run; values are converted with the schema type.
Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from vxc.codec import CodecConfig
from vxc.exceptions import ConfigurationError
from vxc.joint import JointConfig
from vxc.recon3d import Recon3DConfig
from vxc.trainer import TrainConfig

CONFIG_ECHO = "effective_config.txt"


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    type: Callable[[str], Any]
    default: Any
    help: str


TRAIN_SCHEMA = {
    "data": Key(str, "data", "dataset directory holding manifest.tsv"),
    "epochs": Key(int, 20, "training epochs"),
    "batch_size": Key(int, 6, "minibatch size"),
    "repeats": Key(int, 1, "passes over the training split per epoch"),
    "lr": Key(float, 1e-3, "Adam learning rate"),
    "beta1": Key(float, 0.9, "Adam first-moment decay"),
    "beta2": Key(float, 0.999, "Adam second-moment decay"),
    "eps": Key(float, 1e-8, "Adam epsilon"),
    "clip_norm": Key(float, 5.0, "global gradient-norm clip"),
    "seed": Key(int, 0, "random seed (falls back to $VXC_SEED)"),
    "dtype": Key(str, "float32", "parameter precision: float32 or float64"),
    "image_size": Key(int, 32, "square input image extent"),
    "d_out": Key(int, 32, "output voxel grid extent"),
    "K": Key(int, 64, "view embedding length / implicit code length"),
    "n_hidden": Key(int, 32, "3-D LSTM grid hidden channels"),
    "n_pools": Key(int, 4, "view-encoder pooling stages"),
    "variant": Key(str, "small", "codec variant: small or original"),
    "gamma": Key(int, 0, "codec reconstruction mode: 0 one-shot, 1 additive"),
    "n_iter_max": Key(int, 8, "maximum codec iterations N_max"),
    "v_max": Key(int, 5, "maximum views per training example"),
    "float_code": Key(_bool, False, "skip binarization (float embeddings / codes)"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def resolve(schema: dict, file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults ← file ← overrides, rejecting keys outside ``schema``."""
    out = {k: key.default for k, key in schema.items()}
    for origin, values in (("config file", file_values or {}), ("command line", overrides or {})):
        for k, v in values.items():
            if v is None:
                continue
            if k not in schema:
                raise ConfigurationError(f"unknown {origin} key {k!r}; valid keys: {', '.join(sorted(schema))}")
            try:
                out[k] = schema[k].type(v) if isinstance(v, str) else v
            except ValueError as err:
                raise ConfigurationError(f"bad value for {k!r} in {origin}: {err}") from None
    return out


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def echo_config(out_dir, values: dict) -> Path:
    path = Path(out_dir) / CONFIG_ECHO
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(values), encoding="utf-8")
    return path


def train_config_from(values: dict, kind: str) -> TrainConfig:
    size = values["image_size"]
    shape = dict(K=values["K"], n_hidden=values["n_hidden"], d_out=values["d_out"], height=size, width=size,
                 n_pools=values["n_pools"])
    # desk widths only fit the desk depth; otherwise let the config derive them
    if values["n_pools"] != 4:
        shape["enc_widths"] = None
    if values["d_out"] != 32:
        shape["dec_widths"] = None
    recon = Recon3DConfig.desk(**shape)
    codec = None
    if kind != "implicit":
        codec = CodecConfig(variant=values["variant"], gamma=values["gamma"], n_iter_max=values["n_iter_max"],
                            height=size, width=size)
    joint = JointConfig(kind=kind, recon=recon, codec=codec, k_implicit=values["K"] if kind == "implicit" else None,
                        v_max=values["v_max"], float_code=values["float_code"])
    return TrainConfig(joint=joint, batch_size=values["batch_size"], epochs=values["epochs"], lr=values["lr"],
                       beta1=values["beta1"], beta2=values["beta2"], eps=values["eps"],
                       clip_norm=values["clip_norm"], seed=values["seed"], repeats=values["repeats"],
                       dtype=values["dtype"])

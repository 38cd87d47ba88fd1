"""Run configuration as a flat map of dotted keys, loaded from and saved to JSON."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from ..errors import ConfigError
from ..model import STAGE1_LOSSES, ModelConfig

# key: (default, type, full-scale value or None)
SCHEMA: dict[str, tuple] = {
    "seed": (0, int, None),
    "out_dir": ("runs", str, None),
    "vocab": ("", str, None),
    "model.N": (4, int, 12),
    "model.L": (3, int, 9),
    "model.D": (64, int, 1024),
    "model.heads": (4, int, None),
    "model.ffn_multiplier": (4, int, None),
    "model.num_frames": (4, int, 4),
    "model.image_size": (56, int, 224),
    "model.patch_size": (14, int, 14),
    "model.patch_dim": (32, int, None),
    "model.proj_dim": (32, int, 256),
    "model.lm_dim": (64, int, 1024),
    "model.lm_heads": (4, int, None),
    "model.lm_enc_layers": (2, int, None),
    "model.lm_dec_layers": (2, int, None),
    "model.max_text_len": (32, int, None),
    "model.max_ctx_len": (96, int, None),
    "model.max_answer_len": (16, int, None),
    "model.use_experts": (True, bool, True),
    "model.separate_spatial_temporal": (True, bool, True),
    "optim.base_lr": (1e-4, float, 1e-4),
    "optim.min_lr": (5e-5, float, 5e-5),
    "optim.weight_decay": (0.01, float, 0.01),
    "optim.clip": (1.0, float, 1.0),
    "optim.batch_size": (8, int, 48),
    "optim.warmup_frac": (0.1, float, None),
    "stage1.max_epochs": (10, int, 10),
    "stage2.max_epochs": (3, int, 3),
    "stage3.max_epochs": (12, int, 12),
    "stage1.early_stop": (True, bool, True),
    "stage2.early_stop": (False, bool, None),
    "stage3.early_stop": (False, bool, None),
    "early_stop.patience": (2, int, None),
    "data.stage1.train": ("", str, None),
    "data.stage1.val": ("", str, None),
    "data.stage2.train": ("", str, None),
    "data.stage2.val": ("", str, None),
    "data.stage3.train": ("", str, None),
    "data.stage3.val": ("", str, None),
    "data.domain_a.train": ("", str, None),
    "data.domain_a.val": ("", str, None),
    "data.domain_b.train": ("", str, None),
    "data.domain_b.val": ("", str, None),
    "losses.stc": (True, bool, None),
    "losses.stm": (True, bool, None),
    "losses.vtc": (True, bool, None),
    "losses.vtm": (True, bool, None),
    "losses.mlm": (True, bool, None),
    "losses.aux_in_generation": (False, bool, None),
    "train.skip_stage1": (False, bool, None),
    "train.skip_stage2": (False, bool, None),
}

ABLATIONS = {
    "no-stage1": {"train.skip_stage1": True},
    "no-stage2": {"train.skip_stage2": True},
    "no-stc-stm": {"losses.stc": False, "losses.stm": False},
    "no-separate-st": {"model.separate_spatial_temporal": False, "losses.stc": False, "losses.stm": False},
    "no-experts": {"model.use_experts": False},
}


def _coerce(key: str, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be {kind.__name__}, got {value!r}")
    return value


class RunConfig:
    def __init__(self, values: dict | None = None, base_dir: str | Path = "."):
        self.base_dir = Path(base_dir)
        self.values = {k: v[0] for k, v in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)
        self.validate()

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value, SCHEMA[key][1])

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        v = self.values
        if v["optim.base_lr"] < 0 or v["optim.min_lr"] < 0:
            raise ConfigError("learning rates must be non-negative")
        if v["optim.min_lr"] > v["optim.base_lr"]:
            raise ConfigError(f"min_lr {v['optim.min_lr']} exceeds base_lr {v['optim.base_lr']}")
        for s in (1, 2, 3):
            if v[f"stage{s}.max_epochs"] < 1:
                raise ConfigError(f"stage{s}.max_epochs must be >= 1")
        if v["optim.batch_size"] < 2:
            raise ConfigError("optim.batch_size must be >= 2")
        if not 0 <= v["optim.warmup_frac"] < 1:
            raise ConfigError("optim.warmup_frac must lie in [0, 1)")
        if v["early_stop.patience"] < 1:
            raise ConfigError("early_stop.patience must be >= 1")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such config file") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object of dotted keys")
        return cls(raw, base_dir=path.parent)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def with_ablations(self, names) -> "RunConfig":
        out = self.copy()
        for name in names:
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
            for key, value in ABLATIONS[name].items():
                out.set(key, value)
        out.validate()
        return out

    def copy(self) -> "RunConfig":
        out = RunConfig.__new__(RunConfig)
        out.base_dir = self.base_dir
        out.values = copy.deepcopy(self.values)
        return out

    def hash(self) -> str:
        blob = json.dumps(self.values, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def path(self, key: str) -> Path | None:
        """A path-valued key resolved against the config file's directory; None if unset."""
        value = self.values[key]
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self, vocab_size: int) -> ModelConfig:
        kwargs = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("model.")}
        return ModelConfig(vocab_size=vocab_size, **kwargs)

    def stage1_losses(self) -> tuple[str, ...]:
        return tuple(n for n in STAGE1_LOSSES if self.values[f"losses.{n}"])

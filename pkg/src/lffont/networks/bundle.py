"""ModelBundle: every parameter set plus phase tag, architecture and table fingerprint."""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict
from pathlib import Path

import torch

from .modules import ArchConfig, build_modules

CKPT_FORMAT = "lffont-checkpoint"
CKPT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ModelBundle:
    def __init__(self, cfg: ArchConfig, n_components: int, n_styles: int, n_chars: int,
                 table_fingerprint: str, phase: int = 1, seed: int = 0):
        self.cfg = cfg
        self.n_components = n_components
        self.n_styles = n_styles
        self.n_chars = n_chars
        self.table_fingerprint = table_fingerprint
        self.phase = phase
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.modules = build_modules(cfg, n_components, n_styles, n_chars)
        # damp residual branches; there is no normalization to keep them in check
        for block in self.modules.modules():
            if block.__class__.__name__ == "ResBlock" and not cfg.g_sn:
                with torch.no_grad():
                    block.c2.weight.mul_(0.1)
        self.eval()

    # attribute-style access to sub-networks
    def __getattr__(self, name):
        mods = self.__dict__.get("modules")
        if mods is not None and name in mods:
            return mods[name]
        raise AttributeError(name)

    def eval(self) -> "ModelBundle":
        self.modules.eval()
        return self

    def train(self) -> "ModelBundle":
        self.modules.train()
        return self

    def to(self, dtype=None) -> "ModelBundle":
        self.modules.to(dtype=dtype)
        return self

    @property
    def dtype(self) -> torch.dtype:
        return next(self.modules.parameters()).dtype

    def generator_parameters(self):
        return [p for name, m in self.modules.items() if name != "disc" for p in m.parameters()]

    def discriminator_parameters(self):
        return list(self.modules["disc"].parameters())

    def header(self) -> dict:
        return {
            "format": CKPT_FORMAT,
            "version": CKPT_VERSION,
            "arch": asdict(self.cfg),
            "n_components": self.n_components,
            "n_styles": self.n_styles,
            "n_chars": self.n_chars,
            "table_fingerprint": self.table_fingerprint,
            "phase": self.phase,
        }

    def state_dict(self) -> dict:
        return {k: v.detach().clone() for k, v in self.modules.state_dict().items()}

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.modules.state_dict().items()):
            h.update(k.encode())
            h.update(v.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelBundle":
        other = ModelBundle.__new__(ModelBundle)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if k != "modules"})
        buf = io.BytesIO()
        torch.save(self.modules, buf)
        buf.seek(0)
        other.modules = torch.load(buf, weights_only=False)
        return other


def save_checkpoint(bundle: ModelBundle, path: str | Path, extra: dict | None = None) -> Path:
    """Write header, parameters and optional extra state (optimizers, RNG, ...)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"header": bundle.header(), "params": bundle.state_dict()}
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, table=None) -> tuple[ModelBundle, dict]:
    """Load a bundle; if `table` is given its fingerprint must match."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    header = payload.get("header", {})
    if header.get("format") != CKPT_FORMAT:
        raise CheckpointError(f"{path}: not an lffont checkpoint")
    if header.get("version") != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    if table is not None and table.fingerprint() != header["table_fingerprint"]:
        raise CheckpointError(
            f"{path}: decomposition table fingerprint {table.fingerprint()} does not match "
            f"checkpoint {header['table_fingerprint']}"
        )
    bundle = ModelBundle(
        ArchConfig(**header["arch"]), header["n_components"], header["n_styles"], header["n_chars"],
        header["table_fingerprint"], phase=header["phase"],
    )
    params = payload["params"]
    dtype = next(iter(params.values())).dtype
    if dtype != bundle.dtype:
        bundle.to(dtype)
    bundle.modules.load_state_dict(params)
    return bundle, payload.get("extra", {})

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import InputError


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the two-tower transformer.

    Defaults are desk-scale: the architecture, not the size, is what this
    package exercises.
    """

    vocab_size: int
    embed_dim: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    max_positions: int = 512
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "layers", "heads", "ffn_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.embed_dim % self.heads != 0:
            raise InputError(
                f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in doc.items()})

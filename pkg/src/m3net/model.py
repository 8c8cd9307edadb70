"""The full parameter set and its canonical dotted names."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .encoding import IECEParams, IFCEParams, IVCEParams, StemParams
from .matching import CMParams

_KINDS = {"stem": StemParams, "ifce": IFCEParams, "ivce": IVCEParams,
          "iece": IECEParams, "cm": CMParams}
GROUPS = tuple(_KINDS)


def _dotted(group: str, field_name: str) -> str:
    return f"{group}.{field_name.replace('mlp_', 'mlp.')}"


@dataclass
class ModelParams:
    stem: StemParams
    ifce: IFCEParams
    ivce: IVCEParams
    iece: IECEParams
    cm: CMParams

    @classmethod
    def init(cls, config, rng: np.random.Generator, dtype=np.float32) -> "ModelParams":
        d = config.d
        return cls(
            stem=StemParams.init(config.c, d, rng, dtype),
            ifce=IFCEParams.init(d, config.n, config.mlp_dim, rng, dtype),
            ivce=IVCEParams.init(config.t, d, rng, dtype),
            iece=IECEParams.init(config.episode_size, d, rng, dtype),
            cm=CMParams.init(d, config.key_dim, rng, dtype),
        )

    def named(self) -> dict:
        """``{dotted name: array}`` in canonical order (arrays are not copied)."""
        out = {}
        for group in GROUPS:
            for key, value in getattr(self, group).items():
                out[_dotted(group, key)] = value
        return out

    @classmethod
    def from_named(cls, named: dict, dtype=None) -> "ModelParams":
        groups = {}
        for group, kind in _KINDS.items():
            values = {}
            for f in fields(kind):
                arr = named[_dotted(group, f.name)]
                values[f.name] = np.array(arr, dtype=dtype or arr.dtype)
            groups[group] = kind(**values)
        return cls(**groups)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(**{g: getattr(self, g).astype(dtype) for g in GROUPS})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{g: getattr(self, g).zeros_like() for g in GROUPS})

    def count(self) -> int:
        return sum(v.size for v in self.named().values())


def expected_shapes(config) -> dict:
    """Shapes implied by a config, keyed by dotted name (used to validate checkpoints)."""
    d, t, l, dm, n2 = config.d, config.t, config.episode_size, config.mlp_dim, config.n ** 2
    dk = config.key_dim
    return {
        "stem.W": (config.c, d), "stem.b": (d,),
        "ifce.W_Q": (d, d), "ifce.W_K": (d, d), "ifce.W_V": (d, d), "ifce.alpha": (),
        "ifce.P": (n2, d),
        "ifce.mlp.W1": (d, dm), "ifce.mlp.b1": (dm,), "ifce.mlp.W2": (dm, dm),
        "ifce.mlp.b2": (dm,), "ifce.mlp.W3": (dm, d), "ifce.mlp.b3": (d,),
        "ivce.W_t1": (t, t), "ivce.W_t2": (t, t), "ivce.W_c1": (d, d), "ivce.W_c2": (d, d),
        "ivce.P": (t, d),
        "iece.W_v1": (l, l), "iece.W_v2": (l, l), "iece.W_e1": (d, d), "iece.W_e2": (d, d),
        "iece.W_ctx": (2 * d, d), "iece.b_ctx": (d,),
        "cm.W_Q": (d, dk), "cm.W_K": (d, dk), "cm.W_V": (d, dk),
    }

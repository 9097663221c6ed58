"""Run configuration: every knob of the model, trainer and ablations.

Configs serialize to flat `key=value` text (one pair per line, sorted by
key) so they can be diffed, logged, and embedded in checkpoints.
"""

from dataclasses import dataclass, fields, replace

from .errors import UsageError

__all__ = ["RunConfig", "most_square_factors"]

VARIANTS = ("hycube", "hycube_plus", "hyplane")
STACKS = ("alternate", "standard")
PADDINGS = ("circular", "zero")
NEG_MODES = ("full", "sampled")


def most_square_factors(d):
    """The factor pair d1 <= d2 of d with d1 as large as possible."""
    if d < 1:
        raise UsageError(f"embedding dimension must be positive, got {d}")
    d1 = int(d**0.5)
    while d % d1 != 0:
        d1 -= 1
    return d1, d // d1


@dataclass(frozen=True)
class RunConfig:
    d: int = 400
    d1: int = 0  # 0 = derive the most-square factorization of d
    d2: int = 0
    pad: int = 1
    kernel: int = 0  # 0 = derive 2*pad + 1
    channels: int = 8
    pool: int = 4
    dropout_input: float = 0.2
    dropout_feature: float = 0.2
    variant: str = "hycube"
    stack: str = "alternate"
    padding_mode: str = "circular"
    batchnorm: bool = True
    lr: float = 0.0005
    lr_decay: float = 0.995
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    neg_mode: str = "full"
    neg_rate: int = 0

    def resolved(self):
        """Fill derived fields (d1/d2 factorization, kernel size) and validate."""
        cfg = self
        if cfg.d1 == 0 or cfg.d2 == 0:
            d1, d2 = most_square_factors(cfg.d)
            cfg = replace(cfg, d1=d1, d2=d2)
        if cfg.kernel == 0:
            cfg = replace(cfg, kernel=2 * cfg.pad + 1)
        cfg.validate()
        return cfg

    def validate(self):
        if self.d1 * self.d2 != self.d:
            raise UsageError(f"d1*d2 = {self.d1}*{self.d2} must equal d = {self.d}")
        if self.pad < 0:
            raise UsageError(f"pad must be >= 0, got {self.pad}")
        if self.kernel != 2 * self.pad + 1:
            raise UsageError(
                f"kernel size {self.kernel} must equal 2*pad+1 = {2 * self.pad + 1}"
            )
        if self.channels < 1 or self.channels % self.pool != 0:
            raise UsageError(
                f"pool window {self.pool} must divide channel count {self.channels}"
            )
        if self.variant == "hycube_plus" and self.channels // self.pool != 2:
            # v_conv and the two-slice residual must share length 2*d1*d2
            raise UsageError(
                "hycube_plus requires channels/pool == 2 so the residual "
                f"vector matches the pooled features (got {self.channels}/{self.pool})"
            )
        for rate in (self.dropout_input, self.dropout_feature):
            if not 0.0 <= rate < 1.0:
                raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stack not in STACKS:
            raise UsageError(f"stack must be one of {STACKS}, got {self.stack!r}")
        if self.padding_mode not in PADDINGS:
            raise UsageError(
                f"padding_mode must be one of {PADDINGS}, got {self.padding_mode!r}"
            )
        if self.neg_mode not in NEG_MODES:
            raise UsageError(f"neg_mode must be one of {NEG_MODES}, got {self.neg_mode!r}")
        if self.neg_mode == "sampled" and self.neg_rate < 1:
            raise UsageError("sampled negative mode requires neg_rate >= 1")
        if self.lr <= 0:
            raise UsageError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise UsageError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise UsageError("batch_size, max_epochs and patience must be >= 1")

    @property
    def flat_features(self):
        """Length of the flattened pooled feature vector (3D variants)."""
        return (self.channels // self.pool) * self.d1 * self.d2

    def cube_depth(self, arity):
        """Depth of the stacked feature cube for one fact of the given arity."""
        return 2 * (arity - 1) if self.stack == "alternate" else arity

    def to_text(self):
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        spec = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in spec:
                raise UsageError(f"config line {lineno}: unknown entry {raw!r}")
            kind = spec[key]
            value = value.strip()
            if kind == "bool" or kind is bool:
                if value not in ("true", "false"):
                    raise UsageError(f"config line {lineno}: expected true/false")
                values[key] = value == "true"
            elif kind == "int" or kind is int:
                values[key] = int(value)
            elif kind == "float" or kind is float:
                values[key] = float(value)
            else:
                values[key] = value
        return cls(**values)

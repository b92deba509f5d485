"""Architecture and optimizer settings, plus named presets.

The tabular and image presets copy the published hyperparameter table
(layers, anchors, reflections, patch size, learning rate, epochs, batch size).
They are full-scale recipes measured in hours, not desk-scale gates. The
``toy*`` presets are scaled-down settings used by the tests and the CLI.
"""

from dataclasses import dataclass, fields

from .errors import ContractError


@dataclass(frozen=True)
class FlowConfig:
    n_layers: int
    n_anchors: int
    n_reflections: int | None = None  # None: one reflection per dimension
    rotation: str = "householder"  # or "patch"
    patch_side: int | None = None
    image_side: int | None = None

    def __post_init__(self):
        if self.n_layers < 1:
            raise ContractError("a flow needs at least one layer")
        if self.n_anchors < 1:
            raise ContractError("n_anchors must be >= 1")
        if self.rotation not in ("householder", "patch"):
            raise ContractError(f"unknown rotation kind {self.rotation!r}")
        if self.rotation == "patch" and not (self.patch_side and self.image_side):
            raise ContractError("patch rotations need patch_side and image_side")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 50
    batch_size: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    log_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ContractError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.workers < 1:
            raise ContractError("workers must be >= 1")


@dataclass(frozen=True)
class Preset:
    name: str
    flow: FlowConfig
    train: TrainConfig
    full_scale: bool = False
    notes: str = ""
    # published test NLL for the full recipe (nats, or bpd for images); a
    # documentation target only, far out of reach of a desk-scale run
    reference_nll: float | None = None


def _full(name, layers, anchors, refl, lr, batch, ref, patch=None, side=None):
    flow = FlowConfig(layers, anchors, refl,
                      rotation="patch" if patch else "householder",
                      patch_side=patch, image_side=side)
    return Preset(name, flow, TrainConfig(learning_rate=lr, epochs=200, batch_size=batch),
                  full_scale=True, notes="bpd" if patch else "nats", reference_nll=ref)


PRESETS = {
    p.name: p
    for p in [
        _full("power", 50, 50, 6, 0.005, 2000, -0.57),
        _full("gas", 150, 50, 8, 0.005, 2000, -10.13),
        _full("hepmass", 100, 100, 21, 0.005, 500, 17.59),
        _full("miniboone", 90, 50, 43, 0.005, 500, 10.32),
        _full("bsds300", 30, 60, 63, 0.005, 1000, -152.82),
        _full("mnist", 10, 50, 16, 0.01, 100, 1.29, patch=4, side=28),
        _full("fmnist", 10, 50, 16, 0.01, 100, 3.35, patch=4, side=28),
        Preset("toy2d", FlowConfig(10, 30), TrainConfig(learning_rate=0.005, epochs=40,
                                                        batch_size=500),
               notes="desk-scale 2D"),
        Preset("toy1d", FlowConfig(1, 50), TrainConfig(learning_rate=0.01, epochs=30,
                                                       batch_size=500),
               notes="single kernel layer"),
        Preset("image-small", FlowConfig(4, 20, rotation="patch", patch_side=2, image_side=4),
               TrainConfig(learning_rate=0.01, epochs=20, batch_size=100),
               notes="desk-scale patch rotations on 4x4 images"),
    ]
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def flow_config_from_dict(d):
    names = {f.name for f in fields(FlowConfig)}
    return FlowConfig(**{k: v for k, v in d.items() if k in names})


def train_config_from_dict(d):
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in d.items() if k in names})


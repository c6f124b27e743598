"""Configuration dataclasses, the key = value config-file parser, and presets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

ILLUMINATION_LEVELS = ("illum_full", "illum_mild")
VIEWPOINT_LEVELS = ("viewpoint_full", "viewpoint_medium", "viewpoint_gentle")


@dataclass(frozen=True)
class PropertyConfig:
    """Hyperparameters of the three point properties.

    ``rad`` is the Chebyshev suppression radius in pixels, (``n_min``,
    ``n_max``) the exclusive bounds on the point count, ``m_p``/``m_n`` the
    positive/negative similarity margins, ``neg_weight`` the negative-pair
    weight, ``alpha`` the discriminability sharpness.
    """

    rad: int = 4
    n_min: int = 5
    n_max: int = 30
    m_p: float = 1.0
    m_n: float = 0.2
    neg_weight: float | None = None  # defaults to 10 / n_max
    alpha: float = 1.0

    def __post_init__(self):
        if self.neg_weight is None:
            object.__setattr__(self, "neg_weight", 10.0 / self.n_max)
        validate_property_config(self)

    @property
    def margin_max(self) -> float:
        """Largest reachable discriminability margin: m_p - neg_weight * m_n."""
        return self.m_p - self.neg_weight * self.m_n


def validate_property_config(cfg: PropertyConfig) -> None:
    if cfg.rad < 1:
        raise ValueError(f"rad must be >= 1, got {cfg.rad}")
    if not 0 <= cfg.n_min < cfg.n_max:
        raise ValueError(f"need 0 <= n_min < n_max, got n_min={cfg.n_min} n_max={cfg.n_max}")
    if not -1.0 <= cfg.m_n < cfg.m_p <= 1.0:
        raise ValueError(f"need -1 <= m_n < m_p <= 1, got m_n={cfg.m_n} m_p={cfg.m_p}")
    if cfg.neg_weight < 0:
        raise ValueError(f"neg_weight must be >= 0, got {cfg.neg_weight}")
    if cfg.alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {cfg.alpha}")


@dataclass(frozen=True)
class TrainConfig:
    """Everything the training loop needs besides the images themselves."""

    batch_scenes: int = 2
    transforms_per_scene: int = 10
    iterations: int = 200
    properties: PropertyConfig = field(default_factory=PropertyConfig)
    descriptor_dim: int = 16
    in_channels: int = 1
    image_size: tuple[int, int] = (64, 64)  # (height, width), multiples of 4
    illumination: str = "illum_mild"
    viewpoint: str = "viewpoint_medium"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        validate_train_config(self)


def validate_train_config(cfg: TrainConfig) -> None:
    if cfg.batch_scenes < 1:
        raise ValueError(f"batch_scenes must be >= 1, got {cfg.batch_scenes}")
    if cfg.transforms_per_scene < 2:
        raise ValueError(f"transforms_per_scene must be >= 2, got {cfg.transforms_per_scene}")
    if cfg.iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {cfg.iterations}")
    if cfg.descriptor_dim < 2:
        raise ValueError(f"descriptor_dim must be >= 2, got {cfg.descriptor_dim}")
    if cfg.illumination not in ILLUMINATION_LEVELS:
        raise ValueError(f"illumination must be one of {ILLUMINATION_LEVELS}")
    if cfg.viewpoint not in VIEWPOINT_LEVELS:
        raise ValueError(f"viewpoint must be one of {VIEWPOINT_LEVELS}")
    h, w = cfg.image_size
    if h % 4 != 0 or w % 4 != 0 or h < 8 or w < 8:
        raise ValueError(f"image_size must be multiples of 4 and >= 8, got {h}x{w}")
    if cfg.learning_rate <= 0:
        raise ValueError(f"learning_rate must be > 0, got {cfg.learning_rate}")


@dataclass(frozen=True)
class EvalConfig:
    """Inference and metric settings shared by eval and visualize."""

    prob_threshold: float = 0.5
    max_points: int = 1000
    epsilon: float = 3.0
    ransac_iters: int = 2000
    ransac_threshold: float = 3.0
    ransac_seed: int = 0
    pairs_per_image: int = 1

    def __post_init__(self):
        if not 0.0 < self.prob_threshold < 1.0:
            raise ValueError(f"prob_threshold must be in (0, 1), got {self.prob_threshold}")
        if self.max_points < 1:
            raise ValueError(f"max_points must be >= 1, got {self.max_points}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.ransac_iters < 1:
            raise ValueError(f"ransac_iters must be >= 1, got {self.ransac_iters}")
        if self.pairs_per_image < 1:
            raise ValueError(f"pairs_per_image must be >= 1, got {self.pairs_per_image}")


@dataclass
class RunConfig:
    """Full command configuration: training, properties, simulation, eval, paths."""

    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    images_dir: str | None = None
    output_dir: str = "out"
    checkpoint: str | None = None
    pairs_file: str | None = None
    epochs: int | None = None  # alternative to iterations: passes over the image set
    threads: int = 1


# mirrors of the three published training regimes, at their descriptor lengths
PRESETS = {
    "pn-i": {"simulate.illumination": "illum_full", "simulate.viewpoint": "viewpoint_medium",
             "train.descriptor_dim": "64"},
    "pn-v": {"simulate.illumination": "illum_mild", "simulate.viewpoint": "viewpoint_full",
             "train.descriptor_dim": "64"},
    "pn-full": {"simulate.illumination": "illum_full", "simulate.viewpoint": "viewpoint_full",
                "train.descriptor_dim": "128"},
}

_SCHEMA = {
    "train.batch_scenes": int,
    "train.transforms_per_scene": int,
    "train.iterations": int,
    "train.epochs": int,
    "train.descriptor_dim": int,
    "train.in_channels": int,
    "train.image_height": int,
    "train.image_width": int,
    "train.learning_rate": float,
    "train.beta1": float,
    "train.beta2": float,
    "train.adam_eps": float,
    "train.seed": int,
    "properties.rad": int,
    "properties.n_min": int,
    "properties.n_max": int,
    "properties.m_p": float,
    "properties.m_n": float,
    "properties.neg_weight": float,
    "properties.alpha": float,
    "simulate.illumination": str,
    "simulate.viewpoint": str,
    "eval.prob_threshold": float,
    "eval.max_points": int,
    "eval.epsilon": float,
    "eval.ransac_iters": int,
    "eval.ransac_threshold": float,
    "eval.ransac_seed": int,
    "eval.pairs_per_image": int,
    "paths.images_dir": str,
    "paths.output_dir": str,
    "paths.checkpoint": str,
    "paths.pairs_file": str,
    "run.threads": int,
}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines grouped under ``[section]`` headers.

    Returns a dict of dotted keys; unknown keys or malformed lines raise
    ValueError before any work starts.
    """
    values = {}
    section = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        dotted = f"{section}.{key.strip()}"
        if dotted not in _SCHEMA:
            raise ValueError(f"line {lineno}: unknown config key {dotted!r}")
        caster = _SCHEMA[dotted]
        try:
            values[dotted] = caster(val.strip())
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {dotted!r}: {exc}") from exc
    return values


def build_run_config(
    values: dict,
    preset: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
) -> RunConfig:
    """Assemble and validate a RunConfig from dotted key/value overrides."""
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for key, val in PRESETS[preset].items():
            merged[key] = _SCHEMA[key](val)
    merged.update(values)
    if seed is not None:
        merged["train.seed"] = seed
    if threads is not None:
        merged["run.threads"] = threads

    def take(key, default):
        return merged.pop(key, default)

    prop = PropertyConfig(
        rad=take("properties.rad", 4),
        n_min=take("properties.n_min", 5),
        n_max=take("properties.n_max", 30),
        m_p=take("properties.m_p", 1.0),
        m_n=take("properties.m_n", 0.2),
        neg_weight=take("properties.neg_weight", None),
        alpha=take("properties.alpha", 1.0),
    )
    train = TrainConfig(
        batch_scenes=take("train.batch_scenes", 2),
        transforms_per_scene=take("train.transforms_per_scene", 10),
        iterations=take("train.iterations", 200),
        properties=prop,
        descriptor_dim=take("train.descriptor_dim", 16),
        in_channels=take("train.in_channels", 1),
        image_size=(take("train.image_height", 64), take("train.image_width", 64)),
        illumination=take("simulate.illumination", "illum_mild"),
        viewpoint=take("simulate.viewpoint", "viewpoint_medium"),
        learning_rate=take("train.learning_rate", 1e-3),
        beta1=take("train.beta1", 0.9),
        beta2=take("train.beta2", 0.999),
        adam_eps=take("train.adam_eps", 1e-8),
        seed=take("train.seed", 0),
    )
    evalc = EvalConfig(
        prob_threshold=take("eval.prob_threshold", 0.5),
        max_points=take("eval.max_points", 1000),
        epsilon=take("eval.epsilon", 3.0),
        ransac_iters=take("eval.ransac_iters", 2000),
        ransac_threshold=take("eval.ransac_threshold", 3.0),
        ransac_seed=take("eval.ransac_seed", 0),
        pairs_per_image=take("eval.pairs_per_image", 1),
    )
    run = RunConfig(
        train=train,
        eval=evalc,
        images_dir=take("paths.images_dir", None),
        output_dir=take("paths.output_dir", "out"),
        checkpoint=take("paths.checkpoint", None),
        pairs_file=take("paths.pairs_file", None),
        epochs=take("train.epochs", None),
        threads=take("run.threads", 1),
    )
    if run.threads < 1:
        raise ValueError(f"threads must be >= 1, got {run.threads}")
    if merged:
        raise ValueError(f"unused config keys: {sorted(merged)}")
    return run


def load_run_config(path, preset=None, seed=None, threads=None) -> RunConfig:
    with open(path) as fh:
        values = parse_config_text(fh.read())
    return build_run_config(values, preset=preset, seed=seed, threads=threads)


def with_iterations(cfg: TrainConfig, iterations: int) -> TrainConfig:
    return replace(cfg, iterations=iterations)

"""
Configuration manager for Poincare Align
"""

import copy
import json
import os
from typing import Any, Dict, List, Optional, Sequence

from poincare_align.data import DatasetPaths, SyntheticSpec
from poincare_align.exceptions import ConfigError, InvalidInputError
from poincare_align.geometry import Curvature
from poincare_align.model import ACTIVATIONS, GEOMETRIES, FusionConfig
from poincare_align.train import TrainingConfig

MANIFEST_FORMAT = "poincare-align-manifest"

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(__file__), '..', '..', 'config', 'config.json')


def _deep_merge(base: Dict, update: Dict) -> Dict:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def _parse_value(text: str) -> Any:
    """JSON literal if it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


class Config:
    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file or DEFAULT_CONFIG_FILE
        self.config = self._load_default_config()
        self.load_config()

    def _load_default_config(self) -> Dict:
        return {
            "rng_seed": 0,
            "output_directory": "runs/default",
            "logging_enabled": True,
            "log_file": "poincare_align.log",
            "dataset": {
                "directory": "",
                "with_visual": True,
                "split_fraction": 0.3,
            },
            "synthetic": {
                "enabled": True,
                "n_entities": 100,
                "avg_degree": 4.0,
                "edge_noise": 0.0,
                "visual_signal": 0.9,
                "visual_dim": 32,
                "image_coverage": 1.0,
                "n_relations": 4,
            },
            "model": {
                "geometry": "poincare",
                "dim": 64,
                "hidden_dim": None,
                "layers": 2,
                "curvature": 1.0,
                "curvatures": None,
                "activation": "relu",
                "fusion_curvature": 1.0,
                "visual": True,
                "tie_seeds": True,
            },
            "training": {
                "margin_struct": 0.5,
                "margin_visual": 1.5,
                "negatives_per_positive": 6,
                "learning_rate": 0.01,
                "epochs": 300,
                "adam_beta1": 0.9,
                "adam_beta2": 0.999,
                "adam_eps": 1e-8,
                "log_every": 50,
                "num_threads": 1,
            },
            "evaluation": {
                "beta_list": [0.0, 0.5, 0.9, 1.0],
                "k_list": [1, 10],
                "top_n": 10,
                "beta": 0.9,
            },
            "gradcheck": {
                "n_entities": 15,
                "avg_degree": 3.0,
                "dim": 6,
                "layers": 2,
                "n_coordinates": 200,
                "step": 1e-5,
                "tolerance": 1e-4,
            },
        }

    def load_config(self) -> None:
        if os.path.exists(self.config_file):
            self.load_config_from(self.config_file)

    def get(self, key: str, default=None):
        """Look up a dotted key such as ``"training.epochs"``."""
        node: Any = self.config
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value) -> None:
        parts = key.split(".")
        node = self.config
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                raise ConfigError(key, f"'{part}' is not a configuration section")
            node = child
        node[parts[-1]] = value

    def apply_overrides(self, overrides: Sequence[str]) -> None:
        """Apply ``key=value`` strings; values are JSON literals."""
        for item in overrides:
            key, sep, text = item.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(item, "overrides must look like 'section.key=value'")
            if self.get(key) is None and not self._known_key(key):
                raise ConfigError(key, "unknown configuration key")
            self.set(key, _parse_value(text.strip()))

    def _known_key(self, key: str) -> bool:
        node: Any = self._load_default_config()
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return False
            node = node[part]
        return True

    def load_config_from(self, config_path: str) -> bool:
        """Deep-merge a config file (or the config stored in a run manifest).

        Returns:
            bool: True if loaded, False if the file does not exist
        """
        if not os.path.exists(config_path):
            return False
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            raise ConfigError(config_path, f"could not read configuration: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(config_path, "configuration must be a JSON object")
        if loaded.get("format") == MANIFEST_FORMAT:
            loaded = loaded.get("config", {})
        _deep_merge(self.config, loaded)
        return True

    def get_output_directory(self) -> str:
        return self.get("output_directory", "runs/default")

    def is_logging_enabled(self) -> bool:
        return bool(self.get("logging_enabled", True))

    def get_log_file(self) -> str:
        return self.get("log_file", "poincare_align.log")

    def is_synthetic(self) -> bool:
        return bool(self.get("synthetic.enabled", True))

    def get_rng_seed(self) -> int:
        return int(self.get("rng_seed", 0))

    # Typed views

    def layer_dims(self, input_dim: int) -> List[int]:
        """[input_dim, hidden, ..., dim] for ``model.layers`` layers."""
        dim = int(self.get("model.dim"))
        hidden = self.get("model.hidden_dim") or dim
        layers = int(self.get("model.layers"))
        return [input_dim] + [int(hidden)] * (layers - 1) + [dim]

    def layer_curvatures(self) -> List[float]:
        """One curvature per layer boundary; the last is the fusion curvature."""
        layers = int(self.get("model.layers"))
        explicit = self.get("model.curvatures")
        if explicit is not None:
            return [float(c) for c in explicit]
        c = float(self.get("model.curvature"))
        return [c] * layers + [float(self.get("model.fusion_curvature"))]

    def training_config(self) -> TrainingConfig:
        t = self.get("training")
        try:
            return TrainingConfig(
                margin_struct=float(t["margin_struct"]),
                margin_visual=float(t["margin_visual"]),
                negatives_per_positive=int(t["negatives_per_positive"]),
                learning_rate=float(t["learning_rate"]),
                epochs=int(t["epochs"]),
                rng_seed=self.get_rng_seed(),
                adam_beta1=float(t["adam_beta1"]),
                adam_beta2=float(t["adam_beta2"]),
                adam_eps=float(t["adam_eps"]),
                log_every=max(1, int(t["log_every"])),
            )
        except InvalidInputError as e:
            raise ConfigError("training", str(e))

    def synthetic_spec(self) -> SyntheticSpec:
        s = self.get("synthetic")
        try:
            return SyntheticSpec(
                n_entities=int(s["n_entities"]),
                avg_degree=float(s["avg_degree"]),
                edge_noise=float(s["edge_noise"]),
                visual_signal=float(s["visual_signal"]),
                rng_seed=self.get_rng_seed(),
                visual_dim=int(s["visual_dim"]),
                image_coverage=float(s["image_coverage"]),
                n_relations=int(s["n_relations"]),
                split_fraction=float(self.get("dataset.split_fraction")),
            )
        except InvalidInputError as e:
            raise ConfigError("synthetic", str(e))

    def dataset_paths(self) -> DatasetPaths:
        paths = DatasetPaths.in_directory(
            self.get("dataset.directory"), with_visual=bool(self.get("dataset.with_visual"))
        )
        # Visual files are optional; a directory without them loads structure only.
        if paths.visual1 and not os.path.isfile(paths.visual1):
            paths.visual1 = None
        if paths.visual2 and not os.path.isfile(paths.visual2):
            paths.visual2 = None
        return paths

    def fusion_config(self, beta: Optional[float] = None) -> FusionConfig:
        beta = float(self.get("evaluation.beta") if beta is None else beta)
        try:
            return FusionConfig(beta, Curvature(float(self.get("model.fusion_curvature"))))
        except InvalidInputError as e:
            raise ConfigError("evaluation.beta", str(e))

    def validate(self) -> None:
        """Raise ConfigError naming the first invalid field."""
        self._require_range("dataset.split_fraction", 0.0, 1.0, include_low=False)
        self._require_int("rng_seed", minimum=0)
        if self.get("model.geometry") not in GEOMETRIES:
            raise ConfigError("model.geometry", f"expected one of {list(GEOMETRIES)}", self.get("model.geometry"))
        if self.get("model.activation") not in ACTIVATIONS:
            raise ConfigError("model.activation", f"expected one of {sorted(ACTIVATIONS)}", self.get("model.activation"))
        self._require_int("model.dim", minimum=1)
        self._require_int("model.layers", minimum=1)
        if self.get("model.hidden_dim") is not None:
            self._require_int("model.hidden_dim", minimum=1)
        self._require_positive("model.curvature")
        self._require_positive("model.fusion_curvature")
        if not isinstance(self.get("model.tie_seeds"), bool):
            raise ConfigError("model.tie_seeds", "expected true or false", self.get("model.tie_seeds"))
        curvatures = self.get("model.curvatures")
        if curvatures is not None:
            if not isinstance(curvatures, list) or len(curvatures) != int(self.get("model.layers")) + 1:
                raise ConfigError("model.curvatures", "expected one curvature per layer boundary (layers + 1)", curvatures)
            if any(not isinstance(c, (int, float)) or c <= 0 for c in curvatures):
                raise ConfigError("model.curvatures", "curvatures must be positive", curvatures)
            if float(curvatures[-1]) != float(self.get("model.fusion_curvature")):
                raise ConfigError("model.curvatures", "the last curvature must equal model.fusion_curvature", curvatures)
        for key in ("margin_struct", "margin_visual", "learning_rate", "adam_eps"):
            self._require_positive(f"training.{key}")
        for key in ("negatives_per_positive", "epochs", "log_every", "num_threads"):
            self._require_int(f"training.{key}", minimum=1)
        self._require_range("training.adam_beta1", 0.0, 1.0)
        self._require_range("training.adam_beta2", 0.0, 1.0)
        betas = self.get("evaluation.beta_list")
        if not isinstance(betas, list) or any(not isinstance(b, (int, float)) or not 0 <= b <= 1 for b in betas):
            raise ConfigError("evaluation.beta_list", "expected a list of numbers in [0, 1]", betas)
        ks = self.get("evaluation.k_list")
        if not isinstance(ks, list) or not ks or any(not isinstance(k, int) or k < 1 for k in ks):
            raise ConfigError("evaluation.k_list", "expected a non-empty list of positive integers", ks)
        self._require_int("evaluation.top_n", minimum=1)
        self._require_range("evaluation.beta", 0.0, 1.0, include_high=True)
        for key in ("n_entities", "dim", "layers", "n_coordinates"):
            self._require_int(f"gradcheck.{key}", minimum=1)
        self._require_positive("gradcheck.step")
        self._require_positive("gradcheck.tolerance")
        if self.is_synthetic():
            self.synthetic_spec()
        else:
            directory = self.get("dataset.directory")
            if not directory:
                raise ConfigError("dataset.directory", "required when synthetic.enabled is false")
            missing = self.dataset_paths().missing()
            if missing:
                raise ConfigError("dataset.directory", f"file not found: {missing[0]}", directory)

    def _require_int(self, key: str, minimum: int) -> None:
        value = self.get(key)
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(key, f"expected an integer >= {minimum}", value)

    def _require_positive(self, key: str) -> None:
        value = self.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(key, "expected a positive number", value)

    def _require_range(self, key: str, low: float, high: float, include_low: bool = True, include_high: bool = False) -> None:
        value = self.get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number", value)
        above = value >= low if include_low else value > low
        below = value <= high if include_high else value < high
        if not (above and below):
            bounds = ("[" if include_low else "(") + f"{low}, {high}" + ("]" if include_high else ")")
            raise ConfigError(key, f"expected a value in {bounds}", value)

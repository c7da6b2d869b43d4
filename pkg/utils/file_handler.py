import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Type

import pandas as pd
from pydantic import BaseModel

from config.settings import settings
from tasep.lattice import HeightProfile, MacroField
from tasep.speedbuild import SimpleSpeed
from utils.logger import experiment_logger

logger = logging.getLogger(__name__)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


class ArtifactHandler:
    """Reads experiment inputs and writes provenance-stamped artifacts into one run directory."""

    def __init__(self, out_dir: Optional[Path] = None):
        self.out_dir = Path(out_dir or settings.OUT_DIR)
        self.provenance: Dict[str, Any] = {}

    def validate_config_file(self, path) -> Dict:
        validation = {"valid": False, "error": None, "document": None}
        path = Path(path)
        if not path.is_file():
            validation["error"] = f"No config file at {path}"
            return validation
        if path.suffix.lower() != ".json":
            validation["error"] = "Config must be a .json document"
            return validation
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            validation["error"] = f"Invalid JSON: {e}"
            return validation
        if not isinstance(doc, dict):
            validation["error"] = "Config must be a JSON object"
            return validation
        validation["valid"] = True
        validation["document"] = doc
        return validation

    def stamp(self, config: BaseModel) -> Dict[str, Any]:
        """Provenance of a validated config: sha256 of its canonical JSON, seed and version."""
        digest = hashlib.sha256(canonical_json(config.model_dump(mode="json")).encode("utf-8")).hexdigest()
        self.provenance = {"config_hash": digest, "seed": getattr(config, "seed", None), "version": settings.VERSION}
        return self.provenance

    def _target(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self._target(name)
        text = json.dumps({"provenance": self.provenance, **payload}, indent=2, sort_keys=True, default=float)
        path.write_text(text + "\n", encoding="utf-8")
        experiment_logger.log_artifact(path, path.stat().st_size)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._target(name)
        header = ",".join(f"{k}={self.provenance.get(k)}" for k in ("config_hash", "seed", "version"))
        buffer = io.StringIO()
        buffer.write(f"# {header}\n")
        frame.to_csv(buffer, index=False, float_format="%.12g", lineterminator="\n")
        path.write_text(buffer.getvalue(), encoding="utf-8")
        experiment_logger.log_artifact(path, path.stat().st_size)
        return path

    @staticmethod
    def read_json_model(path, model: Type[BaseModel]) -> BaseModel:
        return model.model_validate_json(Path(path).read_text(encoding="utf-8"))

    @staticmethod
    def read_field(path) -> MacroField:
        return MacroField.from_frame(pd.read_csv(path, comment="#"))

    @staticmethod
    def read_profile(path) -> HeightProfile:
        return HeightProfile.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @staticmethod
    def read_speed(path) -> SimpleSpeed:
        return SimpleSpeed.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

"""
Run manifest models: per-stage provenance appended as JSON lines.
"""
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError

from ..errors import ArtifactIOError


class ManifestEntry(BaseModel):
    run_id: str
    stage: str
    case: Optional[str] = None
    status: Literal["ok", "failed"] = "ok"
    started_at: str = Field(..., description="ISO-8601 UTC start time")
    wall_time_s: float = Field(0.0, ge=0)
    seed: int = 0
    config_hash: str = ""
    inputs: Dict[str, str] = Field(default_factory=dict, description="Relative path -> sha256")
    outputs: Dict[str, str] = Field(default_factory=dict, description="Relative path -> sha256")
    versions: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    class Config:
        extra = "forbid"


@dataclass
class RunManifest:
    """Append-only JSON-lines record of every stage executed in an output directory."""

    path: Path
    run_id: str
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def append(self, entry: ManifestEntry) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self._lock, open(self.path, "a") as f:
                f.write(entry.model_dump_json() + "\n")
        except OSError as e:
            raise ArtifactIOError(f"Could not append to manifest: {e}", path=str(self.path))

    def entries(self) -> List[ManifestEntry]:
        if not self.path.exists():
            return []
        try:
            lines = self.path.read_text().splitlines()
            return [ManifestEntry.model_validate(json.loads(line)) for line in lines if line.strip()]
        except (OSError, ValueError, ValidationError) as e:
            raise ArtifactIOError(f"Manifest is unreadable: {e}", path=str(self.path))

    def latest(self, stage: str, case: Optional[str] = None, config_hash: Optional[str] = None) -> Optional[ManifestEntry]:
        for entry in reversed(self.entries()):
            if entry.stage != stage or entry.case != case or entry.status != "ok":
                continue
            if config_hash is not None and entry.config_hash != config_hash:
                continue
            return entry
        return None

    def emitted_files(self) -> List[str]:
        files: List[str] = []
        for entry in self.entries():
            for name in entry.outputs:
                if name not in files:
                    files.append(name)
        return files

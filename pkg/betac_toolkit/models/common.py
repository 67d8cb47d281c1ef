"""
Common models used across pipeline stages.
"""
from typing import Any, Dict, List, Optional
from dataclasses import dataclass, field


@dataclass
class StageResult:
    ok: bool
    stage: str
    warnings: List[str] = field(default_factory=list)
    artifacts: Dict[str, str] = field(default_factory=dict)
    data: Optional[Any] = None

    def add_warning(self, warning: str):
        self.warnings.append(warning)

    def add_artifact(self, name: str, path: str):
        self.artifacts[name] = path

    def has_warnings(self) -> bool:
        return len(self.warnings) > 0

    def __bool__(self) -> bool:
        return self.ok

    @classmethod
    def success(cls, stage: str, data: Any = None, artifacts: Optional[Dict[str, str]] = None,
                warnings: Optional[List[str]] = None) -> "StageResult":
        return cls(
            ok=True,
            stage=stage,
            data=data,
            artifacts=artifacts or {},
            warnings=warnings or []
        )

    @classmethod
    def failure(cls, stage: str, data: Any = None, warnings: Optional[List[str]] = None) -> "StageResult":
        return cls(
            ok=False,
            stage=stage,
            data=data,
            warnings=warnings or []
        )

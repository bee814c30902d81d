import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import yaml

from utils.errors import IntegrityError, MissingPrerequisiteError
from utils.helpers import sha256_file

MANIFEST_FILENAME = "manifest.yaml"


@dataclass
class RunManifest:
    """
    Record of every completed stage: its cache key, artifact digests and summary numbers.
    """
    workspace: str
    config_hash: str = ""
    stages: Dict[str, dict] = field(default_factory=dict)

    @property
    def path(self) -> str:
        return os.path.join(self.workspace, MANIFEST_FILENAME)

    @classmethod
    def load(cls, workspace: str) -> "RunManifest":
        path = os.path.join(workspace, MANIFEST_FILENAME)
        if not os.path.exists(path):
            return cls(workspace)
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        return cls(workspace, raw.get("config_hash", ""), raw.get("stages", {}) or {})

    def save(self):
        os.makedirs(self.workspace, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            yaml.safe_dump({"config_hash": self.config_hash, "stages": self.stages}, f, sort_keys=True)

    def record(self, stage: str, key: str, artifacts: Iterable[str], started: float, **summary):
        """
        Stores a finished stage; artifact paths are workspace-relative.
        """
        entry = {
            "key": key,
            "artifacts": {rel: sha256_file(os.path.join(self.workspace, rel)) for rel in artifacts},
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "wall_time_s": round(time.time() - started, 3),
        }
        entry.update(summary)
        self.stages[stage] = entry
        self.save()

    def verify(self, stage: str, hint: Optional[str] = None) -> dict:
        """
        Checks every artifact of a stage against its recorded digest.

        Raises:
            MissingPrerequisiteError: If the stage never ran or an artifact is gone.
            IntegrityError: If an artifact changed since it was recorded.
        """
        entry = self.stages.get(stage)
        if entry is None:
            raise MissingPrerequisiteError(
                f"Stage '{stage}' has not been run" + (f"; run '{hint}' first." if hint else ".")
            )
        for rel, digest in entry["artifacts"].items():
            path = os.path.join(self.workspace, rel)
            if not os.path.exists(path):
                raise MissingPrerequisiteError(f"Artifact of stage '{stage}' is missing: {path}")
            if sha256_file(path) != digest:
                raise IntegrityError(f"Hash mismatch for {path} (recorded by stage '{stage}')")
        return entry

    def is_current(self, stage: str, key: str) -> bool:
        """
        True when the stage ran with this key and its artifacts are intact.

        A different key means the inputs changed and the stage is recomputed.
        A missing artifact is recomputed too, but an artifact edited under a
        matching key is never silently overwritten.

        Raises:
            IntegrityError: If the key matches and an artifact digest does not.
        """
        entry = self.stages.get(stage)
        if entry is None or entry.get("key") != key:
            return False
        try:
            self.verify(stage)
        except MissingPrerequisiteError as e:
            logging.warning(f"Cached output of stage '{stage}' is incomplete, recomputing: {e}")
            return False
        return True

    def artifact_digests(self, stage: str) -> Dict[str, str]:
        return dict(self.stages.get(stage, {}).get("artifacts", {}))

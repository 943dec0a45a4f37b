import hashlib
import json
import os
import platform
from datetime import datetime
from typing import Optional, Dict, Any, List

import psutil

from Core.Logger import logger


class RunDirManager:
    SUBDIRS = ("grids", "roadmaps", "datasets", "checkpoints", "reports", "plots", "Logs")
    MANIFEST_NAME = "manifest.json"

    def __init__(self, out_dir: str):
        self.out_dir = os.path.abspath(out_dir)
        for sub in self.SUBDIRS:
            os.makedirs(os.path.join(self.out_dir, sub), exist_ok=True)
        self.manifest_path = os.path.join(self.out_dir, self.MANIFEST_NAME)
        self._manifest = self._loadManifest()

    def _loadManifest(self) -> Dict[str, Any]:
        if os.path.exists(self.manifest_path):
            try:
                with open(self.manifest_path, "r", encoding="utf-8") as f:
                    return json.load(f)
            except json.JSONDecodeError as e:
                logger.warning(f"Unreadable manifest, starting a new one: {e}")
        return {"created": datetime.now().isoformat(timespec="seconds"), "runs": [], "artifacts": {}}

    def getFolder(self, kind: str) -> str:
        if kind not in self.SUBDIRS:
            raise KeyError(f"Unknown run folder: {kind}")
        return os.path.join(self.out_dir, kind)

    def getPath(self, kind: str, name: str) -> str:
        return os.path.join(self.getFolder(kind), name)

    @staticmethod
    def fileDigest(path: str) -> str:
        h = hashlib.sha256()
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()

    @staticmethod
    def getHostInfo() -> Dict[str, Any]:
        memory = psutil.virtual_memory()
        return {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "cpu_count_logical": psutil.cpu_count(logical=True),
            "cpu_count_physical": psutil.cpu_count(logical=False),
            "memory_total_bytes": int(memory.total),
        }

    def recordRun(self, command: str, seed: int, config_digest: str, artifacts: List[str],
                  extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Registers the artifacts a subcommand wrote, with SHA-256 digests, and rewrites manifest.json."""
        entries = {}
        for path in artifacts:
            if not os.path.isfile(path):
                logger.warning(f"Artifact missing, not recorded: {path}")
                continue
            rel = os.path.relpath(os.path.abspath(path), self.out_dir).replace(os.sep, "/")
            entries[rel] = {"sha256": self.fileDigest(path), "bytes": os.path.getsize(path), "command": command}
        run = {
            "command": command,
            "time": datetime.now().isoformat(timespec="seconds"),
            "seed": seed,
            "config_digest": config_digest,
            "host": self.getHostInfo(),
            "artifacts": sorted(entries),
        }
        if extra:
            run.update(extra)
        self._manifest["runs"].append(run)
        self._manifest["artifacts"].update(entries)
        with open(self.manifest_path, "w", encoding="utf-8") as f:
            json.dump(self._manifest, f, indent=2)
        logger.info(f"{command}: {len(entries)} artifact(s) recorded in {self.manifest_path}")
        return run

    def getManifest(self) -> Dict[str, Any]:
        return json.loads(json.dumps(self._manifest))

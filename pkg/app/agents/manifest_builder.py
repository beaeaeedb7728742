import os
import time

from app.agents.base_agent import BaseAgent
from app.config import settings
from app.core.state import ExperimentState
from app.utils.file_handlers import emit, write_bytes


class ManifestBuilderAgent(BaseAgent):
    def __init__(self):
        super().__init__("manifest_builder")

    async def process(self, state: ExperimentState) -> ExperimentState:
        """
        Builds the run manifest once every output is on disk.

        Wall time is only recorded with timings enabled, so the manifest bytes
        stay a function of (config, seed, version).
        """
        cfg = state["config"]
        manifest = {
            "app": settings.APP_NAME,
            "version": settings.VERSION,
            "experiment": cfg.experiment.name.value,
            "config": cfg.echo(),
            "digests": dict(sorted(state.get("digests", {}).items())),
            "passed": state["outcome"].passed,
            "wall_ms": None,
        }
        if state.get("timings"):
            manifest["wall_ms"] = (time.perf_counter() - state.get("started", time.perf_counter())) * 1e3

        path = os.path.join(cfg.experiment.output, "manifest.json")
        try:
            write_bytes(emit(manifest, "json"), path)
        except OSError as exc:
            self.logger.error(f"[ManifestBuilder] ✗ cannot write manifest: {exc}")
            return self.fail(state, "internal", f"IOError: {exc}")

        state["manifest"] = manifest
        state.setdefault("outputs", []).append(path)
        final_status = "failed" if state.get("error_kind") else "completed"
        self.logger.info(f"[ManifestBuilder] ✓ manifest written ({len(manifest['digests'])} digests)")
        self.update_progress(state, 100, final_status)
        return state

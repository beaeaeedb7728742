import os

from app.agents.base_agent import BaseAgent
from app.core.state import ExperimentState
from app.utils.file_handlers import emit, save_dataframe, sha256_digest, write_bytes


class ReportWriterAgent(BaseAgent):
    def __init__(self):
        super().__init__("report_writer")

    async def process(self, state: ExperimentState) -> ExperimentState:
        """
        Writes every table as <output>/<experiment>_<table>.<format> and the
        summary as <experiment>_summary.json, recording a digest per file.
        """
        self.update_progress(state, 80, "writing reports")
        cfg = state["config"]
        outcome = state["outcome"]
        name = cfg.experiment.name.value
        out_dir = cfg.experiment.output
        fmt = cfg.experiment.format

        outputs = state.setdefault("outputs", [])
        digests = state.setdefault("digests", {})
        try:
            for table, df in outcome.tables.items():
                path = os.path.join(out_dir, f"{name}_{table}.{fmt}")
                data = save_dataframe(df, path, fmt)
                outputs.append(path)
                digests[os.path.basename(path)] = sha256_digest(data)

            summary_path = os.path.join(out_dir, f"{name}_summary.json")
            data = emit(outcome.summary, "json")
            write_bytes(data, summary_path)
            outputs.append(summary_path)
            digests[os.path.basename(summary_path)] = sha256_digest(data)
        except OSError as exc:
            self.logger.error(f"[ReportWriter] ✗ cannot write outputs: {exc}")
            return self.fail(state, "internal", f"IOError: {exc}")

        self.logger.info(f"[ReportWriter] ✓ wrote {len(outputs)} files to {out_dir}")
        self.update_progress(state, 90, "reports written")
        return state

from app.agents.base_agent import BaseAgent
from app.core.errors import ArgumentError, ContextMismatch, DomainError, RangeError
from app.core.experiments import run_experiment
from app.core.state import ExperimentState


class ExperimentRunnerAgent(BaseAgent):
    def __init__(self):
        super().__init__("experiment_runner")

    async def process(self, state: ExperimentState) -> ExperimentState:
        cfg = state["config"]
        name = cfg.experiment.name.value
        self.update_progress(state, 30, f"running {name}")

        try:
            outcome = run_experiment(cfg, threads=state.get("threads", 1), timings=state.get("timings", False))
        except DomainError as exc:
            self.logger.error(f"[ExperimentRunner] ✗ {name}: numerical domain error: {exc}")
            return self.fail(state, "domain", f"DomainError: {exc}")
        except (ArgumentError, RangeError, ContextMismatch) as exc:
            # Argument problems surface here only for values the schema cannot see (e.g. an axis index)
            self.logger.error(f"[ExperimentRunner] ✗ {name}: {exc}")
            return self.fail(state, "config", f"{type(exc).__name__}: {exc}")

        state["outcome"] = outcome
        for note in outcome.notes:
            self.logger.info(f"[ExperimentRunner] note: {note}")
        for table, df in outcome.tables.items():
            self.logger.info(f"[ExperimentRunner] ✓ {name}/{table}: {len(df)} rows")
        if outcome.passed is False:
            failed = ", ".join(outcome.summary.get("failed", []))
            self.logger.error(f"[ExperimentRunner] ✗ selftest failed: {failed}")
            state.setdefault("errors", []).append(f"selftest failed: {failed}")
            state["error_kind"] = "selftest"

        self.update_progress(state, 70, f"{name} finished")
        return state

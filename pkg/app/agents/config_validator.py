from app.agents.base_agent import BaseAgent
from app.core.errors import ConfigError
from app.core.state import ExperimentState
from app.utils.validators import apply_overrides, load_config, validate_config


class ConfigValidatorAgent(BaseAgent):
    def __init__(self):
        super().__init__("config_validator")

    async def process(self, state: ExperimentState) -> ExperimentState:
        """
        Loads the config file (or the in-memory sections), merges CLI overrides
        and validates everything before any computation starts.
        """
        self.update_progress(state, 10, "validating config")
        overrides = state.get("overrides") or {}

        try:
            if state.get("config_path"):
                raw, cfg = load_config(state["config_path"], overrides)
            else:
                raw = apply_overrides(state.get("raw_config") or {}, overrides)
                cfg = validate_config(raw)
        except ConfigError as exc:
            self.logger.error(f"[ConfigValidator] ✗ {exc}")
            return self.fail(state, "config", str(exc))

        state["raw_config"] = raw
        state["config"] = cfg
        self.logger.info(
            f"[ConfigValidator] ✓ {cfg.experiment.name.value} on {cfg.group.spec}, seed {cfg.experiment.seed}"
        )
        self.update_progress(state, 20, "config validated")
        return state

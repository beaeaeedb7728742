import logging
from abc import ABC, abstractmethod

from app.core.state import ExperimentState


class BaseAgent(ABC):
    """
    Base class for all pipeline stages.
    """

    def __init__(self, name: str):
        self.name = name
        self.logger = logging.getLogger(f"app.agents.{name}")

    @abstractmethod
    async def process(self, state: ExperimentState) -> ExperimentState:
        """
        Process the experiment state and return the updated state.
        """
        pass

    def update_progress(self, state: ExperimentState, progress: int, status: str = "processing") -> ExperimentState:
        """
        Helper to update progress and current agent in state.
        """
        state["progress"] = progress
        state["current_agent"] = self.name
        state["status"] = status
        return state

    def fail(self, state: ExperimentState, kind: str, message: str) -> ExperimentState:
        """
        Record an error and mark the run as failed.
        """
        state.setdefault("errors", []).append(message)
        state["error_kind"] = kind
        state["status"] = "failed"
        state["current_agent"] = self.name
        return state

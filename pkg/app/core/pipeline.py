import asyncio
import time
import uuid
from typing import Any, Dict, Optional

from langgraph.graph import StateGraph, END

from app.agents.config_validator import ConfigValidatorAgent
from app.agents.experiment_runner import ExperimentRunnerAgent
from app.agents.manifest_builder import ManifestBuilderAgent
from app.agents.report_writer import ReportWriterAgent
from app.core.state import ExperimentState

# Initialize agents
config_validator = ConfigValidatorAgent()
experiment_runner = ExperimentRunnerAgent()
report_writer = ReportWriterAgent()
manifest_builder = ManifestBuilderAgent()


def _continue_unless_failed(next_node: str):
    def route(state: ExperimentState) -> str:
        return END if state.get("status") == "failed" else next_node
    return route


def create_pipeline():
    """
    Constructs the LangGraph pipeline for one experiment run.
    """
    workflow = StateGraph(ExperimentState)

    # Define nodes
    workflow.add_node("config_validator", config_validator.process)
    workflow.add_node("experiment_runner", experiment_runner.process)
    workflow.add_node("report_writer", report_writer.process)
    workflow.add_node("manifest_builder", manifest_builder.process)

    # Linear flow; any failed stage ends the run
    workflow.add_conditional_edges("config_validator", _continue_unless_failed("experiment_runner"))
    workflow.add_conditional_edges("experiment_runner", _continue_unless_failed("report_writer"))
    workflow.add_conditional_edges("report_writer", _continue_unless_failed("manifest_builder"))
    workflow.add_edge("manifest_builder", END)

    # Set entry point
    workflow.set_entry_point("config_validator")

    # Compile
    return workflow.compile()


pipeline = create_pipeline()


def initial_state(config_path: Optional[str] = None, raw_config: Optional[Dict[str, Dict[str, Any]]] = None,
                  overrides: Optional[Dict[str, Any]] = None, threads: int = 1,
                  timings: bool = False) -> ExperimentState:
    return ExperimentState(
        run_id=str(uuid.uuid4()),
        config_path=config_path,
        raw_config=raw_config or {},
        overrides=overrides or {},
        outputs=[],
        digests={},
        started=time.perf_counter(),
        threads=threads,
        timings=timings,
        current_agent="",
        progress=0,
        errors=[],
        status="processing",
        error_kind=None,
    )


def run(config_path: Optional[str] = None, raw_config: Optional[Dict[str, Dict[str, Any]]] = None,
        overrides: Optional[Dict[str, Any]] = None, threads: int = 1,
        timings: bool = False) -> ExperimentState:
    """Run one experiment end to end and return the final state."""
    state = initial_state(config_path, raw_config, overrides, threads, timings)
    return asyncio.run(pipeline.ainvoke(state))

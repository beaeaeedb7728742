from typing import TypedDict, List, Dict, Any, Optional


class ExperimentState(TypedDict, total=False):
    """
    Represents the state of one experiment run through the pipeline.
    """
    run_id: str
    config_path: Optional[str]
    raw_config: Dict[str, Dict[str, Any]]
    overrides: Dict[str, Any]
    config: Any  # ExperimentConfig once validated

    # Results from each agent
    outcome: Any  # ExperimentOutcome
    outputs: List[str]
    digests: Dict[str, str]
    manifest: Dict[str, Any]

    # Execution metadata
    started: float
    threads: int
    timings: bool
    current_agent: str
    progress: int
    errors: List[str]
    status: str  # 'processing', 'completed', 'failed'
    error_kind: Optional[str]  # 'config', 'domain', 'selftest', 'internal'

"""Operational surface: run configs, trajectory files, command cores."""

from evoscope.workbench.config import (  # noqa: F401
    EvolutionSettings,
    GatewayConfig,
    OperatorConfig,
    RunConfig,
    TaskConfig,
    build_task,
    config_hash,
    load_run_config,
)
from evoscope.workbench.io import (  # noqa: F401
    SchemaVersionError,
    read_trajectory,
    write_csv,
    write_trajectory,
)

"""Credit-rating migration model bindings."""

from ._core import (
    DOWNGRADE,
    UNCHANGED,
    UPGRADE,
    AlignmentError,
    ConfigError,
    InputError,
    accuracy,
    build_schedule,
    evaluate,
    f1,
    generate_synthetic,
    run_cli,
)

__all__ = [
    "DOWNGRADE",
    "UNCHANGED",
    "UPGRADE",
    "AlignmentError",
    "ConfigError",
    "InputError",
    "accuracy",
    "build_schedule",
    "evaluate",
    "f1",
    "generate_synthetic",
    "run_cli",
]

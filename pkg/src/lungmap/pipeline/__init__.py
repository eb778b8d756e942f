"""Configuration, persistence and orchestration."""
from .config import PipelineConfig, preset
from .tensorfile import read_tensor, write_tensor

__all__ = ["PipelineConfig", "preset", "read_tensor", "write_tensor"]

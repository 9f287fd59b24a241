"""rsrdiff utilities package: file formats and config files."""

from .checkpoint import load_checkpoint, load_model, load_schedule, save_checkpoint
from .config_file import parse_config_file, parse_config_text
from .pgm import write_pgm
from .tensor_io import read_tensor, write_tensor

__all__ = [
    "load_checkpoint",
    "load_model",
    "load_schedule",
    "save_checkpoint",
    "parse_config_file",
    "parse_config_text",
    "write_pgm",
    "read_tensor",
    "write_tensor",
]

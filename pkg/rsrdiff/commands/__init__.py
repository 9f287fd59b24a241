"""Command-line subcommands; each module registers its parsers."""

from . import data, evaluation, experiment, schedule, training

MODULES = (schedule, data, training, evaluation, experiment)

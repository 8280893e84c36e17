"""Simulated IoT world and source farm."""

from .farm import (
    FarmClock,
    FarmTransport,
    RemoteSimClock,
    ServerHandle,
    SimSourceSpec,
    SourceFarm,
    ground_truth_ids,
    serve,
)
from .world import PopulationSpec, World, WorldConfig, ground_truth, make_world, world_step

__all__ = [
    "FarmClock",
    "FarmTransport",
    "PopulationSpec",
    "RemoteSimClock",
    "ServerHandle",
    "SimSourceSpec",
    "SourceFarm",
    "World",
    "WorldConfig",
    "ground_truth",
    "ground_truth_ids",
    "make_world",
    "serve",
    "world_step",
]

"""Deterministic synthetic urban-canyon world and measurement generator."""
from .presets import canyon, open_sky
from .scenario import Scenario, Trajectory, load_scenario
from .synth import generate_dataset, synthesize_gnss, synthesize_imu, synthesize_lidar
from .world import Box, World, generate_world

__all__ = ["Box", "Scenario", "Trajectory", "World", "canyon", "generate_dataset",
           "generate_world", "load_scenario", "open_sky", "synthesize_gnss", "synthesize_imu",
           "synthesize_lidar"]

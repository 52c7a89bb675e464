"""Distributed range-based integrity monitoring for robot swarms."""

__version__ = "0.1.0"

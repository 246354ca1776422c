"""Simulator for prefetch-queue stall faults on a Cortex-M instruction fetch path."""

__version__ = "0.1.0"

"""Trace-driven simulation of replicated workflow tasks on a shared HTC cluster."""

__version__ = "0.1.0"

"""Test package for qmonitor."""

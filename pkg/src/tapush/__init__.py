"""Task-adaptive planning for planar pushing and grasping under action-dependent noise."""

__version__ = "0.1.0"

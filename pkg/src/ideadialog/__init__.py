"""Multi-agent ideation-critique-revision dialogues and their evaluation harness."""

__version__ = "0.1.0"

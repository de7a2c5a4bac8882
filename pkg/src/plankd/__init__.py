"""Knowledge distillation for end-to-end trajectory planners at desk scale."""

__version__ = "0.1.0"

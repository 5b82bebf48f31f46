"""Commands module for nbv-planner."""

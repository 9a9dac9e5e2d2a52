"""Bundled demo project, replay transcript and simulator script."""

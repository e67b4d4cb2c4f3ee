"""Emulated-device side: templates, generation, attack corpus, and harness."""

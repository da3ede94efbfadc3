#!/usr/bin/env python3
"""Corrector residual scaling on the standard config.

Evaluates |L_eps phi_eps - L phi| / (1 + ||f||^2) over random smooth kinetic
states for every configured functional and epsilon, printing the CSV location
and in-band status of the halving ratios.
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from kindiff.cli import main  # noqa: E402

if __name__ == "__main__":
    config = os.path.join(os.path.dirname(__file__), "..", "configs", "standard.json")
    sys.exit(main(["diagnose-generator", "--config", config, "--states", "200"]
                  + sys.argv[1:]))

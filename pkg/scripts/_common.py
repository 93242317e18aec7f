from pathlib import Path

from rotec.config import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(name):
    return load_scenario(SCENARIOS / f"{name}.cfg")

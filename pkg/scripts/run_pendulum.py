"""End-to-end extraction run on the pendulum preset."""

from _driver import run

if __name__ == "__main__":
    run("pendulum", "Train a victim, run the offline attack and online filter on the pendulum preset.")

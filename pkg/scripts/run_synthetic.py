"""End-to-end extraction run on the synthetic preset."""

from _driver import run

if __name__ == "__main__":
    run("synthetic", "Train a victim, run the offline attack and online filter on the synthetic preset.")

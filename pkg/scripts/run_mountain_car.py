"""End-to-end extraction run on the mountain car preset."""

from _driver import run

if __name__ == "__main__":
    run("mountain_car", "Train a victim, run the offline attack and online filter on the mountain car preset.")

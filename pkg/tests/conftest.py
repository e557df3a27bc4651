import os

# Bitwise-reproducible mode for every test (wall-clock columns read 0.0).
os.environ.setdefault("ABN_DETERMINISTIC", "1")

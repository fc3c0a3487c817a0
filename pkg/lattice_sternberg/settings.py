# lattice_sternberg/settings.py
"""
Environment-driven defaults. Values come from the process environment or a
local .env file; CLI flags and config files override them per run.
"""

import os

from dotenv import load_dotenv

load_dotenv()

# -------- logging --------
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"

# -------- norms --------
NODE_NORM = os.getenv("LS_NODE_NORM", "sup")          # sup | l1 | l2 on R^n
LATTICE_NORM = os.getenv("LS_LATTICE_NORM", "euclid")  # euclid | sup for |j| on Z^m
BLOCK_CUTOFF = float(os.getenv("LS_BLOCK_CUTOFF", "1e-16"))

# -------- storage / solver limits --------
DENSE_LIMIT = int(float(os.getenv("LS_DENSE_LIMIT", "1e7")))
DIRECT_LIMIT = int(float(os.getenv("LS_DIRECT_LIMIT", "2e4")))
SINGULAR_COND = float(os.getenv("LS_SINGULAR_COND", "1e14"))
RESONANCE_TOL = float(os.getenv("LS_RESONANCE_TOL", "1e-8"))

# -------- execution --------
WORKERS = max(1, int(os.getenv("LS_WORKERS", "1")))
OUT_DIR = os.getenv("LS_OUT_DIR", "out")
